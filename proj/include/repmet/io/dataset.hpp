#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "repmet/diff/tensor.hpp"
#include "repmet/eval/box.hpp"
#include "repmet/head/posterior.hpp"

namespace repmet::io {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr const char* kBackgroundLabel = "background";

/// One input vector with its label and optional detection/attribute metadata.
struct FeatureRecord {
  std::string id;
  std::string label;  // class id, or "background"
  std::vector<double> features;
  std::optional<eval::Box> box;
  std::optional<std::string> image_id;
  std::optional<std::vector<std::uint8_t>> attributes;
  std::optional<std::string> split;  // train | val | test
  std::optional<std::string> group;  // seen | unseen

  bool is_background() const { return label == kBackgroundLabel; }
  bool operator==(const FeatureRecord&) const = default;
};

/// Validated records in file order, indexed by class.
///
/// Class indices follow first appearance in the file; background records are
/// not a class.
class Dataset {
 public:
  Dataset() = default;
  /// Validates and indexes; throws ParseError (line = position + 1) on ragged
  /// features, malformed boxes, duplicate ids or bad field values.
  explicit Dataset(std::vector<FeatureRecord> records);

  const std::vector<FeatureRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }

  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  std::size_t num_classes() const noexcept { return class_names_.size(); }
  std::optional<std::size_t> class_index(const std::string& name) const;
  /// Record positions of a class, file order.
  const std::vector<std::size_t>& members(std::size_t cls) const { return members_.at(cls); }
  const std::vector<std::size_t>& background() const noexcept { return background_; }
  std::optional<std::size_t> find(const std::string& id) const;

  /// Label of a record under the dataset's class indexing.
  head::Label label_of(std::size_t record) const;
  /// Features of the listed records stacked as rows.
  diff::Tensor features(const std::vector<std::size_t>& rows) const;

 private:
  std::vector<FeatureRecord> records_;
  std::size_t feature_dim_ = 0;
  std::vector<std::string> class_names_;
  std::unordered_map<std::string, std::size_t> class_lookup_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> background_;
  std::unordered_map<std::string, std::size_t> id_lookup_;
};

/// Record filter by split: records without a split tag count as "train".
bool in_split(const FeatureRecord& r, const std::string& split);

Dataset parse_dataset(std::istream& in);
Dataset load_dataset(const std::filesystem::path& path);
std::string record_to_json_line(const FeatureRecord& r);
void write_dataset(std::ostream& out, const Dataset& d);
void save_dataset(const std::filesystem::path& path, const Dataset& d);

}  // namespace repmet::io
