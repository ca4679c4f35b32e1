#include "repmet/io/dataset.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "repmet/core/error.hpp"

namespace repmet::io {

using nlohmann::json;

namespace {

void validate_record(const FeatureRecord& r, std::size_t expected_dim, std::size_t line) {
  if (r.id.empty()) throw ParseError("dataset: empty id", line);
  if (r.label.empty()) throw ParseError("dataset: empty label for '" + r.id + "'", line);
  if (r.features.empty()) throw ParseError("dataset: no features for '" + r.id + "'", line);
  if (expected_dim && r.features.size() != expected_dim) {
    throw ParseError("dataset: ragged features for '" + r.id + "' (" + std::to_string(r.features.size()) +
                         " vs " + std::to_string(expected_dim) + ")",
                     line);
  }
  for (double v : r.features) {
    if (!std::isfinite(v)) throw ParseError("dataset: non-finite feature in '" + r.id + "'", line);
  }
  if (r.box && !r.box->well_formed()) throw ParseError("dataset: malformed box for '" + r.id + "'", line);
  if (r.attributes) {
    for (auto a : *r.attributes) {
      if (a > 1) throw ParseError("dataset: attributes must be 0/1 in '" + r.id + "'", line);
    }
  }
  if (r.split && *r.split != "train" && *r.split != "val" && *r.split != "test") {
    throw ParseError("dataset: split must be train|val|test in '" + r.id + "'", line);
  }
  if (r.group && *r.group != "seen" && *r.group != "unseen") {
    throw ParseError("dataset: group must be seen|unseen in '" + r.id + "'", line);
  }
}

FeatureRecord record_from_json(const json& j, std::size_t line) {
  static const char* const allowed[] = {"schema_version", "id",         "label", "features", "box",
                                        "image_id",       "attributes", "split", "group"};
  if (!j.is_object()) throw ParseError("dataset: line is not a JSON object", line);
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ParseError("dataset: unknown field '" + key + "'", line);
  }
  try {
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kDatasetSchemaVersion) {
      throw ParseError("dataset: unsupported schema_version " + j.at("schema_version").dump(), line);
    }
    FeatureRecord r;
    r.id = j.at("id").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.features = j.at("features").get<std::vector<double>>();
    if (j.contains("box")) {
      const auto b = j.at("box").get<std::vector<double>>();
      if (b.size() != 4) {
        throw ParseError("dataset: box for '" + r.id + "' has " + std::to_string(b.size()) + " elements, expected 4",
                         line);
      }
      r.box = eval::Box{b[0], b[1], b[2], b[3]};
    }
    if (j.contains("image_id")) r.image_id = j.at("image_id").get<std::string>();
    if (j.contains("attributes")) r.attributes = j.at("attributes").get<std::vector<std::uint8_t>>();
    if (j.contains("split")) r.split = j.at("split").get<std::string>();
    if (j.contains("group")) r.group = j.at("group").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("dataset: ") + e.what(), line);
  }
}

}  // namespace

Dataset::Dataset(std::vector<FeatureRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const FeatureRecord& r = records_[i];
    validate_record(r, feature_dim_, i + 1);
    if (feature_dim_ == 0) feature_dim_ = r.features.size();
    if (!id_lookup_.emplace(r.id, i).second) throw ParseError("dataset: duplicate id '" + r.id + "'", i + 1);
    if (r.is_background()) {
      background_.push_back(i);
      continue;
    }
    auto [it, inserted] = class_lookup_.emplace(r.label, class_names_.size());
    if (inserted) {
      class_names_.push_back(r.label);
      members_.emplace_back();
    }
    members_[it->second].push_back(i);
  }
}

std::optional<std::size_t> Dataset::class_index(const std::string& name) const {
  auto it = class_lookup_.find(name);
  if (it == class_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Dataset::find(const std::string& id) const {
  auto it = id_lookup_.find(id);
  if (it == id_lookup_.end()) return std::nullopt;
  return it->second;
}

head::Label Dataset::label_of(std::size_t record) const {
  const FeatureRecord& r = records_.at(record);
  if (r.is_background()) return head::Label::background();
  return head::Label::of(class_lookup_.at(r.label));
}

diff::Tensor Dataset::features(const std::vector<std::size_t>& rows) const {
  diff::Tensor out(rows.size(), feature_dim_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = records_.at(rows[i]).features;
    std::copy(f.begin(), f.end(), out.row_span(i).begin());
  }
  return out;
}

bool in_split(const FeatureRecord& r, const std::string& split) { return r.split.value_or("train") == split; }

Dataset parse_dataset(std::istream& in) {
  std::vector<FeatureRecord> records;
  std::unordered_map<std::string, std::size_t> seen_ids;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("dataset: invalid JSON: ") + e.what(), line_no);
    }
    FeatureRecord r = record_from_json(j, line_no);
    validate_record(r, dim, line_no);
    if (dim == 0) dim = r.features.size();
    if (!seen_ids.emplace(r.id, line_no).second) throw ParseError("dataset: duplicate id '" + r.id + "'", line_no);
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records));
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open dataset " + path.string());
  return parse_dataset(in);
}

std::string record_to_json_line(const FeatureRecord& r) {
  json j = {{"schema_version", kDatasetSchemaVersion}, {"id", r.id}, {"label", r.label}, {"features", r.features}};
  if (r.box) j["box"] = {r.box->x1, r.box->y1, r.box->x2, r.box->y2};
  if (r.image_id) j["image_id"] = *r.image_id;
  if (r.attributes) j["attributes"] = *r.attributes;
  if (r.split) j["split"] = *r.split;
  if (r.group) j["group"] = *r.group;
  return j.dump();
}

void write_dataset(std::ostream& out, const Dataset& d) {
  for (const auto& r : d.records()) out << record_to_json_line(r) << '\n';
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write dataset " + path.string());
  write_dataset(out, d);
}

}  // namespace repmet::io
