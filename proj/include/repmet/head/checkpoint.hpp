#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "repmet/head/head.hpp"

namespace repmet::head {

inline constexpr int kCheckpointSchemaVersion = 1;

/// A trained head together with the dataset class ids its classes stand for.
struct Checkpoint {
  RepMetHead head;
  std::vector<std::string> class_names;
};

/// JSON text: schema_version, config block, then every named parameter and
/// batch-norm buffer as {name, rows, cols, data} (row-major doubles printed
/// with round-trip precision, so load(save(x)) is bit-exact).
std::string checkpoint_to_json(const RepMetHead& head, const std::vector<std::string>& class_names);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const RepMetHead& head,
                     const std::vector<std::string>& class_names);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace repmet::head
