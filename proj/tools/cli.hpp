#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace repmet::cli {

/// Environment variable that replaces the default output directory.
inline constexpr const char* kOutDirEnv = "REPMET_OUT_DIR";

/// Runs one command line (without the program name). Returns the exit code;
/// on failure prints a one-line cause to `err` and removes the outputs it wrote.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace repmet::cli
