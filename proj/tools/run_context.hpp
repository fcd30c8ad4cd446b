#pragma once

// Plumbing shared by the CLI commands: config resolution (defaults, then the
// config file, then flags), the output directory and the run manifest.

#include "langsplit/io.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace langsplit::cli {

inline constexpr const char* kManifestFormat = "langsplit-manifest-1";

std::string sha256_hex(std::string_view bytes);

/// Overlays `overlay` on `base`. Keys absent from `base` are rejected;
/// objects recurse unless their key is in `opaque` (replaced wholesale).
void merge_config(Json& base, const Json& overlay, const std::string& path, const std::set<std::string>& opaque);

/// Default output directory: $LANGSPLIT_OUTPUT_ROOT/<command>, or
/// ./langsplit-out/<command> when the variable is unset.
std::filesystem::path default_output_dir(const std::string& command);

/// Collects the files of one run and writes config.resolved.json and
/// manifest.json next to them.
class RunContext {
 public:
  /// Prepares `dir`: creates it, or clears the files listed by a previous
  /// manifest. Refuses a non-empty directory that holds other files.
  RunContext(std::string command, std::filesystem::path dir, bool timing);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& file) const { return dir_ / file; }

  /// Registers a file written by the command (relative to dir()).
  void add_output(const std::string& file);
  void write_text(const std::string& file, std::string_view text);

  /// Writes config.resolved.json and manifest.json.
  void finish(const Json& resolved_config, std::optional<std::uint64_t> seed);

 private:
  std::string command_;
  std::filesystem::path dir_;
  bool timing_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace langsplit::cli
