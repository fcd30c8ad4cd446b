#include "run_context.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>

#ifndef LANGSPLIT_VERSION
#define LANGSPLIT_VERSION "unknown"
#endif

namespace langsplit::cli {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 computation failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

void merge_config(Json& base, const Json& overlay, const std::string& path, const std::set<std::string>& opaque) {
  if (!overlay.is_object()) throw ConfigError(path + " must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string where = path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown key " + where);
    Json& slot = base[key];
    if (slot.is_object() && !opaque.count(key)) {
      merge_config(slot, value, where, opaque);
    } else {
      slot = value;
    }
  }
}

fs::path default_output_dir(const std::string& command) {
  const char* root = std::getenv("LANGSPLIT_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "langsplit-out") / command;
}

RunContext::RunContext(std::string command, fs::path dir, bool timing)
    : command_(std::move(command)), dir_(std::move(dir)), timing_(timing), start_(std::chrono::steady_clock::now()) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw ArgumentError("cannot create output directory " + dir_.string() + ": " + ec.message());
  // A previous run's files are ours to replace; anything else is not.
  const fs::path manifest = dir_ / "manifest.json";
  if (fs::exists(manifest)) {
    const Json old = read_json_file(manifest);
    if (old.value("format", "") != kManifestFormat)
      throw ArgumentError(manifest.string() + " is not a run manifest; refusing to overwrite " + dir_.string());
    for (const Json& entry : old.value("outputs", Json::array()))
      if (entry.contains("file")) fs::remove(dir_ / entry["file"].get<std::string>());
    fs::remove(dir_ / "config.resolved.json");
    fs::remove(manifest);
  }
  if (!fs::is_empty(dir_))
    throw ArgumentError("output directory " + dir_.string() + " holds files not written by a previous run");
}

void RunContext::add_output(const std::string& file) {
  if (std::find(outputs_.begin(), outputs_.end(), file) == outputs_.end()) outputs_.push_back(file);
}

void RunContext::write_text(const std::string& file, std::string_view text) {
  write_text_file(path(file), text);
  add_output(file);
}

void RunContext::finish(const Json& resolved_config, std::optional<std::uint64_t> seed) {
  const std::string config_text = dump_json(resolved_config);
  write_text("config.resolved.json", config_text);

  Json outputs = Json::array();
  std::vector<std::string> files = outputs_;
  std::sort(files.begin(), files.end());
  for (const std::string& f : files) {
    const std::string bytes = read_text_file(path(f));
    outputs.push_back({{"file", f}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  }
  Json manifest = {{"format", kManifestFormat},
                   {"command", command_},
                   {"version", LANGSPLIT_VERSION},
                   {"config_sha256", sha256_hex(config_text)},
                   {"seed", seed ? Json(*seed) : Json(nullptr)},
                   {"outputs", outputs}};
  if (timing_)
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  write_text_file(path("manifest.json"), dump_json(manifest));
}

}  // namespace langsplit::cli
