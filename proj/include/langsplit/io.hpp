#pragma once

// Persistence: CSV with round-trip decimal formatting, JSON for mixtures,
// points and checkpoints, and strict config reading (unknown keys rejected,
// parse errors located by line and column).

#include "langsplit/core.hpp"
#include "langsplit/mlp.hpp"
#include "langsplit/oracle.hpp"
#include "langsplit/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string>
#include <string_view>
#include <variant>

namespace langsplit {

using Json = nlohmann::json;

/// Shortest %g-style text (at most 17 significant digits) that parses back
/// to the same double.
std::string format_double(double v);

/// Config or file-format problem. line/column are 1-based, 0 when unknown.
class ConfigError : public ArgumentError {
 public:
  ConfigError(const std::string& what, int line = 0, int column = 0)
      : ArgumentError(what), line(line), column(column) {}
  int line;
  int column;
};

/// Parses JSON text (comments allowed). `source` names the text in errors.
Json parse_json(std::string_view text, const std::string& source);
Json read_json_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes `text` exactly (binary mode, no newline translation).
void write_text_file(const std::filesystem::path& path, std::string_view text);
/// Two-space indented JSON with sorted keys and a trailing newline.
std::string dump_json(const Json& j);

/// Reads fields of one JSON object and reports keys nobody asked for.
class JsonObject {
 public:
  JsonObject(const Json& j, std::string path);

  bool has(const std::string& key) const;
  const Json& at(const std::string& key);
  /// Required key of type T.
  template <typename T>
  T get(const std::string& key) {
    return convert<T>(at(key), key);
  }
  /// Optional key; `fallback` when absent.
  template <typename T>
  T get(const std::string& key, T fallback) {
    return has(key) ? get<T>(key) : fallback;
  }
  JsonObject object(const std::string& key);
  std::string path_of(const std::string& key) const { return path_ + "." + key; }
  const std::string& path() const { return path_; }

  /// Throws ConfigError naming the first unread key.
  void finish() const;

 private:
  template <typename T>
  T convert(const Json& v, const std::string& key) const {
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_of(key) + " has the wrong type (got " + std::string(v.type_name()) + ")");
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

Vector vector_from_json(const Json& j, const std::string& path);
Json to_json(const Vector& v);
Matrix matrix_from_json(const Json& j, const std::string& path);  // list of rows
Json to_json(const Matrix& m);

/// {"param": "vp", "level": 0.5, "state": [..]}
Json to_json(const ParamPointd& p);
ParamPointd point_from_json(const Json& j, const std::string& path = "point");

/// {"components": [{"weight": w, "mean": [..], "covariance": [[..]]}, ...]};
/// a scalar "variance" may replace "covariance" (isotropic component).
Json to_json(const GaussianMixture& gm);
GaussianMixture mixture_from_json(const Json& j, const std::string& path = "data");

struct Checkpoint {
  MLPModel model;
  LossSpec loss;
  /// Free-form run information (training config, trace summary); stored
  /// under "training" and not interpreted when loading.
  Json training;
};

inline constexpr const char* kCheckpointFormat = "langsplit-checkpoint-1";

Json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const Json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Comma-separated file with a header row. Numbers use format_double; text
/// holding a comma, quote or newline is quoted with doubled quotes.
class CsvWriter {
 public:
  using Cell = std::variant<double, long long, std::string>;

  CsvWriter(const std::filesystem::path& path, std::initializer_list<std::string_view> header);
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(std::initializer_list<Cell> cells);
  void row(const std::vector<Cell>& cells);
  void close();

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::filesystem::path path_;
};

/// Parsed CSV: header plus rows of raw fields.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace langsplit
