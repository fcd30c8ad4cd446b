#include "langsplit/io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace langsplit {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  // Shortest round trip in %g style, which never prints more than 17
  // significant digits (plain shortest form spells out large integers).
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
  return std::string(buf, res.ptr);
}

namespace {

// 1-based line and column of a byte offset.
std::pair<int, int> locate(std::string_view text, std::size_t offset) {
  int line = 1, column = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

}  // namespace

Json parse_json(std::string_view text, const std::string& source) {
  try {
    return Json::parse(text.begin(), text.end(), nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    // e.byte is one past the offending character.
    const auto [line, column] = locate(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string detail = e.what();
    if (const auto at = detail.find("syntax error"); at != std::string::npos) detail = detail.substr(at);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + detail, line,
                      column);
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json_file(const std::filesystem::path& path) { return parse_json(read_text_file(path), path.string()); }

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw ArgumentError("write to '" + path.string() + "' failed");
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

JsonObject::JsonObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) throw ConfigError(path_ + " must be an object (got " + std::string(j_.type_name()) + ")");
}

bool JsonObject::has(const std::string& key) const { return j_.contains(key); }

const Json& JsonObject::at(const std::string& key) {
  if (!has(key)) throw ConfigError("missing key " + path_of(key));
  used_.insert(key);
  return j_.at(key);
}

JsonObject JsonObject::object(const std::string& key) { return JsonObject(at(key), path_of(key)); }

void JsonObject::finish() const {
  for (const auto& item : j_.items())
    if (!used_.count(item.key())) throw ConfigError("unknown key " + path_of(item.key()));
}

Vector vector_from_json(const Json& j, const std::string& path) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  if (!j.is_array() || j.empty()) throw ConfigError(path + " must be a nonempty list of numbers");
  Vector v(Eigen::Index(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "] must be a number");
    v(Eigen::Index(i)) = j[i].get<double>();
  }
  return v;
}

Json to_json(const Vector& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

Matrix matrix_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + " must be a nonempty list of rows");
  const std::size_t rows = j.size();
  const Vector first = vector_from_json(j[0], path + "[0]");
  Matrix m(Eigen::Index(rows), first.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Vector row = vector_from_json(j[r], path + "[" + std::to_string(r) + "]");
    if (row.size() != first.size()) throw ConfigError(path + " rows have different lengths");
    m.row(Eigen::Index(r)) = row.transpose();
  }
  return m;
}

Json to_json(const Matrix& m) {
  Json j = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(to_json(Vector(m.row(r).transpose())));
  return j;
}

Json to_json(const ParamPointd& p) {
  return {{"param", std::string(to_string(p.param))}, {"level", p.level}, {"state", to_json(p.state)}};
}

namespace {

template <typename F>
auto as_config_error(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const DomainError& e) {
    throw DomainError(path + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

ParamPointd point_from_json(const Json& j, const std::string& path) {
  JsonObject o(j, path);
  ParamPointd p;
  const auto name = o.get<std::string>("param");
  p.param = as_config_error(o.path_of("param"), [&] { return parse_parameterization(name); });
  p.level = o.get<double>("level");
  p.state = vector_from_json(o.at("state"), o.path_of("state"));
  o.finish();
  validate(p);
  return p;
}

Json to_json(const GaussianMixture& gm) {
  Json comps = Json::array();
  for (std::size_t i = 0; i < gm.size(); ++i)
    comps.push_back({{"weight", gm.weights()(Eigen::Index(i))},
                     {"mean", to_json(gm.mean(i))},
                     {"covariance", to_json(gm.covariance(i))}});
  return {{"components", comps}};
}

GaussianMixture mixture_from_json(const Json& j, const std::string& path) {
  JsonObject o(j, path);
  const Json& comps = o.at("components");
  o.finish();
  if (!comps.is_array() || comps.empty()) throw ConfigError(path + ".components must be a nonempty list");
  Vector weights(Eigen::Index(comps.size()));
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    JsonObject c(comps[i], path + ".components[" + std::to_string(i) + "]");
    weights(Eigen::Index(i)) = c.get<double>("weight");
    means.push_back(vector_from_json(c.at("mean"), c.path_of("mean")));
    const Eigen::Index d = means.back().size();
    if (c.has("covariance") && c.has("variance"))
      throw ConfigError(c.path() + " gives both covariance and variance");
    if (c.has("variance")) {
      covs.push_back(c.get<double>("variance") * Matrix::Identity(d, d));
    } else {
      covs.push_back(matrix_from_json(c.at("covariance"), c.path_of("covariance")));
    }
    c.finish();
  }
  return as_config_error(path, [&] { return GaussianMixture(weights, means, covs); });
}

Json checkpoint_to_json(const Checkpoint& ckpt) {
  const MLPModel& model = ckpt.model;
  const LossSpec& loss = ckpt.loss;
  if (loss.weight_mode == WeightMode::custom && loss.custom_name.empty())
    throw ArgumentError("a custom loss weight needs a name to be saved");
  Json layers = Json::array();
  for (const DenseLayer& layer : model.layers()) {
    Json weight = Json::array();
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) weight.push_back(layer.weight(r, c));
    layers.push_back({{"in", layer.weight.cols()},
                      {"out", layer.weight.rows()},
                      {"activation", std::string(to_string(layer.activation))},
                      {"weight", weight},
                      {"bias", layer.bias.size() ? to_json(layer.bias) : Json(nullptr)}});
  }
  Json loss_json = {{"model_type", std::string(to_string(loss.model_type))},
                    {"weight_mode", std::string(to_string(loss.weight_mode))}};
  if (loss.weight_mode == WeightMode::custom) loss_json["custom_name"] = loss.custom_name;
  Json j = {{"format", kCheckpointFormat},
            {"prediction_kind", std::string(to_string(model.prediction_kind()))},
            {"dim", model.dim()},
            {"level_embedding", model.level_embedding()},
            {"layers", layers},
            {"loss", loss_json}};
  if (!ckpt.training.is_null()) j["training"] = ckpt.training;
  return j;
}

Checkpoint checkpoint_from_json(const Json& j) {
  JsonObject o(j, "checkpoint");
  const auto format = o.get<std::string>("format");
  if (format != kCheckpointFormat)
    throw ConfigError("checkpoint.format is '" + format + "', expected '" + kCheckpointFormat + "'");
  const auto kind_name = o.get<std::string>("prediction_kind");
  const PredictionKind kind = as_config_error("checkpoint.prediction_kind", [&] { return parse_prediction_kind(kind_name); });
  const auto dim = o.get<Eigen::Index>("dim");
  const bool embedding = o.get<bool>("level_embedding");

  const Json& layers_json = o.at("layers");
  if (!layers_json.is_array() || layers_json.empty()) throw ConfigError("checkpoint.layers must be a nonempty list");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < layers_json.size(); ++l) {
    JsonObject lo(layers_json[l], "checkpoint.layers[" + std::to_string(l) + "]");
    const auto in = lo.get<Eigen::Index>("in");
    const auto out = lo.get<Eigen::Index>("out");
    if (in < 1 || out < 1) throw ConfigError(lo.path() + " has an empty shape");
    DenseLayer layer;
    const auto act = lo.get<std::string>("activation");
    layer.activation = as_config_error(lo.path_of("activation"), [&] { return parse_activation(act); });
    const Json& w = lo.at("weight");
    if (!w.is_array() || Eigen::Index(w.size()) != in * out)
      throw ConfigError(lo.path_of("weight") + " must hold in * out = " + std::to_string(in * out) + " numbers");
    const Vector flat = vector_from_json(w, lo.path_of("weight"));
    layer.weight = flat.reshaped<Eigen::RowMajor>(out, in);
    const Json& b = lo.at("bias");
    if (!b.is_null()) {
      layer.bias = vector_from_json(b, lo.path_of("bias"));
      if (layer.bias.size() != out) throw ConfigError(lo.path_of("bias") + " must hold out numbers");
    }
    lo.finish();
    layers.push_back(std::move(layer));
  }

  JsonObject lo = o.object("loss");
  const auto row_name = lo.get<std::string>("model_type");
  const auto mode_name = lo.get<std::string>("weight_mode");
  LossSpec loss;
  loss.model_type = as_config_error(lo.path_of("model_type"), [&] { return parse_model_type(row_name); });
  loss.weight_mode = as_config_error(lo.path_of("weight_mode"), [&] { return parse_weight_mode(mode_name); });
  if (loss.weight_mode == WeightMode::custom) {
    const auto name = lo.get<std::string>("custom_name");
    loss = as_config_error(lo.path_of("custom_name"), [&] { return custom_loss(loss.model_type, name); });
  }
  lo.finish();

  Json training;
  if (o.has("training")) training = o.at("training");
  o.finish();
  MLPModel model = as_config_error("checkpoint", [&] { return MLPModel(kind, dim, embedding, std::move(layers)); });
  return {std::move(model), std::move(loss), std::move(training)};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_text_file(path, dump_json(checkpoint_to_json(ckpt)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what(), e.line, e.column);
  }
}

namespace {

// Fields holding a comma, quote or newline are quoted, quotes doubled.
std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += ch;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

}  // namespace

CsvWriter::CsvWriter(const std::filesystem::path& path, std::initializer_list<std::string_view> header)
    : CsvWriter(path, std::vector<std::string>(header.begin(), header.end())) {}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary | std::ios::trunc), columns_(header.size()), path_(path) {
  if (!out_) throw ArgumentError("cannot write '" + path.string() + "'");
  bool first = true;
  for (const std::string& h : header) {
    out_ << (first ? "" : ",") << csv_quote(h);
    first = false;
  }
  out_ << '\n';
}

void CsvWriter::row(std::initializer_list<Cell> cells) { row(std::vector<Cell>(cells)); }

void CsvWriter::row(const std::vector<Cell>& cells) {
  if (cells.size() != columns_) throw ArgumentError("CSV row has the wrong number of cells for " + path_.string());
  bool first = true;
  for (const Cell& c : cells) {
    if (!first) out_ << ',';
    first = false;
    if (const double* d = std::get_if<double>(&c)) {
      out_ << format_double(*d);
    } else if (const long long* i = std::get_if<long long>(&c)) {
      out_ << *i;
    } else {
      out_ << csv_quote(std::get<std::string>(c));
    }
  }
  out_ << '\n';
}

void CsvWriter::close() {
  out_.close();
  if (!out_) throw ArgumentError("write to '" + path_.string() + "' failed");
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ArgumentError("CSV has no column '" + std::string(name) + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("'" + path.string() + "' is empty");
  t.header = csv_split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(csv_split(line));
    if (t.rows.back().size() != t.header.size())
      throw ConfigError("'" + path.string() + "' row " + std::to_string(t.rows.size()) + " has the wrong width");
  }
  return t;
}

}  // namespace langsplit
