#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "markovlm/error.hpp"
#include "markovlm/io.hpp"
#include "markovlm/params.hpp"

namespace markovlm {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw Error(ErrorKind::InvalidArgument, std::string(name) + " must be positive");
  };
  positive(d, "d");
  positive(m, "m");
  positive(r, "r");
  positive(N, "N");
  positive(layers, "layers");
  positive(heads, "heads");
  if (states < 2) throw Error(ErrorKind::InvalidArgument, "states must be >= 2");
  if (m % heads != 0) throw Error(ErrorKind::InvalidArgument, "m must be divisible by heads");
  if (head == Head::Sigmoid && states != 2) {
    throw Error(ErrorKind::InvalidArgument, "the sigmoid head needs exactly 2 states");
  }
}

ModelConfig ModelConfig::for_states(int states, int d, int m, int r, int N, int layers, bool tied,
                                    int heads) {
  ModelConfig c;
  c.states = states;
  c.d = d;
  c.m = m;
  c.r = r;
  c.N = N;
  c.layers = layers;
  c.tied = tied;
  c.heads = heads;
  c.head = states == 2 ? Head::Sigmoid : Head::Softmax;
  c.validate();
  return c;
}

const char* to_string(Head head) noexcept {
  return head == Head::Sigmoid ? "sigmoid" : "softmax";
}

Head head_from_string(const std::string& name) {
  if (name == "sigmoid") return Head::Sigmoid;
  if (name == "softmax") return Head::Softmax;
  throw Error(ErrorKind::InvalidArgument, "unknown head '" + name + "'");
}

std::vector<FieldOffset> param_layout(const ModelConfig& config) {
  config.validate();
  std::vector<FieldOffset> layout;
  Eigen::Index offset = 0;
  auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols) {
    layout.push_back({std::move(name), offset, rows, cols});
    offset += rows * cols;
  };
  const int K = config.token_rows();
  add("embedding", K, config.d);
  add("positional", config.d, config.N);
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "wq", config.m, config.d);
    add(p + "wk", config.m, config.d);
    add(p + "wv", config.m, config.d);
    add(p + "wo", config.d, config.m);
    add(p + "w1", config.r, config.d);
    add(p + "w2", config.d, config.r);
  }
  if (!config.tied) add("head", K, config.d);
  add("bias", K, 1);
  return layout;
}

Eigen::Index flat_size(const ModelConfig& config) {
  const auto layout = param_layout(config);
  return layout.back().offset + layout.back().size();
}

const FieldOffset& find_field(const std::vector<FieldOffset>& layout, const std::string& name) {
  for (const FieldOffset& f : layout) {
    if (f.name == name) return f;
  }
  throw Error(ErrorKind::OutOfRange, "no parameter block named '" + name + "'");
}

ParamSet reduce_binary(const ParamSet& general) {
  const ModelConfig& gc = general.config();
  if (gc.head != Head::Softmax || gc.states != 2) {
    throw Error(ErrorKind::Precondition, "reduce_binary expects a softmax head with S = 2");
  }
  ModelConfig rc = gc;
  rc.head = Head::Sigmoid;
  ParamSet reduced(rc);
  reduced.embedding().row(0) = general.embedding().row(1) - general.embedding().row(0);
  reduced.positional() = general.positional().colwise() + general.embedding().row(0).transpose();
  reduced.layers() = general.layers();
  if (!rc.tied) {
    reduced.head_weight().row(0) = general.head_weight().row(1) - general.head_weight().row(0);
  }
  reduced.b() = general.bias()(1, 0) - general.bias()(0, 0);
  return reduced;
}

double round9(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

std::string fmt9(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

Json to_json(const ModelConfig& c) {
  return Json{{"d", c.d},           {"m", c.m},         {"r", c.r},
              {"N", c.N},           {"layers", c.layers}, {"states", c.states},
              {"heads", c.heads},   {"tied", c.tied},   {"head", to_string(c.head)}};
}

ModelConfig model_config_from_json(const Json& j, ModelConfig base) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidArgument, "model config must be a JSON object");
  bool head_given = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "d") base.d = value.get<int>();
    else if (key == "m") base.m = value.get<int>();
    else if (key == "r") base.r = value.get<int>();
    else if (key == "N") base.N = value.get<int>();
    else if (key == "layers") base.layers = value.get<int>();
    else if (key == "states") base.states = value.get<int>();
    else if (key == "heads") base.heads = value.get<int>();
    else if (key == "tied") base.tied = value.get<bool>();
    else if (key == "head") {
      base.head = head_from_string(value.get<std::string>());
      head_given = true;
    } else {
      throw Error(ErrorKind::InvalidArgument, "unknown model config key '" + key + "'");
    }
  }
  if (!head_given) base.head = base.states == 2 ? Head::Sigmoid : Head::Softmax;
  base.validate();
  return base;
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
    throw Error(ErrorKind::Io, "truncated parameter file");
  }
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

}  // namespace

void write_params(std::ostream& out, const ParamSet& params) {
  Json header;
  header["format"] = "markovlm-params";
  header["version"] = 1;
  header["dtype"] = "f64le";
  header["config"] = to_json(params.config());
  header["tied"] = params.tied();
  header["count"] = params.size();
  Json fields = Json::array();
  for (const FieldOffset& f : param_layout(params.config())) {
    fields.push_back({{"name", f.name}, {"offset", f.offset}, {"rows", f.rows}, {"cols", f.cols}});
  }
  header["fields"] = fields;
  const std::string text = header.dump();
  out.write(kParamsMagic, 8);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const Eigen::VectorXd flat = params.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(flat[i]));
  if (!out) throw Error(ErrorKind::Io, "failed writing parameter file");
}

ParamSet read_params(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kParamsMagic, 8) != 0) {
    throw Error(ErrorKind::Io, "not a markovlm parameter file (bad magic)");
  }
  const std::uint64_t header_len = get_u64(in);
  if (header_len > (std::uint64_t{1} << 26)) throw Error(ErrorKind::Io, "parameter header too large");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw Error(ErrorKind::Io, "truncated parameter header");
  }
  const Json header = Json::parse(text);
  const ModelConfig config = model_config_from_json(header.at("config"));
  if (header.at("tied").get<bool>() != config.tied) {
    throw Error(ErrorKind::Io, "parameter header tying flag disagrees with its config");
  }
  const auto count = header.at("count").get<Eigen::Index>();
  if (count != flat_size(config)) throw Error(ErrorKind::Io, "parameter count disagrees with config");
  const auto layout = param_layout(config);
  const Json& fields = header.at("fields");
  if (fields.size() != layout.size()) throw Error(ErrorKind::Io, "field table disagrees with config");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (fields[i].at("name") != layout[i].name ||
        fields[i].at("offset").get<Eigen::Index>() != layout[i].offset) {
      throw Error(ErrorKind::Io, "field table entry '" + layout[i].name + "' disagrees with config");
    }
  }
  Eigen::VectorXd flat(count);
  for (Eigen::Index i = 0; i < count; ++i) flat[i] = std::bit_cast<double>(get_u64(in));
  return ParamSet::from_flat(config, flat);
}

void save_params(const std::filesystem::path& path, const ParamSet& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  write_params(out, params);
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_params(in);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
}

}  // namespace markovlm
