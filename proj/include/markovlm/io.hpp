#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "markovlm/config.hpp"
#include "markovlm/params.hpp"

namespace markovlm {

using Json = nlohmann::json;

/// Rounds to 9 significant digits, the precision of every emitted artifact.
double round9(double x);
/// Formats with 9 significant digits.
std::string fmt9(double x);

Json to_json(const ModelConfig& config);
/// Rejects unknown keys; missing keys keep `base` values.
ModelConfig model_config_from_json(const Json& j, ModelConfig base = {});

// Parameter files: 8-byte magic "MKLMPAR1", u64 LE header length, JSON header
// (config, tying flag, field offsets), then the flat vector as f64 LE.
inline constexpr char kParamsMagic[9] = "MKLMPAR1";

void write_params(std::ostream& out, const ParamSet& params);
ParamSet read_params(std::istream& in);
void save_params(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_params(const std::filesystem::path& path);

/// Creates parent directories, then writes `text`.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace markovlm
