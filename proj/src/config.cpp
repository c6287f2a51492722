#include "ledetr/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ledetr {

namespace {

using nlohmann::json;

Index as_index(const json& v, const char* key) {
  if (!v.is_number_integer()) throw ConfigError(std::string("config: '") + key + "' must be an integer");
  return v.get<Index>();
}

}  // namespace

void ModelConfig::validate() const {
  backbone_spec(scale);
  if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw ConfigError("config: input_hw " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                      " must be positive multiples of 32");
  }
  if (inference_layers < 0 || inference_layers > 6) {
    throw ConfigError("config: inference_layers must be in [1, 6]");
  }
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (num_classes < 1) throw ConfigError("config: num_classes must be >= 1");
}

ModelConfig parse_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");

  ModelConfig cfg;
  for (const auto& [key, v] : doc.items()) {
    if (key == "scale") {
      if (!v.is_string()) throw ConfigError("config: 'scale' must be a string");
      cfg.scale = v.get<std::string>();
    } else if (key == "input_hw") {
      if (v.is_array() && v.size() == 2) {
        cfg.input_h = as_index(v[0], "input_hw");
        cfg.input_w = as_index(v[1], "input_hw");
      } else {
        cfg.input_h = cfg.input_w = as_index(v, "input_hw");
      }
    } else if (key == "inference_layers") {
      cfg.inference_layers = as_index(v, "inference_layers");
      if (cfg.inference_layers < 1) throw ConfigError("config: inference_layers must be in [1, 6]");
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("config: 'seed' must be a non-negative integer");
      cfg.seed = v.get<std::uint64_t>();
    } else if (key == "threads") {
      cfg.threads = as_index(v, "threads");
    } else if (key == "num_classes") {
      cfg.num_classes = as_index(v, "num_classes");
    } else {
      throw ConfigError("config: unknown key '" + key +
                        "' (allowed: scale, input_hw, inference_layers, seed, threads, num_classes)");
    }
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_env_overrides(ModelConfig& cfg) {
  const char* s = std::getenv("LE_SEED");
  if (s == nullptr || *s == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || *s == '-') {
    throw ConfigError(std::string("LE_SEED is not a non-negative integer: ") + s);
  }
  cfg.seed = v;
}

}  // namespace ledetr
