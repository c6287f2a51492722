#pragma once

// JSON model configuration:
//
//   {"scale": "L", "input_hw": [640, 640], "inference_layers": 6,
//    "seed": 7, "threads": 1, "num_classes": 80}
//
// Every key is optional; unknown keys are rejected. input_hw may also be a
// single integer for square inputs. LE_SEED in the environment overrides seed.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ledetr/model.hpp"

namespace ledetr {

struct ModelConfig {
  std::string scale = "L";
  Index input_h = 640;
  Index input_w = 640;
  /// 0 selects the scale default.
  Index inference_layers = 0;
  std::uint64_t seed = 0;
  Index threads = 1;
  Index num_classes = 80;

  Index layers() const {
    return inference_layers > 0 ? inference_layers : default_inference_layers(scale);
  }
  /// Throws ConfigError.
  void validate() const;
  ModelSpec model() const { return model_spec(scale, layers(), num_classes); }
};

ModelConfig parse_config(std::string_view json_text);
ModelConfig load_config(const std::filesystem::path& path);

/// Applies LE_SEED when set; a malformed value throws ConfigError.
void apply_env_overrides(ModelConfig& cfg);

}  // namespace ledetr
