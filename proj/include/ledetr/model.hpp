#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ledetr/decoder.hpp"

namespace ledetr {

struct ModelSpec {
  std::string scale;
  BackboneSpec backbone;
  EncoderSpec encoder;
  DecoderSpec decoder;
};

/// Decoder layers run at inference when none are requested: 4 for M, else 6.
Index default_inference_layers(std::string_view scale);

/// inference_layers < 1 selects the scale default.
ModelSpec model_spec(std::string_view scale, Index inference_layers = 0, Index num_classes = 80);

struct LeDetr {
  ModelSpec spec;
  Backbone backbone;
  EncoderWeights encoder;
  DecoderWeights decoder;
};

/// Weights are drawn from one generator in backbone, encoder, decoder order;
/// all trained decoder layers are built whatever the inference depth.
LeDetr build_model(const ModelSpec& spec, std::uint64_t seed);

struct ModelOutput {
  Memory memory;
  /// Per batch item, one set per decoder layer run.
  std::vector<std::vector<DetectionSet>> detections;
};

/// n_layers < 1 runs spec.decoder.layers_inference layers.
ModelOutput model_forward(const LeDetr& model, const Tensor4f& image, Index n_layers = 0);

/// Visits every inference-time tensor: backbone, encoder and the first
/// layers_inference decoder layers.
template <typename Self, typename F>
  requires ParamsOf<Self, LeDetr>
void for_each_param(Self& m, const std::string& prefix, F&& f) {
  const std::string p = prefix.empty() ? std::string() : prefix + ".";
  for_each_param(m.backbone, p + "backbone", f);
  for_each_param(m.encoder, p + "encoder", f);
  for_each_param(m.decoder, p + "decoder", f, m.spec.decoder.layers_inference);
}

}  // namespace ledetr
