#include "ledetr/model.hpp"

namespace ledetr {

Index default_inference_layers(std::string_view scale) { return scale == "M" ? 4 : 6; }

ModelSpec model_spec(std::string_view scale, Index inference_layers, Index num_classes) {
  ModelSpec s;
  s.scale = std::string(scale);
  s.backbone = backbone_spec(scale);
  const auto& wd = s.backbone.widths;
  s.encoder.in_channels = {wd[2], wd[3], wd[4]};
  s.decoder.num_classes = num_classes;
  s.decoder.layers_inference = inference_layers < 1 ? default_inference_layers(scale) : inference_layers;
  s.backbone.validate();
  s.encoder.validate();
  s.decoder.validate();
  return s;
}

LeDetr build_model(const ModelSpec& spec, std::uint64_t seed) {
  Rng64 rng(seed);
  LeDetr m;
  m.spec = spec;
  m.backbone = build_backbone(spec.backbone, rng);
  m.encoder = make_encoder(spec.encoder, rng);
  m.decoder = make_decoder(spec.decoder, rng);
  return m;
}

ModelOutput model_forward(const LeDetr& model, const Tensor4f& image, Index n_layers) {
  const Index layers = n_layers < 1 ? model.spec.decoder.layers_inference : n_layers;
  const FeaturePyramid p = backbone_forward(model.backbone, image);
  const FusedPyramid fused = encoder_forward(p, model.spec.encoder, model.encoder);
  ModelOutput out;
  out.memory = flatten_memory(fused);
  for (Index b = 0; b < image.n(); ++b) {
    out.detections.push_back(decode(out.memory, b, model.spec.decoder, model.decoder, layers));
  }
  return out;
}

}  // namespace ledetr
