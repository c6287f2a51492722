#pragma once

// Analytic parameter and multiply-accumulate accounting.
//
// MACs cover convolutions, linear layers, attention products and deformable
// sampling. Normalization, activations, residual adds and resampling are free.

#include <iosfwd>
#include <string>
#include <vector>

#include "ledetr/model.hpp"

namespace ledetr {

struct OpCount {
  Index params = 0;
  Index macs = 0;

  OpCount& operator+=(const OpCount& o) {
    params += o.params;
    macs += o.macs;
    return *this;
  }
};

/// Plain convolution on an H x W input; params include the bias when present.
OpCount count_conv2d(Index in, Index out, Index kernel, Index stride, Index groups, Index height,
                     Index width, bool bias);

struct CountLine {
  std::string module;
  OpCount count;
};

struct CountReport {
  std::string scale;
  Index input_h = 0;
  Index input_w = 0;
  Index inference_layers = 0;
  Index params = 0;
  Index macs = 0;
  std::vector<CountLine> lines;

  double gmacs() const { return static_cast<double>(macs) / 1e9; }
  double gflops() const { return 2.0 * static_cast<double>(macs) / 1e9; }
};

/// Params are the tensors a checkpoint of `model` holds; MACs are for one
/// image at height x width with the model's inference depth.
CountReport count_model(const LeDetr& model, Index height, Index width);

void print_count_report(std::ostream& os, const CountReport& r);

}  // namespace ledetr
