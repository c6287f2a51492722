// One PASS/FAIL line per acceptance criterion; exit status 1 when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include "ledetr/bench.hpp"
#include "ledetr/checks.hpp"
#include "ledetr/counting.hpp"

namespace {

using namespace ledetr;

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << "  [" << id << "] " << title << "  (" << detail << ")" << std::endl;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::pair<bool, std::string> suite(const std::string& name) {
  bool ok = true;
  std::string detail;
  for (const CheckLine& l : run_check_suite(name)) {
    ok = ok && l.passed;
    if (!detail.empty()) detail += "; ";
    detail += (l.passed ? "" : "FAILED ") + l.name + (l.detail.empty() ? "" : ": " + l.detail);
  }
  return {ok, detail};
}

bool within(double value, double target, double tol) { return std::abs(value - target) <= tol * target; }

void criterion_na_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto [ok, detail] = suite("na-oracle");
  const double secs = seconds_since(t0);
  report(1, "NA matches masked dense oracle <= 1e-5 over the grid in < 30 s", ok && secs < 30.0,
         detail + fmt("; %.2f s", secs));
}

void criterion_global() {
  const auto [ok, detail] = suite("global");
  report(2, "global window k=H=W in {3,5,7} equals dense attention <= 1e-5", ok, detail);
}

void criterion_grad() {
  const auto [ok, detail] = suite("grad");
  report(3, "NA gradients vs finite differences rel err <= 1e-3", ok, detail);
}

void criterion_params() {
  struct Target {
    const char* scale;
    double millions;
  };
  bool ok = true;
  std::string detail;
  for (const Target t : {Target{"M", 31.4}, Target{"L", 41.5}, Target{"X", 44.9}}) {
    const double p = static_cast<double>(count_model(build_model(model_spec(t.scale), 0), 640, 640).params) / 1e6;
    ok = ok && within(p, t.millions, 0.10);
    detail += std::string(t.scale) + fmt(" %.3fM vs %.1fM (%+.1f%%); ", p, t.millions, 100 * (p / t.millions - 1));
  }
  const Index m4 = count_model(build_model(model_spec("M", 4), 0), 640, 640).params;
  const Index m5 = count_model(build_model(model_spec("M", 5), 0), 640, 640).params;
  const double delta = static_cast<double>(m5 - m4) / 1e6;
  ok = ok && within(delta, 1.3, 0.20);
  detail += fmt("M per-layer delta %.3fM vs 1.3M (%+.1f%%)", delta, 100 * (delta / 1.3 - 1));
  report(4, "params within 10% of 31.4/41.5/44.9M, M layer delta within 20% of 1.3M", ok, detail);
}

void criterion_gflops() {
  const CountReport r = count_model(build_model(model_spec("L"), 0), 640, 640);
  const double g = r.gflops();
  report(5, "L at 640x640 within 25% of 124.3 GFLOPs", within(g, 124.3, 0.25),
         fmt("%.2f GFLOPs with 1 MAC = 2 FLOPs (%.2f GMACs), %+.1f%%", g, r.gmacs(), 100 * (g / 124.3 - 1)));
}

void criterion_scaling() {
  BenchOptions o;
  o.seed = 1;
  double na[3], dense[3];
  const Index sides[3] = {16, 32, 64};
  for (int i = 0; i < 3; ++i) {
    na[i] = bench_na(sides[i], sides[i], o).median_ms;
    dense[i] = bench_dense(sides[i], sides[i], o).median_ms;
  }
  const double na_ratio = na[2] / na[0], dense_ratio = dense[2] / dense[0], speedup = dense[2] / na[2];
  const bool ok = na_ratio >= 8 && na_ratio <= 24 && dense_ratio >= 64 && speedup >= 2;
  report(6, "NA 16->64 ratio in [8, 24], dense ratio >= 64, NA >= 2x faster at 64x64", ok,
         fmt("NA %.2f -> %.2f ms (x%.1f); ", na[0], na[2], na_ratio) +
             fmt("dense %.2f -> %.2f ms (x%.1f); speedup %.1fx", dense[0], dense[2], dense_ratio, speedup));
}

void criterion_shapes() {
  const LeDetr m = build_model(model_spec("L"), 0);
  Rng64 rng(1);
  const Tensor4f x = init_normal(rng, Shape4{1, 3, 640, 640}, 1.0);
  const FeaturePyramid p = backbone_forward(m.backbone, x);
  const Memory mem = flatten_memory(encoder_forward(p, m.spec.encoder, m.encoder));
  const auto six = decode(mem, 0, m.spec.decoder, m.decoder, 6);
  bool prefix = six.size() == 6;
  for (Index n : {4, 5}) {
    const auto part = decode(mem, 0, m.spec.decoder, m.decoder, n);
    prefix = prefix && part.size() == static_cast<std::size_t>(n);
    for (Index i = 0; prefix && i < n; ++i) {
      prefix = bitwise_equal(part[i].boxes, six[i].boxes) && bitwise_equal(part[i].logits, six[i].logits);
    }
  }
  Index patterns = 0;
  for (const PatternEntry& e : list_patterns()) {
    Rng64 r(2);
    const FeaturePyramid f = backbone_forward(build_backbone(e.name(), 0), init_normal(r, Shape4{1, 3, 64, 64}, 1.0));
    patterns += f.s5.shape() == Shape4{1, 512, 2, 2};
  }
  const bool s5 = p.s5.shape() == Shape4{1, 512, 20, 20};
  const bool tokens = mem.tokens_per_item() == 8400;
  report(7, "s5 512x20x20, 8400 tokens, prefix bit-exact for n in {4,5,6}, 13 patterns at 64x64",
         s5 && tokens && prefix && patterns == 13,
         "s5 " + p.s5.shape().str() + ", tokens " + std::to_string(mem.tokens_per_item()) +
             ", prefix " + (prefix ? "exact" : "differs") + ", patterns " + std::to_string(patterns) + "/13");
}

void criterion_determinism() {
  const auto [ok, detail] = suite("determinism");
  report(8, "seed 7 checkpoints byte-identical, forward bit-identical at 1 vs 4 threads", ok, detail);
}

}  // namespace

int main() {
  try {
    criterion_na_oracle();
    criterion_global();
    criterion_grad();
    criterion_params();
    criterion_gflops();
    criterion_scaling();
    criterion_shapes();
    criterion_determinism();
  } catch (const std::exception& e) {
    std::cout << "FAIL  acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all 8 criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
