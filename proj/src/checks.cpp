#include "ledetr/checks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "ledetr/checkpoint.hpp"
#include "ledetr/parallel.hpp"

namespace ledetr {

namespace {

template <typename S>
Tensor4<S> random_t(const Shape4& s, std::uint64_t seed) {
  Rng64 rng(seed);
  Tensor4<S> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.normal());
  return t;
}

template <typename S>
RelBias<S> random_bias(Index heads, Index kernel, std::uint64_t seed) {
  RelBias<S> b(heads, kernel);
  b.table = random_t<S>(b.table.shape(), seed);
  return b;
}

std::string num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::vector<CheckLine> na_oracle_suite() {
  double worst = 0;
  Index cases = 0;
  for (Index h = 3; h <= 8; ++h) {
    for (Index w = 3; w <= 8; ++w) {
      for (Index k : {1, 3, 5}) {
        if (k > std::min(h, w)) continue;
        for (Index heads : {1, 2}) {
          for (Index d : {2, 4}) {
            for (std::uint64_t seed = 0; seed < 20; ++seed) {
              const NaConfig cfg{.kernel = k, .heads = heads, .head_dim = d};
              const Shape4 s{1, h, w, cfg.embed()};
              const std::uint64_t base = seed * 4 + 1000;
              const auto q = random_t<float>(s, base), kk = random_t<float>(s, base + 1),
                         v = random_t<float>(s, base + 2);
              const auto bias = random_bias<float>(heads, k, base + 3);
              const auto na = na_forward(q, kk, v, bias, cfg).out;
              const auto dense = dense_attention_oracle(q, kk, v, neighborhood_mask(h, w, cfg), heads,
                                                        relative_bias_gather(bias, w));
              worst = std::max<double>(worst, max_abs_diff(na, dense));
              ++cases;
            }
          }
        }
      }
    }
  }
  return {{"na_forward == masked dense oracle (" + std::to_string(cases) + " cases)", worst <= 1e-5,
           "max abs diff " + num(worst)}};
}

std::vector<CheckLine> global_suite() {
  std::vector<CheckLine> out;
  for (Index k : {3, 5, 7}) {
    const NaConfig cfg{.kernel = k, .heads = 2, .head_dim = 4};
    const Shape4 s{1, k, k, cfg.embed()};
    const auto q = random_t<float>(s, 11), kk = random_t<float>(s, 12), v = random_t<float>(s, 13);
    const RelBias<float> zero(cfg.heads, k);
    const double diff = max_abs_diff(na_apply(q, kk, v, zero, cfg), dense_attention(q, kk, v, 2));
    out.push_back({"global window k=H=W=" + std::to_string(k) + " equals dense", diff <= 1e-5,
                   "max abs diff " + num(diff)});
  }
  return out;
}

std::vector<CheckLine> grad_suite() {
  const NaConfig cfg{.kernel = 3, .heads = 2, .head_dim = 2};
  const Shape4 s{1, 4, 4, cfg.embed()};
  const double eps = 1e-4;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto q = random_t<double>(s, 50 + seed * 8), k = random_t<double>(s, 51 + seed * 8),
         v = random_t<double>(s, 52 + seed * 8);
    auto bias = random_bias<double>(cfg.heads, cfg.kernel, 53 + seed * 8);
    const auto d_out = random_t<double>(s, 54 + seed * 8);
    const auto grads = na_backward(na_forward_tape(q, k, v, bias, cfg), d_out);
    auto loss = [&] {
      const auto o = na_apply(q, k, v, bias, cfg);
      double acc = 0;
      for (Index i = 0; i < o.size(); ++i) acc += o[i] * d_out[i];
      return acc;
    };
    auto compare = [&](Tensor4d& x, const Tensor4d& g) {
      for (Index i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double up = loss();
        x[i] = saved - eps;
        const double down = loss();
        x[i] = saved;
        const double fd = (up - down) / (2 * eps);
        const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - g[i]) / denom);
      }
    };
    compare(q, grads.d_q);
    compare(k, grads.d_k);
    compare(v, grads.d_v);
    compare(bias.table, grads.d_bias.table);
  }
  return {{"na_backward vs central differences (10 instances)", worst <= 1e-3,
           "max rel err " + num(worst)}};
}

LeDetr small_model(std::uint64_t seed) { return build_model(model_spec("L", 6), seed); }

std::vector<CheckLine> prefix_suite() {
  const LeDetr m = small_model(3);
  Rng64 rng(4);
  const Tensor4f x = init_normal(rng, Shape4{1, 3, 160, 160}, 1.0);
  const ModelOutput full = model_forward(m, x, 6);
  bool ok = true;
  for (Index n = 1; n <= 5; ++n) {
    const auto sets = decode(full.memory, 0, m.spec.decoder, m.decoder, n);
    for (Index i = 0; i < n; ++i) {
      const auto& a = sets[static_cast<std::size_t>(i)];
      const auto& b = full.detections[0][static_cast<std::size_t>(i)];
      ok = ok && bitwise_equal(a.boxes, b.boxes) && bitwise_equal(a.logits, b.logits);
    }
  }
  bool in_range = true;
  for (const auto& set : full.detections[0]) {
    in_range = in_range && (set.boxes.array() >= 0).all() && (set.boxes.array() <= 1).all();
  }
  return {{"decode(n) is a bit-exact prefix of decode(6)", ok, "n = 1..5 at 160x160"},
          {"boxes within [0, 1]", in_range, ""}};
}

std::vector<CheckLine> shapes_suite() {
  std::vector<CheckLine> out;
  {
    const LeDetr m = build_model(model_spec("L"), 0);
    Rng64 rng(1);
    const Tensor4f x = init_normal(rng, Shape4{1, 3, 640, 640}, 1.0);
    const FeaturePyramid p = backbone_forward(m.backbone, x);
    out.push_back({"backbone L 640x640 -> s5 1x512x20x20", p.s5.shape() == Shape4{1, 512, 20, 20},
                   "s3 " + p.s3.shape().str() + ", s4 " + p.s4.shape().str() + ", s5 " +
                       p.s5.shape().str()});
    const Memory mem = flatten_memory(encoder_forward(p, m.spec.encoder, m.encoder));
    out.push_back({"encoder tokens at 640x640 = 8400", mem.tokens_per_item() == 8400,
                   std::to_string(mem.tokens_per_item()) + " tokens"});
  }
  Index ok = 0;
  std::string failed;
  for (const PatternEntry& p : list_patterns()) {
    try {
      const Backbone b = build_backbone(p.name(), 0);
      Rng64 rng(2);
      const FeaturePyramid f = backbone_forward(b, init_normal(rng, Shape4{1, 3, 64, 64}, 1.0));
      if (f.s5.shape() == Shape4{1, 512, 2, 2}) ++ok;
      else failed += " " + p.name();
    } catch (const std::exception& e) {
      failed += " " + p.name() + "(" + e.what() + ")";
    }
  }
  out.push_back({"all 13 stage patterns forward a 64x64 input", ok == 13,
                 std::to_string(ok) + "/13" + (failed.empty() ? "" : "; failed:" + failed)});
  return out;
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<CheckLine> determinism_suite() {
  std::vector<CheckLine> out;
  const auto root = std::filesystem::temp_directory_path() / "ledetr_check_determinism";
  ModelConfig cfg;
  cfg.seed = 7;
  for (const char* run : {"a", "b"}) {
    write_checkpoint(build_model(cfg.model(), cfg.seed), cfg, root / run);
  }
  const bool same = read_all(root / "a" / kWeightsFile) == read_all(root / "b" / kWeightsFile) &&
                    read_all(root / "a" / kManifestFile) == read_all(root / "b" / kManifestFile);
  std::filesystem::remove_all(root);
  out.push_back({"seed 7 checkpoints byte-identical", same, ""});

  const LeDetr m = build_model(model_spec("L"), 7);
  Rng64 rng(8);
  const Tensor4f x = init_normal(rng, Shape4{1, 3, 160, 160}, 1.0);
  ModelOutput one, four;
  {
    ThreadScope s(1);
    one = model_forward(m, x);
  }
  {
    ThreadScope s(4);
    four = model_forward(m, x);
  }
  bool eq = bitwise_equal(one.memory.tokens, four.memory.tokens);
  for (std::size_t i = 0; i < one.detections[0].size(); ++i) {
    eq = eq && bitwise_equal(one.detections[0][i].boxes, four.detections[0][i].boxes) &&
         bitwise_equal(one.detections[0][i].logits, four.detections[0][i].logits);
  }
  out.push_back({"forward bit-identical at 1 vs 4 threads", eq, "L at 160x160"});
  return out;
}

}  // namespace

const std::vector<std::string>& check_suites() {
  static const std::vector<std::string> s{"na-oracle", "global", "grad", "prefix",
                                          "shapes", "determinism", "all"};
  return s;
}

std::vector<CheckLine> run_check_suite(const std::string& suite) {
  if (suite == "na-oracle") return na_oracle_suite();
  if (suite == "global") return global_suite();
  if (suite == "grad") return grad_suite();
  if (suite == "prefix") return prefix_suite();
  if (suite == "shapes") return shapes_suite();
  if (suite == "determinism") return determinism_suite();
  if (suite == "all") {
    std::vector<CheckLine> all;
    for (const std::string& s : check_suites()) {
      if (s == "all") continue;
      auto part = run_check_suite(s);
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  throw ConfigError("unknown check suite '" + suite +
                    "' (valid: na-oracle, global, grad, prefix, shapes, determinism, all)");
}

bool print_checks(std::ostream& os, const std::vector<CheckLine>& lines) {
  bool ok = true;
  for (const CheckLine& l : lines) {
    os << (l.passed ? "PASS  " : "FAIL  ") << l.name;
    if (!l.detail.empty()) os << "  [" << l.detail << "]";
    os << "\n";
    ok = ok && l.passed;
  }
  return ok;
}

}  // namespace ledetr
