#include "ledetr/bench.hpp"

#include <algorithm>
#include <charconv>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "ledetr/model.hpp"
#include "ledetr/parallel.hpp"

namespace ledetr {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error("latency csv: bad number '" + s + "'");
  }
  return v;
}

Index parse_index(const std::string& s) {
  Index v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error("latency csv: bad integer '" + s + "'");
  }
  return v;
}

Tensor4f random_map(Index h, Index w, Index c, std::uint64_t seed) {
  Rng64 rng(seed);
  return init_normal(rng, Shape4{1, h, w, c}, 1.0);
}

}  // namespace

const std::vector<std::string>& bench_targets() {
  static const std::vector<std::string> t{"na", "dense", "naifi", "backbone", "model"};
  return t;
}

void BenchOptions::validate() const {
  if (reps < 10) throw ParameterError("bench: reps must be >= 10, got " + std::to_string(reps));
  if (warmup < 3) throw ParameterError("bench: warmup must be >= 3, got " + std::to_string(warmup));
  if (threads < 1) throw ParameterError("bench: threads must be >= 1");
  if (height < 1 || width < 1) throw ParameterError("bench: map extents must be >= 1");
  if (targets.empty()) throw ConfigError("bench: no targets");
  for (const std::string& t : targets) {
    if (std::find(bench_targets().begin(), bench_targets().end(), t) == bench_targets().end()) {
      throw ConfigError("bench: unknown target '" + t + "' (valid: na, dense, naifi, backbone, model)");
    }
  }
}

double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) throw ParameterError("percentile: no samples");
  if (p < 0 || p > 100) throw ParameterError("percentile: p outside [0, 100]");
  std::sort(samples.begin(), samples.end());
  const double pos = p / 100.0 * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return samples[lo] + (samples[hi] - samples[lo]) * frac;
}

LatencyRow summarize(const std::string& target, Index height, Index width, Index kernel,
                     Index threads, const std::vector<double>& samples_ms) {
  LatencyRow r;
  r.target = target;
  r.height = height;
  r.width = width;
  r.kernel = kernel;
  r.threads = threads;
  r.median_ms = percentile(samples_ms, 50);
  r.p5_ms = percentile(samples_ms, 5);
  r.p95_ms = percentile(samples_ms, 95);
  r.tokens = height * width;
  return r;
}

LatencyRow bench_na(Index height, Index width, const BenchOptions& o) {
  NaConfig cfg{.kernel = o.kernel, .heads = o.heads, .head_dim = o.head_dim};
  cfg.kernel = shrink_kernel(cfg.kernel, std::min(height, width));
  const Tensor4f q = random_map(height, width, cfg.embed(), o.seed + 1);
  const Tensor4f k = random_map(height, width, cfg.embed(), o.seed + 2);
  const Tensor4f v = random_map(height, width, cfg.embed(), o.seed + 3);
  const RelBias<float> bias(cfg.heads, cfg.kernel);
  ThreadScope scope(static_cast<int>(o.threads));
  const auto samples = time_reps([&] { (void)na_apply(q, k, v, bias, cfg); }, o.reps, o.warmup);
  return summarize("na", height, width, cfg.kernel, o.threads, samples);
}

LatencyRow bench_dense(Index height, Index width, const BenchOptions& o) {
  const Index c = o.heads * o.head_dim;
  const Tensor4f q = random_map(height, width, c, o.seed + 1);
  const Tensor4f k = random_map(height, width, c, o.seed + 2);
  const Tensor4f v = random_map(height, width, c, o.seed + 3);
  ThreadScope scope(static_cast<int>(o.threads));
  const auto samples = time_reps([&] { (void)dense_attention(q, k, v, o.heads); }, o.reps, o.warmup);
  return summarize("dense", height, width, 0, o.threads, samples);
}

LatencyReport run_bench(const BenchOptions& o) {
  o.validate();
  LatencyReport r{o.reps, o.warmup, o.threads, {}};
  for (const std::string& t : o.targets) {
    if (t == "na") {
      r.rows.push_back(bench_na(o.height, o.width, o));
    } else if (t == "dense") {
      r.rows.push_back(bench_dense(o.height, o.width, o));
    } else if (t == "naifi") {
      EncoderSpec es;
      Rng64 rng(o.seed);
      const EncoderWeights ew = make_encoder(es, rng);
      Rng64 xr(o.seed + 1);
      const Tensor4f s5 = init_normal(xr, Shape4{1, es.in_channels[2], o.height, o.width}, 1.0);
      const Index k = effective_na_config(es.naifi_na(), o.height, o.width, true).kernel;
      ThreadScope scope(static_cast<int>(o.threads));
      const auto samples =
          time_reps([&] { (void)naifi_forward(s5, es, ew.naifi); }, o.reps, o.warmup);
      r.rows.push_back(summarize(t, o.height, o.width, k, o.threads, samples));
    } else if (t == "backbone") {
      const Backbone b = build_backbone(o.scale, o.seed);
      Rng64 xr(o.seed + 1);
      const Tensor4f x = init_normal(xr, Shape4{1, 3, o.height, o.width}, 1.0);
      ThreadScope scope(static_cast<int>(o.threads));
      const auto samples = time_reps([&] { (void)backbone_forward(b, x); }, o.reps, o.warmup);
      r.rows.push_back(summarize(t, o.height, o.width, b.spec.na_stage.kernel, o.threads, samples));
    } else {
      const LeDetr m = build_model(model_spec(o.scale), o.seed);
      Rng64 xr(o.seed + 1);
      const Tensor4f x = init_normal(xr, Shape4{1, 3, o.height, o.width}, 1.0);
      ThreadScope scope(static_cast<int>(o.threads));
      const auto samples = time_reps([&] { (void)model_forward(m, x); }, o.reps, o.warmup);
      r.rows.push_back(summarize(t, o.height, o.width, m.spec.backbone.na_stage.kernel, o.threads,
                                 samples));
    }
  }
  return r;
}

void write_latency_csv(std::ostream& os, const LatencyReport& r) {
  os << "target,hw,k,threads,median_ms,p5_ms,p95_ms\n";
  for (const LatencyRow& row : r.rows) {
    os << row.target << ',' << row.height << 'x' << row.width << ',' << row.kernel << ','
       << row.threads << ',' << fmt_double(row.median_ms) << ',' << fmt_double(row.p5_ms) << ','
       << fmt_double(row.p95_ms) << '\n';
  }
}

LatencyReport parse_latency_csv(std::istream& is) {
  LatencyReport r;
  std::string line;
  if (!std::getline(is, line) || line != "target,hw,k,threads,median_ms,p5_ms,p95_ms") {
    throw Error("latency csv: missing header");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw Error("latency csv: expected 7 fields in '" + line + "'");
    const auto x = f[1].find('x');
    if (x == std::string::npos) throw Error("latency csv: bad hw '" + f[1] + "'");
    LatencyRow row;
    row.target = f[0];
    row.height = parse_index(f[1].substr(0, x));
    row.width = parse_index(f[1].substr(x + 1));
    row.kernel = parse_index(f[2]);
    row.threads = parse_index(f[3]);
    row.median_ms = parse_double(f[4]);
    row.p5_ms = parse_double(f[5]);
    row.p95_ms = parse_double(f[6]);
    row.tokens = row.height * row.width;
    r.threads = row.threads;
    r.rows.push_back(std::move(row));
  }
  return r;
}

void print_latency_table(std::ostream& os, const LatencyReport& r) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << "threads " << r.threads << "  reps " << r.reps << "  warmup " << r.warmup << "\n";
  os << std::left << std::setw(10) << "target" << std::setw(10) << "hw" << std::right
     << std::setw(4) << "k" << std::setw(9) << "tokens" << std::setw(12) << "median_ms"
     << std::setw(12) << "p5_ms" << std::setw(12) << "p95_ms" << "\n";
  os << std::fixed << std::setprecision(3);
  for (const LatencyRow& row : r.rows) {
    os << std::left << std::setw(10) << row.target << std::setw(10)
       << (std::to_string(row.height) + "x" + std::to_string(row.width)) << std::right
       << std::setw(4) << row.kernel << std::setw(9) << row.tokens << std::setw(12) << row.median_ms
       << std::setw(12) << row.p5_ms << std::setw(12) << row.p95_ms << "\n";
  }
  os.flags(flags);
  os.precision(prec);
}

}  // namespace ledetr
