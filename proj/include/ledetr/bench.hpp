#pragma once

// Wall-clock latency benchmarks: median and p5/p95 over timed repetitions
// after warmup, on a monotonic clock.

#include <chrono>
#include <iosfwd>
#include <string>
#include <vector>

#include "ledetr/tensor.hpp"

namespace ledetr {

struct LatencyRow {
  std::string target;
  Index height = 0;
  Index width = 0;
  Index kernel = 0;
  Index threads = 1;
  double median_ms = 0;
  double p5_ms = 0;
  double p95_ms = 0;
  Index tokens = 0;

  friend bool operator==(const LatencyRow&, const LatencyRow&) = default;
};

struct LatencyReport {
  Index reps = 0;
  Index warmup = 0;
  Index threads = 1;
  std::vector<LatencyRow> rows;
};

/// Linear-interpolated percentile, p in [0, 100].
double percentile(std::vector<double> samples, double p);

LatencyRow summarize(const std::string& target, Index height, Index width, Index kernel,
                     Index threads, const std::vector<double>& samples_ms);

/// Runs fn warmup times untimed, then reps times timed; returns milliseconds.
template <typename Fn>
std::vector<double> time_reps(Fn&& fn, Index reps, Index warmup) {
  for (Index i = 0; i < warmup; ++i) fn();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(reps));
  for (Index i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    out.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return out;
}

struct BenchOptions {
  std::vector<std::string> targets{"na", "dense"};
  Index height = 64;
  Index width = 64;
  Index reps = 10;
  Index warmup = 3;
  Index threads = 1;
  Index kernel = 7;
  Index heads = 4;
  Index head_dim = 32;
  /// Model scale for the naifi / backbone / model targets.
  std::string scale = "L";
  std::uint64_t seed = 0;

  /// Throws ParameterError for reps < 10, warmup < 3, threads < 1, and
  /// ConfigError for unknown targets.
  void validate() const;
};

const std::vector<std::string>& bench_targets();

/// Times the NA kernel on a random H x W token map.
LatencyRow bench_na(Index height, Index width, const BenchOptions& o);
/// Times dense all-pairs attention on the same map.
LatencyRow bench_dense(Index height, Index width, const BenchOptions& o);

LatencyReport run_bench(const BenchOptions& o);

/// Columns: target,hw,k,threads,median_ms,p5_ms,p95_ms with hw as HxW.
void write_latency_csv(std::ostream& os, const LatencyReport& r);
LatencyReport parse_latency_csv(std::istream& is);
void print_latency_table(std::ostream& os, const LatencyReport& r);

}  // namespace ledetr
