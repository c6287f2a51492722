// ledetr: build checkpoints, count params/MACs, benchmark kernels, run checks.
//
// Exit codes: 0 success, 1 check failure, 2 usage or configuration error.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ledetr/bench.hpp"
#include "ledetr/checkpoint.hpp"
#include "ledetr/checks.hpp"
#include "ledetr/counting.hpp"
#include "ledetr/parallel.hpp"

namespace {

using namespace ledetr;

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

ModelConfig load(const std::string& path) {
  ModelConfig cfg = load_config(path);
  apply_env_overrides(cfg);
  set_num_threads(static_cast<int>(cfg.threads));
  return cfg;
}

std::pair<Index, Index> parse_hw(const std::string& s) {
  std::istringstream in(s);
  Index h = 0, w = 0;
  char comma = 0;
  if (!(in >> h)) throw ConfigError("--hw expects H,W or H, got '" + s + "'");
  if (in >> comma) {
    if (comma != ',' || !(in >> w)) throw ConfigError("--hw expects H,W, got '" + s + "'");
  } else {
    w = h;
  }
  return {h, w};
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_build(const std::string& config, const std::string& out) {
  const ModelConfig cfg = load(config);
  const LeDetr model = build_model(cfg.model(), cfg.seed);
  const Manifest m = write_checkpoint(model, cfg, out);
  std::cout << "scale " << cfg.scale << "  seed " << cfg.seed << "  inference_layers "
            << cfg.layers() << "\n"
            << m.entries.size() << " tensors, " << m.total_params() << " params -> " << out << "\n";
  return 0;
}

int cmd_count(const std::string& config, Index layers) {
  ModelConfig cfg = load(config);
  if (layers != 0) {
    cfg.inference_layers = layers;
    cfg.validate();
  }
  const LeDetr model = build_model(cfg.model(), cfg.seed);
  print_count_report(std::cout, count_model(model, cfg.input_h, cfg.input_w));
  return 0;
}

int cmd_bench(BenchOptions o, const std::string& hw, const std::string& targets,
              const std::string& csv) {
  std::tie(o.height, o.width) = parse_hw(hw);
  o.targets = split(targets);
  ModelConfig seed_only;
  seed_only.seed = o.seed;
  apply_env_overrides(seed_only);
  o.seed = seed_only.seed;
  const LatencyReport r = run_bench(o);
  print_latency_table(std::cout, r);
  if (!csv.empty()) {
    std::ofstream f(csv);
    if (!f) throw ConfigError("cannot write " + csv);
    write_latency_csv(f, r);
  }
  return 0;
}

int cmd_check(const std::string& suite) {
  return print_checks(std::cout, run_check_suite(suite)) ? 0 : kExitCheckFailed;
}

int cmd_detect(const std::string& config, const std::string& out) {
  const ModelConfig cfg = load(config);
  const LeDetr model = build_model(cfg.model(), cfg.seed);
  Rng64 rng(cfg.seed + 1);
  const Tensor4f image = init_normal(rng, Shape4{1, 3, cfg.input_h, cfg.input_w}, 1.0);
  const ModelOutput res = model_forward(model, image);
  std::ofstream f(out);
  if (!f) throw ConfigError("cannot write " + out);
  write_detections_csv(f, res.detections[0]);
  std::cout << res.detections[0].size() << " layers x " << model.spec.decoder.queries
            << " queries -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Le-DETR inference library tool"};
  app.require_subcommand(1);

  std::string config, out, suite = "all", hw = "64,64", targets = "na,dense", csv;
  Index layers = 0;
  BenchOptions bench;

  auto* build = app.add_subcommand("build", "Write a seeded checkpoint and manifest");
  build->add_option("--config", config, "JSON model config")->required();
  build->add_option("--out", out, "Output directory")->required();

  auto* count = app.add_subcommand("count", "Print parameter and MAC accounting");
  count->add_option("--config", config, "JSON model config")->required();
  count->add_option("--layers", layers, "Decoder layers run at inference (1-6)");

  auto* bench_cmd = app.add_subcommand("bench", "Latency benchmark");
  bench_cmd->add_option("--targets", targets, "Comma list of na,dense,naifi,backbone,model");
  bench_cmd->add_option("--hw", hw, "Map or image extents H,W");
  bench_cmd->add_option("--reps", bench.reps, "Timed repetitions (>= 10)");
  bench_cmd->add_option("--warmup", bench.warmup, "Untimed warmup runs (>= 3)");
  bench_cmd->add_option("--threads", bench.threads, "Worker threads");
  bench_cmd->add_option("--k", bench.kernel, "NA kernel size for the na target");
  bench_cmd->add_option("--heads", bench.heads, "Attention heads for na/dense");
  bench_cmd->add_option("--head-dim", bench.head_dim, "Head dimension for na/dense");
  bench_cmd->add_option("--scale", bench.scale, "Model scale for naifi/backbone/model");
  bench_cmd->add_option("--csv", csv, "Write results as CSV");

  auto* check = app.add_subcommand("check", "Run invariant suites");
  check->add_option("--suite", suite, "na-oracle, global, grad, prefix, shapes, determinism, all");

  auto* detect = app.add_subcommand("detect", "Run the model on a seeded random image");
  detect->add_option("--config", config, "JSON model config")->required();
  detect->add_option("--out", out, "Detections CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*build) return cmd_build(config, out);
    if (*count) return cmd_count(config, layers);
    if (*bench_cmd) return cmd_bench(bench, hw, targets, csv);
    if (*check) return cmd_check(suite);
    if (*detect) return cmd_detect(config, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
