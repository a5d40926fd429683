// fpac command line: train / eval / bench / viz / sweep
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpac/config.hpp"
#include "fpac/harness.hpp"

namespace {

fpac::RunConfig build_config(const std::string& config_path,
                             const std::vector<std::string>& overrides, long long seed,
                             const std::string& out_dir) {
  fpac::RunConfig cfg;
  if (!config_path.empty()) cfg = fpac::parse_config(config_path);
  for (const auto& kv : overrides) fpac::apply_config_line(cfg, kv);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  fpac::validate_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-point actor-critic trainer"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint;
  long long seed = -1;
  std::vector<std::string> overrides;
  int sweep_seeds = 5;
  int episodes = 10;
  int bench_iters = 1000;
  int bench_warmup = 100;
  int viz_steps = 0;
  bool viz_probs = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("overrides", overrides, "key=value overrides");
  };

  auto* cmd_train = app.add_subcommand("train", "train an agent and log learning curves");
  add_common(cmd_train);

  auto* cmd_sweep = app.add_subcommand("sweep", "train over several seeds and aggregate");
  add_common(cmd_sweep);
  cmd_sweep->add_option("--seeds", sweep_seeds, "number of seeds");

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  cmd_eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  cmd_eval->add_option("--episodes", episodes, "evaluation episodes");
  cmd_eval->add_option("--seed", seed, "evaluation seed");

  auto* cmd_bench = app.add_subcommand("bench", "time separable vs full 2-d softmax");
  cmd_bench->add_option("--iters", bench_iters, "timed iterations");
  cmd_bench->add_option("--warmup", bench_warmup, "warmup iterations");

  auto* cmd_viz = app.add_subcommand("viz", "dump frames with feature-point overlays");
  cmd_viz->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  cmd_viz->add_option("--out", out_dir, "output directory")->required();
  cmd_viz->add_option("--episodes", episodes, "episodes to roll out");
  cmd_viz->add_option("--steps", viz_steps, "cap on steps per episode (0 = full)");
  cmd_viz->add_flag("--prob-maps", viz_probs, "also dump per-channel location distributions");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      auto cfg = build_config(config_path, overrides, seed, out_dir);
      auto record = fpac::train(cfg);
      std::printf("wrote %s (%zu eval rows, %.1fs)\n", record.csv_path.c_str(),
                  record.rows.size(), record.wall_seconds);
      if (!record.rows.empty())
        std::printf("final return %.3f +- %.3f\n", record.rows.back().return_mean,
                    record.rows.back().return_std);
    } else if (cmd_sweep->parsed()) {
      auto cfg = build_config(config_path, overrides, seed, out_dir);
      auto records = fpac::sweep(cfg, sweep_seeds);
      double mean = 0.0;
      for (const auto& r : records) mean += r.rows.empty() ? 0.0 : r.rows.back().return_mean;
      if (!records.empty()) mean /= static_cast<double>(records.size());
      std::printf("%d seeds done; final return mean %.3f; aggregate at %s/aggregate.csv\n",
                  sweep_seeds, mean, cfg.output_dir.c_str());
    } else if (cmd_eval->parsed()) {
      auto run = fpac::load_checkpoint(checkpoint);
      auto ev = fpac::evaluate(*run.agent, *run.env, episodes,
                               seed >= 0 ? static_cast<std::uint64_t>(seed) : run.config.seed);
      std::printf("return %.3f +- %.3f over %d episodes\n", ev.return_mean, ev.return_std,
                  episodes);
    } else if (cmd_bench->parsed()) {
      auto res = fpac::bench_softmax({128, 32, 35, 35}, bench_iters, bench_warmup);
      std::printf("batch 128x32x35x35, %d iters\n", res.iters);
      std::printf("full2d     %.3f ms  (+- %.3f)\n", res.full2d_mean_ms, res.full2d_std_ms);
      std::printf("separable  %.3f ms  (+- %.3f)\n", res.separable_mean_ms,
                  res.separable_std_ms);
      std::printf("speedup    %.2fx\n", res.speedup);
    } else if (cmd_viz->parsed()) {
      fpac::VizOptions opt;
      opt.episodes = episodes;
      opt.max_steps = viz_steps;
      opt.dump_prob_maps = viz_probs;
      auto files = fpac::viz(checkpoint, out_dir, opt);
      std::printf("wrote %zu files under %s\n", files.size(), out_dir.c_str());
    }
  } catch (const fpac::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const fpac::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
