#ifndef FPAC_HARNESS_HPP
#define FPAC_HARNESS_HPP

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "fpac/agents.hpp"
#include "fpac/config.hpp"
#include "fpac/kernels.hpp"

#ifndef FPAC_GIT_COMMIT
#define FPAC_GIT_COMMIT "unknown"
#endif

namespace fpac {

struct RunRow {
  int env_step = 0;
  int episode = 0;
  double return_mean = 0.0;
  double return_std = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
};

struct RunRecord {
  std::vector<RunRow> rows;
  std::string csv_path;
  std::string checkpoint_path;
  RunConfig config;
  double wall_seconds = 0.0;
};

struct EvalResult {
  double return_mean = 0.0;
  double return_std = 0.0;
};

inline std::unique_ptr<Env> make_env(const RunConfig& cfg) {
  return std::make_unique<Env>(cfg.env_name, cfg.observation_size, cfg.observation_size,
                               cfg.frame_channels, cfg.action_repeat, cfg.episode_length);
}

inline std::unique_ptr<Agent> make_run_agent(const RunConfig& cfg, const Env& env) {
  AgentConfig acfg = cfg.agent;
  if (cfg.camera_delta_mode == "on") acfg.use_camera_delta = true;
  else if (cfg.camera_delta_mode == "off") acfg.use_camera_delta = false;
  return make_agent(acfg, env, cfg.seed);
}

// Deterministic-policy evaluation over fresh episodes with seeds derived from
// `seed`. Returns are sums of emitted rewards per episode.
inline EvalResult evaluate(Agent& agent, Env& env, int episodes, std::uint64_t seed) {
  std::vector<double> returns;
  Rng unused_rng(0);
  for (int ep = 0; ep < episodes; ++ep) {
    ObsWindow w;
    w.start(env.reset(split_seed(seed, 0xe7a1 + static_cast<std::uint64_t>(ep))));
    double total = 0.0;
    bool done = false;
    while (!done) {
      auto action = agent.act(agent.observe(w), /*deterministic=*/true, unused_rng);
      auto r = env.step(action);
      total += r.reward;
      done = r.done;
      w.advance(r);
    }
    returns.push_back(total);
  }
  EvalResult out;
  for (double r : returns) out.return_mean += r;
  out.return_mean /= returns.empty() ? 1.0 : static_cast<double>(returns.size());
  double var = 0.0;
  for (double r : returns) var += (r - out.return_mean) * (r - out.return_mean);
  out.return_std = returns.empty() ? 0.0 : std::sqrt(var / static_cast<double>(returns.size()));
  return out;
}

namespace detail_harness {

inline void write_csv_header(std::ofstream& f) {
  f << "env_step,episode,return_mean,return_std,critic_loss,actor_loss,alpha,entropy\n";
}

inline void write_csv_row(std::ofstream& f, const RunRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.env_step,
                row.episode, row.return_mean, row.return_std, row.critic_loss, row.actor_loss,
                row.alpha, row.entropy);
  f << buf;
  f.flush();
}

}  // namespace detail_harness

// ---- checkpoints ----

inline void save_checkpoint(const std::string& path, const RunConfig& cfg, Agent& agent) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  const char magic[8] = {'F', 'P', 'A', 'C', 'C', 'K', 'P', '1'};
  f.write(magic, 8);
  std::string cfg_text = serialize_config(cfg);
  std::uint32_t len = static_cast<std::uint32_t>(cfg_text.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  auto params = agent.named_params();
  std::uint32_t count = static_cast<std::uint32_t>(params.size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (auto* p : params) {
    std::uint32_t nlen = static_cast<std::uint32_t>(p->name.size());
    f.write(reinterpret_cast<const char*>(&nlen), 4);
    f.write(p->name.data(), nlen);
    std::uint32_t ndim = static_cast<std::uint32_t>(p->value.shape.size());
    f.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int d : p->value.shape) {
      std::int32_t dd = d;
      f.write(reinterpret_cast<const char*>(&dd), 4);
    }
    f.write(reinterpret_cast<const char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.data.size() * sizeof(real)));
  }
}

struct LoadedRun {
  RunConfig config;
  std::unique_ptr<Env> env;
  std::unique_ptr<Agent> agent;
};

inline LoadedRun load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "FPACCKP1")
    throw ConfigError("checkpoint: bad magic in " + path);
  std::uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  std::string cfg_text(len, '\0');
  f.read(cfg_text.data(), len);
  LoadedRun run;
  run.config = parse_config_text(cfg_text);
  run.env = make_env(run.config);
  run.env->reset(run.config.seed);
  run.agent = make_run_agent(run.config, *run.env);

  std::uint32_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 4);
  auto params = run.agent->named_params();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t nlen = 0;
    f.read(reinterpret_cast<char*>(&nlen), 4);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    std::uint32_t ndim = 0;
    f.read(reinterpret_cast<char*>(&ndim), 4);
    std::vector<int> shape(ndim);
    for (auto& d : shape) {
      std::int32_t dd = 0;
      f.read(reinterpret_cast<char*>(&dd), 4);
      d = dd;
    }
    Param<real>* target = nullptr;
    for (auto* p : params)
      if (p->name == name) target = p;
    if (!target) throw ConfigError("checkpoint: unknown parameter '" + name + "'");
    if (target->value.shape != shape)
      throw ConfigError("checkpoint: shape mismatch for '" + name + "'");
    f.read(reinterpret_cast<char*>(target->value.data.data()),
           static_cast<std::streamsize>(target->value.data.size() * sizeof(real)));
  }
  if (!f) throw ConfigError("checkpoint: truncated file " + path);
  return run;
}

// ---- training ----

// Random warmup, then one gradient update per emitted env step; periodic
// deterministic evaluation appended to train.csv. env_step counts raw physics
// steps, so it is invariant to the action repeat.
inline RunRecord train(const RunConfig& cfg) {
  validate_config(cfg);
  auto t_start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(cfg.output_dir);

  auto env = make_env(cfg);
  auto agent = make_run_agent(cfg, *env);
  Rng act_rng(split_seed(cfg.seed, 0xac7));
  Rng update_rng(split_seed(cfg.seed, 0x0bd));
  Rng warmup_rng(split_seed(cfg.seed, 0x3a2));

  RunRecord record;
  record.config = cfg;
  record.csv_path = cfg.output_dir + "/train.csv";
  record.checkpoint_path = cfg.output_dir + "/final.ckpt";
  std::ofstream csv(record.csv_path);
  if (!csv) throw std::runtime_error("train: cannot write " + record.csv_path);
  detail_harness::write_csv_header(csv);

  auto eval_env = make_env(cfg);
  int episode = 0;
  ObsWindow w;
  w.start(env->reset(split_seed(cfg.seed, 2000)));

  int raw_steps = 0;
  std::int64_t update_counter = 0;
  std::int64_t updates_done = 0;
  std::int64_t post_warmup_emitted = 0;
  int eval_round = 0;

  double acc_critic = 0.0, acc_actor = 0.0, acc_entropy = 0.0;
  std::int64_t acc_critic_n = 0, acc_actor_n = 0;

  auto abort_with_nan = [&](const UpdateDiagnostics& d) {
    save_checkpoint(cfg.output_dir + "/nan_abort.ckpt", cfg, *agent);
    std::ofstream report(cfg.output_dir + "/nan_report.txt");
    report << "non-finite loss at env_step " << raw_steps << "\n"
           << "critic_loss " << d.critic_loss << "\nactor_loss " << d.actor_loss << "\nalpha "
           << d.alpha << "\n";
    throw NumericalError("train: non-finite loss at env_step " + std::to_string(raw_steps));
  };

  while (raw_steps < cfg.total_env_steps) {
    std::vector<double> action;
    if (raw_steps < cfg.agent.sac.initial_random_steps) {
      action.resize(static_cast<std::size_t>(env->spec().action_dim));
      for (auto& a : action) a = warmup_rng.uniform(-1, 1);
    } else {
      action = agent->act(agent->observe(w), /*deterministic=*/false, act_rng);
    }

    ObsWindow before = w;
    auto r = env->step(action);
    raw_steps += cfg.action_repeat;
    w.advance(r);
    agent->remember(before, action, r.reward, w, r.terminal);

    if (raw_steps > cfg.agent.sac.initial_random_steps) {
      ++post_warmup_emitted;
      auto d = agent->update(update_counter++, update_rng);
      if (!d.skipped_small_buffer) {
        ++updates_done;
        if (!std::isfinite(d.critic_loss) ||
            (d.updated_actor && !std::isfinite(d.actor_loss)))
          abort_with_nan(d);
        acc_critic += d.critic_loss;
        ++acc_critic_n;
        if (d.updated_actor) {
          acc_actor += d.actor_loss;
          acc_entropy += d.entropy;
          ++acc_actor_n;
        }
      }
    }

    if (r.done) {
      ++episode;
      w.start(env->reset(split_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(episode))));
    }

    if (raw_steps % cfg.eval_interval == 0) {
      {
        ++eval_round;
        auto ev = evaluate(*agent, *eval_env, cfg.eval_episodes,
                           split_seed(cfg.seed, 0xe000 + static_cast<std::uint64_t>(eval_round)));
        RunRow row;
        row.env_step = raw_steps;
        row.episode = episode;
        row.return_mean = ev.return_mean;
        row.return_std = ev.return_std;
        row.critic_loss = acc_critic_n ? acc_critic / static_cast<double>(acc_critic_n) : 0.0;
        row.actor_loss = acc_actor_n ? acc_actor / static_cast<double>(acc_actor_n) : 0.0;
        row.alpha = agent->sac().alpha();
        row.entropy = acc_actor_n ? acc_entropy / static_cast<double>(acc_actor_n) : 0.0;
        record.rows.push_back(row);
        detail_harness::write_csv_row(csv, row);
        acc_critic = acc_actor = acc_entropy = 0.0;
        acc_critic_n = acc_actor_n = 0;
        if (cfg.early_stop_return && ev.return_mean >= *cfg.early_stop_return) break;
      }
    }
  }

  // the loop contract: exactly one update attempt per emitted step after warmup
  if (post_warmup_emitted !=
      static_cast<std::int64_t>((raw_steps - cfg.agent.sac.initial_random_steps) /
                                cfg.action_repeat))
    throw std::logic_error("train: update/step accounting mismatch");

  save_checkpoint(record.checkpoint_path, cfg, *agent);
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  std::ofstream meta(cfg.output_dir + "/run_meta.txt");
  meta << "commit = " << FPAC_GIT_COMMIT << "\n"
       << "seed = " << cfg.seed << "\n"
       << "wall_seconds = " << record.wall_seconds << "\n"
       << "updates = " << updates_done << "\n"
       << "episodes = " << episode << "\n"
       << "config:\n"
       << serialize_config(cfg);
  return record;
}

// Sequential seed sweep; per-seed runs in output_dir/seed<N>/ plus an
// aggregate CSV of cross-seed mean and standard deviation per eval step.
inline std::vector<RunRecord> sweep(const RunConfig& base, int n_seeds) {
  std::vector<RunRecord> records;
  for (int i = 0; i < n_seeds; ++i) {
    RunConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(i);
    cfg.output_dir = base.output_dir + "/seed" + std::to_string(cfg.seed);
    records.push_back(train(cfg));
  }
  std::filesystem::create_directories(base.output_dir);
  std::ofstream agg(base.output_dir + "/aggregate.csv");
  agg << "env_step,return_mean,return_std\n";
  if (!records.empty()) {
    std::size_t rows = records.front().rows.size();
    for (std::size_t r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (const auto& rec : records) mean += rec.rows[r].return_mean;
      mean /= static_cast<double>(records.size());
      double var = 0.0;
      for (const auto& rec : records)
        var += (rec.rows[r].return_mean - mean) * (rec.rows[r].return_mean - mean);
      double sd = std::sqrt(var / static_cast<double>(records.size()));
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", records.front().rows[r].env_step, mean,
                    sd);
      agg << buf;
    }
  }
  return records;
}

// ---- softmax benchmark ----

struct BenchResult {
  std::vector<int> batch_shape;
  int iters = 0;
  double full2d_mean_ms = 0.0;
  double full2d_std_ms = 0.0;
  double separable_mean_ms = 0.0;
  double separable_std_ms = 0.0;
  double speedup = 0.0;  // full2d time / separable time
};

// Wall-times the forward coordinate computation of both softmax variants on
// identical random inputs (monotonic clock around the forward pass only).
inline BenchResult bench_softmax(std::vector<int> batch_shape = {128, 32, 35, 35},
                                 int iters = 1000, int warmup = 100, std::uint64_t seed = 7) {
  using clock = std::chrono::steady_clock;
  kernels::tune_allocator();
  if (batch_shape.size() != 4) throw std::invalid_argument("bench: shape must be 4-d");
  Tensor<real> maps(batch_shape);
  Rng rng(seed);
  for (auto& v : maps.data) v = static_cast<real>(rng.uniform(-2, 2));
  const real beta = real(0.5);

  // correctness pre-pass on a small additive row+column map, where both
  // variants agree analytically
  {
    Tensor<real> probe({2, 3, 8, 8});
    Rng prng(3);
    for (int ch = 0; ch < 6; ++ch) {
      std::vector<real> u(8), w(8);
      for (auto& v : u) v = static_cast<real>(prng.uniform(-1, 1));
      for (auto& v : w) v = static_cast<real>(prng.uniform(-1, 1));
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          probe[static_cast<std::int64_t>(ch) * 64 + y * 8 + x] = u[static_cast<std::size_t>(x)] + w[static_cast<std::size_t>(y)];
    }
    Tensor<real> xs1, ys1, xs2, ys2, prob;
    std::vector<real> bx, by;
    kernels::separable_coords(probe, beta, xs1, ys1, bx, by);
    kernels::full2d_coords(probe, beta, prob, xs2, ys2);
    for (std::int64_t i = 0; i < xs1.numel(); ++i) {
      if (std::fabs(static_cast<double>(xs1[i] - xs2[i])) > 1e-4 ||
          std::fabs(static_cast<double>(ys1[i] - ys2[i])) > 1e-4)
        throw std::runtime_error("bench: separable/full2d disagree on separable input");
    }
  }

  Tensor<real> xs, ys, prob;
  std::vector<real> bx, by;
  auto run_full = [&]() { kernels::full2d_coords(maps, beta, prob, xs, ys); };
  auto run_sep = [&]() { kernels::separable_coords(maps, beta, xs, ys, bx, by); };

  for (int i = 0; i < warmup; ++i) {
    run_full();
    run_sep();
  }

  auto time_variant = [&](auto&& fn, double& mean_ms, double& std_ms) {
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(iters));
    for (int i = 0; i < iters; ++i) {
      auto t0 = clock::now();
      fn();
      auto t1 = clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    mean_ms = 0.0;
    for (double t : times) mean_ms += t;
    mean_ms /= static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean_ms) * (t - mean_ms);
    std_ms = std::sqrt(var / static_cast<double>(times.size()));
    for (auto v : xs.data)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("bench: non-finite output");
  };

  BenchResult res;
  res.batch_shape = batch_shape;
  res.iters = iters;
  time_variant(run_full, res.full2d_mean_ms, res.full2d_std_ms);
  time_variant(run_sep, res.separable_mean_ms, res.separable_std_ms);
  res.speedup = res.full2d_mean_ms / res.separable_mean_ms;
  return res;
}

// ---- keypoint overlay dumper ----

inline std::pair<int, int> marker_pixel(double nx, double ny, int width, int height) {
  int px = static_cast<int>(std::lround((nx + 1.0) / 2.0 * (width - 1)));
  int py = static_cast<int>(std::lround((ny + 1.0) / 2.0 * (height - 1)));
  return {px, py};
}

namespace detail_harness {

inline void draw_cross(Image& rgb, int px, int py, double r, double g, double b) {
  for (int d = -2; d <= 2; ++d) {
    int x = px + d, y = py + d;
    if (x >= 0 && x < rgb.width && py >= 0 && py < rgb.height) {
      rgb.at(0, py, x) = r;
      rgb.at(1, py, x) = g;
      rgb.at(2, py, x) = b;
    }
    if (px >= 0 && px < rgb.width && y >= 0 && y < rgb.height) {
      rgb.at(0, y, px) = r;
      rgb.at(1, y, px) = g;
      rgb.at(2, y, px) = b;
    }
  }
}

inline Image gray_to_rgb(const Image& gray) {
  Image rgb(3, gray.height, gray.width);
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) {
      double v = gray.at(0, y, x);
      rgb.at(0, y, x) = v;
      rgb.at(1, y, x) = v;
      rgb.at(2, y, x) = v;
    }
  return rgb;
}

}  // namespace detail_harness

struct VizOptions {
  int episodes = 1;
  int max_steps = 0;  // 0: full episodes
  bool dump_prob_maps = false;
};

// Rolls out the checkpointed policy and writes ep{N}_step{M}.ppm overlays
// with feature-point markers; optionally dumps per-channel location
// distributions (text + PGM).
inline std::vector<std::string> viz(const std::string& checkpoint_path,
                                    const std::string& out_dir, const VizOptions& opt) {
  auto run = load_checkpoint(checkpoint_path);
  AgentKind kind = run.agent->kind();
  if (kind != AgentKind::fpac && kind != AgentKind::keypoint_sac)
    throw ConfigError("viz: agent kind '" + to_string(kind) +
                      "' has no keypoints to draw; use an fpac or keypoint_sac checkpoint");
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> files;
  Rng rng(0);
  for (int ep = 0; ep < opt.episodes; ++ep) {
    ObsWindow w;
    w.start(run.env->reset(split_seed(run.config.seed, 0x71a + static_cast<std::uint64_t>(ep))));
    bool done = false;
    int step = 0;
    while (!done && (opt.max_steps == 0 || step < opt.max_steps)) {
      auto action = run.agent->act(run.agent->observe(w), true, rng);
      auto r = run.env->step(action);

      Image rgb = detail_harness::gray_to_rgb(r.frame);
      FeaturePointSet pts = kind == AgentKind::fpac ? run.agent->extract_points(r.frame)
                                                    : r.info.keypoints;
      for (const auto& p : pts.points) {
        auto [px, py] = marker_pixel(p.x, p.y, rgb.width, rgb.height);
        detail_harness::draw_cross(rgb, px, py, 1.0, 0.1, 0.1);
      }
      char name[64];
      std::snprintf(name, sizeof(name), "ep%d_step%d.ppm", ep, step);
      std::string path = out_dir + "/" + name;
      write_pnm(rgb, path);
      files.push_back(path);

      if (opt.dump_prob_maps && kind == AgentKind::fpac) {
        FeatureMaps probs = run.agent->probability_maps(r.frame);
        char pname[64];
        std::snprintf(pname, sizeof(pname), "ep%d_step%d_probs.txt", ep, step);
        std::ofstream pf(out_dir + "/" + pname);
        for (int k = 0; k < probs.channels; ++k) {
          for (int i = 0; i < probs.height * probs.width; ++i) {
            if (i) pf << ' ';
            char num[32];
            std::snprintf(num, sizeof(num), "%.9g", probs.channel(k)[i]);
            pf << num;
          }
          pf << '\n';
        }
        files.push_back(out_dir + "/" + pname);
        // grayscale per-channel view, normalized by the peak
        for (int k = 0; k < probs.channels; ++k) {
          double peak = 0.0;
          for (int i = 0; i < probs.height * probs.width; ++i)
            peak = std::max(peak, probs.channel(k)[i]);
          Image img(1, probs.height, probs.width);
          for (int i = 0; i < probs.height * probs.width; ++i)
            img.values[static_cast<std::size_t>(i)] =
                peak > 0 ? probs.channel(k)[i] / peak : 0.0;
          char iname[64];
          std::snprintf(iname, sizeof(iname), "ep%d_step%d_ch%d.pgm", ep, step, k);
          write_pnm(img, out_dir + "/" + iname);
          files.push_back(out_dir + "/" + iname);
        }
      }

      w.advance(r);
      done = r.done;
      ++step;
    }
  }
  return files;
}

// reads a prob-map dump back (one channel per line)
inline std::vector<std::vector<double>> load_prob_dump(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_prob_dump: cannot open " + path);
  std::vector<std::vector<double>> out;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream in(line);
    std::vector<double> row;
    double v;
    while (in >> v) row.push_back(v);
    if (!row.empty()) out.push_back(std::move(row));
  }
  return out;
}

}  // namespace fpac

#endif  // FPAC_HARNESS_HPP
