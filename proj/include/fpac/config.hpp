#ifndef FPAC_CONFIG_HPP
#define FPAC_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fpac/agents.hpp"

namespace fpac {

// configuration / CLI usage error; maps to exit code 2
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// numerical failure (NaN) during training; maps to exit code 3
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string env_name = "point_reacher_dense";
  AgentConfig agent;
  int total_env_steps = 60000;  // raw physics steps
  int eval_interval = 2500;     // raw physics steps between evaluations
  int eval_episodes = 10;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/out";
  int observation_size = 48;
  int frame_channels = 1;
  int action_repeat = 4;
  int episode_length = 1000;
  std::string camera_delta_mode = "auto";  // auto | on | off
  // optional stopping rule: end the run after an eval row reaches this return
  std::optional<double> early_stop_return;
};

namespace detail_cfg {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace detail_cfg

// Apply one key=value pair; unknown keys are a hard error.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail_cfg::to_bool;
  using detail_cfg::to_double;
  using detail_cfg::to_int;
  auto& a = cfg.agent;
  if (key == "env") cfg.env_name = value;
  else if (key == "agent") a.kind = agent_kind_from_string(value);
  else if (key == "total_env_steps") cfg.total_env_steps = to_int(key, value);
  else if (key == "eval_interval") cfg.eval_interval = to_int(key, value);
  else if (key == "evaluation_episodes") cfg.eval_episodes = to_int(key, value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, value));
  else if (key == "output_dir") cfg.output_dir = value;
  else if (key == "observation_size") cfg.observation_size = to_int(key, value);
  else if (key == "frame_channels") cfg.frame_channels = to_int(key, value);
  else if (key == "action_repeat") cfg.action_repeat = to_int(key, value);
  else if (key == "episode_length") cfg.episode_length = to_int(key, value);
  else if (key == "replay_buffer_capacity") a.sac.replay_capacity = to_int(key, value);
  else if (key == "batch_size") a.sac.batch_size = to_int(key, value);
  else if (key == "learning_rate") a.sac.learning_rate = to_double(key, value);
  else if (key == "discount_factor") a.sac.discount = to_double(key, value);
  else if (key == "initial_random_steps") a.sac.initial_random_steps = to_int(key, value);
  else if (key == "initial_temperature") a.sac.initial_temperature = to_double(key, value);
  else if (key == "target_update_rate") a.sac.target_update_rate = to_double(key, value);
  else if (key == "target_update_frequency") a.sac.target_update_frequency = to_int(key, value);
  else if (key == "actor_update_frequency") a.sac.actor_update_frequency = to_int(key, value);
  else if (key == "target_entropy") a.sac.target_entropy = to_double(key, value);
  else if (key == "mlp_hidden_layers") a.sac.mlp_hidden_layers = to_int(key, value);
  else if (key == "mlp_hidden_units") a.sac.mlp_hidden_units = to_int(key, value);
  else if (key == "twin_critics") a.sac.twin_critics = to_bool(key, value);
  else if (key == "number_of_feature_points") a.feature_points = to_int(key, value);
  else if (key == "feature_point_temperature") a.extractor.temperature = to_double(key, value);
  else if (key == "softmax_mode") {
    if (value == "separable") a.extractor.mode = SoftmaxMode::separable;
    else if (value == "full2d") a.extractor.mode = SoftmaxMode::full2d;
    else throw ConfigError("config: softmax_mode must be 'separable' or 'full2d', got '" + value + "'");
  } else if (key == "relative_keypoints") a.relative = to_bool(key, value);
  else if (key == "use_scalar_feature") a.extractor.use_scalar_feature = to_bool(key, value);
  else if (key == "use_velocity") a.extractor.use_velocity = to_bool(key, value);
  else if (key == "velocity_includes_scalar")
    a.extractor.velocity_includes_scalar = to_bool(key, value);
  else if (key == "use_camera_delta") {
    if (value != "auto" && value != "on" && value != "off")
      throw ConfigError("config: use_camera_delta must be auto/on/off, got '" + value + "'");
    cfg.camera_delta_mode = value;
  } else if (key == "encoder_arch") {
    if (value == "toy") a.encoder_toy = true;
    else if (value == "standard") a.encoder_toy = false;
    else throw ConfigError("config: encoder_arch must be 'toy' or 'standard', got '" + value + "'");
  } else if (key == "pixel_latent_dim") a.pixel_latent_dim = to_int(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline void validate_config(const RunConfig& cfg) {
  const auto& a = cfg.agent;
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (!(a.extractor.temperature > 0.0)) fail("feature_point_temperature must be > 0");
  if (a.sac.discount < 0.0 || a.sac.discount > 1.0) fail("discount_factor must be in [0, 1]");
  if (!(a.sac.target_update_rate > 0.0) || a.sac.target_update_rate > 1.0)
    fail("target_update_rate must be in (0, 1]");
  if (a.sac.target_update_frequency < 1) fail("target_update_frequency must be >= 1");
  if (a.sac.actor_update_frequency < 1) fail("actor_update_frequency must be >= 1");
  if (a.sac.batch_size < 1) fail("batch_size must be >= 1");
  if (a.sac.replay_capacity < 1) fail("replay_buffer_capacity must be >= 1");
  if (!(a.sac.learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (a.sac.mlp_hidden_layers < 1) fail("mlp_hidden_layers must be >= 1");
  if (a.sac.mlp_hidden_units < 1) fail("mlp_hidden_units must be >= 1");
  if (a.feature_points < 1) fail("number_of_feature_points must be >= 1");
  if (cfg.total_env_steps < a.sac.initial_random_steps)
    fail("total_env_steps must be >= initial_random_steps");
  if (cfg.eval_interval < 1) fail("eval_interval must be >= 1");
  if (cfg.eval_episodes < 1) fail("evaluation_episodes must be >= 1");
  if (cfg.action_repeat < 1) fail("action_repeat must be >= 1");
  if (cfg.episode_length % cfg.action_repeat != 0)
    fail("episode_length must be divisible by action_repeat");
  if (cfg.eval_interval % cfg.action_repeat != 0)
    fail("eval_interval must be divisible by action_repeat");
  if (cfg.total_env_steps % cfg.action_repeat != 0)
    fail("total_env_steps must be divisible by action_repeat");
  if (a.sac.initial_random_steps % cfg.action_repeat != 0)
    fail("initial_random_steps must be divisible by action_repeat");
  if (cfg.observation_size < 8) fail("observation_size too small");
  bool known = false;
  for (const auto& n : Env::names()) known = known || n == cfg.env_name;
  if (!known) fail("unknown env '" + cfg.env_name + "'");
}

inline void apply_config_line(RunConfig& cfg, const std::string& raw_line) {
  std::string line = raw_line;
  auto hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = detail_cfg::trim(line);
  if (line.empty()) return;
  auto eq = line.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: malformed line (expected key = value): '" + line + "'");
  std::string key = detail_cfg::trim(line.substr(0, eq));
  std::string value = detail_cfg::trim(line.substr(eq + 1));
  if (key.empty() || value.empty())
    throw ConfigError("config: malformed line (expected key = value): '" + line + "'");
  apply_config_key(cfg, key, value);
}

// UTF-8 key-value config file; '#' starts a comment. All defaults follow the
// shipped hyperparameter set.
inline RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open file '" + path + "'");
  RunConfig cfg;
  std::string line;
  while (std::getline(f, line)) apply_config_line(cfg, line);
  validate_config(cfg);
  return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
  const auto& a = cfg.agent;
  std::ostringstream out;
  out << "env = " << cfg.env_name << "\n";
  out << "agent = " << to_string(a.kind) << "\n";
  out << "total_env_steps = " << cfg.total_env_steps << "\n";
  out << "eval_interval = " << cfg.eval_interval << "\n";
  out << "evaluation_episodes = " << cfg.eval_episodes << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "output_dir = " << cfg.output_dir << "\n";
  out << "observation_size = " << cfg.observation_size << "\n";
  out << "frame_channels = " << cfg.frame_channels << "\n";
  out << "action_repeat = " << cfg.action_repeat << "\n";
  out << "episode_length = " << cfg.episode_length << "\n";
  out << "replay_buffer_capacity = " << a.sac.replay_capacity << "\n";
  out << "batch_size = " << a.sac.batch_size << "\n";
  out << "learning_rate = " << a.sac.learning_rate << "\n";
  out << "discount_factor = " << a.sac.discount << "\n";
  out << "initial_random_steps = " << a.sac.initial_random_steps << "\n";
  out << "initial_temperature = " << a.sac.initial_temperature << "\n";
  out << "target_update_rate = " << a.sac.target_update_rate << "\n";
  out << "target_update_frequency = " << a.sac.target_update_frequency << "\n";
  out << "actor_update_frequency = " << a.sac.actor_update_frequency << "\n";
  if (a.sac.target_entropy) out << "target_entropy = " << *a.sac.target_entropy << "\n";
  out << "mlp_hidden_layers = " << a.sac.mlp_hidden_layers << "\n";
  out << "mlp_hidden_units = " << a.sac.mlp_hidden_units << "\n";
  out << "twin_critics = " << (a.sac.twin_critics ? "true" : "false") << "\n";
  out << "number_of_feature_points = " << a.feature_points << "\n";
  out << "feature_point_temperature = " << a.extractor.temperature << "\n";
  out << "softmax_mode = "
      << (a.extractor.mode == SoftmaxMode::separable ? "separable" : "full2d") << "\n";
  if (a.relative) out << "relative_keypoints = " << (*a.relative ? "true" : "false") << "\n";
  out << "use_scalar_feature = " << (a.extractor.use_scalar_feature ? "true" : "false") << "\n";
  out << "use_velocity = " << (a.extractor.use_velocity ? "true" : "false") << "\n";
  out << "velocity_includes_scalar = "
      << (a.extractor.velocity_includes_scalar ? "true" : "false") << "\n";
  out << "use_camera_delta = " << cfg.camera_delta_mode << "\n";
  out << "encoder_arch = " << (a.encoder_toy ? "toy" : "standard") << "\n";
  out << "pixel_latent_dim = " << a.pixel_latent_dim << "\n";
  if (cfg.early_stop_return) out << "early_stop_return = " << *cfg.early_stop_return << "\n";
  return out.str();
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) apply_config_line(cfg, line);
  validate_config(cfg);
  return cfg;
}

}  // namespace fpac

#endif  // FPAC_CONFIG_HPP
