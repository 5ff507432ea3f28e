#pragma once

// Flat key-value config files with an explicit version key. Unknown keys are
// rejected so a typo cannot silently change an experiment.

#include <map>
#include <set>
#include <string>

#include "shapeseg/augmentation.hpp"
#include "shapeseg/network.hpp"
#include "shapeseg/phantom.hpp"
#include "shapeseg/util.hpp"

namespace shapeseg {

class KvConfig {
 public:
  static KvConfig parse(const std::string& text) {
    KvConfig cfg;
    int line_no = 0;
    for (const std::string& raw : split(text, '\n')) {
      ++line_no;
      std::string line = raw;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
      if (cfg.values_.count(key))
        throw ConfigError("config: duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KvConfig parse_file(const std::filesystem::path& path) {
    return parse(read_file(path));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not a number: " + it->second);
    }
  }

  long long get_int(const std::string& key, long long fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not an integer: " + it->second);
    }
  }

  // Every key in the file must have been consumed by a getter.
  void reject_unknown() const {
    for (const auto& [key, value] : values_) {
      if (!used_.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------

enum class Setup { SMu0, S, R, RS, RSAps };

inline Setup parse_setup(const std::string& s) {
  if (s == "S_mu0") return Setup::SMu0;
  if (s == "S") return Setup::S;
  if (s == "R") return Setup::R;
  if (s == "RS") return Setup::RS;
  if (s == "RS-Aps") return Setup::RSAps;
  throw ConfigError("config: unknown setup '" + s + "' (expected S_mu0, S, R, RS, RS-Aps)");
}

inline std::string setup_name(Setup s) {
  switch (s) {
    case Setup::SMu0: return "S_mu0";
    case Setup::S: return "S";
    case Setup::R: return "R";
    case Setup::RS: return "RS";
    case Setup::RSAps: return "RS-Aps";
  }
  return "?";
}

struct ExperimentConfig {
  Setup setup = Setup::RSAps;
  GridSpec grid{64, 64, 2.0};
  NetworkConfig network;
  TrainConfig train;
  AugmentRanges aug;
  int folds = 5;
  std::uint64_t seed = 1;

  // Setup masking of the loss weights (S_mu0: g1=g2=0, mu=0; S: g1=g2=0;
  // R: g3=0; RS / RS-Aps: all active).
  LossWeights effective_weights() const {
    LossWeights w = train.weights;
    switch (setup) {
      case Setup::SMu0:
        w.gamma1 = 0.0;
        w.gamma2 = 0.0;
        w.mu = 0.0;
        break;
      case Setup::S:
        w.gamma1 = 0.0;
        w.gamma2 = 0.0;
        break;
      case Setup::R:
        w.gamma3 = 0.0;
        break;
      case Setup::RS:
      case Setup::RSAps:
        break;
    }
    return w;
  }

  bool pose_shape_augmentation() const { return setup == Setup::RSAps; }
  bool map_route() const { return setup != Setup::R; }
  bool contour_route() const {
    return setup == Setup::R || setup == Setup::RS || setup == Setup::RSAps;
  }

  void validate() const {
    grid.validate();
    network.validate();
    train.validate();
    aug.validate();
    train.weights.validate();
    if (folds < 2) throw ConfigError("ExperimentConfig: folds must be >= 2");
    if (network.input_size != grid.height || network.input_size != grid.width)
      throw ConfigError("ExperimentConfig: network input_size must match the grid");
  }
};

inline ExperimentConfig experiment_config_from_kv(KvConfig& kv) {
  if (kv.get_int("version", -1) != 1)
    throw ConfigError("config: version key missing or unsupported (expected version = 1)");
  ExperimentConfig cfg;
  cfg.setup = parse_setup(kv.get_string("setup", "RS-Aps"));
  cfg.folds = static_cast<int>(kv.get_int("folds", 5));
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  cfg.grid.height = static_cast<int>(kv.get_int("grid_height", 64));
  cfg.grid.width = static_cast<int>(kv.get_int("grid_width", 64));
  cfg.grid.pixel_size = kv.get_double("pixel_size", 2.0);
  cfg.network.input_size = cfg.grid.height;
  cfg.network.levels = static_cast<int>(kv.get_int("levels", 3));
  cfg.network.base_features = static_cast<int>(kv.get_int("base_features", 8));
  cfg.network.shape_modes = static_cast<int>(kv.get_int("shape_modes", 12));
  cfg.network.map_channels = static_cast<int>(kv.get_int("map_channels", 2));
  cfg.network.trunk_filter = static_cast<int>(kv.get_int("trunk_filter", 0));
  cfg.network.trunk_features = static_cast<int>(kv.get_int("trunk_features", 0));
  cfg.network.head_hidden = static_cast<int>(kv.get_int("head_hidden", 32));
  cfg.train.epochs = static_cast<int>(kv.get_int("epochs", 300));
  cfg.train.learning_rate = kv.get_double("learning_rate", 2e-3);
  cfg.train.batch_size = static_cast<int>(kv.get_int("batch_size", 32));
  cfg.train.weights.gamma1 = kv.get_double("gamma1", 1.0);
  cfg.train.weights.gamma2 = kv.get_double("gamma2", 10.0);
  cfg.train.weights.gamma3 = kv.get_double("gamma3", 100.0);
  cfg.train.weights.mu = kv.get_double("mu", 0.1);
  cfg.train.weights.alpha = kv.get_double("alpha", 5.0);
  cfg.train.seed = cfg.seed;
  const double tr = kv.get_double("aug_translation", 40.0);
  const double rot = kv.get_double("aug_rotation", M_PI);
  const double coeff = kv.get_double("aug_coefficient", 1.0);
  cfg.aug.translation = {-tr, tr};
  cfg.aug.rotation = {-rot, rot};
  cfg.aug.coefficient = {-coeff, coeff};
  cfg.aug.noise_sigma = {kv.get_double("aug_noise_min", 0.0), kv.get_double("aug_noise_max", 0.1)};
  kv.reject_unknown();
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  KvConfig kv = KvConfig::parse_file(path);
  return experiment_config_from_kv(kv);
}

inline PhantomSpec phantom_spec_from_kv(KvConfig& kv) {
  if (kv.get_int("version", -1) != 1)
    throw ConfigError("phantom spec: version key missing or unsupported (expected version = 1)");
  PhantomSpec spec;
  spec.n_landmarks = static_cast<int>(kv.get_int("n_landmarks", 18));
  spec.slices_per_patient = static_cast<int>(kv.get_int("slices_per_patient", 4));
  spec.endo_radius = {kv.get_double("endo_radius_min", 14.0),
                      kv.get_double("endo_radius_max", 24.0)};
  spec.wall = {kv.get_double("wall_min", 6.0), kv.get_double("wall_max", 11.0)};
  spec.wall_var_max = kv.get_double("wall_var_max", 1.5);
  spec.ecc_max = kv.get_double("ecc_max", 0.12);
  spec.perturb_max = kv.get_double("perturb_max", 0.03);
  spec.intensity_cavity = kv.get_double("intensity_cavity", 0.85);
  spec.intensity_myo = kv.get_double("intensity_myo", 0.45);
  spec.intensity_background = kv.get_double("intensity_background", 0.15);
  spec.texture_noise = {kv.get_double("texture_noise_min", 0.0),
                        kv.get_double("texture_noise_max", 0.03)};
  spec.center_jitter = kv.get_double("center_jitter", 8.0);
  spec.theta = {kv.get_double("theta_min", -M_PI), kv.get_double("theta_max", M_PI)};
  spec.grid.height = static_cast<int>(kv.get_int("grid_height", 64));
  spec.grid.width = static_cast<int>(kv.get_int("grid_width", 64));
  spec.grid.pixel_size = kv.get_double("pixel_size", 2.0);
  kv.reject_unknown();
  spec.validate();
  return spec;
}

inline PhantomSpec load_phantom_spec(const std::filesystem::path& path) {
  KvConfig kv = KvConfig::parse_file(path);
  return phantom_spec_from_kv(kv);
}

}  // namespace shapeseg
