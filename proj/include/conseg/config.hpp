// conseg/config.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Flat key=value experiment configuration: file parsing, typed access with
// defaults, override merging, key validation against the known schema, and
// serialization of the resolved settings.

#ifndef CONSEG_CONFIG_HPP_
#define CONSEG_CONFIG_HPP_

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "conseg/blindspot.hpp"
#include "conseg/data.hpp"
#include "conseg/errors.hpp"
#include "conseg/model.hpp"
#include "conseg/trainer.hpp"

namespace conseg {

namespace detail {

inline std::string Trim(const std::string &s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// shortest exact decimal form so resolved configs reparse bit for bit
inline std::string FormatDouble(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace detail

// Ordered string map behind the `key = value` config format. Blank lines
// and lines starting with # are skipped; later assignments win.
class KeyValueConfig {
 public:
  static KeyValueConfig FromFile(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    KeyValueConfig kv;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      const std::string t = detail::Trim(line);
      if (t.empty() || t[0] == '#') continue;
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError(path + ":" + std::to_string(lineno) +
                          ": expected key=value, got '" + t + "'");
      kv.Set(detail::Trim(t.substr(0, eq)), detail::Trim(t.substr(eq + 1)));
    }
    return kv;
  }

  void Set(const std::string &key, const std::string &value) {
    if (key.empty()) throw ConfigError("config key must not be empty");
    values_[key] = value;
  }

  // parses one KEY=VALUE override as passed on the command line
  void SetLine(const std::string &line) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + line + "': expected KEY=VALUE");
    Set(detail::Trim(line.substr(0, eq)), detail::Trim(line.substr(eq + 1)));
  }

  bool Has(const std::string &key) const { return values_.count(key) > 0; }

  std::string GetString(const std::string &key,
                        const std::string &fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::int64_t GetInt(const std::string &key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const std::int64_t v = std::stoll(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception &) {
      throw ConfigError(key + ": expected an integer, got '" + it->second +
                        "'");
    }
  }

  std::uint64_t GetUint(const std::string &key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(it->second, &used);
      if (used != it->second.size() || it->second[0] == '-')
        throw std::invalid_argument(key);
      return v;
    } catch (const std::exception &) {
      throw ConfigError(key + ": expected a nonnegative integer, got '" +
                        it->second + "'");
    }
  }

  double GetDouble(const std::string &key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception &) {
      throw ConfigError(key + ": expected a number, got '" + it->second +
                        "'");
    }
  }

  bool GetBool(const std::string &key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + it->second +
                      "'");
  }

  std::vector<int> GetIntList(const std::string &key,
                              const std::vector<int> &fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    std::istringstream is(it->second);
    std::string item;
    while (std::getline(is, item, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoi(detail::Trim(item), &used));
        if (used != detail::Trim(item).size())
          throw std::invalid_argument(key);
      } catch (const std::exception &) {
        throw ConfigError(key + ": expected comma-separated integers, got '" +
                          it->second + "'");
      }
    }
    if (out.empty())
      throw ConfigError(key + ": expected a non-empty integer list");
    return out;
  }

  std::vector<double> GetDoubleList(const std::string &key,
                                    const std::vector<double> &fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::istringstream is(it->second);
    std::string item;
    while (std::getline(is, item, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(detail::Trim(item), &used));
        if (used != detail::Trim(item).size())
          throw std::invalid_argument(key);
      } catch (const std::exception &) {
        throw ConfigError(key + ": expected comma-separated numbers, got '" +
                          it->second + "'");
      }
    }
    if (out.empty())
      throw ConfigError(key + ": expected a non-empty number list");
    return out;
  }

  // deterministic, reparsable rendering of every stored pair
  std::string Serialize() const {
    std::ostringstream os;
    for (const auto &[k, v] : values_) os << k << "=" << v << "\n";
    return os.str();
  }

  const std::map<std::string, std::string> &values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Every key the tools understand. A config key outside this set is a typo
// and is rejected up front rather than silently ignored.
inline const std::set<std::string> &KnownConfigKeys() {
  static const std::set<std::string> keys = {
      "arch.input_size", "arch.input_channels", "arch.block_depths",
      "arch.num_classes", "arch.with_aux",
      "train.variant", "train.epochs", "train.batch_labelled",
      "train.batch_unlabelled", "train.lr_initial", "train.lr_decay_factor",
      "train.plateau_patience_epochs", "train.adam_beta1", "train.adam_beta2",
      "train.weight_decay_l2", "train.loss_w1", "train.loss_w2",
      "train.loss_w3", "train.seed",
      "perturb.noise_lo", "perturb.noise_hi", "perturb.drop_lo",
      "perturb.drop_hi", "perturb.seed",
      "synth.tile_size", "synth.num_labelled", "synth.num_unlabelled",
      "synth.tiles_per_pipe", "synth.target_minority_fraction",
      "synth.diameter_min", "synth.diameter_max", "synth.texture_noise_level",
      "synth.seed",
      "data.root", "data.subset_per_pipe", "data.subset_seed",
      "eval.checkpoint", "eval.variant", "eval.setup",
      "predict.checkpoint", "predict.images", "predict.masks",
      "blindspot.priors", "blindspot.error_rate", "blindspot.trials",
      "blindspot.seed",
  };
  return keys;
}

inline void RequireKnownKeys(const KeyValueConfig &kv) {
  for (const auto &[k, v] : kv.values())
    if (!KnownConfigKeys().count(k))
      throw ConfigError("unknown config key: " + k);
}

// ---------------------------------------------------------------------------
// Typed views. Each reader fills the struct from its namespace and runs the
// struct's own validation; each writer renders the resolved values back.

inline ArchConfig ArchFromConfig(const KeyValueConfig &kv) {
  ArchConfig cfg;
  cfg.input_size = static_cast<int>(kv.GetInt("arch.input_size",
                                              cfg.input_size));
  cfg.input_channels = static_cast<int>(kv.GetInt("arch.input_channels",
                                                  cfg.input_channels));
  cfg.block_depths = kv.GetIntList("arch.block_depths", cfg.block_depths);
  cfg.num_classes = static_cast<int>(kv.GetInt("arch.num_classes",
                                               cfg.num_classes));
  cfg.with_aux = kv.GetBool("arch.with_aux", cfg.with_aux);
  Validate(cfg);
  return cfg;
}

inline void WriteArchConfig(const ArchConfig &cfg, KeyValueConfig *kv) {
  kv->Set("arch.input_size", std::to_string(cfg.input_size));
  kv->Set("arch.input_channels", std::to_string(cfg.input_channels));
  std::string depths;
  for (std::size_t i = 0; i < cfg.block_depths.size(); ++i)
    depths += (i ? "," : "") + std::to_string(cfg.block_depths[i]);
  kv->Set("arch.block_depths", depths);
  kv->Set("arch.num_classes", std::to_string(cfg.num_classes));
  kv->Set("arch.with_aux", cfg.with_aux ? "true" : "false");
}

inline TrainConfig TrainFromConfig(const KeyValueConfig &kv) {
  TrainConfig cfg;
  cfg.variant = ParseVariant(kv.GetString("train.variant",
                                          VariantName(cfg.variant)));
  cfg.epochs = static_cast<int>(kv.GetInt("train.epochs", cfg.epochs));
  cfg.batch_labelled = static_cast<int>(kv.GetInt("train.batch_labelled",
                                                  cfg.batch_labelled));
  cfg.batch_unlabelled = static_cast<int>(kv.GetInt("train.batch_unlabelled",
                                                    cfg.batch_unlabelled));
  cfg.lr_initial = kv.GetDouble("train.lr_initial", cfg.lr_initial);
  cfg.lr_decay_factor = kv.GetDouble("train.lr_decay_factor",
                                     cfg.lr_decay_factor);
  cfg.plateau_patience_epochs = static_cast<int>(
      kv.GetInt("train.plateau_patience_epochs", cfg.plateau_patience_epochs));
  cfg.adam_beta1 = kv.GetDouble("train.adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = kv.GetDouble("train.adam_beta2", cfg.adam_beta2);
  cfg.weight_decay_l2 = kv.GetDouble("train.weight_decay_l2",
                                     cfg.weight_decay_l2);
  cfg.loss_weights.w1 = kv.GetDouble("train.loss_w1", cfg.loss_weights.w1);
  cfg.loss_weights.w2 = kv.GetDouble("train.loss_w2", cfg.loss_weights.w2);
  cfg.loss_weights.w3 = kv.GetDouble("train.loss_w3", cfg.loss_weights.w3);
  cfg.seed = kv.GetUint("train.seed", cfg.seed);
  cfg.perturb.noise_lo = kv.GetDouble("perturb.noise_lo",
                                      cfg.perturb.noise_lo);
  cfg.perturb.noise_hi = kv.GetDouble("perturb.noise_hi",
                                      cfg.perturb.noise_hi);
  cfg.perturb.drop_lo = kv.GetDouble("perturb.drop_lo", cfg.perturb.drop_lo);
  cfg.perturb.drop_hi = kv.GetDouble("perturb.drop_hi", cfg.perturb.drop_hi);
  cfg.perturb.seed = kv.GetUint("perturb.seed", cfg.perturb.seed);
  Validate(cfg);
  return cfg;
}

inline void WriteTrainConfig(const TrainConfig &cfg, KeyValueConfig *kv) {
  kv->Set("train.variant", VariantName(cfg.variant));
  kv->Set("train.epochs", std::to_string(cfg.epochs));
  kv->Set("train.batch_labelled", std::to_string(cfg.batch_labelled));
  kv->Set("train.batch_unlabelled", std::to_string(cfg.batch_unlabelled));
  kv->Set("train.lr_initial", detail::FormatDouble(cfg.lr_initial));
  kv->Set("train.lr_decay_factor", detail::FormatDouble(cfg.lr_decay_factor));
  kv->Set("train.plateau_patience_epochs",
          std::to_string(cfg.plateau_patience_epochs));
  kv->Set("train.adam_beta1", detail::FormatDouble(cfg.adam_beta1));
  kv->Set("train.adam_beta2", detail::FormatDouble(cfg.adam_beta2));
  kv->Set("train.weight_decay_l2",
          detail::FormatDouble(cfg.weight_decay_l2));
  kv->Set("train.loss_w1", detail::FormatDouble(cfg.loss_weights.w1));
  kv->Set("train.loss_w2", detail::FormatDouble(cfg.loss_weights.w2));
  kv->Set("train.loss_w3", detail::FormatDouble(cfg.loss_weights.w3));
  kv->Set("train.seed", std::to_string(cfg.seed));
  kv->Set("perturb.noise_lo", detail::FormatDouble(cfg.perturb.noise_lo));
  kv->Set("perturb.noise_hi", detail::FormatDouble(cfg.perturb.noise_hi));
  kv->Set("perturb.drop_lo", detail::FormatDouble(cfg.perturb.drop_lo));
  kv->Set("perturb.drop_hi", detail::FormatDouble(cfg.perturb.drop_hi));
  kv->Set("perturb.seed", std::to_string(cfg.perturb.seed));
}

inline SynthConfig SynthFromConfig(const KeyValueConfig &kv) {
  SynthConfig cfg;
  cfg.tile_size = static_cast<int>(kv.GetInt("synth.tile_size",
                                             cfg.tile_size));
  cfg.num_labelled = static_cast<int>(kv.GetInt("synth.num_labelled",
                                                cfg.num_labelled));
  cfg.num_unlabelled = static_cast<int>(kv.GetInt("synth.num_unlabelled",
                                                  cfg.num_unlabelled));
  cfg.tiles_per_pipe = static_cast<int>(kv.GetInt("synth.tiles_per_pipe",
                                                  cfg.tiles_per_pipe));
  cfg.target_minority_fraction = kv.GetDouble(
      "synth.target_minority_fraction", cfg.target_minority_fraction);
  cfg.diameter_min = kv.GetDouble("synth.diameter_min", cfg.diameter_min);
  cfg.diameter_max = kv.GetDouble("synth.diameter_max", cfg.diameter_max);
  cfg.texture_noise_level = kv.GetDouble("synth.texture_noise_level",
                                         cfg.texture_noise_level);
  cfg.seed = kv.GetUint("synth.seed", cfg.seed);
  Validate(cfg);
  return cfg;
}

inline void WriteSynthConfig(const SynthConfig &cfg, KeyValueConfig *kv) {
  kv->Set("synth.tile_size", std::to_string(cfg.tile_size));
  kv->Set("synth.num_labelled", std::to_string(cfg.num_labelled));
  kv->Set("synth.num_unlabelled", std::to_string(cfg.num_unlabelled));
  kv->Set("synth.tiles_per_pipe", std::to_string(cfg.tiles_per_pipe));
  kv->Set("synth.target_minority_fraction",
          detail::FormatDouble(cfg.target_minority_fraction));
  kv->Set("synth.diameter_min", detail::FormatDouble(cfg.diameter_min));
  kv->Set("synth.diameter_max", detail::FormatDouble(cfg.diameter_max));
  kv->Set("synth.texture_noise_level",
          detail::FormatDouble(cfg.texture_noise_level));
  kv->Set("synth.seed", std::to_string(cfg.seed));
}

// Dataset location plus the per-pipe training subset rule. A subset size of
// zero means the whole labelled set trains and nothing is held out.
struct DataOptions {
  std::string root;
  int subset_per_pipe = 0;
  std::uint64_t subset_seed = 0;
};

inline DataOptions DataFromConfig(const KeyValueConfig &kv) {
  DataOptions opt;
  opt.root = kv.GetString("data.root", "");
  opt.subset_per_pipe = static_cast<int>(
      kv.GetInt("data.subset_per_pipe", opt.subset_per_pipe));
  opt.subset_seed = kv.GetUint("data.subset_seed", opt.subset_seed);
  if (opt.subset_per_pipe < 0)
    throw ConfigError("data.subset_per_pipe: must be >= 0");
  return opt;
}

inline void WriteDataOptions(const DataOptions &opt, KeyValueConfig *kv) {
  kv->Set("data.root", opt.root);
  kv->Set("data.subset_per_pipe", std::to_string(opt.subset_per_pipe));
  kv->Set("data.subset_seed", std::to_string(opt.subset_seed));
}

struct BlindspotOptions {
  BlindSpotModel model;
  std::uint64_t trials = 1000000;
  std::uint64_t seed = 0;
};

inline BlindspotOptions BlindspotFromConfig(const KeyValueConfig &kv) {
  BlindspotOptions opt;
  opt.model.class_priors = kv.GetDoubleList("blindspot.priors",
                                            {0.362, 0.638});
  opt.model.num_classes = static_cast<int>(opt.model.class_priors.size());
  opt.model.error_rate = kv.GetDouble("blindspot.error_rate", 0.2);
  opt.trials = kv.GetUint("blindspot.trials", opt.trials);
  opt.seed = kv.GetUint("blindspot.seed", opt.seed);
  Validate(opt.model);
  return opt;
}

inline void WriteBlindspotOptions(const BlindspotOptions &opt,
                                  KeyValueConfig *kv) {
  std::string priors;
  for (std::size_t i = 0; i < opt.model.class_priors.size(); ++i)
    priors += (i ? "," : "") +
              detail::FormatDouble(opt.model.class_priors[i]);
  kv->Set("blindspot.priors", priors);
  kv->Set("blindspot.error_rate",
          detail::FormatDouble(opt.model.error_rate));
  kv->Set("blindspot.trials", std::to_string(opt.trials));
  kv->Set("blindspot.seed", std::to_string(opt.seed));
}

}  // namespace conseg

#endif  // CONSEG_CONFIG_HPP_
