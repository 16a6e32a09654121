// tests/test_config.cpp

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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "conseg/config.hpp"
#include "conseg/errors.hpp"

using Catch::Matchers::ContainsSubstring;
using conseg::ArchFromConfig;
using conseg::BlindspotFromConfig;
using conseg::ConfigError;
using conseg::DataFromConfig;
using conseg::KeyValueConfig;
using conseg::RequireKnownKeys;
using conseg::SynthFromConfig;
using conseg::TrainFromConfig;
using conseg::Variant;
using conseg::WriteArchConfig;
using conseg::WriteTrainConfig;
using conseg::detail::FormatDouble;

namespace {

// temporary directory that cleans itself up when the test case ends
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("conseg_cfg_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  static int &counter() {
    static int n = 0;
    return n;
  }
  std::string File(const std::string &name, const std::string &content) {
    const std::string p = (path / name).string();
    std::ofstream f(p);
    f << content;
    return p;
  }
};

}  // namespace

TEST_CASE("config file parsing handles comments blanks and spaces", "[config]") {
  TempDir dir;
  const std::string p = dir.File("a.cfg",
                                 "# leading comment\n"
                                 "\n"
                                 "train.epochs = 40\n"
                                 "  data.root=  /some/where \n"
                                 "train.epochs=41\n");
  KeyValueConfig kv = KeyValueConfig::FromFile(p);
  REQUIRE(kv.Has("train.epochs"));
  REQUIRE(kv.GetInt("train.epochs", 0) == 41);  // later assignment wins
  REQUIRE(kv.GetString("data.root", "") == "/some/where");
  REQUIRE_FALSE(kv.Has("absent.key"));
}

TEST_CASE("config file errors carry the file name and line number", "[config]") {
  TempDir dir;
  const std::string p = dir.File("bad.cfg", "train.epochs=3\nnonsense line\n");
  REQUIRE_THROWS_MATCHES(KeyValueConfig::FromFile(p), ConfigError,
                         Catch::Matchers::MessageMatches(
                             ContainsSubstring("bad.cfg:2") &&
                             ContainsSubstring("expected key=value")));
  REQUIRE_THROWS_AS(KeyValueConfig::FromFile((dir.path / "no.cfg").string()),
                    ConfigError);
}

TEST_CASE("command line overrides replace file values", "[config]") {
  KeyValueConfig kv;
  kv.Set("train.epochs", "10");
  kv.SetLine("train.epochs=99");
  kv.SetLine("data.root = spaced/path");
  REQUIRE(kv.GetInt("train.epochs", 0) == 99);
  REQUIRE(kv.GetString("data.root", "") == "spaced/path");
  REQUIRE_THROWS_MATCHES(kv.SetLine("no-equals-sign"), ConfigError,
                         Catch::Matchers::MessageMatches(
                             ContainsSubstring("expected KEY=VALUE")));
  REQUIRE_THROWS_AS(kv.SetLine("=value-only"), ConfigError);
}

TEST_CASE("typed getters fall back and reject malformed values", "[config]") {
  KeyValueConfig kv;
  kv.Set("i", "12");
  kv.Set("u", "7");
  kv.Set("neg", "-3");
  kv.Set("d", "0.25");
  kv.Set("b1", "true");
  kv.Set("b0", "0");
  kv.Set("junk", "12abc");
  kv.Set("ints", "4, 8,16");
  kv.Set("doubles", "0.5,1.5");

  REQUIRE(kv.GetInt("i", 0) == 12);
  REQUIRE(kv.GetInt("missing", -1) == -1);
  REQUIRE(kv.GetUint("u", 0) == 7);
  REQUIRE(kv.GetDouble("d", 0.0) == 0.25);
  REQUIRE(kv.GetBool("b1", false));
  REQUIRE_FALSE(kv.GetBool("b0", true));
  REQUIRE(kv.GetIntList("ints", {}) == std::vector<int>{4, 8, 16});
  REQUIRE(kv.GetDoubleList("doubles", {}) == std::vector<double>{0.5, 1.5});
  REQUIRE(kv.GetIntList("missing", {1, 2}) == std::vector<int>{1, 2});

  REQUIRE_THROWS_MATCHES(kv.GetInt("junk", 0), ConfigError,
                         Catch::Matchers::MessageMatches(
                             ContainsSubstring("junk") &&
                             ContainsSubstring("12abc")));
  REQUIRE_THROWS_AS(kv.GetUint("neg", 0), ConfigError);
  REQUIRE_THROWS_AS(kv.GetDouble("junk", 0.0), ConfigError);
  REQUIRE_THROWS_AS(kv.GetBool("i", false), ConfigError);
  REQUIRE_THROWS_AS(kv.GetIntList("junk", {}), ConfigError);
  REQUIRE_THROWS_AS(kv.GetDoubleList("junk", {}), ConfigError);
}

TEST_CASE("unknown keys are rejected by name", "[config]") {
  KeyValueConfig kv;
  kv.Set("train.epochs", "5");
  REQUIRE_NOTHROW(RequireKnownKeys(kv));
  kv.Set("train.typo_key", "5");
  REQUIRE_THROWS_MATCHES(RequireKnownKeys(kv), ConfigError,
                         Catch::Matchers::MessageMatches(
                             ContainsSubstring("train.typo_key")));
}

TEST_CASE("serialization is sorted and reparses to the same map", "[config]") {
  KeyValueConfig kv;
  kv.Set("b.key", "2");
  kv.Set("a.key", "1");
  const std::string text = kv.Serialize();
  REQUIRE(text == "a.key=1\nb.key=2\n");

  TempDir dir;
  KeyValueConfig back =
      KeyValueConfig::FromFile(dir.File("round.cfg", text));
  REQUIRE(back.values() == kv.values());
}

TEST_CASE("double formatting round trips exactly", "[config]") {
  const double cases[] = {0.2,    1e-5,       0.362,         1.0 / 3.0,
                          1e-300, 123456.789, 0.99999999999, 0.0};
  for (double v : cases) {
    const std::string s = FormatDouble(v);
    REQUIRE(std::stod(s) == v);
  }
  // common decimals keep their short form rather than 17 digits
  REQUIRE(FormatDouble(0.2) == "0.2");
  REQUIRE(FormatDouble(0.001) == "0.001");
}

TEST_CASE("train config reads defaults and serialized values identically", "[config]") {
  KeyValueConfig kv;
  const conseg::TrainConfig def = TrainFromConfig(kv);
  REQUIRE(def.variant == Variant::kFull);
  REQUIRE(def.epochs == 500);
  REQUIRE(def.lr_initial == 1e-3);
  REQUIRE(def.plateau_patience_epochs == 25);

  conseg::TrainConfig cfg;
  cfg.variant = Variant::kCons;
  cfg.epochs = 77;
  cfg.batch_labelled = 3;
  cfg.batch_unlabelled = 5;
  cfg.lr_initial = 0.002;
  cfg.lr_decay_factor = 0.5;
  cfg.plateau_patience_epochs = 9;
  cfg.adam_beta1 = 0.85;
  cfg.adam_beta2 = 0.995;
  cfg.weight_decay_l2 = 3e-6;
  cfg.loss_weights.w1 = 0.7;
  cfg.loss_weights.w2 = 0.3;
  cfg.loss_weights.w3 = 0.1;
  cfg.seed = 42;
  cfg.perturb.noise_lo = -0.15;
  cfg.perturb.noise_hi = 0.15;
  cfg.perturb.drop_lo = 0.2;
  cfg.perturb.drop_hi = 0.4;
  cfg.perturb.seed = 11;

  KeyValueConfig out;
  WriteTrainConfig(cfg, &out);
  const conseg::TrainConfig back = TrainFromConfig(out);
  REQUIRE(back.variant == cfg.variant);
  REQUIRE(back.epochs == cfg.epochs);
  REQUIRE(back.batch_labelled == cfg.batch_labelled);
  REQUIRE(back.batch_unlabelled == cfg.batch_unlabelled);
  REQUIRE(back.lr_initial == cfg.lr_initial);
  REQUIRE(back.lr_decay_factor == cfg.lr_decay_factor);
  REQUIRE(back.plateau_patience_epochs == cfg.plateau_patience_epochs);
  REQUIRE(back.adam_beta1 == cfg.adam_beta1);
  REQUIRE(back.adam_beta2 == cfg.adam_beta2);
  REQUIRE(back.weight_decay_l2 == cfg.weight_decay_l2);
  REQUIRE(back.loss_weights.w1 == cfg.loss_weights.w1);
  REQUIRE(back.loss_weights.w2 == cfg.loss_weights.w2);
  REQUIRE(back.loss_weights.w3 == cfg.loss_weights.w3);
  REQUIRE(back.seed == cfg.seed);
  REQUIRE(back.perturb.noise_lo == cfg.perturb.noise_lo);
  REQUIRE(back.perturb.noise_hi == cfg.perturb.noise_hi);
  REQUIRE(back.perturb.drop_lo == cfg.perturb.drop_lo);
  REQUIRE(back.perturb.drop_hi == cfg.perturb.drop_hi);
  REQUIRE(back.perturb.seed == cfg.perturb.seed);
}

TEST_CASE("typed readers run the struct validation", "[config]") {
  KeyValueConfig kv;
  kv.Set("train.lr_decay_factor", "1.0");
  REQUIRE_THROWS_AS(TrainFromConfig(kv), ConfigError);

  KeyValueConfig kv2;
  kv2.Set("train.variant", "FULL");  // names are lower case
  REQUIRE_THROWS_AS(TrainFromConfig(kv2), ConfigError);

  KeyValueConfig kv3;
  kv3.Set("arch.block_depths", "4,8,16");  // five stages required
  REQUIRE_THROWS_AS(ArchFromConfig(kv3), ConfigError);

  KeyValueConfig kv4;
  kv4.Set("synth.target_minority_fraction", "1.5");
  REQUIRE_THROWS_AS(SynthFromConfig(kv4), ConfigError);

  KeyValueConfig kv5;
  kv5.Set("data.subset_per_pipe", "-1");
  REQUIRE_THROWS_AS(DataFromConfig(kv5), ConfigError);

  KeyValueConfig kv6;
  kv6.Set("blindspot.priors", "0.3,0.3");  // must sum to one
  REQUIRE_THROWS_AS(BlindspotFromConfig(kv6), ConfigError);
}

TEST_CASE("arch config round trips including the aux flag", "[config]") {
  KeyValueConfig kv;
  kv.Set("arch.input_size", "64");
  kv.Set("arch.block_depths", "4,8,16,32,64");
  kv.Set("arch.with_aux", "false");
  const conseg::ArchConfig cfg = ArchFromConfig(kv);
  REQUIRE(cfg.input_size == 64);
  REQUIRE(cfg.block_depths == std::vector<int>{4, 8, 16, 32, 64});
  REQUIRE_FALSE(cfg.with_aux);

  KeyValueConfig out;
  WriteArchConfig(cfg, &out);
  REQUIRE(out.GetString("arch.block_depths", "") == "4,8,16,32,64");
  const conseg::ArchConfig back = ArchFromConfig(out);
  REQUIRE(back.input_size == cfg.input_size);
  REQUIRE(back.with_aux == cfg.with_aux);
}

TEST_CASE("blindspot options default to the reference two class setup", "[config]") {
  KeyValueConfig kv;
  const conseg::BlindspotOptions opt = BlindspotFromConfig(kv);
  REQUIRE(opt.model.num_classes == 2);
  REQUIRE(opt.model.class_priors == std::vector<double>{0.362, 0.638});
  REQUIRE(opt.model.error_rate == 0.2);
  REQUIRE(opt.trials == 1000000);

  KeyValueConfig kv2;
  kv2.Set("blindspot.priors", "0.2,0.3,0.5");
  kv2.Set("blindspot.error_rate", "0.1");
  const conseg::BlindspotOptions opt2 = BlindspotFromConfig(kv2);
  REQUIRE(opt2.model.num_classes == 3);
  REQUIRE(opt2.model.error_rate == 0.1);
}
