// tests/test_blindspot.cpp

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

#include <catch2/catch_amalgamated.hpp>

#include "conseg/blindspot.hpp"

using conseg::BiasReport;
using conseg::BlindSpotModel;
using conseg::BlindSpotProbability;
using conseg::BlindSpotProbabilityChained;
using conseg::Rng;
using conseg::SimulateBlindSpot;

TEST_CASE("closed form hand values", "[blindspot]") {
  // perfect classifiers never agree incorrectly
  BlindSpotModel perfect{2, {0.5, 0.5}, 0.0};
  REQUIRE(BlindSpotProbability(perfect, 0) == 0.0);
  REQUIRE(BlindSpotProbability(perfect, 1) == 0.0);

  BlindSpotModel binary{2, {0.362, 0.638}, 0.2};
  REQUIRE_THAT(BlindSpotProbability(binary, 1),
               Catch::Matchers::WithinAbs(0.02552, 1e-12));

  BlindSpotModel ternary{3, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 0.3};
  REQUIRE_THAT(BlindSpotProbability(ternary, 0),
               Catch::Matchers::WithinAbs(0.015, 1e-12));
}

TEST_CASE("closed form is linear in the class prior", "[blindspot]") {
  // evaluated directly on the formula, bypassing prior normalisation
  const double e = 0.27;
  const int nc = 4;
  auto direct = [&](double prior) { return e * e / (nc - 1) * prior; };
  REQUIRE_THAT(direct(0.4), Catch::Matchers::WithinRel(2.0 * direct(0.2), 1e-12));
  REQUIRE_THAT(direct(0.9), Catch::Matchers::WithinRel(3.0 * direct(0.3), 1e-12));
}

TEST_CASE("closed form monotonicity", "[blindspot]") {
  double prev = 0.0;
  for (double e : {0.1, 0.2, 0.3, 0.5, 0.8, 1.0}) {
    BlindSpotModel m{2, {0.5, 0.5}, e};
    const double p = BlindSpotProbability(m, 0);
    REQUIRE(p > prev);
    prev = p;
  }
  double prev_nc = 1.0;
  for (int nc : {2, 3, 5, 9}) {
    BlindSpotModel m{nc, std::vector<double>(nc, 1.0 / nc), 0.4};
    const double p = BlindSpotProbability(m, 0);
    REQUIRE(p < prev_nc);
    prev_nc = p;
  }
}

TEST_CASE("derivation chain reproduces the closed form", "[blindspot]") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int nc = 2 + static_cast<int>(rng.UniformInt(6));
    std::vector<double> priors(nc);
    double sum = 0.0;
    for (double &p : priors) {
      p = rng.Uniform(0.05, 1.0);
      sum += p;
    }
    for (double &p : priors) p /= sum;
    BlindSpotModel m{nc, priors, rng.Uniform(0.01, 1.0)};
    for (int i = 0; i < nc; ++i)
      REQUIRE_THAT(BlindSpotProbabilityChained(m, i),
                   Catch::Matchers::WithinRel(BlindSpotProbability(m, i), 1e-12));
  }
}

TEST_CASE("simulation matches closed form within 3 SE", "[blindspot]") {
  Rng meta(123);
  for (int rep = 0; rep < 20; ++rep) {
    const int ncs[3] = {2, 3, 5};
    const int nc = ncs[meta.UniformInt(3)];
    std::vector<double> priors(nc);
    double sum = 0.0;
    for (double &p : priors) {
      p = meta.Uniform(0.1, 1.0);
      sum += p;
    }
    for (double &p : priors) p /= sum;
    BlindSpotModel m{nc, priors, meta.Uniform(0.05, 0.5)};

    Rng rng(conseg::MixSeed(5000, rep));
    const auto sim = SimulateBlindSpot(m, 200000, &rng);
    for (int i = 0; i < nc; ++i) {
      const double analytic = BlindSpotProbability(m, i);
      const double tol = 3.0 * std::max(sim.std_error[i], 1e-7);
      REQUIRE(std::fabs(analytic - sim.frequency[i]) <= tol);
    }
  }
}

TEST_CASE("simulation is deterministic and exact at error 0", "[blindspot]") {
  BlindSpotModel m{2, {0.362, 0.638}, 0.2};
  Rng r1(99), r2(99);
  const auto a = SimulateBlindSpot(m, 50000, &r1);
  const auto b = SimulateBlindSpot(m, 50000, &r2);
  REQUIRE(a.counts == b.counts);

  BlindSpotModel perfect{2, {0.5, 0.5}, 0.0};
  Rng r3(1);
  const auto c = SimulateBlindSpot(perfect, 10000, &r3);
  REQUIRE(c.counts[0] == 0);
  REQUIRE(c.counts[1] == 0);
}

TEST_CASE("bias report ordering, ratios and markers", "[blindspot]") {
  BlindSpotModel imbalanced{2, {0.362, 0.638}, 0.2};
  const auto rows = BiasReport(imbalanced);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].prior == 0.638);  // sorted descending
  REQUIRE(rows[1].prior == 0.362);
  REQUIRE(rows[0].ratio.has_value());
  REQUIRE_THAT(*rows[0].ratio, Catch::Matchers::WithinAbs(1.7624, 1e-4));
  REQUIRE_THAT(*rows[1].ratio, Catch::Matchers::WithinAbs(1.0, 1e-12));

  BlindSpotModel uniform{3, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 0.4};
  for (const auto &row : BiasReport(uniform))
    REQUIRE_THAT(*row.ratio, Catch::Matchers::WithinAbs(1.0, 1e-12));

  BlindSpotModel degenerate{2, {1.0, 0.0}, 0.2};
  const auto deg = BiasReport(degenerate);
  REQUIRE(deg[1].prior == 0.0);
  REQUIRE_FALSE(deg[1].ratio.has_value());  // 0/0, flagged undefined
}

TEST_CASE("model validation rejects bad fields", "[blindspot]") {
  REQUIRE_THROWS_AS(BlindSpotProbability({1, {1.0}, 0.1}, 0),
                    conseg::ConfigError);
  REQUIRE_THROWS_AS(BlindSpotProbability({2, {0.7, 0.7}, 0.1}, 0),
                    conseg::ConfigError);
  REQUIRE_THROWS_AS(BlindSpotProbability({2, {0.5, 0.5}, 1.5}, 0),
                    conseg::ConfigError);
  REQUIRE_THROWS_AS(BlindSpotProbability({2, {-0.5, 1.5}, 0.1}, 0),
                    conseg::ConfigError);
  REQUIRE_THROWS_AS(BlindSpotProbability({2, {0.5, 0.5}, 0.1}, 2),
                    conseg::InputError);
}
