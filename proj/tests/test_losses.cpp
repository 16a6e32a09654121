// tests/test_losses.cpp

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

#include "conseg/losses.hpp"
#include "conseg/rng.hpp"
#include "oracle.hpp"

using conseg::ClassPrior;
using conseg::ConsensusLoss;
using conseg::ConsensusLossWithGrad;
using conseg::LabelMask;
using conseg::LossWeights;
using conseg::PriorLoss;
using conseg::PriorLossWithGrad;
using conseg::ReconstructionLoss;
using conseg::ReconstructionLossWithGrad;
using conseg::Rng;
using conseg::SoftClassProportions;
using conseg::SupervisedLoss;
using conseg::SupervisedLossWithGrad;
using conseg::Tensor;
using conseg::TotalLoss;

TEST_CASE("supervised loss hand values", "[losses]") {
  // 2-pixel map, ref (0,1): first pixel suspension, second aggregate
  Tensor<double> pred(1, 1, 1, 2);
  pred[0] = 0.5;
  pred[1] = 0.5;
  LabelMask ref(1, 2);
  ref.v = {0, 1};

  REQUIRE_THAT(SupervisedLoss(pred, {ref}, {1.0, 1.0}),
               Catch::Matchers::WithinAbs(0.25, 1e-12));
  REQUIRE_THAT(SupervisedLoss(pred, {ref}, {2.0, 1.0}),
               Catch::Matchers::WithinAbs(0.375, 1e-12));

  // perfect prediction
  Tensor<double> exact(1, 1, 1, 2);
  exact[0] = 0.0;
  exact[1] = 1.0;
  REQUIRE(SupervisedLoss(exact, {ref}, {1.0, 1.0}) == 0.0);
}

TEST_CASE("consensus loss hand values", "[losses]") {
  Tensor<double> a(1, 1, 2, 2), b(1, 1, 2, 2);
  a.Fill(0.7);
  b.Fill(0.7);
  REQUIRE(ConsensusLoss(a, b) == 0.0);

  a.Fill(1.0);
  b.Fill(0.0);
  REQUIRE(ConsensusLoss(a, b) == 1.0);

  a.Fill(0.5);
  b.Fill(0.5);
  b[2] = 1.0;  // one of four pixels differs by 0.5
  REQUIRE_THAT(ConsensusLoss(a, b), Catch::Matchers::WithinAbs(0.0625, 1e-12));
}

TEST_CASE("consensus loss is symmetric in value, aux-only in gradient",
          "[losses]") {
  Rng rng(808);
  Tensor<double> a(2, 1, 3, 3), b(2, 1, 3, 3);
  oracle::FillUniform(&a, &rng, 0.0, 1.0);
  oracle::FillUniform(&b, &rng, 0.0, 1.0);
  REQUIRE_THAT(ConsensusLoss(a, b),
               Catch::Matchers::WithinRel(ConsensusLoss(b, a), 1e-12));

  // the gradient tensor matches FD w.r.t. the aux argument only
  Tensor<double> grad;
  ConsensusLossWithGrad(a, b, &grad);
  auto loss = [&]() { return ConsensusLoss(a, b); };
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double fd = oracle::CentralDiff(loss, &b[i], 1e-6);
    REQUIRE(oracle::RelErr(fd, grad[i]) < 1e-8);
  }
}

TEST_CASE("soft class proportions", "[losses]") {
  Tensor<double> ones(1, 1, 2, 2);
  ones.Fill(1.0);
  auto p = SoftClassProportions(ones);
  REQUIRE(p[0] == 1.0);
  REQUIRE(p[1] == 0.0);

  Tensor<double> half(1, 1, 2, 2);
  half.Fill(0.5);
  p = SoftClassProportions(half);
  REQUIRE(p[0] == 0.5);
  REQUIRE(p[1] == 0.5);

  Tensor<double> split(1, 1, 2, 2);
  split[0] = 1.0;
  split[1] = 1.0;
  p = SoftClassProportions(split);
  REQUIRE(p[0] == 0.5);
  REQUIRE(p[0] + p[1] == 1.0);
}

TEST_CASE("prior loss hand values", "[losses]") {
  ClassPrior match{2, {0.25, 0.75}, {0.1, 0.1}};
  Tensor<double> pred(1, 1, 2, 2);
  pred.Fill(0.25);
  REQUIRE_THAT(PriorLoss(pred, match), Catch::Matchers::WithinAbs(0.0, 1e-12));

  ClassPrior skewed{2, {0.362, 0.638}, {0.1, 0.1}};
  Tensor<double> half(1, 1, 4, 4);
  half.Fill(0.5);
  REQUIRE_THAT(PriorLoss(half, skewed),
               Catch::Matchers::WithinAbs(0.4761, 1e-10));

  ClassPrior sym{2, {0.5, 0.5}, {0.25, 0.25}};
  Tensor<double> sat(1, 1, 2, 2);
  sat.Fill(1.0);
  REQUIRE_THAT(PriorLoss(sat, sym), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("prior loss is invariant to spatial permutation", "[losses]") {
  Rng rng(4);
  ClassPrior prior{2, {0.362, 0.638}, {0.05, 0.08}};
  Tensor<double> pred(1, 1, 4, 4);
  oracle::FillUniform(&pred, &rng, 0.0, 1.0);
  const double before = PriorLoss(pred, prior);
  // reverse the pixel order
  Tensor<double> rev(1, 1, 4, 4);
  for (int i = 0; i < 16; ++i) rev[i] = pred[15 - i];
  REQUIRE_THAT(PriorLoss(rev, prior),
               Catch::Matchers::WithinRel(before, 1e-12));
}

TEST_CASE("prior loss batch reduction averages per-image losses", "[losses]") {
  ClassPrior prior{2, {0.4, 0.6}, {0.1, 0.1}};
  Tensor<double> one(1, 1, 2, 2), two(1, 1, 2, 2), both(2, 1, 2, 2);
  one.Fill(0.2);
  two.Fill(0.9);
  for (int i = 0; i < 4; ++i) {
    both[i] = 0.2;
    both[4 + i] = 0.9;
  }
  const double avg = 0.5 * (PriorLoss(one, prior) + PriorLoss(two, prior));
  REQUIRE_THAT(PriorLoss(both, prior), Catch::Matchers::WithinRel(avg, 1e-12));
}

TEST_CASE("reconstruction loss hand values", "[losses]") {
  Tensor<double> x(1, 3, 2, 2), xh(1, 3, 2, 2);
  x.Fill(0.5);
  xh.Fill(0.5);
  REQUIRE(ReconstructionLoss(xh, x) == 0.0);

  x.Fill(0.0);
  xh.Fill(1.0);
  REQUIRE(ReconstructionLoss(xh, x) == 1.0);

  x.Fill(0.5);
  xh.Fill(0.25);
  REQUIRE_THAT(ReconstructionLoss(xh, x),
               Catch::Matchers::WithinAbs(0.0625, 1e-12));
}

TEST_CASE("total loss weighted sums", "[losses]") {
  REQUIRE(TotalLoss(0, 0, 0, 0, {}) == 0.0);
  REQUIRE_THAT(TotalLoss(0.1, 0.2, 0.3, 0.4, {1, 1, 1}),
               Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(TotalLoss(0.1, 0.2, 0.3, 0.4, {0.5, 2.0, 0.0}),
               Catch::Matchers::WithinAbs(0.8, 1e-12));
  REQUIRE_THROWS_AS(TotalLoss(-0.1, 0, 0, 0, {}), conseg::InputError);
  REQUIRE_THROWS_AS(TotalLoss(0.1, 0, 0, 0, {-1, 1, 1}), conseg::ConfigError);
}

TEST_CASE("loss gradients match finite differences", "[losses]") {
  Rng rng(909);

  // supervised
  Tensor<double> pred(2, 1, 3, 3);
  oracle::FillUniform(&pred, &rng, 0.05, 0.95);
  std::vector<LabelMask> refs(2, LabelMask(3, 3));
  for (auto &m : refs)
    for (auto &v : m.v) v = rng.Uniform() < 0.4 ? 1 : 0;
  const std::array<double, 2> cw{1.5, 0.5};
  Tensor<double> grad;
  SupervisedLossWithGrad(pred, refs, cw, &grad);
  auto sup = [&]() { return SupervisedLoss(pred, refs, cw); };
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double fd = oracle::CentralDiff(sup, &pred[i], 1e-6);
    REQUIRE(oracle::RelErr(fd, grad[i]) < 1e-7);
  }

  // prior
  ClassPrior prior{2, {0.362, 0.638}, {0.05, 0.08}};
  Tensor<double> paux(2, 1, 3, 3);
  oracle::FillUniform(&paux, &rng, 0.05, 0.95);
  Tensor<double> pgrad;
  PriorLossWithGrad(paux, prior, &pgrad);
  auto pl = [&]() { return PriorLoss(paux, prior); };
  for (std::size_t i = 0; i < paux.size(); ++i) {
    const double fd = oracle::CentralDiff(pl, &paux[i], 1e-6);
    REQUIRE(oracle::RelErr(fd, pgrad[i]) < 1e-6);
  }

  // reconstruction
  Tensor<double> x(1, 3, 3, 3), xh(1, 3, 3, 3);
  oracle::FillUniform(&x, &rng, 0.0, 1.0);
  oracle::FillUniform(&xh, &rng, 0.0, 1.0);
  Tensor<double> rgrad;
  ReconstructionLossWithGrad(xh, x, &rgrad);
  auto rl = [&]() { return ReconstructionLoss(xh, x); };
  for (std::size_t i = 0; i < xh.size(); ++i) {
    const double fd = oracle::CentralDiff(rl, &xh[i], 1e-6);
    REQUIRE(oracle::RelErr(fd, rgrad[i]) < 1e-7);
  }
}

TEST_CASE("inverse frequency weights normalise to mean 1", "[losses]") {
  const auto w = conseg::InverseFrequencyWeights(0.25, 0.75);
  REQUIRE_THAT(w[0], Catch::Matchers::WithinAbs(1.5, 1e-12));
  REQUIRE_THAT(w[1], Catch::Matchers::WithinAbs(0.5, 1e-12));

  const auto eq = conseg::InverseFrequencyWeights(0.5, 0.5);
  REQUIRE_THAT(eq[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(eq[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("prior construction rejects invalid parameters", "[losses]") {
  Tensor<double> pred(1, 1, 2, 2);
  pred.Fill(0.5);
  REQUIRE_THROWS_AS(PriorLoss(pred, ClassPrior{2, {0.3, 0.3}, {0.1, 0.1}}),
                    conseg::ConfigError);
  REQUIRE_THROWS_AS(PriorLoss(pred, ClassPrior{2, {0.5, 0.5}, {1e-5, 0.1}}),
                    conseg::ConfigError);
}

TEST_CASE("losses reject shape mismatches", "[losses]") {
  Tensor<double> a(1, 1, 2, 2), b(1, 1, 2, 3);
  REQUIRE_THROWS_AS(ConsensusLoss(a, b), conseg::InputError);
  Tensor<double> x(1, 3, 2, 2), xh(1, 3, 4, 4);
  REQUIRE_THROWS_AS(ReconstructionLoss(xh, x), conseg::InputError);
  LabelMask wrong(4, 4);
  REQUIRE_THROWS_AS(SupervisedLoss(a, {wrong}, {1.0, 1.0}),
                    conseg::InputError);
}
