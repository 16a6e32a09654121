// conseg/blindspot.hpp

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

// Two decoders trained towards agreement stop producing a learning signal
// whenever both predict the same wrong class. This header evaluates the
// probability of that event in closed form under the independence
// assumptions (class-independent error rate, uniform choice among wrong
// classes), verifies it by brute-force simulation, and reports how the
// effect scales with class priors.

#ifndef CONSEG_BLINDSPOT_HPP_
#define CONSEG_BLINDSPOT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "conseg/errors.hpp"
#include "conseg/rng.hpp"

namespace conseg {

struct BlindSpotModel {
  int num_classes = 2;
  std::vector<double> class_priors;  // P(C_i), sums to 1
  double error_rate = 0.0;           // P(s-), class independent
};

inline void Validate(const BlindSpotModel &m) {
  if (m.num_classes < 2)
    throw ConfigError("num_classes: must be >= 2, got " +
                      std::to_string(m.num_classes));
  if (static_cast<int>(m.class_priors.size()) != m.num_classes)
    throw ConfigError("class_priors: expected " +
                      std::to_string(m.num_classes) + " entries, got " +
                      std::to_string(m.class_priors.size()));
  double sum = 0.0;
  for (double p : m.class_priors) {
    if (!(p >= 0.0))
      throw ConfigError("class_priors: entries must be non-negative");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw ConfigError("class_priors: must sum to 1, got " +
                      std::to_string(sum));
  if (!(m.error_rate >= 0.0 && m.error_rate <= 1.0))
    throw ConfigError("error_rate: must lie in [0,1], got " +
                      std::to_string(m.error_rate));
}

// Probability that two independent classifiers are both wrong about a pixel
// of true class `class_index` and agree on the same wrong label:
// P(s-)^2 / (N_C - 1) * P(C_i).
inline double BlindSpotProbability(const BlindSpotModel &m, int class_index) {
  Validate(m);
  if (class_index < 0 || class_index >= m.num_classes)
    throw InputError("class_index out of range");
  const double e = m.error_rate;
  return e * e / (m.num_classes - 1) * m.class_priors[class_index];
}

// Same quantity assembled step by step: the joint probability that one
// classifier predicts k while the truth is i in the error state,
// 1/(N_C-1) * P(s-) * P(C_i), times the second classifier's chance of
// landing on that same k, P(s-)/(N_C-1), summed over the wrong classes k.
// Kept as a cross-check that the factored closed form above is consistent
// with its own derivation chain.
inline double BlindSpotProbabilityChained(const BlindSpotModel &m,
                                          int class_index) {
  Validate(m);
  if (class_index < 0 || class_index >= m.num_classes)
    throw InputError("class_index out of range");
  const double e = m.error_rate;
  const double n1 = m.num_classes - 1;
  double total = 0.0;
  for (int k = 0; k < m.num_classes; ++k) {
    if (k == class_index) continue;
    const double joint = 1.0 / n1 * e * m.class_priors[class_index];
    const double second = e / n1;
    total += joint * second;
  }
  return total;
}

struct SimulationResult {
  std::uint64_t trials = 0;
  std::vector<std::uint64_t> counts;  // blind-spot events per true class
  std::vector<double> frequency;      // counts / trials
  std::vector<double> std_error;      // binomial SE of each frequency
};

// Brute-force oracle for the closed form. Per trial: draw the true class
// from the priors; each of the two classifiers independently errs with
// probability error_rate and then picks uniformly among the wrong classes.
// A trial counts when both err and their picks coincide.
inline SimulationResult SimulateBlindSpot(const BlindSpotModel &m,
                                          std::uint64_t trials, Rng *rng) {
  Validate(m);
  if (trials < 1) throw InputError("trials must be >= 1");
  SimulationResult r;
  r.trials = trials;
  r.counts.assign(m.num_classes, 0);

  std::vector<double> cdf(m.num_classes);
  double acc = 0.0;
  for (int i = 0; i < m.num_classes; ++i) {
    acc += m.class_priors[i];
    cdf[i] = acc;
  }
  cdf.back() = 1.0;

  for (std::uint64_t t = 0; t < trials; ++t) {
    const double u = rng->Uniform();
    int truth = 0;
    while (u >= cdf[truth]) ++truth;

    int pred[2];
    bool wrong[2];
    for (int d = 0; d < 2; ++d) {
      wrong[d] = rng->Uniform() < m.error_rate;
      if (wrong[d]) {
        const int j =
            static_cast<int>(rng->UniformInt(
                static_cast<std::uint64_t>(m.num_classes) - 1));
        pred[d] = j >= truth ? j + 1 : j;
      } else {
        pred[d] = truth;
      }
    }
    if (wrong[0] && wrong[1] && pred[0] == pred[1]) ++r.counts[truth];
  }

  r.frequency.resize(m.num_classes);
  r.std_error.resize(m.num_classes);
  for (int i = 0; i < m.num_classes; ++i) {
    const double p = static_cast<double>(r.counts[i]) / trials;
    r.frequency[i] = p;
    r.std_error[i] = std::sqrt(p * (1.0 - p) / trials);
  }
  return r;
}

struct BiasRow {
  int class_index = 0;
  double prior = 0.0;
  double analytic_p = 0.0;
  std::optional<double> empirical_p;  // present when a simulation was run
  std::optional<double> std_error;
  std::optional<double> ratio;  // vs the minimum-prior class; empty if 0/0
};

// Per-class blind-spot table, sorted by prior descending. The ratio column
// compares each class against the class with the smallest prior; it is left
// undefined when that reference probability is zero. Pass a simulation
// result to fill the empirical columns.
inline std::vector<BiasRow> BiasReport(const BlindSpotModel &m,
                                       const SimulationResult *sim = nullptr) {
  Validate(m);
  int min_idx = 0;
  for (int i = 1; i < m.num_classes; ++i)
    if (m.class_priors[i] < m.class_priors[min_idx]) min_idx = i;
  const double ref_p = BlindSpotProbability(m, min_idx);

  std::vector<BiasRow> rows(m.num_classes);
  for (int i = 0; i < m.num_classes; ++i) {
    rows[i].class_index = i;
    rows[i].prior = m.class_priors[i];
    rows[i].analytic_p = BlindSpotProbability(m, i);
    if (sim) {
      rows[i].empirical_p = sim->frequency[i];
      rows[i].std_error = sim->std_error[i];
    }
    if (ref_p > 0.0) rows[i].ratio = rows[i].analytic_p / ref_p;
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const BiasRow &a, const BiasRow &b) {
                     return a.prior > b.prior;
                   });
  return rows;
}

}  // namespace conseg

#endif  // CONSEG_BLINDSPOT_HPP_
