// conseg/metrics.hpp

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

#ifndef CONSEG_METRICS_HPP_
#define CONSEG_METRICS_HPP_

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "conseg/errors.hpp"

namespace conseg {

// Hard per-pixel label map. Values are class indices (0 or 1 for the binary
// task: 1 = aggregate, 0 = suspension).
struct LabelMask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  LabelMask() = default;
  LabelMask(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}
  std::size_t size() const { return v.size(); }
  std::uint8_t &at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Mergeable per-class confusion accumulator.
struct ConfusionCounts {
  int num_classes = 2;
  std::vector<std::uint64_t> tp, fp, fn, tn;

  explicit ConfusionCounts(int nc = 2)
      : num_classes(nc), tp(nc, 0), fp(nc, 0), fn(nc, 0), tn(nc, 0) {}

  std::uint64_t TotalPixels() const { return tp[0] + fp[0] + fn[0] + tn[0]; }

  void Merge(const ConfusionCounts &o) {
    if (o.num_classes != num_classes)
      throw InputError("confusion merge: class count mismatch");
    for (int c = 0; c < num_classes; ++c) {
      tp[c] += o.tp[c];
      fp[c] += o.fp[c];
      fn[c] += o.fn[c];
      tn[c] += o.tn[c];
    }
  }
};

// Adds the pixelwise comparison of one (pred, ref) mask pair to the counts.
inline ConfusionCounts &Accumulate(ConfusionCounts &counts,
                                   const LabelMask &pred,
                                   const LabelMask &ref) {
  if (pred.h != ref.h || pred.w != ref.w)
    throw InputError("accumulate: mask shapes differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred.v[i], r = ref.v[i];
    for (int c = 0; c < counts.num_classes; ++c) {
      if (r == c)
        p == c ? ++counts.tp[c] : ++counts.fn[c];
      else
        p == c ? ++counts.fp[c] : ++counts.tn[c];
    }
  }
  return counts;
}

// Per-class scores in percent. A zero denominator leaves the metric empty
// instead of silently reporting 0.
struct ClassMetrics {
  std::optional<double> recall, precision, f1;
};

inline ClassMetrics ComputeClassMetrics(const ConfusionCounts &c,
                                        int class_index) {
  if (class_index < 0 || class_index >= c.num_classes)
    throw InputError("class_index out of range");
  const double tp = static_cast<double>(c.tp[class_index]);
  const double fp = static_cast<double>(c.fp[class_index]);
  const double fn = static_cast<double>(c.fn[class_index]);
  ClassMetrics m;
  if (tp + fn > 0) m.recall = 100.0 * tp / (tp + fn);
  if (tp + fp > 0) m.precision = 100.0 * tp / (tp + fp);
  if (m.recall && m.precision) {
    const double p = *m.precision, r = *m.recall;
    m.f1 = (p + r > 0) ? 2.0 * p * r / (p + r) : 0.0;
  }
  return m;
}

// Unweighted mean of per-class F1 values. A class whose F1 is undefined is
// skipped when it is absent from both prediction and reference (nothing to
// score), and counted as 0 otherwise. Returns empty if every class is
// skipped.
inline std::optional<double> MeanF1(const ConfusionCounts &c) {
  double sum = 0.0;
  int n = 0;
  for (int i = 0; i < c.num_classes; ++i) {
    const ClassMetrics m = ComputeClassMetrics(c, i);
    if (m.f1) {
      sum += *m.f1;
      ++n;
    } else {
      const bool absent_everywhere = c.tp[i] + c.fp[i] + c.fn[i] == 0;
      if (!absent_everywhere) {
        sum += 0.0;
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// Plain unweighted mean over already-computed per-class F1 scores.
inline double MeanF1Of(const std::vector<double> &per_class_f1) {
  if (per_class_f1.empty()) throw InputError("mean F1 of empty list");
  double sum = 0.0;
  for (double f : per_class_f1) sum += f;
  return sum / per_class_f1.size();
}

struct AggregateMetrics {
  double oa = 0.0;  // overall accuracy, percent
  std::optional<double> mf1;
};

inline AggregateMetrics ComputeAggregateMetrics(const ConfusionCounts &c) {
  const std::uint64_t total = c.TotalPixels();
  if (total == 0) throw InputError("aggregate metrics on empty counts");
  std::uint64_t correct = 0;
  for (int i = 0; i < c.num_classes; ++i) correct += c.tp[i];
  AggregateMetrics a;
  a.oa = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  a.mf1 = MeanF1(c);
  return a;
}

namespace detail {
inline std::string FormatMetric(const std::optional<double> &v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << *v;
  return os.str();
}
}  // namespace detail

// One CSV row per evaluated (variant, training setup) pair.
inline std::string MetricsCsvHeader() {
  return "variant,setup,oa,mf1,"
         "recall_aggregate,precision_aggregate,f1_aggregate,"
         "recall_suspension,precision_suspension,f1_suspension";
}

inline std::string MetricsCsvRow(const std::string &variant,
                                 const std::string &setup,
                                 const ConfusionCounts &c) {
  if (c.num_classes != 2)
    throw InputError("metrics csv row: binary counts expected");
  const AggregateMetrics agg = ComputeAggregateMetrics(c);
  std::ostringstream os;
  os << variant << "," << setup << "," << detail::FormatMetric(agg.oa)
     << "," << detail::FormatMetric(agg.mf1);
  // column order follows the header: aggregate is the class with mask
  // value 1, suspension the class with mask value 0
  for (int value : {1, 0}) {
    const ClassMetrics m = ComputeClassMetrics(c, value);
    os << "," << detail::FormatMetric(m.recall) << ","
       << detail::FormatMetric(m.precision) << ","
       << detail::FormatMetric(m.f1);
  }
  return os.str();
}

}  // namespace conseg

#endif  // CONSEG_METRICS_HPP_
