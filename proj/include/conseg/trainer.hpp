// conseg/trainer.hpp

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

// Training loop for the segmentation network: seeded He initialisation,
// Adam with an L2 penalty on kernel weights, plateau learning-rate decay,
// the three training variants, and checkpoint selection by training loss.

#ifndef CONSEG_TRAINER_HPP_
#define CONSEG_TRAINER_HPP_

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "conseg/data.hpp"
#include "conseg/errors.hpp"
#include "conseg/losses.hpp"
#include "conseg/metrics.hpp"
#include "conseg/model.hpp"
#include "conseg/perturb.hpp"
#include "conseg/rng.hpp"

namespace conseg {

// Named sub-streams of the experiment seed, so that e.g. weight init and
// batch sampling stay decoupled when one of them changes.
constexpr std::uint64_t kInitStream = 101;
constexpr std::uint64_t kBatchStream = 102;
constexpr std::uint64_t kPerturbStream = 103;

// He initialisation: kernel weights are zero-mean normal with variance
// 2 / fan_in, biases start at exactly zero. All weights are drawn from one
// sequential stream in the fixed parameter traversal order (encoder, main
// decoder, then auxiliary decoder), so two models that share a seed also
// share the encoder and main-decoder draws regardless of with_aux.
template <typename T>
inline void InitializeWeights(ResSepNet<T> *net, std::uint64_t seed) {
  Rng rng(MixSeed(seed, kInitStream));
  for (auto &p : net->Params(Scope::kAll)) {
    if (p.decay) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(p.fan_in));
      for (auto &v : *p.value) v = static_cast<T>(rng.Normal(0.0, stddev));
    } else {
      std::fill(p.value->begin(), p.value->end(), T(0));
    }
  }
}

// ---------------------------------------------------------------------------
// Training configuration

// base trains the supervised path alone; cons adds the consensus term on
// perturbed unlabelled latents; full adds the distribution-prior and
// reconstruction terms on top of cons.
enum class Variant { kBase, kCons, kFull };

inline Variant ParseVariant(const std::string &name) {
  if (name == "base") return Variant::kBase;
  if (name == "cons") return Variant::kCons;
  if (name == "full") return Variant::kFull;
  throw ConfigError("variant: expected base, cons or full, got '" + name +
                    "'");
}

inline std::string VariantName(Variant v) {
  switch (v) {
    case Variant::kBase: return "base";
    case Variant::kCons: return "cons";
    case Variant::kFull: return "full";
  }
  throw ConfigError("variant: unknown enumerator");
}

struct TrainConfig {
  Variant variant = Variant::kFull;
  int epochs = 500;
  int batch_labelled = 4;
  int batch_unlabelled = 4;
  double lr_initial = 1e-3;
  double lr_decay_factor = 0.1;
  int plateau_patience_epochs = 25;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay_l2 = 1e-5;
  LossWeights loss_weights;
  PerturbConfig perturb;
  std::uint64_t seed = 0;
};

inline void Validate(const TrainConfig &c) {
  if (c.epochs < 1) throw ConfigError("epochs: must be >= 1");
  if (c.batch_labelled < 1) throw ConfigError("batch_labelled: must be >= 1");
  if (c.batch_unlabelled < 1)
    throw ConfigError("batch_unlabelled: must be >= 1");
  if (!(c.lr_initial > 0.0) || !std::isfinite(c.lr_initial))
    throw ConfigError("lr_initial: must be positive");
  if (!(c.lr_decay_factor > 0.0) || !(c.lr_decay_factor < 1.0))
    throw ConfigError("lr_decay_factor: must lie in (0,1)");
  if (c.plateau_patience_epochs < 1)
    throw ConfigError("plateau_patience_epochs: must be >= 1");
  if (!(c.adam_beta1 >= 0.0) || !(c.adam_beta1 < 1.0) ||
      !(c.adam_beta2 >= 0.0) || !(c.adam_beta2 < 1.0))
    throw ConfigError("adam betas: must lie in [0,1)");
  if (!(c.weight_decay_l2 >= 0.0) || !std::isfinite(c.weight_decay_l2))
    throw ConfigError("weight_decay_l2: must be >= 0");
  Validate(c.loss_weights);
  Validate(c.perturb);
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

// Adam over a fixed parameter set. The L2 penalty enters the gradient of
// kernel weights before the moment updates; biases are never decayed.
// Moments are kept in double regardless of the parameter width.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ParamRef<T>> params, double beta1, double beta2,
                double weight_decay, double epsilon = 1e-8)
      : params_(std::move(params)),
        beta1_(beta1),
        beta2_(beta2),
        wd_(weight_decay),
        eps_(epsilon) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto &p : params_) {
      m_.emplace_back(p.value->size(), 0.0);
      v_.emplace_back(p.value->size(), 0.0);
    }
  }

  // one update from the gradients currently held by the parameter set
  void Step(double lr) {
    if (!(lr > 0.0)) throw InputError("optimizer step: rate must be positive");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto &value = *params_[i].value;
      const auto &grad = *params_[i].grad;
      const bool decay = params_[i].decay;
      for (std::size_t j = 0; j < value.size(); ++j) {
        double g = static_cast<double>(grad[j]);
        if (decay) g += wd_ * static_cast<double>(value[j]);
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double step =
            lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
        value[j] = static_cast<T>(static_cast<double>(value[j]) - step);
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, wd_, eps_;
  long t_ = 0;
};

// Plateau schedule on the training loss: an epoch improves when its loss
// undercuts the best seen by more than the threshold; after `patience`
// consecutive non-improving epochs the rate is multiplied by the decay
// factor and the window restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr_initial, double decay_factor, int patience,
                   double improvement_threshold = 1e-5)
      : lr_(lr_initial),
        factor_(decay_factor),
        threshold_(improvement_threshold),
        patience_(patience) {}

  void Observe(double epoch_loss) {
    if (epoch_loss < best_ - threshold_) {
      best_ = epoch_loss;
      since_ = 0;
    } else if (++since_ >= patience_) {
      lr_ *= factor_;
      since_ = 0;
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_, factor_, threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int patience_, since_ = 0;
};

// ---------------------------------------------------------------------------
// History

// One record per epoch. The unsupervised components are present only when
// the variant computes them; `lr` is the rate after the epoch's plateau
// observation, so a decay triggered by this epoch shows up in its record.
struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss_sup = 0.0;
  std::optional<double> loss_cons, loss_prior, loss_ae;
  double loss_total = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
};

inline std::string HistoryJsonLine(const EpochRecord &r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss_sup"] = r.loss_sup;
  if (r.loss_cons) j["loss_cons"] = *r.loss_cons;
  if (r.loss_prior) j["loss_prior"] = *r.loss_prior;
  if (r.loss_ae) j["loss_ae"] = *r.loss_ae;
  j["loss_total"] = r.loss_total;
  j["lr"] = r.lr;
  j["seconds"] = r.seconds;
  return j.dump();
}

inline void WriteHistory(const TrainHistory &h, const std::string &path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open history file for writing: " + path);
  for (const auto &r : h.records) f << HistoryJsonLine(r) << "\n";
}

// ---------------------------------------------------------------------------
// Parameter snapshots

template <typename T>
std::vector<std::vector<T>> SnapshotParams(ResSepNet<T> *net) {
  std::vector<std::vector<T>> snap;
  for (const auto &p : net->Params(Scope::kAll)) snap.push_back(*p.value);
  return snap;
}

template <typename T>
void RestoreParams(ResSepNet<T> *net,
                   const std::vector<std::vector<T>> &snap) {
  auto params = net->Params(Scope::kAll);
  if (params.size() != snap.size())
    throw InputError("parameter snapshot does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value->size() != snap[i].size())
      throw InputError("parameter snapshot does not match the model");
    *params[i].value = snap[i];
  }
}

// ---------------------------------------------------------------------------
// Fitting

template <typename T>
struct FitOutcome {
  TrainHistory history;
  int best_epoch = 0;  // 1-based epoch with the lowest training loss
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<T>> best_params;  // snapshot at best_epoch
};

namespace detail {

// stacks the referenced single-image tiles into one batch tensor
template <typename T, typename Tile>
Tensor<T> GatherImages(const std::vector<Tile> &tiles,
                       const std::vector<int> &idx) {
  const Tensor<float> &first = tiles[idx[0]].image;
  Tensor<T> out(static_cast<int>(idx.size()), first.c(), first.h(),
                first.w());
  const std::size_t npix =
      static_cast<std::size_t>(first.h()) * first.w();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Tensor<float> &img = tiles[idx[b]].image;
    for (int c = 0; c < img.c(); ++c) {
      const float *src = img.Plane(0, c);
      T *dst = out.Plane(static_cast<int>(b), c);
      for (std::size_t i = 0; i < npix; ++i) dst[i] = static_cast<T>(src[i]);
    }
  }
  return out;
}

inline void RequireFiniteLoss(double v, const char *component, int epoch,
                              int step) {
  if (!std::isfinite(v))
    throw TrainingError(std::string("the ") + component +
                        " loss became non-finite at epoch " +
                        std::to_string(epoch) + ", step " +
                        std::to_string(step));
}

// inverse-frequency supervised weights from the labelled pixel counts
inline std::array<double, 2> ClassWeightsOf(
    const std::vector<LabelledTile> &labelled) {
  std::uint64_t aggregate = 0, total = 0;
  for (const auto &tile : labelled) {
    for (auto v : tile.mask.v) aggregate += v;
    total += tile.mask.size();
  }
  if (total == 0) throw InputError("fit: labelled masks are empty");
  const double f = static_cast<double>(aggregate) / static_cast<double>(total);
  return InverseFrequencyWeights(f, 1.0 - f);
}

}  // namespace detail

// Runs the configured variant on the split. Every epoch is one shuffled
// pass over the labelled tiles; unlabelled tiles are drawn with replacement
// to fill each step. The model is left holding the final-epoch parameters;
// the best-loss snapshot travels in the outcome.
template <typename T>
FitOutcome<T> Fit(ResSepNet<T> *net, const DatasetSplit &split,
                  const ClassPrior &prior, const TrainConfig &cfg) {
  Validate(cfg);
  Validate(prior);
  if (split.labelled.empty())
    throw InputError("fit: the training split has no labelled tiles");
  const bool uses_unlabelled = cfg.variant != Variant::kBase;
  if (uses_unlabelled && split.unlabelled.empty())
    throw ConfigError("variant " + VariantName(cfg.variant) +
                      ": the training split has no unlabelled tiles");
  if (uses_unlabelled && !net->config().with_aux)
    throw ConfigError("variant " + VariantName(cfg.variant) +
                      ": the model was built without the auxiliary decoder");

  const std::array<double, 2> class_weights =
      detail::ClassWeightsOf(split.labelled);

  Rng batch_rng(MixSeed(cfg.seed, kBatchStream));
  Rng perturb_rng(MixSeed(MixSeed(cfg.seed, kPerturbStream),
                          cfg.perturb.seed));

  // base must not touch auxiliary parameters, so its set stops at inference
  AdamOptimizer<T> opt(
      net->Params(cfg.variant == Variant::kBase ? Scope::kInference
                                                : Scope::kAll),
      cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay_l2);
  PlateauScheduler sched(cfg.lr_initial, cfg.lr_decay_factor,
                         cfg.plateau_patience_epochs);

  const int num_labelled = static_cast<int>(split.labelled.size());
  const int num_unlabelled = static_cast<int>(split.unlabelled.size());
  std::vector<int> order(num_labelled);
  for (int i = 0; i < num_labelled; ++i) order[i] = i;

  FitOutcome<T> outcome;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = num_labelled - 1; i > 0; --i)
      std::swap(order[i],
                order[batch_rng.UniformInt(static_cast<std::uint64_t>(i) + 1)]);

    double sum_sup = 0.0, sum_cons = 0.0, sum_prior = 0.0, sum_ae = 0.0;
    double sum_total = 0.0;
    int steps = 0;
    for (int begin = 0; begin < num_labelled; begin += cfg.batch_labelled) {
      const int end = std::min(begin + cfg.batch_labelled, num_labelled);
      const std::vector<int> lab_idx(order.begin() + begin,
                                     order.begin() + end);
      net->ZeroGrads();

      Tensor<T> x_l = detail::GatherImages<T>(split.labelled, lab_idx);
      std::vector<LabelMask> refs;
      for (int i : lab_idx) refs.push_back(split.labelled[i].mask);
      auto main = net->ForwardMain(x_l, /*train=*/true);
      Tensor<T> dy;
      const double l_sup =
          SupervisedLossWithGrad(main.y, refs, class_weights, &dy);
      detail::RequireFiniteLoss(l_sup, "supervised", epoch, steps);
      net->BackwardMain(dy);

      double l_cons = 0.0, l_prior = 0.0, l_ae = 0.0;
      if (uses_unlabelled) {
        std::vector<int> unl_idx;
        for (int j = 0; j < cfg.batch_unlabelled; ++j)
          unl_idx.push_back(static_cast<int>(batch_rng.UniformInt(
              static_cast<std::uint64_t>(num_unlabelled))));
        Tensor<T> x_u = detail::GatherImages<T>(split.unlabelled, unl_idx);

        // the clean main-decoder prediction is the consensus target; it is
        // computed in eval mode so no gradient can flow back through it
        auto lat = net->ForwardEncoder(x_u, /*train=*/true);
        Tensor<T> target = net->ForwardMainDecoder(lat, /*train=*/false);

        PerturbRecord<T> rec;
        Tensor<T> z_pert = PerturbLatent(lat.z, cfg.perturb, &perturb_rng,
                                         &rec);
        auto aux = net->ForwardAux(z_pert, /*train=*/true);

        Tensor<T> dy_aux;
        l_cons = ConsensusLossWithGrad(target, aux.y_aux, &dy_aux);
        detail::RequireFiniteLoss(l_cons, "consensus", epoch, steps);
        for (std::size_t i = 0; i < dy_aux.size(); ++i)
          dy_aux[i] = static_cast<T>(cfg.loss_weights.w1 * dy_aux[i]);

        Tensor<T> dx_hat(aux.x_hat.n(), aux.x_hat.c(), aux.x_hat.h(),
                         aux.x_hat.w());
        if (cfg.variant == Variant::kFull) {
          Tensor<T> d_prior;
          l_prior = PriorLossWithGrad(aux.y_aux, prior, &d_prior);
          detail::RequireFiniteLoss(l_prior, "prior", epoch, steps);
          for (std::size_t i = 0; i < dy_aux.size(); ++i)
            dy_aux[i] = static_cast<T>(dy_aux[i] +
                                       cfg.loss_weights.w2 * d_prior[i]);
          Tensor<T> d_rec;
          l_ae = ReconstructionLossWithGrad(aux.x_hat, x_u, &d_rec);
          detail::RequireFiniteLoss(l_ae, "reconstruction", epoch, steps);
          for (std::size_t i = 0; i < dx_hat.size(); ++i)
            dx_hat[i] = static_cast<T>(cfg.loss_weights.w3 * d_rec[i]);
        }

        Tensor<T> dz_pert = net->BackwardAux(dy_aux, dx_hat);
        Tensor<T> dz = PerturbBackward(dz_pert, rec);
        net->BackwardEncoder(dz);
      }

      const double total =
          TotalLoss(l_sup, l_cons, l_prior, l_ae, cfg.loss_weights);
      opt.Step(sched.lr());

      sum_sup += l_sup;
      sum_cons += l_cons;
      sum_prior += l_prior;
      sum_ae += l_ae;
      sum_total += total;
      ++steps;
    }

    const double mean_total = sum_total / steps;
    sched.Observe(mean_total);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss_sup = sum_sup / steps;
    if (uses_unlabelled) rec.loss_cons = sum_cons / steps;
    if (cfg.variant == Variant::kFull) {
      rec.loss_prior = sum_prior / steps;
      rec.loss_ae = sum_ae / steps;
    }
    rec.loss_total = mean_total;
    rec.lr = sched.lr();
    rec.seconds = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    outcome.history.records.push_back(rec);

    if (mean_total < outcome.best_loss) {
      outcome.best_loss = mean_total;
      outcome.best_epoch = epoch;
      outcome.best_params = SnapshotParams(net);
    }
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Evaluation

// Accumulates the pixel confusion of the main path over a held-out labelled
// set. The auxiliary decoder and the perturbations play no part here.
template <typename T>
ConfusionCounts EvaluateCheckpoint(ResSepNet<T> *net,
                                   const std::vector<LabelledTile> &heldout) {
  if (heldout.empty())
    throw InputError("evaluation needs a non-empty held-out set");
  ConfusionCounts counts;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    Tensor<T> x =
        detail::GatherImages<T>(heldout, {static_cast<int>(i)});
    auto out = net->ForwardMain(x, /*train=*/false);
    const auto pred = Binarize(out.y, 0.5);
    Accumulate(counts, pred[0], heldout[i].mask);
  }
  return counts;
}

}  // namespace conseg

#endif  // CONSEG_TRAINER_HPP_
