// conseg/losses.hpp

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

// The four training objectives and their gradients. Each *WithGrad variant
// fills a gradient tensor of the same shape as the differentiated argument;
// the scalar-only overloads are cheap views for logging and tests.
//
// Gradient routing is part of the contract here: the consensus loss treats
// the main decoder's prediction as a fixed target and differentiates only
// w.r.t. the auxiliary prediction, so no unsupervised signal can reach the
// main decoder through it.

#ifndef CONSEG_LOSSES_HPP_
#define CONSEG_LOSSES_HPP_

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "conseg/errors.hpp"
#include "conseg/metrics.hpp"
#include "conseg/tensor.hpp"

namespace conseg {

struct LossWeights {
  double w1 = 1.0;  // consensus term
  double w2 = 1.0;  // class-distribution prior term
  double w3 = 1.0;  // reconstruction term
};

inline void Validate(const LossWeights &w) {
  for (auto [v, name] : {std::pair{w.w1, "w1"}, std::pair{w.w2, "w2"},
                         std::pair{w.w3, "w3"}})
    if (!std::isfinite(v) || v < 0.0)
      throw ConfigError(std::string(name) +
                        ": loss weight must be finite and >= 0");
}

// Mean and standard deviation of the per-image class proportions, estimated
// from the labelled training subset. Class 0 is aggregate, class 1 is
// suspension.
struct ClassPrior {
  int num_classes = 2;
  std::vector<double> mu, sigma;
};

inline constexpr double kSigmaFloor = 1e-3;

inline void Validate(const ClassPrior &p) {
  if (p.num_classes < 2) throw ConfigError("prior num_classes: must be >= 2");
  if (static_cast<int>(p.mu.size()) != p.num_classes ||
      static_cast<int>(p.sigma.size()) != p.num_classes)
    throw ConfigError("prior mu/sigma: size must equal num_classes");
  double sum = 0.0;
  for (double m : p.mu) sum += m;
  if (std::fabs(sum - 1.0) > 1e-6)
    throw ConfigError("prior mu: must sum to 1, got " + std::to_string(sum));
  for (double s : p.sigma)
    if (!(s >= kSigmaFloor))
      throw ConfigError("prior sigma: below floor " +
                        std::to_string(kSigmaFloor));
}

// Inverse-frequency class weights for the weighted MSE, renormalised so the
// weights average to 1. Frequencies are floored to keep a class that is
// (almost) missing from the labelled subset from blowing the weights up.
inline std::array<double, 2> InverseFrequencyWeights(double freq_aggregate,
                                                     double freq_suspension) {
  const double total = freq_aggregate + freq_suspension;
  if (!(total > 0.0))
    throw InputError("class frequencies must have positive sum");
  const double fa = std::max(freq_aggregate, 1e-6 * total);
  const double fs = std::max(freq_suspension, 1e-6 * total);
  double wa = 0.5 * total / fa;
  double ws = 0.5 * total / fs;
  const double mean = 0.5 * (wa + ws);
  return {wa / mean, ws / mean};
}

// Weighted mean squared error against a hard reference mask. The weight of
// each pixel is chosen by its reference class.
template <typename T>
double SupervisedLossWithGrad(const Tensor<T> &pred,
                              const std::vector<LabelMask> &refs,
                              const std::array<double, 2> &class_weights,
                              Tensor<T> *grad) {
  if (pred.c() != 1) throw InputError("supervised loss: expected 1 channel");
  if (pred.n() != static_cast<int>(refs.size()))
    throw InputError("supervised loss: batch size mismatch");
  if (!(class_weights[0] > 0.0 && class_weights[1] > 0.0))
    throw InputError("supervised loss: class weights must be positive");
  if (grad) *grad = Tensor<T>(pred.n(), 1, pred.h(), pred.w());
  const std::size_t npix_img = static_cast<std::size_t>(pred.h()) * pred.w();
  const double inv_n = 1.0 / (static_cast<double>(pred.n()) * npix_img);
  double loss = 0.0;
  for (int n = 0; n < pred.n(); ++n) {
    const LabelMask &ref = refs[n];
    if (ref.h != pred.h() || ref.w != pred.w())
      throw InputError("supervised loss: mask shape mismatch");
    const T *p = pred.Plane(n, 0);
    T *g = grad ? grad->Plane(n, 0) : nullptr;
    for (std::size_t i = 0; i < npix_img; ++i) {
      // mask value 1 is aggregate (class 0), value 0 is suspension (class 1)
      const double w = ref.v[i] ? class_weights[0] : class_weights[1];
      const double diff = static_cast<double>(p[i]) - ref.v[i];
      loss += w * diff * diff;
      if (g) g[i] = static_cast<T>(2.0 * w * diff * inv_n);
    }
  }
  return loss * inv_n;
}

template <typename T>
double SupervisedLoss(const Tensor<T> &pred, const std::vector<LabelMask> &refs,
                      const std::array<double, 2> &class_weights) {
  return SupervisedLossWithGrad(pred, refs, class_weights,
                                static_cast<Tensor<T> *>(nullptr));
}

// Mean squared discrepancy between the two decoders' predictions. The
// gradient is returned only w.r.t. pred_aux; pred_main is a fixed target.
template <typename T>
double ConsensusLossWithGrad(const Tensor<T> &pred_main,
                             const Tensor<T> &pred_aux, Tensor<T> *grad_aux) {
  RequireSameShape(pred_main, pred_aux, "consensus loss");
  if (grad_aux)
    *grad_aux = Tensor<T>(pred_aux.n(), pred_aux.c(), pred_aux.h(),
                          pred_aux.w());
  const double inv_n = 1.0 / static_cast<double>(pred_main.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred_main.size(); ++i) {
    const double diff =
        static_cast<double>(pred_aux[i]) - static_cast<double>(pred_main[i]);
    loss += diff * diff;
    if (grad_aux) (*grad_aux)[i] = static_cast<T>(2.0 * diff * inv_n);
  }
  return loss * inv_n;
}

template <typename T>
double ConsensusLoss(const Tensor<T> &pred_main, const Tensor<T> &pred_aux) {
  return ConsensusLossWithGrad(pred_main, pred_aux,
                               static_cast<Tensor<T> *>(nullptr));
}

// Differentiable class proportions of one image in the batch. For the
// single-channel binary map the aggregate share is the spatial mean.
template <typename T>
std::array<double, 2> SoftClassProportions(const Tensor<T> &pred,
                                           int batch_index = 0) {
  if (pred.c() != 1) throw InputError("proportions: expected 1 channel");
  if (batch_index < 0 || batch_index >= pred.n())
    throw InputError("proportions: batch index out of range");
  const std::size_t npix = static_cast<std::size_t>(pred.h()) * pred.w();
  const T *p = pred.Plane(batch_index, 0);
  double sum = 0.0;
  for (std::size_t i = 0; i < npix; ++i) sum += static_cast<double>(p[i]);
  const double agg = sum / npix;
  return {agg, 1.0 - agg};
}

// Penalises deviation of each image's soft class proportions from the prior:
// (1/N_C) * sum_i ((p_i - mu_i) / (2 sigma_i))^2, averaged over the batch.
template <typename T>
double PriorLossWithGrad(const Tensor<T> &pred_aux, const ClassPrior &prior,
                         Tensor<T> *grad) {
  Validate(prior);
  if (pred_aux.c() != 1) throw InputError("prior loss: expected 1 channel");
  if (prior.num_classes != 2)
    throw InputError("prior loss: binary map needs a 2-class prior");
  if (grad)
    *grad = Tensor<T>(pred_aux.n(), 1, pred_aux.h(), pred_aux.w());
  const std::size_t npix = static_cast<std::size_t>(pred_aux.h()) * pred_aux.w();
  const int batch = pred_aux.n();
  double loss = 0.0;
  for (int n = 0; n < batch; ++n) {
    const auto p = SoftClassProportions(pred_aux, n);
    double img_loss = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double t = (p[i] - prior.mu[i]) / (2.0 * prior.sigma[i]);
      img_loss += t * t;
    }
    loss += img_loss / 2.0;
    if (grad) {
      // dp0/dpred = 1/npix and dp1/dpred = -1/npix at every pixel, so the
      // per-pixel gradient is constant over the image
      const double d0 = (p[0] - prior.mu[0]) / (2.0 * prior.sigma[0] * prior.sigma[0]);
      const double d1 = (p[1] - prior.mu[1]) / (2.0 * prior.sigma[1] * prior.sigma[1]);
      const double g = (d0 - d1) / (2.0 * npix * batch);
      T *gp = grad->Plane(n, 0);
      for (std::size_t i = 0; i < npix; ++i) gp[i] = static_cast<T>(g);
    }
  }
  return loss / batch;
}

template <typename T>
double PriorLoss(const Tensor<T> &pred_aux, const ClassPrior &prior) {
  return PriorLossWithGrad(pred_aux, prior, static_cast<Tensor<T> *>(nullptr));
}

// Mean squared error of the auto-encoded image against its input.
template <typename T>
double ReconstructionLossWithGrad(const Tensor<T> &x_hat, const Tensor<T> &x,
                                  Tensor<T> *grad) {
  RequireSameShape(x_hat, x, "reconstruction loss");
  if (grad) *grad = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  const double inv_n = 1.0 / static_cast<double>(x.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = static_cast<double>(x_hat[i]) - static_cast<double>(x[i]);
    loss += diff * diff;
    if (grad) (*grad)[i] = static_cast<T>(2.0 * diff * inv_n);
  }
  return loss * inv_n;
}

template <typename T>
double ReconstructionLoss(const Tensor<T> &x_hat, const Tensor<T> &x) {
  return ReconstructionLossWithGrad(x_hat, x, static_cast<Tensor<T> *>(nullptr));
}

// L = L_sup + w1*L_cons + w2*L_prior + w3*L_ae.
inline double TotalLoss(double l_sup, double l_cons, double l_prior,
                        double l_ae, const LossWeights &w) {
  Validate(w);
  for (double v : {l_sup, l_cons, l_prior, l_ae})
    if (!std::isfinite(v) || v < 0.0)
      throw InputError("total loss: components must be finite and >= 0");
  return l_sup + w.w1 * l_cons + w.w2 * l_prior + w.w3 * l_ae;
}

}  // namespace conseg

#endif  // CONSEG_LOSSES_HPP_
