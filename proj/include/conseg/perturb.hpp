// conseg/perturb.hpp

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

// Latent-space perturbation feeding the auxiliary decoder: multiplicative
// uniform noise followed by dropping the strongest activations per channel.
// The composition order is part of the contract. A PerturbRecord captures
// the random draws so the exact transformation can be differentiated.

#ifndef CONSEG_PERTURB_HPP_
#define CONSEG_PERTURB_HPP_

#include <cmath>
#include <string>

#include "conseg/errors.hpp"
#include "conseg/rng.hpp"
#include "conseg/tensor.hpp"

namespace conseg {

struct PerturbConfig {
  double noise_lo = -0.3, noise_hi = 0.3;  // multiplicative noise interval
  double drop_lo = 0.6, drop_hi = 0.9;     // threshold interval for gamma
  std::uint64_t seed = 0;                  // stream seed used by the trainer
};

inline void Validate(const PerturbConfig &c) {
  if (!std::isfinite(c.noise_lo) || !std::isfinite(c.noise_hi) ||
      std::fabs(c.noise_lo + c.noise_hi) > 1e-12 || c.noise_lo > 0.0)
    throw ConfigError("noise_range: must be symmetric about 0");
  if (!(c.drop_lo > 0.0) || !(c.drop_hi <= 1.0) || !(c.drop_lo < c.drop_hi))
    throw ConfigError("drop_threshold_range: must satisfy 0 < lo < hi <= 1");
}

// Random draws of one perturbation application. `noise` holds N, `mask`
// holds the binary keep mask of the drop stage, `gamma` the drawn threshold.
template <typename T>
struct PerturbRecord {
  Tensor<T> noise;
  Tensor<T> mask;
  double gamma = 1.0;
};

// (z * N) + z with N i.i.d. uniform over the configured noise interval.
template <typename T>
Tensor<T> NoisePerturb(const Tensor<T> &z, const PerturbConfig &cfg, Rng *rng,
                       Tensor<T> *noise_out = nullptr) {
  Validate(cfg);
  Tensor<T> out(z.n(), z.c(), z.h(), z.w());
  if (noise_out) *noise_out = Tensor<T>(z.n(), z.c(), z.h(), z.w());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double n = rng->Uniform(cfg.noise_lo, cfg.noise_hi);
    out[i] = static_cast<T>(z[i] * n + z[i]);
    if (noise_out) (*noise_out)[i] = static_cast<T>(n);
  }
  return out;
}

// Draws gamma ~ U(drop interval), normalises each (image, channel) plane by
// its max absolute activation and zeroes every element whose normalised
// value exceeds gamma. An identically-zero channel has no usable
// normalisation and passes through unchanged.
template <typename T>
Tensor<T> DropPerturb(const Tensor<T> &z, const PerturbConfig &cfg, Rng *rng,
                      Tensor<T> *mask_out = nullptr,
                      double *gamma_out = nullptr) {
  Validate(cfg);
  const double gamma = rng->Uniform(cfg.drop_lo, cfg.drop_hi);
  if (gamma_out) *gamma_out = gamma;
  Tensor<T> out = z;
  if (mask_out) {
    *mask_out = Tensor<T>(z.n(), z.c(), z.h(), z.w());
    mask_out->Fill(T(1));
  }
  const std::size_t npix = static_cast<std::size_t>(z.h()) * z.w();
  for (int n = 0; n < z.n(); ++n) {
    for (int c = 0; c < z.c(); ++c) {
      const T *src = z.Plane(n, c);
      double max_abs = 0.0;
      for (std::size_t i = 0; i < npix; ++i)
        max_abs = std::max(max_abs, std::fabs(static_cast<double>(src[i])));
      if (max_abs == 0.0) continue;
      T *dst = out.Plane(n, c);
      T *m = mask_out ? mask_out->Plane(n, c) : nullptr;
      for (std::size_t i = 0; i < npix; ++i) {
        if (static_cast<double>(src[i]) / max_abs > gamma) {
          dst[i] = T(0);
          if (m) m[i] = T(0);
        }
      }
    }
  }
  return out;
}

// F(z): noise first, then drop. Never mutates z; fresh draws per call.
template <typename T>
Tensor<T> PerturbLatent(const Tensor<T> &z, const PerturbConfig &cfg, Rng *rng,
                        PerturbRecord<T> *record = nullptr) {
  Validate(cfg);
  Tensor<T> noisy = NoisePerturb(z, cfg, rng, record ? &record->noise : nullptr);
  return DropPerturb(noisy, cfg, rng, record ? &record->mask : nullptr,
                     record ? &record->gamma : nullptr);
}

// Gradient of PerturbLatent w.r.t. z for the recorded draws:
// d/dz [mask * (z*N + z)] = mask * (1 + N).
template <typename T>
Tensor<T> PerturbBackward(const Tensor<T> &d_out,
                          const PerturbRecord<T> &record) {
  RequireSameShape(d_out, record.noise, "perturb backward");
  RequireSameShape(d_out, record.mask, "perturb backward");
  Tensor<T> dz(d_out.n(), d_out.c(), d_out.h(), d_out.w());
  for (std::size_t i = 0; i < d_out.size(); ++i)
    dz[i] = d_out[i] * record.mask[i] * (T(1) + record.noise[i]);
  return dz;
}

}  // namespace conseg

#endif  // CONSEG_PERTURB_HPP_
