// conseg/layers.hpp

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

#ifndef CONSEG_LAYERS_HPP_
#define CONSEG_LAYERS_HPP_

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "conseg/blas.hpp"
#include "conseg/errors.hpp"
#include "conseg/tensor.hpp"

namespace conseg {

enum class Act { kNone, kRelu, kSigmoid };

// Handle to one parameter vector and its gradient accumulator. The optimiser,
// the initialiser and the checkpoint writer all walk the same list of these,
// so traversal order is the single source of truth for serialisation.
template <typename T>
struct ParamRef {
  std::vector<T> *value;
  std::vector<T> *grad;
  bool decay;  // true for conv kernels, false for biases
  int fan_in;  // incoming connections per output unit, for He init
  std::string name;
};

namespace detail {

template <typename T>
inline void ApplyAct(Act act, T *y, std::size_t n) {
  switch (act) {
    case Act::kNone:
      break;
    case Act::kRelu:
      for (std::size_t i = 0; i < n; ++i)
        if (y[i] < T(0)) y[i] = T(0);
      break;
    case Act::kSigmoid:
      for (std::size_t i = 0; i < n; ++i)
        y[i] = T(1) / (T(1) + std::exp(-y[i]));
      break;
  }
}

// Converts an upstream gradient dy into the pre-activation gradient, given
// the cached post-activation output y.
template <typename T>
inline void ActBackward(Act act, const T *y, const T *dy, T *dz,
                        std::size_t n) {
  switch (act) {
    case Act::kNone:
      std::memcpy(dz, dy, n * sizeof(T));
      break;
    case Act::kRelu:
      for (std::size_t i = 0; i < n; ++i) dz[i] = y[i] > T(0) ? dy[i] : T(0);
      break;
    case Act::kSigmoid:
      for (std::size_t i = 0; i < n; ++i)
        dz[i] = dy[i] * y[i] * (T(1) - y[i]);
      break;
  }
}

// Unrolls one image plane set into a (c_in*k*k) x (oh*ow) patch matrix.
template <typename T>
void Im2Col(const T *x, int c_in, int h, int w, int k, int stride, int pad,
            int oh, int ow, T *col) {
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T *row = col + ((static_cast<std::size_t>(c) * k + ki) * k + kj) *
                           (static_cast<std::size_t>(oh) * ow);
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            std::memset(row + static_cast<std::size_t>(y) * ow, 0,
                        sizeof(T) * ow);
            continue;
          }
          const T *src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          T *dst = row + static_cast<std::size_t>(y) * ow;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pad + kj;
            dst[xo] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatters a patch-matrix gradient back onto the input plane. Accumulates.
template <typename T>
void Col2Im(const T *col, int c_in, int h, int w, int k, int stride, int pad,
            int oh, int ow, T *dx) {
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T *row = col + ((static_cast<std::size_t>(c) * k + ki) * k + kj) *
                                 (static_cast<std::size_t>(oh) * ow);
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          T *dst = dx + (static_cast<std::size_t>(c) * h + iy) * w;
          const T *src = row + static_cast<std::size_t>(y) * ow;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[xo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Standard convolution with square kernel, "same" padding for odd kernel
// sizes and an optional fused activation. Lowered to GEMM through im2col;
// the 1x1 stride-1 case multiplies against the input planes directly.
template <typename T>
class Conv2d {
 public:
  Conv2d(int in_ch, int out_ch, int ksize, int stride, Act act,
         std::string name)
      : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride),
        pad_((ksize - 1) / 2), act_(act), name_(std::move(name)),
        w_(static_cast<std::size_t>(out_ch) * in_ch * ksize * ksize, T(0)),
        b_(out_ch, T(0)), dw_(w_.size(), T(0)), db_(b_.size(), T(0)) {}

  Tensor<T> Forward(const Tensor<T> &x, bool train) {
    if (x.c() != in_ch_)
      throw InputError(name_ + ": expected " + std::to_string(in_ch_) +
                       " input channels, got " + std::to_string(x.c()));
    const int oh = (x.h() + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (x.w() + 2 * pad_ - k_) / stride_ + 1;
    const int npix = oh * ow;
    const int kdim = in_ch_ * k_ * k_;
    Tensor<T> y(x.n(), out_ch_, oh, ow);

    const bool direct = (k_ == 1 && stride_ == 1);
    if (train) {
      if (direct) {
        x_cache_ = x;
        cols_.clear();
      } else {
        cols_.assign(x.n(), std::vector<T>());
        in_h_ = x.h();
        in_w_ = x.w();
        in_n_ = x.n();
      }
    }
    std::vector<T> col;
    for (int n = 0; n < x.n(); ++n) {
      const T *a = w_.data();
      const T *bmat;
      if (direct) {
        bmat = x.Plane(n, 0);
      } else {
        std::vector<T> *dst = train ? &cols_[n] : &col;
        dst->assign(static_cast<std::size_t>(kdim) * npix, T(0));
        detail::Im2Col(x.Plane(n, 0), in_ch_, x.h(), x.w(), k_, stride_, pad_,
                       oh, ow, dst->data());
        bmat = dst->data();
      }
      T *out = y.Plane(n, 0);
      Gemm(false, false, out_ch_, npix, kdim, T(1), a, kdim, bmat, npix, T(0),
           out, npix);
      for (int oc = 0; oc < out_ch_; ++oc) {
        T *p = y.Plane(n, oc);
        const T bias = b_[oc];
        for (int i = 0; i < npix; ++i) p[i] += bias;
      }
    }
    detail::ApplyAct(act_, y.data(), y.size());
    if (train) y_cache_ = y;
    return y;
  }

  // Accumulates dw_/db_ and returns the gradient w.r.t. the layer input.
  // Valid only after Forward(..., train=true).
  Tensor<T> Backward(const Tensor<T> &dy) {
    RequireSameShape(dy, y_cache_, (name_ + " backward").c_str());
    const int oh = dy.h(), ow = dy.w(), npix = oh * ow;
    const int kdim = in_ch_ * k_ * k_;
    const bool direct = (k_ == 1 && stride_ == 1);
    const int in_h = direct ? x_cache_.h() : in_h_;
    const int in_w = direct ? x_cache_.w() : in_w_;
    Tensor<T> dx(dy.n(), in_ch_, in_h, in_w);

    std::vector<T> dz(static_cast<std::size_t>(out_ch_) * npix);
    std::vector<T> dcol;
    if (!direct) dcol.resize(static_cast<std::size_t>(kdim) * npix);
    for (int n = 0; n < dy.n(); ++n) {
      detail::ActBackward(act_, y_cache_.Plane(n, 0), dy.Plane(n, 0),
                          dz.data(), dz.size());
      for (int oc = 0; oc < out_ch_; ++oc) {
        const T *p = dz.data() + static_cast<std::size_t>(oc) * npix;
        T s = T(0);
        for (int i = 0; i < npix; ++i) s += p[i];
        db_[oc] += s;
      }
      const T *colmat = direct ? x_cache_.Plane(n, 0) : cols_[n].data();
      Gemm(false, true, out_ch_, kdim, npix, T(1), dz.data(), npix, colmat,
           npix, T(1), dw_.data(), kdim);
      if (direct) {
        Gemm(true, false, kdim, npix, out_ch_, T(1), w_.data(), kdim,
             dz.data(), npix, T(0), dx.Plane(n, 0), npix);
      } else {
        Gemm(true, false, kdim, npix, out_ch_, T(1), w_.data(), kdim,
             dz.data(), npix, T(0), dcol.data(), npix);
        detail::Col2Im(dcol.data(), in_ch_, in_h, in_w, k_, stride_, pad_, oh,
                       ow, dx.Plane(n, 0));
      }
    }
    return dx;
  }

  void ReleaseCaches() {
    cols_.clear();
    x_cache_ = Tensor<T>();
    y_cache_ = Tensor<T>();
  }

  void CollectParams(std::vector<ParamRef<T>> *out) {
    out->push_back({&w_, &dw_, true, in_ch_ * k_ * k_, name_ + ".w"});
    out->push_back({&b_, &db_, false, in_ch_ * k_ * k_, name_ + ".b"});
  }

  int out_channels() const { return out_ch_; }
  std::size_t NumParams() const { return w_.size() + b_.size(); }

 private:
  int in_ch_, out_ch_, k_, stride_, pad_;
  Act act_;
  std::string name_;
  std::vector<T> w_, b_, dw_, db_;
  // training caches
  std::vector<std::vector<T>> cols_;
  Tensor<T> x_cache_;  // only for the direct 1x1 path
  Tensor<T> y_cache_;
  int in_h_ = 0, in_w_ = 0, in_n_ = 0;
};

// Depthwise 3x3 convolution, stride 1, same padding, one filter per channel.
// Together with a following 1x1 Conv2d this forms a separable convolution.
template <typename T>
class DepthwiseConv2d {
 public:
  DepthwiseConv2d(int channels, std::string name)
      : ch_(channels), name_(std::move(name)),
        w_(static_cast<std::size_t>(channels) * 9, T(0)), b_(channels, T(0)),
        dw_(w_.size(), T(0)), db_(b_.size(), T(0)) {}

  Tensor<T> Forward(const Tensor<T> &x, bool train) {
    if (x.c() != ch_)
      throw InputError(name_ + ": expected " + std::to_string(ch_) +
                       " input channels, got " + std::to_string(x.c()));
    const int h = x.h(), w = x.w();
    Tensor<T> y(x.n(), ch_, h, w);
    for (int n = 0; n < x.n(); ++n) {
      for (int c = 0; c < ch_; ++c) {
        const T *src = x.Plane(n, c);
        T *dst = y.Plane(n, c);
        const T *ker = w_.data() + static_cast<std::size_t>(c) * 9;
        const T bias = b_[c];
        for (int iy = 0; iy < h; ++iy) {
          for (int ix = 0; ix < w; ++ix) {
            T acc = bias;
            for (int ki = 0; ki < 3; ++ki) {
              const int sy = iy - 1 + ki;
              if (sy < 0 || sy >= h) continue;
              const T *row = src + static_cast<std::size_t>(sy) * w;
              for (int kj = 0; kj < 3; ++kj) {
                const int sx = ix - 1 + kj;
                if (sx < 0 || sx >= w) continue;
                acc += ker[ki * 3 + kj] * row[sx];
              }
            }
            dst[static_cast<std::size_t>(iy) * w + ix] = acc;
          }
        }
      }
    }
    if (train) x_cache_ = x;
    return y;
  }

  Tensor<T> Backward(const Tensor<T> &dy) {
    RequireSameShape(dy, x_cache_, (name_ + " backward").c_str());
    const int h = dy.h(), w = dy.w();
    Tensor<T> dx(dy.n(), ch_, h, w);
    for (int n = 0; n < dy.n(); ++n) {
      for (int c = 0; c < ch_; ++c) {
        const T *src = x_cache_.Plane(n, c);
        const T *g = dy.Plane(n, c);
        T *dker = dw_.data() + static_cast<std::size_t>(c) * 9;
        const T *ker = w_.data() + static_cast<std::size_t>(c) * 9;
        T *dxp = dx.Plane(n, c);
        T dbias = T(0);
        for (int iy = 0; iy < h; ++iy) {
          for (int ix = 0; ix < w; ++ix) {
            const T go = g[static_cast<std::size_t>(iy) * w + ix];
            dbias += go;
            for (int ki = 0; ki < 3; ++ki) {
              const int sy = iy - 1 + ki;
              if (sy < 0 || sy >= h) continue;
              for (int kj = 0; kj < 3; ++kj) {
                const int sx = ix - 1 + kj;
                if (sx < 0 || sx >= w) continue;
                dker[ki * 3 + kj] += go * src[static_cast<std::size_t>(sy) * w + sx];
                dxp[static_cast<std::size_t>(sy) * w + sx] += go * ker[ki * 3 + kj];
              }
            }
          }
        }
        db_[c] += dbias;
      }
    }
    return dx;
  }

  void ReleaseCaches() { x_cache_ = Tensor<T>(); }

  void CollectParams(std::vector<ParamRef<T>> *out) {
    out->push_back({&w_, &dw_, true, 9, name_ + ".w"});
    out->push_back({&b_, &db_, false, 9, name_ + ".b"});
  }

  std::size_t NumParams() const { return w_.size() + b_.size(); }

 private:
  int ch_;
  std::string name_;
  std::vector<T> w_, b_, dw_, db_;
  Tensor<T> x_cache_;
};

// 2x2 max pooling with stride 2. Input height and width must be even.
// The argmax location is cached so the backward pass can route gradients.
template <typename T>
class MaxPool2 {
 public:
  explicit MaxPool2(std::string name) : name_(std::move(name)) {}

  Tensor<T> Forward(const Tensor<T> &x, bool train) {
    if (x.h() % 2 != 0 || x.w() % 2 != 0)
      throw InputError(name_ + ": input dims must be even, got " +
                       x.ShapeString());
    const int oh = x.h() / 2, ow = x.w() / 2;
    Tensor<T> y(x.n(), x.c(), oh, ow);
    if (train) {
      argmax_.assign(y.size(), 0);
      in_h_ = x.h();
      in_w_ = x.w();
    }
    std::size_t oidx = 0;
    for (int n = 0; n < x.n(); ++n) {
      for (int c = 0; c < x.c(); ++c) {
        const T *src = x.Plane(n, c);
        T *dst = y.Plane(n, c);
        for (int iy = 0; iy < oh; ++iy) {
          for (int ix = 0; ix < ow; ++ix) {
            const int base = 2 * iy * x.w() + 2 * ix;
            int best = base;
            T v = src[base];
            const int cands[3] = {base + 1, base + x.w(), base + x.w() + 1};
            for (int cand : cands) {
              if (src[cand] > v) {
                v = src[cand];
                best = cand;
              }
            }
            dst[static_cast<std::size_t>(iy) * ow + ix] = v;
            if (train) argmax_[oidx] = best;
            ++oidx;
          }
        }
      }
    }
    return y;
  }

  Tensor<T> Backward(const Tensor<T> &dy) {
    Tensor<T> dx(dy.n(), dy.c(), in_h_, in_w_);
    std::size_t oidx = 0;
    for (int n = 0; n < dy.n(); ++n) {
      for (int c = 0; c < dy.c(); ++c) {
        const T *g = dy.Plane(n, c);
        T *dst = dx.Plane(n, c);
        const std::size_t npix = static_cast<std::size_t>(dy.h()) * dy.w();
        for (std::size_t i = 0; i < npix; ++i) {
          dst[argmax_[oidx]] += g[i];
          ++oidx;
        }
      }
    }
    return dx;
  }

  void ReleaseCaches() { argmax_.clear(); }

 private:
  std::string name_;
  std::vector<int> argmax_;
  int in_h_ = 0, in_w_ = 0;
};

// Nearest-neighbour 2x upsampling. Backward sums each 2x2 output cell back
// onto its source pixel.
template <typename T>
class Upsample2 {
 public:
  Tensor<T> Forward(const Tensor<T> &x) {
    Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
    for (int n = 0; n < x.n(); ++n) {
      for (int c = 0; c < x.c(); ++c) {
        const T *src = x.Plane(n, c);
        T *dst = y.Plane(n, c);
        for (int iy = 0; iy < x.h(); ++iy) {
          for (int ix = 0; ix < x.w(); ++ix) {
            const T v = src[static_cast<std::size_t>(iy) * x.w() + ix];
            T *r0 = dst + static_cast<std::size_t>(2 * iy) * 2 * x.w() + 2 * ix;
            r0[0] = v;
            r0[1] = v;
            r0[2 * x.w()] = v;
            r0[2 * x.w() + 1] = v;
          }
        }
      }
    }
    return y;
  }

  Tensor<T> Backward(const Tensor<T> &dy) {
    const int oh = dy.h() / 2, ow = dy.w() / 2;
    Tensor<T> dx(dy.n(), dy.c(), oh, ow);
    for (int n = 0; n < dy.n(); ++n) {
      for (int c = 0; c < dy.c(); ++c) {
        const T *g = dy.Plane(n, c);
        T *dst = dx.Plane(n, c);
        for (int iy = 0; iy < oh; ++iy) {
          for (int ix = 0; ix < ow; ++ix) {
            const T *r0 = g + static_cast<std::size_t>(2 * iy) * dy.w() + 2 * ix;
            dst[static_cast<std::size_t>(iy) * ow + ix] =
                r0[0] + r0[1] + r0[dy.w()] + r0[dy.w() + 1];
          }
        }
      }
    }
    return dx;
  }
};

}  // namespace conseg

#endif  // CONSEG_LAYERS_HPP_
