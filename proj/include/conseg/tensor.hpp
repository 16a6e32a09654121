// conseg/tensor.hpp

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

#ifndef CONSEG_TENSOR_HPP_
#define CONSEG_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "conseg/errors.hpp"

namespace conseg {

// Dense 4-d array in NCHW layout. The element type is float in production
// code; tests instantiate double for finite-difference gradient checks.
template <typename T = float>
class Tensor {
 public:
  Tensor() : n_(0), c_(0), h_(0), w_(0) {}

  Tensor(int n, int c, int h, int w)
      : n_(n), c_(c), h_(h), w_(w),
        data_(static_cast<std::size_t>(n) * c * h * w, T(0)) {
    if (n < 0 || c < 0 || h < 0 || w < 0)
      throw InputError("tensor dims must be non-negative");
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }

  T &operator()(int n, int c, int h, int w) {
    return data_[Offset(n, c, h, w)];
  }
  T operator()(int n, int c, int h, int w) const {
    return data_[Offset(n, c, h, w)];
  }

  T &operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the (n, c) plane, h*w contiguous elements.
  T *Plane(int n, int c) { return data_.data() + Offset(n, c, 0, 0); }
  const T *Plane(int n, int c) const {
    return data_.data() + Offset(n, c, 0, 0);
  }

  void Fill(T v) { data_.assign(data_.size(), v); }

  bool SameShape(const Tensor &o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  std::string ShapeString() const {
    return "(" + std::to_string(n_) + ", " + std::to_string(c_) + ", " +
           std::to_string(h_) + ", " + std::to_string(w_) + ")";
  }

 private:
  std::size_t Offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w;
  }

  int n_, c_, h_, w_;
  std::vector<T> data_;
};

template <typename T>
bool AllFinite(const Tensor<T> &t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  return true;
}

template <typename T>
void RequireSameShape(const Tensor<T> &a, const Tensor<T> &b,
                      const char *what) {
  if (!a.SameShape(b))
    throw InputError(std::string(what) + ": shape mismatch " +
                     a.ShapeString() + " vs " + b.ShapeString());
}

// Concatenates two tensors along the channel axis.
template <typename T>
Tensor<T> ConcatChannels(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw InputError("concat: incompatible shapes " + a.ShapeString() +
                     " vs " + b.ShapeString());
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t plane = static_cast<std::size_t>(a.h()) * a.w();
  for (int n = 0; n < a.n(); ++n) {
    for (int c = 0; c < a.c(); ++c)
      std::copy(a.Plane(n, c), a.Plane(n, c) + plane, out.Plane(n, c));
    for (int c = 0; c < b.c(); ++c)
      std::copy(b.Plane(n, c), b.Plane(n, c) + plane,
                out.Plane(n, a.c() + c));
  }
  return out;
}

// Splits a channel-concatenated gradient back into its two parts.
template <typename T>
void SplitChannels(const Tensor<T> &d, int c_first, Tensor<T> *da,
                   Tensor<T> *db) {
  *da = Tensor<T>(d.n(), c_first, d.h(), d.w());
  *db = Tensor<T>(d.n(), d.c() - c_first, d.h(), d.w());
  const std::size_t plane = static_cast<std::size_t>(d.h()) * d.w();
  for (int n = 0; n < d.n(); ++n) {
    for (int c = 0; c < c_first; ++c)
      std::copy(d.Plane(n, c), d.Plane(n, c) + plane, da->Plane(n, c));
    for (int c = c_first; c < d.c(); ++c)
      std::copy(d.Plane(n, c), d.Plane(n, c) + plane,
                db->Plane(n, c - c_first));
  }
}

template <typename T>
Tensor<T> Add(const Tensor<T> &a, const Tensor<T> &b) {
  RequireSameShape(a, b, "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
void Axpy(T alpha, const Tensor<T> &x, Tensor<T> *y) {
  RequireSameShape(x, *y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) (*y)[i] += alpha * x[i];
}

}  // namespace conseg

#endif  // CONSEG_TENSOR_HPP_
