#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "resablate/errors.hpp"

namespace resablate {

// Extents of a rank-4 NCHW tensor.
struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

// Dense NCHW tensor with an optional gradient slot of identical shape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape4 shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_.str());
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  // Pointer to the start of one (n, c) plane.
  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  bool has_grad() const { return grad_.has_value(); }
  std::vector<T>& grad() {
    if (!grad_) grad_.emplace(data_.size(), T(0));
    return *grad_;
  }
  const std::optional<std::vector<T>>& grad_slot() const { return grad_; }
  void clear_grad() { grad_.reset(); }

  bool all_finite() const {
    for (const T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape4 shape_{};
  std::vector<T> data_;
  std::optional<std::vector<T>> grad_;
};

// Convolution kernel, weights laid out (out, in, kh, kw).
template <typename T>
struct ConvKernel {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::vector<T> weights;
  bool zeroed = false;

  ConvKernel() = default;
  ConvKernel(std::size_t out, std::size_t in, std::size_t k_h, std::size_t k_w, std::size_t s,
             std::size_t pad)
      : out_channels(out), in_channels(in), kh(k_h), kw(k_w), stride(s), padding(pad),
        weights(out * in * k_h * k_w, T(0)) {}

  std::size_t weight_count() const { return out_channels * in_channels * kh * kw; }
  std::size_t patch_size() const { return in_channels * kh * kw; }

  // Throws ConfigError if the layout is inconsistent.
  void validate() const;

  void set_zero() {
    std::fill(weights.begin(), weights.end(), T(0));
    zeroed = true;
  }

  template <typename U>
  ConvKernel<U> cast() const {
    ConvKernel<U> k(out_channels, in_channels, kh, kw, stride, padding);
    for (std::size_t i = 0; i < weights.size(); ++i) k.weights[i] = static_cast<U>(weights[i]);
    k.zeroed = zeroed;
    return k;
  }
};

template <typename T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.1);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
        running_var(channels, T(1)) {}

  std::size_t channels() const { return gamma.size(); }
  std::size_t parameter_count() const { return 4 * gamma.size(); }
  void validate() const;

  // Eval-mode scale a_k and shift b_k such that BN(x) = a_k * x + b_k.
  T eval_scale(std::size_t k) const { return gamma[k] / std::sqrt(running_var[k] + epsilon); }
  T eval_shift(std::size_t k) const { return beta[k] - running_mean[k] * eval_scale(k); }

  // Value BN produces on an all-zero input channel in eval mode.
  std::vector<T> zero_input_constant() const {
    std::vector<T> c(channels());
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = eval_shift(k);
    return c;
  }

  template <typename U>
  BatchNormState<U> cast() const {
    BatchNormState<U> s(channels());
    for (std::size_t k = 0; k < channels(); ++k) {
      s.gamma[k] = static_cast<U>(gamma[k]);
      s.beta[k] = static_cast<U>(beta[k]);
      s.running_mean[k] = static_cast<U>(running_mean[k]);
      s.running_var[k] = static_cast<U>(running_var[k]);
    }
    s.epsilon = static_cast<U>(epsilon);
    s.momentum = static_cast<U>(momentum);
    return s;
  }
};

template <typename T>
void ConvKernel<T>::validate() const {
  if (out_channels == 0 || in_channels == 0) throw ConfigError("conv kernel has zero channels");
  if (!((kh == 1 || kh == 3) && (kw == 1 || kw == 3))) {
    throw ConfigError("conv kernel extents must be 1 or 3");
  }
  if (stride == 0) throw ConfigError("conv stride must be positive");
  if (weights.size() != weight_count()) throw ConfigError("conv weight count mismatch");
}

template <typename T>
void BatchNormState<T>::validate() const {
  const std::size_t c = gamma.size();
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ConfigError("batch norm arrays differ in length");
  }
  for (const T v : running_var) {
    if (!(v >= T(0))) throw ConfigError("batch norm running variance must be non-negative");
  }
  if (!(epsilon >= T(0))) throw ConfigError("batch norm epsilon must be non-negative");
  if (!(momentum > T(0) && momentum < T(1))) throw ConfigError("batch norm momentum must lie in (0,1)");
}

}  // namespace resablate
