#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "resablate/model.hpp"
#include "resablate/ops.hpp"

namespace testing_support {

using resablate::ConvKernel;
using resablate::Shape4;
using resablate::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape4 shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

template <typename T>
ConvKernel<T> random_kernel(std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                            std::size_t pad, std::mt19937_64& rng) {
  ConvKernel<T> kern(out, in, k, k, stride, pad);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& w : kern.weights) w = static_cast<T>(u(rng));
  return kern;
}

// Direct seven-loop cross-correlation, the reference for the im2col path.
template <typename T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const ConvKernel<T>& k) {
  const Shape4 s = x.shape();
  const std::size_t oh = (s.h + 2 * k.padding - k.kh) / k.stride + 1;
  const std::size_t ow = (s.w + 2 * k.padding - k.kw) / k.stride + 1;
  Tensor<T> out({s.n, k.out_channels, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < k.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < k.in_channels; ++c)
            for (std::size_t u = 0; u < k.kh; ++u)
              for (std::size_t v = 0; v < k.kw; ++v) {
                const long y = static_cast<long>(i * k.stride + u) - static_cast<long>(k.padding);
                const long xx = static_cast<long>(j * k.stride + v) - static_cast<long>(k.padding);
                if (y < 0 || xx < 0 || y >= static_cast<long>(s.h) || xx >= static_cast<long>(s.w)) continue;
                acc += static_cast<double>(x.at(n, c, y, xx)) *
                       static_cast<double>(k.weights[((o * k.in_channels + c) * k.kh + u) * k.kw + v]);
              }
          out.at(n, o, i, j) = static_cast<T>(acc);
        }
  return out;
}

// Max |a - b| over max |b|, floored so all-zero references do not divide by zero.
template <typename A, typename B>
double max_relative_error(const A& a, const B& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    den = std::max(den, std::abs(static_cast<double>(b[i])));
  }
  return num / std::max(den, 1e-12);
}

// ||a - b|| / max(||a||, ||b||) over whole gradient vectors.
inline double normwise_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
}

// Central differences of a scalar function over every entry of `params`.
inline std::vector<double> numeric_gradient(std::vector<double>& params, const std::function<double()>& f,
                                            double h = 1e-6) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f();
    params[i] = keep - h;
    const double down = f();
    params[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Random small model with perturbed BN statistics so branch constants are non-trivial.
inline resablate::Model random_model(std::uint64_t seed, resablate::Task task = resablate::Task::classify,
                                     std::vector<std::size_t> units = {1, 2}) {
  resablate::ResNetConfig cfg;
  cfg.stage_widths = {4, 8};
  cfg.units_per_stage = std::move(units);
  cfg.input_size = 8;
  cfg.task = task;
  cfg.num_classes = task == resablate::Task::segment ? 1 : 5;
  cfg.seed = seed;
  resablate::Model m = resablate::build_model(cfg);
  std::mt19937_64 rng(seed * 7919 + 1);
  std::uniform_real_distribution<float> g(0.5f, 1.5f), b(-0.5f, 0.5f), var(0.5f, 2.0f);
  auto perturb = [&](resablate::BatchNormState<float>& bn) {
    for (std::size_t k = 0; k < bn.channels(); ++k) {
      bn.gamma[k] = g(rng);
      bn.beta[k] = b(rng);
      bn.running_mean[k] = b(rng);
      bn.running_var[k] = var(rng);
    }
  };
  perturb(m.stem.bn);
  for (auto& stage : m.stages)
    for (auto& unit : stage) {
      perturb(unit.conv1->bn);
      perturb(unit.conv2->bn);
      if (unit.proj) perturb(unit.proj->bn);
    }
  for (auto& up : m.segmenter.up) perturb(up.bn);
  return m;
}

}  // namespace testing_support
