#include "resablate/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace resablate {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width,
            const ConvKernel<T>& k, std::size_t out_h, std::size_t out_w, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k.padding);
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(height);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(width);
  const std::size_t out_plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = image + c * height * width;
    for (std::size_t i = 0; i < k.kh; ++i) {
      for (std::size_t j = 0; j < k.kw; ++j) {
        T* dst = col + ((c * k.kh + i) * k.kw + j) * out_plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * k.stride + i) - pad;
          T* row = dst + oy * out_w;
          if (y < 0 || y >= h) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* src_row = src + y * w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * k.stride + j) - pad;
            row[ox] = (x < 0 || x >= w) ? T(0) : src_row[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t height, std::size_t width,
                const ConvKernel<T>& k, std::size_t out_h, std::size_t out_w, T* image) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k.padding);
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(height);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(width);
  const std::size_t out_plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = image + c * height * width;
    for (std::size_t i = 0; i < k.kh; ++i) {
      for (std::size_t j = 0; j < k.kw; ++j) {
        const T* src = col + ((c * k.kh + i) * k.kw + j) * out_plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * k.stride + i) - pad;
          if (y < 0 || y >= h) continue;
          const T* row = src + oy * out_w;
          T* dst_row = dst + y * w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * k.stride + j) - pad;
            if (x >= 0 && x < w) dst_row[x] += row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + " produced a non-finite value");
}

template <typename T>
Shape4 conv2d_output_shape(const Shape4& input, const ConvKernel<T>& kernel) {
  kernel.validate();
  if (input.c != kernel.in_channels) {
    throw ConfigError("conv2d: input has " + std::to_string(input.c) + " channels, kernel expects " +
                      std::to_string(kernel.in_channels));
  }
  const std::size_t padded_h = input.h + 2 * kernel.padding;
  const std::size_t padded_w = input.w + 2 * kernel.padding;
  if (padded_h < kernel.kh || padded_w < kernel.kw) {
    throw ConfigError("conv2d: padded input " + input.str() + " smaller than kernel");
  }
  return {input.n, kernel.out_channels, (padded_h - kernel.kh) / kernel.stride + 1,
          (padded_w - kernel.kw) / kernel.stride + 1};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvKernel<T>& kernel) {
  const Shape4 out_shape = conv2d_output_shape(input.shape(), kernel);
  const Shape4& in = input.shape();
  Tensor<T> out(out_shape);
  const std::size_t k_size = kernel.patch_size();
  const std::size_t out_plane = out_shape.plane();
  std::vector<T> col(k_size * out_plane);
  Eigen::Map<const RowMat<T>> w(kernel.weights.data(), kernel.out_channels, k_size);
  for (std::size_t n = 0; n < in.n; ++n) {
    im2col(input.plane(n, 0), in.c, in.h, in.w, kernel, out_shape.h, out_shape.w, col.data());
    Eigen::Map<const RowMat<T>> cm(col.data(), k_size, out_plane);
    Eigen::Map<RowMat<T>> om(out.plane(n, 0), kernel.out_channels, out_plane);
    om.noalias() = w * cm;
  }
  ensure_finite(out, "conv2d");
  return out;
}

template <typename T>
ConvGrads<T> conv2d_grad(const Tensor<T>& input, const ConvKernel<T>& kernel,
                         const Tensor<T>& grad_out) {
  const Shape4 out_shape = conv2d_output_shape(input.shape(), kernel);
  if (grad_out.shape() != out_shape) {
    throw ConfigError("conv2d_grad: grad_out " + grad_out.shape().str() + " expected " +
                      out_shape.str());
  }
  const Shape4& in = input.shape();
  const std::size_t k_size = kernel.patch_size();
  const std::size_t out_plane = out_shape.plane();
  ConvGrads<T> g{Tensor<T>(in), std::vector<T>(kernel.weight_count(), T(0))};
  std::vector<T> col(k_size * out_plane);
  std::vector<T> grad_col(k_size * out_plane);
  Eigen::Map<const RowMat<T>> w(kernel.weights.data(), kernel.out_channels, k_size);
  Eigen::Map<RowMat<T>> gw(g.grad_kernel.data(), kernel.out_channels, k_size);
  for (std::size_t n = 0; n < in.n; ++n) {
    im2col(input.plane(n, 0), in.c, in.h, in.w, kernel, out_shape.h, out_shape.w, col.data());
    Eigen::Map<const RowMat<T>> cm(col.data(), k_size, out_plane);
    Eigen::Map<const RowMat<T>> go(grad_out.plane(n, 0), kernel.out_channels, out_plane);
    gw.noalias() += go * cm.transpose();
    Eigen::Map<RowMat<T>> gc(grad_col.data(), k_size, out_plane);
    gc.noalias() = w.transpose() * go;
    col2im_add(grad_col.data(), in.c, in.h, in.w, kernel, out_shape.h, out_shape.w,
               g.grad_input.plane(n, 0));
  }
  return g;
}

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& input, const BatchNormState<T>& state) {
  const Shape4& s = input.shape();
  if (s.c != state.channels()) throw ConfigError("batchnorm: channel count mismatch");
  Tensor<T> out(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    const T a = state.eval_scale(c);
    const T b = state.eval_shift(c);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] * a + b;
    }
  }
  ensure_finite(out, "batchnorm");
  return out;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, BnMode mode,
                    BnCache<T>* cache) {
  if (mode == BnMode::eval) return batchnorm_eval(input, state);
  const Shape4& s = input.shape();
  if (s.c != state.channels()) throw ConfigError("batchnorm: channel count mismatch");
  const std::size_t count = s.n * s.plane();
  if (count < 2) {
    throw DegenerateBatchError("batchnorm train mode needs more than one value per channel");
  }
  Tensor<T> out(s);
  BnCache<T> local;
  BnCache<T>& cc = cache ? *cache : local;
  cc.normalized = Tensor<T>(s);
  cc.inv_std.assign(s.c, T(0));
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) sum += src[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double d = src[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.epsilon)));
    cc.inv_std[c] = inv_std;
    const T m = static_cast<T>(mean);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = input.plane(n, c);
      T* xh = cc.normalized.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        xh[i] = (src[i] - m) * inv_std;
        dst[i] = state.gamma[c] * xh[i] + state.beta[c];
      }
    }
    const T mom = state.momentum;
    const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
    state.running_mean[c] = (T(1) - mom) * state.running_mean[c] + mom * m;
    state.running_var[c] = (T(1) - mom) * state.running_var[c] + mom * static_cast<T>(unbiased);
  }
  ensure_finite(out, "batchnorm");
  return out;
}

template <typename T>
BnGrads<T> batchnorm_train_backward(const BnCache<T>& cache, std::span<const T> gamma,
                                    const Tensor<T>& grad_out) {
  const Shape4& s = grad_out.shape();
  check_same_shape(cache.normalized, grad_out, "batchnorm backward");
  BnGrads<T> g{Tensor<T>(s), std::vector<T>(s.c, T(0)), std::vector<T>(s.c, T(0))};
  const double count = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* go = grad_out.plane(n, c);
      const T* xh = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        sum_g += go[i];
        sum_gx += static_cast<double>(go[i]) * xh[i];
      }
    }
    g.grad_beta[c] = static_cast<T>(sum_g);
    g.grad_gamma[c] = static_cast<T>(sum_gx);
    const T scale = gamma[c] * cache.inv_std[c];
    const T mean_g = static_cast<T>(sum_g / count);
    const T mean_gx = static_cast<T>(sum_gx / count);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* go = grad_out.plane(n, c);
      const T* xh = cache.normalized.plane(n, c);
      T* gi = g.grad_input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        gi[i] = scale * (go[i] - mean_g - xh[i] * mean_gx);
      }
    }
  }
  return g;
}

template <typename T>
BnGrads<T> batchnorm_train_grad(const Tensor<T>& input, const BatchNormState<T>& state,
                                const Tensor<T>& grad_out) {
  check_same_shape(input, grad_out, "batchnorm_train_grad");
  BatchNormState<T> scratch = state;
  BnCache<T> cache;
  batchnorm(input, scratch, BnMode::train, &cache);
  return batchnorm_train_backward<T>(cache, state.gamma, grad_out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (T& v : x.data()) v = v > T(0) ? v : T(0);
}

template <typename T>
Tensor<T> relu_grad(const Tensor<T>& activation, const Tensor<T>& grad_out) {
  check_same_shape(activation, grad_out, "relu_grad");
  Tensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = activation[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> add_channel_constant(const Tensor<T>& x, std::span<const T> constant) {
  const Shape4& s = x.shape();
  if (constant.size() != s.c) throw ConfigError("add_channel_constant: channel count mismatch");
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] + constant[c];
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T v = input[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  const Shape4& s = input.shape();
  if (s.plane() == 0) throw ConfigError("global_avg_pool: empty spatial extent");
  Tensor<T> out({s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = input.plane(n, c);
      double sum = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) sum += src[i];
      out.at(n, c, 0, 0) = static_cast<T>(sum / static_cast<double>(s.plane()));
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_grad(const Shape4& input_shape, const Tensor<T>& grad_out) {
  if (grad_out.shape() != Shape4{input_shape.n, input_shape.c, 1, 1}) {
    throw ConfigError("global_avg_pool_grad: grad_out shape mismatch");
  }
  Tensor<T> g(input_shape);
  const T inv = T(1) / static_cast<T>(input_shape.plane());
  for (std::size_t n = 0; n < input_shape.n; ++n) {
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const T v = grad_out.at(n, c, 0, 0) * inv;
      T* dst = g.plane(n, c);
      std::fill(dst, dst + input_shape.plane(), v);
    }
  }
  return g;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, std::span<const T> weight, std::span<const T> bias,
                 std::size_t out_features) {
  const Shape4& s = input.shape();
  const std::size_t in_features = s.c * s.plane();
  if (weight.size() != out_features * in_features || bias.size() != out_features) {
    throw ConfigError("linear: weight/bias shape does not match input " + s.str());
  }
  Tensor<T> out({s.n, out_features, 1, 1});
  Eigen::Map<const RowMat<T>> x(input.data().data(), s.n, in_features);
  Eigen::Map<const RowMat<T>> w(weight.data(), out_features, in_features);
  Eigen::Map<RowMat<T>> y(out.data().data(), s.n, out_features);
  y.noalias() = x * w.transpose();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t o = 0; o < out_features; ++o) y(n, o) += bias[o];
  }
  ensure_finite(out, "linear");
  return out;
}

template <typename T>
LinearGrads<T> linear_grad(const Tensor<T>& input, std::span<const T> weight,
                           std::size_t out_features, const Tensor<T>& grad_out) {
  const Shape4& s = input.shape();
  const std::size_t in_features = s.c * s.plane();
  if (weight.size() != out_features * in_features ||
      grad_out.shape() != Shape4{s.n, out_features, 1, 1}) {
    throw ConfigError("linear_grad: shape mismatch");
  }
  LinearGrads<T> g{Tensor<T>(s), std::vector<T>(weight.size()), std::vector<T>(out_features, T(0))};
  Eigen::Map<const RowMat<T>> x(input.data().data(), s.n, in_features);
  Eigen::Map<const RowMat<T>> w(weight.data(), out_features, in_features);
  Eigen::Map<const RowMat<T>> gy(grad_out.data().data(), s.n, out_features);
  Eigen::Map<RowMat<T>> gx(g.grad_input.data().data(), s.n, in_features);
  Eigen::Map<RowMat<T>> gw(g.grad_weight.data(), out_features, in_features);
  gx.noalias() = gy * w;
  gw.noalias() = gy.transpose() * x;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t o = 0; o < out_features; ++o) g.grad_bias[o] += gy(n, o);
  }
  return g;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input) {
  const Shape4& s = input.shape();
  Tensor<T> out({s.n, s.c, 2 * s.h, 2 * s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      const std::size_t ow = 2 * s.w;
      for (std::size_t y = 0; y < 2 * s.h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / 2) * s.w + x / 2];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2x_grad(const Tensor<T>& grad_out) {
  const Shape4& s = grad_out.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ConfigError("upsample grad: odd spatial extent");
  Tensor<T> g({s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = grad_out.plane(n, c);
      T* dst = g.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) dst[(y / 2) * (s.w / 2) + x / 2] += src[y * s.w + x];
      }
    }
  }
  return g;
}

template <typename T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  const Shape4& s = logits.shape();
  if (s.plane() != 1) throw ConfigError("softmax_cross_entropy: logits must be N x K");
  if (labels.size() != s.n) throw ConfigError("softmax_cross_entropy: label count mismatch");
  if (s.n == 0) throw DataError("softmax_cross_entropy: empty batch");
  const std::size_t k = s.c;
  LossAndGrad<T> r{T(0), Tensor<T>(s)};
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::int32_t label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
    }
    const T* z = logits.data().data() + n * k;
    const T zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j] - zmax));
    const double log_denom = std::log(denom);
    total += -(static_cast<double>(z[label] - zmax) - log_denom);
    T* g = r.grad.data().data() + n * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(z[j] - zmax) - log_denom);
      g[j] = static_cast<T>((p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) * inv_n);
    }
  }
  r.loss = static_cast<T>(total * inv_n);
  return r;
}

double dice(std::span<const float> pred_mask, std::span<const float> true_mask) {
  if (pred_mask.size() != true_mask.size()) throw ConfigError("dice: mask sizes differ");
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t both = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] > 0.5f;
    const bool t = true_mask[i] > 0.5f;
    a += p;
    b += t;
    both += (p && t);
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

template <typename T>
double dice(const Tensor<T>& pred_mask, const Tensor<T>& true_mask) {
  check_same_shape(pred_mask, true_mask, "dice");
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t both = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] > T(0.5);
    const bool t = true_mask[i] > T(0.5);
    a += p;
    b += t;
    both += (p && t);
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

template <typename T>
LossAndGrad<T> soft_dice_loss(const Tensor<T>& pred_prob, const Tensor<T>& true_mask) {
  check_same_shape(pred_prob, true_mask, "soft_dice_loss");
  constexpr double smooth = 1.0;
  double inter = 0.0;
  double sum_p = 0.0;
  double sum_q = 0.0;
  for (std::size_t i = 0; i < pred_prob.size(); ++i) {
    inter += static_cast<double>(pred_prob[i]) * true_mask[i];
    sum_p += pred_prob[i];
    sum_q += true_mask[i];
  }
  const double num = 2.0 * inter + smooth;
  const double den = sum_p + sum_q + smooth;
  LossAndGrad<T> r{static_cast<T>(1.0 - num / den), Tensor<T>(pred_prob.shape())};
  const double den2 = den * den;
  for (std::size_t i = 0; i < pred_prob.size(); ++i) {
    r.grad[i] = static_cast<T>(-(2.0 * true_mask[i] * den - num) / den2);
  }
  return r;
}

template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity,
              const SgdConfig<T>& config) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ConfigError("sgd_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = config.momentum * velocity[i] + grads[i] + config.weight_decay * params[i];
    params[i] -= config.lr * velocity[i];
  }
}

#define RESABLATE_INSTANTIATE_OPS(T)                                                              \
  template void ensure_finite<T>(const Tensor<T>&, const char*);                                 \
  template Shape4 conv2d_output_shape<T>(const Shape4&, const ConvKernel<T>&);                   \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvKernel<T>&);                          \
  template ConvGrads<T> conv2d_grad<T>(const Tensor<T>&, const ConvKernel<T>&, const Tensor<T>&); \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, BatchNormState<T>&, BnMode, BnCache<T>*);    \
  template Tensor<T> batchnorm_eval<T>(const Tensor<T>&, const BatchNormState<T>&);              \
  template BnGrads<T> batchnorm_train_backward<T>(const BnCache<T>&, std::span<const T>,         \
                                                  const Tensor<T>&);                             \
  template BnGrads<T> batchnorm_train_grad<T>(const Tensor<T>&, const BatchNormState<T>&,        \
                                              const Tensor<T>&);                                 \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                  \
  template void relu_inplace<T>(Tensor<T>&);                                                     \
  template Tensor<T> relu_grad<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add_channel_constant<T>(const Tensor<T>&, std::span<const T>);              \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                               \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                       \
  template Tensor<T> global_avg_pool_grad<T>(const Shape4&, const Tensor<T>&);                   \
  template Tensor<T> linear<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,         \
                               std::size_t);                                                     \
  template LinearGrads<T> linear_grad<T>(const Tensor<T>&, std::span<const T>, std::size_t,      \
                                         const Tensor<T>&);                                      \
  template Tensor<T> upsample_nearest2x<T>(const Tensor<T>&);                                    \
  template Tensor<T> upsample_nearest2x_grad<T>(const Tensor<T>&);                               \
  template LossAndGrad<T> softmax_cross_entropy<T>(const Tensor<T>&,                             \
                                                   std::span<const std::int32_t>);               \
  template double dice<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template LossAndGrad<T> soft_dice_loss<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template void sgd_step<T>(std::span<T>, std::span<const T>, std::span<T>, const SgdConfig<T>&);

RESABLATE_INSTANTIATE_OPS(float)
RESABLATE_INSTANTIATE_OPS(double)

#undef RESABLATE_INSTANTIATE_OPS

}  // namespace resablate
