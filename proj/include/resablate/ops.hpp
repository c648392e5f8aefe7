#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "resablate/tensor.hpp"

namespace resablate {

enum class BnMode { train, eval };

template <typename T>
Shape4 conv2d_output_shape(const Shape4& input, const ConvKernel<T>& kernel);

// Cross-correlation with zero padding (im2col + GEMM).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvKernel<T>& kernel);

template <typename T>
struct ConvGrads {
  Tensor<T> grad_input;
  std::vector<T> grad_kernel;
};

template <typename T>
ConvGrads<T> conv2d_grad(const Tensor<T>& input, const ConvKernel<T>& kernel,
                         const Tensor<T>& grad_out);

// Per-channel batch statistics kept from a train-mode forward for the backward pass.
template <typename T>
struct BnCache {
  Tensor<T> normalized;
  std::vector<T> inv_std;
};

// Train mode normalizes with batch statistics and updates the running statistics in
// `state`; eval mode reads the running statistics only.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, BnMode mode,
                    BnCache<T>* cache = nullptr);

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& input, const BatchNormState<T>& state);

template <typename T>
struct BnGrads {
  Tensor<T> grad_input;
  std::vector<T> grad_gamma;
  std::vector<T> grad_beta;
};

template <typename T>
BnGrads<T> batchnorm_train_backward(const BnCache<T>& cache, std::span<const T> gamma,
                                    const Tensor<T>& grad_out);

// Recomputes batch statistics from `input`; running statistics are not touched.
template <typename T>
BnGrads<T> batchnorm_train_grad(const Tensor<T>& input, const BatchNormState<T>& state,
                                const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// Gradient mask is taken from `activation`; either the relu input or its output works.
template <typename T>
Tensor<T> relu_grad(const Tensor<T>& activation, const Tensor<T>& grad_out);

template <typename T>
void relu_inplace(Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// x[n, c, :, :] += constant[c]
template <typename T>
Tensor<T> add_channel_constant(const Tensor<T>& x, std::span<const T> constant);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avg_pool_grad(const Shape4& input_shape, const Tensor<T>& grad_out);

// Fully-connected map over each sample's flattened features. weight is (out x in),
// result is N x out x 1 x 1.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, std::span<const T> weight, std::span<const T> bias,
                 std::size_t out_features);

template <typename T>
struct LinearGrads {
  Tensor<T> grad_input;
  std::vector<T> grad_weight;
  std::vector<T> grad_bias;
};

template <typename T>
LinearGrads<T> linear_grad(const Tensor<T>& input, std::span<const T> weight,
                           std::size_t out_features, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input);

template <typename T>
Tensor<T> upsample_nearest2x_grad(const Tensor<T>& grad_out);

template <typename T>
struct LossAndGrad {
  T loss = T(0);
  Tensor<T> grad;
};

// Logits are N x K (trailing extents must be 1). Mean over the batch.
template <typename T>
LossAndGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels);

// Hard Dice of two binary masks (values > 0.5 count as foreground). Both empty gives 1.
double dice(std::span<const float> pred_mask, std::span<const float> true_mask);

template <typename T>
double dice(const Tensor<T>& pred_mask, const Tensor<T>& true_mask);

// 1 - (2 sum(pq) + s) / (sum(p) + sum(q) + s), smoothing s = 1, over the whole tensor.
template <typename T>
LossAndGrad<T> soft_dice_loss(const Tensor<T>& pred_prob, const Tensor<T>& true_mask);

template <typename T>
struct SgdConfig {
  T lr = T(0.05);
  T momentum = T(0.9);
  T weight_decay = T(5e-4);
};

// v <- momentum * v + grad + weight_decay * param ; param <- param - lr * v
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity,
              const SgdConfig<T>& config);

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* what);

}  // namespace resablate
