#pragma once

#include <cstdint>
#include <span>

#include "resablate/model.hpp"

namespace resablate {

// One train-mode forward plus reverse pass. BN running statistics in `model` are
// updated; `grads` (same structure, see zeros_like) is overwritten with the gradients
// of the returned loss.
float classification_step(Model& model, const Tensor<float>& batch,
                          std::span<const std::int32_t> labels, Model& grads);

// Sigmoid foreground probability with the soft-Dice loss over the batch.
float segmentation_step(Model& model, const Tensor<float>& batch, const Tensor<float>& masks,
                        Model& grads);

}  // namespace resablate
