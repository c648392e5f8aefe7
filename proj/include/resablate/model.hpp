#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "resablate/ops.hpp"
#include "resablate/tensor.hpp"

namespace resablate {

enum class Task { classify, segment };

std::string_view to_string(Task task);
Task parse_task(std::string_view text);

struct ResNetConfig {
  std::vector<std::size_t> stage_widths{8, 16, 32, 64};
  std::vector<std::size_t> units_per_stage{1, 1, 1, 1};
  std::size_t input_channels = 3;
  std::size_t input_size = 32;
  // Segmentation models predict a single foreground logit, so this must be 1 there.
  std::size_t num_classes = 10;
  Task task = Task::classify;
  std::uint64_t seed = 0;

  void validate() const;
  // Canonical one-line JSON with fixed key order; used in checkpoints and reports.
  std::string to_text() const;
  static ResNetConfig from_text(std::string_view text);

  friend bool operator==(const ResNetConfig&, const ResNetConfig&) = default;
};

enum class Slot { stem, conv1, conv2, proj, head };

// Stable coordinate of one kernel. Stem and head carry no stage/unit; head kernels are
// numbered by `index` in forward order.
struct LayerAddress {
  Slot slot = Slot::stem;
  int stage = -1;
  int unit = -1;
  int index = 0;

  static LayerAddress stem() { return {Slot::stem, -1, -1, 0}; }
  static LayerAddress head(int i = 0) { return {Slot::head, -1, -1, i}; }
  static LayerAddress in_unit(int stage, int unit, Slot slot) { return {slot, stage, unit, 0}; }

  bool in_residual_unit() const {
    return slot == Slot::conv1 || slot == Slot::conv2 || slot == Slot::proj;
  }

  // "stem", "s1.u0.conv1", "head.0"
  std::string str() const;
  static LayerAddress parse(std::string_view text);

  friend bool operator==(const LayerAddress&, const LayerAddress&) = default;
};

// Forward order: stem < units in (stage, unit, conv1, conv2, proj) order < head.
std::strong_ordering operator<=>(const LayerAddress& a, const LayerAddress& b);

struct ConvBn {
  ConvKernel<float> conv;
  BatchNormState<float> bn;
};

// Residual unit; a folded slot has its ConvBn removed and a stored constant in its place.
struct ResidualUnit {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  bool projection = false;

  std::optional<ConvBn> conv1;
  std::optional<ConvBn> conv2;
  std::optional<ConvBn> proj;

  // conv1 folded: relu of its BN constant, the per-channel input to conv2.
  std::optional<std::vector<float>> folded_conv1;
  // conv2 folded: the whole branch reduces to this per-channel constant.
  std::optional<std::vector<float>> folded_conv2;
  // proj folded: the shortcut reduces to this per-channel constant.
  std::optional<std::vector<float>> folded_proj;
};

struct ClassifierHead {
  ConvKernel<float> fc;  // num_classes x C x 1 x 1
  std::vector<float> bias;
};

struct SegmentationHead {
  std::vector<ConvBn> up;  // each preceded by a nearest 2x upsample, followed by relu
  ConvKernel<float> out;   // 1x1 to the foreground logit
  std::vector<float> bias;
};

struct Model {
  ResNetConfig config;
  ConvBn stem;
  std::vector<std::vector<ResidualUnit>> stages;
  ClassifierHead classifier;
  SegmentationHead segmenter;

  const ResidualUnit& unit(int stage, int unit) const;
  ResidualUnit& unit(int stage, int unit);

  bool has_address(const LayerAddress& address) const;
  // Throws ConfigError for unknown or folded-away addresses.
  const ConvKernel<float>& kernel(const LayerAddress& address) const;
  ConvKernel<float>& kernel(const LayerAddress& address);
  // Null for head kernels without batch norm.
  const BatchNormState<float>* batchnorm_of(const LayerAddress& address) const;

  std::size_t parameter_count() const;
};

struct LayerInfo {
  LayerAddress address;
  bool is_feature_decomposition = false;
  std::size_t channels_in = 0;
  std::size_t channels_out = 0;
};

struct LayerBlock {
  int stage = 0;
  std::vector<LayerAddress> members;
};

Model build_model(const ResNetConfig& config);

// Every kernel once, in forward order. Folded-away kernels are omitted.
std::vector<LayerInfo> list_layers(const Model& model);
std::vector<LayerBlock> partition_layer_blocks(const Model& model);
// All stem/conv1/conv2/proj addresses (head excluded).
std::vector<LayerAddress> sweepable_addresses(const Model& model);

// sigma(x + BN(sigma(BN(x * w')) * w'')); identity units only.
Tensor<float> residual_forward_identity(const Tensor<float>& x, const ResidualUnit& unit);
Tensor<float> residual_forward_identity(const Tensor<float>& x, ResidualUnit& unit, BnMode mode);
// sigma(BN(x * w_1x1) + BN(sigma(BN(x * w')) * w'')); projection units only.
Tensor<float> residual_forward_projection(const Tensor<float>& x, const ResidualUnit& unit);
Tensor<float> residual_forward_projection(const Tensor<float>& x, ResidualUnit& unit, BnMode mode);
// Dispatches on the unit kind; handles folded slots. Eval mode.
Tensor<float> residual_forward(const Tensor<float>& x, const ResidualUnit& unit);

Tensor<float> stem_forward(const Tensor<float>& x, const ConvBn& stem);
Tensor<float> head_forward(const Model& model, const Tensor<float>& features);

// Eval-mode forward; a pure function of weights and input. Classification returns
// N x classes x 1 x 1 logits, segmentation N x 1 x H x W foreground logits.
Tensor<float> forward(const Model& model, const Tensor<float>& batch);
// Same with explicit mode; train mode updates BN running statistics in `model`.
Tensor<float> forward(Model& model, const Tensor<float>& batch, BnMode mode);

// Weight-shaped views over every trainable array (BN running statistics excluded), in a
// fixed traversal order. Two models of identical structure yield parallel lists.
std::vector<std::span<float>> trainable_parameters(Model& model);

// Same structure with every array zero-filled.
Model zeros_like(const Model& model);

// Fingerprint of weights, statistics and config (hex string).
std::string fingerprint(const Model& model);

}  // namespace resablate
