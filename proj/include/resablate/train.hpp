#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "resablate/data.hpp"
#include "resablate/model.hpp"

namespace resablate {

enum class LrSchedule { constant, step_decay };

struct Hyperparams {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  float lr = 0.05f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule = LrSchedule::step_decay;
  std::size_t decay_epoch = 20;  // lr x 0.1 from this epoch on (step_decay only)

  void validate() const;
  float lr_at(std::size_t epoch) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_metric = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Seeded-shuffle minibatch SGD. BN in train mode for updates, eval mode for the test
// metric. A trailing batch of one sample is dropped.
TrainResult train(Model model, const LabeledDataset& train_set, const LabeledDataset& test_set,
                  const Hyperparams& hyper, const EpochCallback& on_epoch = {});

// Accuracy (classification) or mean per-image Dice at probability 0.5 (segmentation),
// eval mode.
double evaluate(const Model& model, const LabeledDataset& dataset);

// Per-sample predictions in eval mode: argmax class, or binarized masks.
std::vector<std::int32_t> predict_classes(const Model& model, const Tensor<float>& images);
Tensor<float> predict_masks(const Model& model, const Tensor<float>& images);

}  // namespace resablate
