#include "resablate/train.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "resablate/backprop.hpp"

namespace resablate {

void Hyperparams::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for train-mode batch norm");
  if (!(lr >= 0.0f) || !(momentum >= 0.0f) || !(weight_decay >= 0.0f)) {
    throw ConfigError("lr, momentum and weight_decay must be non-negative");
  }
}

float Hyperparams::lr_at(std::size_t epoch) const {
  if (lr_schedule == LrSchedule::step_decay && epoch >= decay_epoch) return lr * 0.1f;
  return lr;
}

namespace {

constexpr std::size_t kEvalChunk = 128;

void check_kind(const Model& model, const LabeledDataset& ds) {
  const bool classify = model.config.task == Task::classify;
  if (classify != (ds.kind == DatasetKind::classification)) {
    throw ConfigError("dataset kind does not match the model task");
  }
}

Tensor<float> gather_images(const Tensor<float>& images, std::span<const std::size_t> idx) {
  const Shape4& s = images.shape();
  Tensor<float> out({idx.size(), s.c, s.h, s.w});
  const std::size_t per = s.c * s.plane();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = images.plane(idx[i], 0);
    std::copy(src, src + per, out.plane(i, 0));
  }
  return out;
}

Tensor<float> slice_images(const Tensor<float>& images, std::size_t begin, std::size_t end) {
  const Shape4& s = images.shape();
  Tensor<float> out({end - begin, s.c, s.h, s.w});
  std::copy(images.plane(begin, 0), images.plane(begin, 0) + (end - begin) * s.c * s.plane(),
            out.plane(0, 0));
  return out;
}

}  // namespace

std::vector<std::int32_t> predict_classes(const Model& model, const Tensor<float>& images) {
  std::vector<std::int32_t> out;
  out.reserve(images.shape().n);
  for (std::size_t b = 0; b < images.shape().n; b += kEvalChunk) {
    const std::size_t e = std::min(images.shape().n, b + kEvalChunk);
    const Tensor<float> logits = forward(model, slice_images(images, b, e));
    const std::size_t k = logits.shape().c;
    for (std::size_t n = 0; n < e - b; ++n) {
      const float* z = logits.data().data() + n * k;
      out.push_back(static_cast<std::int32_t>(std::max_element(z, z + k) - z));
    }
  }
  return out;
}

Tensor<float> predict_masks(const Model& model, const Tensor<float>& images) {
  const Shape4& s = images.shape();
  Tensor<float> out({s.n, 1, s.h, s.w});
  for (std::size_t b = 0; b < s.n; b += kEvalChunk) {
    const std::size_t e = std::min(s.n, b + kEvalChunk);
    const Tensor<float> logits = forward(model, slice_images(images, b, e));
    // sigmoid(z) > 0.5 exactly when z > 0
    float* dst = out.plane(b, 0);
    for (std::size_t i = 0; i < logits.size(); ++i) dst[i] = logits[i] > 0.0f ? 1.0f : 0.0f;
  }
  return out;
}

double evaluate(const Model& model, const LabeledDataset& dataset) {
  check_kind(model, dataset);
  const std::size_t n = dataset.size();
  if (n == 0) throw DataError("cannot evaluate on an empty dataset");
  if (model.config.task == Task::classify) {
    const std::vector<std::int32_t> pred = predict_classes(model, dataset.images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += (pred[i] == dataset.labels[i]);
    return static_cast<double>(correct) / static_cast<double>(n);
  }
  const Tensor<float> masks = predict_masks(model, dataset.images);
  const std::size_t plane = masks.shape().plane();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += dice(std::span<const float>(masks.plane(i, 0), plane),
                  std::span<const float>(dataset.masks.plane(i, 0), plane));
  }
  return total / static_cast<double>(n);
}

TrainResult train(Model model, const LabeledDataset& train_set, const LabeledDataset& test_set,
                  const Hyperparams& hyper, const EpochCallback& on_epoch) {
  hyper.validate();
  check_kind(model, train_set);
  check_kind(model, test_set);
  const std::size_t n = train_set.size();
  if (n < 2) throw DataError("training set needs at least two samples");
  const bool classify = model.config.task == Task::classify;

  Model grads = zeros_like(model);
  Model velocity = zeros_like(model);
  std::vector<std::span<float>> params = trainable_parameters(model);
  std::vector<std::span<float>> vel = trainable_parameters(velocity);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(hyper.seed);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const SgdConfig<float> sgd{hyper.lr_at(epoch), hyper.momentum, hyper.weight_decay};
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += hyper.batch_size) {
      const std::size_t e = std::min(n, b + hyper.batch_size);
      if (e - b < 2) break;
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      const Tensor<float> batch = gather_images(train_set.images, idx);
      float loss = 0.0f;
      if (classify) {
        std::vector<std::int32_t> labels;
        labels.reserve(idx.size());
        for (std::size_t i : idx) labels.push_back(train_set.labels[i]);
        loss = classification_step(model, batch, labels, grads);
      } else {
        const Shape4& ms = train_set.masks.shape();
        Tensor<float> masks({idx.size(), 1, ms.h, ms.w});
        for (std::size_t i = 0; i < idx.size(); ++i) {
          std::copy(train_set.masks.plane(idx[i], 0), train_set.masks.plane(idx[i], 0) + ms.plane(),
                    masks.plane(i, 0));
        }
        loss = segmentation_step(model, batch, masks, grads);
      }
      const std::vector<std::span<float>> g = trainable_parameters(grads);
      for (std::size_t p = 0; p < params.size(); ++p) {
        sgd_step<float>(params[p], g[p], vel[p], sgd);
      }
      loss_sum += loss;
      ++batches;
    }
    EpochRecord rec{epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0,
                    evaluate(model, test_set)};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace resablate
