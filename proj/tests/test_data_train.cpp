#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "resablate/train.hpp"
#include "support.hpp"

using namespace resablate;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

ResNetConfig tiny_config(Task task, std::size_t size = 16) {
  ResNetConfig c;
  c.stage_widths = {4, 8};
  c.units_per_stage = {1, 1};
  c.input_size = size;
  c.task = task;
  c.num_classes = task == Task::segment ? 1 : 10;
  return c;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "resablate_data_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(ClassificationData, BalancedAndDeterministic) {
  const DatasetPair a = gen_classification_dataset(3, 20);
  const DatasetPair b = gen_classification_dataset(3, 20);
  EXPECT_EQ(a.train.size(), 200u);
  EXPECT_EQ(a.test.size(), 50u);
  std::map<int, int> counts;
  for (auto l : a.train.labels) ++counts[l];
  EXPECT_EQ(counts.size(), 10u);
  for (auto [label, n] : counts) EXPECT_EQ(n, 20) << label;
  EXPECT_TRUE(same_bits(a.train.images, b.train.images));
  EXPECT_EQ(a.train.labels, b.train.labels);
  EXPECT_FALSE(same_bits(a.train.images, gen_classification_dataset(4, 20).train.images));
}

TEST(ClassificationData, SplitsShareNoImage) {
  const DatasetPair d = gen_classification_dataset(5, 10);
  const std::size_t per = d.train.images.shape().size() / d.train.size();
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    for (std::size_t j = 0; j < d.train.size(); ++j) {
      EXPECT_FALSE(std::equal(d.test.images.data().begin() + i * per, d.test.images.data().begin() + (i + 1) * per,
                              d.train.images.data().begin() + j * per));
    }
  }
}

TEST(ClassificationData, NormalizedPerChannel) {
  const DatasetPair d = gen_classification_dataset(6, 30);
  const Shape4 s = d.train.images.shape();
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double v = d.train.images.plane(n, c)[i];
        sum += v;
        sq += v * v;
      }
    const double m = sum / (s.n * s.plane());
    EXPECT_NEAR(m, 0.0, 1e-3);
    EXPECT_NEAR(sq / (s.n * s.plane()) - m * m, 1.0, 1e-2);
  }
}

TEST(ClassificationData, GlobalMeanThresholdIsNearChance) {
  // Nearest class centroid on the per-image mean pixel value: the best a single
  // global-brightness feature can do with one threshold per class boundary.
  const DatasetPair d = gen_classification_dataset(7, 200);
  auto image_mean = [](const LabeledDataset& ds, std::size_t i) {
    const std::size_t per = ds.images.shape().size() / ds.size();
    const auto span = ds.images.data().subspan(i * per, per);
    return std::accumulate(span.begin(), span.end(), 0.0) / per;
  };
  std::vector<double> centroid(10, 0.0), count(10, 0.0);
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    centroid[d.train.labels[i]] += image_mean(d.train, i);
    count[d.train.labels[i]] += 1;
  }
  for (int k = 0; k < 10; ++k) centroid[k] /= count[k];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const double m = image_mean(d.test, i);
    int best = 0;
    for (int k = 1; k < 10; ++k)
      if (std::abs(m - centroid[k]) < std::abs(m - centroid[best])) best = k;
    correct += best == d.test.labels[i];
  }
  EXPECT_LT(static_cast<double>(correct) / d.test.size(), 0.20);
}

TEST(SegmentationData, ForegroundFractionAndAllForegroundDice) {
  const DatasetPair d = gen_segmentation_dataset(2, 60, 32, 20);
  EXPECT_EQ(d.train.size(), 60u);
  EXPECT_EQ(d.test.size(), 20u);
  const std::size_t plane = d.train.masks.shape().plane();
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const auto m = d.train.masks.data().subspan(i * plane, plane);
    const double f = std::accumulate(m.begin(), m.end(), 0.0) / plane;
    EXPECT_GE(f, 0.10);
    EXPECT_LE(f, 0.40);
    for (float v : m) EXPECT_TRUE(v == 0.0f || v == 1.0f);
    const std::vector<float> all(plane, 1.0f);
    EXPECT_NEAR(dice(all, m), 2 * f / (f + 1), 1e-12);
  }
  EXPECT_TRUE(same_bits(d.train.images, gen_segmentation_dataset(2, 60, 32, 20).train.images));
}

TEST(Cifar, WriteThenReadOracle) {
  const fs::path dir = temp_dir("cifar");
  std::mt19937_64 rng(1);
  std::vector<std::uint8_t> bytes;
  std::vector<int> labels;
  for (int r = 0; r < 7; ++r) {
    labels.push_back(static_cast<int>(rng() % 10));
    bytes.push_back(static_cast<std::uint8_t>(labels.back()));
    for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>(rng()));
  }
  {
    std::ofstream out(dir / "data_batch_1.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const LabeledDataset d = read_cifar10_batch(dir / "data_batch_1.bin");
  ASSERT_EQ(d.size(), 7u);
  for (int r = 0; r < 7; ++r) {
    EXPECT_EQ(d.labels[r], labels[r]);
    for (int i = 0; i < 3072; i += 97) {
      const std::size_t c = i / 1024, y = (i % 1024) / 32, x = i % 32;
      EXPECT_FLOAT_EQ(d.images.at(r, c, y, x), bytes[r * 3073 + 1 + i] / 255.0f);
    }
  }
  bytes.push_back(0);
  {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(read_cifar10_batch(dir / "bad.bin"), FormatError);
  bytes.pop_back();
  bytes[0] = 10;
  {
    std::ofstream out(dir / "label.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(read_cifar10_batch(dir / "label.bin"), DataError);
}

TEST(Training, ZeroLearningRateKeepsWeights) {
  const DatasetPair d = gen_classification_dataset(1, 4, 10, 16, 2);
  const Model init = build_model(tiny_config(Task::classify));
  Hyperparams h;
  h.epochs = 2;
  h.batch_size = 8;
  h.lr = 0.0f;
  const TrainResult r = train(init, d.train, d.test, h);
  for (const LayerAddress& a : sweepable_addresses(init)) EXPECT_EQ(r.model.kernel(a).weights, init.kernel(a).weights);
  EXPECT_EQ(r.model.classifier.fc.weights, init.classifier.fc.weights);
  EXPECT_EQ(r.history.size(), 2u);
}

TEST(Training, SameSeedSameRun) {
  for (Task task : {Task::classify, Task::segment}) {
    const DatasetPair d = task == Task::classify ? gen_classification_dataset(2, 4, 10, 16, 2)
                                                 : gen_segmentation_dataset(2, 24, 16, 8);
    Hyperparams h;
    h.epochs = 2;
    h.batch_size = 8;
    h.seed = 5;
    const TrainResult a = train(build_model(tiny_config(task)), d.train, d.test, h);
    const TrainResult b = train(build_model(tiny_config(task)), d.train, d.test, h);
    EXPECT_EQ(fingerprint(a.model), fingerprint(b.model));
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
      EXPECT_EQ(a.history[i].test_metric, b.history[i].test_metric);
    }
    h.seed = 6;
    EXPECT_NE(fingerprint(train(build_model(tiny_config(task)), d.train, d.test, h).model), fingerprint(a.model));
  }
}

TEST(Training, RejectsBadInputs) {
  const DatasetPair d = gen_classification_dataset(1, 2, 10, 16, 2);
  Hyperparams h;
  h.batch_size = 1;
  EXPECT_THROW(train(build_model(tiny_config(Task::classify)), d.train, d.test, h), ConfigError);
  h.batch_size = 8;
  EXPECT_THROW(train(build_model(tiny_config(Task::segment)), d.train, d.test, h), ConfigError);
  EXPECT_THROW(evaluate(build_model(tiny_config(Task::classify)), LabeledDataset{}), DataError);
}

TEST(Evaluate, ChancePerfectAndOrderInvariance) {
  const DatasetPair d = gen_classification_dataset(8, 5, 10, 16, 5);
  Model m = build_model(tiny_config(Task::classify));
  // Constant single-class predictor.
  std::fill(m.classifier.fc.weights.begin(), m.classifier.fc.weights.end(), 0.0f);
  std::fill(m.classifier.bias.begin(), m.classifier.bias.end(), 0.0f);
  m.classifier.bias[3] = 1.0f;
  EXPECT_DOUBLE_EQ(evaluate(m, d.test), 0.10);

  // Relabel with the model's own predictions: a perfect predictor.
  const Model r = build_model(tiny_config(Task::classify));
  LabeledDataset own = d.test;
  own.labels = predict_classes(r, own.images);
  EXPECT_DOUBLE_EQ(evaluate(r, own), 1.0);

  // Brute-force recomputation and permutation invariance.
  const auto pred = predict_classes(r, d.test.images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == d.test.labels[i];
  EXPECT_DOUBLE_EQ(evaluate(r, d.test), static_cast<double>(hits) / pred.size());
  std::vector<std::size_t> order(d.test.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(3);
  std::shuffle(order.begin(), order.end(), rng);
  EXPECT_DOUBLE_EQ(evaluate(r, d.test.subset(order)), evaluate(r, d.test));
}

TEST(Evaluate, SegmentationIsMeanPerImageDice) {
  const DatasetPair d = gen_segmentation_dataset(4, 8, 16, 6);
  ResNetConfig c = tiny_config(Task::segment);
  const Model s = build_model(c);
  const Tensor<float> masks = predict_masks(s, d.test.images);
  const std::size_t plane = masks.shape().plane();
  double total = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    total += dice(masks.data().subspan(i * plane, plane), d.test.masks.data().subspan(i * plane, plane));
  }
  EXPECT_DOUBLE_EQ(evaluate(s, d.test), total / d.test.size());
  LabeledDataset own = d.test;
  own.masks = masks;
  EXPECT_DOUBLE_EQ(evaluate(s, own), 1.0);
}
