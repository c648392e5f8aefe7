#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "resablate/tensor.hpp"

namespace resablate {

enum class DatasetKind { classification, segmentation };
enum class Split { train, test };

// Generation parameters; serialized into reports.
struct DatasetDescriptor {
  std::string name;  // "synthetic-classification", "synthetic-segmentation", "cifar10"
  std::uint64_t seed = 0;
  std::size_t count = 0;  // per class for classification, total for segmentation
  std::size_t classes = 0;
  std::size_t size = 32;

  std::string to_text() const;
  friend bool operator==(const DatasetDescriptor&, const DatasetDescriptor&) = default;
};

struct LabeledDataset {
  DatasetKind kind = DatasetKind::classification;
  Split split = Split::train;
  DatasetDescriptor descriptor;
  Tensor<float> images;               // N x C x H x W
  std::vector<std::int32_t> labels;   // classification
  Tensor<float> masks;                // segmentation, N x 1 x H x W with values in {0, 1}

  std::size_t size() const { return images.shape().n; }
  // Copies the listed samples into a new dataset (order preserved).
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;
};

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

// Ten parametric pattern families (oriented gratings and blob constellations) under
// random contrast, brightness, tint and noise. Train and test use different sub-seeds.
DatasetPair gen_classification_dataset(std::uint64_t seed, std::size_t n_per_class,
                                       std::size_t classes = 10, std::size_t size = 32,
                                       std::size_t test_per_class = 0);

// 1-3 ellipses/rectangles on a textured background; foreground covers 10-40% of pixels.
DatasetPair gen_segmentation_dataset(std::uint64_t seed, std::size_t n, std::size_t size = 32,
                                     std::size_t test_n = 0);

// CIFAR-10 binary batches: 3073-byte records (label byte + 3072 channel-major pixels).
// Loads data_batch_1..5 and test_batch from `dir`, normalized with train statistics.
DatasetPair load_cifar10(const std::filesystem::path& dir);
// Raw parse of one batch file, pixels scaled to [0, 1].
LabeledDataset read_cifar10_batch(const std::filesystem::path& file);

// Dataset selection shared by the CLI and the acceptance runs. Counts are totals;
// classification splits them evenly over the classes.
struct DataOptions {
  std::uint64_t seed = 0;
  std::size_t train_count = 2000;
  std::size_t test_count = 500;
  std::filesystem::path cifar_dir;  // non-empty: load CIFAR-10 instead of synthesizing
};

DatasetPair make_datasets(bool segmentation, std::size_t classes, std::size_t size,
                          const DataOptions& options);

}  // namespace resablate
