#include "resablate/data.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>
#include <cstdlib>

namespace resablate {

std::string DatasetDescriptor::to_text() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["seed"] = seed;
  j["count"] = count;
  j["classes"] = classes;
  j["size"] = size;
  return j.dump();
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.kind = kind;
  out.split = split;
  out.descriptor = descriptor;
  const Shape4& s = images.shape();
  out.images = Tensor<float>({indices.size(), s.c, s.h, s.w});
  const std::size_t per = s.c * s.plane();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* src = images.plane(indices[i], 0);
    std::copy(src, src + per, out.images.plane(i, 0));
  }
  if (kind == DatasetKind::classification) {
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  } else {
    const Shape4& m = masks.shape();
    out.masks = Tensor<float>({indices.size(), 1, m.h, m.w});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const float* src = masks.plane(indices[i], 0);
      std::copy(src, src + m.plane(), out.masks.plane(i, 0));
    }
  }
  return out;
}

namespace {

constexpr std::uint32_t kTrainStream = 1;
constexpr std::uint32_t kTestStream = 2;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t stream, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream,
                    tag};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Per-channel standardization with statistics taken from `reference`.
void normalize_channels(const Tensor<float>& reference, std::initializer_list<Tensor<float>*> targets) {
  const Shape4& s = reference.shape();
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const float* p = reference.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        sum += p[i];
        sq += static_cast<double>(p[i]) * p[i];
      }
    }
    const double count = static_cast<double>(s.n * s.plane());
    const double mean = sum / count;
    const double stdev = std::sqrt(std::max(sq / count - mean * mean, 1e-12));
    for (Tensor<float>* t : targets) {
      for (std::size_t n = 0; n < t->shape().n; ++n) {
        float* p = t->plane(n, c);
        for (std::size_t i = 0; i < t->shape().plane(); ++i) {
          p[i] = static_cast<float>((p[i] - mean) / stdev);
        }
      }
    }
  }
}

struct Offset {
  double dx;
  double dy;
};

// Blob constellations for pattern families 5..9.
const std::array<std::vector<Offset>, 5> kConstellations = {{
    {{-8, 0}, {0, 0}, {8, 0}},
    {{0, -8}, {0, 0}, {0, 8}},
    {{-7, -7}, {0, 0}, {7, 7}},
    {{-7, 7}, {0, 0}, {7, -7}},
    {{-6, -6}, {6, -6}, {-6, 6}, {6, 6}},
}};

void render_pattern(std::size_t family, std::size_t size, std::mt19937_64& rng,
                    std::vector<double>& pattern) {
  const double s = static_cast<double>(size);
  const double scale = s / 32.0;
  pattern.assign(size * size, 0.0);
  if (family < 5) {
    const double theta = static_cast<double>(family) * std::numbers::pi / 5.0 + uniform(rng, -0.1, 0.1);
    const double cycles = 3.0 + 0.5 * static_cast<double>(family) + uniform(rng, -0.25, 0.25);
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double cx = std::cos(theta);
    const double cy = std::sin(theta);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (static_cast<double>(x) * cx + static_cast<double>(y) * cy) / s;
        pattern[y * size + x] = std::sin(2.0 * std::numbers::pi * cycles * u + phase);
      }
    }
    return;
  }
  const auto& blobs = kConstellations[family - 5];
  const double ox = s / 2.0 + uniform(rng, -5.0, 5.0) * scale;
  const double oy = s / 2.0 + uniform(rng, -5.0, 5.0) * scale;
  const double sigma = 2.2 * scale;
  for (const Offset& b : blobs) {
    const double bx = ox + b.dx * scale + uniform(rng, -0.75, 0.75);
    const double by = oy + b.dy * scale + uniform(rng, -0.75, 0.75);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
        pattern[y * size + x] += 2.0 * std::exp(-d2 / (2.0 * sigma * sigma));
      }
    }
  }
}

LabeledDataset make_classification_split(std::uint64_t seed, std::uint32_t stream,
                                         std::size_t n_per_class, std::size_t classes,
                                         std::size_t size, Split split) {
  LabeledDataset ds;
  ds.kind = DatasetKind::classification;
  ds.split = split;
  const std::size_t total = n_per_class * classes;
  ds.images = Tensor<float>({total, 3, size, size});
  ds.labels.resize(total);
  std::vector<double> pattern;
  std::normal_distribution<double> noise(0.0, 0.35);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t label = i % classes;
    std::mt19937_64 rng = make_rng(seed, stream, static_cast<std::uint32_t>(i));
    render_pattern(label, size, rng, pattern);
    const double contrast = uniform(rng, 0.7, 1.3);
    const double brightness = uniform(rng, -0.6, 0.6);
    for (std::size_t c = 0; c < 3; ++c) {
      const double tint = uniform(rng, 0.6, 1.0);
      float* p = ds.images.plane(i, c);
      for (std::size_t k = 0; k < size * size; ++k) {
        p[k] = static_cast<float>(contrast * tint * pattern[k] + brightness + noise(rng));
      }
    }
    ds.labels[i] = static_cast<std::int32_t>(label);
  }
  return ds;
}

bool render_scene(std::size_t size, std::mt19937_64& rng, std::vector<double>& image,
                  std::vector<float>& mask) {
  const double s = static_cast<double>(size);
  const double scale = s / 32.0;
  mask.assign(size * size, 0.0f);
  const int shapes = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int k = 0; k < shapes; ++k) {
    const bool ellipse = uniform(rng, 0.0, 1.0) < 0.5;
    const double cx = uniform(rng, 4.0 * scale, s - 4.0 * scale);
    const double cy = uniform(rng, 4.0 * scale, s - 4.0 * scale);
    const double rx = uniform(rng, 3.0, 9.0) * scale;
    const double ry = uniform(rng, 3.0, 9.0) * scale;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
        const bool inside = ellipse ? (dx * dx + dy * dy <= 1.0)
                                    : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
        if (inside) mask[y * size + x] = 1.0f;
      }
    }
  }
  double fg = 0.0;
  for (float m : mask) fg += m;
  const double fraction = fg / (s * s);
  if (fraction < 0.10 || fraction > 0.40) return false;

  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double cycles = uniform(rng, 2.0, 6.0);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double fg_cycles = uniform(rng, 5.0, 8.0);
  image.assign(size * size, 0.0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (x * std::cos(theta) + y * std::sin(theta)) / s;
      const double background = 0.3 * std::sin(2.0 * std::numbers::pi * cycles * u + phase);
      const double texture = 0.2 * std::sin(2.0 * std::numbers::pi * fg_cycles * (x + y) / s);
      image[y * size + x] = mask[y * size + x] > 0.5f ? 1.0 + texture : background;
    }
  }
  return true;
}

LabeledDataset make_segmentation_split(std::uint64_t seed, std::uint32_t stream, std::size_t n,
                                       std::size_t size, Split split) {
  LabeledDataset ds;
  ds.kind = DatasetKind::segmentation;
  ds.split = split;
  ds.images = Tensor<float>({n, 3, size, size});
  ds.masks = Tensor<float>({n, 1, size, size});
  std::vector<double> image;
  std::vector<float> mask;
  std::normal_distribution<double> noise(0.0, 0.25);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng = make_rng(seed, stream + 16, static_cast<std::uint32_t>(i));
    while (!render_scene(size, rng, image, mask)) {
    }
    std::copy(mask.begin(), mask.end(), ds.masks.plane(i, 0));
    const double contrast = uniform(rng, 0.8, 1.2);
    const double brightness = uniform(rng, -0.3, 0.3);
    for (std::size_t c = 0; c < 3; ++c) {
      const double tint = uniform(rng, 0.7, 1.0);
      float* p = ds.images.plane(i, c);
      for (std::size_t k = 0; k < size * size; ++k) {
        p[k] = static_cast<float>(contrast * tint * image[k] + brightness + noise(rng));
      }
    }
  }
  return ds;
}

}  // namespace

DatasetPair gen_classification_dataset(std::uint64_t seed, std::size_t n_per_class,
                                       std::size_t classes, std::size_t size,
                                       std::size_t test_per_class) {
  if (n_per_class < 2) throw ConfigError("n_per_class must be at least 2");
  if (classes < 2 || classes > 10) throw ConfigError("classes must lie in [2, 10]");
  if (size < 8) throw ConfigError("image size must be at least 8");
  if (test_per_class == 0) test_per_class = std::max<std::size_t>(n_per_class / 4, 2);
  DatasetPair pair{
      make_classification_split(seed, kTrainStream, n_per_class, classes, size, Split::train),
      make_classification_split(seed, kTestStream, test_per_class, classes, size, Split::test)};
  normalize_channels(pair.train.images, {&pair.test.images, &pair.train.images});
  pair.train.descriptor = {"synthetic-classification", seed, n_per_class, classes, size};
  pair.test.descriptor = {"synthetic-classification", seed, test_per_class, classes, size};
  return pair;
}

DatasetPair gen_segmentation_dataset(std::uint64_t seed, std::size_t n, std::size_t size,
                                     std::size_t test_n) {
  if (n < 2) throw ConfigError("segmentation dataset needs at least 2 images");
  if (size < 8) throw ConfigError("image size must be at least 8");
  if (test_n == 0) test_n = std::max<std::size_t>(n / 4, 2);
  DatasetPair pair{make_segmentation_split(seed, kTrainStream, n, size, Split::train),
                   make_segmentation_split(seed, kTestStream, test_n, size, Split::test)};
  normalize_channels(pair.train.images, {&pair.test.images, &pair.train.images});
  pair.train.descriptor = {"synthetic-segmentation", seed, n, 1, size};
  pair.test.descriptor = {"synthetic-segmentation", seed, test_n, 1, size};
  return pair;
}

LabeledDataset read_cifar10_batch(const std::filesystem::path& file) {
  constexpr std::size_t kRecord = 3073;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 batch " + file.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw FormatError("CIFAR-10 batch " + file.string() + " has " + std::to_string(bytes.size()) +
                      " bytes, not a multiple of 3073");
  }
  const std::size_t n = bytes.size() / kRecord;
  LabeledDataset ds;
  ds.kind = DatasetKind::classification;
  ds.images = Tensor<float>({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kRecord;
    if (rec[0] > 9) {
      throw DataError("CIFAR-10 label " + std::to_string(rec[0]) + " out of range in " + file.string());
    }
    ds.labels[i] = rec[0];
    float* dst = ds.images.plane(i, 0);
    for (std::size_t k = 0; k < 3072; ++k) dst[k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
  ds.descriptor = {"cifar10", 0, n, 10, 32};
  return ds;
}

namespace {

LabeledDataset concat(std::vector<LabeledDataset> parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  LabeledDataset out;
  out.kind = DatasetKind::classification;
  out.images = Tensor<float>({total, 3, 32, 32});
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.images.vec().begin(), p.images.vec().end(), out.images.plane(at, 0));
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    at += p.size();
  }
  return out;
}

}  // namespace

DatasetPair load_cifar10(const std::filesystem::path& dir) {
  std::vector<LabeledDataset> train_parts;
  for (int i = 1; i <= 5; ++i) {
    const auto file = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (std::filesystem::exists(file)) train_parts.push_back(read_cifar10_batch(file));
  }
  if (train_parts.empty()) throw IoError("no data_batch_*.bin files in " + dir.string());
  DatasetPair pair{concat(std::move(train_parts)), read_cifar10_batch(dir / "test_batch.bin")};
  pair.train.split = Split::train;
  pair.test.split = Split::test;
  normalize_channels(pair.train.images, {&pair.test.images, &pair.train.images});
  pair.train.descriptor = {"cifar10", 0, pair.train.size(), 10, 32};
  pair.test.descriptor = {"cifar10", 0, pair.test.size(), 10, 32};
  return pair;
}

DatasetPair make_datasets(bool segmentation, std::size_t classes, std::size_t size,
                          const DataOptions& options) {
  if (!options.cifar_dir.empty()) {
    if (segmentation) throw ConfigError("CIFAR-10 is a classification set");
    return load_cifar10(options.cifar_dir);
  }
  if (options.train_count == 0 || options.test_count == 0) throw ConfigError("dataset counts must be positive");
  if (segmentation) return gen_segmentation_dataset(options.seed, options.train_count, size, options.test_count);
  if (options.train_count % classes != 0 || options.test_count % classes != 0) {
    throw ConfigError("classification counts must be multiples of the class count");
  }
  return gen_classification_dataset(options.seed, options.train_count / classes, classes, size,
                                    options.test_count / classes);
}

}  // namespace resablate
