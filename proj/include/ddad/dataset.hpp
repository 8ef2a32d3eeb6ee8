#pragma once

// Synthetic classification tasks used to drive the distillation pipeline:
// two 2-D point tasks (Gaussian blobs, concentric rings) and a 16x16
// procedural-texture image task. All three are class-balanced and draw
// train/test splits from independent RNG streams of the same seed, so the
// splits are disjoint by construction.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ddad/random.hpp"
#include "ddad/tensor.hpp"

namespace ddad {

enum class TaskKind {
  Blobs,
  Rings,
  TinyImages,
};

inline std::string to_string(TaskKind task) {
  switch (task) {
    case TaskKind::Blobs:
      return "blobs";
    case TaskKind::Rings:
      return "rings";
    case TaskKind::TinyImages:
      return "tiny-images";
  }
  return "?";
}

inline TaskKind task_from_string(const std::string& name) {
  if (name == "blobs") return TaskKind::Blobs;
  if (name == "rings") return TaskKind::Rings;
  if (name == "tiny-images") return TaskKind::TinyImages;
  throw ValueError("unknown task '" + name + "' (expected blobs, rings, or tiny-images)");
}

// Image-task geometry, fixed across the project.
constexpr int kImageSize = 16;
constexpr int kImageChannels = 1;

struct SyntheticDataset {
  Tensor inputs;  // [M, ...] — [M,2] for point tasks, [M,1,16,16] for images
  Tensor labels;  // [M], entries are integral class ids stored as doubles
  int num_classes = 0;

  int size() const { return labels.defined() ? labels.shape()[0] : 0; }

  int label_at(int i) const {
    return static_cast<int>(labels.values()[static_cast<std::size_t>(i)]);
  }
};

struct DatasetConfig {
  TaskKind task = TaskKind::Blobs;
  int classes = 4;
  int train_per_class = 250;
  int test_per_class = 100;
  double noise = 0.08;
};

// Per-sample input shape for a task (excludes the leading batch axis).
inline Shape task_input_shape(TaskKind task) {
  if (task == TaskKind::TinyImages) return {kImageChannels, kImageSize, kImageSize};
  return {2};
}

inline int task_input_dim(TaskKind task) { return shape_numel(task_input_shape(task)); }

namespace detail {

// Class centroids on a circle of radius 0.7: comfortably inside the
// generator's tanh range while keeping clusters well separated.
inline void blob_sample(int cls, int num_classes, double noise, Rng& rng, double* out) {
  const double angle = 2.0 * M_PI * cls / num_classes;
  out[0] = 0.7 * std::cos(angle) + noise * rng.normal();
  out[1] = 0.7 * std::sin(angle) + noise * rng.normal();
}

// Concentric annuli: class k lives at radius (k+1)/(K+1), jittered radially.
inline void ring_sample(int cls, int num_classes, double noise, Rng& rng, double* out) {
  const double radius = 0.9 * (cls + 1.0) / (num_classes + 1.0);
  const double theta = 2.0 * M_PI * rng.uniform(0.0, 1.0);
  const double r = radius + noise * rng.normal();
  out[0] = r * std::cos(theta);
  out[1] = r * std::sin(theta);
}

// Oriented sinusoidal textures: class k fixes orientation and spatial
// frequency; even classes are stripes, odd classes are checkerboard-like
// products. A random per-sample phase plus additive noise gives spread.
inline void texture_sample(int cls, int num_classes, double noise, Rng& rng, double* out) {
  const double theta = M_PI * cls / num_classes;
  const double freq = 2.0 + 1.5 * cls;
  const double phase = 2.0 * M_PI * rng.uniform(0.0, 1.0);
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  for (int i = 0; i < kImageSize; ++i) {
    for (int j = 0; j < kImageSize; ++j) {
      const double u = (i + 0.5) / kImageSize - 0.5;
      const double v = (j + 0.5) / kImageSize - 0.5;
      const double along = u * cos_t + v * sin_t;
      const double across = -u * sin_t + v * cos_t;
      double value;
      if (cls % 2 == 0) {
        value = std::sin(2.0 * M_PI * freq * along + phase);
      } else {
        value = std::sin(2.0 * M_PI * freq * along + phase) *
                std::sin(2.0 * M_PI * freq * across + phase);
      }
      value += noise * rng.normal();
      value = std::max(-1.0, std::min(1.0, value));
      out[i * kImageSize + j] = value;
    }
  }
}

inline SyntheticDataset make_split(const DatasetConfig& cfg, int per_class, Rng& rng) {
  const Shape sample_shape = task_input_shape(cfg.task);
  const int dim = shape_numel(sample_shape);
  const int total = cfg.classes * per_class;

  std::vector<double> inputs(static_cast<std::size_t>(total) * dim);
  std::vector<double> labels(static_cast<std::size_t>(total));

  // Deterministic interleaved order (class 0..K-1 repeating) keeps every
  // training batch class-balanced without a shuffle pass.
  for (int i = 0; i < total; ++i) {
    const int cls = i % cfg.classes;
    double* out = inputs.data() + static_cast<std::size_t>(i) * dim;
    switch (cfg.task) {
      case TaskKind::Blobs:
        blob_sample(cls, cfg.classes, cfg.noise, rng, out);
        break;
      case TaskKind::Rings:
        ring_sample(cls, cfg.classes, cfg.noise, rng, out);
        break;
      case TaskKind::TinyImages:
        texture_sample(cls, cfg.classes, cfg.noise, rng, out);
        break;
    }
    labels[static_cast<std::size_t>(i)] = cls;
  }

  Shape full_shape;
  full_shape.push_back(total);
  for (int d : sample_shape) full_shape.push_back(d);

  SyntheticDataset split;
  split.inputs = Tensor::from_values(full_shape, inputs);
  split.labels = Tensor::from_values({total}, labels);
  split.num_classes = cfg.classes;
  return split;
}

}  // namespace detail

// Builds class-balanced train and test splits. The two splits consume
// independent RNG streams derived from the seed, so regenerating with the
// same seed reproduces both exactly and the splits never share a sample.
inline std::pair<SyntheticDataset, SyntheticDataset> make_dataset(const DatasetConfig& cfg,
                                                                  long seed) {
  if (cfg.classes < 2) {
    throw ValueError("make_dataset: need at least 2 classes, got " + std::to_string(cfg.classes));
  }
  if (cfg.train_per_class < 1 || cfg.test_per_class < 1) {
    throw ValueError("make_dataset: samples per class must be >= 1");
  }
  if (cfg.noise < 0.0) {
    throw ValueError("make_dataset: noise level must be >= 0");
  }
  Rng train_rng(static_cast<std::uint64_t>(seed), 101);
  Rng test_rng(static_cast<std::uint64_t>(seed), 102);
  SyntheticDataset train = detail::make_split(cfg, cfg.train_per_class, train_rng);
  SyntheticDataset test = detail::make_split(cfg, cfg.test_per_class, test_rng);
  return {std::move(train), std::move(test)};
}

// Copies rows [begin, begin+count) of a dataset into a batch tensor.
inline Tensor dataset_batch(const SyntheticDataset& ds, int begin, int count) {
  const Shape& full = ds.inputs.shape();
  if (begin < 0 || count < 1 || begin + count > full[0]) {
    throw ValueError("dataset_batch: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of bounds for " +
                     std::to_string(full[0]) + " samples");
  }
  int dim = 1;
  for (std::size_t d = 1; d < full.size(); ++d) dim *= full[d];
  Shape batch_shape = full;
  batch_shape[0] = count;
  std::vector<double> values(static_cast<std::size_t>(count) * dim);
  const std::vector<double>& src = ds.inputs.values();
  std::copy(src.begin() + static_cast<std::size_t>(begin) * dim,
            src.begin() + static_cast<std::size_t>(begin + count) * dim, values.begin());
  return Tensor::from_values(batch_shape, values);
}

inline Tensor dataset_label_batch(const SyntheticDataset& ds, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > ds.size()) {
    throw ValueError("dataset_label_batch: range out of bounds");
  }
  std::vector<double> values(ds.labels.values().begin() + begin,
                             ds.labels.values().begin() + begin + count);
  return Tensor::from_values({count}, values);
}

}  // namespace ddad
