#pragma once

// Synthetic corpus, Dirichlet non-IID partitioning and the proxy split.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "flexfl/matrix.hpp"

namespace flexfl {

struct Dataset {
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  Dataset subset(std::span<const std::size_t> rows) const;
  /// Highest label + 1, or 0 when empty.
  std::size_t num_classes() const;
};

struct DeviceDataset {
  std::size_t owner = 0;
  Dataset data;
};

/// Gaussian class clusters. Each class is a mixture of `clusters_per_class`
/// centres drawn from N(0, center_scale^2 I); samples add N(0, spread^2 I).
struct DataConfig {
  std::size_t classes = 10;
  std::size_t features = 16;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t clusters_per_class = 3;
  double center_scale = 1.0;
  double spread = 0.6;
  std::optional<double> alpha = 0.5;  // nullopt = IID
  double proxy_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Corpus {
  Dataset train;
  Dataset test;
};

/// Balanced train and test splits, deterministic in cfg.seed.
Corpus generate_corpus(const DataConfig& cfg);

/// Per class, device shares are drawn from Dir(alpha) and the class's samples
/// are dealt out in shuffled order. alpha = nullopt deals each class evenly.
std::vector<DeviceDataset> dirichlet_partition(const Dataset& train, std::size_t devices,
                                               std::optional<double> alpha, std::uint64_t seed);

struct ProxySplit {
  Dataset train;
  Dataset test;
};

/// Subsamples floor(fraction * n) rows, then keeps floor(0.8 m) for training and the rest for scoring.
ProxySplit proxy_split(const Dataset& train, double fraction, std::uint64_t seed);

/// Shannon entropy (nats) of the label distribution of `data` over `classes` labels.
double label_entropy(const Dataset& data, std::size_t classes);

/// Header row, float feature columns and an integer label column (named "label",
/// otherwise the last column).
Dataset load_csv(const std::filesystem::path& path);

}  // namespace flexfl
