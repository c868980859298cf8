#pragma once

// Local training with self-distillation: the trained model learns from the
// tempered outputs of the smaller pool models nested inside it.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flexfl/data.hpp"
#include "flexfl/nn.hpp"

namespace flexfl {

struct KdConfig {
  double temperature = 3.0;
  double kl_weight = 10.0;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 50;
  double learning_rate = 0.01;
  double momentum = 0.5;

  void validate() const;
};

struct LocalResult {
  ParamSet params;
  std::size_t sample_count = 0;
  std::vector<double> epoch_losses;  // mean batch loss per epoch

  bool operator==(const LocalResult&) const = default;
};

/// Logits of each nested teacher, computed from the prefix of `assigned`.
/// The returned matrices are plain values: no gradient flows back through them.
std::vector<Matrix> soft_labels(const ParamSet& assigned,
                                std::span<const std::vector<std::size_t>> teacher_widths,
                                const Matrix& batch);

/// (1 / n) * sum_j tau^2 * KL(softmax(t_j / tau) || softmax(student / tau)), averaged over rows.
LossGrad kl_term(std::span<const Matrix> teachers, const Matrix& student, double temperature);

/// CE + kl_weight * KL; plain CE when there are no teachers or the weight is 0.
LossGrad total_loss(const Matrix& logits, std::span<const int> labels,
                    std::span<const Matrix> teachers, const KdConfig& cfg);

/// Trains `assigned` for cfg.local_epochs over `data` with shuffling driven by `seed`.
LocalResult local_train(ParamSet assigned, std::span<const std::vector<std::size_t>> teacher_widths,
                        const Dataset& data, const KdConfig& cfg, std::uint64_t seed);

}  // namespace flexfl
