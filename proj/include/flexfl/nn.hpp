#pragma once

// Feedforward engine: dense layers with ReLU between hidden layers and a
// linear output head. Gradients are written by hand.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "flexfl/matrix.hpp"

namespace flexfl {

/// Layer shapes of a network. `layer_widths` = {input, hidden..., classes}.
///
/// `layer_groups` optionally partitions the hidden layers (0-based hidden
/// index) into contiguous groups that are scored and pruned as one unit.
/// Empty means every hidden layer is its own group.
struct ModelArch {
  std::vector<std::size_t> layer_widths;
  std::vector<std::vector<std::size_t>> layer_groups;

  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t output_width() const { return layer_widths.back(); }
  std::size_t num_layers() const { return layer_widths.size() - 1; }  // dense layers
  std::size_t num_hidden() const { return layer_widths.size() - 2; }

  /// Groups with singleton defaults filled in.
  std::vector<std::vector<std::size_t>> groups() const;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  bool operator==(const ModelArch&) const = default;
};

/// Weights and bias of one dense layer; weight is (out x in).
struct DenseParams {
  Matrix weight;
  std::vector<double> bias;

  bool operator==(const DenseParams&) const = default;
};

/// All parameters of a (sub)model, one entry per dense layer.
struct ParamSet {
  std::vector<DenseParams> layers;

  /// Layer widths implied by the tensor shapes.
  std::vector<std::size_t> widths() const;
  std::size_t count() const;
  bool all_finite() const;

  bool operator==(const ParamSet&) const = default;
};

/// Zero-valued parameters shaped like `widths`.
ParamSet zeros_like(std::span<const std::size_t> widths);

/// Uniform(-b, b) initialisation with b = sqrt(6 / (fan_in + fan_out)); biases too.
ParamSet init_params(const ModelArch& arch, std::uint64_t seed);

/// Weights + biases of a network with the given layer widths.
std::size_t param_count(std::span<const std::size_t> widths);
inline std::size_t param_count(const ModelArch& arch) { return param_count(arch.layer_widths); }

/// Per hidden ReLU layer: number of exactly-zero outputs and number of outputs seen.
struct ActivationTrace {
  std::vector<std::uint64_t> zero_counts;
  std::vector<std::uint64_t> total_counts;

  /// Adds another trace's counts in place; shapes must agree.
  void merge(const ActivationTrace& other);
};

Matrix forward(const ParamSet& params, const Matrix& batch);

struct CapturedForward {
  Matrix logits;
  ActivationTrace trace;
};

CapturedForward forward_capture(const ParamSet& params, const Matrix& batch);

/// Mean loss over the batch together with d(loss)/d(logits).
struct LossGrad {
  double loss = 0.0;
  Matrix dlogits;
};

/// Row-wise numerically stable softmax.
Matrix softmax(const Matrix& logits, double temperature = 1.0);

/// Softmax cross-entropy averaged over rows. Labels must be in [0, cols).
LossGrad ce_loss(const Matrix& logits, std::span<const int> labels);

/// Any loss expressed as a function of the logits.
using LossFn = std::function<LossGrad(const Matrix& logits)>;

struct Gradients {
  double loss = 0.0;
  ParamSet grads;
};

/// Forward + hand-written backward pass for `loss`.
Gradients compute_gradients(const ParamSet& params, const Matrix& batch, const LossFn& loss);

/// Momentum buffers follow the PyTorch SGD convention: v = mu * v + g; theta -= lr * v.
struct OptimizerState {
  ParamSet velocity;
  double learning_rate = 0.01;
  double momentum = 0.5;

  static OptimizerState for_params(const ParamSet& params, double lr, double momentum);
};

void sgd_step(ParamSet& params, OptimizerState& state, const ParamSet& grads);

/// One SGD-with-momentum step; returns the pre-step loss. Throws NonFiniteLoss.
double backward_and_step(ParamSet& params, OptimizerState& state, const Matrix& batch,
                         const LossFn& loss);

/// Index of the max logit per row.
std::vector<int> predict(const ParamSet& params, const Matrix& batch);

/// Fraction of rows whose argmax equals the label; 0 for an empty batch.
double accuracy(const ParamSet& params, const Matrix& features, std::span<const int> labels);

/// Copies the listed rows of `source`.
Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows);

}  // namespace flexfl
