#pragma once

// Average Percentage of Zeros (APoZ) scoring of the prunable units of a model.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "flexfl/matrix.hpp"
#include "flexfl/nn.hpp"

namespace flexfl {

/// Score of one prunable unit (a hidden layer or a group of hidden layers).
struct UnitScore {
  std::vector<std::size_t> layers;  // hidden-layer indices in the unit
  std::size_t param_size = 0;       // weights + biases of the member dense layers
  double apoz = 0.0;
  double adj_weight = 1.0;

  bool operator==(const UnitScore&) const = default;
};

struct ApozProfile {
  std::vector<UnitScore> units;

  std::vector<double> apoz() const;
  std::vector<double> adj_weights() const;

  bool operator==(const ApozProfile&) const = default;
};

/// Per-layer zero fraction zeros / total. Throws on an empty trace or zero totals.
std::vector<double> apoz_scores(const ActivationTrace& trace);

/// Mean of member-layer scores per group.
std::vector<double> group_apoz(std::span<const double> layer_apoz,
                               const std::vector<std::vector<std::size_t>>& groups);

/// Parameter count of each prunable unit of `arch`.
std::vector<std::size_t> unit_sizes(const ModelArch& arch);

/// log(size_j) / log(max size). Every size must be >= 2.
std::vector<double> adj_weights(std::span<const std::size_t> sizes);
inline std::vector<double> adj_weights(const ModelArch& arch) { return adj_weights(unit_sizes(arch)); }

/// Assembles a profile from an accumulated trace.
ApozProfile make_profile(const ModelArch& arch, const ActivationTrace& trace);

struct PretrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 50;
  double learning_rate = 0.01;
  double momentum = 0.5;
  std::uint64_t seed = 0;  // shuffling stream
};

struct ProfileResult {
  ApozProfile profile;
  ActivationTrace trace;  // counts over the proxy test part
  ParamSet pretrained;
};

/// Pre-trains `init` on the proxy train part with plain CE and scores it on the
/// proxy test part. The caller is expected to discard the pre-trained weights.
ProfileResult build_profile(const ModelArch& arch, ParamSet init, const Matrix& train_x,
                            std::span<const int> train_y, const Matrix& test_x,
                            const PretrainConfig& cfg);

/// [{layer, size, apoz, adj_weight}, ...]
nlohmann::json profile_to_json(const ApozProfile& profile);
ApozProfile profile_from_json(const nlohmann::json& doc);

}  // namespace flexfl
