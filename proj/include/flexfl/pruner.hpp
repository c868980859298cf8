#pragma once

// Pruning-plan generation by gamma sweep, prefix-channel submodel extraction,
// and the adaptive (re-pruned) plans used for on-device fallback.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flexfl/apoz.hpp"
#include "flexfl/nn.hpp"

namespace flexfl {

inline constexpr double kMinRetainRatio = 0.01;

/// Identifies a pool model M_level (1-based) or its adaptive variant M'_level.
struct PlanId {
  std::size_t level = 1;
  bool adaptive = false;

  std::string name() const;
  bool operator==(const PlanId&) const = default;
};

struct PruningPlan {
  PlanId id;
  double target_ratio = 1.0;
  std::vector<double> ratios;       // retain ratio per hidden layer
  std::vector<std::size_t> widths;  // all layer widths, input and output included
  std::size_t achieved_params = 0;
  std::optional<double> gamma;  // unset when the unpruned model already met the target

  bool operator==(const PruningPlan&) const = default;
};

struct GenSearchConfig {
  double epsilon_fraction = 0.01;  // tolerance as a fraction of size(M)
  double step = 0.01;              // gamma increment

  double epsilon(std::size_t full_size) const { return epsilon_fraction * static_cast<double>(full_size); }
  void validate() const;
};

struct AdaptiveConfig {
  double size_fraction = 0.10;  // pruned away relative to size(M)
};

/// max(1, round-half-up(y_j * s_j)) per hidden layer; input and output widths unchanged.
std::vector<std::size_t> resolve_widths(std::span<const double> hidden_ratios, const ModelArch& arch);

/// Per-hidden-layer ratios clamp((1 - A_u * AdjW_u) * gamma, 0.01, 1), expanded from units.
std::vector<double> ratios_at(const ApozProfile& profile, const ModelArch& arch, double gamma);

/// Runs the gamma sweep for one target parameter count.
/// Returns the first plan within tolerance. When a single width step jumps over
/// the band, the nearer of the two bracketing sizes is taken instead.
/// Throws UnreachableTarget when the sweep saturates or starts above the target.
PruningPlan search_plan(const ApozProfile& profile, const ModelArch& arch, PlanId id,
                        double target_params, const GenSearchConfig& cfg);

/// One plan per target ratio (ascending, each in (0, 1]).
std::vector<PruningPlan> generate_plans(const ApozProfile& profile, const ModelArch& arch,
                                        std::span<const double> targets, const GenSearchConfig& cfg);

/// M'_level: size(M_level) - fraction * size(M), found with the same sweep.
/// `level` is 1-based and must be >= 2.
PruningPlan adaptive_plan(std::size_t level, std::span<const PruningPlan> pool,
                          const ApozProfile& profile, const ModelArch& arch,
                          const GenSearchConfig& cfg, const AdaptiveConfig& adaptive);

/// Adaptive plans for levels 2..p, in level order. With fraction 0 each M'_i equals M_i.
std::vector<PruningPlan> adaptive_plans(std::span<const PruningPlan> pool, const ApozProfile& profile,
                                        const ModelArch& arch, const GenSearchConfig& cfg,
                                        const AdaptiveConfig& adaptive);

/// [M_i, M'_i, M_{i-1}, M'_{i-1}, ..., M_1]. Pass with_adaptive=false to drop the M' entries.
std::vector<PlanId> fallback_chain(std::size_t level, bool with_adaptive = true);

/// 1 - mean_j(|a_j - b_j| / b_j).
double plan_similarity(std::span<const double> a, std::span<const double> b);

/// True when every width of `small` is <= the matching width of `large`.
bool nested_in(std::span<const std::size_t> small, std::span<const std::size_t> large);

/// Keeps the first widths[j] rows and widths[j-1] columns of each layer.
ParamSet extract_submodel(const ParamSet& full, std::span<const std::size_t> widths);
inline ParamSet extract_submodel(const ParamSet& full, const PruningPlan& plan) {
  return extract_submodel(full, plan.widths);
}

/// Writes `sub` into the prefix coordinates of `into`; everything else is untouched.
ParamSet embed_submodel(const ParamSet& sub, ParamSet into);

nlohmann::json plan_to_json(const PruningPlan& plan);
PruningPlan plan_from_json(const nlohmann::json& doc);

}  // namespace flexfl
