#include "flexfl/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "flexfl/errors.hpp"

namespace flexfl {

std::string PlanId::name() const {
  return "M" + std::to_string(level) + (adaptive ? "'" : "");
}

void GenSearchConfig::validate() const {
  if (!(epsilon_fraction > 0.0)) throw ConfigError("search.epsilon_fraction", "must be > 0");
  if (!(step > 0.0 && step <= 0.1)) throw ConfigError("search.step", "must be in (0, 0.1]");
}

std::vector<std::size_t> resolve_widths(std::span<const double> hidden_ratios, const ModelArch& arch) {
  if (hidden_ratios.size() != arch.num_hidden())
    throw std::invalid_argument("resolve_widths: ratio count does not match hidden layer count");
  std::vector<std::size_t> w = arch.layer_widths;
  for (std::size_t h = 0; h < hidden_ratios.size(); ++h) {
    const double scaled = static_cast<double>(arch.layer_widths[h + 1]) * hidden_ratios[h];
    // The small offset keeps exact halves such as 5 * 0.5 from rounding down.
    const auto rounded = static_cast<std::size_t>(std::floor(scaled + 0.5 + 1e-9));
    w[h + 1] = std::clamp<std::size_t>(rounded, 1, arch.layer_widths[h + 1]);
  }
  return w;
}

std::vector<double> ratios_at(const ApozProfile& profile, const ModelArch& arch, double gamma) {
  std::vector<double> out(arch.num_hidden(), 1.0);
  for (const auto& u : profile.units) {
    const double s = std::clamp((1.0 - u.apoz * u.adj_weight) * gamma, kMinRetainRatio, 1.0);
    for (auto h : u.layers) {
      if (h >= out.size()) throw std::invalid_argument("profile refers to a layer outside the arch");
      out[h] = s;
    }
  }
  return out;
}

namespace {

PruningPlan make_plan(PlanId id, double target_ratio, std::vector<double> ratios,
                      const ModelArch& arch, std::optional<double> gamma) {
  PruningPlan p;
  p.id = id;
  p.target_ratio = target_ratio;
  p.widths = resolve_widths(ratios, arch);
  p.ratios = std::move(ratios);
  p.achieved_params = param_count(p.widths);
  p.gamma = gamma;
  return p;
}

void check_profile(const ApozProfile& profile, const ModelArch& arch) {
  arch.validate();
  std::vector<bool> seen(arch.num_hidden(), false);
  for (const auto& u : profile.units)
    for (auto h : u.layers) {
      if (h >= seen.size() || seen[h])
        throw std::invalid_argument("profile units must partition the hidden layers");
      seen[h] = true;
    }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw std::invalid_argument("profile does not cover every hidden layer");
}

}  // namespace

PruningPlan search_plan(const ApozProfile& profile, const ModelArch& arch, PlanId id,
                        double target_params, const GenSearchConfig& cfg) {
  cfg.validate();
  check_profile(profile, arch);
  const std::size_t full = param_count(arch);
  const double eps = cfg.epsilon(full);
  const double target_ratio = target_params / static_cast<double>(full);

  // The unpruned model is the starting point of the sweep.
  if (std::abs(target_params - static_cast<double>(full)) <= eps)
    return make_plan(id, target_ratio, std::vector<double>(arch.num_hidden(), 1.0), arch, std::nullopt);

  auto size_at = [&](double gamma) {
    return static_cast<double>(param_count(resolve_widths(ratios_at(profile, arch, gamma), arch)));
  };
  auto in_band = [&](double size) { return std::abs(size - target_params) <= eps; };

  // Past this gamma every ratio with a positive factor is clamped at 1.
  double min_factor = std::numeric_limits<double>::infinity();
  for (const auto& u : profile.units) {
    const double f = 1.0 - u.apoz * u.adj_weight;
    if (f > 0.0) min_factor = std::min(min_factor, f);
  }
  const double gamma_max = std::isfinite(min_factor) ? 1.0 / min_factor + cfg.step : cfg.step;

  auto fail = [&](const std::string& why) {
    std::ostringstream msg;
    msg << "level " << id.name() << ": target of " << target_params << " parameters (ratio "
        << target_ratio << ") unreachable within epsilon " << eps << ": " << why;
    return UnreachableTarget(id.level, msg.str());
  };

  // Size is non-decreasing in gamma, so a step that jumps over the band is
  // re-scanned on a finer grid before giving up.
  double lo = 0.0;
  double hi = 0.0;
  bool bracketed = false;
  for (std::size_t k = 0;; ++k) {
    const double gamma = static_cast<double>(k) * cfg.step;
    if (gamma > gamma_max) throw fail("gamma sweep saturated");
    const double size = size_at(gamma);
    if (in_band(size)) return make_plan(id, target_ratio, ratios_at(profile, arch, gamma), arch, gamma);
    if (size > target_params + eps) {
      if (k == 0) throw fail("smallest admissible model is already larger than the target");
      lo = static_cast<double>(k - 1) * cfg.step;
      hi = gamma;
      bracketed = true;
      break;
    }
  }
  for (int depth = 0; bracketed && depth < 6; ++depth) {
    constexpr int kSubsteps = 16;
    const double sub = (hi - lo) / kSubsteps;
    bracketed = false;
    for (int k = 1; k < kSubsteps; ++k) {
      const double gamma = lo + k * sub;
      const double size = size_at(gamma);
      if (in_band(size)) return make_plan(id, target_ratio, ratios_at(profile, arch, gamma), arch, gamma);
      if (size > target_params + eps) {
        hi = gamma;
        lo = gamma - sub;
        bracketed = true;
        break;
      }
    }
    if (!bracketed) {
      lo = hi - sub;
      bracketed = true;
    }
  }
  // No gamma lands in the band: one width step is wider than 2 * eps.
  // Take whichever side of the jump is nearer the target, the smaller on a tie.
  const double below = target_params - size_at(lo);
  const double above = size_at(hi) - target_params;
  const double gamma = above < below ? hi : lo;
  return make_plan(id, target_ratio, ratios_at(profile, arch, gamma), arch, gamma);
}

std::vector<PruningPlan> generate_plans(const ApozProfile& profile, const ModelArch& arch,
                                        std::span<const double> targets, const GenSearchConfig& cfg) {
  if (targets.empty()) throw std::invalid_argument("generate_plans: no target ratios");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!(targets[i] > 0.0 && targets[i] <= 1.0))
      throw std::invalid_argument("generate_plans: target ratios must be in (0, 1]");
    if (i > 0 && !(targets[i] > targets[i - 1]))
      throw std::invalid_argument("generate_plans: target ratios must be strictly ascending");
  }
  const auto full = static_cast<double>(param_count(arch));
  std::vector<PruningPlan> plans;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    plans.push_back(search_plan(profile, arch, {i + 1, false}, targets[i] * full, cfg));
    plans.back().target_ratio = targets[i];
    if (i > 0 && !nested_in(plans[i - 1].widths, plans[i].widths))
      throw std::logic_error("generate_plans: level " + std::to_string(i + 1) + " does not contain level " +
                             std::to_string(i));
  }
  return plans;
}

PruningPlan adaptive_plan(std::size_t level, std::span<const PruningPlan> pool,
                          const ApozProfile& profile, const ModelArch& arch,
                          const GenSearchConfig& cfg, const AdaptiveConfig& adaptive) {
  if (level < 2 || level > pool.size())
    throw std::invalid_argument("adaptive_plan: level must be in [2, pool size]");
  if (adaptive.size_fraction < 0.0) throw ConfigError("adaptive.size_fraction", "must be >= 0");
  const std::size_t full = param_count(arch);
  const double pruned = adaptive.size_fraction * static_cast<double>(full);
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < pool.size(); ++i)
    min_gap = std::min(min_gap, static_cast<double>(pool[i].achieved_params) -
                                    static_cast<double>(pool[i - 1].achieved_params));
  if (!(pruned < min_gap)) {
    std::ostringstream msg;
    msg << "adaptive pruning size " << pruned << " must be smaller than the smallest gap " << min_gap
        << " between pool model sizes";
    throw ConfigError("adaptive.size_fraction", msg.str());
  }
  const PruningPlan& base = pool[level - 1];
  if (pruned == 0.0) {
    PruningPlan copy = base;
    copy.id = {level, true};
    return copy;
  }
  const double target = static_cast<double>(base.achieved_params) - pruned;
  PruningPlan p = search_plan(profile, arch, {level, true}, target, cfg);
  if (!nested_in(p.widths, base.widths) || !nested_in(pool[level - 2].widths, p.widths))
    throw std::logic_error("adaptive_plan: " + p.id.name() + " breaks the nesting chain");
  return p;
}

std::vector<PruningPlan> adaptive_plans(std::span<const PruningPlan> pool, const ApozProfile& profile,
                                        const ModelArch& arch, const GenSearchConfig& cfg,
                                        const AdaptiveConfig& adaptive) {
  std::vector<PruningPlan> out;
  for (std::size_t level = 2; level <= pool.size(); ++level)
    out.push_back(adaptive_plan(level, pool, profile, arch, cfg, adaptive));
  return out;
}

std::vector<PlanId> fallback_chain(std::size_t level, bool with_adaptive) {
  if (level == 0) throw std::invalid_argument("fallback_chain: levels are 1-based");
  std::vector<PlanId> chain;
  for (std::size_t i = level; i >= 1; --i) {
    chain.push_back({i, false});
    if (i > 1 && with_adaptive) chain.push_back({i, true});
  }
  return chain;
}

double plan_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("plan_similarity: ratio vectors must be non-empty and equal length");
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (!(b[j] > 0.0)) throw std::invalid_argument("plan_similarity: reference ratios must be > 0");
    sum += std::abs(a[j] - b[j]) / b[j];
  }
  return 1.0 - sum / static_cast<double>(a.size());
}

bool nested_in(std::span<const std::size_t> small, std::span<const std::size_t> large) {
  if (small.size() != large.size()) return false;
  for (std::size_t j = 0; j < small.size(); ++j)
    if (small[j] > large[j]) return false;
  return true;
}

ParamSet extract_submodel(const ParamSet& full, std::span<const std::size_t> widths) {
  const auto fw = full.widths();
  if (widths.size() != fw.size() || widths.front() != fw.front() || widths.back() != fw.back() ||
      !nested_in(widths, fw))
    throw std::invalid_argument("extract_submodel: plan widths do not fit the parameter set");
  ParamSet sub = zeros_like(widths);
  for (std::size_t j = 0; j < sub.layers.size(); ++j) {
    const auto& src = full.layers[j];
    auto& dst = sub.layers[j];
    for (std::size_t r = 0; r < dst.weight.rows(); ++r) {
      auto s = src.weight.row(r);
      std::copy(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(dst.weight.cols()),
                dst.weight.row(r).begin());
      dst.bias[r] = src.bias[r];
    }
  }
  return sub;
}

ParamSet embed_submodel(const ParamSet& sub, ParamSet into) {
  const auto sw = sub.widths();
  const auto iw = into.widths();
  if (sw.size() != iw.size() || sw.front() != iw.front() || sw.back() != iw.back() || !nested_in(sw, iw))
    throw std::invalid_argument("embed_submodel: submodel does not fit the target parameter set");
  for (std::size_t j = 0; j < sub.layers.size(); ++j) {
    const auto& src = sub.layers[j];
    auto& dst = into.layers[j];
    for (std::size_t r = 0; r < src.weight.rows(); ++r) {
      auto s = src.weight.row(r);
      std::copy(s.begin(), s.end(), dst.weight.row(r).begin());
      dst.bias[r] = src.bias[r];
    }
  }
  return into;
}

nlohmann::json plan_to_json(const PruningPlan& plan) {
  nlohmann::json j = {{"level", plan.id.level},
                      {"adaptive", plan.id.adaptive},
                      {"name", plan.id.name()},
                      {"target_ratio", plan.target_ratio},
                      {"ratios", plan.ratios},
                      {"widths", plan.widths},
                      {"achieved_params", plan.achieved_params}};
  j["gamma"] = plan.gamma ? nlohmann::json(*plan.gamma) : nlohmann::json(nullptr);
  return j;
}

PruningPlan plan_from_json(const nlohmann::json& doc) {
  PruningPlan p;
  p.id.level = doc.value("level", std::size_t{1});
  p.id.adaptive = doc.value("adaptive", false);
  p.target_ratio = doc.value("target_ratio", 1.0);
  p.ratios = doc.at("ratios").get<std::vector<double>>();
  if (doc.contains("widths")) p.widths = doc.at("widths").get<std::vector<std::size_t>>();
  p.achieved_params = doc.value("achieved_params", std::size_t{0});
  if (doc.contains("gamma") && !doc.at("gamma").is_null()) p.gamma = doc.at("gamma").get<double>();
  return p;
}

}  // namespace flexfl
