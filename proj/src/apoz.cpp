#include "flexfl/apoz.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "flexfl/rng.hpp"

namespace flexfl {

std::vector<double> ApozProfile::apoz() const {
  std::vector<double> out;
  for (const auto& u : units) out.push_back(u.apoz);
  return out;
}

std::vector<double> ApozProfile::adj_weights() const {
  std::vector<double> out;
  for (const auto& u : units) out.push_back(u.adj_weight);
  return out;
}

std::vector<double> apoz_scores(const ActivationTrace& trace) {
  if (trace.zero_counts.empty() || trace.zero_counts.size() != trace.total_counts.size())
    throw std::invalid_argument("apoz_scores: empty or malformed activation trace");
  std::vector<double> out;
  for (std::size_t j = 0; j < trace.zero_counts.size(); ++j) {
    if (trace.total_counts[j] == 0)
      throw std::invalid_argument("apoz_scores: no activations recorded (empty proxy test set)");
    out.push_back(static_cast<double>(trace.zero_counts[j]) /
                  static_cast<double>(trace.total_counts[j]));
  }
  return out;
}

std::vector<double> group_apoz(std::span<const double> layer_apoz,
                               const std::vector<std::vector<std::size_t>>& groups) {
  std::vector<double> out;
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("group_apoz: empty group");
    double sum = 0.0;
    for (auto j : g) {
      if (j >= layer_apoz.size()) throw std::invalid_argument("group_apoz: layer index out of range");
      sum += layer_apoz[j];
    }
    out.push_back(sum / static_cast<double>(g.size()));
  }
  return out;
}

std::vector<std::size_t> unit_sizes(const ModelArch& arch) {
  arch.validate();
  const auto& w = arch.layer_widths;
  std::vector<std::size_t> out;
  for (const auto& g : arch.groups()) {
    std::size_t n = 0;
    for (auto h : g) n += w[h] * w[h + 1] + w[h + 1];
    out.push_back(n);
  }
  return out;
}

std::vector<double> adj_weights(std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw std::invalid_argument("adj_weights: no prunable layers");
  for (auto s : sizes)
    if (s <= 1) throw std::invalid_argument("adj_weights: layer size must be >= 2 (log degenerate)");
  const double log_max = std::log(static_cast<double>(*std::max_element(sizes.begin(), sizes.end())));
  std::vector<double> out;
  for (auto s : sizes) out.push_back(std::log(static_cast<double>(s)) / log_max);
  return out;
}

ApozProfile make_profile(const ModelArch& arch, const ActivationTrace& trace) {
  const auto groups = arch.groups();
  const auto layer_scores = apoz_scores(trace);
  if (layer_scores.size() != arch.num_hidden())
    throw std::invalid_argument("make_profile: trace does not match the architecture");
  const auto scores = group_apoz(layer_scores, groups);
  const auto sizes = unit_sizes(arch);
  const auto weights = adj_weights(sizes);
  ApozProfile p;
  for (std::size_t u = 0; u < groups.size(); ++u)
    p.units.push_back({groups[u], sizes[u], scores[u], weights[u]});
  return p;
}

ProfileResult build_profile(const ModelArch& arch, ParamSet init, const Matrix& train_x,
                            std::span<const int> train_y, const Matrix& test_x,
                            const PretrainConfig& cfg) {
  if (test_x.rows() == 0) throw std::invalid_argument("build_profile: empty proxy test set");
  ProfileResult out;
  out.pretrained = std::move(init);
  if (cfg.epochs > 0 && train_x.rows() > 0) {
    OptimizerState opt = OptimizerState::for_params(out.pretrained, cfg.learning_rate, cfg.momentum);
    Rng rng = make_rng(cfg.seed);
    std::vector<std::size_t> order(train_x.rows());
    const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += bs) {
        std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
        Matrix x = gather_rows(train_x, idx);
        std::vector<int> y;
        for (auto i : idx) y.push_back(train_y[i]);
        backward_and_step(out.pretrained, opt, x, [&y](const Matrix& z) { return ce_loss(z, y); });
      }
    }
  }
  out.trace = forward_capture(out.pretrained, test_x).trace;
  out.profile = make_profile(arch, out.trace);
  return out;
}

nlohmann::json profile_to_json(const ApozProfile& profile) {
  nlohmann::json units = nlohmann::json::array();
  for (const auto& u : profile.units)
    units.push_back({{"layer", u.layers}, {"size", u.param_size}, {"apoz", u.apoz},
                     {"adj_weight", u.adj_weight}});
  return units;
}

ApozProfile profile_from_json(const nlohmann::json& doc) {
  const nlohmann::json& units = doc.is_object() && doc.contains("profile") ? doc.at("profile") : doc;
  if (!units.is_array()) throw std::invalid_argument("profile JSON must be an array of units");
  ApozProfile p;
  for (const auto& u : units) {
    UnitScore s;
    const auto& layer = u.at("layer");
    if (layer.is_array())
      s.layers = layer.get<std::vector<std::size_t>>();
    else
      s.layers = {layer.get<std::size_t>()};
    s.param_size = u.at("size").get<std::size_t>();
    s.apoz = u.at("apoz").get<double>();
    s.adj_weight = u.at("adj_weight").get<double>();
    if (s.apoz < 0.0 || s.apoz > 1.0) throw std::invalid_argument("profile apoz outside [0,1]");
    if (!(s.adj_weight > 0.0 && s.adj_weight <= 1.0))
      throw std::invalid_argument("profile adj_weight outside (0,1]");
    p.units.push_back(std::move(s));
  }
  return p;
}

}  // namespace flexfl
