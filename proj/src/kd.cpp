#include "flexfl/kd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "flexfl/errors.hpp"
#include "flexfl/pruner.hpp"
#include "flexfl/rng.hpp"

namespace flexfl {

void KdConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("kd.temperature", "must be > 0");
  if (!(kl_weight >= 0.0)) throw ConfigError("kd.kl_weight", "must be >= 0");
  if (local_epochs < 1) throw ConfigError("kd.local_epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("kd.batch_size", "must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("kd.learning_rate", "must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("kd.momentum", "must be in [0, 1)");
}

std::vector<Matrix> soft_labels(const ParamSet& assigned,
                                std::span<const std::vector<std::size_t>> teacher_widths,
                                const Matrix& batch) {
  std::vector<Matrix> out;
  out.reserve(teacher_widths.size());
  for (const auto& w : teacher_widths) out.push_back(forward(extract_submodel(assigned, w), batch));
  return out;
}

LossGrad kl_term(std::span<const Matrix> teachers, const Matrix& student, double temperature) {
  if (teachers.empty()) throw std::invalid_argument("kl_term: no teacher logits");
  const double tau = temperature;
  const Matrix q = softmax(student, tau);
  const double rows = static_cast<double>(student.rows());
  const double scale = 1.0 / static_cast<double>(teachers.size());
  LossGrad out;
  out.dlogits = Matrix(student.rows(), student.cols());
  double total = 0.0;
  for (const Matrix& t : teachers) {
    if (t.rows() != student.rows() || t.cols() != student.cols())
      throw std::invalid_argument("kl_term: teacher and student logits differ in shape");
    const Matrix p = softmax(t, tau);
    for (std::size_t r = 0; r < student.rows(); ++r) {
      auto zs = student.row(r);
      auto zt = t.row(r);
      const double ms = *std::max_element(zs.begin(), zs.end()) / tau;
      const double mt = *std::max_element(zt.begin(), zt.end()) / tau;
      double ss = 0.0, st = 0.0;
      for (std::size_t c = 0; c < zs.size(); ++c) {
        ss += std::exp(zs[c] / tau - ms);
        st += std::exp(zt[c] / tau - mt);
      }
      const double lse_s = ms + std::log(ss);
      const double lse_t = mt + std::log(st);
      double kl = 0.0;
      for (std::size_t c = 0; c < zs.size(); ++c) {
        const double pc = p(r, c);
        if (pc > 0.0) kl += pc * ((zt[c] / tau - lse_t) - (zs[c] / tau - lse_s));
        // d/dz_s [tau^2 KL] = tau * (q - p)
        out.dlogits(r, c) += scale * tau * (q(r, c) - pc) / rows;
      }
      total += scale * tau * tau * std::max(kl, 0.0);
    }
  }
  out.loss = total / rows;
  return out;
}

LossGrad total_loss(const Matrix& logits, std::span<const int> labels,
                    std::span<const Matrix> teachers, const KdConfig& cfg) {
  LossGrad out = ce_loss(logits, labels);
  if (teachers.empty() || cfg.kl_weight == 0.0) return out;
  const LossGrad kl = kl_term(teachers, logits, cfg.temperature);
  out.loss += cfg.kl_weight * kl.loss;
  auto& g = out.dlogits.data();
  const auto& gk = kl.dlogits.data();
  for (std::size_t k = 0; k < g.size(); ++k) g[k] += cfg.kl_weight * gk[k];
  return out;
}

LocalResult local_train(ParamSet assigned, std::span<const std::vector<std::size_t>> teacher_widths,
                        const Dataset& data, const KdConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("local_train: empty local dataset");
  const auto own = assigned.widths();
  for (const auto& w : teacher_widths)
    if (!nested_in(w, own) || w == own)
      throw std::invalid_argument("local_train: teacher plans must be strictly nested in the trained model");

  // Teachers only enter through the KL term; skip their forward passes when it is off.
  const bool distill = !teacher_widths.empty() && cfg.kl_weight != 0.0;
  LocalResult out;
  out.sample_count = data.size();
  OptimizerState opt = OptimizerState::for_params(assigned, cfg.learning_rate, cfg.momentum);
  Rng rng = make_rng(seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Dataset batch = data.subset(idx);
      std::vector<Matrix> teachers;
      if (distill) teachers = soft_labels(assigned, teacher_widths, batch.features);
      sum += backward_and_step(assigned, opt, batch.features, [&](const Matrix& z) {
        return total_loss(z, batch.labels, teachers, cfg);
      });
      ++batches;
    }
    out.epoch_losses.push_back(sum / static_cast<double>(batches));
  }
  out.params = std::move(assigned);
  return out;
}

}  // namespace flexfl
