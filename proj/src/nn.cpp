#include "flexfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "flexfl/errors.hpp"
#include "flexfl/rng.hpp"

namespace flexfl {

std::vector<std::vector<std::size_t>> ModelArch::groups() const {
  if (!layer_groups.empty()) return layer_groups;
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t h = 0; h < num_hidden(); ++h) out.push_back({h});
  return out;
}

void ModelArch::validate() const {
  if (layer_widths.size() < 3)
    throw std::invalid_argument("arch needs an input, at least one hidden layer and an output");
  for (auto w : layer_widths)
    if (w == 0) throw std::invalid_argument("arch layer widths must be positive");
  if (output_width() < 2) throw std::invalid_argument("arch output width must be >= 2");
  if (layer_groups.empty()) return;
  std::size_t next = 0;
  for (const auto& g : layer_groups) {
    if (g.empty()) throw std::invalid_argument("arch layer group is empty");
    for (auto h : g) {
      if (h != next)
        throw std::invalid_argument("arch layer groups must cover hidden layers contiguously, in order");
      ++next;
    }
  }
  if (next != num_hidden())
    throw std::invalid_argument("arch layer groups must cover every hidden layer exactly once");
}

std::vector<std::size_t> ParamSet::widths() const {
  std::vector<std::size_t> w;
  if (layers.empty()) return w;
  w.push_back(layers.front().weight.cols());
  for (const auto& l : layers) w.push_back(l.weight.rows());
  return w;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& l : layers) {
    for (double v : l.weight.data())
      if (!std::isfinite(v)) return false;
    for (double v : l.bias)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

ParamSet zeros_like(std::span<const std::size_t> widths) {
  ParamSet p;
  for (std::size_t j = 1; j < widths.size(); ++j)
    p.layers.push_back({Matrix(widths[j], widths[j - 1]), std::vector<double>(widths[j], 0.0)});
  return p;
}

ParamSet init_params(const ModelArch& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng = make_rng(seed);
  ParamSet p = zeros_like(arch.layer_widths);
  for (std::size_t j = 0; j < p.layers.size(); ++j) {
    const auto fan_in = static_cast<double>(arch.layer_widths[j]);
    const auto fan_out = static_cast<double>(arch.layer_widths[j + 1]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.layers[j].weight.data()) v = dist(rng);
    for (double& v : p.layers[j].bias) v = dist(rng);
  }
  return p;
}

std::size_t param_count(std::span<const std::size_t> widths) {
  std::size_t n = 0;
  for (std::size_t j = 1; j < widths.size(); ++j) n += widths[j - 1] * widths[j] + widths[j];
  return n;
}

void ActivationTrace::merge(const ActivationTrace& other) {
  if (zero_counts.empty()) {
    *this = other;
    return;
  }
  if (other.zero_counts.size() != zero_counts.size())
    throw std::invalid_argument("activation trace layer count mismatch");
  for (std::size_t j = 0; j < zero_counts.size(); ++j) {
    zero_counts[j] += other.zero_counts[j];
    total_counts[j] += other.total_counts[j];
  }
}

namespace {

void check_input(const ParamSet& params, const Matrix& batch) {
  if (params.layers.empty()) throw std::invalid_argument("forward: empty parameter set");
  if (batch.cols() != params.layers.front().weight.cols())
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) +
                                " columns, model expects " +
                                std::to_string(params.layers.front().weight.cols()));
  for (std::size_t j = 1; j < params.layers.size(); ++j)
    if (params.layers[j].weight.cols() != params.layers[j - 1].weight.rows())
      throw std::invalid_argument("forward: inconsistent layer shapes");
}

// out = in * W^T + b
Matrix dense(const DenseParams& layer, const Matrix& in) {
  const std::size_t n_out = layer.weight.rows();
  const std::size_t n_in = layer.weight.cols();
  Matrix out(in.rows(), n_out);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto x = in.row(r);
    auto y = out.row(r);
    for (std::size_t o = 0; o < n_out; ++o) {
      auto w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

void relu_inplace(Matrix& m) {
  for (double& v : m.data())
    if (v < 0.0) v = 0.0;  // NaN passes through
}

// Activations a_0 (input) .. a_{L-1} (last hidden) followed by logits.
std::vector<Matrix> forward_all(const ParamSet& params, const Matrix& batch) {
  check_input(params, batch);
  std::vector<Matrix> acts;
  acts.reserve(params.layers.size() + 1);
  acts.push_back(batch);
  for (std::size_t j = 0; j < params.layers.size(); ++j) {
    Matrix z = dense(params.layers[j], acts.back());
    if (j + 1 < params.layers.size()) relu_inplace(z);
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace

Matrix forward(const ParamSet& params, const Matrix& batch) {
  check_input(params, batch);
  Matrix h = batch;
  for (std::size_t j = 0; j < params.layers.size(); ++j) {
    h = dense(params.layers[j], h);
    if (j + 1 < params.layers.size()) relu_inplace(h);
  }
  return h;
}

CapturedForward forward_capture(const ParamSet& params, const Matrix& batch) {
  std::vector<Matrix> acts = forward_all(params, batch);
  CapturedForward out;
  const std::size_t hidden = params.layers.size() - 1;
  out.trace.zero_counts.assign(hidden, 0);
  out.trace.total_counts.assign(hidden, 0);
  for (std::size_t h = 0; h < hidden; ++h) {
    const Matrix& a = acts[h + 1];
    out.trace.total_counts[h] = a.size();
    out.trace.zero_counts[h] =
        static_cast<std::uint64_t>(std::count(a.data().begin(), a.data().end(), 0.0));
  }
  out.logits = std::move(acts.back());
  return out;
}

Matrix softmax(const Matrix& logits, double temperature) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    auto out = p.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      out[c] = std::exp((z[c] - zmax) / temperature);
      sum += out[c];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

LossGrad ce_loss(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows())
    throw std::invalid_argument("ce_loss: label count does not match batch rows");
  const auto classes = static_cast<int>(logits.cols());
  LossGrad out;
  out.dlogits = softmax(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= classes)
      throw std::invalid_argument("ce_loss: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(classes) + ")");
    auto z = logits.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    total += std::log(sum) - (z[static_cast<std::size_t>(y)] - zmax);
    auto g = out.dlogits.row(r);
    g[static_cast<std::size_t>(y)] -= 1.0;
    for (double& v : g) v *= inv_n;
  }
  out.loss = total * inv_n;
  return out;
}

Gradients compute_gradients(const ParamSet& params, const Matrix& batch, const LossFn& loss) {
  std::vector<Matrix> acts = forward_all(params, batch);
  LossGrad lg = loss(acts.back());
  Gradients out;
  out.loss = lg.loss;
  out.grads = zeros_like(params.widths());
  Matrix delta = std::move(lg.dlogits);
  for (std::size_t jj = params.layers.size(); jj-- > 0;) {
    const Matrix& in = acts[jj];
    const DenseParams& layer = params.layers[jj];
    DenseParams& g = out.grads.layers[jj];
    const std::size_t n_out = layer.weight.rows();
    const std::size_t n_in = layer.weight.cols();
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      auto d = delta.row(r);
      auto x = in.row(r);
      for (std::size_t o = 0; o < n_out; ++o) {
        if (d[o] == 0.0) continue;
        auto gw = g.weight.row(o);
        for (std::size_t i = 0; i < n_in; ++i) gw[i] += d[o] * x[i];
        g.bias[o] += d[o];
      }
    }
    if (jj == 0) break;
    Matrix prev(batch.rows(), n_in);
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      auto d = delta.row(r);
      auto p = prev.row(r);
      auto x = in.row(r);
      for (std::size_t o = 0; o < n_out; ++o) {
        if (d[o] == 0.0) continue;
        auto w = layer.weight.row(o);
        for (std::size_t i = 0; i < n_in; ++i) p[i] += d[o] * w[i];
      }
      for (std::size_t i = 0; i < n_in; ++i)
        if (!(x[i] > 0.0)) p[i] = 0.0;
    }
    delta = std::move(prev);
  }
  return out;
}

OptimizerState OptimizerState::for_params(const ParamSet& params, double lr, double momentum) {
  return {zeros_like(params.widths()), lr, momentum};
}

void sgd_step(ParamSet& params, OptimizerState& state, const ParamSet& grads) {
  if (state.velocity.widths() != params.widths() || grads.widths() != params.widths())
    throw std::invalid_argument("sgd_step: optimizer state does not mirror parameter shapes");
  auto update = [&](std::vector<double>& theta, std::vector<double>& v,
                    const std::vector<double>& g) {
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = state.momentum * v[k] + g[k];
      theta[k] -= state.learning_rate * v[k];
    }
  };
  for (std::size_t j = 0; j < params.layers.size(); ++j) {
    update(params.layers[j].weight.data(), state.velocity.layers[j].weight.data(),
           grads.layers[j].weight.data());
    update(params.layers[j].bias, state.velocity.layers[j].bias, grads.layers[j].bias);
  }
}

double backward_and_step(ParamSet& params, OptimizerState& state, const Matrix& batch,
                         const LossFn& loss) {
  Gradients g = compute_gradients(params, batch, loss);
  if (!std::isfinite(g.loss))
    throw NonFiniteLoss("non-finite loss (" + std::to_string(g.loss) + ")");
  sgd_step(params, state, g.grads);
  return g.loss;
}

std::vector<int> predict(const ParamSet& params, const Matrix& batch) {
  Matrix logits = forward(params, batch);
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    out[r] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

double accuracy(const ParamSet& params, const Matrix& features, std::span<const int> labels) {
  if (features.rows() == 0) return 0.0;
  std::vector<int> pred = predict(params, features);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < pred.size(); ++r) hit += pred[r] == labels[r] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), source.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = source.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace flexfl
