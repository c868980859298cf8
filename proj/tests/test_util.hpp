#pragma once

// Independent oracles shared by the test suites. Nothing here calls the
// library code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "flexfl/nn.hpp"

namespace flexfl::testing {

inline ModelArch random_arch(std::mt19937_64& rng, std::size_t max_width, std::size_t max_hidden = 3) {
  std::uniform_int_distribution<std::size_t> width(1, max_width);
  std::uniform_int_distribution<std::size_t> hidden(1, max_hidden);
  std::uniform_int_distribution<std::size_t> classes(2, std::max<std::size_t>(2, max_width));
  ModelArch a;
  a.layer_widths.push_back(width(rng));
  const auto h = hidden(rng);
  for (std::size_t i = 0; i < h; ++i) a.layer_widths.push_back(width(rng));
  a.layer_widths.push_back(classes(rng));
  return a;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = n(rng);
  return m;
}

inline ParamSet random_params(std::mt19937_64& rng, const std::vector<std::size_t>& widths, double scale = 0.5) {
  ParamSet p = zeros_like(widths);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& l : p.layers) {
    for (double& v : l.weight.data()) v = n(rng);
    for (double& v : l.bias) v = n(rng);
  }
  return p;
}

inline std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t classes) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(classes) - 1);
  std::vector<int> y(n);
  for (int& v : y) v = d(rng);
  return y;
}

/// Per-element triple loop; hidden[j] holds post-ReLU activations of hidden layer j.
struct NaiveForward {
  std::vector<std::vector<std::vector<double>>> hidden;  // [layer][sample][unit]
  std::vector<std::vector<double>> logits;               // [sample][class]
};

inline NaiveForward naive_forward(const ParamSet& p, const Matrix& x) {
  NaiveForward out;
  std::vector<std::vector<double>> cur(x.rows());
  for (std::size_t s = 0; s < x.rows(); ++s)
    for (std::size_t c = 0; c < x.cols(); ++c) cur[s].push_back(x(s, c));
  for (std::size_t j = 0; j < p.layers.size(); ++j) {
    const auto& W = p.layers[j].weight;
    std::vector<std::vector<double>> next(x.rows(), std::vector<double>(W.rows()));
    for (std::size_t s = 0; s < x.rows(); ++s)
      for (std::size_t o = 0; o < W.rows(); ++o) {
        double z = p.layers[j].bias[o];
        for (std::size_t i = 0; i < W.cols(); ++i) z += W(o, i) * cur[s][i];
        next[s][o] = (j + 1 < p.layers.size()) ? std::max(0.0, z) : z;
      }
    if (j + 1 < p.layers.size()) out.hidden.push_back(next);
    cur = std::move(next);
  }
  out.logits = std::move(cur);
  return out;
}

inline Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

/// log-softmax of one row computed in long double.
inline std::vector<long double> log_softmax_ld(std::span<const double> z, double tau) {
  long double mx = -INFINITY;
  for (double v : z) mx = std::max<long double>(mx, v / tau);
  long double s = 0;
  for (double v : z) s += std::exp(static_cast<long double>(v) / tau - mx);
  std::vector<long double> out;
  for (double v : z) out.push_back(static_cast<long double>(v) / tau - mx - std::log(s));
  return out;
}

inline double oracle_ce(const Matrix& logits, const std::vector<int>& labels) {
  long double total = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r)
    total -= log_softmax_ld(logits.row(r), 1.0)[static_cast<std::size_t>(labels[r])];
  return static_cast<double>(total / logits.rows());
}

/// (1/n) sum_j tau^2 KL(p_j || q), mean over rows, in long double.
inline double oracle_kl(const std::vector<Matrix>& teachers, const Matrix& student, double tau) {
  long double total = 0;
  for (const auto& t : teachers)
    for (std::size_t r = 0; r < student.rows(); ++r) {
      auto lp = log_softmax_ld(t.row(r), tau);
      auto lq = log_softmax_ld(student.row(r), tau);
      long double kl = 0;
      for (std::size_t c = 0; c < lp.size(); ++c) kl += std::exp(lp[c]) * (lp[c] - lq[c]);
      total += static_cast<long double>(tau) * tau * kl;
    }
  return static_cast<double>(total / teachers.size() / student.rows());
}

/// Central differences of `f` with respect to every entry of the flattened vector.
inline std::vector<double> fd_gradient(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                       double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline std::vector<double> flatten(const ParamSet& p) {
  std::vector<double> out;
  for (const auto& l : p.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

inline ParamSet unflatten(const std::vector<double>& flat, const std::vector<std::size_t>& widths) {
  ParamSet p = zeros_like(widths);
  std::size_t k = 0;
  for (auto& l : p.layers) {
    for (double& v : l.weight.data()) v = flat[k++];
    for (double& v : l.bias) v = flat[k++];
  }
  return p;
}

/// max_i |a_i - b_i| / max(|a_i| + |b_i|, floor)
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(a[i]) + std::abs(b[i]), floor));
  return worst;
}

/// Coordinate of a parameter: (layer, row, col); col == SIZE_MAX marks a bias entry.
struct Coord {
  std::size_t layer, row, col;
  auto operator<=>(const Coord&) const = default;
};

/// Coordinates retained by prefix widths, enumerated by nested loops.
inline std::vector<Coord> prefix_coords(const std::vector<std::size_t>& widths) {
  std::vector<Coord> out;
  for (std::size_t j = 1; j < widths.size(); ++j)
    for (std::size_t r = 0; r < widths[j]; ++r) {
      for (std::size_t c = 0; c < widths[j - 1]; ++c) out.push_back({j - 1, r, c});
      out.push_back({j - 1, r, SIZE_MAX});
    }
  return out;
}

inline double& at(ParamSet& p, const Coord& c) {
  return c.col == SIZE_MAX ? p.layers[c.layer].bias[c.row] : p.layers[c.layer].weight(c.row, c.col);
}
inline double at(const ParamSet& p, const Coord& c) {
  return c.col == SIZE_MAX ? p.layers[c.layer].bias[c.row] : p.layers[c.layer].weight(c.row, c.col);
}

}  // namespace flexfl::testing
