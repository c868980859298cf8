#include "flexfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "flexfl/errors.hpp"
#include "flexfl/nn.hpp"
#include "flexfl/rng.hpp"

namespace flexfl {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.features = gather_rows(features, rows);
  out.labels.reserve(rows.size());
  for (auto r : rows) out.labels.push_back(labels[r]);
  return out;
}

std::size_t Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

void DataConfig::validate() const {
  if (classes < 2) throw ConfigError("data.classes", "must be >= 2");
  if (features < 1) throw ConfigError("data.features", "must be >= 1");
  if (train_per_class < 1) throw ConfigError("data.train_per_class", "must be >= 1");
  if (clusters_per_class < 1) throw ConfigError("data.clusters_per_class", "must be >= 1");
  if (spread < 0.0) throw ConfigError("data.spread", "must be >= 0");
  if (!(proxy_fraction > 0.0 && proxy_fraction <= 1.0))
    throw ConfigError("data.proxy_fraction", "must be in (0, 1]");
  if (alpha && !(*alpha > 0.0)) throw ConfigError("data.alpha", "must be > 0 (omit for IID)");
}

Corpus generate_corpus(const DataConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, {stream::kCorpus});
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t d = cfg.features;

  std::vector<std::vector<double>> centres(cfg.classes * cfg.clusters_per_class, std::vector<double>(d));
  for (auto& c : centres)
    for (double& v : c) v = cfg.center_scale * unit(rng);

  auto draw = [&](std::size_t per_class) {
    Dataset ds;
    ds.features = Matrix(per_class * cfg.classes, d);
    ds.labels.resize(per_class * cfg.classes);
    std::size_t row = 0;
    // Interleave classes so that any prefix stays roughly balanced.
    for (std::size_t k = 0; k < per_class; ++k) {
      for (std::size_t c = 0; c < cfg.classes; ++c, ++row) {
        const auto& centre = centres[c * cfg.clusters_per_class + k % cfg.clusters_per_class];
        auto x = ds.features.row(row);
        for (std::size_t f = 0; f < d; ++f) x[f] = centre[f] + cfg.spread * unit(rng);
        ds.labels[row] = static_cast<int>(c);
      }
    }
    return ds;
  };
  Corpus out;
  out.train = draw(cfg.train_per_class);
  out.test = draw(cfg.test_per_class);
  return out;
}

std::vector<DeviceDataset> dirichlet_partition(const Dataset& train, std::size_t devices,
                                               std::optional<double> alpha, std::uint64_t seed) {
  if (devices == 0) throw std::invalid_argument("dirichlet_partition: need at least one device");
  if (alpha && !(*alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be > 0");
  Rng rng = make_rng(seed, {stream::kPartition});
  const std::size_t classes = train.num_classes();

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < train.size(); ++i) by_class[static_cast<std::size_t>(train.labels[i])].push_back(i);

  std::vector<std::vector<std::size_t>> owned(devices);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n = members.size();
    std::vector<std::size_t> bounds(devices + 1, 0);
    if (!alpha) {
      for (std::size_t k = 0; k <= devices; ++k) bounds[k] = k * n / devices;
    } else {
      std::gamma_distribution<double> gamma(*alpha, 1.0);
      std::vector<double> share(devices);
      for (double& s : share) s = gamma(rng);
      double total = std::accumulate(share.begin(), share.end(), 0.0);
      if (!(total > 0.0)) {
        // Every draw underflowed; give the class to a single device.
        std::fill(share.begin(), share.end(), 0.0);
        share[std::uniform_int_distribution<std::size_t>(0, devices - 1)(rng)] = 1.0;
        total = 1.0;
      }
      double cum = 0.0;
      for (std::size_t k = 0; k < devices; ++k) {
        cum += share[k] / total;
        bounds[k + 1] = std::min(n, static_cast<std::size_t>(std::llround(cum * static_cast<double>(n))));
      }
      bounds[devices] = n;
    }
    for (std::size_t k = 0; k < devices; ++k)
      for (std::size_t i = bounds[k]; i < bounds[k + 1]; ++i) owned[k].push_back(members[i]);
  }

  std::vector<DeviceDataset> out;
  out.reserve(devices);
  for (std::size_t k = 0; k < devices; ++k) {
    std::sort(owned[k].begin(), owned[k].end());
    out.push_back({k, train.subset(owned[k])});
  }
  return out;
}

ProxySplit proxy_split(const Dataset& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("proxy_split: fraction must be in (0, 1]");
  Rng rng = make_rng(seed, {stream::kProxy});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto m = std::min(order.size(),
                          static_cast<std::size_t>(std::floor(fraction * static_cast<double>(order.size()) + 1e-9)));
  const auto n_train = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(m) + 1e-9));
  std::span<const std::size_t> all(order.data(), m);
  ProxySplit out;
  out.train = train.subset(all.first(n_train));
  out.test = train.subset(all.subspan(n_train));
  return out;
}

double label_entropy(const Dataset& data, std::size_t classes) {
  if (data.empty()) return 0.0;
  std::vector<double> counts(classes, 0.0);
  for (int y : data.labels) counts[static_cast<std::size_t>(y)] += 1.0;
  double h = 0.0;
  for (double c : counts) {
    if (c == 0.0) continue;
    const double p = c / static_cast<double>(data.size());
    h -= p * std::log(p);
  }
  return h;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV file " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(0, cell.find_first_not_of(" \t\r"));
      cell.erase(cell.find_last_not_of(" \t\r") + 1);
      cells.push_back(cell);
    }
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header row");
  const auto header = split(line);
  if (header.size() < 2) throw std::runtime_error(path.string() + ": need at least one feature and a label column");
  std::size_t label_col = header.size() - 1;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == "label") label_col = c;

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " columns");
    try {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c == label_col) {
          std::size_t used = 0;
          const int y = std::stoi(cells[c], &used);
          if (used != cells[c].size() || y < 0) throw std::invalid_argument("label");
          labels.push_back(y);
        } else {
          values.push_back(std::stod(cells[c]));
        }
      }
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed value");
    }
  }
  Dataset ds;
  const std::size_t d = header.size() - 1;
  ds.features = Matrix(labels.size(), d);
  ds.features.data() = std::move(values);
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace flexfl
