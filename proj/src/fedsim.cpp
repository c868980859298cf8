#include "flexfl/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "flexfl/errors.hpp"
#include "flexfl/rng.hpp"

namespace flexfl {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kFlexFL: return "flexfl";
    case Mode::kBaseline: return "baseline";
    case Mode::kNoKd: return "no-kd";
    case Mode::kNoAdaptive: return "no-adaptive";
    case Mode::kNoApoz: return "no-apoz";
    case Mode::kNoAdjW: return "no-adjw";
  }
  return "flexfl";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::kFlexFL, Mode::kBaseline, Mode::kNoKd, Mode::kNoAdaptive, Mode::kNoApoz, Mode::kNoAdjW})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown mode '" + name +
                              "' (expected flexfl|baseline|no-kd|no-adaptive|no-apoz|no-adjw)");
}

void PopulationConfig::validate() const {
  if (classes.empty()) throw ConfigError("population.classes", "must not be empty");
  double total = 0.0;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::string at = "population.classes[" + std::to_string(i) + "]";
    if (!(classes[i].share >= 0.0)) throw ConfigError(at + ".share", "must be >= 0");
    if (!(classes[i].max_capacity > 0.0)) throw ConfigError(at + ".max_capacity", "must be > 0");
    total += classes[i].share;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("population.classes", "shares must sum to 1");
  if (variances.empty()) throw ConfigError("population.variances", "must not be empty");
  for (double v : variances)
    if (!(v >= 0.0)) throw ConfigError("population.variances", "entries must be >= 0");
}

void SimConfig::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("sim.fraction", "must be in (0, 1]");
  if (devices < 1) throw ConfigError("sim.devices", "must be >= 1");
  if (eval_every < 1) throw ConfigError("sim.eval_every", "must be >= 1");
  if (threads < 1) throw ConfigError("sim.threads", "must be >= 1");
  if (targets.empty()) throw ConfigError("sim.targets", "must not be empty");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!(targets[i] > 0.0 && targets[i] <= 1.0)) throw ConfigError("sim.targets", "entries must be in (0, 1]");
    if (i > 0 && !(targets[i] > targets[i - 1])) throw ConfigError("sim.targets", "must be strictly ascending");
  }
  if (selection_count(fraction, devices) > devices) throw ConfigError("sim.fraction", "selects more devices than exist");
}

void ExperimentConfig::validate() const {
  sim.validate();
  search.validate();
  kd.validate();
  population.validate();
  if (!train_csv) data.validate();
  if (!(data.proxy_fraction > 0.0 && data.proxy_fraction <= 1.0))
    throw ConfigError("data.proxy_fraction", "must be in (0, 1]");
  if (hidden.empty()) throw ConfigError("model.hidden", "needs at least one hidden layer");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("model.hidden", "widths must be positive");
  if (adaptive.size_fraction < 0.0) throw ConfigError("adaptive.size_fraction", "must be >= 0");
  if (train_csv.has_value() != test_csv.has_value())
    throw ConfigError("data.train_csv", "train_csv and test_csv must be given together");
}

std::vector<DeviceProfile> make_population(const PopulationConfig& cfg, std::size_t devices,
                                           std::uint64_t seed) {
  cfg.validate();
  // Largest-remainder apportionment of the class shares.
  std::vector<std::size_t> counts(cfg.classes.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const double exact = cfg.classes[c].share * static_cast<double>(devices);
    counts[c] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[c];
    remainders.push_back({exact - static_cast<double>(counts[c]), c});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < devices; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];

  std::vector<std::size_t> class_of;
  for (std::size_t c = 0; c < counts.size(); ++c) class_of.insert(class_of.end(), counts[c], c);
  Rng rng = make_rng(seed, {stream::kPopulation});
  std::shuffle(class_of.begin(), class_of.end(), rng);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.variances.size() - 1);

  std::vector<DeviceProfile> out;
  for (std::size_t id = 0; id < devices; ++id) {
    const auto& cls = cfg.classes[class_of[id]];
    out.push_back({id, cls.name, cls.max_capacity, cfg.variances[pick(rng)],
                   derive_seed(seed, {stream::kDevice, id})});
  }
  return out;
}

double sample_resource(const DeviceProfile& device, std::size_t round) {
  if (device.variance == 0.0) return device.max_capacity;
  Rng rng = make_rng(device.seed, {round});
  std::normal_distribution<double> u(0.0, std::sqrt(device.variance));
  return device.max_capacity - std::abs(u(rng));
}

bool can_host(double r, std::size_t model_params, std::size_t full_params) {
  return r > static_cast<double>(model_params) / static_cast<double>(full_params) * 100.0;
}

const PruningPlan& ModelPool::plan(PlanId id) const {
  if (id.level < 1 || id.level > plans.size()) throw std::out_of_range("no pool level " + id.name());
  if (!id.adaptive) return plans[id.level - 1];
  if (id.level < 2 || id.level - 2 >= adaptive_plans.size())
    throw std::out_of_range("no adaptive plan " + id.name());
  return adaptive_plans[id.level - 2];
}

double ModelPool::size_percent(PlanId id) const {
  return static_cast<double>(plan(id).achieved_params) / static_cast<double>(full_params()) * 100.0;
}

ModelPool make_pool(ParamSet global, std::vector<PruningPlan> plans, std::vector<PruningPlan> adaptive) {
  ModelPool pool;
  pool.plans = std::move(plans);
  pool.adaptive_plans = std::move(adaptive);
  update_pool(pool, std::move(global));
  return pool;
}

void update_pool(ModelPool& pool, ParamSet global) {
  pool.global = std::move(global);
  pool.models.clear();
  for (const auto& p : pool.plans) pool.models.push_back(extract_submodel(pool.global, p));
}

std::size_t selection_count(double fraction, std::size_t devices) {
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(devices) + 1e-9));
  return std::max<std::size_t>(1, k);
}

std::size_t assign_level(const ModelPool& pool, double max_capacity) {
  for (std::size_t level = pool.levels(); level >= 1; --level)
    if (max_capacity > pool.size_percent({level, false})) return level;
  return 1;
}

std::vector<Assignment> select_devices(std::span<const DeviceProfile> devices,
                                       const std::vector<bool>& eligible, const ModelPool& pool,
                                       std::size_t k, std::size_t round, std::uint64_t seed) {
  if (k > devices.size()) throw ConfigError("sim.fraction", "K exceeds the device count");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < devices.size(); ++i)
    if (eligible.empty() || eligible[i]) candidates.push_back(i);
  Rng rng = make_rng(seed, {stream::kSelection, round});
  // Partial Fisher-Yates over the eligible ids.
  const std::size_t take = std::min(k, candidates.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  candidates.resize(take);
  std::sort(candidates.begin(), candidates.end());
  std::vector<Assignment> out;
  for (auto id : candidates) out.push_back({devices[id].id, assign_level(pool, devices[id].max_capacity)});
  return out;
}

DispatchChoice dispatch_and_adapt(const ModelPool& pool, std::size_t level, double r, bool with_adaptive) {
  const bool has_adaptive = !pool.adaptive_plans.empty();
  for (PlanId id : fallback_chain(level, with_adaptive && has_adaptive)) {
    if (can_host(r, pool.plan(id).achieved_params, pool.full_params()))
      return {id, false, !(id == PlanId{level, false})};
  }
  return {{1, false}, true, level != 1};
}

ParamSet aggregate(std::span<const Upload> uploads, const ParamSet& current) {
  if (uploads.empty()) {
    std::cerr << "warning: no uploads this round, global model kept\n";
    return current;
  }
  std::vector<const Upload*> order;
  for (const auto& u : uploads) order.push_back(&u);
  std::stable_sort(order.begin(), order.end(), [](const Upload* a, const Upload* b) { return a->device < b->device; });

  const auto widths = current.widths();
  ParamSet weighted = zeros_like(widths);
  ParamSet weight = zeros_like(widths);
  const double inf = std::numeric_limits<double>::infinity();
  ParamSet lo = zeros_like(widths);
  ParamSet hi = zeros_like(widths);
  for (std::size_t j = 0; j < widths.size() - 1; ++j) {
    std::fill(lo.layers[j].weight.data().begin(), lo.layers[j].weight.data().end(), inf);
    std::fill(lo.layers[j].bias.begin(), lo.layers[j].bias.end(), inf);
    std::fill(hi.layers[j].weight.data().begin(), hi.layers[j].weight.data().end(), -inf);
    std::fill(hi.layers[j].bias.begin(), hi.layers[j].bias.end(), -inf);
  }

  auto accumulate = [](double v, double d, double& sum, double& w, double& mn, double& mx) {
    sum += v * d;
    w += d;
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  };
  for (const Upload* u : order) {
    const auto uw = u->params.widths();
    if (uw.size() != widths.size() || !nested_in(uw, widths) || uw.front() != widths.front() ||
        uw.back() != widths.back())
      throw std::invalid_argument("aggregate: upload from device " + std::to_string(u->device) +
                                  " is not a prefix submodel of the global model");
    const auto d = static_cast<double>(u->samples);
    for (std::size_t j = 0; j < u->params.layers.size(); ++j) {
      const auto& src = u->params.layers[j];
      for (std::size_t r = 0; r < src.weight.rows(); ++r) {
        for (std::size_t c = 0; c < src.weight.cols(); ++c)
          accumulate(src.weight(r, c), d, weighted.layers[j].weight(r, c), weight.layers[j].weight(r, c),
                     lo.layers[j].weight(r, c), hi.layers[j].weight(r, c));
        accumulate(src.bias[r], d, weighted.layers[j].bias[r], weight.layers[j].bias[r], lo.layers[j].bias[r],
                   hi.layers[j].bias[r]);
      }
    }
  }

  ParamSet out = current;
  // Clamping to the covering range keeps rounding from leaving [min, max].
  auto finish = [](double& dst, double sum, double w, double mn, double mx) {
    if (w > 0.0) dst = std::clamp(sum / w, mn, mx);
  };
  for (std::size_t j = 0; j < out.layers.size(); ++j) {
    auto& dst = out.layers[j];
    for (std::size_t k = 0; k < dst.weight.size(); ++k)
      finish(dst.weight.data()[k], weighted.layers[j].weight.data()[k], weight.layers[j].weight.data()[k],
             lo.layers[j].weight.data()[k], hi.layers[j].weight.data()[k]);
    for (std::size_t k = 0; k < dst.bias.size(); ++k)
      finish(dst.bias[k], weighted.layers[j].bias[k], weight.layers[j].bias[k], lo.layers[j].bias[k],
             hi.layers[j].bias[k]);
  }
  return out;
}

std::vector<double> evaluate_pool(const ModelPool& pool, const Dataset& test) {
  std::vector<double> out;
  for (const auto& m : pool.models) out.push_back(accuracy(m, test.features, test.labels));
  return out;
}

ApozProfile planning_profile(const ApozProfile& measured, Mode mode) {
  ApozProfile p = measured;
  switch (mode) {
    case Mode::kBaseline:
      // Uniform width scaling: every unit gets the same ratio.
      for (auto& u : p.units) {
        u.apoz = 0.0;
        u.adj_weight = 1.0;
      }
      break;
    case Mode::kNoApoz: {
      // Layer differences come from the adjustment weights alone.
      double mean = 0.0;
      for (const auto& u : p.units) mean += u.apoz;
      mean /= static_cast<double>(p.units.size());
      for (auto& u : p.units) u.apoz = mean;
      break;
    }
    case Mode::kNoAdjW:
      for (auto& u : p.units) u.adj_weight = 1.0;
      break;
    default:
      break;
  }
  return p;
}

namespace {

struct Prepared {
  Corpus corpus;
  ModelArch arch;
};

Prepared prepare_data(const ExperimentConfig& cfg) {
  Prepared out;
  if (cfg.train_csv) {
    out.corpus.train = load_csv(*cfg.train_csv);
    out.corpus.test = load_csv(*cfg.test_csv);
    if (out.corpus.train.empty()) throw ConfigError("data.train_csv", "file has no rows");
    if (out.corpus.train.features.cols() != out.corpus.test.features.cols())
      throw ConfigError("data.test_csv", "feature count differs from the training file");
  } else {
    DataConfig dc = cfg.data;
    dc.seed = cfg.seed;
    out.corpus = generate_corpus(dc);
  }
  const std::size_t classes = std::max(out.corpus.train.num_classes(), out.corpus.test.num_classes());
  out.arch.layer_widths.push_back(out.corpus.train.features.cols());
  out.arch.layer_widths.insert(out.arch.layer_widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  out.arch.layer_widths.push_back(classes);
  out.arch.layer_groups = cfg.groups;
  out.arch.validate();
  return out;
}

}  // namespace

RunResult run(const ExperimentConfig& cfg) {
  cfg.validate();
  RunResult res;
  Prepared prep = prepare_data(cfg);
  res.arch = prep.arch;
  const Dataset& train = prep.corpus.train;
  const Dataset& test = prep.corpus.test;

  // Pre-processing: pre-train on the proxy set, score, reset, generate the pool.
  const ProxySplit proxy = proxy_split(train, cfg.data.proxy_fraction, cfg.seed);
  PretrainConfig pre = cfg.pretrain;
  pre.seed = derive_seed(cfg.seed, {stream::kPretrainShuffle});
  res.profile = build_profile(res.arch, init_params(res.arch, derive_seed(cfg.seed, {stream::kPretrainInit})),
                              proxy.train.features, proxy.train.labels, proxy.test.features, pre)
                    .profile;
  ParamSet global = init_params(res.arch, derive_seed(cfg.seed, {stream::kReset}));
  res.planning_profile = planning_profile(res.profile, cfg.mode);
  res.plans = generate_plans(res.planning_profile, res.arch, cfg.sim.targets, cfg.search);
  if (res.plans.size() > 1)
    res.adaptive_plans = adaptive_plans(res.plans, res.planning_profile, res.arch, cfg.search, cfg.adaptive);
  res.pool = make_pool(std::move(global), res.plans, res.adaptive_plans);

  const auto partition = dirichlet_partition(train, cfg.sim.devices, cfg.data.alpha, cfg.seed);
  res.devices = make_population(cfg.population, cfg.sim.devices, cfg.seed);
  // Devices that received no samples sit out the whole run.
  std::vector<bool> eligible;
  for (const auto& d : partition) {
    res.device_samples.push_back(d.data.size());
    eligible.push_back(!d.data.empty());
  }

  KdConfig kd = cfg.kd;
  if (cfg.mode == Mode::kBaseline || cfg.mode == Mode::kNoKd) kd.kl_weight = 0.0;
  const bool with_adaptive = cfg.mode != Mode::kNoAdaptive;
  const std::size_t k = selection_count(cfg.sim.fraction, cfg.sim.devices);

  std::uint64_t dispatch_total = 0, upload_total = 0;
  std::size_t adaptive_total = 0, forced_total = 0;

  for (std::size_t round = 1; round <= cfg.sim.rounds; ++round) {
    const auto assignments = select_devices(res.devices, eligible, res.pool, k, round, cfg.seed);
    struct Job {
      std::size_t device;
      PruningPlan plan;
      std::vector<std::vector<std::size_t>> teachers;
    };
    std::vector<Job> jobs;
    RoundStats stats;
    stats.round = round;
    for (const auto& a : assignments) {
      const double r = sample_resource(res.devices[a.device], round);
      const DispatchChoice choice = dispatch_and_adapt(res.pool, a.level, r, with_adaptive);
      DispatchRecord rec{round, a.device, a.level, choice.chosen, r, res.pool.size_percent(choice.chosen),
                         choice.forced, choice.forced && cfg.sim.skip_forced};
      res.dispatches.push_back(rec);
      if (rec.skipped) continue;
      if (choice.adapted) ++adaptive_total;
      if (choice.forced) ++forced_total;
      Job job{a.device, res.pool.plan(choice.chosen), {}};
      for (std::size_t lvl = 1; lvl < choice.chosen.level; ++lvl) job.teachers.push_back(res.pool.plans[lvl - 1].widths);
      const std::uint64_t bytes = static_cast<std::uint64_t>(job.plan.achieved_params) * sizeof(double);
      stats.dispatch_bytes += bytes;
      stats.upload_bytes += bytes;
      jobs.push_back(std::move(job));
    }

    auto train_one = [&](const Job& job) {
      const std::uint64_t seed = derive_seed(cfg.seed, {stream::kLocalTrain, round, job.device});
      try {
        return local_train(extract_submodel(res.pool.global, job.plan), job.teachers, partition[job.device].data, kd, seed);
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss("device " + std::to_string(job.device) + ", round " + std::to_string(round) + ": " + e.what());
      }
    };
    std::vector<Upload> uploads(jobs.size());
    try {
      if (cfg.sim.threads > 1) {
        for (std::size_t start = 0; start < jobs.size(); start += cfg.sim.threads) {
          std::vector<std::future<LocalResult>> futures;
          const std::size_t end = std::min(jobs.size(), start + cfg.sim.threads);
          for (std::size_t i = start; i < end; ++i)
            futures.push_back(std::async(std::launch::async, train_one, std::cref(jobs[i])));
          for (std::size_t i = start; i < end; ++i) {
            LocalResult lr = futures[i - start].get();
            uploads[i] = {jobs[i].device, std::move(lr.params), lr.sample_count};
          }
        }
      } else {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
          LocalResult lr = train_one(jobs[i]);
          uploads[i] = {jobs[i].device, std::move(lr.params), lr.sample_count};
        }
      }
    } catch (const std::exception& e) {
      res.error = e.what();
      break;
    }

    update_pool(res.pool, aggregate(uploads, res.pool.global));
    stats.trained = uploads.size();
    dispatch_total += stats.dispatch_bytes;
    upload_total += stats.upload_bytes;
    res.round_stats.push_back(stats);
    res.completed_rounds = round;

    if (round % cfg.sim.eval_every == 0 || round == cfg.sim.rounds) {
      RoundReport rep;
      rep.round = round;
      rep.level_accuracy = evaluate_pool(res.pool, test);
      rep.average_accuracy = std::accumulate(rep.level_accuracy.begin(), rep.level_accuracy.end(), 0.0) /
                             static_cast<double>(rep.level_accuracy.size());
      rep.global_accuracy = rep.level_accuracy.back();
      rep.dispatch_bytes = dispatch_total;
      rep.upload_bytes = upload_total;
      rep.adaptive_events = adaptive_total;
      rep.forced_m1 = forced_total;
      res.reports.push_back(std::move(rep));
    }
  }
  return res;
}

void write_metrics_csv(std::ostream& out, std::span<const RoundReport> reports, std::size_t levels) {
  out << "round";
  for (std::size_t i = 1; i <= levels; ++i) out << ",acc_m" << i;
  out << ",avg,global,dispatch_bytes,upload_bytes,adaptive_events,forced_m1\n";
  char buf[64];
  auto fixed = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    out << r.round;
    for (double a : r.level_accuracy) out << ',' << fixed(a);
    out << ',' << fixed(r.average_accuracy) << ',' << fixed(r.global_accuracy) << ',' << r.dispatch_bytes << ','
        << r.upload_bytes << ',' << r.adaptive_events << ',' << r.forced_m1 << '\n';
  }
}

nlohmann::json plan_dump(const RunResult& result) {
  nlohmann::json plans = nlohmann::json::array();
  for (const auto& p : result.plans) plans.push_back(plan_to_json(p));
  nlohmann::json adaptive = nlohmann::json::array();
  for (const auto& p : result.adaptive_plans) adaptive.push_back(plan_to_json(p));
  return {{"arch", result.arch.layer_widths},
          {"full_params", param_count(result.arch)},
          {"profile", profile_to_json(result.profile)},
          {"planning_profile", profile_to_json(result.planning_profile)},
          {"plans", plans},
          {"adaptive_plans", adaptive}};
}

}  // namespace flexfl
