#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "flexfl/errors.hpp"
#include "flexfl/fedsim.hpp"
#include "flexfl/rng.hpp"
#include "test_util.hpp"

namespace flexfl {
namespace {

using testing::random_params;

const ModelArch kDesk{{16, 64, 64, 32, 10}, {}};

ApozProfile profile_for(const ModelArch& arch, std::vector<double> apoz) {
  auto sizes = unit_sizes(arch);
  auto w = adj_weights(sizes);
  auto groups = arch.groups();
  ApozProfile p;
  for (std::size_t u = 0; u < groups.size(); ++u) p.units.push_back({groups[u], sizes[u], apoz[u], w[u]});
  return p;
}

ModelPool desk_pool(std::uint64_t seed = 1) {
  const auto profile = profile_for(kDesk, {0.5, 0.3, 0.2});
  const std::vector<double> targets = {0.25, 0.5, 1.0};
  auto plans = generate_plans(profile, kDesk, targets, {});
  auto adaptive = adaptive_plans(plans, profile, kDesk, {}, {});
  return make_pool(init_params(kDesk, seed), plans, adaptive);
}

DeviceProfile device(double r_max, double variance, std::uint64_t seed = 11) {
  return {0, "x", r_max, variance, seed};
}

TEST(SampleResource, BoundsAndDeterminism) {
  EXPECT_EQ(sample_resource(device(60, 0), 3), 60.0);
  const auto d = device(60, 8);
  std::set<double> distinct;
  for (std::size_t round = 1; round <= 200; ++round) {
    const double r = sample_resource(d, round);
    EXPECT_LE(r, 60.0);
    EXPECT_EQ(r, sample_resource(d, round));
    distinct.insert(r);
  }
  EXPECT_GT(distinct.size(), 190u);
}

TEST(CanHost, StrictInequality) {
  EXPECT_TRUE(can_host(30, 25, 100));
  EXPECT_FALSE(can_host(30, 50, 100));
  EXPECT_FALSE(can_host(25, 25, 100));
}

TEST(Population, SharesAndDeterminism) {
  PopulationConfig cfg;
  auto pop = make_population(cfg, 20, 4);
  std::map<std::string, int> count;
  for (const auto& d : pop) {
    ++count[d.device_class];
    EXPECT_TRUE(std::find(cfg.variances.begin(), cfg.variances.end(), d.variance) != cfg.variances.end());
  }
  EXPECT_EQ(count["weak"], 8);
  EXPECT_EQ(count["medium"], 6);
  EXPECT_EQ(count["strong"], 6);
  auto again = make_population(cfg, 20, 4);
  for (std::size_t i = 0; i < pop.size(); ++i) {
    EXPECT_EQ(pop[i].device_class, again[i].device_class);
    EXPECT_EQ(pop[i].seed, again[i].seed);
  }
  cfg.classes[0].share = 0.5;
  EXPECT_THROW(make_population(cfg, 20, 4), ConfigError);
}

TEST(Selection, CountAndAssignment) {
  EXPECT_EQ(selection_count(0.1, 100), 10u);
  EXPECT_EQ(selection_count(0.01, 5), 1u);
  EXPECT_EQ(selection_count(1.0, 7), 7u);

  const ModelPool pool = desk_pool();
  EXPECT_EQ(assign_level(pool, 110), 3u);
  EXPECT_EQ(assign_level(pool, 60), 2u);
  EXPECT_EQ(assign_level(pool, 35), 1u);
  EXPECT_EQ(assign_level(pool, 5), 1u);

  auto pop = make_population({}, 20, 2);
  EXPECT_THROW(select_devices(pop, {}, pool, 21, 1, 2), ConfigError);
  auto chosen = select_devices(pop, {}, pool, 5, 1, 2);
  ASSERT_EQ(chosen.size(), 5u);
  for (std::size_t i = 1; i < chosen.size(); ++i) EXPECT_LT(chosen[i - 1].device, chosen[i].device);
  for (const auto& a : chosen) EXPECT_EQ(a.level, assign_level(pool, pop[a.device].max_capacity));
  EXPECT_EQ(chosen, select_devices(pop, {}, pool, 5, 1, 2));

  std::vector<bool> eligible(20, false);
  eligible[3] = eligible[17] = true;
  auto few = select_devices(pop, eligible, pool, 5, 1, 2);
  ASSERT_EQ(few.size(), 2u);
  EXPECT_EQ(few[0].device, 3u);
  EXPECT_EQ(few[1].device, 17u);
}

TEST(Dispatch, FallbackWalksTheChain) {
  const ModelPool pool = desk_pool();
  const double m1 = pool.size_percent({1, false}), m2 = pool.size_percent({2, false});
  const double m2a = pool.size_percent({2, true}), m3a = pool.size_percent({3, true});
  ASSERT_NEAR(m3a, 90.0, 1.0);
  ASSERT_NEAR(m2a, m2 - 10.0, 1.0);
  ASSERT_LT(m2a, 45.0);
  ASSERT_GT(m2, 45.0);

  auto c = dispatch_and_adapt(pool, 3, 101.0);
  EXPECT_EQ(c.chosen, (PlanId{3, false}));
  EXPECT_FALSE(c.adapted);

  c = dispatch_and_adapt(pool, 3, 95.0);
  EXPECT_EQ(c.chosen, (PlanId{3, true}));
  EXPECT_TRUE(c.adapted);
  EXPECT_FALSE(c.forced);

  c = dispatch_and_adapt(pool, 2, 45.0);
  EXPECT_EQ(c.chosen, (PlanId{2, true}));

  c = dispatch_and_adapt(pool, 2, 45.0, false);
  EXPECT_EQ(c.chosen, (PlanId{1, false}));

  c = dispatch_and_adapt(pool, 3, 10.0);
  ASSERT_LT(10.0, m1);
  EXPECT_EQ(c.chosen, (PlanId{1, false}));
  EXPECT_TRUE(c.forced);

  c = dispatch_and_adapt(pool, 1, 10.0);
  EXPECT_TRUE(c.forced);
  EXPECT_FALSE(c.adapted);
}

ParamSet constant_params(std::span<const std::size_t> widths, double v) {
  ParamSet p = zeros_like(std::vector<std::size_t>(widths.begin(), widths.end()));
  for (auto& l : p.layers) {
    std::fill(l.weight.data().begin(), l.weight.data().end(), v);
    std::fill(l.bias.begin(), l.bias.end(), v);
  }
  return p;
}

TEST(Aggregate, TwoUploadWorkedExample) {
  const std::vector<std::size_t> full = {4, 6, 3}, small = {4, 2, 3};
  const ParamSet current = constant_params(full, -7.0);
  std::vector<Upload> ups = {{1, constant_params(full, 1.5), 100}, {0, constant_params(small, 4.0), 300}};
  const ParamSet out = aggregate(ups, current);
  const double both = (100 * 1.5 + 300 * 4.0) / 400.0;
  for (const auto& c : testing::prefix_coords(full)) {
    const bool covered_by_small = c.row < small[c.layer + 1] && (c.col == SIZE_MAX || c.col < small[c.layer]);
    EXPECT_DOUBLE_EQ(testing::at(out, c), covered_by_small ? both : 1.5);
  }
}

TEST(Aggregate, UncoveredKeepsCurrentAndEmptyIsIdentity) {
  const std::vector<std::size_t> full = {3, 5, 2}, small = {3, 1, 2};
  Rng rng = make_rng(9);
  const ParamSet current = random_params(rng, full);
  std::vector<Upload> ups = {{0, random_params(rng, small), 10}};
  const ParamSet out = aggregate(ups, current);
  EXPECT_EQ(extract_submodel(out, small), ups[0].params);
  EXPECT_EQ(embed_submodel(ups[0].params, current), out);
  EXPECT_EQ(aggregate({}, current), current);
}

TEST(Aggregate, FixedPointRangeAndOrder) {
  Rng rng = make_rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<std::size_t> full = {5, 8, 6, 3};
    const ParamSet current = random_params(rng, full);
    std::vector<Upload> ups;
    std::uniform_int_distribution<std::size_t> w1(1, 8), w2(1, 6), n(1, 500);
    for (std::size_t k = 0; k < 5; ++k) {
      const std::vector<std::size_t> sw = {5, w1(rng), w2(rng), 3};
      ups.push_back({k, extract_submodel(current, sw), n(rng)});
    }
    EXPECT_EQ(aggregate(ups, current), current);

    for (auto& u : ups) u.params = random_params(rng, u.params.widths());
    const ParamSet out = aggregate(ups, current);
    auto shuffled = ups;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(aggregate(shuffled, current), out);

    for (const auto& c : testing::prefix_coords(full)) {
      double lo = 1e300, hi = -1e300;
      long double sum = 0, wt = 0;
      for (const auto& u : ups) {
        const auto uw = u.params.widths();
        if (c.row >= uw[c.layer + 1] || (c.col != SIZE_MAX && c.col >= uw[c.layer])) continue;
        const double v = testing::at(u.params, c);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += static_cast<long double>(v) * u.samples;
        wt += u.samples;
      }
      const double got = testing::at(out, c);
      if (wt == 0) {
        EXPECT_EQ(got, testing::at(current, c));
        continue;
      }
      EXPECT_GE(got, lo);
      EXPECT_LE(got, hi);
      EXPECT_NEAR(got, static_cast<double>(sum / wt), 1e-12);
    }
  }
}

TEST(Aggregate, RejectsNonPrefixUploads) {
  const ParamSet current = constant_params(std::vector<std::size_t>{4, 6, 3}, 0.0);
  std::vector<Upload> wide = {{0, constant_params(std::vector<std::size_t>{4, 7, 3}, 0.0), 1}};
  EXPECT_THROW(aggregate(wide, current), std::invalid_argument);
  std::vector<Upload> other_out = {{0, constant_params(std::vector<std::size_t>{4, 6, 2}, 0.0), 1}};
  EXPECT_THROW(aggregate(other_out, current), std::invalid_argument);
}

TEST(ModelPoolTest, UpdateKeepsSubmodelsCoherent) {
  ModelPool pool = desk_pool();
  Rng rng = make_rng(5);
  ParamSet g = random_params(rng, kDesk.layer_widths);
  update_pool(pool, g);
  ASSERT_EQ(pool.models.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(pool.models[i], extract_submodel(g, pool.plans[i]));
    EXPECT_EQ(embed_submodel(pool.models[i], g), g);
  }
  EXPECT_EQ(pool.models[2], g);
  const auto before = pool.models;
  update_pool(pool, pool.global);
  EXPECT_EQ(pool.models, before);
  EXPECT_THROW(pool.plan({1, true}), std::out_of_range);
  EXPECT_THROW(pool.plan({4, false}), std::out_of_range);
}

TEST(PlanningProfile, Ablations) {
  const auto measured = profile_for(kDesk, {0.6, 0.3, 0.0});
  EXPECT_EQ(planning_profile(measured, Mode::kFlexFL), measured);
  const auto no_apoz = planning_profile(measured, Mode::kNoApoz);
  for (const auto& u : no_apoz.units) EXPECT_DOUBLE_EQ(u.apoz, 0.3);
  EXPECT_EQ(no_apoz.adj_weights(), measured.adj_weights());
  for (const auto& u : planning_profile(measured, Mode::kNoAdjW).units) EXPECT_EQ(u.adj_weight, 1.0);
  const auto base = planning_profile(measured, Mode::kBaseline);
  const std::vector<double> targets = {0.25, 0.5};
  for (const auto& p : generate_plans(base, kDesk, targets, {}))
    EXPECT_EQ(std::count(p.ratios.begin(), p.ratios.end(), p.ratios[0]), 3);
  EXPECT_EQ(parse_mode("no-adjw"), Mode::kNoAdjW);
  EXPECT_EQ(to_string(parse_mode("baseline")), "baseline");
  EXPECT_THROW(parse_mode("fast"), std::invalid_argument);
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.sim.rounds = 4;
  cfg.sim.devices = 10;
  cfg.sim.fraction = 0.5;
  cfg.sim.eval_every = 2;
  cfg.data.train_per_class = 40;
  cfg.data.test_per_class = 10;
  cfg.data.proxy_fraction = 0.5;
  cfg.pretrain.epochs = 3;
  cfg.kd.local_epochs = 1;
  return cfg;
}

std::string csv_of(const RunResult& r) {
  std::ostringstream s;
  write_metrics_csv(s, r.reports, r.plans.size());
  return s.str();
}

TEST(Run, ZeroRoundsStillPlans) {
  auto cfg = small_config();
  cfg.sim.rounds = 0;
  const RunResult r = run(cfg);
  EXPECT_TRUE(r.reports.empty());
  EXPECT_EQ(r.completed_rounds, 0u);
  ASSERT_EQ(r.plans.size(), 3u);
  EXPECT_EQ(r.adaptive_plans.size(), 2u);
  EXPECT_EQ(csv_of(r), "round,acc_m1,acc_m2,acc_m3,avg,global,dispatch_bytes,upload_bytes,adaptive_events,forced_m1\n");
}

TEST(Run, DeterministicAcrossRunsAndThreads) {
  const auto cfg = small_config();
  const RunResult a = run(cfg), b = run(cfg);
  ASSERT_FALSE(a.error.has_value());
  ASSERT_EQ(a.reports.size(), 2u);
  EXPECT_EQ(a.reports.back().round, 4u);
  EXPECT_EQ(csv_of(a), csv_of(b));
  EXPECT_EQ(plan_dump(a).dump(), plan_dump(b).dump());
  EXPECT_EQ(a.pool.global, b.pool.global);

  auto threaded = cfg;
  threaded.sim.threads = 4;
  const RunResult c = run(threaded);
  EXPECT_EQ(csv_of(a), csv_of(c));
  EXPECT_EQ(a.pool.global, c.pool.global);

  auto other = cfg;
  other.seed = 4;
  EXPECT_NE(run(other).pool.global, a.pool.global);
}

TEST(Run, DispatchesRespectResourcesAndCountersAccumulate) {
  auto cfg = small_config();
  cfg.sim.rounds = 6;
  const RunResult r = run(cfg);
  ASSERT_FALSE(r.error.has_value());
  std::size_t forced = 0, adapted = 0;
  std::uint64_t bytes = 0;
  for (const auto& d : r.dispatches) {
    if (d.forced) {
      ++forced;
      EXPECT_EQ(d.chosen, (PlanId{1, false}));
    } else {
      EXPECT_GT(d.resource, d.chosen_percent);
    }
    if (!(d.chosen == PlanId{d.assigned_level, false})) ++adapted;
    bytes += r.pool.plan(d.chosen).achieved_params * sizeof(double);
  }
  EXPECT_EQ(r.dispatches.size(), 6u * 5u);
  EXPECT_EQ(r.reports.back().forced_m1, forced);
  EXPECT_EQ(r.reports.back().adaptive_events, adapted);
  EXPECT_EQ(r.reports.back().dispatch_bytes, bytes);
  for (std::size_t i = 1; i < r.reports.size(); ++i)
    EXPECT_GE(r.reports[i].dispatch_bytes, r.reports[i - 1].dispatch_bytes);
}

TEST(Run, SkipForcedTrainsNothingThatDoesNotFit) {
  auto cfg = small_config();
  cfg.population.classes = {{"tiny", 1.0, 5.0}};
  cfg.sim.skip_forced = true;
  const RunResult r = run(cfg);
  for (const auto& d : r.dispatches) EXPECT_TRUE(d.skipped);
  for (const auto& s : r.round_stats) EXPECT_EQ(s.trained, 0u);
  EXPECT_EQ(r.reports.back().forced_m1, 0u);
}

}  // namespace
}  // namespace flexfl
