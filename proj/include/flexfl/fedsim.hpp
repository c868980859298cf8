#pragma once

// Server-side federated loop: device population with fluctuating memory,
// selection, on-device fallback pruning, overlapping-submodel aggregation
// and model-pool maintenance.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flexfl/apoz.hpp"
#include "flexfl/data.hpp"
#include "flexfl/kd.hpp"
#include "flexfl/nn.hpp"
#include "flexfl/pruner.hpp"

namespace flexfl {

enum class Mode { kFlexFL, kBaseline, kNoKd, kNoAdaptive, kNoApoz, kNoAdjW };

std::string to_string(Mode mode);
/// Accepts flexfl|baseline|no-kd|no-adaptive|no-apoz|no-adjw.
Mode parse_mode(const std::string& name);

struct DeviceClass {
  std::string name;
  double share = 0.0;         // fraction of the population
  double max_capacity = 0.0;  // r_M, percent of size(M)
};

struct PopulationConfig {
  std::vector<DeviceClass> classes = {{"weak", 0.4, 35.0}, {"medium", 0.3, 60.0}, {"strong", 0.3, 110.0}};
  std::vector<double> variances = {5.0, 8.0, 10.0};  // sigma^2 choices

  void validate() const;
};

struct DeviceProfile {
  std::size_t id = 0;
  std::string device_class;
  double max_capacity = 0.0;
  double variance = 0.0;
  std::uint64_t seed = 0;
};

struct SimConfig {
  std::size_t rounds = 200;
  std::size_t devices = 20;
  double fraction = 0.1;
  std::vector<double> targets = {0.25, 0.5, 1.0};
  std::size_t eval_every = 10;
  bool skip_forced = false;  // skip devices that cannot host even M_1
  std::size_t threads = 1;

  void validate() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  Mode mode = Mode::kFlexFL;
  SimConfig sim;
  std::vector<std::size_t> hidden = {32, 32};
  std::vector<std::vector<std::size_t>> groups;
  GenSearchConfig search;
  AdaptiveConfig adaptive;
  KdConfig kd;
  PretrainConfig pretrain;
  PopulationConfig population;
  DataConfig data;
  std::optional<std::filesystem::path> train_csv;  // replaces the synthetic corpus
  std::optional<std::filesystem::path> test_csv;

  void validate() const;
};

/// Class counts follow the shares (largest remainder); sigma^2 drawn per device.
std::vector<DeviceProfile> make_population(const PopulationConfig& cfg, std::size_t devices,
                                           std::uint64_t seed);

/// r = r_M - |u| with u ~ N(0, sigma^2), drawn from the (device, round) stream.
double sample_resource(const DeviceProfile& device, std::size_t round);

/// A device can train a model iff r > size(model) / size(M) * 100.
bool can_host(double r, std::size_t model_params, std::size_t full_params);

struct ModelPool {
  ParamSet global;
  std::vector<PruningPlan> plans;           // M_1..M_p
  std::vector<PruningPlan> adaptive_plans;  // M'_2..M'_p
  std::vector<ParamSet> models;             // extract(global, plans[i])

  std::size_t levels() const { return plans.size(); }
  std::size_t full_params() const { return global.count(); }
  const PruningPlan& plan(PlanId id) const;
  double size_percent(PlanId id) const;
};

ModelPool make_pool(ParamSet global, std::vector<PruningPlan> plans, std::vector<PruningPlan> adaptive);

/// Re-extracts every pooled submodel from `global`.
void update_pool(ModelPool& pool, ParamSet global);

struct Assignment {
  std::size_t device = 0;
  std::size_t level = 1;

  bool operator==(const Assignment&) const = default;
};

/// max(1, floor(f * |D|)).
std::size_t selection_count(double fraction, std::size_t devices);

/// Largest level whose size percentage is strictly below r_M; level 1 when none is.
std::size_t assign_level(const ModelPool& pool, double max_capacity);

/// K distinct eligible devices drawn uniformly from the round's stream,
/// returned in ascending device order with their registered-capacity level.
/// An empty `eligible` mask makes every device eligible.
std::vector<Assignment> select_devices(std::span<const DeviceProfile> devices,
                                       const std::vector<bool>& eligible, const ModelPool& pool,
                                       std::size_t k, std::size_t round, std::uint64_t seed);

struct DispatchChoice {
  PlanId chosen;
  bool forced = false;   // M_1 used although it does not fit
  bool adapted = false;  // chosen differs from the assigned level
};

/// First entry of the fallback chain that fits r; M_1 when none does.
DispatchChoice dispatch_and_adapt(const ModelPool& pool, std::size_t level, double r,
                                  bool with_adaptive = true);

struct Upload {
  std::size_t device = 0;
  ParamSet params;  // prefix submodel of the global model
  std::size_t samples = 0;
};

/// Per global coordinate: sample-weighted mean over the uploads covering it,
/// current value where nothing covers it. Uploads are reduced in device order.
ParamSet aggregate(std::span<const Upload> uploads, const ParamSet& current);

struct RoundReport {
  std::size_t round = 0;
  std::vector<double> level_accuracy;
  double average_accuracy = 0.0;
  double global_accuracy = 0.0;
  // Totals since round 1.
  std::uint64_t dispatch_bytes = 0;
  std::uint64_t upload_bytes = 0;
  std::size_t adaptive_events = 0;
  std::size_t forced_m1 = 0;
};

struct DispatchRecord {
  std::size_t round = 0;
  std::size_t device = 0;
  std::size_t assigned_level = 0;
  PlanId chosen;
  double resource = 0.0;
  double chosen_percent = 0.0;
  bool forced = false;
  bool skipped = false;
};

struct RoundStats {
  std::size_t round = 0;
  std::uint64_t dispatch_bytes = 0;
  std::uint64_t upload_bytes = 0;
  std::size_t trained = 0;
};

struct RunResult {
  ModelArch arch;
  ApozProfile profile;          // measured on the proxy set
  ApozProfile planning_profile; // after the mode's ablation is applied
  std::vector<PruningPlan> plans;
  std::vector<PruningPlan> adaptive_plans;
  std::vector<DeviceProfile> devices;
  std::vector<std::size_t> device_samples;
  std::vector<RoundReport> reports;
  std::vector<RoundStats> round_stats;
  std::vector<DispatchRecord> dispatches;
  std::size_t completed_rounds = 0;
  std::optional<std::string> error;  // set when a round aborted
  ModelPool pool;
};

/// Per-level accuracy of the pooled submodels on `test`.
std::vector<double> evaluate_pool(const ModelPool& pool, const Dataset& test);

/// Profile the plans are generated from under `mode`.
ApozProfile planning_profile(const ApozProfile& measured, Mode mode);

RunResult run(const ExperimentConfig& cfg);

inline constexpr int kMetricsSchemaVersion = 1;

/// Header plus one row per report; numbers in fixed notation.
void write_metrics_csv(std::ostream& out, std::span<const RoundReport> reports, std::size_t levels);

/// {arch, full_params, profile, planning_profile, plans, adaptive_plans}
nlohmann::json plan_dump(const RunResult& result);

}  // namespace flexfl
