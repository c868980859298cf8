#include "flexfl/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "flexfl/config.hpp"
#include "flexfl/errors.hpp"
#include "flexfl/fedsim.hpp"
#include "flexfl/pruner.hpp"

namespace flexfl {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> parse_targets(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("malformed target '" + item + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos)
      throw std::invalid_argument("malformed target '" + item + "'");
    out.push_back(v);
  }
  if (out.empty() || text.back() == ',') throw std::invalid_argument("empty target list");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0.0 && out[i] <= 1.0)) throw std::invalid_argument("targets must be in (0, 1]");
    if (i > 0 && !(out[i] > out[i - 1])) throw std::invalid_argument("targets must be strictly ascending");
  }
  return out;
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> devices;
  std::optional<double> fraction;
  std::optional<std::string> alpha;
  std::optional<std::string> mode;
  std::optional<std::size_t> eval_every;
  std::string out_dir;
};

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  if (!a.config.empty()) {
    if (!fs::exists(a.config)) {
      err << "error: config file not found: " << a.config << "\n";
      return 2;
    }
    cfg = load_config(a.config);
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.rounds) cfg.sim.rounds = *a.rounds;
  if (a.devices) cfg.sim.devices = *a.devices;
  if (a.fraction) cfg.sim.fraction = *a.fraction;
  if (a.eval_every) cfg.sim.eval_every = *a.eval_every;
  if (a.mode) {
    try {
      cfg.mode = parse_mode(*a.mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("mode", e.what());
    }
  }
  if (a.alpha) {
    if (*a.alpha == "iid") {
      cfg.data.alpha.reset();
    } else {
      try {
        cfg.data.alpha = std::stod(*a.alpha);
      } catch (const std::exception&) {
        throw ConfigError("data.alpha", "expected a number or 'iid'");
      }
    }
  }
  // Round-trip through JSON so overrides get the same validation as file values.
  cfg = config_from_json(config_to_json(cfg));

  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  const RunResult res = run(cfg);

  std::ostringstream csv;
  write_metrics_csv(csv, res.reports, res.plans.size());
  write_file(dir / "metrics.csv", csv.str());
  write_file(dir / "plans.json", plan_dump(res).dump(2) + "\n");
  json manifest = {{"version", kVersion},
                   {"csv_schema_version", kMetricsSchemaVersion},
                   {"seed", cfg.seed},
                   {"mode", to_string(cfg.mode)},
                   {"config_hash", hex64(config_hash(cfg))},
                   {"config", config_to_json(cfg)},
                   {"metrics", "metrics.csv"},
                   {"plan_dump", "plans.json"},
                   {"start_round", cfg.sim.rounds == 0 ? 0 : 1},
                   {"end_round", res.completed_rounds}};
  if (res.error) manifest["error"] = *res.error;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  if (res.error) {
    err << "error: run aborted after round " << res.completed_rounds << ": " << *res.error << "\n";
    return 3;
  }
  out << "wrote " << (dir / "metrics.csv").string() << ", " << (dir / "plans.json").string() << ", "
      << (dir / "manifest.json").string() << "\n";
  if (!res.reports.empty()) {
    const auto& last = res.reports.back();
    char buf[96];
    std::snprintf(buf, sizeof(buf), "round %zu: avg %.4f global %.4f\n", last.round, last.average_accuracy,
                  last.global_accuracy);
    out << buf;
  }
  return 0;
}

struct PlanArgs {
  std::string targets = "0.25,0.5,1.0";
  std::string profile;
  std::string config;
  std::optional<double> adaptive;
  std::string out_file;
};

int cmd_plans(const PlanArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<double> targets;
  try {
    targets = parse_targets(a.targets);
  } catch (const std::invalid_argument& e) {
    err << "error: --targets: " << e.what() << "\n";
    return 2;
  }
  ExperimentConfig cfg;
  if (!a.config.empty()) cfg = load_config(a.config);
  if (a.adaptive) cfg.adaptive.size_fraction = *a.adaptive;

  ModelArch arch;
  ApozProfile profile;
  if (!a.profile.empty()) {
    // A plan dump or {"arch": [...], "profile": [...]}.
    const json doc = read_json(a.profile);
    if (!doc.is_object() || !doc.contains("arch") || !doc.contains("profile")) {
      err << "error: " << a.profile << " needs 'arch' and 'profile' members\n";
      return 2;
    }
    arch.layer_widths = doc.at("arch").get<std::vector<std::size_t>>();
    profile = profile_from_json(doc.at("profile"));
    for (const auto& u : profile.units) arch.layer_groups.push_back(u.layers);
    arch.validate();
  } else {
    // Live: pre-processing only.
    cfg.sim.rounds = 0;
    cfg.sim.targets = targets;
    const RunResult res = run(cfg);
    arch = res.arch;
    profile = res.planning_profile;
  }
  const auto plans = generate_plans(profile, arch, targets, cfg.search);
  std::vector<PruningPlan> adaptive;
  if (plans.size() > 1) adaptive = adaptive_plans(plans, profile, arch, cfg.search, cfg.adaptive);

  bool monotone = true;
  for (std::size_t i = 1; i < plans.size(); ++i) monotone = monotone && nested_in(plans[i - 1].widths, plans[i].widths);
  for (std::size_t i = 0; i < adaptive.size(); ++i)
    monotone = monotone && nested_in(plans[i].widths, adaptive[i].widths) &&
               nested_in(adaptive[i].widths, plans[i + 1].widths);

  json doc = {{"arch", arch.layer_widths}, {"full_params", param_count(arch)}, {"profile", profile_to_json(profile)},
              {"monotone", monotone}};
  doc["plans"] = json::array();
  for (const auto& p : plans) doc["plans"].push_back(plan_to_json(p));
  doc["adaptive_plans"] = json::array();
  for (const auto& p : adaptive) doc["adaptive_plans"].push_back(plan_to_json(p));
  const std::string text = doc.dump(2) + "\n";
  if (a.out_file.empty())
    out << text;
  else
    write_file(a.out_file, text);
  return 0;
}

std::vector<PruningPlan> plans_in(const json& doc) {
  std::vector<PruningPlan> out;
  if (doc.is_object() && doc.contains("ratios")) {
    out.push_back(plan_from_json(doc));
  } else if (doc.is_object() && doc.contains("plans")) {
    for (const auto& p : doc.at("plans")) out.push_back(plan_from_json(p));
  } else if (doc.is_array()) {
    for (const auto& p : doc) out.push_back(plan_from_json(p));
  } else {
    throw std::runtime_error("expected a plan, a list of plans or a plan dump");
  }
  return out;
}

int cmd_similarity(const std::string& path_a, const std::string& path_b, std::ostream& out, std::ostream& err) {
  const auto a = plans_in(read_json(path_a));
  const auto b = plans_in(read_json(path_b));
  if (a.size() != b.size()) {
    err << "error: " << path_a << " has " << a.size() << " plans, " << path_b << " has " << b.size() << "\n";
    return 2;
  }
  std::vector<double> sims;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].ratios.size() != b[i].ratios.size()) {
      err << "error: plan " << i + 1 << " ratio lengths differ (" << a[i].ratios.size() << " vs "
          << b[i].ratios.size() << ")\n";
      return 2;
    }
    sims.push_back(plan_similarity(a[i].ratios, b[i].ratios));
  }
  char buf[64];
  if (sims.size() == 1) {
    std::snprintf(buf, sizeof(buf), "%.6f\n", sims[0]);
    out << buf;
  } else {
    for (std::size_t i = 0; i < sims.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s %.6f\n", a[i].id.name().c_str(), sims[i]);
      out << buf;
    }
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Heterogeneous federated learning simulator with APoZ-guided pruning", "flexfl"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  RunArgs run_args;
  const char* env_out = std::getenv("FLEXFL_OUT_DIR");
  run_args.out_dir = env_out && *env_out ? env_out : "flexfl-out";
  auto* run_cmd = app.add_subcommand("run", "Run an experiment and write metrics, plans and a manifest");
  run_cmd->add_option("--config", run_args.config, "JSON config or a previous run manifest");
  run_cmd->add_option("--seed", run_args.seed, "Master seed");
  run_cmd->add_option("--rounds", run_args.rounds, "Training rounds T");
  run_cmd->add_option("--devices", run_args.devices, "Device count |D|");
  run_cmd->add_option("--fraction", run_args.fraction, "Fraction of devices selected per round");
  run_cmd->add_option("--alpha", run_args.alpha, "Dirichlet concentration, or 'iid'");
  run_cmd->add_option("--mode", run_args.mode, "flexfl|baseline|no-kd|no-adaptive|no-apoz|no-adjw");
  run_cmd->add_option("--eval-every", run_args.eval_every, "Evaluation cadence in rounds");
  run_cmd->add_option("--out-dir", run_args.out_dir, "Output directory (default $FLEXFL_OUT_DIR or ./flexfl-out)");

  PlanArgs plan_args;
  auto* plans_cmd = app.add_subcommand("plans", "Generate pruning plans from a profile or a live pre-processing pass");
  plans_cmd->add_option("--targets", plan_args.targets, "Comma separated ascending target ratios");
  plans_cmd->add_option("--profile", plan_args.profile, "Plan dump or {arch, profile} JSON");
  plans_cmd->add_option("--config", plan_args.config, "Config used for live profiling and search settings");
  plans_cmd->add_option("--adaptive", plan_args.adaptive, "Adaptive pruning size as a fraction of size(M)");
  plans_cmd->add_option("--out", plan_args.out_file, "Write JSON here instead of stdout");

  std::string sim_a, sim_b;
  auto* sim_cmd = app.add_subcommand("similarity", "Pruning-ratio similarity of two plan files");
  sim_cmd->add_option("plan_a", sim_a, "Plan file")->required();
  sim_cmd->add_option("plan_b", sim_b, "Reference plan file")->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    const int code = app.exit(e, o, eo);
    out << o.str();
    err << eo.str();
    return code;
  }

  try {
    if (*run_cmd) return cmd_run(run_args, out, err);
    if (*plans_cmd) return cmd_plans(plan_args, out, err);
    if (*sim_cmd) return cmd_similarity(sim_a, sim_b, out, err);
  } catch (const ConfigError& e) {
    err << "error: invalid config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace flexfl
