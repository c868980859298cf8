#include "flexfl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "flexfl/errors.hpp"

namespace flexfl {

namespace {

using nlohmann::json;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> known) {
  std::set<std::string> ok(known.begin(), known.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.count(key)) throw ConfigError(join(path, key), "unknown key");
}

const json* section(const json& doc, const std::string& key, const std::string& path) {
  if (!doc.contains(key)) return nullptr;
  const json& s = doc.at(key);
  if (!s.is_object()) throw ConfigError(join(path, key), "expected an object");
  return &s;
}

template <typename T>
void read(const json& obj, const std::string& key, const std::string& path, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string field = join(path, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(field, "expected a boolean");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError(field, "expected a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(field, "expected a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(field, "expected a string");
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    if (!v.is_array()) throw ConfigError(field, "expected an array of numbers");
    for (const auto& e : v)
      if (!e.is_number()) throw ConfigError(field, "expected an array of numbers");
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    if (!v.is_array()) throw ConfigError(field, "expected an array of non-negative integers");
    for (const auto& e : v)
      if (!e.is_number_unsigned()) throw ConfigError(field, "expected an array of non-negative integers");
  }
  out = v.get<T>();
}

}  // namespace

ExperimentConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "expected a JSON object");
  reject_unknown(doc, "", {"seed", "mode", "sim", "model", "search", "adaptive", "kd", "pretrain", "population", "data"});
  ExperimentConfig cfg;
  read(doc, "seed", "", cfg.seed);
  if (doc.contains("mode")) {
    std::string m;
    read(doc, "mode", "", m);
    try {
      cfg.mode = parse_mode(m);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("mode", e.what());
    }
  }
  if (const json* s = section(doc, "sim", "")) {
    reject_unknown(*s, "sim", {"rounds", "devices", "fraction", "targets", "eval_every", "skip_forced", "threads"});
    read(*s, "rounds", "sim", cfg.sim.rounds);
    read(*s, "devices", "sim", cfg.sim.devices);
    read(*s, "fraction", "sim", cfg.sim.fraction);
    read(*s, "targets", "sim", cfg.sim.targets);
    read(*s, "eval_every", "sim", cfg.sim.eval_every);
    read(*s, "skip_forced", "sim", cfg.sim.skip_forced);
    read(*s, "threads", "sim", cfg.sim.threads);
  }
  if (const json* s = section(doc, "model", "")) {
    reject_unknown(*s, "model", {"hidden", "groups"});
    read(*s, "hidden", "model", cfg.hidden);
    if (s->contains("groups")) {
      const json& g = s->at("groups");
      if (!g.is_array()) throw ConfigError("model.groups", "expected an array of index arrays");
      cfg.groups.clear();
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::vector<std::size_t> grp;
        json wrapper = {{"g", g[i]}};
        read(wrapper, "g", "model.groups[" + std::to_string(i) + "]", grp);
        cfg.groups.push_back(std::move(grp));
      }
    }
  }
  if (const json* s = section(doc, "search", "")) {
    reject_unknown(*s, "search", {"epsilon_fraction", "step"});
    read(*s, "epsilon_fraction", "search", cfg.search.epsilon_fraction);
    read(*s, "step", "search", cfg.search.step);
  }
  if (const json* s = section(doc, "adaptive", "")) {
    reject_unknown(*s, "adaptive", {"size_fraction"});
    read(*s, "size_fraction", "adaptive", cfg.adaptive.size_fraction);
  }
  if (const json* s = section(doc, "kd", "")) {
    reject_unknown(*s, "kd", {"temperature", "kl_weight", "local_epochs", "batch_size", "learning_rate", "momentum"});
    read(*s, "temperature", "kd", cfg.kd.temperature);
    read(*s, "kl_weight", "kd", cfg.kd.kl_weight);
    read(*s, "local_epochs", "kd", cfg.kd.local_epochs);
    read(*s, "batch_size", "kd", cfg.kd.batch_size);
    read(*s, "learning_rate", "kd", cfg.kd.learning_rate);
    read(*s, "momentum", "kd", cfg.kd.momentum);
  }
  if (const json* s = section(doc, "pretrain", "")) {
    reject_unknown(*s, "pretrain", {"epochs", "batch_size", "learning_rate", "momentum"});
    read(*s, "epochs", "pretrain", cfg.pretrain.epochs);
    read(*s, "batch_size", "pretrain", cfg.pretrain.batch_size);
    read(*s, "learning_rate", "pretrain", cfg.pretrain.learning_rate);
    read(*s, "momentum", "pretrain", cfg.pretrain.momentum);
  }
  if (const json* s = section(doc, "population", "")) {
    reject_unknown(*s, "population", {"classes", "variances"});
    if (s->contains("classes")) {
      const json& cl = s->at("classes");
      if (!cl.is_array()) throw ConfigError("population.classes", "expected an array");
      cfg.population.classes.clear();
      for (std::size_t i = 0; i < cl.size(); ++i) {
        const std::string at = "population.classes[" + std::to_string(i) + "]";
        if (!cl[i].is_object()) throw ConfigError(at, "expected an object");
        reject_unknown(cl[i], at, {"name", "share", "max_capacity"});
        DeviceClass dc;
        read(cl[i], "name", at, dc.name);
        read(cl[i], "share", at, dc.share);
        read(cl[i], "max_capacity", at, dc.max_capacity);
        cfg.population.classes.push_back(dc);
      }
    }
    read(*s, "variances", "population", cfg.population.variances);
  }
  if (const json* s = section(doc, "data", "")) {
    reject_unknown(*s, "data", {"classes", "features", "train_per_class", "test_per_class", "clusters_per_class",
                                "center_scale", "spread", "alpha", "iid", "proxy_fraction", "train_csv", "test_csv"});
    read(*s, "classes", "data", cfg.data.classes);
    read(*s, "features", "data", cfg.data.features);
    read(*s, "train_per_class", "data", cfg.data.train_per_class);
    read(*s, "test_per_class", "data", cfg.data.test_per_class);
    read(*s, "clusters_per_class", "data", cfg.data.clusters_per_class);
    read(*s, "center_scale", "data", cfg.data.center_scale);
    read(*s, "spread", "data", cfg.data.spread);
    read(*s, "proxy_fraction", "data", cfg.data.proxy_fraction);
    if (s->contains("alpha")) {
      if (s->at("alpha").is_null()) {
        cfg.data.alpha.reset();
      } else {
        double a = 0.0;
        read(*s, "alpha", "data", a);
        cfg.data.alpha = a;
      }
    }
    bool iid = false;
    read(*s, "iid", "data", iid);
    if (iid) cfg.data.alpha.reset();
    std::string path;
    if (s->contains("train_csv")) {
      read(*s, "train_csv", "data", path);
      cfg.train_csv = path;
    }
    if (s->contains("test_csv")) {
      read(*s, "test_csv", "data", path);
      cfg.test_csv = path;
    }
  }
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json classes = json::array();
  for (const auto& c : cfg.population.classes)
    classes.push_back({{"name", c.name}, {"share", c.share}, {"max_capacity", c.max_capacity}});
  json data = {{"classes", cfg.data.classes},
               {"features", cfg.data.features},
               {"train_per_class", cfg.data.train_per_class},
               {"test_per_class", cfg.data.test_per_class},
               {"clusters_per_class", cfg.data.clusters_per_class},
               {"center_scale", cfg.data.center_scale},
               {"spread", cfg.data.spread},
               {"proxy_fraction", cfg.data.proxy_fraction}};
  data["alpha"] = cfg.data.alpha ? json(*cfg.data.alpha) : json(nullptr);
  if (cfg.train_csv) data["train_csv"] = cfg.train_csv->string();
  if (cfg.test_csv) data["test_csv"] = cfg.test_csv->string();
  json groups = json::array();
  for (const auto& g : cfg.groups) groups.push_back(g);
  return {
      {"seed", cfg.seed},
      {"mode", to_string(cfg.mode)},
      {"sim",
       {{"rounds", cfg.sim.rounds},
        {"devices", cfg.sim.devices},
        {"fraction", cfg.sim.fraction},
        {"targets", cfg.sim.targets},
        {"eval_every", cfg.sim.eval_every},
        {"skip_forced", cfg.sim.skip_forced},
        {"threads", cfg.sim.threads}}},
      {"model", {{"hidden", cfg.hidden}, {"groups", groups}}},
      {"search", {{"epsilon_fraction", cfg.search.epsilon_fraction}, {"step", cfg.search.step}}},
      {"adaptive", {{"size_fraction", cfg.adaptive.size_fraction}}},
      {"kd",
       {{"temperature", cfg.kd.temperature},
        {"kl_weight", cfg.kd.kl_weight},
        {"local_epochs", cfg.kd.local_epochs},
        {"batch_size", cfg.kd.batch_size},
        {"learning_rate", cfg.kd.learning_rate},
        {"momentum", cfg.kd.momentum}}},
      {"pretrain",
       {{"epochs", cfg.pretrain.epochs},
        {"batch_size", cfg.pretrain.batch_size},
        {"learning_rate", cfg.pretrain.learning_rate},
        {"momentum", cfg.pretrain.momentum}}},
      {"population", {{"classes", classes}, {"variances", cfg.population.variances}}},
      {"data", data},
  };
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (doc.is_object() && doc.contains("config") && doc.contains("config_hash")) return config_from_json(doc.at("config"));
  return config_from_json(doc);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg).dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace flexfl
