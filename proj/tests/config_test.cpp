#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "flexfl/config.hpp"
#include "flexfl/errors.hpp"

namespace flexfl {
namespace {

using nlohmann::json;

std::string field_of(const json& doc) {
  try {
    config_from_json(doc);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig def = config_from_json(json::object());
  EXPECT_EQ(def.sim.rounds, 200u);
  EXPECT_EQ(def.kd.temperature, 3.0);
  const json dumped = config_to_json(def);
  EXPECT_EQ(config_to_json(config_from_json(dumped)), dumped);
  EXPECT_EQ(config_hash(def), config_hash(config_from_json(dumped)));
}

TEST(Config, OverridesAreReadAndRoundTrip) {
  const json doc = json::parse(R"({
    "seed": 9, "mode": "no-kd",
    "sim": {"rounds": 5, "devices": 8, "fraction": 0.25, "targets": [0.3, 1.0], "threads": 2},
    "model": {"hidden": [24, 16, 8], "groups": [[0, 1], [2]]},
    "kd": {"temperature": 2.5, "kl_weight": 0},
    "population": {"classes": [{"name": "a", "share": 0.5, "max_capacity": 40},
                               {"name": "b", "share": 0.5, "max_capacity": 120}], "variances": [0]},
    "data": {"alpha": null, "spread": 0.4}
  })");
  const ExperimentConfig c = config_from_json(doc);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.mode, Mode::kNoKd);
  EXPECT_EQ(c.sim.targets, (std::vector<double>{0.3, 1.0}));
  EXPECT_EQ(c.hidden, (std::vector<std::size_t>{24, 16, 8}));
  EXPECT_EQ(c.groups.size(), 2u);
  EXPECT_FALSE(c.data.alpha.has_value());
  EXPECT_EQ(c.population.classes[1].max_capacity, 120.0);
  EXPECT_EQ(config_to_json(config_from_json(config_to_json(c))), config_to_json(c));
  EXPECT_NE(config_hash(c), config_hash(ExperimentConfig{}));
  EXPECT_TRUE(config_from_json(json::parse(R"({"data": {"iid": true}})")).data.alpha == std::nullopt);
}

TEST(Config, DiagnosticsNameTheField) {
  EXPECT_EQ(field_of(json::parse(R"({"sedd": 1})")), "sedd");
  EXPECT_EQ(field_of(json::parse(R"({"sim": {"round": 1}})")), "sim.round");
  EXPECT_EQ(field_of(json::parse(R"({"sim": {"rounds": "many"}})")), "sim.rounds");
  EXPECT_EQ(field_of(json::parse(R"({"sim": {"rounds": -1}})")), "sim.rounds");
  EXPECT_EQ(field_of(json::parse(R"({"sim": {"fraction": 1.5}})")), "sim.fraction");
  EXPECT_EQ(field_of(json::parse(R"({"sim": {"targets": [0.5, 0.25]}})")), "sim.targets");
  EXPECT_EQ(field_of(json::parse(R"({"kd": {"temperature": 0}})")), "kd.temperature");
  EXPECT_EQ(field_of(json::parse(R"({"mode": "fast"})")), "mode");
  EXPECT_EQ(field_of(json::parse(R"({"model": {"hidden": []}})")), "model.hidden");
  EXPECT_EQ(field_of(json::parse(R"({"population": {"classes": [{"name": "a", "share": 1, "cap": 3}]}})")),
            "population.classes[0].cap");
  EXPECT_EQ(field_of(json::parse(R"({"data": {"train_csv": "a.csv"}})")), "data.train_csv");
  EXPECT_EQ(field_of(json::parse("[1, 2]")), "<root>");
  try {
    config_from_json(json::parse(R"({"sim": {"rounds": "many"}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sim.rounds"), std::string::npos);
  }
}

TEST(Config, LoadFromFileAndManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "flexfl_config_test";
  std::filesystem::create_directories(dir);
  ExperimentConfig c;
  c.seed = 77;
  c.sim.rounds = 3;
  {
    std::ofstream f(dir / "cfg.json");
    f << config_to_json(c).dump(2);
  }
  {
    std::ofstream f(dir / "manifest.json");
    f << json{{"config", config_to_json(c)}, {"config_hash", "x"}, {"seed", 77}}.dump();
  }
  {
    std::ofstream f(dir / "broken.json");
    f << "{\"seed\": ";
  }
  EXPECT_EQ(config_hash(load_config(dir / "cfg.json")), config_hash(c));
  EXPECT_EQ(config_hash(load_config(dir / "manifest.json")), config_hash(c));
  EXPECT_THROW(load_config(dir / "broken.json"), std::exception);
  try {
    load_config(dir / "absent.json");
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("absent.json"), std::string::npos);
  }
}

}  // namespace
}  // namespace flexfl
