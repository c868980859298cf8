#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "flexfl/fedsim.hpp"

namespace flexfl {

/// Parses an experiment config. Missing keys keep their defaults; unknown keys
/// and ill-typed values raise ConfigError naming the dotted field path.
ExperimentConfig config_from_json(const nlohmann::json& doc);

/// Fully resolved config; feeding it back to config_from_json gives the same config.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Reads a config file. A run manifest is accepted too (its "config" member is used).
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical dump of config_to_json.
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace flexfl
