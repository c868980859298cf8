#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace flexfl {

inline constexpr const char* kVersion = "0.1.0";

/// Entry point shared by the `flexfl` binary and the CLI tests.
/// Subcommands: run, plans, similarity. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "0.25,0.5,1.0". Throws std::invalid_argument on malformed input.
std::vector<double> parse_targets(const std::string& text);

}  // namespace flexfl
