#pragma once

#include <cstdint>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mmat/data.hpp"

namespace mmat::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDegenerate = 3;
inline constexpr int kExitDivergence = 4;

// Every key a run config may carry, with defaults. `null` means "derive from the dataset".
nlohmann::json default_config();

// Overlays `user` on the defaults (unknown keys and type mismatches raise ConfigError with
// the offending path) and fills every derived value.
nlohmann::json resolve_config(const nlohmann::json& user);

// FNV-1a of the canonical dump of a resolved config.
std::string config_hash(const nlohmann::json& resolved);

struct Splits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

// Builds the three splits from disjoint seed substreams of the root seed.
Splits make_datasets(const nlohmann::json& resolved);

// Entry point shared by the `mmat` binary and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmat::cli
