#pragma once

#include <string>

#include "icpo/trainer.hpp"

namespace icpo {

inline constexpr int kConfigSchemaVersion = 1;

// Flat key = value configuration with '#' comments. The schema_version key
// is mandatory and every key must be known; unknown or duplicate keys are
// hard errors so a typo can never silently fall back to a default.
TrainConfig load_config_file(const std::string& path);
TrainConfig parse_config_text(const std::string& text, const std::string& origin);

// The full schema with current defaults, suitable as a starting config file.
std::string default_config_text();

}  // namespace icpo
