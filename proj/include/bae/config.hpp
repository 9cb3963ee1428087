#pragma once

// Flat "key = value" configuration files. Blank lines and text after '#'
// are ignored; list values are comma separated. Unknown keys are rejected
// so that a typo never silently falls back to a default.

#include "bae/harness.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace bae::config {

using KeyValues = std::map<std::string, std::string, std::less<>>;

[[nodiscard]] KeyValues parse(std::string_view text);
[[nodiscard]] KeyValues read_file(const std::filesystem::path& path);

/// Overrides the fields named in `values`; throws ConfigError on unknown
/// keys or malformed values.
void apply(const KeyValues& values, harness::ExperimentConfig& config);

/// Every supported key with its current value, in the file format.
[[nodiscard]] std::string describe(const harness::ExperimentConfig& config);

}  // namespace bae::config
