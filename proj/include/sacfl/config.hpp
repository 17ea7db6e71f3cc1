#pragma once

#include <string>
#include <vector>

#include "sacfl/orchestrator.hpp"

namespace sacfl {

// Strict JSON config: unknown keys are errors, so sweep typos fail loudly.
ExperimentConfig parse_config_json(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

// Dotted-path overrides ("optimizer.learning_rate=0.1"); values are parsed
// as JSON literals, falling back to strings.
std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides);

// Resolved snapshot of a parsed config, stable across reruns.
std::string config_to_json(const ExperimentConfig& cfg);

// FNV-1a over the resolved snapshot; stable content hash for manifests.
std::string config_content_hash(const std::string& json_text);

}  // namespace sacfl
