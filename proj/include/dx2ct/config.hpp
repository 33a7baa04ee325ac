#pragma once

// Strict JSON run configuration: every tunable default is overridable, every
// unknown key is rejected, and the canonical echo (sorted keys, defaults
// materialized) identifies a run in checkpoints and reports.

#include <string>

#include "dx2ct/pipeline.hpp"
#include "dx2ct/trainer.hpp"

namespace dx2ct::config {

struct RunConfig {
  pipeline::PipelineConfig pipeline;
  pipeline::TrainConfig train;
};

// Parses a JSON document; unknown keys anywhere raise a validation error.
RunConfig parse_config(const std::string& json_text);
RunConfig read_config_file(const std::string& path);

// Canonical JSON echo of a fully-materialized config (sorted keys, stable
// across runs with the same settings).
std::string config_echo(const RunConfig& c);

}  // namespace dx2ct::config
