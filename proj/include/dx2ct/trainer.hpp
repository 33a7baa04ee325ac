#pragma once

// Optimization loop over random (sample, plane, slice) batches with JSON-line
// progress logs, periodic checkpoints, and exact resume.

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dx2ct/phantom.hpp"
#include "dx2ct/pipeline.hpp"

namespace dx2ct::pipeline {

struct TrainConfig {
  std::size_t epochs = 1;  // used when steps == 0: one epoch covers every
                           // (plane, slice) of every sample once in expectation
  std::size_t steps = 0;   // explicit step count; overrides epochs when > 0
  std::size_t batch_size = 4;
  double lr = 5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
};

struct TrainResult {
  std::size_t steps_run = 0;
  double final_loss = 0.0;
  std::vector<double> losses;   // one entry per optimization step taken
  std::string checkpoint_path;  // empty when out_dir is empty
};

// Return true to stop after the given step.
using StopHook = std::function<bool(std::size_t step, double loss)>;

// Trains the pipeline on `samples`. `config_echo` (JSON text, may be empty)
// is embedded in checkpoints and must match when resuming. When `out_dir` is
// non-empty it receives step checkpoints and a final one. Log lines go to
// `log` as {"step":..,"loss":..,"lr":..,"wall_ms":..}. Divergence raises a
// numeric error naming the step.
TrainResult train(const std::vector<data::Sample>& samples,
                  const PipelineConfig& config, const TrainConfig& tc,
                  const std::string& config_echo = "",
                  const std::string& out_dir = "", std::ostream* log = nullptr,
                  const StopHook& stop = {},
                  const std::string& resume_from = "");

}  // namespace dx2ct::pipeline
