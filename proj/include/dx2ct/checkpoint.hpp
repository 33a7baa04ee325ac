#pragma once

// Trainer snapshots: one JSON header line (format version, config echo, step
// counter, batch-RNG state, optimizer step, parameter table) followed by a
// raw little-endian float32 payload holding every parameter tensor and then
// the Adam first and second moments in the same order.

#include <cstdint>
#include <string>

#include "dx2ct/nn.hpp"

namespace dx2ct::io {

struct CheckpointMeta {
  std::uint64_t step = 0;
  std::uint64_t rng_state = 0;
  std::string config_echo;  // JSON text of the originating config ("" = none)
};

void save_checkpoint(const std::string& path,
                     const nn::ParamStore<float>& store,
                     const nn::Adam<float>& adam, const CheckpointMeta& meta);

// Restores parameter values and optimizer moments into `store` and `adam`,
// whose entries must already exist with matching names and shapes (build the
// models first, from the same config). Returns the stored metadata.
CheckpointMeta load_checkpoint(const std::string& path,
                               nn::ParamStore<float>& store,
                               nn::Adam<float>& adam);

// Reads only the header line and returns the embedded config echo ("" when
// the checkpoint carries none), for rebuilding the model before a full load.
std::string peek_checkpoint_config(const std::string& path);

}  // namespace dx2ct::io
