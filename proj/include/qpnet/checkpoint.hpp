#pragma once

#include <cstdint>
#include <string>

#include "qpnet/model.hpp"
#include "qpnet/tensor.hpp"

namespace qpnet::train {

// Self-describing binary container: versioned header, config as JSON, named
// parameter buffers with shape headers, optimizer moments and step count.
// Round trips are bit-exact in 32-bit mode.
void save_checkpoint(const std::string& path, const model::ModelConfig& config,
                     const model::NetworkParams& params, const engine::AdamState<float>& adam,
                     int64_t step);

struct Checkpoint {
  model::ModelConfig config;
  model::NetworkParams params;
  engine::AdamState<float> adam;
  int64_t step = 0;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace qpnet::train
