#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qpnet/model.hpp"
#include "qpnet/signal.hpp"

namespace qpnet::sampler {

enum class SamplingMode { categorical, argmax };

struct GenerationRequest {
  double f0_hz = 0.0;            // constant pitch; ignored when f0_track is set
  std::vector<double> f0_track;  // optional per-output-sample pitch
  double seconds = 1.0;
  std::optional<signal::AudioClip> seed_clip;  // noisy sine fed to the initial receptive field
  SamplingMode mode = SamplingMode::categorical;
  double temperature = 1.0;
  uint64_t rng_seed = 0;
  // Ring buffers refuse to grow past this many samples per layer; requests
  // with lower F0 than the window supports are configuration errors.
  int64_t max_dilation_window = int64_t(1) << 20;
};

// Per-layer activation history. Variable d' rules out classic fast-generation
// queue rotation, so every layer keeps a ring of its input stream and gathers
// at time-variant offsets.
struct LayerStateBuffers {
  std::vector<engine::Mat<float>> rings;  // per block: channels x capacity
  std::vector<int64_t> capacity;
  int64_t timeline = 0;  // number of samples already absorbed (seed length)
  int last_code = -1;    // input codes feeding the kernel-2 causal layer
  int prev_code = -1;    // (-1 = zero column, before the stream starts)
};

// Effective receptive field at the requested pitch: the seed length that
// fills every buffer ("one full history").
int64_t recommended_seed_length(const model::ModelConfig& config, double f0_hz);

// Largest gather offset each layer can see for the given pitch values.
std::vector<int64_t> max_offsets_per_layer(const model::ModelConfig& config,
                                           std::span<const double> f0_values);

// Teacher-forced pass over the seed clip that leaves every layer's ring
// holding its activation tail; generation continues causally from there.
// A null seed yields zero-initialized buffers.
LayerStateBuffers seed_receptive_field(const model::NetworkParams& params,
                                       const model::ModelConfig& config,
                                       const signal::AudioClip* seed_clip,
                                       const model::AuxTrack& seed_aux,
                                       std::span<const int64_t> capacities);

struct GenerationResult {
  signal::AudioClip clip;        // generated continuation only (seed excluded)
  signal::QuantizedClip codes;
  engine::Mat<float> logits;     // 256 x N, only when capture_logits was set
};

GenerationResult generate_detailed(const model::NetworkParams& params,
                                   const model::ModelConfig& config,
                                   const GenerationRequest& request, bool capture_logits = false);

signal::AudioClip generate(const model::NetworkParams& params, const model::ModelConfig& config,
                           const GenerationRequest& request);

}  // namespace qpnet::sampler
