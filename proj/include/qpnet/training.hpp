#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qpnet/model.hpp"
#include "qpnet/signal.hpp"
#include "qpnet/tensor.hpp"

namespace qpnet::train {

// Sinusoid dataset recipe: sines across the training range with random
// phases, inputs mixed with white noise, clean targets, per-sample noisy
// conditioning. All randomness derives from `seed`.
struct DatasetSpec {
  std::vector<double> f0_list = default_f0_list();  // 80..400 Hz step 20
  int utterances_per_f0 = 24;
  double seconds_per_utterance = 1.0;
  double signal_snr_db = 20.0;
  double aux_noise_amplitude = 1.0;  // uniform [-A, A] Hz added to the conditioning value
  double sine_amplitude = 0.8;
  int sample_rate = 22050;
  uint64_t seed = 0;

  static std::vector<double> default_f0_list();
  void validate() const;
  int total_utterances() const { return int(f0_list.size()) * utterances_per_f0; }
};

struct TrainingItem {
  signal::QuantizedClip input;   // noisy codes fed to the network
  signal::QuantizedClip target;  // clean codes to predict
  model::AuxTrack aux;           // clean f0 for dilation, noisy conditioning value
  double f0 = 0.0;
};

std::vector<TrainingItem> build_sinusoid_dataset(const DatasetSpec& spec);

struct TrainingConfig {
  double learning_rate = 1e-4;  // no decay
  int batch_size = 1;
  int batch_length_samples = 22050;
  int epochs = 2;
  int64_t max_steps = 0;  // 0 = run all epochs
  int checkpoint_every_steps = 0;
  std::string checkpoint_dir;
  uint64_t seed = 0;

  void validate() const;
};

struct LossSample {
  int64_t step;
  double loss;
};

struct TrainResult {
  std::vector<LossSample> history;
  int64_t final_step = 0;
};

// Runs the optimization loop. Resumes from adam.step_count, so a loaded
// checkpoint continues exactly where it stopped; the shuffle order is a pure
// function of (seed, epoch).
TrainResult train(model::NetworkParams& params, const model::ModelConfig& config,
                  const TrainingConfig& tc, std::span<const TrainingItem> items,
                  engine::AdamState<float>& adam);

// Mean teacher-forced cross entropy over the given items (no updates).
double evaluate_loss(const model::NetworkParams& params, const model::ModelConfig& config,
                     std::span<const TrainingItem> items);

void write_loss_csv(const std::string& path, const TrainResult& result);

}  // namespace qpnet::train
