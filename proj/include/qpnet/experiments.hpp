#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qpnet/model.hpp"
#include "qpnet/sampler.hpp"
#include "qpnet/signal.hpp"
#include "qpnet/training.hpp"

namespace qpnet::exp {

enum class Band { under_half_l, above_half_l, inside, under_3half_u, above_3half_u };

// Test-grid partition derived from the training range [L, U]:
// f <= L/2 | L/2 < f <= L | L < f <= U | U < f <= 3U/2 | f > 3U/2.
Band band_of(double f0_hz, double lower_hz, double upper_hz);
std::string band_name(Band band);

struct ExperimentSpec {
  std::vector<std::string> roster = {"WNc", "WNf", "pQPNet", "QPNet", "rQPNet"};
  std::string profile = "desk";  // desk | paper; stamped into every row
  int dense_factor = 8;          // for the comparison roster
  std::vector<int> dense_factors = {1, 8, 64};  // for the sweep
  std::map<int, int> epochs_override_by_dense;  // sweep-only per-run override

  train::DatasetSpec dataset;
  train::TrainingConfig training;

  std::vector<double> test_f0_grid = default_test_grid();
  int utterances_per_test_f0 = 10;  // evenly spaced phase shifts
  double generation_seconds = 1.0;
  uint64_t eval_seed = 0;
  int threads = 2;
  bool write_wavs = true;
  bool write_psd = true;
  std::string wav_dir;  // set by the runners; empty disables the WAV dump

  // 10-80 step 10, 100-400 step 100, 450-800 step 50.
  static std::vector<double> default_test_grid();
  void validate() const;
  double band_lower() const;  // min of the training f0 list
  double band_upper() const;
};

struct UtteranceRow {
  std::string model;
  int dense_factor = 0;
  std::string profile;
  double f0_hz = 0.0;
  int phase_idx = 0;
  double measured_f0_hz = 0.0;
  double snr_db = 0.0;
  double logf0_rmse = 0.0;
  bool failed = false;
};

struct BandRow {
  std::string model;
  int dense_factor = 0;
  std::string band;
  double mean_snr_db = 0.0;
  double snr_ci95 = 0.0;
  double mean_logf0_rmse = 0.0;
  double rmse_ci95 = 0.0;
  int n = 0;
};

struct EvalReport {
  std::string profile;
  std::vector<UtteranceRow> rows;
  std::vector<BandRow> bands;                // 5 bands + "average" per (model, dense)
  std::vector<signal::Psd> psd_per_row;      // index-aligned with rows (may be empty)
};

// Per-band aggregates (plus an equal-weight "average" row per model/dense
// group); failed rows are excluded from the means.
std::vector<BandRow> band_group_metrics(std::span<const UtteranceRow> rows, double lower_hz,
                                        double upper_hz);

// Scores one trained model over the full test grid. Seed clips are shared
// across models (they depend only on eval_seed, f0 and phase index).
EvalReport evaluate_model(const model::NetworkParams& params, const model::ModelConfig& config,
                          const std::string& model_name, int dense_factor,
                          const ExperimentSpec& spec);

// Trains one pQPNet per dense factor on a shared dataset, evaluates each on
// the test grid. A diverged training marks its rows failed and the sweep
// continues.
EvalReport run_dense_sweep(const ExperimentSpec& spec, const std::string& out_dir);

// Trains every roster model with shared seeds and dataset, evaluates on the
// same grid.
EvalReport run_model_comparison(const ExperimentSpec& spec, const std::string& out_dir);

// summary.csv (pinned header), per_utterance.csv, bands_ci.csv and per-row
// PSD dumps under <out_dir>/psd/.
void emit_report(const EvalReport& report, const std::string& out_dir);

EvalReport merge_reports(std::span<const EvalReport> parts);

}  // namespace qpnet::exp
