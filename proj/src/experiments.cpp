#include "qpnet/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "qpnet/checkpoint.hpp"
#include "qpnet/rng.hpp"

namespace qpnet::exp {

namespace fs = std::filesystem;

Band band_of(double f0_hz, double lower_hz, double upper_hz) {
  if (f0_hz <= lower_hz / 2.0) return Band::under_half_l;
  if (f0_hz <= lower_hz) return Band::above_half_l;
  if (f0_hz <= upper_hz) return Band::inside;
  if (f0_hz <= 1.5 * upper_hz) return Band::under_3half_u;
  return Band::above_3half_u;
}

std::string band_name(Band band) {
  switch (band) {
    case Band::under_half_l: return "under_half_L";
    case Band::above_half_l: return "above_half_L";
    case Band::inside: return "inside";
    case Band::under_3half_u: return "under_3half_U";
    case Band::above_3half_u: return "above_3half_U";
  }
  return "?";
}

std::vector<double> ExperimentSpec::default_test_grid() {
  std::vector<double> grid;
  for (int f = 10; f <= 80; f += 10) grid.push_back(double(f));
  for (int f = 100; f <= 400; f += 100) grid.push_back(double(f));
  for (int f = 450; f <= 800; f += 50) grid.push_back(double(f));
  return grid;
}

void ExperimentSpec::validate() const {
  dataset.validate();
  training.validate();
  if (roster.empty()) throw ConfigError("ExperimentSpec: empty model roster");
  if (test_f0_grid.empty()) throw ConfigError("ExperimentSpec: empty test grid");
  if (utterances_per_test_f0 < 1)
    throw ConfigError("ExperimentSpec: utterances_per_test_f0 must be >= 1");
  if (profile != "desk" && profile != "paper")
    throw ConfigError("ExperimentSpec: profile must be desk or paper");
  for (double f : test_f0_grid)
    if (!(f > 0.0) || f >= double(dataset.sample_rate) / 2.0)
      throw ConfigError("ExperimentSpec: test f0 outside (0, Nyquist)");
}

double ExperimentSpec::band_lower() const {
  return *std::min_element(dataset.f0_list.begin(), dataset.f0_list.end());
}

double ExperimentSpec::band_upper() const {
  return *std::max_element(dataset.f0_list.begin(), dataset.f0_list.end());
}

namespace {

struct Stats {
  double mean = 0.0, ci95 = 0.0;
  int n = 0;
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  s.n = int(xs.size());
  if (xs.empty()) {
    s.mean = std::nan("");
    return s;
  }
  double acc = 0.0;
  for (double x : xs) acc += x;
  s.mean = acc / double(xs.size());
  if (xs.size() >= 2) {
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    var /= double(xs.size() - 1);
    s.ci95 = 1.96 * std::sqrt(var / double(xs.size()));
  }
  return s;
}

}  // namespace

std::vector<BandRow> band_group_metrics(std::span<const UtteranceRow> rows, double lower_hz,
                                        double upper_hz) {
  // group key: (model, dense) in first-appearance order
  std::vector<std::pair<std::string, int>> groups;
  for (const auto& r : rows) {
    std::pair<std::string, int> key{r.model, r.dense_factor};
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }

  std::vector<BandRow> out;
  const Band all_bands[5] = {Band::under_half_l, Band::above_half_l, Band::inside,
                             Band::under_3half_u, Band::above_3half_u};
  for (const auto& [mdl, dense] : groups) {
    std::vector<double> snr_all, rmse_all;
    for (Band band : all_bands) {
      std::vector<double> snr, rmse;
      for (const auto& r : rows) {
        if (r.model != mdl || r.dense_factor != dense || r.failed) continue;
        if (band_of(r.f0_hz, lower_hz, upper_hz) != band) continue;
        snr.push_back(r.snr_db);
        rmse.push_back(r.logf0_rmse);
      }
      snr_all.insert(snr_all.end(), snr.begin(), snr.end());
      rmse_all.insert(rmse_all.end(), rmse.begin(), rmse.end());
      auto s = stats_of(snr);
      auto m = stats_of(rmse);
      out.push_back({mdl, dense, band_name(band), s.mean, s.ci95, m.mean, m.ci95, s.n});
    }
    auto s = stats_of(snr_all);
    auto m = stats_of(rmse_all);
    out.push_back({mdl, dense, "average", s.mean, s.ci95, m.mean, m.ci95, s.n});
  }
  return out;
}

namespace {

struct UtteranceTask {
  double f0 = 0.0;
  int phase_idx = 0;
};

// One generated-and-scored test utterance. Seed-clip noise depends only on
// (eval_seed, f0, phase) so every model sees the same test signal.
UtteranceRow score_one(const model::NetworkParams& params, const model::ModelConfig& cfg,
                       const std::string& model_name, int dense_factor,
                       const ExperimentSpec& spec, const UtteranceTask& task,
                       signal::Psd* psd_out) {
  UtteranceRow row;
  row.model = model_name;
  row.dense_factor = dense_factor;
  row.profile = spec.profile;
  row.f0_hz = task.f0;
  row.phase_idx = task.phase_idx;

  const uint64_t f0_key = uint64_t(llround(task.f0 * 1000.0));
  const double two_pi = 2.0 * 3.14159265358979323846;
  const double phase = two_pi * double(task.phase_idx) / double(spec.utterances_per_test_f0);

  // Initial receptive field: one full effective history of the noisy test sine.
  int64_t seed_len = sampler::recommended_seed_length(cfg, task.f0);
  auto seed = signal::synth_sinusoid_n(task.f0, seed_len, cfg.sample_rate, phase,
                                       spec.dataset.sine_amplitude);
  auto noisy_seed = signal::add_noise_snr(
      seed, spec.dataset.signal_snr_db,
      rng::derive(spec.eval_seed, "seednoise", f0_key, uint64_t(task.phase_idx)));

  sampler::GenerationRequest req;
  req.f0_hz = task.f0;
  req.seconds = spec.generation_seconds;
  req.seed_clip = std::move(noisy_seed);
  req.mode = sampler::SamplingMode::categorical;
  req.temperature = 1.0;
  req.rng_seed = rng::derive(spec.eval_seed, "draw:" + model_name, f0_key,
                             uint64_t(task.phase_idx) * 131 + uint64_t(dense_factor));
  auto clip = sampler::generate(params, cfg, req);

  try {
    auto psd = signal::periodogram(clip);
    row.measured_f0_hz = signal::psd_peak_hz(psd, 5.0);
    std::vector<double> t{task.f0}, m{row.measured_f0_hz};
    row.logf0_rmse = signal::log_f0_rmse(t, m);
    row.snr_db = signal::estimate_snr(clip).snr_db;
    if (psd_out) *psd_out = std::move(psd);
  } catch (const MeasurementError&) {
    row.failed = true;
    row.snr_db = -60.0;
    row.logf0_rmse = std::nan("");
  }

  if (spec.write_wavs && !spec.wav_dir.empty()) {
    char name[128];
    snprintf(name, sizeof(name), "%s_%d_%d_%d.wav", model_name.c_str(), dense_factor,
             int(llround(task.f0)), task.phase_idx);
    signal::write_wav(clip, (fs::path(spec.wav_dir) / name).string());
  }
  return row;
}

}  // namespace

EvalReport evaluate_model(const model::NetworkParams& params, const model::ModelConfig& cfg,
                          const std::string& model_name, int dense_factor,
                          const ExperimentSpec& spec) {
  spec.validate();
  std::vector<UtteranceTask> tasks;
  for (double f0 : spec.test_f0_grid)
    for (int p = 0; p < spec.utterances_per_test_f0; ++p) tasks.push_back({f0, p});

  EvalReport report;
  report.profile = spec.profile;
  report.rows.resize(tasks.size());
  if (spec.write_psd) report.psd_per_row.resize(tasks.size());

  const int nthreads = std::max(1, spec.threads);
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= tasks.size()) break;
      report.rows[i] = score_one(params, cfg, model_name, dense_factor, spec, tasks[i],
                                 spec.write_psd ? &report.psd_per_row[i] : nullptr);
    }
  };
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  report.bands = band_group_metrics(report.rows, spec.band_lower(), spec.band_upper());
  return report;
}

EvalReport merge_reports(std::span<const EvalReport> parts) {
  EvalReport merged;
  for (const auto& part : parts) {
    merged.profile = part.profile;
    merged.rows.insert(merged.rows.end(), part.rows.begin(), part.rows.end());
    merged.psd_per_row.insert(merged.psd_per_row.end(), part.psd_per_row.begin(),
                              part.psd_per_row.end());
  }
  return merged;
}

namespace {

// Train one model (fresh init from the shared seed) and evaluate it; on
// divergence the rows are marked failed and the run continues.
EvalReport train_and_evaluate(const std::string& model_name, int dense_factor, int epochs,
                              const ExperimentSpec& spec,
                              std::span<const train::TrainingItem> items,
                              const std::string& ckpt_dir) {
  auto cfg = model::standard_config(model_name, spec.profile, dense_factor);
  auto params = model::init_params<float>(cfg, rng::derive(spec.training.seed, "init"));
  engine::AdamState<float> adam;
  auto tc = spec.training;
  tc.epochs = epochs;

  bool diverged = false;
  train::TrainResult result;
  try {
    result = train::train(params, cfg, tc, items, adam);
  } catch (const TrainingDiverged&) {
    diverged = true;
  }

  if (!ckpt_dir.empty()) {
    fs::create_directories(ckpt_dir);
    char base[96];
    snprintf(base, sizeof(base), "%s_a%d", model_name.c_str(), dense_factor);
    if (!diverged)
      train::save_checkpoint(ckpt_dir + "/" + base + ".qpck", cfg, params, adam,
                             adam.step_count);
    train::write_loss_csv(ckpt_dir + "/loss_" + base + ".csv", result);
  }

  if (diverged) {
    EvalReport failed;
    failed.profile = spec.profile;
    for (double f0 : spec.test_f0_grid)
      for (int p = 0; p < spec.utterances_per_test_f0; ++p) {
        UtteranceRow row;
        row.model = model_name;
        row.dense_factor = dense_factor;
        row.profile = spec.profile;
        row.f0_hz = f0;
        row.phase_idx = p;
        row.failed = true;
        row.snr_db = -60.0;
        row.logf0_rmse = std::nan("");
        failed.rows.push_back(row);
      }
    if (spec.write_psd) failed.psd_per_row.resize(failed.rows.size());
    failed.bands = band_group_metrics(failed.rows, spec.band_lower(), spec.band_upper());
    return failed;
  }
  return evaluate_model(params, cfg, model_name, dense_factor, spec);
}

}  // namespace

EvalReport run_dense_sweep(const ExperimentSpec& spec, const std::string& out_dir) {
  spec.validate();
  if (spec.dense_factors.empty()) throw ConfigError("run_dense_sweep: empty dense factor list");
  auto items = train::build_sinusoid_dataset(spec.dataset);

  std::vector<EvalReport> parts;
  for (int a : spec.dense_factors) {
    int epochs = spec.training.epochs;
    if (auto it = spec.epochs_override_by_dense.find(a); it != spec.epochs_override_by_dense.end())
      epochs = it->second;
    auto sub = spec;
    sub.wav_dir = out_dir.empty() ? std::string() : out_dir + "/wav";
    if (!sub.wav_dir.empty()) fs::create_directories(sub.wav_dir);
    parts.push_back(train_and_evaluate("pQPNet", a, epochs, sub, items,
                                       out_dir.empty() ? std::string() : out_dir + "/checkpoints"));
  }
  auto report = merge_reports(parts);
  report.bands = band_group_metrics(report.rows, spec.band_lower(), spec.band_upper());
  if (!out_dir.empty()) emit_report(report, out_dir);
  return report;
}

EvalReport run_model_comparison(const ExperimentSpec& spec, const std::string& out_dir) {
  spec.validate();
  auto items = train::build_sinusoid_dataset(spec.dataset);

  std::vector<EvalReport> parts;
  for (const auto& name : spec.roster) {
    auto sub = spec;
    sub.wav_dir = out_dir.empty() ? std::string() : out_dir + "/wav";
    if (!sub.wav_dir.empty()) fs::create_directories(sub.wav_dir);
    parts.push_back(train_and_evaluate(name, spec.dense_factor, spec.training.epochs, sub, items,
                                       out_dir.empty() ? std::string() : out_dir + "/checkpoints"));
  }
  auto report = merge_reports(parts);
  report.bands = band_group_metrics(report.rows, spec.band_lower(), spec.band_upper());
  if (!out_dir.empty()) emit_report(report, out_dir);
  return report;
}

void emit_report(const EvalReport& report, const std::string& out_dir) {
  if (report.rows.empty()) throw DataError("emit_report: empty report");
  fs::create_directories(out_dir);
  char line[256];

  {
    std::ofstream f(out_dir + "/summary.csv", std::ios::trunc);
    if (!f) throw IoError("emit_report: cannot open " + out_dir + "/summary.csv");
    f << "model,dense_factor,band,mean_snr_db,mean_logf0_rmse,n\n";
    for (const auto& b : report.bands) {
      snprintf(line, sizeof(line), "%s,%d,%s,%.6f,%.6f,%d\n", b.model.c_str(), b.dense_factor,
               b.band.c_str(), b.mean_snr_db, b.mean_logf0_rmse, b.n);
      f << line;
    }
  }
  {
    std::ofstream f(out_dir + "/bands_ci.csv", std::ios::trunc);
    if (!f) throw IoError("emit_report: cannot open " + out_dir + "/bands_ci.csv");
    f << "model,dense_factor,band,mean_snr_db,snr_ci95,mean_logf0_rmse,rmse_ci95,n\n";
    for (const auto& b : report.bands) {
      snprintf(line, sizeof(line), "%s,%d,%s,%.6f,%.6f,%.6f,%.6f,%d\n", b.model.c_str(),
               b.dense_factor, b.band.c_str(), b.mean_snr_db, b.snr_ci95, b.mean_logf0_rmse,
               b.rmse_ci95, b.n);
      f << line;
    }
  }
  {
    std::ofstream f(out_dir + "/per_utterance.csv", std::ios::trunc);
    if (!f) throw IoError("emit_report: cannot open " + out_dir + "/per_utterance.csv");
    f << "model,dense_factor,profile,f0_hz,phase_idx,measured_f0_hz,snr_db,logf0_rmse,failed\n";
    for (const auto& r : report.rows) {
      snprintf(line, sizeof(line), "%s,%d,%s,%.3f,%d,%.6f,%.6f,%.6f,%d\n", r.model.c_str(),
               r.dense_factor, r.profile.c_str(), r.f0_hz, r.phase_idx, r.measured_f0_hz,
               r.snr_db, r.logf0_rmse, int(r.failed));
      f << line;
    }
  }
  if (!report.psd_per_row.empty()) {
    fs::create_directories(out_dir + "/psd");
    for (size_t i = 0; i < report.rows.size(); ++i) {
      const auto& psd = report.psd_per_row[i];
      if (psd.power.empty()) continue;
      const auto& r = report.rows[i];
      char name[192];
      snprintf(name, sizeof(name), "%s/psd/%s_%d_%d_%d.csv", out_dir.c_str(), r.model.c_str(),
               r.dense_factor, int(llround(r.f0_hz)), r.phase_idx);
      std::ofstream f(name, std::ios::trunc);
      f << "freq_hz,power\n";
      for (size_t k = 0; k < psd.power.size(); ++k) {
        snprintf(line, sizeof(line), "%.6f,%.10e\n", psd.freq_hz[k], psd.power[k]);
        f << line;
      }
    }
  }
}

}  // namespace qpnet::exp
