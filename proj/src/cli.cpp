#include "qpnet/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "qpnet/checkpoint.hpp"
#include "qpnet/experiments.hpp"
#include "qpnet/gradcheck.hpp"
#include "qpnet/json_io.hpp"
#include "qpnet/rng.hpp"
#include "qpnet/sampler.hpp"

namespace qpnet::cli {

namespace {

namespace fs = std::filesystem;

nlohmann::json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid json: " + e.what());
  }
}

model::ModelConfig model_from_json(const nlohmann::json& j, const std::string& profile) {
  if (j.contains("name")) {
    auto cfg = model::standard_config(j.at("name").get<std::string>(), profile,
                                      j.value("dense_factor", 8));
    if (j.contains("sample_rate")) cfg.sample_rate = j.at("sample_rate").get<int>();
    return cfg;
  }
  return j.get<model::ModelConfig>();
}

exp::ExperimentSpec spec_from_json(const nlohmann::json& j, const std::string& profile,
                                   uint64_t seed) {
  exp::ExperimentSpec spec;
  spec.profile = profile;
  if (j.contains("dataset")) spec.dataset = j.at("dataset").get<train::DatasetSpec>();
  if (j.contains("training")) spec.training = j.at("training").get<train::TrainingConfig>();
  if (j.contains("experiment")) {
    const auto& e = j.at("experiment");
    spec.roster = e.value("roster", spec.roster);
    spec.dense_factor = e.value("dense_factor", spec.dense_factor);
    spec.dense_factors = e.value("dense_factors", spec.dense_factors);
    spec.test_f0_grid = e.value("test_f0_grid", spec.test_f0_grid);
    spec.utterances_per_test_f0 = e.value("utterances_per_test_f0", spec.utterances_per_test_f0);
    spec.generation_seconds = e.value("generation_seconds", spec.generation_seconds);
    spec.eval_seed = e.value("eval_seed", spec.eval_seed);
    spec.threads = e.value("threads", spec.threads);
    spec.write_wavs = e.value("write_wavs", spec.write_wavs);
    spec.write_psd = e.value("write_psd", spec.write_psd);
    if (e.contains("epochs_override_by_dense"))
      for (const auto& [key, val] : e.at("epochs_override_by_dense").items())
        spec.epochs_override_by_dense[std::stoi(key)] = val.get<int>();
  }
  if (seed != 0) {
    spec.dataset.seed = rng::derive(seed, "dataset");
    spec.training.seed = rng::derive(seed, "training");
    spec.eval_seed = rng::derive(seed, "eval");
  }
  return spec;
}

void print_band_table(const exp::EvalReport& report) {
  printf("%-8s %5s %-14s %12s %12s %5s\n", "model", "a", "band", "mean_snr_db", "logf0_rmse",
         "n");
  for (const auto& b : report.bands)
    printf("%-8s %5d %-14s %12.2f %12.4f %5d\n", b.model.c_str(), b.dense_factor,
           b.band.c_str(), b.mean_snr_db, b.mean_logf0_rmse, b.n);
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& profile, uint64_t seed) {
  auto j = load_json(config_path);
  auto cfg = model_from_json(j.value("model", nlohmann::json{{"name", "pQPNet"}}), profile);
  auto spec = spec_from_json(j, profile, seed);
  fs::create_directories(out_dir);

  auto items = train::build_sinusoid_dataset(spec.dataset);
  auto params = model::init_params<float>(cfg, rng::derive(spec.training.seed, "init"));
  engine::AdamState<float> adam;
  auto result = train::train(params, cfg, spec.training, items, adam);
  train::save_checkpoint(out_dir + "/final.qpck", cfg, params, adam, adam.step_count);
  train::write_loss_csv(out_dir + "/loss.csv", result);
  double final_loss = result.history.empty() ? std::log(256.0) : result.history.back().loss;
  printf("trained %lld steps, final loss %.4f, checkpoint %s/final.qpck\n",
         static_cast<long long>(result.final_step), final_loss, out_dir.c_str());
  return 0;
}

int cmd_generate(const std::string& ckpt, double f0, double seconds, const std::string& out,
                 const std::string& mode, double temperature, bool no_seed_clip, uint64_t seed) {
  auto loaded = train::load_checkpoint(ckpt);
  sampler::GenerationRequest req;
  req.f0_hz = f0;
  req.seconds = seconds;
  req.mode = mode == "argmax" ? sampler::SamplingMode::argmax : sampler::SamplingMode::categorical;
  req.temperature = temperature;
  req.rng_seed = seed;
  if (!no_seed_clip) {
    int64_t n = sampler::recommended_seed_length(loaded.config, f0);
    auto clean = signal::synth_sinusoid_n(f0, n, loaded.config.sample_rate, 0.0, 0.8);
    req.seed_clip = signal::add_noise_snr(clean, 20.0, rng::derive(seed, "seednoise"));
  }
  auto clip = sampler::generate(loaded.params, loaded.config, req);
  signal::write_wav(clip, out);
  auto est = signal::estimate_snr(clip);
  double peak = signal::psd_peak_hz(signal::periodogram(clip), 5.0);
  printf("wrote %zu samples to %s (psd peak %.2f Hz, snr %.2f dB)\n", clip.samples.size(),
         out.c_str(), peak, est.snr_db);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& name, const std::string& config_path,
             const std::string& out_dir, const std::string& profile, uint64_t seed) {
  auto loaded = train::load_checkpoint(ckpt);
  auto spec = config_path.empty()
                  ? spec_from_json(nlohmann::json::object(), profile, seed)
                  : spec_from_json(load_json(config_path), profile, seed);
  fs::create_directories(out_dir);
  spec.wav_dir = out_dir + "/wav";
  fs::create_directories(spec.wav_dir);
  auto report =
      exp::evaluate_model(loaded.params, loaded.config, name, loaded.config.dense_factor, spec);
  exp::emit_report(report, out_dir);
  print_band_table(report);
  printf("report written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              const std::string& profile, uint64_t seed) {
  auto spec = spec_from_json(config_path.empty() ? nlohmann::json::object()
                                                 : load_json(config_path),
                             profile, seed);
  auto report = exp::run_dense_sweep(spec, out_dir);
  print_band_table(report);
  printf("report written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_compare(const std::string& config_path, const std::string& out_dir,
                const std::string& profile, uint64_t seed) {
  auto spec = spec_from_json(config_path.empty() ? nlohmann::json::object()
                                                 : load_json(config_path),
                             profile, seed);
  auto report = exp::run_model_comparison(spec, out_dir);
  print_band_table(report);
  printf("report written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  auto results = gradcheck::run_all(seed);
  for (const auto& r : results)
    printf("%-24s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
           r.pass ? "PASS" : "FAIL");
  bool ok = gradcheck::all_pass(results);
  printf("gradcheck: %s\n", ok ? "all checks passed at 1e-4" : "FAILED");
  return ok ? 0 : 1;
}

int cmd_inspect(const std::string& model_name, const std::string& config_path, int dense,
                const std::string& profile) {
  model::ModelConfig cfg;
  std::string label = model_name;
  if (!config_path.empty()) {
    auto j = load_json(config_path);
    cfg = model_from_json(j.value("model", nlohmann::json{{"name", model_name}}), profile);
    if (j.contains("model") && j.at("model").contains("name"))
      label = j.at("model").at("name").get<std::string>();
  } else {
    cfg = model::standard_config(model_name, profile, dense);
  }
  printf("model %s (profile %s, dense factor %d)\n", label.c_str(), profile.c_str(),
         cfg.dense_factor);
  printf("parameters: %lld\n", static_cast<long long>(model::parameter_count(cfg)));
  printf("receptive field: %lld samples\n",
         static_cast<long long>(model::receptive_field_length(cfg)));
  printf("%8s %8s %28s\n", "f0_hz", "E_t", "effective_receptive_field");
  for (double f0 : {50.0, 100.0, 150.0, 200.0, 400.0, 500.0}) {
    int et = model::compute_dilation_factor(f0, double(cfg.sample_rate), cfg.dense_factor);
    auto aux = model::AuxTrack::constant(f0, 1, cfg.aux_dim);
    printf("%8.0f %8d %28lld\n", f0, et,
           static_cast<long long>(model::effective_receptive_field_length(cfg, aux, 0)));
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"pitch-adaptive autoregressive waveform modeling"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path, out_dir = "out", profile = "desk";
  uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON config file")->capture_default_str();
  app.add_option("--seed", seed, "master seed (0 keeps per-section seeds)");
  app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  app.add_option("--profile", profile, "desk|paper")->check(CLI::IsMember({"desk", "paper"}));

  auto* train_cmd = app.add_subcommand("train", "train one model from a config");
  auto* gen_cmd = app.add_subcommand("generate", "generate a sinusoid from a checkpoint");
  double f0 = 200.0, seconds = 1.0, temperature = 1.0;
  std::string ckpt, out_wav = "out.wav", mode = "categorical";
  bool no_seed_clip = false;
  gen_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  gen_cmd->add_option("--f0", f0, "target pitch in Hz")->capture_default_str();
  gen_cmd->add_option("--seconds", seconds, "duration")->capture_default_str();
  gen_cmd->add_option("--out", out_wav, "output wav path")->capture_default_str();
  gen_cmd->add_option("--mode", mode, "categorical|argmax")
      ->check(CLI::IsMember({"categorical", "argmax"}));
  gen_cmd->add_option("--temperature", temperature, "softmax temperature");
  gen_cmd->add_flag("--no-seed-clip", no_seed_clip, "start from zeroed buffers");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint over the test grid");
  std::string eval_name = "model";
  eval_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  eval_cmd->add_option("--name", eval_name, "model label for report rows");

  auto* sweep_cmd = app.add_subcommand("sweep-dense", "train/evaluate across dense factors");
  auto* cmp_cmd = app.add_subcommand("compare-models", "train/evaluate the model roster");
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* inspect_cmd = app.add_subcommand("inspect", "print receptive-field arithmetic");
  std::string inspect_model = "WNf";
  int inspect_dense = 8;
  inspect_cmd->add_option("--model", inspect_model, "WNf|WNc|QPNet|rQPNet|pQPNet");
  inspect_cmd->add_option("--dense", inspect_dense, "dense factor");

  std::vector<const char*> argv;
  argv.push_back("qpnet");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help() << std::endl;
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      if (config_path.empty()) throw ConfigError("train requires --config");
      return cmd_train(config_path, out_dir, profile, seed);
    }
    if (gen_cmd->parsed())
      return cmd_generate(ckpt, f0, seconds, out_wav, mode, temperature, no_seed_clip, seed);
    if (eval_cmd->parsed())
      return cmd_eval(ckpt, eval_name, config_path, out_dir, profile, seed);
    if (sweep_cmd->parsed()) return cmd_sweep(config_path, out_dir, profile, seed);
    if (cmp_cmd->parsed()) return cmd_compare(config_path, out_dir, profile, seed);
    if (grad_cmd->parsed()) return cmd_gradcheck(seed);
    if (inspect_cmd->parsed())
      return cmd_inspect(inspect_model, config_path, inspect_dense, profile);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace qpnet::cli
