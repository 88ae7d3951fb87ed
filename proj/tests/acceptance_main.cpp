// Acceptance suite: runs every study gate end to end and prints one
// [PASS]/[FAIL] line per criterion. Criteria 4, 5 and 7 train desk-profile
// models from scratch, so a full run takes a few hours of CPU time.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "qpnet/checkpoint.hpp"
#include "qpnet/experiments.hpp"
#include "qpnet/gradcheck.hpp"
#include "qpnet/rng.hpp"
#include "qpnet/sampler.hpp"

using namespace qpnet;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;
std::vector<std::string> g_lines;

void report(int criterion, const std::string& what, bool pass, const std::string& detail) {
  char line[512];
  snprintf(line, sizeof(line), "[%s] criterion %d: %s (%s)", pass ? "PASS" : "FAIL", criterion,
           what.c_str(), detail.c_str());
  puts(line);
  fflush(stdout);
  g_lines.push_back(line);
  if (!pass) ++g_failures;
}

double wall_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "<missing:" + path + ">";
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---- criterion 1: property suite (no training) ------------------------------

bool check_block_oracle(std::string& detail) {
  using namespace qpnet::model;
  ModelConfig cfg;
  cfg.macroblocks = {{MacroblockKind::adaptive, 1, 1}};
  cfg.residual_channels = cfg.gate_channels = cfg.skip_channels = 4;
  cfg.output_mid_channels = 4;
  auto params = init_params<double>(cfg, 424);
  const int R = 4, T = 32;
  auto g = rng::make(425, "in");
  engine::Mat<double> xv(R, T), auxv(1, T);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < R; ++i) xv(i, t) = rng::uniform(g, -1, 1);
    auxv(0, t) = rng::uniform(g, -1, 1);
  }
  std::vector<int> offs(T);
  for (auto& o : offs) o = 1 + int(g() % 8);

  engine::Tape<double> tape;
  auto net = bind_network(tape, params, false);
  auto [res, skip] =
      residual_block_forward(tape, net.blocks[0], tape.constant(xv), tape.constant(auxv), offs);

  const auto& b = params.blocks[0];
  double worst = 0.0;
  for (int t = 0; t < T; ++t) {
    std::vector<double> xpast(R, 0.0);
    if (t - offs[size_t(t)] >= 0)
      for (int k = 0; k < R; ++k) xpast[size_t(k)] = xv(k, t - offs[size_t(t)]);
    std::vector<double> z(R);
    for (int c = 0; c < R; ++c) {
      double uf = b.bf(c, 0) + b.vf(c, 0) * auxv(0, t);
      double ug = b.bg(c, 0) + b.vg(c, 0) * auxv(0, t);
      for (int k = 0; k < R; ++k) {
        uf += b.wf_c(c, k) * xv(k, t) + b.wf_p(c, k) * xpast[size_t(k)];
        ug += b.wg_c(c, k) * xv(k, t) + b.wg_p(c, k) * xpast[size_t(k)];
      }
      z[size_t(c)] = std::tanh(uf) / (1.0 + std::exp(-ug));
    }
    for (int c = 0; c < R; ++c) {
      double rr = xv(c, t) + b.b_res(c, 0);
      double ss = b.b_skip(c, 0);
      for (int k = 0; k < R; ++k) {
        rr += b.w_res(c, k) * z[size_t(k)];
        ss += b.w_skip(c, k) * z[size_t(k)];
      }
      double denom = std::max({std::abs(rr), std::abs(ss), 1.0});
      worst = std::max(worst, std::abs(res.value()(c, t) - rr) / denom);
      worst = std::max(worst, std::abs(skip.value()(c, t) - ss) / denom);
    }
  }
  char buf[64];
  snprintf(buf, sizeof(buf), "block-oracle err %.2e", worst);
  detail += buf;
  return worst < 1e-6;
}

bool check_causality_audit() {
  using namespace qpnet::model;
  ModelConfig cfg;
  cfg.macroblocks = {{MacroblockKind::fixed, 1, 3}};
  cfg.residual_channels = cfg.gate_channels = cfg.skip_channels = 8;
  cfg.output_mid_channels = 8;
  auto params = init_params<float>(cfg, 515);
  {
    auto g = rng::make(516, "head");
    for (Eigen::Index k = 0; k < params.out_w.size(); ++k)
      params.out_w.data()[k] = float(rng::uniform(g, -0.3, 0.3));
    params.mid_b.setConstant(0.2f);
  }
  const int64_t T = 64;
  auto aux = AuxTrack::constant(200.0, T);
  auto g = rng::make(517, "codes");
  std::vector<uint8_t> codes(static_cast<size_t>(T));
  for (auto& c : codes) c = uint8_t(g() % 256);
  auto run = [&](std::span<const uint8_t> cs) {
    engine::Tape<float> tape;
    auto net = bind_network(tape, params, false);
    return engine::Mat<float>(forward_teacher_forced(tape, net, cfg, cs, aux).logits.value());
  };
  auto base = run(codes);
  auto tampered = codes;
  const int64_t cut = 30;
  for (int64_t t = cut; t < T; ++t)
    tampered[size_t(t)] = uint8_t((codes[size_t(t)] + 1 + g() % 255) % 256);
  auto pert = run(tampered);
  for (int64_t s = 0; s <= cut; ++s)
    if ((pert.col(s) - base.col(s)).cwiseAbs().maxCoeff() != 0.0f) return false;
  double later = 0.0;
  for (int64_t s = cut + 1; s < T; ++s)
    later = std::max(later, double((pert.col(s) - base.col(s)).cwiseAbs().maxCoeff()));
  return later > 0.0;
}

bool check_mulaw() {
  for (int c = 0; c < 256; ++c)
    if (int(signal::mulaw_encode_sample(signal::mulaw_decode_sample(uint8_t(c)))) != c)
      return false;
  double worst = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    double x = -1.0 + 2.0 * double(i) / 10000.0;
    worst = std::max(worst,
                     std::abs(signal::mulaw_decode_sample(signal::mulaw_encode_sample(x)) - x));
  }
  return worst <= 0.025;
}

bool check_checkpoint_continuation(const std::string& work) {
  using namespace qpnet::train;
  model::ModelConfig cfg;
  cfg.macroblocks = {{model::MacroblockKind::adaptive, 1, 3}};
  cfg.residual_channels = cfg.gate_channels = cfg.skip_channels = 8;
  cfg.output_mid_channels = 8;
  DatasetSpec ds;
  ds.f0_list = {100.0, 200.0};
  ds.utterances_per_f0 = 2;
  ds.seconds_per_utterance = 0.04;
  ds.seed = 7;
  auto items = build_sinusoid_dataset(ds);
  TrainingConfig tc;
  tc.epochs = 3;
  tc.batch_length_samples = 882;
  tc.seed = 8;

  auto params = model::init_params<float>(cfg, 9);
  engine::AdamState<float> adam;
  TrainingConfig tc5 = tc;
  tc5.max_steps = 5;
  qpnet::train::train(params, cfg, tc5, items, adam);
  std::string path = work + "/continuation.qpck";
  save_checkpoint(path, cfg, params, adam, adam.step_count);
  TrainingConfig tc1 = tc;
  tc1.max_steps = 1;
  qpnet::train::train(params, cfg, tc1, items, adam);

  auto ck = load_checkpoint(path);
  qpnet::train::train(ck.params, cfg, tc1, items, ck.adam);

  bool equal = true;
  std::vector<const engine::Mat<float>*> bufs;
  ck.params.for_each_buffer(
      [&bufs](const std::string&, const engine::Mat<float>& m) { bufs.push_back(&m); });
  size_t i = 0;
  params.for_each_buffer([&](const std::string&, const engine::Mat<float>& m) {
    if (std::memcmp(m.data(), bufs[i++]->data(), sizeof(float) * size_t(m.size())) != 0)
      equal = false;
  });
  return equal;
}

void criterion1(const std::string& work) {
  auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  auto checks = gradcheck::run_all(31337);
  bool grads = gradcheck::all_pass(checks);
  double worst_grad = 0.0;
  for (const auto& c : checks) worst_grad = std::max(worst_grad, c.max_rel_err);
  bool oracle = check_block_oracle(detail);
  bool causal = check_causality_audit();
  bool mulaw = check_mulaw();
  bool ckpt = check_checkpoint_continuation(work);
  char buf[256];
  snprintf(buf, sizeof(buf),
           "gradcheck %s (worst %.2e), %s, causality %s, mulaw %s, checkpoint %s, %.0f s",
           grads ? "ok" : "FAIL", worst_grad, detail.c_str(), causal ? "ok" : "FAIL",
           mulaw ? "ok" : "FAIL", ckpt ? "ok" : "FAIL", wall_seconds(t0));
  report(1, "property suite", grads && oracle && causal && mulaw && ckpt && wall_seconds(t0) < 300,
         buf);
}

// ---- criterion 2: receptive-field arithmetic --------------------------------

void criterion2() {
  using namespace qpnet::model;
  bool ok = true;
  ok &= receptive_field_length(standard_config("WNf", "desk", 8)) == 3070;
  ok &= receptive_field_length(standard_config("WNc", "desk", 8)) == 61;
  ModelConfig fixed_part;
  fixed_part.macroblocks = {{MacroblockKind::fixed, 3, 4}};
  ok &= receptive_field_length(fixed_part) == 46;
  ok &= compute_dilation_factor(500.0, 22050.0, 8) == 6;
  for (double f0 : {345.0, 350.0, 400.0, 600.0, 800.0})
    ok &= compute_dilation_factor(f0, 22050.0, 64) == 1;
  report(2, "receptive-field arithmetic (zero tolerance)", ok,
         "3070 / 61 / 46, E_t(500 Hz, a=8)=6, E_t(F0>=345 Hz, a=64)=1");
}

// ---- criterion 3: degeneration equivalence ----------------------------------

void criterion3() {
  using namespace qpnet::model;
  auto adaptive = standard_config("QPNet", "desk", 64);
  auto fixed = adaptive;
  for (auto& mb : fixed.macroblocks) mb.kind = MacroblockKind::fixed;
  auto params = init_params<float>(adaptive, 616);
  {
    auto g = rng::make(617, "head");
    for (Eigen::Index k = 0; k < params.out_w.size(); ++k)
      params.out_w.data()[k] = float(rng::uniform(g, -0.3, 0.3));
  }
  const double f0 = 400.0;  // E_t = 1 at a=64
  const int64_t T = 256;
  auto aux = AuxTrack::constant(f0, T);
  auto g = rng::make(618, "codes");
  std::vector<uint8_t> codes(static_cast<size_t>(T));
  for (auto& c : codes) c = uint8_t(g() % 256);

  auto run = [&](const ModelConfig& cfg) {
    engine::Tape<float> tape;
    auto net = bind_network(tape, params, false);
    return engine::Mat<float>(forward_teacher_forced(tape, net, cfg, codes, aux).logits.value());
  };
  auto la = run(adaptive);
  auto lf = run(fixed);
  bool logits_equal =
      std::memcmp(la.data(), lf.data(), sizeof(float) * size_t(la.size())) == 0;

  sampler::GenerationRequest req;
  req.f0_hz = f0;
  req.seconds = 0.05;
  req.seed_clip = signal::synth_sinusoid(f0, 0.02, 22050, 0.4, 0.8);
  req.mode = sampler::SamplingMode::argmax;
  auto ga = sampler::generate_detailed(params, adaptive, req, false);
  auto gf = sampler::generate_detailed(params, fixed, req, false);
  bool gen_equal = ga.codes.codes == gf.codes.codes;

  report(3, "degeneration equivalence at E_t=1", logits_equal && gen_equal,
         std::string("logits ") + (logits_equal ? "bit-identical" : "DIFFER") + ", argmax codes " +
             (gen_equal ? "identical" : "DIFFER"));
}

// ---- criteria 4, 5, 7: desk-scale studies ------------------------------------

exp::ExperimentSpec desk_spec() {
  exp::ExperimentSpec spec;
  spec.profile = "desk";
  spec.dataset.f0_list = train::DatasetSpec::default_f0_list();  // 80..400 step 20
  spec.dataset.utterances_per_f0 = 24;                           // ~400 utterances
  spec.dataset.seconds_per_utterance = 1.0;
  spec.dataset.signal_snr_db = 20.0;
  spec.dataset.aux_noise_amplitude = 1.0;
  spec.dataset.seed = 101;
  spec.training.learning_rate = 1e-4;
  spec.training.batch_size = 1;
  spec.training.batch_length_samples = 22050;
  spec.training.epochs = 2;
  spec.training.seed = 202;
  spec.utterances_per_test_f0 = 10;
  spec.generation_seconds = 1.0;
  spec.eval_seed = 303;
  spec.threads = 2;
  return spec;
}

double band_value(const exp::EvalReport& report, const std::string& model, int dense,
                  const std::string& band, bool snr) {
  for (const auto& b : report.bands)
    if (b.model == model && b.dense_factor == dense && b.band == band)
      return snr ? b.mean_snr_db : b.mean_logf0_rmse;
  return std::nan("");
}

exp::EvalReport run_comparison(const std::string& out_dir) {
  auto spec = desk_spec();
  spec.roster = {"pQPNet", "WNc"};
  spec.dense_factor = 8;
  return exp::run_model_comparison(spec, out_dir);
}

void criterion4(const std::string& work, bool& comparison_ok) {
  auto t0 = std::chrono::steady_clock::now();
  auto report4 = run_comparison(work + "/compare");
  double hours = wall_seconds(t0) / 3600.0;

  double pq = band_value(report4, "pQPNet", 8, "under_half_L", false);
  double wnc = band_value(report4, "WNc", 8, "under_half_L", false);
  bool pass = pq <= 0.15 && (wnc - pq) >= 0.3 && hours <= 3.0;
  comparison_ok = pass;
  char buf[256];
  snprintf(buf, sizeof(buf),
           "under-1/2L log-F0 RMSE: pQPNet %.4f (<= 0.15), WNc %.4f (gap %.4f >= 0.3), %.2f h",
           pq, wnc, wnc - pq, hours);
  report(4, "desk-scale pitch-controllability contrast", pass, buf);
}

void criterion5(const std::string& work) {
  auto t0 = std::chrono::steady_clock::now();
  auto spec = desk_spec();
  spec.dense_factors = {1, 8, 64};
  auto rep = exp::run_dense_sweep(spec, work + "/sweep");
  double hours = wall_seconds(t0) / 3600.0;

  double avg1 = band_value(rep, "pQPNet", 1, "average", true);
  double avg8 = band_value(rep, "pQPNet", 8, "average", true);
  double avg64 = band_value(rep, "pQPNet", 64, "average", true);
  int best = avg8 >= avg1 && avg8 >= avg64 ? 8 : (avg1 >= avg64 ? 1 : 64);
  double inside_best = band_value(rep, "pQPNet", best, "inside", true);
  bool pass = avg8 > avg1 && avg8 > avg64 && inside_best > 10.0 && hours <= 4.0;
  char buf[256];
  snprintf(buf, sizeof(buf),
           "avg SNR dB: a=1 %.2f, a=8 %.2f, a=64 %.2f; inside(best a=%d) %.2f dB (> 10), %.2f h",
           avg1, avg8, avg64, best, inside_best, hours);
  report(5, "dense-factor sweep tendency", pass, buf);
}

void criterion6() {
  bool peaks_ok = true;
  double worst_peak = 0.0;
  for (double f0 : exp::ExperimentSpec::default_test_grid()) {
    auto clip = signal::synth_sinusoid(f0, 1.0, 22050, 0.37, 0.8);
    double got = signal::psd_peak_hz(signal::periodogram(clip), 5.0);
    worst_peak = std::max(worst_peak, std::abs(got - f0));
    if (std::abs(got - f0) >= 1.0) peaks_ok = false;  // 1 Hz bin at 1 s
  }
  bool snr_ok = true;
  double worst_snr = 0.0;
  int idx = 0;
  for (double f0 : {15.0, 60.0, 150.0, 350.0, 620.0, 795.0}) {
    auto clip = signal::synth_sinusoid(f0, 1.0, 22050, 1.1, 0.7);
    auto noisy = signal::add_noise_snr(clip, 20.0, 7000 + uint64_t(idx++));
    double got = signal::estimate_snr(noisy).snr_db;
    worst_snr = std::max(worst_snr, std::abs(got - 20.0));
    if (std::abs(got - 20.0) > 1.0) snr_ok = false;
  }
  char buf[160];
  snprintf(buf, sizeof(buf), "peak err max %.3f Hz (< 1 bin), 20 dB recovery err max %.3f dB",
           worst_peak, worst_snr);
  report(6, "measurement self-test", peaks_ok && snr_ok, buf);
}

void criterion7(const std::string& work, bool comparison_ran) {
  if (!comparison_ran) {
    report(7, "determinism of the comparison study", false,
           "skipped rerun because criterion 4 did not complete");
    return;
  }
  run_comparison(work + "/compare_rerun");
  std::string a = slurp(work + "/compare/summary.csv");
  std::string b = slurp(work + "/compare_rerun/summary.csv");
  bool same = !a.empty() && a == b;
  std::string pu_a = slurp(work + "/compare/per_utterance.csv");
  std::string pu_b = slurp(work + "/compare_rerun/per_utterance.csv");
  bool same_pu = pu_a == pu_b;
  fs::remove_all(work + "/compare_rerun");
  report(7, "determinism of the comparison study", same && same_pu,
         same ? "summary.csv and per_utterance.csv byte-identical across reruns"
              : "summary.csv bytes differ");
}

}  // namespace

int main(int argc, char** argv) {
  std::string work = argc > 1 ? argv[1] : "acceptance_out";
  fs::create_directories(work);
  printf("acceptance suite, artifacts under %s\n", work.c_str());

  criterion1(work);
  criterion2();
  criterion3();
  criterion6();

  bool comparison_ok = false;
  bool comparison_ran = false;
  try {
    criterion4(work, comparison_ok);
    comparison_ran = true;
  } catch (const std::exception& e) {
    report(4, "desk-scale pitch-controllability contrast", false, e.what());
  }
  try {
    criterion5(work);
  } catch (const std::exception& e) {
    report(5, "dense-factor sweep tendency", false, e.what());
  }
  try {
    criterion7(work, comparison_ran);
  } catch (const std::exception& e) {
    report(7, "determinism of the comparison study", false, e.what());
  }

  printf("\n==== acceptance summary ====\n");
  for (const auto& line : g_lines) puts(line.c_str());
  printf("%d/%zu criteria passed\n", int(g_lines.size()) - g_failures, g_lines.size());
  return g_failures == 0 ? 0 : 1;
}
