#include "qpnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "qpnet/checkpoint.hpp"
#include "qpnet/rng.hpp"

namespace qpnet::train {

using model::AuxTrack;
using model::ModelConfig;
using model::NetworkParams;

std::vector<double> DatasetSpec::default_f0_list() {
  std::vector<double> f0s;
  for (int f = 80; f <= 400; f += 20) f0s.push_back(double(f));
  return f0s;
}

void DatasetSpec::validate() const {
  if (f0_list.empty()) throw ConfigError("DatasetSpec: empty f0 list");
  for (double f : f0_list)
    if (!(f > 0.0) || f >= double(sample_rate) / 2.0)
      throw ConfigError("DatasetSpec: f0 " + std::to_string(f) + " not in (0, Nyquist)");
  if (utterances_per_f0 < 1) throw ConfigError("DatasetSpec: utterances_per_f0 must be >= 1");
  if (!(seconds_per_utterance > 0.0)) throw ConfigError("DatasetSpec: non-positive duration");
  if (!(sine_amplitude > 0.0 && sine_amplitude <= 1.0))
    throw ConfigError("DatasetSpec: sine amplitude must be in (0,1]");
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("TrainingConfig: learning rate must be positive");
  if (batch_size < 1) throw ConfigError("TrainingConfig: batch size must be >= 1");
  if (batch_length_samples < 2) throw ConfigError("TrainingConfig: batch length too small");
  if (epochs < 0) throw ConfigError("TrainingConfig: negative epochs");
}

std::vector<TrainingItem> build_sinusoid_dataset(const DatasetSpec& spec) {
  spec.validate();
  const int total = spec.total_utterances();
  std::vector<TrainingItem> items(static_cast<size_t>(total));
  const double two_pi = 2.0 * 3.14159265358979323846;

  for (int i = 0; i < total; ++i) {
    double f0 = spec.f0_list[static_cast<size_t>(i) % spec.f0_list.size()];
    auto phase_rng = rng::make(spec.seed, "phase", uint64_t(i));
    double phase = rng::uniform(phase_rng, 0.0, two_pi);

    auto clean = signal::synth_sinusoid(f0, spec.seconds_per_utterance, spec.sample_rate, phase,
                                        spec.sine_amplitude);
    auto noisy = signal::add_noise_snr(clean, spec.signal_snr_db,
                                       rng::derive(spec.seed, "noise", uint64_t(i)));

    TrainingItem item;
    item.f0 = f0;
    item.target = signal::mulaw_encode(clean);
    item.input = signal::mulaw_encode(noisy);

    const int64_t n = static_cast<int64_t>(clean.samples.size());
    item.aux.f0.assign(static_cast<size_t>(n), f0);
    item.aux.voiced.assign(static_cast<size_t>(n), 1);
    item.aux.conditioning = engine::Mat<float>::Zero(1, n);
    auto aux_rng = rng::make(spec.seed, "aux", uint64_t(i));
    for (int64_t t = 0; t < n; ++t) {
      double jitter = spec.aux_noise_amplitude == 0.0
                          ? 0.0
                          : rng::uniform(aux_rng, -spec.aux_noise_amplitude,
                                         spec.aux_noise_amplitude);
      item.aux.conditioning(0, t) = static_cast<float>((f0 + jitter) / model::kAuxF0Scale);
    }
    items[static_cast<size_t>(i)] = std::move(item);
  }
  return items;
}

namespace {

AuxTrack slice_aux(const AuxTrack& aux, int64_t start, int64_t len) {
  AuxTrack out;
  out.f0.assign(aux.f0.begin() + start, aux.f0.begin() + start + len);
  out.voiced.assign(aux.voiced.begin() + start, aux.voiced.begin() + start + len);
  out.conditioning = aux.conditioning.middleCols(start, len);
  return out;
}

struct Window {
  const TrainingItem* item;
  int64_t start, len;
};

// One optimizer step over a window batch; returns the batch loss.
double run_step(NetworkParams& params, const ModelConfig& cfg, engine::AdamState<float>& adam,
                std::span<const Window> batch) {
  engine::Tape<float> tape;
  auto net = model::bind_network(tape, params, true);
  std::vector<engine::Tensor<float>> losses;
  losses.reserve(batch.size());
  for (const Window& w : batch) {
    std::span<const uint8_t> in(w.item->input.codes.data() + w.start, size_t(w.len));
    std::span<const uint8_t> tgt(w.item->target.codes.data() + w.start, size_t(w.len));
    AuxTrack aux = slice_aux(w.item->aux, w.start, w.len);
    auto out = model::forward_teacher_forced(tape, net, cfg, in, aux);
    losses.push_back(tape.softmax_cross_entropy(out.logits, tgt));
  }
  engine::Tensor<float> loss;
  if (losses.size() == 1) {
    loss = losses[0];
  } else {
    auto sum = tape.add_n(std::span<const engine::Tensor<float>>(losses));
    engine::Mat<float> inv(1, 1);
    inv(0, 0) = 1.0f / float(losses.size());
    loss = tape.mul(sum, tape.constant(inv));
  }
  double loss_value = double(loss.value()(0, 0));
  tape.backward(loss);

  std::vector<engine::Mat<float>*> ps = params.buffer_ptrs();
  std::vector<engine::Mat<float>> grads;
  grads.reserve(net.flat.size());
  for (auto& h : net.flat) grads.push_back(h.grad());
  std::vector<const engine::Mat<float>*> gp;
  gp.reserve(grads.size());
  for (auto& g : grads) gp.push_back(&g);
  engine::adam_step<float>(ps, gp, adam);
  return loss_value;
}

}  // namespace

TrainResult train(NetworkParams& params, const ModelConfig& cfg, const TrainingConfig& tc,
                  std::span<const TrainingItem> items, engine::AdamState<float>& adam) {
  cfg.validate();
  tc.validate();
  if (items.empty()) throw DataError("train: empty dataset");
  if (adam.first_moment.empty()) {
    auto ptrs = params.buffer_ptrs();
    std::vector<const engine::Mat<float>*> cptrs(ptrs.begin(), ptrs.end());
    adam = engine::AdamState<float>::zeros_like(cptrs, float(tc.learning_rate));
  }
  adam.learning_rate = float(tc.learning_rate);

  const int64_t n = static_cast<int64_t>(items.size());
  const int64_t bs = tc.batch_size;
  const int64_t steps_per_epoch = (n + bs - 1) / bs;
  const int64_t total_steps = steps_per_epoch * tc.epochs;

  TrainResult result;
  result.final_step = adam.step_count;
  int64_t step = adam.step_count;  // resume point
  int64_t done_this_call = 0;

  while (step < total_steps) {
    if (tc.max_steps > 0 && done_this_call >= tc.max_steps) break;
    const int64_t epoch = step / steps_per_epoch;
    const int64_t pos = (step % steps_per_epoch) * bs;

    // Seeded shuffle, a pure function of (seed, epoch): resuming mid-epoch
    // reproduces the same order.
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = rng::make(tc.seed, "order", uint64_t(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<Window> batch;
    for (int64_t b = 0; b < bs && pos + b < n; ++b) {
      const TrainingItem& item = items[static_cast<size_t>(order[static_cast<size_t>(pos + b)])];
      const int64_t len = static_cast<int64_t>(item.input.codes.size());
      Window w{&item, 0, len};
      if (len > tc.batch_length_samples) {
        // random window per (epoch, item position)
        auto crop_rng = rng::make(tc.seed, "crop", uint64_t(epoch), uint64_t(pos + b));
        w.start = int64_t(rng::canonical(crop_rng) * double(len - tc.batch_length_samples + 1));
        w.len = tc.batch_length_samples;
      }
      batch.push_back(w);
    }

    double loss = run_step(params, cfg, adam, batch);
    step = adam.step_count;
    ++done_this_call;
    result.history.push_back({step, loss});
    result.final_step = step;

    if (!std::isfinite(loss))
      throw TrainingDiverged("training diverged: non-finite loss at step " + std::to_string(step) +
                                 " (learning rate " + std::to_string(tc.learning_rate) + ")",
                             step);

    if (tc.checkpoint_every_steps > 0 && !tc.checkpoint_dir.empty() &&
        step % tc.checkpoint_every_steps == 0) {
      std::filesystem::create_directories(tc.checkpoint_dir);
      save_checkpoint(tc.checkpoint_dir + "/step" + std::to_string(step) + ".qpck", cfg, params,
                      adam, step);
    }
  }
  return result;
}

double evaluate_loss(const NetworkParams& params, const ModelConfig& cfg,
                     std::span<const TrainingItem> items) {
  if (items.empty()) throw DataError("evaluate_loss: empty dataset");
  double acc = 0.0;
  for (const TrainingItem& item : items) {
    engine::Tape<float> tape;
    auto net = model::bind_network(tape, params, false);
    auto out = model::forward_teacher_forced(tape, net, cfg, item.input.codes, item.aux);
    acc += double(tape.softmax_cross_entropy(out.logits, item.target.codes).value()(0, 0));
  }
  return acc / double(items.size());
}

void write_loss_csv(const std::string& path, const TrainResult& result) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_loss_csv: cannot open " + path);
  f << "step,loss\n";
  char line[64];
  for (const auto& s : result.history) {
    snprintf(line, sizeof(line), "%lld,%.6f\n", static_cast<long long>(s.step), s.loss);
    f << line;
  }
}

}  // namespace qpnet::train
