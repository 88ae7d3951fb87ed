#include "qpnet/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "qpnet/rng.hpp"

namespace qpnet::sampler {

using engine::Mat;
using model::AuxTrack;
using model::ModelConfig;
using model::NetworkParams;

int64_t recommended_seed_length(const ModelConfig& config, double f0_hz) {
  auto aux = AuxTrack::constant(f0_hz, 1, config.aux_dim);
  return model::effective_receptive_field_length(config, aux, 0);
}

std::vector<int64_t> max_offsets_per_layer(const ModelConfig& config,
                                           std::span<const double> f0_values) {
  config.validate();
  if (f0_values.empty()) throw DataError("max_offsets_per_layer: no f0 values");
  int max_et = 1;
  if (config.has_adaptive()) {
    for (double f : f0_values)
      max_et = std::max(max_et,
                        model::compute_dilation_factor(f, double(config.sample_rate),
                                                       config.dense_factor));
  }
  const auto bases = config.base_dilations();
  const auto kinds = config.layer_kinds();
  std::vector<int64_t> out(bases.size());
  for (size_t l = 0; l < bases.size(); ++l)
    out[l] = kinds[l] == model::MacroblockKind::adaptive ? int64_t(max_et) * bases[l]
                                                         : int64_t(bases[l]);
  return out;
}

LayerStateBuffers seed_receptive_field(const NetworkParams& params, const ModelConfig& config,
                                       const signal::AudioClip* seed_clip,
                                       const AuxTrack& seed_aux,
                                       std::span<const int64_t> capacities) {
  config.validate();
  const int nblocks = config.total_blocks();
  if (static_cast<int>(capacities.size()) != nblocks)
    throw ConfigError("seed_receptive_field: capacity list does not match block count");

  LayerStateBuffers state;
  state.rings.reserve(size_t(nblocks));
  state.capacity.assign(capacities.begin(), capacities.end());
  for (int l = 0; l < nblocks; ++l)
    state.rings.push_back(Mat<float>::Zero(config.residual_channels, capacities[size_t(l)]));

  if (seed_clip == nullptr || seed_clip->samples.empty()) return state;  // zero-initialized

  const auto codes = signal::mulaw_encode(*seed_clip).codes;
  const int64_t ls = static_cast<int64_t>(codes.size());
  if (seed_aux.length() != ls)
    throw DataError("seed_receptive_field: aux length does not match seed length");
  auto plan = model::build_dilation_plan(config, seed_aux);

  // Streaming teacher-forced pass: keep only the current block-input stream,
  // copy each stream's tail into its ring, then advance one block.
  Mat<float> stream(config.residual_channels, ls);
  {
    // causal kernel-2 layer over shifted one-hot codes; a one-hot matmul is a
    // column select, which is exact.
    for (int64_t t = 0; t < ls; ++t) {
      int cur = t == 0 ? 128 : int(codes[size_t(t - 1)]);
      stream.col(t) = params.causal_w0.col(cur);
      if (t >= 1) {
        int prev = t == 1 ? 128 : int(codes[size_t(t - 2)]);
        stream.col(t) += params.causal_w1.col(prev);
      }
      stream.col(t) += params.causal_b.col(0);
    }
  }

  Mat<float> gathered(config.gate_channels, ls), uf, ug, z, mixed;
  for (int l = 0; l < nblocks; ++l) {
    // stash this block's input tail
    const int64_t cap = state.capacity[size_t(l)];
    for (int64_t t = std::max<int64_t>(0, ls - cap); t < ls; ++t)
      state.rings[size_t(l)].col(t % cap) = stream.col(t);

    const auto& offs = plan.offsets[size_t(l)];
    gathered.setZero(stream.rows(), ls);
    for (int64_t t = 0; t < ls; ++t) {
      int64_t src = t - offs[size_t(t)];
      if (src >= 0) gathered.col(t) = stream.col(src);
    }
    const auto& b = params.blocks[size_t(l)];
    uf.noalias() = b.wf_c * stream;
    uf.colwise() += b.bf.col(0);
    uf.noalias() += b.wf_p * gathered;
    uf.noalias() += b.vf * seed_aux.conditioning;
    ug.noalias() = b.wg_c * stream;
    ug.colwise() += b.bg.col(0);
    ug.noalias() += b.wg_p * gathered;
    ug.noalias() += b.vg * seed_aux.conditioning;
    z = uf.array().tanh() * ug.array().logistic();
    mixed.noalias() = b.w_res * z;
    mixed.colwise() += b.b_res.col(0);
    stream += mixed;
  }

  state.timeline = ls;
  state.last_code = ls >= 1 ? int(codes[size_t(ls - 1)]) : -1;
  state.prev_code = ls >= 2 ? int(codes[size_t(ls - 2)]) : (ls == 1 ? 128 : -1);
  return state;
}

namespace {

// Per-generation scratch; no allocation inside the sample loop.
struct Workspace {
  Eigen::VectorXf cur, past, uf, ug, z, skip, h2, logits;
  void init(const ModelConfig& cfg) {
    cur.resize(cfg.residual_channels);
    past.resize(cfg.residual_channels);
    uf.resize(cfg.gate_channels);
    ug.resize(cfg.gate_channels);
    z.resize(cfg.gate_channels);
    skip.resize(cfg.skip_channels);
    h2.resize(cfg.output_mid_channels);
    logits.resize(cfg.quantization_levels);
  }
};

int sample_code(const Eigen::VectorXf& logits, SamplingMode mode, double temperature,
                std::mt19937_64& g) {
  if (mode == SamplingMode::argmax) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return int(best);
  }
  // Temperature softmax in double, inverse-CDF draw.
  const double inv_t = 1.0 / temperature;
  double m = double(logits.maxCoeff());
  static thread_local std::vector<double> probs;
  probs.resize(size_t(logits.size()));
  double sum = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    probs[size_t(k)] = std::exp((double(logits[k]) - m) * inv_t);
    sum += probs[size_t(k)];
  }
  double u = rng::canonical(g) * sum;
  double acc = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    acc += probs[size_t(k)];
    if (u < acc) return int(k);
  }
  return int(logits.size()) - 1;
}

}  // namespace

GenerationResult generate_detailed(const NetworkParams& params, const ModelConfig& config,
                                   const GenerationRequest& request, bool capture_logits) {
  config.validate();
  if (!(request.seconds > 0.0)) throw ConfigError("generate: seconds must be positive");
  if (!(request.temperature > 0.0)) throw ConfigError("generate: temperature must be positive");
  const int64_t n_out = llround(request.seconds * config.sample_rate);

  std::vector<double> f0(request.f0_track);
  if (f0.empty()) {
    if (!(request.f0_hz > 0.0)) throw ConfigError("generate: f0 must be positive");
    f0.assign(size_t(n_out), request.f0_hz);
  } else if (static_cast<int64_t>(f0.size()) != n_out) {
    throw ConfigError("generate: f0 track length " + std::to_string(f0.size()) +
                      " does not match output length " + std::to_string(n_out));
  }

  // Buffer capacities cover the whole request; overly low pitch is rejected
  // with the supported minimum.
  auto max_offs = max_offsets_per_layer(config, f0);
  std::vector<int64_t> caps(max_offs.size());
  for (size_t l = 0; l < max_offs.size(); ++l) {
    caps[l] = max_offs[l] + 1;
    if (caps[l] > request.max_dilation_window) {
      const auto bases = config.base_dilations();
      double max_et = double(request.max_dilation_window - 1) / double(bases[l]);
      double min_f0 = double(config.sample_rate) /
                      (double(config.dense_factor) * std::max(1.0, max_et - 0.5));
      char msg[160];
      snprintf(msg, sizeof(msg),
               "generate: required dilation window %lld exceeds the %lld-sample cap; "
               "minimum supported F0 is about %.3f Hz",
               static_cast<long long>(caps[l]),
               static_cast<long long>(request.max_dilation_window), min_f0);
      throw ConfigError(msg);
    }
  }

  // Seed with the clip when present (clean conditioning at the seed pitch).
  LayerStateBuffers state;
  if (request.seed_clip && !request.seed_clip->samples.empty()) {
    auto seed_aux = AuxTrack::constant(f0[0], int64_t(request.seed_clip->samples.size()),
                                       config.aux_dim);
    state = seed_receptive_field(params, config, &*request.seed_clip, seed_aux, caps);
  } else {
    state = seed_receptive_field(params, config, nullptr,
                                 AuxTrack::constant(f0[0], 1, config.aux_dim), caps);
  }

  const auto bases = config.base_dilations();
  const auto kinds = config.layer_kinds();
  const int nblocks = config.total_blocks();

  Workspace ws;
  ws.init(config);
  auto g = rng::make(request.rng_seed, "sample");

  GenerationResult result;
  result.clip.sample_rate = config.sample_rate;
  result.clip.samples.resize(size_t(n_out));
  result.codes.sample_rate = config.sample_rate;
  result.codes.codes.resize(size_t(n_out));
  if (capture_logits) result.logits.resize(config.quantization_levels, n_out);

  Eigen::VectorXf aux_col(config.aux_dim);

  for (int64_t i = 0; i < n_out; ++i) {
    const int64_t t = state.timeline + i;
    const int et = config.has_adaptive()
                       ? model::compute_dilation_factor(f0[size_t(i)],
                                                        double(config.sample_rate),
                                                        config.dense_factor)
                       : 1;
    aux_col.setZero();
    aux_col[0] = float(f0[size_t(i)] / model::kAuxF0Scale);

    // causal layer: current input code is the previous emitted/seed code,
    // position 0 is fed the mid-scale constant.
    int s_cur = t == 0 ? 128 : state.last_code;
    ws.cur = params.causal_w0.col(s_cur);
    if (t >= 1) {
      int s_prev = t == 1 ? 128 : state.prev_code;
      if (s_prev >= 0) ws.cur += params.causal_w1.col(s_prev);
    }
    ws.cur += params.causal_b.col(0);

    ws.skip.setZero();
    for (int l = 0; l < nblocks; ++l) {
      const int64_t cap = state.capacity[size_t(l)];
      state.rings[size_t(l)].col(t % cap) = ws.cur;

      const int64_t d = kinds[size_t(l)] == model::MacroblockKind::adaptive
                            ? int64_t(et) * bases[size_t(l)]
                            : int64_t(bases[size_t(l)]);
      const int64_t src = t - d;
      if (src >= 0)
        ws.past = state.rings[size_t(l)].col(src % cap);
      else
        ws.past.setZero();

      const auto& b = params.blocks[size_t(l)];
      ws.uf = b.bf.col(0);
      ws.uf.noalias() += b.wf_c * ws.cur;
      ws.uf.noalias() += b.wf_p * ws.past;
      ws.uf.noalias() += b.vf * aux_col;
      ws.ug = b.bg.col(0);
      ws.ug.noalias() += b.wg_c * ws.cur;
      ws.ug.noalias() += b.wg_p * ws.past;
      ws.ug.noalias() += b.vg * aux_col;
      ws.z = ws.uf.array().tanh() * ws.ug.array().logistic();

      ws.skip += b.b_skip.col(0);
      ws.skip.noalias() += b.w_skip * ws.z;

      ws.past = b.b_res.col(0);  // reuse as residual mix scratch
      ws.past.noalias() += b.w_res * ws.z;
      ws.cur += ws.past;
    }

    ws.h2 = params.mid_b.col(0);
    ws.h2.noalias() += params.mid_w * ws.skip.cwiseMax(0.0f);
    ws.logits = params.out_b.col(0);
    ws.logits.noalias() += params.out_w * ws.h2.cwiseMax(0.0f);
    if (capture_logits) result.logits.col(i) = ws.logits;

    int code = sample_code(ws.logits, request.mode, request.temperature, g);
    result.codes.codes[size_t(i)] = uint8_t(code);
    result.clip.samples[size_t(i)] = float(signal::mulaw_decode_sample(uint8_t(code)));
    state.prev_code = state.last_code;
    state.last_code = code;
  }
  state.timeline += n_out;
  return result;
}

signal::AudioClip generate(const NetworkParams& params, const ModelConfig& config,
                           const GenerationRequest& request) {
  return generate_detailed(params, config, request, false).clip;
}

}  // namespace qpnet::sampler
