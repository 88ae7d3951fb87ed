#include "qpnet/model.hpp"

#include <cmath>

#include "qpnet/rng.hpp"

namespace qpnet::model {

void ModelConfig::validate() const {
  if (macroblocks.empty()) throw ConfigError("ModelConfig: at least one macroblock required");
  for (const auto& mb : macroblocks) {
    if (mb.chunks < 1) throw ConfigError("ModelConfig: chunks must be >= 1");
    if (mb.blocks_per_chunk < 1 || mb.blocks_per_chunk > 30)
      throw ConfigError("ModelConfig: blocks_per_chunk must be in [1,30]");
  }
  if (residual_channels < 1 || gate_channels < 1 || skip_channels < 1 || output_mid_channels < 1)
    throw ConfigError("ModelConfig: channel counts must be >= 1");
  if (dense_factor < 1) throw ConfigError("ModelConfig: dense_factor must be >= 1");
  if (aux_dim < 1) throw ConfigError("ModelConfig: aux_dim must be >= 1");
  if (sample_rate < 1) throw ConfigError("ModelConfig: sample_rate must be positive");
  if (quantization_levels != 256)
    throw ConfigError("ModelConfig: quantization_levels must be 256 (8-bit mu-law)");
}

int ModelConfig::total_blocks() const {
  int n = 0;
  for (const auto& mb : macroblocks) n += mb.chunks * mb.blocks_per_chunk;
  return n;
}

std::vector<int> ModelConfig::base_dilations() const {
  std::vector<int> dil;
  for (const auto& mb : macroblocks)
    for (int c = 0; c < mb.chunks; ++c)
      for (int b = 0; b < mb.blocks_per_chunk; ++b) dil.push_back(1 << b);
  return dil;
}

std::vector<MacroblockKind> ModelConfig::layer_kinds() const {
  std::vector<MacroblockKind> kinds;
  for (const auto& mb : macroblocks)
    for (int i = 0; i < mb.chunks * mb.blocks_per_chunk; ++i) kinds.push_back(mb.kind);
  return kinds;
}

bool ModelConfig::has_adaptive() const {
  for (const auto& mb : macroblocks)
    if (mb.kind == MacroblockKind::adaptive) return true;
  return false;
}

ModelConfig standard_config(const std::string& name, const std::string& profile,
                            int dense_factor) {
  ModelConfig cfg;
  if (profile == "desk") {
    cfg.residual_channels = cfg.gate_channels = cfg.skip_channels = 32;
    cfg.output_mid_channels = 16;
  } else if (profile == "paper") {
    cfg.residual_channels = cfg.gate_channels = cfg.skip_channels = 128;
    cfg.output_mid_channels = 64;
  } else {
    throw ConfigError("standard_config: unknown profile '" + profile + "' (desk|paper)");
  }
  cfg.dense_factor = dense_factor;

  if (name == "WNf") {
    cfg.macroblocks = {{MacroblockKind::fixed, 3, 10}};
  } else if (name == "WNc") {
    cfg.macroblocks = {{MacroblockKind::fixed, 4, 4}};
  } else if (name == "QPNet") {
    cfg.macroblocks = {{MacroblockKind::fixed, 3, 4}, {MacroblockKind::adaptive, 1, 4}};
  } else if (name == "rQPNet") {
    cfg.macroblocks = {{MacroblockKind::adaptive, 1, 4}, {MacroblockKind::fixed, 3, 4}};
  } else if (name == "pQPNet") {
    cfg.macroblocks = {{MacroblockKind::adaptive, 4, 4}};
  } else {
    throw ConfigError("standard_config: unknown model '" + name +
                      "' (WNf|WNc|QPNet|rQPNet|pQPNet)");
  }
  cfg.validate();
  return cfg;
}

bool is_standard_model_name(const std::string& name) {
  return name == "WNf" || name == "WNc" || name == "QPNet" || name == "rQPNet" ||
         name == "pQPNet";
}

AuxTrack AuxTrack::constant(double f0_hz, int64_t n, int aux_dim) {
  AuxTrack aux;
  aux.f0.assign(static_cast<size_t>(n), f0_hz);
  aux.voiced.assign(static_cast<size_t>(n), 1);
  aux.conditioning = Mat<float>::Zero(aux_dim, n);
  aux.conditioning.row(0).setConstant(static_cast<float>(f0_hz / kAuxF0Scale));
  return aux;
}

int compute_dilation_factor(double f0_hz, double sample_rate_hz, int dense_factor) {
  if (!(f0_hz > 0.0))
    throw DataError("compute_dilation_factor: non-positive f0 (interpolate unvoiced gaps first)");
  if (!(sample_rate_hz > 0.0) || dense_factor < 1)
    throw ConfigError("compute_dilation_factor: invalid sample rate or dense factor");
  double ratio = sample_rate_hz / (f0_hz * double(dense_factor));
  double rounded = std::floor(ratio + 0.5);  // round half up
  if (rounded < 1.0) return 1;
  if (rounded > 2.0e9) throw ConfigError("compute_dilation_factor: dilation factor overflow");
  return static_cast<int>(rounded);
}

std::vector<double> interpolate_f0(std::span<const double> f0, std::span<const uint8_t> voiced) {
  if (f0.size() != voiced.size()) throw DataError("interpolate_f0: length mismatch");
  if (f0.empty()) throw DataError("interpolate_f0: empty track");
  const int64_t n = static_cast<int64_t>(f0.size());

  int64_t first = -1, last = -1;
  for (int64_t i = 0; i < n; ++i) {
    if (voiced[static_cast<size_t>(i)]) {
      if (!(f0[static_cast<size_t>(i)] > 0.0))
        throw DataError("interpolate_f0: voiced sample with non-positive f0");
      if (first < 0) first = i;
      last = i;
    }
  }
  if (first < 0) throw DataError("interpolate_f0: all-unvoiced track");

  std::vector<double> out(f0.begin(), f0.end());
  for (int64_t i = 0; i < first; ++i) out[static_cast<size_t>(i)] = f0[static_cast<size_t>(first)];
  for (int64_t i = last + 1; i < n; ++i) out[static_cast<size_t>(i)] = f0[static_cast<size_t>(last)];

  int64_t prev = first;
  for (int64_t i = first + 1; i <= last; ++i) {
    if (!voiced[static_cast<size_t>(i)]) continue;
    if (i > prev + 1) {
      double lo = f0[static_cast<size_t>(prev)], hi = f0[static_cast<size_t>(i)];
      for (int64_t t = prev + 1; t < i; ++t)
        out[static_cast<size_t>(t)] = lo + (hi - lo) * double(t - prev) / double(i - prev);
    }
    prev = i;
  }
  return out;
}

DilationPlan build_dilation_plan(const ModelConfig& config, const AuxTrack& aux) {
  config.validate();
  const int64_t n = aux.length();
  if (n < 1) throw DataError("build_dilation_plan: empty aux track");

  std::vector<int> et;
  if (config.has_adaptive()) {
    et.resize(static_cast<size_t>(n));
    for (int64_t t = 0; t < n; ++t)
      et[static_cast<size_t>(t)] = compute_dilation_factor(
          aux.f0[static_cast<size_t>(t)], double(config.sample_rate), config.dense_factor);
  }

  const auto bases = config.base_dilations();
  const auto kinds = config.layer_kinds();
  DilationPlan plan;
  plan.offsets.resize(bases.size());
  for (size_t l = 0; l < bases.size(); ++l) {
    auto& row = plan.offsets[l];
    row.resize(static_cast<size_t>(n));
    if (kinds[l] == MacroblockKind::fixed) {
      std::fill(row.begin(), row.end(), bases[l]);
    } else {
      for (int64_t t = 0; t < n; ++t)
        row[static_cast<size_t>(t)] = et[static_cast<size_t>(t)] * bases[l];
    }
  }
  return plan;
}

int64_t receptive_field_length(const ModelConfig& config) {
  config.validate();
  int64_t total = 1;  // causal input layer, kernel width 2
  for (const auto& mb : config.macroblocks)
    total += int64_t(mb.chunks) * ((int64_t(1) << mb.blocks_per_chunk) - 1);
  return total;
}

int64_t effective_receptive_field_length(const ModelConfig& config, const AuxTrack& aux,
                                         int64_t t) {
  config.validate();
  if (t < 0 || t >= aux.length())
    throw DataError("effective_receptive_field_length: sample index out of range");
  int64_t total = 1;
  for (const auto& mb : config.macroblocks) {
    int64_t span = int64_t(mb.chunks) * ((int64_t(1) << mb.blocks_per_chunk) - 1);
    if (mb.kind == MacroblockKind::adaptive) {
      span *= compute_dilation_factor(aux.f0[static_cast<size_t>(t)], double(config.sample_rate),
                                      config.dense_factor);
    }
    total += span;
  }
  return total;
}

// ---- parameters ------------------------------------------------------------

template <typename S>
NetworkParamsT<S> zero_params(const ModelConfig& cfg) {
  const int r = cfg.residual_channels, g = cfg.gate_channels, s = cfg.skip_channels;
  const int m = cfg.output_mid_channels, a = cfg.aux_dim, q = cfg.quantization_levels;
  NetworkParamsT<S> p;
  p.causal_w0 = Mat<S>::Zero(r, q);
  p.causal_w1 = Mat<S>::Zero(r, q);
  p.causal_b = Mat<S>::Zero(r, 1);
  p.blocks.resize(static_cast<size_t>(cfg.total_blocks()));
  for (auto& blk : p.blocks) {
    blk.wf_c = Mat<S>::Zero(g, r);
    blk.wf_p = Mat<S>::Zero(g, r);
    blk.vf = Mat<S>::Zero(g, a);
    blk.bf = Mat<S>::Zero(g, 1);
    blk.wg_c = Mat<S>::Zero(g, r);
    blk.wg_p = Mat<S>::Zero(g, r);
    blk.vg = Mat<S>::Zero(g, a);
    blk.bg = Mat<S>::Zero(g, 1);
    blk.w_res = Mat<S>::Zero(r, g);
    blk.b_res = Mat<S>::Zero(r, 1);
    blk.w_skip = Mat<S>::Zero(s, g);
    blk.b_skip = Mat<S>::Zero(s, 1);
  }
  p.mid_w = Mat<S>::Zero(m, s);
  p.mid_b = Mat<S>::Zero(m, 1);
  p.out_w = Mat<S>::Zero(q, m);
  p.out_b = Mat<S>::Zero(q, 1);
  return p;
}

namespace {

bool is_bias_name(const std::string& name) {
  auto dot = name.rfind('.');
  std::string leafname = dot == std::string::npos ? name : name.substr(dot + 1);
  return leafname == "b" || leafname == "bf" || leafname == "bg" || leafname == "b_res" ||
         leafname == "b_skip" || leafname == "mid_b" || leafname == "out_b";
}

}  // namespace

template <typename S>
std::vector<Mat<S>*> NetworkParamsT<S>::buffer_ptrs() {
  std::vector<Mat<S>*> out;
  for_each_buffer([&out](const std::string&, Mat<S>& m) { out.push_back(&m); });
  return out;
}

template <typename S>
int64_t NetworkParamsT<S>::total_values() const {
  int64_t n = 0;
  for_each_buffer([&n](const std::string&, const Mat<S>& m) { n += m.size(); });
  return n;
}

template <typename S>
NetworkParamsT<S> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  NetworkParamsT<S> p = zero_params<S>(cfg);
  p.for_each_buffer([&](const std::string& name, Mat<S>& mat) {
    if (is_bias_name(name)) return;       // biases start at zero
    if (name == "head.out_w") return;     // zero head -> uniform initial distribution
    double sigma;
    if (name == "causal.w0" || name == "causal.w1") {
      sigma = std::sqrt(0.5);  // one-hot input: effective fan-in is the two taps
    } else {
      sigma = std::sqrt(2.0 / double(mat.rows() + mat.cols()));
    }
    auto g = rng::make(seed, name);
    std::normal_distribution<double> dist(0.0, sigma);
    for (Eigen::Index j = 0; j < mat.cols(); ++j)
      for (Eigen::Index i = 0; i < mat.rows(); ++i) mat(i, j) = static_cast<S>(dist(g));
  });
  return p;
}

int64_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t r = cfg.residual_channels, g = cfg.gate_channels, s = cfg.skip_channels;
  const int64_t m = cfg.output_mid_channels, a = cfg.aux_dim, q = cfg.quantization_levels;
  int64_t causal = 2 * r * q + r;
  int64_t per_block = 2 * (2 * g * r + g * a + g) + (r * g + r) + (s * g + s);
  int64_t head = m * s + m + q * m + q;
  return causal + per_block * cfg.total_blocks() + head;
}

// ---- forward ----------------------------------------------------------------

template <typename S>
BoundNetwork<S> bind_network(Tape<S>& tape, const NetworkParamsT<S>& params, bool trainable) {
  BoundNetwork<S> net;
  params.for_each_buffer([&](const std::string&, const Mat<S>& m) {
    net.flat.push_back(tape.leaf(m, trainable));
  });
  size_t at = 0;
  auto next = [&net, &at]() { return net.flat[at++]; };
  net.causal_w0 = next();
  net.causal_w1 = next();
  net.causal_b = next();
  net.blocks.resize(params.blocks.size());
  for (auto& blk : net.blocks) {
    blk.wf_c = next();
    blk.wf_p = next();
    blk.vf = next();
    blk.bf = next();
    blk.wg_c = next();
    blk.wg_p = next();
    blk.vg = next();
    blk.bg = next();
    blk.w_res = next();
    blk.b_res = next();
    blk.w_skip = next();
    blk.b_skip = next();
  }
  net.mid_w = next();
  net.mid_b = next();
  net.out_w = next();
  net.out_b = next();
  return net;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> residual_block_forward(Tape<S>& tape, const BoundBlock<S>& p,
                                                       Tensor<S> x, Tensor<S> aux,
                                                       std::span<const int> offsets) {
  std::vector<int> offs(offsets.begin(), offsets.end());
  auto gathered = tape.causal_gather(x, std::move(offs));

  std::vector<Tensor<S>> filter_terms = {tape.channel_mix_1x1(p.wf_c, x, p.bf),
                                         tape.channel_mix_1x1(p.wf_p, gathered),
                                         tape.channel_mix_1x1(p.vf, aux)};
  std::vector<Tensor<S>> gate_terms = {tape.channel_mix_1x1(p.wg_c, x, p.bg),
                                       tape.channel_mix_1x1(p.wg_p, gathered),
                                       tape.channel_mix_1x1(p.vg, aux)};
  auto z = tape.mul(tape.tanh(tape.add_n(std::span<const Tensor<S>>(filter_terms))),
                    tape.sigmoid(tape.add_n(std::span<const Tensor<S>>(gate_terms))));
  auto residual_out = tape.add(x, tape.channel_mix_1x1(p.w_res, z, p.b_res));
  auto skip_out = tape.channel_mix_1x1(p.w_skip, z, p.b_skip);
  return {residual_out, skip_out};
}

template <typename S>
ForwardResult<S> forward_teacher_forced(Tape<S>& tape, const BoundNetwork<S>& net,
                                        const ModelConfig& config,
                                        std::span<const uint8_t> input_codes, const AuxTrack& aux,
                                        const DilationPlan* plan, bool capture_block_inputs) {
  config.validate();
  const int64_t T = static_cast<int64_t>(input_codes.size());
  if (T < 1) throw DataError("forward_teacher_forced: empty code sequence");
  if (aux.length() != T)
    throw DataError("forward_teacher_forced: aux length " + std::to_string(aux.length()) +
                    " != code length " + std::to_string(T));
  if (aux.conditioning.rows() != config.aux_dim || aux.conditioning.cols() != T)
    throw DataError("forward_teacher_forced: conditioning shape mismatch");

  DilationPlan local;
  if (plan == nullptr) {
    local = build_dilation_plan(config, aux);
    plan = &local;
  }
  if (static_cast<int>(plan->offsets.size()) != config.total_blocks())
    throw ConfigError("forward_teacher_forced: plan layer count mismatch");

  // Teacher-forcing alignment: inputs are codes shifted right by one, with a
  // mid-scale constant at position 0; logits[:,t] then predicts codes[t].
  Mat<S> onehot = Mat<S>::Zero(config.quantization_levels, T);
  onehot(128, 0) = S(1);
  for (int64_t t = 1; t < T; ++t) onehot(input_codes[static_cast<size_t>(t - 1)], t) = S(1);

  auto x_codes = tape.constant(std::move(onehot));
  auto aux_t = tape.constant(aux.conditioning.template cast<S>());

  auto causal = tape.add(
      tape.channel_mix_1x1(net.causal_w0, x_codes, net.causal_b),
      tape.channel_mix_1x1(net.causal_w1,
                           tape.causal_gather(x_codes, std::vector<int>(static_cast<size_t>(T), 1))));

  ForwardResult<S> result;
  auto x = causal;
  std::vector<Tensor<S>> skips;
  skips.reserve(net.blocks.size());
  for (size_t l = 0; l < net.blocks.size(); ++l) {
    if (capture_block_inputs) result.block_inputs.push_back(x);
    auto [res, skip] = residual_block_forward(tape, net.blocks[l], x, aux_t, plan->offsets[l]);
    x = res;
    skips.push_back(skip);
  }

  auto skip_sum = tape.add_n(std::span<const Tensor<S>>(skips));
  auto hidden = tape.relu(tape.channel_mix_1x1(net.mid_w, tape.relu(skip_sum), net.mid_b));
  result.logits = tape.channel_mix_1x1(net.out_w, hidden, net.out_b);
  return result;
}

template <typename S>
Mat<S> softmax_columns(const Mat<S>& logits) {
  Mat<S> probs(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    S m = logits.col(t).maxCoeff();
    probs.col(t) = (logits.col(t).array() - m).exp();
    probs.col(t) /= probs.col(t).sum();
  }
  return probs;
}

template struct NetworkParamsT<float>;
template struct NetworkParamsT<double>;
template NetworkParamsT<float> zero_params<float>(const ModelConfig&);
template NetworkParamsT<double> zero_params<double>(const ModelConfig&);
template NetworkParamsT<float> init_params<float>(const ModelConfig&, uint64_t);
template NetworkParamsT<double> init_params<double>(const ModelConfig&, uint64_t);
template BoundNetwork<float> bind_network<float>(Tape<float>&, const NetworkParamsT<float>&, bool);
template BoundNetwork<double> bind_network<double>(Tape<double>&, const NetworkParamsT<double>&, bool);
template std::pair<Tensor<float>, Tensor<float>> residual_block_forward<float>(
    Tape<float>&, const BoundBlock<float>&, Tensor<float>, Tensor<float>, std::span<const int>);
template std::pair<Tensor<double>, Tensor<double>> residual_block_forward<double>(
    Tape<double>&, const BoundBlock<double>&, Tensor<double>, Tensor<double>, std::span<const int>);
template ForwardResult<float> forward_teacher_forced<float>(Tape<float>&, const BoundNetwork<float>&,
                                                            const ModelConfig&,
                                                            std::span<const uint8_t>,
                                                            const AuxTrack&, const DilationPlan*,
                                                            bool);
template ForwardResult<double> forward_teacher_forced<double>(
    Tape<double>&, const BoundNetwork<double>&, const ModelConfig&, std::span<const uint8_t>,
    const AuxTrack&, const DilationPlan*, bool);
template Mat<float> softmax_columns<float>(const Mat<float>&);
template Mat<double> softmax_columns<double>(const Mat<double>&);

}  // namespace qpnet::model
