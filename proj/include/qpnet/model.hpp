#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qpnet/tensor.hpp"

namespace qpnet::model {

using engine::Mat;
using engine::Tape;
using engine::Tensor;

// Auxiliary F0 normalization applied before conditioning enters the network
// (400 Hz = training-range maximum). Dilation factors always use raw Hz.
inline constexpr double kAuxF0Scale = 400.0;

enum class MacroblockKind { fixed, adaptive };

// A run of chunks that is uniformly fixed or pitch-adaptive. A chunk restarts
// the dilation-doubling pattern 2^0..2^(blocks-1).
struct MacroblockSpec {
  MacroblockKind kind = MacroblockKind::fixed;
  int chunks = 1;
  int blocks_per_chunk = 1;
};

struct ModelConfig {
  std::vector<MacroblockSpec> macroblocks;
  int residual_channels = 32;
  int gate_channels = 32;
  int skip_channels = 32;
  int output_mid_channels = 16;
  int dense_factor = 8;
  int aux_dim = 1;
  int sample_rate = 22050;
  int quantization_levels = 256;

  void validate() const;
  int total_blocks() const;
  // Per-layer base dilation (2^0..2^(blocks-1) restarting at each chunk) and
  // per-layer macroblock kind, in cascade order.
  std::vector<int> base_dilations() const;
  std::vector<MacroblockKind> layer_kinds() const;
  bool has_adaptive() const;
};

// Table-style presets: WNf (3x10 fixed), WNc (4x4 fixed),
// QPNet (3x4 fixed + 1x4 adaptive), rQPNet (reverse order), pQPNet (4x4 adaptive).
// Profiles: "desk" = channels 32/32/32/16, "paper" = 128/128/128/64.
ModelConfig standard_config(const std::string& name, const std::string& profile, int dense_factor);
bool is_standard_model_name(const std::string& name);

// Per-sample conditioning track. f0 is the clean per-sample pitch used for
// dilation planning; conditioning is the (possibly noisy) normalized network
// input h'.
struct AuxTrack {
  std::vector<double> f0;
  std::vector<uint8_t> voiced;
  Mat<float> conditioning;  // aux_dim x T

  int64_t length() const { return static_cast<int64_t>(f0.size()); }
  static AuxTrack constant(double f0_hz, int64_t n, int aux_dim = 1);
};

// d'[layer][t]; >= 1 everywhere. Fixed layers are constant over t.
struct DilationPlan {
  std::vector<std::vector<int>> offsets;
};

// E_t = max(1, round_half_up(fs / (f0 * a)))  (Eq.-style dilated factor).
int compute_dilation_factor(double f0_hz, double sample_rate_hz, int dense_factor);

// Linear interpolation across interior unvoiced runs; leading/trailing runs
// hold the nearest voiced value.
std::vector<double> interpolate_f0(std::span<const double> f0, std::span<const uint8_t> voiced);

DilationPlan build_dilation_plan(const ModelConfig& config, const AuxTrack& aux);

// Receptive field with every layer at unit dilation factor:
// 1 (kernel-2 causal layer) + sum over chunks of (2^blocks - 1).
int64_t receptive_field_length(const ModelConfig& config);

// Fixed-layer span plus the adaptive d' sum at sample t.
int64_t effective_receptive_field_length(const ModelConfig& config, const AuxTrack& aux, int64_t t);

// ---- parameters ------------------------------------------------------------

template <typename S>
struct BlockParamsT {
  Mat<S> wf_c, wf_p, vf, bf;  // filter branch: current tap, past tap, conditioning, bias
  Mat<S> wg_c, wg_p, vg, bg;  // gate branch
  Mat<S> w_res, b_res;
  Mat<S> w_skip, b_skip;
};

template <typename S>
struct NetworkParamsT {
  Mat<S> causal_w0, causal_w1, causal_b;  // kernel-2 causal input layer over one-hot codes
  std::vector<BlockParamsT<S>> blocks;
  Mat<S> mid_w, mid_b;  // skip sum -> ReLU -> 1x1(mid)
  Mat<S> out_w, out_b;  // -> ReLU -> 1x1(quantization levels)

  template <typename F>
  void for_each_buffer(F&& fn);
  template <typename F>
  void for_each_buffer(F&& fn) const;
  std::vector<Mat<S>*> buffer_ptrs();
  int64_t total_values() const;
};

using NetworkParams = NetworkParamsT<float>;

// All-zero buffers with the shapes the config dictates.
template <typename S>
NetworkParamsT<S> zero_params(const ModelConfig& config);

// Seeded initialization. The output head is zero so the initial predictive
// distribution is exactly uniform (loss = ln 256).
template <typename S>
NetworkParamsT<S> init_params(const ModelConfig& config, uint64_t seed);

// Closed-form trainable-value count for a config.
int64_t parameter_count(const ModelConfig& config);

// ---- differentiable forward pass -------------------------------------------

template <typename S>
struct BoundBlock {
  Tensor<S> wf_c, wf_p, vf, bf;
  Tensor<S> wg_c, wg_p, vg, bg;
  Tensor<S> w_res, b_res, w_skip, b_skip;
};

template <typename S>
struct BoundNetwork {
  Tensor<S> causal_w0, causal_w1, causal_b;
  std::vector<BoundBlock<S>> blocks;
  Tensor<S> mid_w, mid_b, out_w, out_b;
  std::vector<Tensor<S>> flat;  // same order as for_each_buffer
};

template <typename S>
BoundNetwork<S> bind_network(Tape<S>& tape, const NetworkParamsT<S>& params, bool trainable);

// One gated residual block (two-tap dilated convolution at time-variant d',
// conditioning, residual and skip 1x1s). Returns (residual_out, skip_out).
template <typename S>
std::pair<Tensor<S>, Tensor<S>> residual_block_forward(Tape<S>& tape, const BoundBlock<S>& p,
                                                       Tensor<S> x, Tensor<S> aux,
                                                       std::span<const int> offsets);

template <typename S>
struct ForwardResult {
  Tensor<S> logits;                     // quantization_levels x T
  std::vector<Tensor<S>> block_inputs;  // captured per-block input streams (optional)
};

// Teacher-forced forward: codes are shifted right internally (position 0 is
// fed code 128), so logits[:,t] depends only on codes <= t-1 and the training
// target at t is codes[t]. `plan` may be null to derive it from `aux`.
template <typename S>
ForwardResult<S> forward_teacher_forced(Tape<S>& tape, const BoundNetwork<S>& net,
                                        const ModelConfig& config,
                                        std::span<const uint8_t> input_codes, const AuxTrack& aux,
                                        const DilationPlan* plan = nullptr,
                                        bool capture_block_inputs = false);

// Column-wise softmax utility (not autodiff; used by the sampler and tests).
template <typename S>
Mat<S> softmax_columns(const Mat<S>& logits);

template <typename S>
template <typename F>
void NetworkParamsT<S>::for_each_buffer(F&& fn) {
  fn("causal.w0", causal_w0);
  fn("causal.w1", causal_w1);
  fn("causal.b", causal_b);
  for (size_t k = 0; k < blocks.size(); ++k) {
    const std::string base = "block" + std::to_string(k) + ".";
    auto& blk = blocks[k];
    fn(base + "wf_c", blk.wf_c);
    fn(base + "wf_p", blk.wf_p);
    fn(base + "vf", blk.vf);
    fn(base + "bf", blk.bf);
    fn(base + "wg_c", blk.wg_c);
    fn(base + "wg_p", blk.wg_p);
    fn(base + "vg", blk.vg);
    fn(base + "bg", blk.bg);
    fn(base + "w_res", blk.w_res);
    fn(base + "b_res", blk.b_res);
    fn(base + "w_skip", blk.w_skip);
    fn(base + "b_skip", blk.b_skip);
  }
  fn("head.mid_w", mid_w);
  fn("head.mid_b", mid_b);
  fn("head.out_w", out_w);
  fn("head.out_b", out_b);
}

template <typename S>
template <typename F>
void NetworkParamsT<S>::for_each_buffer(F&& fn) const {
  const_cast<NetworkParamsT<S>*>(this)->for_each_buffer(
      [&fn](const std::string& name, Mat<S>& m) { fn(name, static_cast<const Mat<S>&>(m)); });
}

extern template struct NetworkParamsT<float>;
extern template struct NetworkParamsT<double>;
extern template NetworkParamsT<float> zero_params<float>(const ModelConfig&);
extern template NetworkParamsT<double> zero_params<double>(const ModelConfig&);
extern template NetworkParamsT<float> init_params<float>(const ModelConfig&, uint64_t);
extern template NetworkParamsT<double> init_params<double>(const ModelConfig&, uint64_t);
extern template BoundNetwork<float> bind_network<float>(Tape<float>&, const NetworkParamsT<float>&, bool);
extern template BoundNetwork<double> bind_network<double>(Tape<double>&, const NetworkParamsT<double>&, bool);
extern template std::pair<Tensor<float>, Tensor<float>> residual_block_forward<float>(
    Tape<float>&, const BoundBlock<float>&, Tensor<float>, Tensor<float>, std::span<const int>);
extern template std::pair<Tensor<double>, Tensor<double>> residual_block_forward<double>(
    Tape<double>&, const BoundBlock<double>&, Tensor<double>, Tensor<double>, std::span<const int>);
extern template ForwardResult<float> forward_teacher_forced<float>(
    Tape<float>&, const BoundNetwork<float>&, const ModelConfig&, std::span<const uint8_t>,
    const AuxTrack&, const DilationPlan*, bool);
extern template ForwardResult<double> forward_teacher_forced<double>(
    Tape<double>&, const BoundNetwork<double>&, const ModelConfig&, std::span<const uint8_t>,
    const AuxTrack&, const DilationPlan*, bool);
extern template Mat<float> softmax_columns<float>(const Mat<float>&);
extern template Mat<double> softmax_columns<double>(const Mat<double>&);

}  // namespace qpnet::model
