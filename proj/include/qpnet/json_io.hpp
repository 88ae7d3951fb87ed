#pragma once

#include <json.hpp>

#include "qpnet/errors.hpp"
#include "qpnet/model.hpp"
#include "qpnet/training.hpp"

namespace qpnet::model {

inline void to_json(nlohmann::json& j, const MacroblockSpec& mb) {
  j = nlohmann::json{{"kind", mb.kind == MacroblockKind::adaptive ? "adaptive" : "fixed"},
                     {"chunks", mb.chunks},
                     {"blocks_per_chunk", mb.blocks_per_chunk}};
}

inline void from_json(const nlohmann::json& j, MacroblockSpec& mb) {
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "adaptive")
    mb.kind = MacroblockKind::adaptive;
  else if (kind == "fixed")
    mb.kind = MacroblockKind::fixed;
  else
    throw ConfigError("macroblock kind must be 'fixed' or 'adaptive', got '" + kind + "'");
  mb.chunks = j.at("chunks").get<int>();
  mb.blocks_per_chunk = j.at("blocks_per_chunk").get<int>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"macroblocks", cfg.macroblocks},
                     {"residual_channels", cfg.residual_channels},
                     {"gate_channels", cfg.gate_channels},
                     {"skip_channels", cfg.skip_channels},
                     {"output_mid_channels", cfg.output_mid_channels},
                     {"dense_factor", cfg.dense_factor},
                     {"aux_dim", cfg.aux_dim},
                     {"sample_rate", cfg.sample_rate},
                     {"quantization_levels", cfg.quantization_levels}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  cfg = ModelConfig{};
  cfg.macroblocks = j.at("macroblocks").get<std::vector<MacroblockSpec>>();
  cfg.residual_channels = j.value("residual_channels", cfg.residual_channels);
  cfg.gate_channels = j.value("gate_channels", cfg.gate_channels);
  cfg.skip_channels = j.value("skip_channels", cfg.skip_channels);
  cfg.output_mid_channels = j.value("output_mid_channels", cfg.output_mid_channels);
  cfg.dense_factor = j.value("dense_factor", cfg.dense_factor);
  cfg.aux_dim = j.value("aux_dim", cfg.aux_dim);
  cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
  cfg.quantization_levels = j.value("quantization_levels", cfg.quantization_levels);
}

}  // namespace qpnet::model

namespace qpnet::train {

inline void from_json(const nlohmann::json& j, DatasetSpec& spec) {
  spec = DatasetSpec{};
  if (j.contains("f0_list")) {
    spec.f0_list = j.at("f0_list").get<std::vector<double>>();
  } else if (j.contains("f0_min") || j.contains("f0_max") || j.contains("f0_step")) {
    double lo = j.value("f0_min", 80.0), hi = j.value("f0_max", 400.0);
    double step = j.value("f0_step", 20.0);
    spec.f0_list.clear();
    for (double f = lo; f <= hi + 1e-9; f += step) spec.f0_list.push_back(f);
  }
  spec.utterances_per_f0 = j.value("utterances_per_f0", spec.utterances_per_f0);
  spec.seconds_per_utterance = j.value("seconds_per_utterance", spec.seconds_per_utterance);
  spec.signal_snr_db = j.value("signal_snr_db", spec.signal_snr_db);
  spec.aux_noise_amplitude = j.value("aux_noise_amplitude", spec.aux_noise_amplitude);
  spec.sine_amplitude = j.value("sine_amplitude", spec.sine_amplitude);
  spec.sample_rate = j.value("sample_rate", spec.sample_rate);
  spec.seed = j.value("seed", spec.seed);
}

inline void from_json(const nlohmann::json& j, TrainingConfig& tc) {
  tc = TrainingConfig{};
  tc.learning_rate = j.value("learning_rate", tc.learning_rate);
  tc.batch_size = j.value("batch_size", tc.batch_size);
  tc.batch_length_samples = j.value("batch_length_samples", tc.batch_length_samples);
  tc.epochs = j.value("epochs", tc.epochs);
  tc.max_steps = j.value("max_steps", tc.max_steps);
  tc.checkpoint_every_steps = j.value("checkpoint_every_steps", tc.checkpoint_every_steps);
  tc.seed = j.value("seed", tc.seed);
}

}  // namespace qpnet::train

