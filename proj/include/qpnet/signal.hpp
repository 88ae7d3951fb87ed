#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qpnet/errors.hpp"

namespace qpnet::signal {

// Continuous waveform in [-1,1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 22050;
};

// 8-bit mu-law code sequence.
struct QuantizedClip {
  std::vector<uint8_t> codes;
  int sample_rate = 22050;
};

// y = sign(x) ln(1+255|x|)/ln 256, code = clamp(floor((y+1)*128), 0, 255).
uint8_t mulaw_encode_sample(double x);
// y = (code+0.5)/128 - 1, x = sign(y)((256^|y|)-1)/255; decodes at bin centers
// so encode(decode(c)) == c for every code.
double mulaw_decode_sample(uint8_t code);

QuantizedClip mulaw_encode(const AudioClip& clip);
AudioClip mulaw_decode(const QuantizedClip& q);

// samples[t] = amplitude * sin(2*pi*f0*t/fs + phase)
AudioClip synth_sinusoid(double f0_hz, double seconds, int sample_rate, double phase,
                         double amplitude);
AudioClip synth_sinusoid_n(double f0_hz, int64_t n_samples, int sample_rate, double phase,
                           double amplitude);

// Adds seeded white Gaussian noise scaled to the requested SNR, then rescales
// if the mix exceeds full scale. +inf target returns the input unchanged.
AudioClip add_noise_snr(const AudioClip& clip, double target_snr_db, uint64_t rng_seed);

// One-sided Hann-windowed periodogram of the full clip. Power is normalized
// so that sum(power) equals the windowed-signal energy (Parseval).
struct Psd {
  std::vector<double> freq_hz;
  std::vector<double> power;
  int sample_rate = 0;
};
Psd periodogram(const AudioClip& clip);

// Frequency of the strongest bin at or above the search floor, refined by
// 3-point parabolic interpolation on log power.
double psd_peak_hz(const Psd& psd, double search_floor_hz = 5.0);

struct SnrEstimate {
  double snr_db = 0.0;
  bool tone_detected = true;
};
// Least-squares fit of a single sinusoid at the PSD peak (or the hint);
// SNR = 10 log10(P_fit / P_residual), clamped to +-60 dB.
SnrEstimate estimate_snr(const AudioClip& clip, std::optional<double> f0_hint = std::nullopt);

// sqrt(mean((ln f_true - ln f_meas)^2)), natural log.
double log_f0_rmse(std::span<const double> true_f0, std::span<const double> measured_f0);

// RIFF/WAVE, PCM 16-bit signed little-endian, mono.
void write_wav(const AudioClip& clip, const std::string& path);
AudioClip read_wav(const std::string& path);

}  // namespace qpnet::signal
