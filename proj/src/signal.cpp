#include "qpnet/signal.hpp"

#include <unsupported/Eigen/FFT>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

#include "qpnet/rng.hpp"

namespace qpnet::signal {

namespace {

constexpr double kLn256 = 5.545177444479562;  // ln(256)
constexpr double kPi = std::numbers::pi;

double mean_power(std::span<const float> x) {
  double acc = 0.0;
  for (float v : x) acc += double(v) * double(v);
  return x.empty() ? 0.0 : acc / double(x.size());
}

}  // namespace

uint8_t mulaw_encode_sample(double x) {
  if (!(x >= -1.0 && x <= 1.0))
    throw DataError("mulaw_encode: sample " + std::to_string(x) + " outside [-1,1]");
  double y = std::copysign(std::log1p(255.0 * std::abs(x)) / kLn256, x);
  double c = std::floor((y + 1.0) * 128.0);
  return static_cast<uint8_t>(std::clamp(c, 0.0, 255.0));
}

double mulaw_decode_sample(uint8_t code) {
  double y = (double(code) + 0.5) / 128.0 - 1.0;
  return std::copysign((std::exp(kLn256 * std::abs(y)) - 1.0) / 255.0, y);
}

QuantizedClip mulaw_encode(const AudioClip& clip) {
  QuantizedClip q;
  q.sample_rate = clip.sample_rate;
  q.codes.reserve(clip.samples.size());
  for (float s : clip.samples) {
    if (!std::isfinite(s)) throw DataError("mulaw_encode: non-finite sample");
    q.codes.push_back(mulaw_encode_sample(double(s)));
  }
  return q;
}

AudioClip mulaw_decode(const QuantizedClip& q) {
  AudioClip clip;
  clip.sample_rate = q.sample_rate;
  clip.samples.reserve(q.codes.size());
  for (uint8_t c : q.codes) clip.samples.push_back(static_cast<float>(mulaw_decode_sample(c)));
  return clip;
}

AudioClip synth_sinusoid_n(double f0_hz, int64_t n_samples, int sample_rate, double phase,
                           double amplitude) {
  if (!(f0_hz > 0.0) || f0_hz >= double(sample_rate) / 2.0)
    throw ConfigError("synth_sinusoid: f0 " + std::to_string(f0_hz) +
                      " Hz must lie in (0, Nyquist) for fs=" + std::to_string(sample_rate));
  if (!(amplitude > 0.0 && amplitude <= 1.0))
    throw ConfigError("synth_sinusoid: amplitude must be in (0,1]");
  if (n_samples < 0) throw ConfigError("synth_sinusoid: negative length");
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(static_cast<size_t>(n_samples));
  const double w = 2.0 * kPi * f0_hz / double(sample_rate);
  for (int64_t t = 0; t < n_samples; ++t)
    clip.samples[static_cast<size_t>(t)] = static_cast<float>(amplitude * std::sin(w * double(t) + phase));
  return clip;
}

AudioClip synth_sinusoid(double f0_hz, double seconds, int sample_rate, double phase,
                         double amplitude) {
  if (!(seconds > 0.0)) throw ConfigError("synth_sinusoid: seconds must be positive");
  return synth_sinusoid_n(f0_hz, llround(seconds * sample_rate), sample_rate, phase, amplitude);
}

AudioClip add_noise_snr(const AudioClip& clip, double target_snr_db, uint64_t rng_seed) {
  if (std::isinf(target_snr_db) && target_snr_db > 0) return clip;
  double p_sig = mean_power(clip.samples);
  if (p_sig <= 0.0) throw DataError("add_noise_snr: silent input");
  double p_noise = p_sig * std::pow(10.0, -target_snr_db / 10.0);
  double sigma = std::sqrt(p_noise);

  auto g = rng::make(rng_seed, "awgn");
  std::normal_distribution<double> n(0.0, sigma);
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.resize(clip.samples.size());
  double peak = 0.0;
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    double v = double(clip.samples[i]) + n(g);
    out.samples[i] = static_cast<float>(v);
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 1.0) {
    float inv = static_cast<float>(1.0 / peak);
    for (float& v : out.samples) v *= inv;
  }
  // float rounding at the renormalized peak can overshoot full scale by an ulp
  for (float& v : out.samples) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

Psd periodogram(const AudioClip& clip) {
  const int64_t n = static_cast<int64_t>(clip.samples.size());
  if (n < 2) throw DataError("periodogram: clip length must be >= 2");

  // Periodic Hann window over the full clip, single frame.
  std::vector<std::complex<double>> windowed(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t) {
    double w = 0.5 * (1.0 - std::cos(2.0 * kPi * double(t) / double(n)));
    windowed[static_cast<size_t>(t)] = {w * double(clip.samples[static_cast<size_t>(t)]), 0.0};
  }
  std::vector<std::complex<double>> spec(static_cast<size_t>(n));
  Eigen::FFT<double> fft;
  fft.fwd(spec, windowed);

  const int64_t half = n / 2;  // last one-sided bin index
  Psd psd;
  psd.sample_rate = clip.sample_rate;
  psd.freq_hz.resize(static_cast<size_t>(half) + 1);
  psd.power.resize(static_cast<size_t>(half) + 1);
  const double res = double(clip.sample_rate) / double(n);
  for (int64_t k = 0; k <= half; ++k) {
    double mag2 = std::norm(spec[static_cast<size_t>(k)]) / double(n);
    bool shared = (k == 0) || (n % 2 == 0 && k == half);
    psd.freq_hz[static_cast<size_t>(k)] = res * double(k);
    psd.power[static_cast<size_t>(k)] = shared ? mag2 : 2.0 * mag2;
  }
  return psd;
}

double psd_peak_hz(const Psd& psd, double search_floor_hz) {
  if (psd.power.empty()) throw MeasurementError("psd_peak_hz: empty PSD");
  size_t best = 0;
  bool found = false;
  for (size_t k = 0; k < psd.power.size(); ++k) {
    if (psd.freq_hz[k] < search_floor_hz) continue;
    if (!found || psd.power[k] > psd.power[best]) {
      best = k;
      found = true;
    }
  }
  if (!found || psd.power[best] <= 0.0)
    throw MeasurementError("psd_peak_hz: no positive peak at or above floor");

  double delta = 0.0;
  if (best > 0 && best + 1 < psd.power.size() && psd.power[best - 1] > 0.0 &&
      psd.power[best + 1] > 0.0) {
    double l = std::log(psd.power[best - 1]);
    double c = std::log(psd.power[best]);
    double r = std::log(psd.power[best + 1]);
    double denom = l - 2.0 * c + r;
    if (denom < 0.0) delta = std::clamp(0.5 * (l - r) / denom, -0.5, 0.5);
  }
  double res = psd.freq_hz.size() > 1 ? psd.freq_hz[1] - psd.freq_hz[0] : 0.0;
  return psd.freq_hz[best] + delta * res;
}

SnrEstimate estimate_snr(const AudioClip& clip, std::optional<double> f0_hint) {
  const size_t n = clip.samples.size();
  if (n < 2) throw DataError("estimate_snr: clip too short");

  double f = 0.0;
  if (f0_hint) {
    f = *f0_hint;
  } else {
    try {
      f = psd_peak_hz(periodogram(clip), 5.0);
    } catch (const MeasurementError&) {
      return {-60.0, false};
    }
  }
  if (double(n) < double(clip.sample_rate) / f)
    throw DataError("estimate_snr: clip shorter than one period of the detected tone");

  // Least-squares fit x ~ a sin(wt) + b cos(wt) + c. Normal equations, 3x3.
  const double w = 2.0 * kPi * f / double(clip.sample_rate);
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  for (size_t t = 0; t < n; ++t) {
    Eigen::Vector3d row(std::sin(w * double(t)), std::cos(w * double(t)), 1.0);
    ata += row * row.transpose();
    atb += row * double(clip.samples[t]);
  }
  Eigen::Vector3d coef = ata.ldlt().solve(atb);

  double p_fit = (coef[0] * coef[0] + coef[1] * coef[1]) / 2.0;
  double p_res = 0.0;
  for (size_t t = 0; t < n; ++t) {
    double fit = coef[0] * std::sin(w * double(t)) + coef[1] * std::cos(w * double(t)) + coef[2];
    double r = double(clip.samples[t]) - fit;
    p_res += r * r;
  }
  p_res /= double(n);

  double snr;
  if (p_res <= 0.0) {
    snr = 60.0;
  } else if (p_fit <= 0.0) {
    snr = -60.0;
  } else {
    snr = std::clamp(10.0 * std::log10(p_fit / p_res), -60.0, 60.0);
  }
  return {snr, true};
}

double log_f0_rmse(std::span<const double> true_f0, std::span<const double> measured_f0) {
  if (true_f0.size() != measured_f0.size())
    throw DataError("log_f0_rmse: length mismatch");
  if (true_f0.empty()) throw DataError("log_f0_rmse: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < true_f0.size(); ++i) {
    if (!(true_f0[i] > 0.0) || !(measured_f0[i] > 0.0))
      throw DataError("log_f0_rmse: non-positive frequency");
    double d = std::log(true_f0[i]) - std::log(measured_f0[i]);
    acc += d * d;
  }
  return std::sqrt(acc / double(true_f0.size()));
}

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& f, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32(std::span<const unsigned char> d, size_t at) {
  return uint32_t(d[at]) | (uint32_t(d[at + 1]) << 8) | (uint32_t(d[at + 2]) << 16) |
         (uint32_t(d[at + 3]) << 24);
}

uint16_t get_u16(std::span<const unsigned char> d, size_t at) {
  return uint16_t(uint32_t(d[at]) | (uint32_t(d[at + 1]) << 8));
}

}  // namespace

void write_wav(const AudioClip& clip, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_wav: cannot open " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  f.write("RIFF", 4);
  put_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(f, 16);
  put_u16(f, 1);  // PCM
  put_u16(f, 1);  // mono
  put_u32(f, static_cast<uint32_t>(clip.sample_rate));
  put_u32(f, static_cast<uint32_t>(clip.sample_rate * 2));
  put_u16(f, 2);   // block align
  put_u16(f, 16);  // bits
  f.write("data", 4);
  put_u32(f, data_bytes);
  for (float s : clip.samples) {
    long q = lroundf(s * 32767.0f);
    int16_t v = static_cast<int16_t>(std::clamp(q, -32768l, 32767l));
    unsigned char b[2] = {static_cast<unsigned char>(uint16_t(v)),
                          static_cast<unsigned char>(uint16_t(v) >> 8)};
    f.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!f) throw IoError("write_wav: write failed for " + path);
}

AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path);
  std::vector<unsigned char> d((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
  if (d.size() < 12 || std::memcmp(d.data(), "RIFF", 4) != 0 ||
      std::memcmp(d.data() + 8, "WAVE", 4) != 0)
    throw IoError("read_wav: " + path + ": missing RIFF/WAVE header at offset 0");

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  size_t at = 12;
  while (at + 8 <= d.size()) {
    char id[5] = {0};
    std::memcpy(id, d.data() + at, 4);
    uint32_t sz = get_u32(d, at + 4);
    size_t body = at + 8;
    if (body + sz > d.size())
      throw IoError("read_wav: " + path + ": chunk '" + id + "' truncated at offset " +
                    std::to_string(at));
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (sz < 16) throw IoError("read_wav: " + path + ": fmt chunk too small");
      format = get_u16(d, body);
      channels = get_u16(d, body + 2);
      rate = get_u32(d, body + 4);
      bits = get_u16(d, body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt)
        throw IoError("read_wav: " + path + ": missing fmt chunk before data");
      if (format != 1 || channels != 1 || bits != 16)
        throw IoError("read_wav: " + path + ": unsupported encoding (need PCM16 mono), got format=" +
                      std::to_string(format) + " channels=" + std::to_string(channels) +
                      " bits=" + std::to_string(bits));
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      clip.samples.resize(sz / 2);
      for (size_t i = 0; i < clip.samples.size(); ++i) {
        int16_t v = static_cast<int16_t>(get_u16(d, body + 2 * i));
        clip.samples[i] = static_cast<float>(v) / 32767.0f;
      }
      return clip;
    }
    at = body + sz + (sz % 2);  // chunks are word-aligned
  }
  throw IoError("read_wav: " + path + ": missing " + std::string(have_fmt ? "data" : "fmt") +
                " chunk (file ends at offset " + std::to_string(d.size()) + ")");
}

}  // namespace qpnet::signal
