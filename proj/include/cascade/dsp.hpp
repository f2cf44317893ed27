#pragma once

#include <complex>
#include <string>
#include <vector>

#include "cascade/error.hpp"

namespace cascade {

struct DspConfig {
  double sample_rate = 16000.0;
  int window_length = 512;
  int hop_length = 128;
  int fft_size = 512;
  int mel_bins = 32;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;

  int freq_bins() const { return fft_size / 2 + 1; }
  // Reflect padding applied by melspec so a clip of k*hop samples maps to
  // exactly k frames (window == fft_size).
  int center_pad() const { return (fft_size - hop_length) / 2; }
  void validate() const;

  static DspConfig desk();   // 32 mel bins, 128-frame clips (16384 samples)
  static DspConfig paper();  // 128 mel bins, 512-frame clips (65536 samples)
};

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
  double rms() const;
  double peak() const;
  // Scales down so |sample| <= 1; quiet signals are left untouched.
  void limit_peak();
};

struct MelSpectrogram {
  std::vector<double> values;  // row-major [mel_bins x frames]
  int mel_bins = 0;
  int frames = 0;
  DspConfig config;

  double& at(int m, int t) { return values[static_cast<size_t>(m) * frames + t]; }
  double at(int m, int t) const { return values[static_cast<size_t>(m) * frames + t]; }
};

// Complex STFT, row-major [bins x frames], bins = fft_size/2 + 1.
struct Spectrogram {
  std::vector<std::complex<double>> values;
  int bins = 0;
  int frames = 0;

  std::complex<double>& at(int b, int t) { return values[static_cast<size_t>(b) * frames + t]; }
  std::complex<double> at(int b, int t) const {
    return values[static_cast<size_t>(b) * frames + t];
  }
};

// Periodic Hann window: exact constant-overlap-add of w^2 at hop = n/4.
std::vector<double> hann_periodic(int n);

// Max deviation of sum_k w^2(n - k*hop) from its interior mean, relative.
double cola_deviation(const DspConfig& cfg);

Spectrogram stft(const Waveform& w, const DspConfig& cfg);
Waveform istft(const Spectrogram& spec, const DspConfig& cfg);

// Triangular filters, peak 1, centers uniform on the mel scale.
// Row-major [mel_bins x freq_bins].
std::vector<double> mel_filterbank(const DspConfig& cfg);

// log(max(filterbank * |stft(pad(w))|, log_floor)) with center padding.
MelSpectrogram melspec(const Waveform& w, const DspConfig& cfg);

struct GriffinLimResult {
  Waveform waveform;
  std::vector<double> objective;  // ||  |STFT(x_i)| - M ||^2 per iteration
};

GriffinLimResult griffin_lim(const MelSpectrogram& mel, int iterations, const DspConfig& cfg);

// Median over frames of the per-frame minimum band value; the noise-floor
// statistic used by steering reports and dataset checks.
double noise_floor_metric(const MelSpectrogram& mel);

// Affine map between log-mel values and the roughly unit-scale space the
// diffusion models operate in. Center is half the default log floor.
inline constexpr double kMelNormCenter = -5.75;
inline constexpr double kMelNormScale = 4.0;
inline double mel_to_unit(double logmel) { return (logmel - kMelNormCenter) / kMelNormScale; }
inline double unit_to_mel(double v) { return v * kMelNormScale + kMelNormCenter; }

// RIFF PCM 16-bit signed little-endian mono.
void write_wav(const std::string& path, const Waveform& w);
Waveform read_wav(const std::string& path);

// 8-bit PGM, min-max normalized, low mel bin at the bottom row.
void write_pgm(const std::string& path, const MelSpectrogram& mel);
// Plain-text CSV, one row per mel bin.
void write_csv(const std::string& path, const MelSpectrogram& mel);

}  // namespace cascade
