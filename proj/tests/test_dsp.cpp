#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>

#include "cascade/dsp.hpp"
#include "cascade/rng.hpp"
#include "testutil.hpp"

using namespace cascade;

namespace {

Waveform sine(double freq, int64_t len, double sr, double amp = 0.5) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<size_t>(len));
  for (int64_t n = 0; n < len; ++n) {
    w.samples[static_cast<size_t>(n)] =
        amp * std::sin(2.0 * 3.14159265358979323846 * freq * static_cast<double>(n) / sr);
  }
  return w;
}

Waveform noise(int64_t len, uint64_t seed, double amp = 0.3) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(static_cast<size_t>(len));
  for (auto& s : w.samples) s = amp * rng.normal();
  return w;
}

}  // namespace

TEST_CASE("stft of zero signal is all zeros; short signal errors") {
  DspConfig cfg = DspConfig::desk();
  Waveform w;
  w.samples.assign(4096, 0.0);
  Spectrogram s = stft(w, cfg);
  CHECK(s.bins == cfg.freq_bins());
  for (const auto& v : s.values) CHECK(std::abs(v) == 0.0);

  Waveform shorty;
  shorty.samples.assign(100, 0.0);
  CHECK_THROWS_AS(stft(shorty, cfg), DimensionError);
}

TEST_CASE("stft of a bin-centered sine peaks at that bin in every interior frame") {
  DspConfig cfg = DspConfig::desk();
  const int bin = 40;
  const double freq = static_cast<double>(bin) * cfg.sample_rate / cfg.fft_size;
  Spectrogram s = stft(sine(freq, 8192, cfg.sample_rate), cfg);
  for (int t = 1; t < s.frames - 1; ++t) {
    int argmax = 0;
    double best = -1.0;
    for (int b = 0; b < s.bins; ++b) {
      if (std::abs(s.at(b, t)) > best) {
        best = std::abs(s.at(b, t));
        argmax = b;
      }
    }
    CHECK(argmax == bin);
  }
}

TEST_CASE("stft energy obeys Parseval with COLA normalization within 1%") {
  DspConfig cfg = DspConfig::desk();
  Waveform w = noise(65536, 3);
  Spectrogram s = stft(w, cfg);
  double lhs = 0.0;
  for (int t = 0; t < s.frames; ++t) {
    lhs += std::norm(s.at(0, t)) + std::norm(s.at(s.bins - 1, t));
    for (int b = 1; b < s.bins - 1; ++b) lhs += 2.0 * std::norm(s.at(b, t));
  }
  lhs /= static_cast<double>(cfg.fft_size);
  double rhs = 0.0;
  for (double v : w.samples) rhs += v * v;
  rhs *= 1.5;  // hann^2 overlap constant at hop = window/4
  CHECK(std::fabs(lhs / rhs - 1.0) < 0.01);
}

TEST_CASE("COLA envelope for hop=window/4 is constant to 1e-9") {
  DspConfig cfg = DspConfig::desk();
  const auto w = hann_periodic(cfg.window_length);
  for (int n = 0; n < cfg.hop_length; ++n) {
    double acc = 0.0;
    for (int pos = n; pos < cfg.window_length; pos += cfg.hop_length) acc += w[pos] * w[pos];
    CHECK(std::fabs(acc - 1.5) < 1e-9);
  }
  CHECK(cola_deviation(cfg) < 1e-9);
}

TEST_CASE("istft round-trip reaches > 60 dB interior SNR") {
  DspConfig cfg = DspConfig::desk();
  Waveform x = noise(8192, 17);
  Waveform y = istft(stft(x, cfg), cfg);
  double sig = 0.0, err = 0.0;
  for (int64_t n = cfg.window_length; n < 8192 - cfg.window_length; ++n) {
    sig += x.samples[n] * x.samples[n];
    const double d = x.samples[n] - y.samples[n];
    err += d * d;
  }
  const double snr = 10.0 * std::log10(sig / std::max(err, 1e-300));
  CHECK(snr > 60.0);
}

TEST_CASE("istft of zero spectrogram is silent; istft is linear") {
  DspConfig cfg = DspConfig::desk();
  Spectrogram z;
  z.bins = cfg.freq_bins();
  z.frames = 16;
  z.values.assign(static_cast<size_t>(z.bins) * z.frames, {0.0, 0.0});
  Waveform w = istft(z, cfg);
  for (double s : w.samples) CHECK(s == 0.0);

  Spectrogram s1 = stft(noise(4096, 5), cfg);
  Spectrogram s2 = s1;
  for (auto& v : s2.values) v *= 2.5;
  Waveform a = istft(s1, cfg);
  Waveform b = istft(s2, cfg);
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(std::fabs(b.samples[i] - 2.5 * a.samples[i]) < 1e-6);
  }
}

TEST_CASE("istft rejects non-COLA hop/window configuration") {
  DspConfig cfg = DspConfig::desk();
  cfg.hop_length = 192;
  Spectrogram z;
  z.bins = cfg.freq_bins();
  z.frames = 4;
  z.values.assign(static_cast<size_t>(z.bins) * z.frames, {0.0, 0.0});
  CHECK_THROWS_AS(istft(z, cfg), ConfigError);
}

TEST_CASE("mel filterbank: positive row sums, ascending supports, paper shape") {
  DspConfig cfg = DspConfig::desk();
  const auto fb = mel_filterbank(cfg);
  const int bins = cfg.freq_bins();
  int prev_first = -1;
  for (int m = 0; m < cfg.mel_bins; ++m) {
    double row = 0.0;
    int first = -1;
    for (int b = 0; b < bins; ++b) {
      const double v = fb[static_cast<size_t>(m) * bins + b];
      CHECK(v >= 0.0);
      row += v;
      if (v > 0.0 && first < 0) first = b;
    }
    CHECK(row > 0.0);
    CHECK(first >= prev_first);
    prev_first = first;
  }

  DspConfig paper = DspConfig::paper();
  const auto fb_paper = mel_filterbank(paper);
  CHECK(fb_paper.size() == static_cast<size_t>(128) * paper.freq_bins());
}

TEST_CASE("mel filterbank rejects resolutions with empty-support filters") {
  DspConfig cfg = DspConfig::desk();
  cfg.mel_bins = 400;  // far beyond the 257-bin FFT resolution
  CHECK_THROWS_AS(mel_filterbank(cfg), ConfigError);
}

TEST_CASE("tone at a filter center wins that mel bin") {
  DspConfig cfg = DspConfig::desk();
  // reproduce the corner geometry used by the filterbank
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double mel_lo = hz_to_mel(cfg.fmin), mel_hi = hz_to_mel(cfg.fmax);
  for (int k : {8, 14, 20, 26}) {
    const double center =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * (k + 1) / static_cast<double>(cfg.mel_bins + 1));
    MelSpectrogram mel = melspec(sine(center, 16384, cfg.sample_rate), cfg);
    const int t = mel.frames / 2;
    int argmax = 0;
    double best = mel.at(0, t);
    for (int m = 1; m < mel.mel_bins; ++m) {
      if (mel.at(m, t) > best) {
        best = mel.at(m, t);
        argmax = m;
      }
    }
    CHECK(argmax == k);
  }
}

TEST_CASE("melspec of silence is the log floor everywhere") {
  DspConfig cfg = DspConfig::desk();
  Waveform w;
  w.samples.assign(16384, 0.0);
  MelSpectrogram mel = melspec(w, cfg);
  for (double v : mel.values) CHECK(v == doctest::Approx(std::log(cfg.log_floor)));
}

TEST_CASE("melspec frame count: paper clip gives exactly 512 frames, desk 128") {
  DspConfig paper = DspConfig::paper();
  MelSpectrogram mp = melspec(noise(65536, 7), paper);  // 4.096 s at 16 kHz
  CHECK(mp.frames == 512);
  CHECK(mp.mel_bins == 128);

  DspConfig desk = DspConfig::desk();
  MelSpectrogram md = melspec(noise(16384, 7), desk);
  CHECK(md.frames == 128);
  CHECK(md.mel_bins == 32);
}

TEST_CASE("doubling the waveform adds log 2 to unfloored mel cells") {
  DspConfig cfg = DspConfig::desk();
  Waveform w = noise(16384, 11, 0.05);
  Waveform w2 = w;
  for (auto& s : w2.samples) s *= 2.0;
  MelSpectrogram a = melspec(w, cfg);
  MelSpectrogram b = melspec(w2, cfg);
  const double floor_log = std::log(cfg.log_floor);
  int checked = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i] > floor_log + 1e-9) {
      CHECK(std::fabs(b.values[i] - a.values[i] - std::log(2.0)) < 1e-6);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("griffin_lim of an all-floor mel is near silent") {
  DspConfig cfg = DspConfig::desk();
  MelSpectrogram mel;
  mel.mel_bins = cfg.mel_bins;
  mel.frames = 32;
  mel.config = cfg;
  mel.values.assign(static_cast<size_t>(cfg.mel_bins) * 32, std::log(cfg.log_floor));
  GriffinLimResult r = griffin_lim(mel, 4, cfg);
  CHECK(r.waveform.rms() < 1e-4);
  CHECK(r.waveform.size() == 32 * cfg.hop_length);
}

TEST_CASE("griffin_lim objective is non-increasing over 32 iterations") {
  DspConfig cfg = DspConfig::desk();
  for (uint64_t seed : {1ULL, 2ULL}) {
    MelSpectrogram mel = melspec(noise(16384, seed), cfg);
    GriffinLimResult r = griffin_lim(mel, 32, cfg);
    REQUIRE(r.objective.size() == 32);
    for (size_t i = 1; i < r.objective.size(); ++i) {
      CHECK(r.objective[i] <= r.objective[i - 1] * (1.0 + 1e-12) + 1e-12);
    }
  }
}

TEST_CASE("griffin_lim reconstructs a 440 Hz tone within one mel bin") {
  DspConfig cfg = DspConfig::desk();
  MelSpectrogram mel = melspec(sine(440.0, 16384, cfg.sample_rate), cfg);
  GriffinLimResult r = griffin_lim(mel, 32, cfg);
  MelSpectrogram rec = melspec(r.waveform, cfg);

  auto argmax_at = [](const MelSpectrogram& m, int t) {
    int arg = 0;
    double best = m.at(0, t);
    for (int i = 1; i < m.mel_bins; ++i) {
      if (m.at(i, t) > best) {
        best = m.at(i, t);
        arg = i;
      }
    }
    return arg;
  };
  const int t = mel.frames / 2;
  CHECK(std::abs(argmax_at(rec, t) - argmax_at(mel, t)) <= 1);
  CHECK_THROWS_AS(griffin_lim(mel, 0, cfg), ConfigError);
}

TEST_CASE("wav round trip within quantization error and byte-deterministic") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "casc_dsp_test";
  fs::create_directories(dir);
  Waveform w = noise(2048, 23, 0.4);
  w.limit_peak();
  const std::string p1 = (dir / "a.wav").string();
  const std::string p2 = (dir / "b.wav").string();
  write_wav(p1, w);
  write_wav(p2, w);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  Waveform r = read_wav(p1);
  REQUIRE(r.size() == w.size());
  CHECK(r.sample_rate == w.sample_rate);
  for (int64_t i = 0; i < w.size(); ++i) {
    CHECK(std::fabs(r.samples[i] - w.samples[i]) <= 0.5 / 32767.0 + 1e-9);
  }
  fs::remove_all(dir);
}

TEST_CASE("spectrogram dumps: pgm header and csv row count") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "casc_dump_test";
  fs::create_directories(dir);
  DspConfig cfg = DspConfig::desk();
  MelSpectrogram mel = melspec(noise(16384, 29), cfg);
  write_pgm((dir / "m.pgm").string(), mel);
  write_csv((dir / "m.csv").string(), mel);

  std::ifstream pgm(dir / "m.pgm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  pgm >> magic >> w >> h >> maxv;
  CHECK(magic == "P5");
  CHECK(w == mel.frames);
  CHECK(h == mel.mel_bins);
  CHECK(maxv == 255);

  std::ifstream csv(dir / "m.csv");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == mel.mel_bins);
  fs::remove_all(dir);
}

TEST_CASE("noise_floor_metric is the median per-frame minimum") {
  MelSpectrogram mel;
  mel.mel_bins = 2;
  mel.frames = 3;
  // columns: mins are 1, 5, 3 -> median 3
  mel.values = {1.0, 5.0, 9.0, 4.0, 8.0, 3.0};
  CHECK(noise_floor_metric(mel) == doctest::Approx(3.0));
}
