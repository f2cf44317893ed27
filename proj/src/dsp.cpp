#include "cascade/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cascade {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT. inverse=true applies conjugate transform
// without the 1/n scale.
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Direct DFT fallback for non power-of-two sizes.
void dft_direct(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  std::vector<std::complex<double>> out(n, {0.0, 0.0});
  const double sign = inverse ? 1.0 : -1.0;
  for (size_t k = 0; k < n; ++k) {
    for (size_t t = 0; t < n; ++t) {
      const double ang = sign * 2.0 * kPi * static_cast<double>(k * t % n) / static_cast<double>(n);
      out[k] += a[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
  }
  a.swap(out);
}

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  if (is_pow2(static_cast<int>(a.size()))) {
    fft_pow2(a, inverse);
  } else {
    dft_direct(a, inverse);
  }
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

void DspConfig::validate() const {
  if (sample_rate <= 0.0) throw ConfigError("dsp: sample_rate must be positive");
  if (!(hop_length >= 1 && window_length >= 1 && fft_size >= 1)) {
    throw ConfigError("dsp: window/hop/fft must be >= 1");
  }
  if (!(hop_length <= window_length && window_length <= fft_size)) {
    throw ConfigError("dsp: need hop <= window <= fft, got hop=" + std::to_string(hop_length) +
                      " window=" + std::to_string(window_length) +
                      " fft=" + std::to_string(fft_size));
  }
  if (!(fmin < fmax && fmax <= sample_rate / 2.0 + 1e-9)) {
    throw ConfigError("dsp: need fmin < fmax <= sample_rate/2");
  }
  if (mel_bins < 1) throw ConfigError("dsp: mel_bins must be >= 1");
  if (log_floor <= 0.0) throw ConfigError("dsp: log_floor must be positive");
}

DspConfig DspConfig::desk() {
  DspConfig cfg;
  cfg.mel_bins = 32;
  return cfg;
}

DspConfig DspConfig::paper() {
  DspConfig cfg;
  cfg.mel_bins = 128;
  // 128 mel filters need finer frequency resolution than a 512-point FFT
  // can give below ~100 Hz; 2048 keeps every filter non-empty. hop stays
  // 128 so a 4.096 s clip still spans exactly 512 frames.
  cfg.window_length = 2048;
  cfg.fft_size = 2048;
  return cfg;
}

double Waveform::rms() const {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

double Waveform::peak() const {
  double p = 0.0;
  for (double s : samples) p = std::max(p, std::fabs(s));
  return p;
}

void Waveform::limit_peak() {
  const double p = peak();
  if (p > 1.0) {
    const double inv = 1.0 / p;
    for (double& s : samples) s *= inv;
  }
}

std::vector<double> hann_periodic(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / static_cast<double>(n)));
  }
  return w;
}

double cola_deviation(const DspConfig& cfg) {
  const auto w = hann_periodic(cfg.window_length);
  // The interior overlap sum is h-periodic, so scanning one hop suffices.
  const int h = cfg.hop_length;
  double mn = 1e300, mx = -1e300;
  for (int n = 0; n < h; ++n) {
    double acc = 0.0;
    for (int pos = n; pos < cfg.window_length; pos += h) {
      acc += w[static_cast<size_t>(pos)] * w[static_cast<size_t>(pos)];
    }
    mn = std::min(mn, acc);
    mx = std::max(mx, acc);
  }
  if (mx <= 0.0) return 1.0;
  return (mx - mn) / mx;
}

namespace {

void require_cola(const DspConfig& cfg) {
  if (cola_deviation(cfg) > 1e-6) {
    throw ConfigError("dsp: window=" + std::to_string(cfg.window_length) +
                      " hop=" + std::to_string(cfg.hop_length) +
                      " does not satisfy constant overlap-add");
  }
}

}  // namespace

Spectrogram stft(const Waveform& w, const DspConfig& cfg) {
  cfg.validate();
  const int64_t len = w.size();
  if (len < cfg.window_length) {
    throw DimensionError("stft: signal length " + std::to_string(len) +
                         " shorter than one window (" + std::to_string(cfg.window_length) + ")");
  }
  const int frames = 1 + static_cast<int>((len - cfg.window_length) / cfg.hop_length);
  const auto window = hann_periodic(cfg.window_length);
  Spectrogram spec;
  spec.bins = cfg.freq_bins();
  spec.frames = frames;
  spec.values.assign(static_cast<size_t>(spec.bins) * frames, {0.0, 0.0});

  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
  for (int t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const int64_t off = static_cast<int64_t>(t) * cfg.hop_length;
    for (int i = 0; i < cfg.window_length; ++i) {
      buf[static_cast<size_t>(i)] = w.samples[static_cast<size_t>(off + i)] *
                                    window[static_cast<size_t>(i)];
    }
    fft(buf, false);
    for (int b = 0; b < spec.bins; ++b) spec.at(b, t) = buf[static_cast<size_t>(b)];
  }
  return spec;
}

Waveform istft(const Spectrogram& spec, const DspConfig& cfg) {
  cfg.validate();
  require_cola(cfg);
  if (spec.bins != cfg.freq_bins()) {
    throw DimensionError("istft: spectrogram has " + std::to_string(spec.bins) +
                         " bins, config expects " + std::to_string(cfg.freq_bins()));
  }
  if (spec.frames < 1) throw DimensionError("istft: no frames");

  const auto window = hann_periodic(cfg.window_length);
  const int64_t out_len =
      static_cast<int64_t>(cfg.window_length) + static_cast<int64_t>(spec.frames - 1) * cfg.hop_length;
  std::vector<double> acc(static_cast<size_t>(out_len), 0.0);
  std::vector<double> env(static_cast<size_t>(out_len), 0.0);

  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
  for (int t = 0; t < spec.frames; ++t) {
    for (int b = 0; b < spec.bins; ++b) buf[static_cast<size_t>(b)] = spec.at(b, t);
    for (int b = spec.bins; b < cfg.fft_size; ++b) {
      buf[static_cast<size_t>(b)] = std::conj(spec.at(cfg.fft_size - b, t));
    }
    fft(buf, true);
    const double inv_n = 1.0 / static_cast<double>(cfg.fft_size);
    const int64_t off = static_cast<int64_t>(t) * cfg.hop_length;
    for (int i = 0; i < cfg.window_length; ++i) {
      const double s = buf[static_cast<size_t>(i)].real() * inv_n;
      acc[static_cast<size_t>(off + i)] += s * window[static_cast<size_t>(i)];
      env[static_cast<size_t>(off + i)] +=
          window[static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
    }
  }
  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(static_cast<size_t>(out_len));
  for (int64_t i = 0; i < out_len; ++i) {
    const double e = env[static_cast<size_t>(i)];
    out.samples[static_cast<size_t>(i)] = e > 1e-12 ? acc[static_cast<size_t>(i)] / e : 0.0;
  }
  return out;
}

std::vector<double> mel_filterbank(const DspConfig& cfg) {
  cfg.validate();
  const int bins = cfg.freq_bins();
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> corners(static_cast<size_t>(cfg.mel_bins) + 2);
  for (int i = 0; i < cfg.mel_bins + 2; ++i) {
    corners[static_cast<size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                               static_cast<double>(cfg.mel_bins + 1));
  }
  std::vector<double> fb(static_cast<size_t>(cfg.mel_bins) * bins, 0.0);
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double f_lo = corners[static_cast<size_t>(m)];
    const double f_c = corners[static_cast<size_t>(m) + 1];
    const double f_hi = corners[static_cast<size_t>(m) + 2];
    bool has_support = false;
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / cfg.fft_size;
      double w = 0.0;
      if (f > f_lo && f < f_hi) {
        w = f <= f_c ? (f - f_lo) / (f_c - f_lo) : (f_hi - f) / (f_hi - f_c);
      }
      if (w > 0.0) {
        fb[static_cast<size_t>(m) * bins + b] = w;
        has_support = true;
      }
    }
    if (!has_support) {
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " has empty support; mel_bins=" + std::to_string(cfg.mel_bins) +
                        " too large for fft_size=" + std::to_string(cfg.fft_size));
    }
  }
  return fb;
}

namespace {

std::vector<double> reflect_pad(const std::vector<double>& x, int pad) {
  const int64_t n = static_cast<int64_t>(x.size());
  if (n <= pad) {
    throw DimensionError("melspec: signal too short (" + std::to_string(n) +
                         " samples) for centering pad " + std::to_string(pad));
  }
  std::vector<double> out(static_cast<size_t>(n + 2 * pad));
  for (int i = 0; i < pad; ++i) out[static_cast<size_t>(i)] = x[static_cast<size_t>(pad - i)];
  std::copy(x.begin(), x.end(), out.begin() + pad);
  for (int i = 0; i < pad; ++i) {
    out[static_cast<size_t>(pad + n + i)] = x[static_cast<size_t>(n - 2 - i)];
  }
  return out;
}

}  // namespace

MelSpectrogram melspec(const Waveform& w, const DspConfig& cfg) {
  cfg.validate();
  Waveform padded;
  padded.sample_rate = w.sample_rate;
  padded.samples = reflect_pad(w.samples, cfg.center_pad());
  const Spectrogram spec = stft(padded, cfg);
  const auto fb = mel_filterbank(cfg);
  const int bins = cfg.freq_bins();

  MelSpectrogram mel;
  mel.mel_bins = cfg.mel_bins;
  mel.frames = spec.frames;
  mel.config = cfg;
  mel.values.assign(static_cast<size_t>(cfg.mel_bins) * spec.frames, 0.0);
  for (int m = 0; m < cfg.mel_bins; ++m) {
    for (int t = 0; t < spec.frames; ++t) {
      double acc = 0.0;
      for (int b = 0; b < bins; ++b) {
        const double fw = fb[static_cast<size_t>(m) * bins + b];
        if (fw != 0.0) acc += fw * std::abs(spec.at(b, t));
      }
      mel.at(m, t) = std::log(std::max(acc, cfg.log_floor));
    }
  }
  return mel;
}

GriffinLimResult griffin_lim(const MelSpectrogram& mel, int iterations, const DspConfig& cfg) {
  cfg.validate();
  require_cola(cfg);
  if (iterations < 1) throw ConfigError("griffin_lim: iterations must be >= 1");
  if (mel.mel_bins != cfg.mel_bins) {
    throw DimensionError("griffin_lim: mel has " + std::to_string(mel.mel_bins) +
                         " bins, config expects " + std::to_string(cfg.mel_bins));
  }
  const int bins = cfg.freq_bins();
  const auto fb = mel_filterbank(cfg);

  // Transpose-normalized pseudo-inverse of the filterbank (approximate).
  std::vector<double> target(static_cast<size_t>(bins) * mel.frames, 0.0);
  for (int b = 0; b < bins; ++b) {
    double colsum = 0.0;
    for (int m = 0; m < cfg.mel_bins; ++m) colsum += fb[static_cast<size_t>(m) * bins + b];
    const double inv = colsum > 1e-12 ? 1.0 / colsum : 0.0;
    for (int t = 0; t < mel.frames; ++t) {
      double acc = 0.0;
      for (int m = 0; m < cfg.mel_bins; ++m) {
        acc += fb[static_cast<size_t>(m) * bins + b] * std::exp(mel.at(m, t));
      }
      target[static_cast<size_t>(b) * mel.frames + t] = acc * inv;
    }
  }

  Spectrogram work;
  work.bins = bins;
  work.frames = mel.frames;
  work.values.assign(target.size(), {0.0, 0.0});
  for (size_t i = 0; i < target.size(); ++i) work.values[i] = {target[i], 0.0};

  GriffinLimResult result;
  result.objective.reserve(static_cast<size_t>(iterations));
  Waveform x = istft(work, cfg);
  for (int it = 0; it < iterations; ++it) {
    const Spectrogram s = stft(x, cfg);
    double obj = 0.0;
    for (size_t i = 0; i < s.values.size(); ++i) {
      const double d = std::abs(s.values[i]) - target[i];
      obj += d * d;
    }
    result.objective.push_back(obj);
    for (size_t i = 0; i < s.values.size(); ++i) {
      const double mag = std::abs(s.values[i]);
      const std::complex<double> phase =
          mag > 1e-300 ? s.values[i] / mag : std::complex<double>(1.0, 0.0);
      work.values[i] = target[i] * phase;
    }
    x = istft(work, cfg);
  }

  // Drop the centering pad so the output spans frames*hop samples.
  const int pad = cfg.center_pad();
  const int64_t want = static_cast<int64_t>(mel.frames) * cfg.hop_length;
  Waveform out;
  out.sample_rate = cfg.sample_rate;
  if (static_cast<int64_t>(x.samples.size()) >= want + 2 * pad) {
    out.samples.assign(x.samples.begin() + pad, x.samples.begin() + pad + want);
  } else {
    out.samples = x.samples;
  }
  out.limit_peak();
  result.waveform = std::move(out);
  return result;
}

double noise_floor_metric(const MelSpectrogram& mel) {
  std::vector<double> mins(static_cast<size_t>(mel.frames));
  for (int t = 0; t < mel.frames; ++t) {
    double mn = mel.at(0, t);
    for (int m = 1; m < mel.mel_bins; ++m) mn = std::min(mn, mel.at(m, t));
    mins[static_cast<size_t>(t)] = mn;
  }
  std::sort(mins.begin(), mins.end());
  const size_t n = mins.size();
  return n % 2 == 1 ? mins[n / 2] : 0.5 * (mins[n / 2 - 1] + mins[n / 2]);
}

// ---------------------------------------------------------------------------
// file formats

namespace {

void write_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16le(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16le(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write wav: " + path);
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t sr = static_cast<uint32_t>(w.sample_rate);
  os.write("RIFF", 4);
  write_u32le(os, 36 + n * 2);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32le(os, 16);
  write_u16le(os, 1);  // PCM
  write_u16le(os, 1);  // mono
  write_u32le(os, sr);
  write_u32le(os, sr * 2);
  write_u16le(os, 2);
  write_u16le(os, 16);
  os.write("data", 4);
  write_u32le(os, n * 2);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const int16_t q = static_cast<int16_t>(std::clamp(std::lrint(c * 32767.0), -32767L, 32767L));
    write_u16le(os, static_cast<uint16_t>(q));
  }
  if (!os) throw IoError("wav write failed: " + path);
}

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read wav: " + path);
  char tag[5] = {0};
  is.read(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0) throw IoError("not a RIFF file: " + path);
  read_u32le(is);
  is.read(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0) throw IoError("not a WAVE file: " + path);

  Waveform w;
  uint16_t channels = 0, bits = 0, fmt = 0;
  while (is.read(tag, 4)) {
    const uint32_t size = read_u32le(is);
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      fmt = read_u16le(is);
      channels = read_u16le(is);
      w.sample_rate = static_cast<double>(read_u32le(is));
      read_u32le(is);
      read_u16le(is);
      bits = read_u16le(is);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
    } else if (std::strncmp(tag, "data", 4) == 0) {
      if (fmt != 1 || channels != 1 || bits != 16) {
        throw IoError("unsupported wav format (need PCM16 mono): " + path);
      }
      const uint32_t count = size / 2;
      w.samples.resize(count);
      for (uint32_t i = 0; i < count; ++i) {
        const int16_t q = static_cast<int16_t>(read_u16le(is));
        w.samples[i] = std::clamp(static_cast<double>(q) / 32767.0, -1.0, 1.0);
      }
      return w;
    } else {
      is.seekg(size, std::ios::cur);
    }
  }
  throw IoError("wav has no data chunk: " + path);
}

void write_pgm(const std::string& path, const MelSpectrogram& mel) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write pgm: " + path);
  double mn = mel.values.empty() ? 0.0 : mel.values[0];
  double mx = mn;
  for (double v : mel.values) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const double range = mx - mn;
  os << "P5\n" << mel.frames << " " << mel.mel_bins << "\n255\n";
  for (int m = mel.mel_bins - 1; m >= 0; --m) {
    for (int t = 0; t < mel.frames; ++t) {
      const double norm = range > 0.0 ? (mel.at(m, t) - mn) / range : 0.0;
      os.put(static_cast<char>(static_cast<unsigned char>(std::lrint(norm * 255.0))));
    }
  }
  if (!os) throw IoError("pgm write failed: " + path);
}

void write_csv(const std::string& path, const MelSpectrogram& mel) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write csv: " + path);
  os.precision(9);
  for (int m = 0; m < mel.mel_bins; ++m) {
    for (int t = 0; t < mel.frames; ++t) {
      if (t) os << ",";
      os << mel.at(m, t);
    }
    os << "\n";
  }
  if (!os) throw IoError("csv write failed: " + path);
}

}  // namespace cascade
