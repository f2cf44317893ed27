#include "cascade/foley.hpp"

#include <algorithm>
#include <cmath>

#include "cascade/error.hpp"
#include "cascade/rng.hpp"

namespace cascade {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// RBJ constant-peak band-pass biquad applied in place.
void bandpass(std::vector<double>& x, double sr, double center_hz, double width_hz) {
  const double f0 = std::clamp(center_hz, 10.0, sr / 2.0 - 10.0);
  const double bw = std::max(width_hz, 10.0);
  const double q = std::max(f0 / bw, 0.2);
  const double w0 = kTwoPi * f0 / sr;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double b0 = alpha, b1 = 0.0, b2 = -alpha;
  const double a0 = 1.0 + alpha, a1 = -2.0 * std::cos(w0), a2 = 1.0 - alpha;
  double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    const double in = v;
    const double out = (b0 * in + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
    x2 = x1;
    x1 = in;
    y2 = y1;
    y1 = out;
    v = out;
  }
}

void one_pole_lowpass(std::vector<double>& x, double sr, double cutoff_hz) {
  const double a = std::exp(-kTwoPi * std::clamp(cutoff_hz, 10.0, sr / 2.0 - 10.0) / sr);
  double state = 0.0;
  for (double& v : x) {
    state = (1.0 - a) * v + a * state;
    v = state;
  }
}

void add_scaled(std::vector<double>& dst, const std::vector<double>& src, int64_t offset,
                double gain) {
  const int64_t n = static_cast<int64_t>(dst.size());
  for (int64_t i = 0; i < static_cast<int64_t>(src.size()); ++i) {
    const int64_t j = offset + i;
    if (j >= 0 && j < n) dst[static_cast<size_t>(j)] += gain * src[static_cast<size_t>(i)];
  }
}

std::vector<double> white(int64_t len, Rng& rng) {
  std::vector<double> x(static_cast<size_t>(len));
  for (auto& v : x) v = rng.normal();
  return x;
}

// Event start offsets: roughly periodic with jitter, rate events/second.
std::vector<int64_t> event_offsets(double rate_hz, double duration_s, double sr, Rng& rng) {
  const int count = std::max(1, static_cast<int>(std::lround(rate_hz * duration_s)));
  std::vector<int64_t> offsets;
  const double period = duration_s / count;
  for (int i = 0; i < count; ++i) {
    const double jitter = (rng.uniform() - 0.5) * 0.5 * period;
    const double t = std::max(0.0, (i + 0.25) * period + jitter);
    offsets.push_back(static_cast<int64_t>(t * sr));
  }
  return offsets;
}

std::vector<double> decay_env(int64_t len, double sr, double attack_s, double decay_s) {
  std::vector<double> env(static_cast<size_t>(len));
  const double attack = std::max(attack_s * sr, 1.0);
  for (int64_t i = 0; i < len; ++i) {
    const double a = std::min(1.0, static_cast<double>(i) / attack);
    env[static_cast<size_t>(i)] = a * std::exp(-static_cast<double>(i) / (decay_s * sr));
  }
  return env;
}

void normalize_to(std::vector<double>& x, double peak_target) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::fabs(v));
  if (peak > 1e-12) {
    const double g = peak_target / peak;
    for (double& v : x) v *= g;
  }
}

}  // namespace

void SynthFoleyParams::validate() const {
  if (duration_s <= 0.0 || sample_rate <= 0.0) throw ConfigError("synth: bad duration/rate");
  if (event_rate_hz <= 0.0) throw ConfigError("synth: event_rate_hz must be positive");
  if (band_center_hz <= 0.0 || band_center_hz >= sample_rate / 2.0) {
    throw ConfigError("synth: band center outside (0, Nyquist)");
  }
  if (band_width_hz <= 0.0) throw ConfigError("synth: band width must be positive");
  if (decay_s <= 0.0) throw ConfigError("synth: decay must be positive");
}

SynthFoleyParams SynthFoleyParams::defaults(SoundClass c) {
  SynthFoleyParams p;
  switch (c) {
    case SoundClass::kDogBark:
      p.event_rate_hz = 0.9;
      p.band_center_hz = 850.0;
      p.band_width_hz = 700.0;
      p.decay_s = 0.09;
      break;
    case SoundClass::kFootstep:
      p.event_rate_hz = 2.0;
      p.band_center_hz = 120.0;
      p.band_width_hz = 120.0;
      p.decay_s = 0.03;
      break;
    case SoundClass::kGunShot:
      p.event_rate_hz = 0.3;
      p.band_center_hz = 900.0;
      p.band_width_hz = 1800.0;
      p.decay_s = 0.5;
      break;
    case SoundClass::kKeyboard:
      p.event_rate_hz = 12.0;
      p.band_center_hz = 3200.0;
      p.band_width_hz = 2600.0;
      p.decay_s = 0.006;
      break;
    case SoundClass::kMotorVehicle:
      p.event_rate_hz = 13.0;  // firing-rate modulation
      p.band_center_hz = 110.0;
      p.band_width_hz = 90.0;
      p.decay_s = 0.2;
      break;
    case SoundClass::kRain:
      p.event_rate_hz = 30.0;  // droplet ticks over the stationary bed
      p.band_center_hz = 4000.0;
      p.band_width_hz = 7000.0;
      p.decay_s = 0.002;
      break;
    case SoundClass::kSneezeCough:
      p.event_rate_hz = 0.4;
      p.band_center_hz = 1200.0;
      p.band_width_hz = 1400.0;
      p.decay_s = 0.14;
      break;
  }
  return p;
}

Waveform synth_class_clip(SoundClass c, const SynthFoleyParams& p, uint64_t seed) {
  p.validate();
  const double sr = p.sample_rate;
  const int64_t len = static_cast<int64_t>(std::llround(p.duration_s * sr));
  Rng rng(rngmix::mix2(seed, static_cast<uint64_t>(c) + 0xF01EFULL));
  std::vector<double> out(static_cast<size_t>(len), 0.0);

  switch (c) {
    case SoundClass::kDogBark: {
      for (int64_t off : event_offsets(p.event_rate_hz, p.duration_s, sr, rng)) {
        const int64_t blen = static_cast<int64_t>(0.22 * sr);
        const double f0 = 380.0 + rng.uniform(-60.0, 60.0);
        std::vector<double> burst(static_cast<size_t>(blen));
        double phase = 0.0;
        for (int64_t i = 0; i < blen; ++i) {
          const double t = static_cast<double>(i) / sr;
          const double f = f0 * (1.0 - 0.35 * t / 0.22);
          phase += kTwoPi * f / sr;
          burst[static_cast<size_t>(i)] =
              0.6 * std::sin(phase) + 0.3 * std::sin(2.0 * phase) + 0.15 * std::sin(3.0 * phase);
        }
        std::vector<double> rough = white(blen, rng);
        bandpass(rough, sr, p.band_center_hz, p.band_width_hz);
        const auto env = decay_env(blen, sr, 0.008, p.decay_s);
        for (int64_t i = 0; i < blen; ++i) {
          burst[static_cast<size_t>(i)] =
              (burst[static_cast<size_t>(i)] + 0.8 * rough[static_cast<size_t>(i)]) *
              env[static_cast<size_t>(i)];
        }
        add_scaled(out, burst, off, 0.9);
      }
      break;
    }
    case SoundClass::kFootstep: {
      for (int64_t off : event_offsets(p.event_rate_hz, p.duration_s, sr, rng)) {
        const int64_t blen = static_cast<int64_t>(0.05 * sr);
        std::vector<double> thump(static_cast<size_t>(blen));
        double phase = 0.0;
        const double f0 = 150.0 + rng.uniform(-25.0, 25.0);
        for (int64_t i = 0; i < blen; ++i) {
          const double t = static_cast<double>(i) / sr;
          phase += kTwoPi * (f0 * std::exp(-t / 0.02)) / sr;
          thump[static_cast<size_t>(i)] = std::sin(phase);
        }
        std::vector<double> scuff = white(blen, rng);
        bandpass(scuff, sr, 1500.0, 2000.0);
        const auto env = decay_env(blen, sr, 0.002, p.decay_s);
        for (int64_t i = 0; i < blen; ++i) {
          thump[static_cast<size_t>(i)] =
              (thump[static_cast<size_t>(i)] + 0.25 * scuff[static_cast<size_t>(i)]) *
              env[static_cast<size_t>(i)];
        }
        add_scaled(out, thump, off, 0.8 + 0.2 * rng.uniform());
      }
      break;
    }
    case SoundClass::kGunShot: {
      const int shots = rng.uniform() < 0.3 ? 2 : 1;
      for (int s = 0; s < shots; ++s) {
        const int64_t off =
            static_cast<int64_t>(rng.uniform(0.05, std::max(0.06, p.duration_s * 0.5)) * sr);
        const int64_t crack_len = static_cast<int64_t>(0.006 * sr);
        std::vector<double> crack = white(crack_len, rng);
        add_scaled(out, crack, off, 1.0);
        const int64_t tail_len = static_cast<int64_t>(std::min(p.duration_s - 0.01, 0.9) * sr);
        std::vector<double> tail = white(tail_len, rng);
        one_pole_lowpass(tail, sr, 1200.0);
        const auto env = decay_env(tail_len, sr, 0.001, p.decay_s);
        for (int64_t i = 0; i < tail_len; ++i) tail[static_cast<size_t>(i)] *= env[static_cast<size_t>(i)];
        add_scaled(out, tail, off + crack_len, 0.8);
        add_scaled(out, tail, off + crack_len + static_cast<int64_t>(0.13 * sr), 0.25);
      }
      break;
    }
    case SoundClass::kKeyboard: {
      for (int64_t off : event_offsets(p.event_rate_hz, p.duration_s, sr, rng)) {
        const int64_t blen = static_cast<int64_t>(0.008 * sr);
        std::vector<double> click = white(blen, rng);
        bandpass(click, sr, p.band_center_hz + rng.uniform(-600.0, 600.0), p.band_width_hz);
        const auto env = decay_env(blen, sr, 0.0005, p.decay_s);
        for (int64_t i = 0; i < blen; ++i) click[static_cast<size_t>(i)] *= env[static_cast<size_t>(i)];
        add_scaled(out, click, off, 0.5 + 0.5 * rng.uniform());
      }
      break;
    }
    case SoundClass::kMotorVehicle: {
      std::vector<double> bed = white(len, rng);
      bandpass(bed, sr, p.band_center_hz, p.band_width_hz);
      const double mod_rate = p.event_rate_hz + rng.uniform(-2.0, 2.0);
      double phase = 0.0;
      for (int64_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double mod = 1.0 + 0.5 * std::sin(kTwoPi * mod_rate * t);
        phase += kTwoPi * 55.0 / sr;
        out[static_cast<size_t>(i)] =
            bed[static_cast<size_t>(i)] * mod * 2.2 +
            0.35 * std::sin(phase) + 0.18 * std::sin(2.0 * phase);
      }
      break;
    }
    case SoundClass::kRain: {
      std::vector<double> bed = white(len, rng);
      for (int64_t i = 0; i < len; ++i) out[static_cast<size_t>(i)] = 0.5 * bed[static_cast<size_t>(i)];
      for (int64_t off : event_offsets(p.event_rate_hz, p.duration_s, sr, rng)) {
        const int64_t blen = static_cast<int64_t>(0.004 * sr);
        std::vector<double> drop = white(blen, rng);
        bandpass(drop, sr, p.band_center_hz + rng.uniform(-1500.0, 1500.0), 3000.0);
        const auto env = decay_env(blen, sr, 0.0003, p.decay_s);
        for (int64_t i = 0; i < blen; ++i) drop[static_cast<size_t>(i)] *= env[static_cast<size_t>(i)];
        add_scaled(out, drop, off, 0.6);
      }
      break;
    }
    case SoundClass::kSneezeCough: {
      const int bursts = rng.uniform() < 0.5 ? 1 : 2;
      for (int b = 0; b < bursts; ++b) {
        const int64_t off = static_cast<int64_t>(
            rng.uniform(0.05, std::max(0.08, p.duration_s * 0.6)) * sr);
        const int64_t blen = static_cast<int64_t>(0.35 * sr);
        std::vector<double> formant1 = white(blen, rng);
        std::vector<double> formant2 = formant1;
        bandpass(formant1, sr, 700.0, 500.0);
        bandpass(formant2, sr, p.band_center_hz + rng.uniform(-200.0, 200.0), p.band_width_hz);
        const auto env = decay_env(blen, sr, 0.015, p.decay_s);
        std::vector<double> burst(static_cast<size_t>(blen));
        for (int64_t i = 0; i < blen; ++i) {
          burst[static_cast<size_t>(i)] = (1.2 * formant1[static_cast<size_t>(i)] +
                                           formant2[static_cast<size_t>(i)]) *
                                          env[static_cast<size_t>(i)];
        }
        add_scaled(out, burst, off, 0.9);
      }
      break;
    }
  }

  normalize_to(out, 0.85);
  Waveform w;
  w.sample_rate = sr;
  w.samples = std::move(out);
  return w;
}

std::vector<double> pink_noise(int64_t len, uint64_t seed) {
  Rng rng(rngmix::mix2(seed, 0xF17CULL));
  // Paul Kellet's three-stage approximation of a 1/f spectrum.
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  std::vector<double> out(static_cast<size_t>(len));
  for (auto& v : out) {
    const double w = rng.normal();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    v = 0.25 * (b0 + b1 + b2 + w * 0.1848);
  }
  return out;
}

Waveform make_noisy_variant(const Waveform& clean, double snr_db, uint64_t seed) {
  if (!std::isfinite(snr_db)) throw ConfigError("make_noisy_variant: snr_db must be finite");
  double p_sig = 0.0;
  for (double s : clean.samples) p_sig += s * s;
  p_sig /= std::max<size_t>(clean.samples.size(), 1);
  if (p_sig < 1e-12) {
    throw NumericalError("make_noisy_variant: clean input is silent, SNR undefined");
  }
  std::vector<double> noise = pink_noise(clean.size(), seed);
  double p_noise = 0.0;
  for (double s : noise) p_noise += s * s;
  p_noise /= std::max<size_t>(noise.size(), 1);
  const double gain = std::sqrt(p_sig / (p_noise * std::pow(10.0, snr_db / 10.0)));

  Waveform out;
  out.sample_rate = clean.sample_rate;
  out.samples.resize(clean.samples.size());
  for (size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i] = clean.samples[i] + gain * noise[i];
  }
  // Common rescale preserves the signal/noise power ratio.
  out.limit_peak();
  return out;
}

}  // namespace cascade
