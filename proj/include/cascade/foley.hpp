#pragma once

#include <cstdint>

#include "cascade/dsp.hpp"
#include "cascade/prompt.hpp"

namespace cascade {

// Procedural parameters for one class clip. Defaults differ per class;
// event rates are per second so shorter desk clips keep the class texture.
struct SynthFoleyParams {
  double duration_s = 4.096;
  double sample_rate = 16000.0;
  double event_rate_hz = 1.0;   // bursts/impulses per second
  double band_center_hz = 1000.0;
  double band_width_hz = 800.0;
  double decay_s = 0.1;
  double noise_snr_db = 8.0;    // target SNR for noisy variants

  void validate() const;
  static SynthFoleyParams defaults(SoundClass c);
};

// Deterministic class-characteristic clip; same (class, params, seed)
// reproduces identical samples.
Waveform synth_class_clip(SoundClass c, const SynthFoleyParams& params, uint64_t seed);

// clean + pink noise scaled to the requested SNR; the measured
// 10*log10(P_sig/P_noise) equals snr_db exactly by construction.
Waveform make_noisy_variant(const Waveform& clean, double snr_db, uint64_t seed);

std::vector<double> pink_noise(int64_t len, uint64_t seed);

}  // namespace cascade
