#pragma once

#include <map>
#include <string>
#include <vector>

#include "cascade/dsp.hpp"
#include "cascade/foley.hpp"
#include "cascade/prompt.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

struct ManifestEntry {
  std::string path;  // wav path relative to the dataset root
  std::string clip_id;
  SoundClass sound_class = SoundClass::kDogBark;
  Quality quality = Quality::kClean;
  std::vector<std::string> tags;
  double duration_s = 0.0;
  std::string prompt;      // raw template text (quality prefix applied later)
  uint64_t synth_seed = 0;
};

// Drops entries whose tags intersect {speech, music, singing, instrument};
// order preserved, untagged entries kept. Idempotent.
std::vector<ManifestEntry> filter_manifest(const std::vector<ManifestEntry>& entries);

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

struct DatasetConfig {
  std::vector<SoundClass> classes = all_sound_classes();
  int clips_per_class = 64;
  double train_frac = 0.8;
  double val_frac = 0.1;
  double noise_snr_db = 8.0;
  double duration_s = 1.024;
  uint64_t seed = 1;
  DspConfig dsp = DspConfig::desk();
  int pool_factor = 4;

  void validate() const;
};

struct BuiltDataset {
  std::vector<ManifestEntry> train, val, test;
};

// Emits per-clip clean and noisy WAVs, train/val/test JSONL manifests, and
// a mel bank ("<clip>_<quality>.full" / ".lowres" records) under root.
// Byte-reproducible from (config, seed).
BuiltDataset build_dataset(const DatasetConfig& cfg, const std::string& root);

// Key "<clip_id>_<quality>" -> (full log-mel [bins*frames], lowres
// [bins/f * frames/f]), as written by build_dataset.
struct MelBank {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> entries;
  int full_bins = 0, full_frames = 0, low_bins = 0, low_frames = 0;

  const std::pair<std::vector<double>, std::vector<double>>& at(const std::string& key) const;
};

MelBank load_mel_bank(const std::string& path);

std::string mel_key(const ManifestEntry& e);

// 4x4-style average pooling on log-mel values.
std::vector<double> pool_mel(const std::vector<double>& full, int bins, int frames, int factor);

}  // namespace cascade
