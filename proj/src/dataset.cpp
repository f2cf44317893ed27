#include "cascade/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cascade/checkpoint.hpp"
#include "cascade/error.hpp"

namespace cascade {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<ManifestEntry> filter_manifest(const std::vector<ManifestEntry>& entries) {
  static const std::set<std::string> kBlocked = {"speech", "music", "singing", "instrument"};
  std::vector<ManifestEntry> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    bool blocked = false;
    for (const auto& tag : e.tags) {
      if (kBlocked.count(tag)) {
        blocked = true;
        break;
      }
    }
    if (!blocked) out.push_back(e);
  }
  return out;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + path);
  for (const auto& e : entries) {
    json j;
    j["path"] = e.path;
    j["clip_id"] = e.clip_id;
    j["class"] = sound_class_name(e.sound_class);
    j["quality"] = quality_name(e.quality);
    j["tags"] = e.tags;
    j["duration"] = e.duration_s;
    j["prompt"] = e.prompt;
    j["synth_seed"] = e.synth_seed;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("manifest write failed: " + path);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw StateError("missing manifest: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ManifestEntry e;
    e.path = j.at("path").get<std::string>();
    e.clip_id = j.at("clip_id").get<std::string>();
    e.sound_class = sound_class_from_string(j.at("class").get<std::string>());
    e.quality = quality_from_string(j.at("quality").get<std::string>());
    e.tags = j.at("tags").get<std::vector<std::string>>();
    e.duration_s = j.at("duration").get<double>();
    e.prompt = j.value("prompt", "");
    e.synth_seed = j.value("synth_seed", 0ULL);
    out.push_back(std::move(e));
  }
  return out;
}

void DatasetConfig::validate() const {
  if (classes.empty()) throw ConfigError("dataset: need at least one class");
  if (clips_per_class < 1) throw ConfigError("dataset: clips_per_class must be >= 1");
  if (!(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0 + 1e-12)) {
    throw ConfigError("dataset: bad split fractions");
  }
  if (duration_s <= 0.0) throw ConfigError("dataset: duration must be positive");
  dsp.validate();
  if (pool_factor < 1) throw ConfigError("dataset: pool factor must be >= 1");
}

std::string mel_key(const ManifestEntry& e) { return e.clip_id + "_" + quality_name(e.quality); }

std::vector<double> pool_mel(const std::vector<double>& full, int bins, int frames, int factor) {
  if (bins % factor != 0 || frames % factor != 0) {
    throw DimensionError("pool_mel: " + std::to_string(bins) + "x" + std::to_string(frames) +
                         " not divisible by " + std::to_string(factor));
  }
  const int lb = bins / factor, lf = frames / factor;
  std::vector<double> low(static_cast<size_t>(lb) * lf, 0.0);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (int m = 0; m < lb; ++m) {
    for (int t = 0; t < lf; ++t) {
      double acc = 0.0;
      for (int i = 0; i < factor; ++i) {
        for (int j = 0; j < factor; ++j) {
          acc += full[static_cast<size_t>(m * factor + i) * frames + (t * factor + j)];
        }
      }
      low[static_cast<size_t>(m) * lf + t] = acc * inv;
    }
  }
  return low;
}

BuiltDataset build_dataset(const DatasetConfig& cfg, const std::string& root) {
  cfg.validate();
  const fs::path root_path(root);
  std::error_code ec;
  fs::create_directories(root_path / "audio", ec);
  if (ec) throw IoError("cannot create dataset dir " + (root_path / "audio").string() + ": " +
                        ec.message());

  const PromptCorpus corpus = PromptCorpus::builtin();
  corpus.save((root_path / "prompts.txt").string(), (root_path / "stopwords.txt").string());

  BuiltDataset ds;
  std::vector<std::pair<std::string, Tensor>> mel_records;
  const int n_train = static_cast<int>(cfg.clips_per_class * cfg.train_frac);
  const int n_val = static_cast<int>(cfg.clips_per_class * cfg.val_frac);

  for (size_t ci = 0; ci < cfg.classes.size(); ++ci) {
    const SoundClass cls = cfg.classes[ci];
    SynthFoleyParams params = SynthFoleyParams::defaults(cls);
    params.duration_s = cfg.duration_s;
    params.sample_rate = cfg.dsp.sample_rate;
    params.noise_snr_db = cfg.noise_snr_db;

    for (int k = 0; k < cfg.clips_per_class; ++k) {
      const uint64_t clip_seed = rngmix::mix3(cfg.seed, ci + 1, static_cast<uint64_t>(k));
      char idbuf[64];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", sound_class_name(cls).c_str(), k);
      const std::string clip_id = idbuf;

      const Waveform clean = synth_class_clip(cls, params, clip_seed);
      const Waveform noisy =
          make_noisy_variant(clean, params.noise_snr_db, rngmix::mix2(clip_seed, 0x401EULL));

      Rng prompt_rng(rngmix::mix2(clip_seed, 0x9801ULL));
      const size_t tmpl_count = corpus.templates.at(cls).size();
      const std::string tmpl =
          corpus.templates.at(cls)[static_cast<size_t>(prompt_rng.below(tmpl_count))];

      for (Quality q : {Quality::kClean, Quality::kNoisy}) {
        const Waveform& w = q == Quality::kClean ? clean : noisy;
        ManifestEntry e;
        e.clip_id = clip_id;
        e.sound_class = cls;
        e.quality = q;
        e.tags = {sound_class_name(cls)};
        e.duration_s = cfg.duration_s;
        e.prompt = tmpl;
        e.synth_seed = clip_seed;
        e.path = "audio/" + clip_id + "_" + quality_name(q) + ".wav";
        write_wav((root_path / e.path).string(), w);

        const MelSpectrogram mel = melspec(w, cfg.dsp);
        const std::vector<double> low =
            pool_mel(mel.values, mel.mel_bins, mel.frames, cfg.pool_factor);
        mel_records.emplace_back(mel_key(e) + ".full",
                                 Tensor::from_data({mel.mel_bins, mel.frames}, mel.values));
        mel_records.emplace_back(
            mel_key(e) + ".lowres",
            Tensor::from_data({mel.mel_bins / cfg.pool_factor, mel.frames / cfg.pool_factor},
                              low));

        auto& split = k < n_train ? ds.train : (k < n_train + n_val ? ds.val : ds.test);
        split.push_back(std::move(e));
      }
    }
  }

  save_manifest((root_path / "train.jsonl").string(), ds.train);
  save_manifest((root_path / "val.jsonl").string(), ds.val);
  save_manifest((root_path / "test.jsonl").string(), ds.test);
  save_checkpoint((root_path / "mels.bin").string(), mel_records);
  return ds;
}

const std::pair<std::vector<double>, std::vector<double>>& MelBank::at(
    const std::string& key) const {
  auto it = entries.find(key);
  if (it == entries.end()) throw StateError("mel bank has no entry for " + key);
  return it->second;
}

MelBank load_mel_bank(const std::string& path) {
  MelBank bank;
  for (auto& [name, tensor] : load_checkpoint(path)) {
    const bool is_full = name.size() > 5 && name.substr(name.size() - 5) == ".full";
    const bool is_low = name.size() > 7 && name.substr(name.size() - 7) == ".lowres";
    if (!is_full && !is_low) continue;
    const std::string key = name.substr(0, name.rfind('.'));
    auto& slot = bank.entries[key];
    if (is_full) {
      slot.first = tensor.data();
      bank.full_bins = static_cast<int>(tensor.dim(0));
      bank.full_frames = static_cast<int>(tensor.dim(1));
    } else {
      slot.second = tensor.data();
      bank.low_bins = static_cast<int>(tensor.dim(0));
      bank.low_frames = static_cast<int>(tensor.dim(1));
    }
  }
  return bank;
}

}  // namespace cascade
