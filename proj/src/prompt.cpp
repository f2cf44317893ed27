#include "cascade/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "cascade/error.hpp"

namespace cascade {

const std::vector<SoundClass>& all_sound_classes() {
  static const std::vector<SoundClass> classes = {
      SoundClass::kDogBark,     SoundClass::kFootstep, SoundClass::kGunShot,
      SoundClass::kKeyboard,    SoundClass::kMotorVehicle, SoundClass::kRain,
      SoundClass::kSneezeCough,
  };
  return classes;
}

std::string sound_class_name(SoundClass c) {
  switch (c) {
    case SoundClass::kDogBark: return "dog_bark";
    case SoundClass::kFootstep: return "footstep";
    case SoundClass::kGunShot: return "gun_shot";
    case SoundClass::kKeyboard: return "keyboard";
    case SoundClass::kMotorVehicle: return "motor_vehicle";
    case SoundClass::kRain: return "rain";
    case SoundClass::kSneezeCough: return "sneeze_cough";
  }
  return "unknown";
}

std::string sound_class_label(SoundClass c) {
  switch (c) {
    case SoundClass::kDogBark: return "Dog bark";
    case SoundClass::kFootstep: return "Footstep";
    case SoundClass::kGunShot: return "Gun shot";
    case SoundClass::kKeyboard: return "Keyboard";
    case SoundClass::kMotorVehicle: return "Motor vehicle";
    case SoundClass::kRain: return "Rain";
    case SoundClass::kSneezeCough: return "Sneeze & cough";
  }
  return "Unknown";
}

SoundClass sound_class_from_string(const std::string& s) {
  for (SoundClass c : all_sound_classes()) {
    if (sound_class_name(c) == s) return c;
  }
  throw ConfigError("unknown sound class: " + s);
}

std::string quality_name(Quality q) { return q == Quality::kClean ? "clean" : "noisy"; }

Quality quality_from_string(const std::string& s) {
  if (s == "clean") return Quality::kClean;
  if (s == "noisy") return Quality::kNoisy;
  throw ConfigError("unknown quality: " + s + " (want clean|noisy)");
}

int quality_token(Quality q) { return q == Quality::kClean ? kTokenClean : kTokenNoisy; }

void PromptCorpus::validate() const {
  for (SoundClass c : all_sound_classes()) {
    auto it = templates.find(c);
    if (it == templates.end() || it->second.size() < 3) {
      throw ConfigError("prompt corpus: class " + sound_class_name(c) +
                        " needs at least 3 templates");
    }
  }
  for (size_t i = 0; i < vocab.size(); ++i) {
    auto it = vocab_index.find(vocab[i]);
    if (it == vocab_index.end() || it->second != static_cast<int>(i)) {
      throw ConfigError("prompt corpus: vocabulary ids not dense at " + std::to_string(i));
    }
  }
}

namespace {

void build_vocab(PromptCorpus& corpus) {
  corpus.vocab = {"<null>", "<pad>", "<clean>", "<noisy>", ","};
  corpus.vocab_index.clear();
  for (size_t i = 0; i < corpus.vocab.size(); ++i) {
    corpus.vocab_index[corpus.vocab[i]] = static_cast<int>(i);
  }
  for (SoundClass c : all_sound_classes()) {
    auto it = corpus.templates.find(c);
    if (it == corpus.templates.end()) continue;
    for (const std::string& tmpl : it->second) {
      std::istringstream words(normalize_text(tmpl, corpus.stop_words));
      std::string w;
      while (words >> w) {
        if (!corpus.vocab_index.count(w)) {
          corpus.vocab_index[w] = static_cast<int>(corpus.vocab.size());
          corpus.vocab.push_back(w);
        }
      }
    }
  }
}

}  // namespace

PromptCorpus PromptCorpus::builtin() {
  PromptCorpus corpus;
  corpus.stop_words = {"the",  "a",    "an",    "of",    "to",   "and", "or",   "is",   "are",
                       "was",  "were", "be",    "been",  "being", "it",  "its",  "this", "that",
                       "these", "those", "as",  "at",    "by",   "for", "from"};
  corpus.templates[SoundClass::kDogBark] = {
      "a dog barking",
      "puppy bark",
      "large dog barking twice",
      "angry dog barks behind a fence",
  };
  corpus.templates[SoundClass::kFootstep] = {
      "footsteps on snow",
      "footsteps, running",
      "footsteps in a large room",
      "slow footsteps on a wooden floor",
  };
  corpus.templates[SoundClass::kGunShot] = {
      "a single gun shot",
      "gun shot with a long echo",
      "two distant gunshots",
      "rifle shot outdoors",
  };
  corpus.templates[SoundClass::kKeyboard] = {
      "typing on a keyboard",
      "fast mechanical keyboard typing",
      "slow typing on a laptop keyboard",
      "keyboard keys clacking",
  };
  corpus.templates[SoundClass::kMotorVehicle] = {
      "a car engine idling",
      "truck driving by",
      "motorcycle engine revving",
      "bus passing on a wet road",
  };
  corpus.templates[SoundClass::kRain] = {
      "rain falling on a roof",
      "heavy rain pouring",
      "light rain in a forest",
      "steady rain on pavement",
  };
  corpus.templates[SoundClass::kSneezeCough] = {
      "a person sneezing",
      "a man coughing",
      "loud sneeze indoors",
      "dry cough twice",
  };
  build_vocab(corpus);
  corpus.validate();
  return corpus;
}

PromptCorpus PromptCorpus::load(const std::string& templates_path,
                                const std::string& stop_words_path) {
  PromptCorpus corpus;
  std::ifstream stops(stop_words_path);
  if (!stops) throw IoError("cannot read stop words: " + stop_words_path);
  std::string line;
  while (std::getline(stops, line)) {
    if (!line.empty()) corpus.stop_words.insert(line);
  }
  std::ifstream tmpl(templates_path);
  if (!tmpl) throw IoError("cannot read prompt templates: " + templates_path);
  while (std::getline(tmpl, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError("prompt corpus line missing tab separator: " + line);
    }
    corpus.templates[sound_class_from_string(line.substr(0, tab))].push_back(line.substr(tab + 1));
  }
  build_vocab(corpus);
  corpus.validate();
  return corpus;
}

void PromptCorpus::save(const std::string& templates_path,
                        const std::string& stop_words_path) const {
  std::ofstream tmpl(templates_path, std::ios::trunc);
  if (!tmpl) throw IoError("cannot write prompt templates: " + templates_path);
  for (SoundClass c : all_sound_classes()) {
    auto it = templates.find(c);
    if (it == templates.end()) continue;
    for (const std::string& t : it->second) tmpl << sound_class_name(c) << "\t" << t << "\n";
  }
  std::ofstream stops(stop_words_path, std::ios::trunc);
  if (!stops) throw IoError("cannot write stop words: " + stop_words_path);
  for (const std::string& w : stop_words) stops << w << "\n";
}

std::string normalize_text(const std::string& raw, const std::set<std::string>& stop_words) {
  std::string lowered;
  lowered.reserve(raw.size());
  for (char ch : raw) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      lowered.push_back(static_cast<char>(std::tolower(u)));
    } else {
      lowered.push_back(' ');
    }
  }
  std::istringstream words(lowered);
  std::string w, out;
  while (words >> w) {
    if (stop_words.count(w)) continue;
    if (std::any_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      continue;
    }
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string attach_quality_prefix(const std::string& text, Quality q) {
  return (q == Quality::kClean ? std::string("clean recording, ") : std::string("noisy recording, ")) +
         text;
}

std::vector<int> tokenize(const PromptCorpus& corpus, const std::string& text) {
  std::istringstream words(text);
  std::string w;
  std::vector<int> out;
  while (words >> w) {
    auto it = corpus.vocab_index.find(w);
    if (it == corpus.vocab_index.end()) {
      throw DimensionError("tokenize: token '" + w + "' not in vocabulary");
    }
    out.push_back(it->second);
  }
  return out;
}

std::string detokenize(const PromptCorpus& corpus, const std::vector<int>& tokens) {
  std::string out;
  for (int id : tokens) {
    if (id < 0 || id >= corpus.vocab_size()) {
      throw DimensionError("detokenize: id " + std::to_string(id) + " out of range");
    }
    if (!out.empty()) out.push_back(' ');
    out += corpus.vocab[static_cast<size_t>(id)];
  }
  return out;
}

namespace {

PromptRecord finish_record(const PromptCorpus& corpus, std::string raw, SoundClass c, Quality q) {
  PromptRecord rec;
  rec.raw_text = std::move(raw);
  rec.sound_class = c;
  rec.quality = q;
  rec.normalized_text = normalize_text(rec.raw_text, corpus.stop_words);
  rec.tokens = {quality_token(q), kTokenComma};
  const std::vector<int> words = tokenize(corpus, rec.normalized_text);
  rec.tokens.insert(rec.tokens.end(), words.begin(), words.end());
  return rec;
}

}  // namespace

PromptRecord sample_prompt(const PromptCorpus& corpus, SoundClass c, Quality q, Rng& rng) {
  auto it = corpus.templates.find(c);
  if (it == corpus.templates.end() || it->second.empty()) {
    throw ConfigError("sample_prompt: no templates for class " + sound_class_name(c));
  }
  const auto& list = it->second;
  const size_t pick = static_cast<size_t>(rng.below(list.size()));
  return finish_record(corpus, list[pick], c, q);
}

PromptRecord make_prompt_record(const PromptCorpus& corpus, const std::string& raw, SoundClass c,
                                Quality q) {
  return finish_record(corpus, raw, c, q);
}

// ---------------------------------------------------------------------------
// text batches

TextBatch TextBatch::from_records(const std::vector<const PromptRecord*>& records) {
  TextBatch batch;
  size_t max_len = 1;
  for (const auto* r : records) max_len = std::max(max_len, r->tokens.size());
  batch.length = static_cast<int>(max_len);
  for (const auto* r : records) {
    std::vector<int> row = r->tokens;
    row.resize(max_len, kTokenPad);
    batch.ids.push_back(std::move(row));
  }
  return batch;
}

TextBatch TextBatch::null_batch(int n) {
  TextBatch batch;
  batch.length = 1;
  batch.ids.assign(static_cast<size_t>(n), {kTokenNull});
  return batch;
}

Tensor TextBatch::key_bias(int queries) const {
  const int64_t n = static_cast<int64_t>(ids.size());
  const int64_t t = length;
  std::vector<double> bias(static_cast<size_t>(n * queries * t), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; k < t; ++k) {
      if (ids[static_cast<size_t>(i)][static_cast<size_t>(k)] == kTokenPad) {
        for (int64_t q = 0; q < queries; ++q) {
          bias[static_cast<size_t>((i * queries + q) * t + k)] = -1e9;
        }
      }
    }
  }
  return Tensor::from_data({n, queries, t}, std::move(bias));
}

// ---------------------------------------------------------------------------
// text encoder

TextEncoder::TextEncoder(ParamStore& store, const std::string& prefix, int vocab_size, int dim,
                         int num_layers, int max_len, Rng& rng)
    : dim_(dim), max_len_(max_len) {
  tok_emb_ = store.add(prefix + ".tok_emb",
                       Tensor::randn({vocab_size, dim}, rng, 1.0 / std::sqrt(dim)));
  pos_emb_ = store.add(prefix + ".pos_emb",
                       Tensor::randn({max_len, dim}, rng, 1.0 / std::sqrt(dim)));
  for (int l = 0; l < num_layers; ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    Layer layer;
    layer.ln1 = nn::LayerNorm::create(store, base + ".ln1", dim);
    layer.ln2 = nn::LayerNorm::create(store, base + ".ln2", dim);
    layer.to_q = nn::Linear::create(store, base + ".to_q", dim, dim, rng);
    layer.to_k = nn::Linear::create(store, base + ".to_k", dim, dim, rng);
    layer.to_v = nn::Linear::create(store, base + ".to_v", dim, dim, rng);
    layer.to_out = nn::Linear::create(store, base + ".to_out", dim, dim, rng, 0.5);
    layer.fc1 = nn::Linear::create(store, base + ".fc1", dim, 2 * dim, rng);
    layer.fc2 = nn::Linear::create(store, base + ".fc2", 2 * dim, dim, rng, 0.5);
    layers_.push_back(std::move(layer));
  }
  ln_final_ = nn::LayerNorm::create(store, prefix + ".ln_final", dim);
}

std::pair<Tensor, Tensor> TextEncoder::encode_batch(const TextBatch& batch) const {
  if (batch.length > max_len_) {
    throw DimensionError("text encoder: sequence length " + std::to_string(batch.length) +
                         " exceeds max " + std::to_string(max_len_));
  }
  const int64_t n = static_cast<int64_t>(batch.ids.size());
  std::vector<std::vector<int>> pos_ids(static_cast<size_t>(n));
  for (auto& row : pos_ids) {
    row.resize(static_cast<size_t>(batch.length));
    for (int i = 0; i < batch.length; ++i) row[static_cast<size_t>(i)] = i;
  }
  Tensor x = add(embedding(tok_emb_, batch.ids), embedding(pos_emb_, pos_ids));
  const Tensor self_bias = batch.key_bias(batch.length);
  for (const Layer& layer : layers_) {
    Tensor h = layer.ln1.forward(x);
    Tensor attended = attention(layer.to_q.forward(h), layer.to_k.forward(h),
                                layer.to_v.forward(h), self_bias);
    x = add(x, layer.to_out.forward(attended));
    Tensor m = layer.fc2.forward(silu(layer.fc1.forward(layer.ln2.forward(x))));
    x = add(x, m);
  }
  x = ln_final_.forward(x);
  return {x, mean_axis1(x)};
}

ConditioningBundle TextEncoder::encode(const PromptRecord& record) const {
  TextBatch batch;
  batch.ids = {record.tokens};
  batch.length = static_cast<int>(record.tokens.size());
  auto [tokens, pooled] = encode_batch(batch);
  ConditioningBundle bundle;
  bundle.text_tokens = reshape(tokens, {static_cast<int64_t>(record.tokens.size()),
                                        static_cast<int64_t>(dim_)});
  bundle.pooled = reshape(pooled, {static_cast<int64_t>(dim_)});
  bundle.is_null = false;
  return bundle;
}

ConditioningBundle TextEncoder::encode_null() const {
  auto [tokens, pooled] = encode_batch(TextBatch::null_batch(1));
  ConditioningBundle bundle;
  bundle.text_tokens = reshape(tokens, {1, static_cast<int64_t>(dim_)});
  bundle.pooled = reshape(pooled, {static_cast<int64_t>(dim_)});
  bundle.is_null = true;
  return bundle;
}

}  // namespace cascade
