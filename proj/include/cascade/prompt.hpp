#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cascade/nn.hpp"
#include "cascade/rng.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

// The seven DCASE foley classes, in the evaluation table's order.
enum class SoundClass {
  kDogBark,
  kFootstep,
  kGunShot,
  kKeyboard,
  kMotorVehicle,
  kRain,
  kSneezeCough,
};

inline constexpr int kNumSoundClasses = 7;
const std::vector<SoundClass>& all_sound_classes();
std::string sound_class_name(SoundClass c);     // "dog_bark", ...
std::string sound_class_label(SoundClass c);    // "Dog bark", ... (report rows)
SoundClass sound_class_from_string(const std::string& s);

enum class Quality { kClean, kNoisy };
std::string quality_name(Quality q);
Quality quality_from_string(const std::string& s);

// Reserved vocabulary ids. <null> doubles as the classifier-free
// unconditional token; <pad> fills ragged batches.
inline constexpr int kTokenNull = 0;
inline constexpr int kTokenPad = 1;
inline constexpr int kTokenClean = 2;
inline constexpr int kTokenNoisy = 3;
inline constexpr int kTokenComma = 4;

struct PromptRecord {
  std::string raw_text;
  std::string normalized_text;
  Quality quality = Quality::kClean;
  SoundClass sound_class = SoundClass::kDogBark;
  std::vector<int> tokens;  // [<quality>, ",", word ids...]
};

struct PromptCorpus {
  std::map<SoundClass, std::vector<std::string>> templates;
  std::set<std::string> stop_words;
  std::vector<std::string> vocab;          // id -> token text
  std::map<std::string, int> vocab_index;  // token text -> id

  int vocab_size() const { return static_cast<int>(vocab.size()); }
  void validate() const;

  // Fixed in-repo corpus: 4 templates per class, 25 stop words.
  static PromptCorpus builtin();
  // "class<TAB>template" per line; stop words one per line.
  static PromptCorpus load(const std::string& templates_path, const std::string& stop_words_path);
  void save(const std::string& templates_path, const std::string& stop_words_path) const;
};

// Lowercase, strip punctuation, drop stop words and any token containing a
// digit, single-space join. Idempotent.
std::string normalize_text(const std::string& raw, const std::set<std::string>& stop_words);

// "clean recording, {text}" / "noisy recording, {text}"
std::string attach_quality_prefix(const std::string& text, Quality q);

int quality_token(Quality q);

// Whitespace tokenizer over the corpus vocabulary; unknown token raises a
// DimensionError naming it.
std::vector<int> tokenize(const PromptCorpus& corpus, const std::string& text);
std::string detokenize(const PromptCorpus& corpus, const std::vector<int>& tokens);

// Uniform template draw for the class; deterministic given the rng state.
PromptRecord sample_prompt(const PromptCorpus& corpus, SoundClass c, Quality q, Rng& rng);
// Build a record from explicit text (the --prompt path).
PromptRecord make_prompt_record(const PromptCorpus& corpus, const std::string& raw, SoundClass c,
                                Quality q);

// Conditioning produced by the text encoder for one prompt.
struct ConditioningBundle {
  Tensor text_tokens;  // [T, dim]
  Tensor pooled;       // [dim]
  bool is_null = false;
};

// Token batch ready for the U-Net: ids padded to a common length.
struct TextBatch {
  std::vector<std::vector<int>> ids;  // [N][T], padded with kTokenPad
  int length = 0;

  static TextBatch from_records(const std::vector<const PromptRecord*>& records);
  static TextBatch null_batch(int n);
  // [N, Tq, T] additive logit bias masking padded keys.
  Tensor key_bias(int queries) const;
};

// Trainable stand-in for the pre-trained language model: embedding lookup
// plus self-attention layers, trained jointly with the low-res stage.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore& store, const std::string& prefix, int vocab_size, int dim,
              int num_layers, int max_len, Rng& rng);

  int dim() const { return dim_; }
  int max_len() const { return max_len_; }

  // tokens [N,T,dim] and pooled [N,dim].
  std::pair<Tensor, Tensor> encode_batch(const TextBatch& batch) const;
  ConditioningBundle encode(const PromptRecord& record) const;
  ConditioningBundle encode_null() const;

 private:
  struct Layer {
    nn::LayerNorm ln1, ln2;
    nn::Linear to_q, to_k, to_v, to_out, fc1, fc2;
  };
  Tensor tok_emb_, pos_emb_;
  std::vector<Layer> layers_;
  nn::LayerNorm ln_final_;
  int dim_ = 0;
  int max_len_ = 0;
};

}  // namespace cascade
