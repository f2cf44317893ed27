#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cascade/prompt.hpp"
#include "testutil.hpp"

using namespace cascade;

TEST_CASE("normalize_text drops stop words, digits and punctuation") {
  const std::set<std::string> stops = {"the", "a", "of"};
  CHECK(normalize_text("Footsteps, 03 Running!", stops) == "footsteps running");
  CHECK(normalize_text("", stops) == "");
  CHECK(normalize_text("the dog barks", {"the"}) == "dog barks");
}

TEST_CASE("normalize_text is idempotent") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  for (SoundClass c : all_sound_classes()) {
    for (const auto& tmpl : corpus.templates.at(c)) {
      const std::string once = normalize_text(tmpl, corpus.stop_words);
      CHECK(normalize_text(once, corpus.stop_words) == once);
    }
  }
}

TEST_CASE("attach_quality_prefix matches the documented prompt format") {
  CHECK(attach_quality_prefix("puppy bark", Quality::kClean) == "clean recording, puppy bark");
  CHECK(attach_quality_prefix("puppy bark", Quality::kNoisy) == "noisy recording, puppy bark");
  CHECK(attach_quality_prefix("", Quality::kClean) == "clean recording, ");
}

TEST_CASE("prefix after normalize never reintroduces digits or stop words") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const SoundClass c = all_sound_classes()[rng.below(kNumSoundClasses)];
    PromptRecord rec = sample_prompt(corpus, c, Quality::kNoisy, rng);
    const std::string full = attach_quality_prefix(rec.normalized_text, rec.quality);
    const std::string after_comma = full.substr(full.find(',') + 1);
    std::istringstream words(after_comma);
    std::string w;
    while (words >> w) {
      CHECK(!corpus.stop_words.count(w));
      for (char ch : w) CHECK(!std::isdigit(static_cast<unsigned char>(ch)));
    }
  }
}

TEST_CASE("footstep corpus carries the canonical snow template") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  bool found = false;
  for (const auto& t : corpus.templates.at(SoundClass::kFootstep)) {
    if (t.find("footsteps on snow") != std::string::npos) found = true;
  }
  CHECK(found);
  for (SoundClass c : all_sound_classes()) {
    CHECK(corpus.templates.at(c).size() >= 3);
  }
}

TEST_CASE("sample_prompt is deterministic per seed and uniform over templates") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  {
    Rng a(42), b(42);
    PromptRecord ra = sample_prompt(corpus, SoundClass::kRain, Quality::kClean, a);
    PromptRecord rb = sample_prompt(corpus, SoundClass::kRain, Quality::kClean, b);
    CHECK(ra.raw_text == rb.raw_text);
    CHECK(ra.tokens == rb.tokens);
  }
  const auto& templates = corpus.templates.at(SoundClass::kKeyboard);
  REQUIRE(templates.size() == 4);
  std::map<std::string, int> counts;
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    counts[sample_prompt(corpus, SoundClass::kKeyboard, Quality::kClean, rng).raw_text]++;
  }
  // 3 sigma of Binomial(1000, 1/4) around 250
  const double sigma = std::sqrt(1000.0 * 0.25 * 0.75);
  for (const auto& t : templates) {
    CHECK(std::fabs(counts[t] - 250.0) <= 3.0 * sigma);
  }
}

TEST_CASE("unknown class template lookup fails") {
  PromptCorpus corpus = PromptCorpus::builtin();
  corpus.templates.erase(SoundClass::kRain);
  Rng rng(1);
  CHECK_THROWS_AS(sample_prompt(corpus, SoundClass::kRain, Quality::kClean, rng), ConfigError);
}

TEST_CASE("record tokens decode to '<quality> , normalized_text'") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  Rng rng(11);
  PromptRecord clean = sample_prompt(corpus, SoundClass::kDogBark, Quality::kClean, rng);
  CHECK(detokenize(corpus, clean.tokens) == "<clean> , " + clean.normalized_text);
  PromptRecord noisy = make_prompt_record(corpus, clean.raw_text, SoundClass::kDogBark,
                                          Quality::kNoisy);
  CHECK(detokenize(corpus, noisy.tokens) == "<noisy> , " + noisy.normalized_text);
  CHECK(clean.normalized_text == noisy.normalized_text);
}

TEST_CASE("tokenize round-trips vocabulary-covered strings and names OOV tokens") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  for (const std::string s : {"footsteps running", "<clean> , rain falling on roof", "<null>"}) {
    CHECK(detokenize(corpus, tokenize(corpus, s)) == s);
  }
  try {
    tokenize(corpus, "zzzunknown");
    FAIL("expected error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("zzzunknown") != std::string::npos);
  }
}

TEST_CASE("corpus file round trip preserves templates and stop words") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "casc_prompt_test";
  fs::create_directories(dir);
  const PromptCorpus corpus = PromptCorpus::builtin();
  corpus.save((dir / "prompts.txt").string(), (dir / "stop.txt").string());
  const PromptCorpus loaded =
      PromptCorpus::load((dir / "prompts.txt").string(), (dir / "stop.txt").string());
  CHECK(loaded.templates == corpus.templates);
  CHECK(loaded.stop_words == corpus.stop_words);
  CHECK(loaded.vocab == corpus.vocab);
  fs::remove_all(dir);
}

TEST_CASE("text encoder: shape contract, distinct prompts, prefix sensitivity") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  ParamStore store;
  Rng rng(3);
  TextEncoder enc(store, "lowres.text", corpus.vocab_size(), 32, 2, 16, rng);

  Rng prng(9);
  PromptRecord a = sample_prompt(corpus, SoundClass::kRain, Quality::kClean, prng);
  PromptRecord b = sample_prompt(corpus, SoundClass::kKeyboard, Quality::kClean, prng);

  ConditioningBundle ba = enc.encode(a);
  CHECK(ba.text_tokens.dim(0) == static_cast<int64_t>(a.tokens.size()));
  CHECK(ba.text_tokens.dim(1) == 32);
  CHECK(ba.pooled.numel() == 32);
  CHECK(!ba.is_null);
  CHECK(enc.encode_null().is_null);

  ConditioningBundle bb = enc.encode(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < 32; ++i) {
    dot += ba.pooled.data()[i] * bb.pooled.data()[i];
    na += ba.pooled.data()[i] * ba.pooled.data()[i];
    nb += bb.pooled.data()[i] * bb.pooled.data()[i];
  }
  CHECK(dot / std::sqrt(na * nb) < 1.0 - 1e-6);

  // same prompt, prefix token swapped: output must change
  PromptRecord a_noisy = make_prompt_record(corpus, a.raw_text, a.sound_class, Quality::kNoisy);
  ConditioningBundle bn = enc.encode(a_noisy);
  double max_diff = 0.0;
  for (size_t i = 0; i < bn.pooled.data().size(); ++i) {
    max_diff = std::max(max_diff, std::fabs(bn.pooled.data()[i] - ba.pooled.data()[i]));
  }
  CHECK(max_diff > 0.0);
}
