#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cascade/dataset.hpp"
#include "cascade/diffusion.hpp"
#include "cascade/foley.hpp"
#include "cascade/inverter.hpp"
#include "cascade/unet_lowres.hpp"
#include "cascade/unet_upsampler.hpp"
#include "testutil.hpp"

using namespace cascade;

namespace {

ArchitectureConfig tiny_arch() {
  ArchitectureConfig cfg;
  cfg.num_blocks = 2;
  cfg.convs_per_block = 1;
  cfg.base_channels = 4;
  cfg.lowres_bins = 4;
  cfg.lowres_frames = 8;
  cfg.target_bins = 16;
  cfg.target_frames = 32;
  cfg.text_dim = 8;
  cfg.time_embed_dim = 8;
  cfg.text_layers = 1;
  return cfg;
}

UpsamplerConfig tiny_upsampler() {
  UpsamplerConfig cfg;
  cfg.num_blocks = 2;
  cfg.convs_per_block = 1;
  cfg.base_channels = 4;
  cfg.lowres_bins = 2;
  cfg.lowres_frames = 4;
  cfg.target_bins = 8;
  cfg.target_frames = 16;
  cfg.time_embed_dim = 8;
  return cfg;
}

TextBatch batch_of(const PromptRecord& rec, int n = 1) {
  std::vector<const PromptRecord*> ptrs(static_cast<size_t>(n), &rec);
  return TextBatch::from_records(ptrs);
}

}  // namespace

TEST_CASE("arch config: paper channel sequence and divisibility errors") {
  ArchitectureConfig paper = ArchitectureConfig::paper();
  CHECK(paper.channel_sequence() == std::vector<int>{192, 384, 576, 768, 960});
  CHECK(paper.pool_factor() == 4);
  paper.validate();

  ArchitectureConfig bad = ArchitectureConfig::desk();
  bad.lowres_bins = 6;  // not divisible by 2^3, and breaks the 4x factor
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("lowres unet: deterministic build, forward shape, conditioning wired") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  ArchitectureConfig cfg = ArchitectureConfig::desk();
  LowresUNet a(cfg, corpus, 42);
  LowresUNet b(cfg, corpus, 42);
  REQUIRE(a.params().items().size() == b.params().items().size());
  CHECK(a.params().total_params() > 0);
  CHECK(a.params().total_params() == b.params().total_params());
  for (size_t i = 0; i < a.params().items().size(); ++i) {
    CHECK(a.params().items()[i].first == b.params().items()[i].first);
    CHECK(testutil::bits_equal(a.params().items()[i].second.data(),
                               b.params().items()[i].second.data()));
  }

  Rng rng(1);
  Tensor x = Tensor::randn({2, 1, cfg.lowres_bins, cfg.lowres_frames}, rng);
  Rng prng(2);
  PromptRecord rec = sample_prompt(corpus, SoundClass::kRain, Quality::kClean, prng);

  NoGradGuard ng;
  Tensor with_text = a.forward(x, {10, 50}, batch_of(rec, 2));
  CHECK(with_text.shape() == x.shape());
  Tensor with_null = a.forward(x, {10, 50}, TextBatch::null_batch(2));
  double max_diff = 0.0;
  for (size_t i = 0; i < with_text.data().size(); ++i) {
    max_diff = std::max(max_diff, std::fabs(with_text.data()[i] - with_null.data()[i]));
  }
  CHECK(max_diff > 0.0);

  Tensor wrong = Tensor::randn({2, 1, cfg.lowres_bins + 2, cfg.lowres_frames}, rng);
  CHECK_THROWS_AS(a.forward(wrong, {10, 50}, batch_of(rec, 2)), DimensionError);
}

TEST_CASE("lowres unet: doubling base channels roughly quadruples conv parameters") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  auto conv_params = [](const LowresUNet& net) {
    int64_t total = 0;
    for (const auto& [name, t] : net.params().items()) {
      if (t.rank() == 4) total += t.numel();
    }
    return total;
  };
  ArchitectureConfig small = ArchitectureConfig::desk();
  ArchitectureConfig big = ArchitectureConfig::desk();
  big.base_channels = small.base_channels * 2;
  LowresUNet net_small(small, corpus, 1);
  LowresUNet net_big(big, corpus, 1);
  const double ratio = static_cast<double>(conv_params(net_big)) /
                       static_cast<double>(conv_params(net_small));
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);
}

TEST_CASE("lowres unet: every parameter tensor receives gradient") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  ArchitectureConfig cfg = tiny_arch();
  LowresUNet net(cfg, corpus, 7);
  Rng rng(3);
  Tensor x = Tensor::randn({2, 1, cfg.lowres_bins, cfg.lowres_frames}, rng);
  Rng prng(4);
  PromptRecord r1 = sample_prompt(corpus, SoundClass::kDogBark, Quality::kClean, prng);
  PromptRecord r2 = sample_prompt(corpus, SoundClass::kRain, Quality::kNoisy, prng);
  TextBatch text = TextBatch::from_records({&r1, &r2});
  Tensor target = Tensor::randn(x.shape(), rng);

  net.params().zero_grad();
  mse_loss(net.forward(x, {3, 9}, text), target).backward();
  for (const auto& [name, t] : net.params().items()) {
    double max_g = 0.0;
    for (double g : t.grad()) max_g = std::max(max_g, std::fabs(g));
    INFO(name);
    CHECK(max_g > 0.0);
  }
}

TEST_CASE("lowres unet gradients match finite differences") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  ArchitectureConfig cfg = tiny_arch();
  for (uint64_t seed = 0; seed < 5; ++seed) {
    LowresUNet net(cfg, corpus, 100 + seed);
    Rng rng(seed);
    Tensor x = Tensor::randn({1, 1, cfg.lowres_bins, cfg.lowres_frames}, rng, 1.0, true);
    Rng prng(seed + 1);
    PromptRecord rec = sample_prompt(corpus, SoundClass::kKeyboard, Quality::kClean, prng);
    TextBatch text = batch_of(rec);
    Rng trng(11);
    Tensor target = Tensor::randn(x.shape(), trng);
    auto loss = [&]() { return mse_loss(net.forward(x, {5}, text), target); };

    std::vector<Tensor> probes = {x,
                                  net.params().at("lowres.enc0.conv0.weight"),
                                  net.params().at("lowres.mid_attn.to_k.weight"),
                                  net.params().at("lowres.text.tok_emb"),
                                  net.params().at("lowres.dec1.time_proj.weight"),
                                  net.params().at("lowres.out_conv.weight")};
    Rng probe_rng(seed);
    CHECK(testutil::max_grad_rel_error(loss, probes, probe_rng, 6) < 1e-3);
  }
}

TEST_CASE("upsampler: shape contract, live conditioning, structurally text-free") {
  UpsamplerConfig cfg = UpsamplerConfig::desk();
  UpsamplerUNet net(cfg, 21);
  Rng rng(5);
  Tensor x = Tensor::randn({2, 1, cfg.target_bins, cfg.target_frames}, rng);
  Tensor low = Tensor::randn({2, 1, cfg.lowres_bins, cfg.lowres_frames}, rng);

  NoGradGuard ng;
  Tensor out = net.forward(x, {10, 20}, low);
  CHECK(out.shape() == x.shape());

  // permute the conditioning batch: outputs must change
  std::vector<double> swapped = low.data();
  const size_t half = swapped.size() / 2;
  for (size_t i = 0; i < half; ++i) std::swap(swapped[i], swapped[half + i]);
  Tensor low_swapped = Tensor::from_data(low.shape(), std::move(swapped));
  Tensor out_swapped = net.forward(x, {10, 20}, low_swapped);
  double diff = 0.0;
  for (size_t i = 0; i < out.data().size(); ++i) {
    diff = std::max(diff, std::fabs(out.data()[i] - out_swapped.data()[i]));
  }
  CHECK(diff > 0.0);

  // inputs are exactly {x_t, t, lowres}: no text parameters exist
  for (const auto& [name, t] : net.params().items()) {
    CHECK(name.find("text") == std::string::npos);
    CHECK(name.find("attn") == std::string::npos);
  }

  Tensor bad = Tensor::randn({2, 1, cfg.lowres_bins + 1, cfg.lowres_frames}, rng);
  CHECK_THROWS_AS(net.forward(x, {10, 20}, bad), DimensionError);

  UpsamplerConfig paper = UpsamplerConfig::paper();
  CHECK(paper.channel_sequence() == std::vector<int>{128, 256, 384, 512});
  paper.validate();
}

TEST_CASE("upsampler: gradient reaches the conditioning pathway") {
  UpsamplerConfig cfg = tiny_upsampler();
  UpsamplerUNet net(cfg, 8);
  Rng rng(6);
  Tensor x = Tensor::randn({2, 1, cfg.target_bins, cfg.target_frames}, rng);
  Tensor low = Tensor::randn({2, 1, cfg.lowres_bins, cfg.lowres_frames}, rng, 1.0, true);
  Tensor target = Tensor::randn(x.shape(), rng);

  net.params().zero_grad();
  low.zero_grad();
  mse_loss(net.forward(x, {3, 4}, low), target).backward();
  double low_grad = 0.0;
  for (double g : low.grad()) low_grad = std::max(low_grad, std::fabs(g));
  CHECK(low_grad > 0.0);
  double in_conv_grad = 0.0;
  for (double g : net.params().at("upsampler.in_conv.weight").grad()) {
    in_conv_grad = std::max(in_conv_grad, std::fabs(g));
  }
  CHECK(in_conv_grad > 0.0);
}

TEST_CASE("upsampler gradients match finite differences") {
  UpsamplerConfig cfg = tiny_upsampler();
  for (uint64_t seed = 0; seed < 5; ++seed) {
    UpsamplerUNet net(cfg, 200 + seed);
    Rng rng(seed);
    Tensor x = Tensor::randn({1, 1, cfg.target_bins, cfg.target_frames}, rng, 1.0, true);
    Tensor low = Tensor::randn({1, 1, cfg.lowres_bins, cfg.lowres_frames}, rng, 1.0, true);
    Rng trng(13);
    Tensor target = Tensor::randn(x.shape(), trng);
    auto loss = [&]() { return mse_loss(net.forward(x, {7}, low), target); };
    std::vector<Tensor> probes = {x, low, net.params().at("upsampler.in_conv.weight"),
                                  net.params().at("upsampler.dec0.conv0.weight")};
    Rng probe_rng(seed);
    CHECK(testutil::max_grad_rel_error(loss, probes, probe_rng, 6) < 1e-3);
  }
}

TEST_CASE("film identities: zero modulation is exact identity, unit gamma doubles") {
  Rng rng(9);
  Tensor x = Tensor::randn({2, 3, 5}, rng);
  Tensor zeros = Tensor::zeros({2, 3});
  Tensor ones = Tensor::full({2, 3}, 1.0);
  Tensor same = film(x, zeros, zeros);
  CHECK(testutil::bits_equal(same.data(), x.data()));
  Tensor twice = film(x, ones, zeros);
  for (size_t i = 0; i < x.data().size(); ++i) {
    CHECK(twice.data()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));
  }
  Tensor bad = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(film(x, bad, zeros), DimensionError);
}

TEST_CASE("inverter: output length is hop * frames; config mismatch rejected") {
  InverterConfig cfg = InverterConfig::desk();
  MelInverter inv(cfg, 128, 33);

  NoGradGuard ng;
  Rng rng(10);
  for (int frames : {32, 128}) {
    Tensor mel = Tensor::randn({1, cfg.mel_bins, frames}, rng);
    Tensor out = inv.forward(mel);
    CHECK(out.shape() == Shape{1, 1, static_cast<int64_t>(frames) * 128});
    for (double v : out.data()) CHECK(std::fabs(v) < 1.0);
  }

  MelSpectrogram mel;
  mel.mel_bins = cfg.mel_bins;
  mel.frames = 128;
  mel.config = DspConfig::desk();
  mel.values.assign(static_cast<size_t>(cfg.mel_bins) * 128, std::log(1e-5));
  Waveform w = inv.invert(mel);
  CHECK(w.size() == 16384);

  MelSpectrogram wrong = mel;
  wrong.config.hop_length = 64;
  CHECK_THROWS_AS(inv.invert(wrong), ConfigError);
  MelSpectrogram wrong_bins = mel;
  wrong_bins.mel_bins = 16;
  wrong_bins.values.resize(16 * 128);
  CHECK_THROWS_AS(inv.invert(wrong_bins), ConfigError);

  InverterConfig bad = cfg;
  bad.upsample_factors = {8, 4};
  CHECK_THROWS_AS(MelInverter(bad, 128, 1), ConfigError);
}

TEST_CASE("inverter: FiLM ablation changes the output") {
  InverterConfig cfg = InverterConfig::desk();
  MelInverter inv(cfg, 128, 44);
  NoGradGuard ng;
  Rng rng(11);
  Tensor mel = Tensor::randn({1, cfg.mel_bins, 16}, rng);
  Tensor with_film = inv.forward(mel, true);
  Tensor without = inv.forward(mel, false);
  double diff = 0.0;
  for (size_t i = 0; i < with_film.data().size(); ++i) {
    diff = std::max(diff, std::fabs(with_film.data()[i] - without.data()[i]));
  }
  CHECK(diff > 0.0);
}

TEST_CASE("inverter gradients match finite differences (tiny config)") {
  InverterConfig cfg;
  cfg.upsample_factors = {4, 2};
  cfg.channels = {8, 6, 4};
  cfg.num_residual_layers = 1;
  cfg.mel_bins = 6;
  cfg.cond_channels = 4;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    MelInverter inv(cfg, 8, 300 + seed);
    Rng rng(seed);
    Tensor mel = Tensor::randn({1, 6, 5}, rng, 1.0, true);
    Rng trng(15);
    Tensor target = Tensor::randn({1, 1, 40}, trng, 0.3);
    auto loss = [&]() { return mse_loss(inv.forward(mel), target); };
    std::vector<Tensor> probes = {mel, inv.params().at("inverter.pre.weight"),
                                  inv.params().at("inverter.up0.weight"),
                                  inv.params().at("inverter.film_gamma1.weight"),
                                  inv.params().at("inverter.post.weight")};
    Rng probe_rng(seed);
    CHECK(testutil::max_grad_rel_error(loss, probes, probe_rng, 6) < 1e-3);
  }
}

TEST_CASE("multi-resolution stft loss: zero at identity, gradients check out") {
  Rng rng(12);
  std::vector<SpectralBasis> bases = {make_spectral_basis(64, 16)};
  Tensor x = Tensor::randn({1, 1, 256}, rng, 0.3);
  Tensor same = multi_resolution_stft_loss(x, x, bases);
  CHECK(same.item() < 1e-5);

  for (uint64_t seed = 0; seed < 3; ++seed) {
    Rng grng(400 + seed);
    Tensor gen = Tensor::randn({1, 1, 256}, grng, 0.3, true);
    Tensor target = Tensor::randn({1, 1, 256}, grng, 0.3);
    auto loss = [&]() { return multi_resolution_stft_loss(gen, target, bases); };
    Rng probe_rng(seed);
    CHECK(testutil::max_grad_rel_error(loss, {gen}, probe_rng, 10) < 1e-3);
  }
}

TEST_CASE("lowres unet memorizes a single sample and the sampler recovers it") {
  const PromptCorpus corpus = PromptCorpus::builtin();
  ArchitectureConfig cfg = ArchitectureConfig::desk();
  LowresUNet net(cfg, corpus, 77);
  NoiseSchedule sched = make_schedule(ScheduleKind::kCosine, 200);

  // target: normalized pooled mel of one synthetic clip
  SynthFoleyParams params = SynthFoleyParams::defaults(SoundClass::kRain);
  params.duration_s = 1.024;
  DspConfig dsp = DspConfig::desk();
  MelSpectrogram mel = melspec(synth_class_clip(SoundClass::kRain, params, 5), dsp);
  std::vector<double> low = pool_mel(mel.values, mel.mel_bins, mel.frames, 4);
  for (auto& v : low) v = mel_to_unit(v);
  Tensor target = Tensor::from_data({1, 1, cfg.lowres_bins, cfg.lowres_frames}, std::move(low));

  Rng prng(3);
  PromptRecord rec = sample_prompt(corpus, SoundClass::kRain, Quality::kClean, prng);
  TextBatch text = batch_of(rec);

  DenoiseFn model = [&](const Tensor& x_t, const std::vector<int>& ts) {
    return net.forward(x_t, ts, text);
  };
  Adam opt(net.params(), 2e-3);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 500; ++step) {
    net.params().zero_grad();
    Tensor loss = diffusion_training_loss(model, target, sched, 99, static_cast<uint64_t>(step));
    loss.backward();
    opt.step();
    if (step == 0) first = loss.item();
    last = loss.item();
  }
  CHECK(last < 0.7 * first);

  SamplerConfig sampler;
  sampler.seed = 31337;
  Tensor sample = sample_loop(model, nullptr, target.shape(), sched, sampler);
  double mse = 0.0;
  for (size_t i = 0; i < sample.data().size(); ++i) {
    const double d = sample.data()[i] - target.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(sample.numel());
  CHECK(mse < 0.1);
}
