#include <random>

#include <benchmark/benchmark.h>

#include "reasonseg/evaluation.h"
#include "reasonseg/generator.h"
#include "reasonseg/png_codec.h"
#include "reasonseg/scene.h"

using namespace reasonseg;

namespace {

BinaryMask noisy_mask(int side, double p, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::bernoulli_distribution bit(p);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(side * side));
  for (auto& b : bits) b = bit(rng);
  return BinaryMask(side, side, std::move(bits));
}

std::string sentence(std::mt19937& rng, int words) {
  static const char* vocab[] = {"the", "red", "cup", "is", "left", "of", "a", "blue", "box", "near", "small", "ring"};
  std::uniform_int_distribution<int> pick(0, 11);
  std::string s;
  for (int i = 0; i < words; ++i) s += std::string(i ? " " : "") + vocab[pick(rng)];
  return s;
}

}  // namespace

static void BM_Ciou(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  std::vector<BinaryMask> a, b;
  for (std::uint32_t i = 0; i < 16; ++i) {
    a.push_back(noisy_mask(side, 0.3, i));
    b.push_back(noisy_mask(side, 0.3, i + 100));
  }
  for (auto _ : state) benchmark::DoNotOptimize(seg_scores(a, b));
  state.SetItemsProcessed(state.iterations() * 16 * side * side);
}
BENCHMARK(BM_Ciou)->Arg(64)->Arg(256);

static void BM_TextMetrics(benchmark::State& state) {
  std::mt19937 rng(1);
  const std::string pred = sentence(rng, static_cast<int>(state.range(0)));
  const std::string ref = sentence(rng, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(text_metrics(pred, {ref}));
}
BENCHMARK(BM_TextMetrics)->Arg(20)->Arg(120);

static void BM_PorterStem(benchmark::State& state) {
  const std::vector<std::string> words = {"generalization", "relational", "hopping", "ponies", "adjustment", "cats"};
  for (auto _ : state)
    for (const auto& w : words) benchmark::DoNotOptimize(porter_stem(w));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(words.size()));
}
BENCHMARK(BM_PorterStem);

static void BM_MaskPngRoundTrip(benchmark::State& state) {
  const BinaryMask m = noisy_mask(static_cast<int>(state.range(0)), 0.5, 3);
  for (auto _ : state) benchmark::DoNotOptimize(png_to_mask(mask_to_png(m)));
}
BENCHMARK(BM_MaskPngRoundTrip)->Arg(128)->Arg(512);

static void BM_GenerateScene(benchmark::State& state) {
  SceneConfig cfg;
  cfg.size = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_scene(cfg, seed++));
}
BENCHMARK(BM_GenerateScene)->Arg(128)->Arg(256);

static void BM_CohenKappa(benchmark::State& state) {
  std::vector<BinaryMask> a, b;
  for (std::uint32_t i = 0; i < 8; ++i) {
    a.push_back(noisy_mask(128, 0.2, i));
    b.push_back(noisy_mask(128, 0.2, i + 50));
  }
  for (auto _ : state) benchmark::DoNotOptimize(cohen_kappa(a, b));
}
BENCHMARK(BM_CohenKappa);
