#include <benchmark/benchmark.h>

#include "reasonseg/losses.h"
#include "reasonseg/model.h"
#include "reasonseg/scene.h"

using namespace reasonseg;

namespace {

const char* preset_name(int64_t i) { return i == 0 ? "tiny" : "desk"; }

std::unique_ptr<ReasoningSegModel> make_model(const std::string& preset) {
  Tokenizer tok;
  const std::vector<std::string> corpus = {"which object is red ? the cup on the left is red .",
                                           "Please segment the core objects according to the above dialogue"};
  tok.fit(corpus);
  return std::make_unique<ReasoningSegModel>(ModelConfig::preset(preset), std::move(tok));
}

ImageBuffer scene_image() {
  SceneConfig cfg;
  cfg.size = 128;
  return generate_scene(cfg, 7).image;
}

}  // namespace

static void BM_VisionEncode(benchmark::State& state) {
  auto model = make_model(preset_name(state.range(0)));
  const PreparedImage img = model->prepare(scene_image());
  for (auto _ : state) benchmark::DoNotOptimize(model->vision().encode(img.high, img.low));
  state.SetLabel(preset_name(state.range(0)));
}
BENCHMARK(BM_VisionEncode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_ForwardPass(benchmark::State& state) {
  auto model = make_model(preset_name(state.range(0)));
  const PreparedImage img = model->prepare(scene_image());
  const std::vector<Turn> turns = {{Role::User, "which object is red ?"}, {Role::Assistant, "the cup is red ."}};
  const RenderedPrompt prompt = render_turns(model->tokenizer(), turns, model->image_tokens(), model->config().lm.context);
  ag::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(img, prompt.ids));
  state.SetLabel(preset_name(state.range(0)));
}
BENCHMARK(BM_ForwardPass)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_RespondTiny(benchmark::State& state) {
  auto model = make_model("tiny");
  const PreparedImage img = model->prepare(scene_image());
  const std::vector<Turn> history = {{Role::User, "which object is red ?"}};
  const int tokens = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(model->respond(img, history, tokens));
}
BENCHMARK(BM_RespondTiny)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_SegLossBackward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  ag::Matrix logits = ag::Matrix::Random(side, side);
  BinaryMask target(side, side);
  for (auto _ : state) {
    ag::Var z = ag::leaf(logits);
    const ag::Var loss = bce_loss(z, target) + dice_loss(z, target);
    ag::backward(loss);
    benchmark::DoNotOptimize(z.grad());
  }
}
BENCHMARK(BM_SegLossBackward)->Arg(32)->Arg(128);
