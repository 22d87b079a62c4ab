#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "gradcheck.h"
#include "reasonseg/checkpoint.h"
#include "reasonseg/errors.h"
#include "reasonseg/generator.h"
#include "reasonseg/losses.h"
#include "reasonseg/optimizer.h"
#include "reasonseg/training.h"
#include "temp_dir.h"

namespace reasonseg {
namespace {

using testing::grad_check;
using testing::TempDir;

// Relative-error floor for composite checks; see segmentation_head_test.
constexpr double kFloor = 1e-4;

BinaryMask half_mask(int w, int h) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(x, y, y < h / 2);
  return m;
}

ag::Matrix random_matrix(std::mt19937_64& rng, int r, int c, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  ag::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

TEST(BceLoss, ZeroLogitsGiveLnTwoForAnyTarget) {
  const auto z = ag::constant(ag::Matrix::Zero(4, 4));
  EXPECT_NEAR(bce_loss(z, half_mask(4, 4)).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(z, BinaryMask(4, 4, true)).item(), std::log(2.0), 1e-12);
}

TEST(BceLoss, SaturatedPerfectPredictionIsZero) {
  const BinaryMask m = half_mask(4, 4);
  ag::Matrix logits = (mask_to_matrix(m).array() * 2 - 1) * 60.0;
  EXPECT_NEAR(bce_loss(ag::constant(logits), m).item(), 0.0, 1e-12);
}

TEST(BceLoss, MatchesElementwiseOracle) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution bit(0.4);
  for (int trial = 0; trial < 20; ++trial) {
    const ag::Matrix z = random_matrix(rng, 8, 8, 3.0);
    BinaryMask m(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) m.set(x, y, bit(rng));
    double oracle = 0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double p = 1.0 / (1.0 + std::exp(-z(y, x)));
        oracle += m.at(x, y) ? -std::log(p) : -std::log(1 - p);
      }
    EXPECT_NEAR(bce_loss(ag::constant(z), m).item(), oracle / 64, 1e-9);
  }
}

TEST(DiceLoss, HalfProbabilityOnHalfTarget) {
  // 1 - (2*4 + 1) / (8 + 8 + 1)
  EXPECT_NEAR(dice_loss(ag::constant(ag::Matrix::Zero(4, 4)), half_mask(4, 4)).item(), 1.0 - 9.0 / 17.0, 1e-6);
  EXPECT_NEAR(1.0 - 9.0 / 17.0, 0.4706, 1e-4);
}

TEST(DiceLoss, PerfectAndEmptyCasesAreNearZero) {
  const BinaryMask m = half_mask(4, 4);
  ag::Matrix logits = (mask_to_matrix(m).array() * 2 - 1) * 60.0;
  EXPECT_NEAR(dice_loss(ag::constant(logits), m).item(), 0.0, 1e-9);
  EXPECT_NEAR(dice_loss(ag::constant(ag::Matrix::Constant(4, 4, -60.0)), BinaryMask(4, 4)).item(), 0.0, 1e-9);
}

TEST(Losses, RangesOnRandomInputs) {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution bit(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = ag::constant(random_matrix(rng, 6, 5, 4.0));
    BinaryMask m(5, 6);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 5; ++x) m.set(x, y, bit(rng));
    EXPECT_GE(bce_loss(z, m).item(), 0.0);
    const double d = dice_loss(z, m).item();
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(Losses, ShapeMismatchRejected) {
  const auto z = ag::constant(ag::Matrix::Zero(4, 4));
  EXPECT_THROW(bce_loss(z, BinaryMask(4, 5)), InvalidInput);
  EXPECT_THROW(dice_loss(z, BinaryMask(5, 4)), InvalidInput);
}

TEST(TotalLoss, DefaultWeightsOnWorkedExample) {
  const LossWeights w;
  EXPECT_EQ(w.text, 1.0);
  EXPECT_EQ(w.bce, 2.0);
  EXPECT_EQ(w.dice, 0.5);
  const auto c = [](double v) { return ag::constant(ag::Matrix::Constant(1, 1, v)); };
  EXPECT_NEAR(total_loss(c(0.5), c(0.2), c(0.4), w).item(), 1.1, 1e-15);
  EXPECT_EQ(total_loss(c(0.5), c(0.2), c(0.4), w).item(), 1.0 * 0.5 + 2.0 * 0.2 + 0.5 * 0.4);
  EXPECT_EQ(total_loss(c(0), c(0), c(0), w).item(), 0.0);
  EXPECT_EQ(total_loss(c(0.5), c(0.2), c(0.4), LossWeights{0, 0, 0}).item(), 0.0);
  EXPECT_EQ(total_loss(c(0.5), ag::Var(), ag::Var(), w).item(), 0.5);
}

TEST(TotalLoss, NonFinitePartAndNegativeWeightRejected) {
  const auto c = [](double v) { return ag::constant(ag::Matrix::Constant(1, 1, v)); };
  EXPECT_THROW(total_loss(c(std::numeric_limits<double>::quiet_NaN()), c(0), c(0), LossWeights{}), NumericError);
  EXPECT_THROW(total_loss(c(0), c(std::numeric_limits<double>::infinity()), c(0), LossWeights{}), NumericError);
  EXPECT_THROW((LossWeights{-1, 2, 0.5}.validate()), InvalidInput);
}

TEST(TextLoss, UniformLogitsGiveLnV) {
  const int V = 13;
  const std::vector<int> ids = {1, 4, 7, 2, 9};
  const std::vector<std::uint8_t> mask = {0, 0, 1, 1, 1};
  const auto logits = ag::constant(ag::Matrix::Zero(5, V));
  EXPECT_NEAR(text_loss(logits, ids, mask).item(), std::log(static_cast<double>(V)), 1e-12);
}

TEST(TextLoss, OneHotLogitsGiveZeroAndUserTokensDoNotMatter) {
  const int V = 10;
  std::vector<int> ids = {1, 4, 7, 2, 9};
  const std::vector<std::uint8_t> mask = {0, 0, 1, 1, 1};
  ag::Matrix z = ag::Matrix::Zero(5, V);
  for (int t = 0; t + 1 < 5; ++t) z(t, ids[static_cast<std::size_t>(t + 1)]) = 80.0;
  EXPECT_NEAR(text_loss(ag::constant(z), ids, mask).item(), 0.0, 1e-12);

  std::mt19937_64 rng(2);
  const ag::Matrix r = random_matrix(rng, 5, V, 1.0);
  const double before = text_loss(ag::constant(r), ids, mask).item();
  ids[1] = 3;  // a user token
  EXPECT_EQ(text_loss(ag::constant(r), ids, mask).item(), before);
}

TEST(TextLoss, AllMaskedContributesZero) {
  const std::vector<int> ids = {1, 2, 3};
  const std::vector<std::uint8_t> mask = {0, 0, 0};
  EXPECT_EQ(text_loss(ag::constant(ag::Matrix::Ones(3, 5)), ids, mask).item(), 0.0);
}

TEST(LossGradients, MatchCentralDifferences) {
  std::mt19937_64 rng(6);
  const BinaryMask m = half_mask(5, 4);
  auto z = ag::leaf(random_matrix(rng, 4, 5, 1.5));
  EXPECT_LT(grad_check([&] { return bce_loss(z, m); }, {z}, 1e-6, kFloor).max_rel_error, 1e-4);
  EXPECT_LT(grad_check([&] { return dice_loss(z, m); }, {z}, 1e-6, kFloor).max_rel_error, 1e-4);
  const std::vector<int> ids = {0, 3, 1, 4};
  const std::vector<std::uint8_t> mask = {0, 1, 1, 1};
  auto l = ag::leaf(random_matrix(rng, 4, 6, 1.0));
  EXPECT_LT(grad_check([&] { return text_loss(l, ids, mask); }, {l}, 1e-6, kFloor).max_rel_error, 1e-4);
}

TEST(LossGradients, TotalIsWeightedSumOfParts) {
  std::mt19937_64 rng(7);
  const BinaryMask m = half_mask(4, 4);
  const std::vector<int> ids = {0, 3, 1, 4};
  const std::vector<std::uint8_t> mask = {0, 1, 1, 1};
  auto z = ag::leaf(random_matrix(rng, 4, 4, 1.0));
  auto l = ag::leaf(random_matrix(rng, 4, 6, 1.0));
  const LossWeights w;
  auto f = [&] { return total_loss(text_loss(l, ids, mask), bce_loss(z, m), dice_loss(z, m), w); };
  EXPECT_LT(grad_check(f, {z, l}, 1e-6, kFloor).max_rel_error, 1e-4);

  z.zero_grad();
  ag::backward(f());
  const ag::Matrix total_grad = z.grad();
  z.zero_grad();
  ag::backward(bce_loss(z, m));
  const ag::Matrix g_bce = z.grad();
  z.zero_grad();
  ag::backward(dice_loss(z, m));
  const ag::Matrix g_dice = z.grad();
  EXPECT_LT((total_grad - (w.bce * g_bce + w.dice * g_dice)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LrSchedule, LinearWarmupThenLinearDecay) {
  const LrSchedule s(3e-4, 100, 2000);
  EXPECT_DOUBLE_EQ(s.at(50), 0.5 * 3e-4);
  EXPECT_DOUBLE_EQ(s.at(100), 3e-4);
  EXPECT_DOUBLE_EQ(s.at(2000), 0.0);
  EXPECT_NEAR(s.at(1050), 1.5e-4, 1e-12);
  for (int t = 1; t < 100; ++t) EXPECT_LT(s.at(t), s.at(t + 1));
  for (int t = 100; t < 2000; ++t) EXPECT_GT(s.at(t), s.at(t + 1));
  EXPECT_THROW(LrSchedule(0.0, 10, 100), InvalidInput);
  EXPECT_THROW(LrSchedule(1e-3, -1, 100), InvalidInput);
  EXPECT_THROW(LrSchedule(1e-3, 10, 0), InvalidInput);
}

TEST(AdamW, MatchesHandWrittenUpdateAndSkipsFrozen) {
  nn::ParameterStore store;
  auto w = store.create("w", "a", (ag::Matrix(1, 3) << 1.0, -2.0, 0.5).finished());
  auto f = store.create("f", "b", (ag::Matrix(1, 2) << 3.0, 4.0).finished());
  store.set_group_trainable("b", false);
  const AdamWConfig cfg{0.9, 0.95, 1e-8, 0.1};
  AdamW opt(store, cfg);

  ag::Matrix m = ag::Matrix::Zero(1, 3), v = ag::Matrix::Zero(1, 3), p = w.value();
  const ag::Matrix f0 = f.value();
  std::mt19937_64 rng(3);
  for (int t = 1; t <= 3; ++t) {
    const ag::Matrix g = random_matrix(rng, 1, 3, 1.0);
    // Loss sum(g .* w) has gradient g.
    ag::backward(ag::sum(ag::mul(w, ag::constant(g))));
    opt.step(0.01);
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g.cwiseProduct(g);
    const ag::Matrix mh = m / (1 - std::pow(cfg.beta1, t));
    const ag::Matrix vh = v / (1 - std::pow(cfg.beta2, t));
    p = p - 0.01 * cfg.weight_decay * p;
    p = p.array() - 0.01 * mh.array() / (vh.array().sqrt() + cfg.eps);
    EXPECT_LT((w.value() - p).cwiseAbs().maxCoeff(), 1e-14) << "step " << t;
    EXPECT_FALSE(w.has_grad() && w.grad().cwiseAbs().maxCoeff() > 0);
  }
  EXPECT_EQ(f.value(), f0);
  EXPECT_EQ(opt.steps_taken(), 3);
}

TEST(AdamW, SaveLoadResumesIdentically) {
  auto run = [](int steps, const std::string* state, std::string* saved, ag::Matrix start) {
    nn::ParameterStore store;
    auto w = store.create("w", "a", start);
    AdamW opt(store, {});
    if (state) {
      std::istringstream in(*state);
      opt.load(in);
    }
    for (int i = 0; i < steps; ++i) {
      ag::backward(ag::sum(ag::mul(w, w)));
      opt.step(0.05);
    }
    if (saved) {
      std::ostringstream out;
      opt.save(out);
      *saved = out.str();
    }
    return w.value();
  };
  const ag::Matrix start = (ag::Matrix(2, 2) << 1, 2, 3, 4).finished();
  const ag::Matrix straight = run(4, nullptr, nullptr, start);
  std::string state;
  const ag::Matrix half = run(2, nullptr, &state, start);
  const ag::Matrix resumed = run(2, &state, nullptr, half);
  EXPECT_EQ(straight, resumed);
}

TEST(TrainConfig, StageDefaultsAndJsonRoundTrip) {
  const auto s1 = TrainConfig::for_stage(1);
  EXPECT_DOUBLE_EQ(s1.lr, 3e-4);
  EXPECT_EQ(s1.batch, 16);
  EXPECT_EQ(s1.grad_accum, 10);
  EXPECT_EQ(s1.warmup_steps, 100);
  EXPECT_DOUBLE_EQ(s1.adam.beta1, 0.9);
  EXPECT_DOUBLE_EQ(s1.adam.beta2, 0.95);
  EXPECT_DOUBLE_EQ(s1.adam.weight_decay, 0.0);
  const auto s2 = TrainConfig::for_stage(2);
  EXPECT_DOUBLE_EQ(s2.lr, 1e-5);
  EXPECT_EQ(s2.batch, 32);
  EXPECT_EQ(s2.steps, 800);
  ASSERT_EQ(s2.mixture.size(), 2u);
  EXPECT_EQ(s2.mixture[0].name, "dialogue");
  EXPECT_DOUBLE_EQ(s2.mixture[0].weight / s2.mixture[1].weight, 4.0);
  const auto m1 = default_mixture(1);
  ASSERT_EQ(m1.size(), 4u);
  EXPECT_DOUBLE_EQ(m1[0].weight, 9);
  EXPECT_DOUBLE_EQ(m1[1].weight, 6);
  EXPECT_DOUBLE_EQ(m1[2].weight, 2);
  EXPECT_DOUBLE_EQ(m1[3].weight, 2);

  const nlohmann::json j = s2;
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);
  TrainConfig bad = s1;
  bad.lr = -1;
  EXPECT_THROW(bad.validate(), InvalidInput);
}

// Tiny synthetic dataset plus a tiny model over it.
class TinyTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("train_data");
    GenConfig g;
    g.out_dir = dir_->path();
    g.num_images = 4;
    g.seed = 3;
    g.scene.size = 64;
    g.split_ratio = {1, 0, 0};
    generate_dataset(g);
    dataset_ = new Dataset(load_dataset(dir_->path() / "manifest.jsonl"));
  }
  static void TearDownTestSuite() {
    delete dataset_;
    delete dir_;
  }

  static ModelConfig model_config() { return ModelConfig::preset("tiny"); }

  static std::unique_ptr<ReasoningSegModel> fresh_model(const ExamplePool& pool) {
    Tokenizer tok;
    tok.fit(pool.corpus());
    return std::make_unique<ReasoningSegModel>(model_config(), std::move(tok));
  }

  static TrainConfig quick(int stage) {
    TrainConfig c = TrainConfig::for_stage(stage);
    c.batch = 1;
    c.grad_accum = 1;
    c.steps = 10;
    c.warmup_steps = 2;
    c.lr = 1e-3;
    c.seed = 5;
    c.log_every = 0;
    return c;
  }

  static TempDir* dir_;
  static Dataset* dataset_;
};
TempDir* TinyTraining::dir_ = nullptr;
Dataset* TinyTraining::dataset_ = nullptr;

TEST_F(TinyTraining, PoolBuildsEveryComponent) {
  ExamplePool pool(*dataset_, dataset_->split(""), model_config().vision);
  for (const char* name : {"dialogue", "object_seg", "referring_seg", "vqa", "caption"}) {
    EXPECT_TRUE(pool.has(name)) << name;
  }
  for (const auto& ex : pool.component("object_seg")) {
    ASSERT_TRUE(ex.mask);
    EXPECT_EQ(ex.mask->width(), model_config().vision.high_res);
  }
  for (const auto& ex : pool.component("vqa")) EXPECT_FALSE(ex.mask);
  EXPECT_THROW(pool.component("nonexistent"), InvalidInput);
}

TEST_F(TinyTraining, ExampleLossHasSegTermsOnlyWithMask) {
  ExamplePool pool(*dataset_, dataset_->split(""), model_config().vision);
  auto model = fresh_model(pool);
  const auto seg = example_loss(*model, pool.component("dialogue").front(), LossWeights{});
  EXPECT_TRUE(seg.bce.defined());
  EXPECT_TRUE(seg.dice.defined());
  EXPECT_NEAR(seg.total.item(), seg.text.item() + 2.0 * seg.bce.item() + 0.5 * seg.dice.item(), 1e-12);
  const auto vqa = example_loss(*model, pool.component("vqa").front(), LossWeights{});
  EXPECT_FALSE(vqa.bce.defined());
  EXPECT_NEAR(vqa.total.item(), vqa.text.item(), 1e-15);
  // An untrained model is close to uniform over the vocabulary.
  EXPECT_NEAR(vqa.text.item(), std::log(static_cast<double>(model->tokenizer().size())), 1.0);
}

TEST_F(TinyTraining, FrozenSetsUnchangedTrainableSetsMoveAfterTenSteps) {
  ExamplePool pool(*dataset_, dataset_->split(""), model_config().vision);
  auto model = fresh_model(pool);
  model->apply_freezing_policy(false);
  std::map<std::string, ag::Matrix> before;
  for (const auto& p : model->params().params()) before[p.name] = p.var.value();

  Trainer trainer(*model, quick(1), pool);
  for (int i = 0; i < 10; ++i) trainer.step();

  std::map<std::string, double> group_delta;
  for (const auto& p : model->params().params()) {
    const double d = (p.var.value() - before[p.name]).cwiseAbs().maxCoeff();
    group_delta[p.group] = std::max(group_delta[p.group], d);
  }
  for (const auto& g : frozen_groups()) EXPECT_EQ(group_delta.at(g), 0.0) << g;
  for (const auto& g : trainable_groups()) EXPECT_GT(group_delta.at(g), 0.0) << g;
}

TEST_F(TinyTraining, SameSeedSameLossTrajectory) {
  ExamplePool pool(*dataset_, dataset_->split(""), model_config().vision);
  auto trajectory = [&] {
    auto model = fresh_model(pool);
    model->apply_freezing_policy(true);
    auto cfg = quick(1);
    cfg.steps = 3;
    Trainer trainer(*model, cfg, pool);
    std::vector<double> out;
    for (int i = 0; i < 3; ++i) out.push_back(trainer.step().total);
    return out;
  };
  EXPECT_EQ(trajectory(), trajectory());
}

TEST_F(TinyTraining, MissingMixtureComponentFailsFastByName) {
  std::vector<DialogueSample> stripped;
  for (const auto* s : dataset_->split("")) {
    stripped.push_back(*s);
    stripped.back().scene_caption.clear();
  }
  std::vector<const DialogueSample*> ptrs;
  for (const auto& s : stripped) ptrs.push_back(&s);
  ExamplePool pool(*dataset_, ptrs, model_config().vision);
  auto model = fresh_model(pool);
  try {
    Trainer trainer(*model, quick(1), pool);
    FAIL() << "expected InvalidInput";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("caption"), std::string::npos) << e.what();
  }
}

TEST_F(TinyTraining, StageTwoRequiresStageOneCheckpoint) {
  TempDir out("stage2");
  TrainRequest req{quick(2), model_config(), dir_->path() / "manifest.jsonl", out.path(), std::nullopt};
  EXPECT_THROW(run_training(req), InvalidInput);
  req.init_checkpoint = out.path() / "missing";
  EXPECT_THROW(run_training(req), InvalidInput);
}

TEST_F(TinyTraining, RunTrainingWritesLogAndCheckpointsThenStageTwoContinues) {
  TempDir out1("run1"), out2("run2");
  auto cfg = quick(1);
  cfg.steps = 2;
  cfg.checkpoint_every = 1;
  const auto r1 = run_training({cfg, model_config(), dir_->path() / "manifest.jsonl", out1.path(), std::nullopt});
  EXPECT_TRUE(std::filesystem::exists(out1 / "step_1" / "params.bin"));
  EXPECT_TRUE(std::filesystem::exists(out1 / "step_2" / "vocab.txt"));
  EXPECT_TRUE(std::filesystem::exists(out1 / "step_2" / "config.snapshot"));
  EXPECT_TRUE(std::filesystem::exists(out1 / "config.snapshot"));
  std::ifstream log(out1 / "train_log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"step", "L_t", "bce", "dice", "total", "lr"}) EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(lines, 2);
  EXPECT_EQ(r1.final_checkpoint, out1 / "step_2");

  auto cfg2 = quick(2);
  cfg2.steps = 1;
  const auto r2 = run_training({cfg2, model_config(), dir_->path() / "manifest.jsonl", out2.path(), out1.path()});
  const auto ck = load_checkpoint(r2.final_checkpoint);
  EXPECT_EQ(ck.state.stage, 2);

  // A stage-2 checkpoint cannot seed another stage-2 run.
  TempDir out3("run3");
  EXPECT_THROW(run_training({cfg2, model_config(), dir_->path() / "manifest.jsonl", out3.path(), out2.path()}),
               InvalidInput);
}

TEST_F(TinyTraining, CheckpointReloadIsBitIdentical) {
  ExamplePool pool(*dataset_, dataset_->split(""), model_config().vision);
  auto model = fresh_model(pool);
  model->apply_freezing_policy(true);
  Trainer trainer(*model, quick(1), pool);
  trainer.step();
  TempDir out("ckpt");
  save_checkpoint(out / "step_1", *model, nlohmann::json(quick(1)), {1, 1, trainer.rng_state()}, &trainer.optimizer());

  const auto ck = load_checkpoint(out.path());
  EXPECT_EQ(ck.dir, out / "step_1");
  EXPECT_EQ(ck.state.stage, 1);
  EXPECT_EQ(ck.state.step, 1);
  EXPECT_EQ(ck.state.rng, trainer.rng_state());
  EXPECT_TRUE(ck.has_optimizer);
  EXPECT_EQ(ck.model->tokenizer(), model->tokenizer());
  ASSERT_EQ(ck.model->params().params().size(), model->params().params().size());
  for (std::size_t i = 0; i < model->params().params().size(); ++i) {
    EXPECT_EQ(ck.model->params().params()[i].var.value(), model->params().params()[i].var.value());
  }
  ag::NoGradGuard guard;
  const auto& ex = pool.component("dialogue").front();
  const auto prompt = render_turns(model->tokenizer(), ex.turns, model->image_tokens(), model->config().lm.context);
  const auto a = model->forward(*ex.image, prompt.ids);
  const auto b = ck.model->forward(*ex.image, prompt.ids);
  EXPECT_EQ(a.lm.logits.value(), b.lm.logits.value());
  EXPECT_EQ(a.lm.hidden.value(), b.lm.hidden.value());
}

TEST_F(TinyTraining, ResumingFromCheckpointMatchesUninterruptedRun) {
  ExamplePool pool(*dataset_, dataset_->split(""), model_config().vision);
  auto cfg = quick(1);
  cfg.steps = 4;

  auto straight = fresh_model(pool);
  straight->apply_freezing_policy(true);
  Trainer t1(*straight, cfg, pool);
  for (int i = 0; i < 4; ++i) t1.step();

  auto first = fresh_model(pool);
  first->apply_freezing_policy(true);
  Trainer t2(*first, cfg, pool);
  for (int i = 0; i < 2; ++i) t2.step();
  TempDir out("resume");
  save_checkpoint(out / "step_2", *first, nlohmann::json(cfg), {1, 2, t2.rng_state()}, &t2.optimizer());

  auto ck = load_checkpoint(out.path());
  ck.model->apply_freezing_policy(true);
  Trainer t3(*ck.model, cfg, pool);
  t3.restore(ck.state.step, ck.state.rng);
  std::ifstream opt(ck.dir / "optimizer.bin", std::ios::binary);
  t3.optimizer().load(opt);
  for (int i = 0; i < 2; ++i) t3.step();

  for (std::size_t i = 0; i < straight->params().params().size(); ++i) {
    EXPECT_EQ(straight->params().params()[i].var.value(), ck.model->params().params()[i].var.value())
        << straight->params().params()[i].name;
  }
}

}  // namespace
}  // namespace reasonseg
