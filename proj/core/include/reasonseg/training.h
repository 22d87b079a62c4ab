#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reasonseg/checkpoint.h"
#include "reasonseg/dataset.h"
#include "reasonseg/losses.h"
#include "reasonseg/model.h"
#include "reasonseg/optimizer.h"

namespace reasonseg {

/// One slot of a training mixture and its sampling weight.
struct MixtureComponent {
  std::string name;
  double weight = 1.0;
};

/// Stage 1: object_seg 9, referring_seg 6, vqa 2, caption 2.
/// Stage 2: dialogue 4, vqa 1.
std::vector<MixtureComponent> default_mixture(int stage);

struct TrainConfig {
  int stage = 1;
  double lr = 3e-4;
  int warmup_steps = 100;
  int steps = 2000;
  int batch = 16;
  int grad_accum = 10;
  AdamWConfig adam;
  LossWeights weights;
  double dice_eps = 1.0;
  std::uint64_t seed = 0;
  bool unfreeze_all = false;
  std::vector<MixtureComponent> mixture = default_mixture(1);
  std::string split = "train";
  int checkpoint_every = 0;  // 0 keeps only the final checkpoint
  int log_every = 1;

  /// Table defaults for stage 1 or 2.
  static TrainConfig for_stage(int stage);
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// A single supervised conversation. `mask` (at the model's high_res) is
/// present when the last assistant turn carries a segmentation span.
struct TrainingExample {
  std::string component;
  std::string sample_id;
  std::shared_ptr<const PreparedImage> image;
  std::vector<Turn> turns;
  std::optional<BinaryMask> mask;
};

/// Builds every mixture component from dataset samples and loads each
/// source image once.
class ExamplePool {
 public:
  ExamplePool(const Dataset& dataset, const std::vector<const DialogueSample*>& samples, const EncoderConfig& enc);

  /// Throws InvalidInput naming the component when it is absent or empty.
  const std::vector<TrainingExample>& component(const std::string& name) const;
  bool has(const std::string& name) const;
  /// Every utterance of every example, for fitting a vocabulary.
  std::vector<std::string> corpus() const;
  const std::vector<TrainingExample>& dialogues() const { return component("dialogue"); }

 private:
  std::map<std::string, std::vector<TrainingExample>> components_;
};

/// Instruction texts used for the stage-1 stand-in components.
std::string object_instruction(const std::string& target_class);
std::string referring_instruction(const std::string& description);
inline constexpr std::string_view kCaptionInstruction = "Describe the image .";

struct ExampleLoss {
  ag::Var text;
  ag::Var bce;   // undefined when the example has no mask
  ag::Var dice;  // undefined when the example has no mask
  ag::Var total;
};

/// Teacher-forced forward pass and the weighted loss of one example.
ExampleLoss example_loss(const ReasoningSegModel& model, const TrainingExample& example, const LossWeights& weights,
                         double dice_eps = 1.0);

struct TrainLogRecord {
  int step = 0;
  double text = 0;
  double bce = 0;
  double dice = 0;
  double total = 0;
  double lr = 0;
};
void to_json(nlohmann::json& j, const TrainLogRecord& r);

/// Owns the optimizer and the sampling RNG for one stage.
class Trainer {
 public:
  Trainer(ReasoningSegModel& model, TrainConfig config, const ExamplePool& pool);

  /// One optimizer update over batch * grad_accum sampled examples.
  TrainLogRecord step();
  int steps_done() const { return step_; }
  double lr_at(int step) const { return schedule_.at(step); }

  AdamW& optimizer() { return optimizer_; }
  std::string rng_state() const;
  void restore(int step, const std::string& rng_state);

 private:
  const TrainingExample& sample();

  ReasoningSegModel& model_;
  TrainConfig config_;
  const ExamplePool& pool_;
  std::vector<const std::vector<TrainingExample>*> slots_;
  std::discrete_distribution<std::size_t> slot_dist_;
  std::mt19937_64 rng_;
  LrSchedule schedule_;
  AdamW optimizer_;
  int step_ = 0;
};

struct TrainRequest {
  TrainConfig train;
  ModelConfig model;  // stage 1 only; stage 2 takes the checkpoint's
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> init_checkpoint;  // required for stage 2
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<TrainLogRecord> log;
};

/// Runs one stage end to end: builds or loads the model, trains, writes
/// `train_log.jsonl` and `step_N/` checkpoints under out_dir. `on_step` is
/// called after every update when set.
TrainResult run_training(const TrainRequest& request,
                         const std::function<void(const TrainLogRecord&)>& on_step = {});

}  // namespace reasonseg
