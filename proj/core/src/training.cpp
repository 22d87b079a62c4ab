#include "reasonseg/training.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace fs = std::filesystem;
using nlohmann::json;

std::vector<MixtureComponent> default_mixture(int stage) {
  if (stage == 1) return {{"object_seg", 9}, {"referring_seg", 6}, {"vqa", 2}, {"caption", 2}};
  if (stage == 2) return {{"dialogue", 4}, {"vqa", 1}};
  throw InvalidInput("stage must be 1 or 2");
}

TrainConfig TrainConfig::for_stage(int stage) {
  TrainConfig c;
  c.stage = stage;
  c.mixture = default_mixture(stage);
  if (stage == 2) {
    c.lr = 1e-5;
    c.batch = 32;
    c.steps = 800;
  }
  return c;
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw InvalidInput("stage must be 1 or 2");
  if (!(lr > 0)) throw InvalidInput("learning rate must be positive");
  if (steps < 1 || batch < 1 || grad_accum < 1) throw InvalidInput("steps, batch and grad_accum must be positive");
  if (warmup_steps < 0) throw InvalidInput("warmup_steps must be non-negative");
  if (mixture.empty()) throw InvalidInput("training mixture is empty");
  for (const auto& m : mixture) {
    if (!(m.weight > 0)) throw InvalidInput("mixture weight for " + m.name + " must be positive");
  }
  weights.validate();
}

void to_json(json& j, const TrainConfig& c) {
  json mix = json::object();
  for (const auto& m : c.mixture) mix[m.name] = m.weight;
  j = json{{"stage", c.stage},
           {"lr", c.lr},
           {"warmup_steps", c.warmup_steps},
           {"steps", c.steps},
           {"batch", c.batch},
           {"grad_accum", c.grad_accum},
           {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2},
           {"adam_eps", c.adam.eps},
           {"weight_decay", c.adam.weight_decay},
           {"lambda_t", c.weights.text},
           {"lambda_bce", c.weights.bce},
           {"lambda_dice", c.weights.dice},
           {"dice_eps", c.dice_eps},
           {"seed", c.seed},
           {"unfreeze_all", c.unfreeze_all},
           {"mixture", mix},
           {"split", c.split},
           {"checkpoint_every", c.checkpoint_every},
           {"log_every", c.log_every}};
}

void from_json(const json& j, TrainConfig& c) {
  // Stage defaults first, then any keys present override them.
  c = TrainConfig::for_stage(j.value("stage", c.stage));
  c.lr = j.value("lr", c.lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.grad_accum = j.value("grad_accum", c.grad_accum);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
  c.weights.text = j.value("lambda_t", c.weights.text);
  c.weights.bce = j.value("lambda_bce", c.weights.bce);
  c.weights.dice = j.value("lambda_dice", c.weights.dice);
  c.dice_eps = j.value("dice_eps", c.dice_eps);
  c.seed = j.value("seed", c.seed);
  c.unfreeze_all = j.value("unfreeze_all", c.unfreeze_all);
  if (j.contains("mixture")) {
    c.mixture.clear();
    for (const auto& [name, w] : j.at("mixture").items()) c.mixture.push_back({name, w.get<double>()});
  }
  c.split = j.value("split", c.split);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
}

std::string object_instruction(const std::string& target_class) {
  return "Please segment the " + target_class + " .";
}

std::string referring_instruction(const std::string& description) {
  return "Segment the object described as : " + description;
}

ExamplePool::ExamplePool(const Dataset& dataset, const std::vector<const DialogueSample*>& samples,
                         const EncoderConfig& enc) {
  std::map<std::string, std::shared_ptr<const PreparedImage>> images;
  std::map<std::string, bool> captioned;
  for (const DialogueSample* s : samples) {
    auto& image = images[s->image_path];
    if (!image) image = std::make_shared<const PreparedImage>(prepare_image(dataset.load_image(*s), enc));
    BinaryMask mask = dataset.load_mask(*s);
    if (mask.width() != image->width || mask.height() != image->height) {
      throw InvalidInput("sample " + s->sample_id + ": mask size differs from its image");
    }
    BinaryMask target = mask.resized(enc.high_res, enc.high_res);
    const std::string seg_reply = segmentation_response(s->target_class);
    auto add = [&](const std::string& comp, std::vector<Turn> turns, std::optional<BinaryMask> m) {
      components_[comp].push_back({comp, s->sample_id, image, std::move(turns), std::move(m)});
    };

    add("dialogue", s->turns, target);
    add("object_seg", {{Role::User, object_instruction(s->target_class)}, {Role::Assistant, seg_reply}}, target);
    // The last QA answer before the instruction describes the target.
    const std::size_t n = s->turns.size();
    add("referring_seg",
        {{Role::User, referring_instruction(s->turns[n - 3].text)}, {Role::Assistant, seg_reply}}, target);
    for (std::size_t i = 0; i + 3 < n; i += 2) add("vqa", {s->turns[i], s->turns[i + 1]}, std::nullopt);
    if (!s->scene_caption.empty() && !captioned[s->image_path]) {
      captioned[s->image_path] = true;
      add("caption", {{Role::User, std::string(kCaptionInstruction)}, {Role::Assistant, s->scene_caption}},
          std::nullopt);
    }
  }
}

bool ExamplePool::has(const std::string& name) const {
  auto it = components_.find(name);
  return it != components_.end() && !it->second.empty();
}

const std::vector<TrainingExample>& ExamplePool::component(const std::string& name) const {
  if (!has(name)) throw InvalidInput("training mixture component '" + name + "' has no data");
  return components_.at(name);
}

std::vector<std::string> ExamplePool::corpus() const {
  std::vector<std::string> texts = {std::string(kSegmentInstruction), std::string(kCaptionInstruction)};
  for (const auto& [name, examples] : components_) {
    for (const auto& e : examples)
      for (const auto& t : e.turns) texts.push_back(t.text);
  }
  return texts;
}

ExampleLoss example_loss(const ReasoningSegModel& model, const TrainingExample& example, const LossWeights& weights,
                         double dice_eps) {
  RenderedPrompt r = render_turns(model.tokenizer(), example.turns, model.image_tokens(), model.config().lm.context);
  auto pass = model.forward(*example.image, r.ids);
  ExampleLoss out;
  out.text = text_loss(pass.lm.logits, r.ids, r.assistant);
  if (example.mask) {
    auto seg = model.segment(*example.image, pass.lm.hidden, r.ids);
    if (!seg.prediction) {
      throw InvalidInput("example " + example.sample_id + " has a mask but no single [OBJ]..[SEG] span");
    }
    out.bce = bce_loss(seg.prediction->logits, *example.mask);
    out.dice = dice_loss(seg.prediction->logits, *example.mask, dice_eps);
  }
  out.total = total_loss(out.text, out.bce, out.dice, weights);
  return out;
}

void to_json(json& j, const TrainLogRecord& r) {
  j = json{{"step", r.step}, {"L_t", r.text}, {"bce", r.bce}, {"dice", r.dice}, {"total", r.total}, {"lr", r.lr}};
}

namespace {

std::discrete_distribution<std::size_t> slot_distribution(const std::vector<MixtureComponent>& mixture) {
  std::vector<double> w;
  for (const auto& m : mixture) w.push_back(m.weight);
  return std::discrete_distribution<std::size_t>(w.begin(), w.end());
}

}  // namespace

Trainer::Trainer(ReasoningSegModel& model, TrainConfig config, const ExamplePool& pool)
    : model_(model),
      config_(std::move(config)),
      pool_(pool),
      slot_dist_(slot_distribution(config_.mixture)),
      rng_(config_.seed),
      schedule_(config_.lr, config_.warmup_steps, config_.steps),
      optimizer_(model.params(), config_.adam) {
  config_.validate();
  for (const auto& m : config_.mixture) slots_.push_back(&pool_.component(m.name));
}

const TrainingExample& Trainer::sample() {
  const auto& slot = *slots_[slot_dist_(rng_)];
  std::uniform_int_distribution<std::size_t> pick(0, slot.size() - 1);
  return slot[pick(rng_)];
}

TrainLogRecord Trainer::step() {
  const int total_examples = config_.batch * config_.grad_accum;
  double text_sum = 0, bce_sum = 0, dice_sum = 0, total_sum = 0;
  int seg_examples = 0;
  try {
    for (int a = 0; a < config_.grad_accum; ++a) {
      ag::Var micro;
      for (int b = 0; b < config_.batch; ++b) {
        ExampleLoss l = example_loss(model_, sample(), config_.weights, config_.dice_eps);
        text_sum += l.text.item();
        total_sum += l.total.item();
        if (l.bce.defined()) {
          bce_sum += l.bce.item();
          dice_sum += l.dice.item();
          ++seg_examples;
        }
        micro = micro.defined() ? ag::add(micro, l.total) : l.total;
      }
      if (micro.requires_grad()) ag::backward(ag::scale(micro, 1.0 / total_examples));
    }
  } catch (const NumericError& e) {
    model_.params().zero_grad();
    spdlog::error("step {} aborted: {}", step_ + 1, e.what());
    throw;
  }
  ++step_;
  const double lr = schedule_.at(step_);
  optimizer_.step(lr);

  TrainLogRecord rec;
  rec.step = step_;
  rec.text = text_sum / total_examples;
  rec.bce = seg_examples ? bce_sum / seg_examples : 0.0;
  rec.dice = seg_examples ? dice_sum / seg_examples : 0.0;
  rec.total = total_sum / total_examples;
  rec.lr = lr;
  return rec;
}

std::string Trainer::rng_state() const {
  std::ostringstream s;
  s << rng_;
  return s.str();
}

void Trainer::restore(int step, const std::string& rng_state) {
  step_ = step;
  std::istringstream s(rng_state);
  s >> rng_;
}

TrainResult run_training(const TrainRequest& request, const std::function<void(const TrainLogRecord&)>& on_step) {
  const TrainConfig& cfg = request.train;
  cfg.validate();
  if (cfg.stage == 2 && !request.init_checkpoint) {
    throw InvalidInput("stage 2 requires a stage-1 checkpoint (pass --init <run dir or step dir>)");
  }

  std::unique_ptr<ReasoningSegModel> model;
  EncoderConfig enc = request.model.vision;
  if (request.init_checkpoint) {
    Checkpoint ck;
    try {
      ck = load_checkpoint(*request.init_checkpoint);
    } catch (const NotFound& e) {
      throw InvalidInput(std::string("initial checkpoint unavailable: ") + e.what());
    }
    if (cfg.stage == 2 && ck.state.stage != 1) {
      throw InvalidInput("stage 2 requires a stage-1 checkpoint; " + ck.dir.string() + " is from stage " +
                         std::to_string(ck.state.stage));
    }
    model = std::move(ck.model);
    enc = model->config().vision;
  }

  Dataset dataset = load_dataset(request.manifest);
  auto samples = dataset.split(cfg.split);
  if (samples.empty()) throw InvalidInput("dataset has no samples in split '" + cfg.split + "'");
  ExamplePool pool(dataset, samples, enc);
  for (const auto& m : cfg.mixture) pool.component(m.name);

  if (!model) {
    Tokenizer tok;
    tok.fit(pool.corpus());
    model = std::make_unique<ReasoningSegModel>(request.model, std::move(tok));
  }
  model->apply_freezing_policy(cfg.unfreeze_all);

  fs::create_directories(request.out_dir);
  {
    std::ofstream snap(request.out_dir / "config.snapshot");
    snap << json{{"model", model->config()}, {"train", cfg}}.dump(2) << "\n";
  }
  std::ofstream log(request.out_dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (request.out_dir / "train_log.jsonl").string());

  spdlog::info("stage {}: {} samples, {} trainable of {} parameters, {} steps", cfg.stage, samples.size(),
               [&] {
                 std::size_t n = 0;
                 for (const auto& p : model->params().params())
                   if (p.var.requires_grad()) n += static_cast<std::size_t>(p.var.value().size());
                 return n;
               }(),
               model->params().count(), cfg.steps);

  Trainer trainer(*model, cfg, pool);
  TrainResult result;
  auto checkpoint = [&](int step) {
    fs::path dir = request.out_dir / step_dir_name(step);
    save_checkpoint(dir, *model, json(cfg), {cfg.stage, step, trainer.rng_state()}, &trainer.optimizer());
    return dir;
  };
  for (int s = 1; s <= cfg.steps; ++s) {
    TrainLogRecord rec = trainer.step();
    log << json(rec).dump() << "\n";
    log.flush();
    result.log.push_back(rec);
    if (on_step) on_step(rec);
    if (cfg.log_every > 0 && (s % cfg.log_every == 0 || s == cfg.steps)) {
      spdlog::info("step {} L_t {:.4f} bce {:.4f} dice {:.4f} total {:.4f} lr {:.2e}", rec.step, rec.text, rec.bce,
                   rec.dice, rec.total, rec.lr);
    }
    if (cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0 && s != cfg.steps) checkpoint(s);
  }
  result.final_checkpoint = checkpoint(cfg.steps);
  return result;
}

}  // namespace reasonseg
