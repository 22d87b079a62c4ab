#include "cli.h"

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "reasonseg/api_server.h"
#include "reasonseg/errors.h"
#include "reasonseg/evaluation.h"
#include "reasonseg/generator.h"
#include "reasonseg/http_client.h"
#include "reasonseg/inference.h"
#include "reasonseg/llm_backend.h"
#include "reasonseg/session.h"
#include "reasonseg/training.h"

namespace reasonseg::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Global {
  std::string config_path;
  bool print_config = false;
  std::uint64_t seed = 0;
  bool seed_given = false;  // by flag or config file
  std::string log_level = "info";

  bool has_seed() const { return seed_given; }
};

// Adds `value` under `key` in `patch` when the flag was given.
template <class T>
void set_if(json& patch, const CLI::Option* opt, const std::string& key, const T& value) {
  if (opt->count() > 0) patch[key] = value;
}

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw NotFound("config file not found: " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw InvalidInput("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InvalidInput("config file " + path + " must hold a JSON object");
  return j;
}

// defaults <- file section <- flags
json layered(const json& defaults, const json& file, const std::string& section, const json& flags) {
  json out = defaults;
  if (file.contains(section)) {
    if (!file[section].is_object()) throw InvalidInput("config section '" + section + "' must be an object");
    out.merge_patch(file[section]);
  }
  out.merge_patch(flags);
  return out;
}

void write_run_config(const fs::path& dir, const std::string& command, const json& effective) {
  fs::create_directories(dir);
  std::ofstream out(dir / "run_config.json");
  out << json{{"command", command}, {"config", effective}}.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + (dir / "run_config.json").string());
}

std::set<std::string> split_metrics(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.insert(item);
  }
  if (out.empty()) throw InvalidInput("--metrics lists no metric blocks");
  return out;
}

std::string require(const json& cfg, const std::string& key, const std::string& flag) {
  if (!cfg.contains(key) || !cfg[key].is_string() || cfg[key].get<std::string>().empty()) {
    throw InvalidInput(flag + " is required");
  }
  return cfg[key].get<std::string>();
}

void configure_logging(const std::string& level) {
  auto logger = spdlog::get("reasonseg");
  if (!logger) logger = spdlog::stderr_color_mt("reasonseg");
  spdlog::set_default_logger(logger);
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw InvalidInput("unknown log level '" + level + "'");
  spdlog::set_level(lvl);
}

// ---- gen-data ---------------------------------------------------------------

struct GenFlags {
  std::string backend, out, images_dir;
  int num_images = 0, k_min = 0, k_max = 0, max_depth = 0, image_size = 0;
  CLI::Option *o_backend, *o_out, *o_images_dir, *o_num, *o_kmin, *o_kmax, *o_depth, *o_size;

  void add(CLI::App& app) {
    o_backend = app.add_option("--backend", backend, "synthetic or llm")->check(CLI::IsMember({"synthetic", "llm"}));
    o_num = app.add_option("--num-images", num_images, "Number of images to process");
    o_out = app.add_option("--out", out, "Output dataset directory");
    o_kmin = app.add_option("--k-min", k_min, "Fewest targets per image");
    o_kmax = app.add_option("--k-max", k_max, "Most targets per image");
    o_depth = app.add_option("--max-depth", max_depth, "Longest reasoning path");
    o_size = app.add_option("--image-size", image_size, "Side of synthetic scenes");
    o_images_dir = app.add_option("--images-dir", images_dir, "Source PNGs for the llm backend");
  }
};

int run_gen_data(const GenFlags& f, const Global& g, const json& file, std::ostream& out) {
  json patch = json::object();
  set_if(patch, f.o_backend, "backend", f.backend);
  set_if(patch, f.o_num, "num_images", f.num_images);
  set_if(patch, f.o_out, "out_dir", f.out);
  set_if(patch, f.o_kmin, "k_min", f.k_min);
  set_if(patch, f.o_kmax, "k_max", f.k_max);
  set_if(patch, f.o_depth, "max_depth", f.max_depth);
  set_if(patch, f.o_images_dir, "images_dir", f.images_dir);
  if (f.o_size->count()) patch["scene"] = {{"size", f.image_size}};
  if (g.has_seed()) patch["seed"] = g.seed;
  json effective = layered(json(GenConfig{}), file, "gen_data", patch);
  GenConfig cfg = effective.get<GenConfig>();
  effective = cfg;
  if (g.print_config) {
    out << json{{"gen_data", effective}}.dump(2) << "\n";
    return kExitOk;
  }
  if (cfg.out_dir.empty()) throw InvalidInput("--out is required");
  cfg.validate();

  std::unique_ptr<ChatClient> client;
  std::unique_ptr<LlmBackend> backend;
  if (cfg.backend == "llm") {
    client = std::make_unique<HttpChatClient>(ChatEndpoint::from_env("REASONSEG_LLM"));
    backend = std::make_unique<LlmBackend>(*client);
  }
  const GenerationReport report = generate_dataset(cfg, backend.get());
  write_run_config(cfg.out_dir, "gen-data", effective);
  out << json(report).dump() << "\n";
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainFlags {
  int stage = 1, steps = 0, batch = 0, grad_accum = 0, warmup = 0, checkpoint_every = 0;
  double lr = 0;
  std::string data, out, init, preset, split;
  bool unfreeze_all = false;
  CLI::Option *o_stage, *o_steps, *o_batch, *o_accum, *o_warmup, *o_ckpt, *o_lr, *o_data, *o_out, *o_init, *o_preset,
      *o_split, *o_unfreeze;

  void add(CLI::App& app) {
    o_stage = app.add_option("--stage", stage, "Training stage")->check(CLI::IsMember({1, 2}));
    o_data = app.add_option("--data", data, "Dataset manifest.jsonl");
    o_out = app.add_option("--out", out, "Run directory");
    o_init = app.add_option("--init", init, "Checkpoint to start from; required for stage 2");
    o_preset = app.add_option("--preset", preset, "Model size: desk or tiny")->check(CLI::IsMember({"desk", "tiny"}));
    o_steps = app.add_option("--steps", steps, "Optimizer updates");
    o_lr = app.add_option("--lr", lr, "Peak learning rate");
    o_batch = app.add_option("--batch", batch, "Examples per micro-batch");
    o_accum = app.add_option("--grad-accum", grad_accum, "Micro-batches per update");
    o_warmup = app.add_option("--warmup", warmup, "Linear warmup steps");
    o_ckpt = app.add_option("--checkpoint-every", checkpoint_every, "Intermediate checkpoint interval");
    o_split = app.add_option("--split", split, "Dataset split to train on");
    o_unfreeze = app.add_flag("--unfreeze-all", unfreeze_all, "Train every parameter group");
  }
};

int run_train(const TrainFlags& f, const Global& g, const json& file, std::ostream& out) {
  const json section = file.value("train", json::object());
  int stage = 1;
  if (f.o_stage->count()) {
    stage = f.stage;
  } else if (section.contains("train") && section["train"].contains("stage")) {
    stage = section["train"]["stage"].get<int>();
  }
  json tpatch = json::object();
  tpatch["stage"] = stage;
  set_if(tpatch, f.o_steps, "steps", f.steps);
  set_if(tpatch, f.o_lr, "lr", f.lr);
  set_if(tpatch, f.o_batch, "batch", f.batch);
  set_if(tpatch, f.o_accum, "grad_accum", f.grad_accum);
  set_if(tpatch, f.o_warmup, "warmup_steps", f.warmup);
  set_if(tpatch, f.o_ckpt, "checkpoint_every", f.checkpoint_every);
  set_if(tpatch, f.o_split, "split", f.split);
  if (f.o_unfreeze->count()) tpatch["unfreeze_all"] = true;
  if (g.has_seed()) tpatch["seed"] = g.seed;

  const std::string preset = f.o_preset->count() ? f.preset : section.value("preset", std::string("desk"));
  json mpatch = json::object();
  if (g.has_seed()) mpatch["init_seed"] = g.seed;

  json train_json = json(TrainConfig::for_stage(stage));
  if (section.contains("train")) train_json.merge_patch(section["train"]);
  train_json.merge_patch(tpatch);
  json model_json = json(ModelConfig::preset(preset));
  if (section.contains("model")) model_json.merge_patch(section["model"]);
  model_json.merge_patch(mpatch);

  TrainRequest req;
  req.train = train_json.get<TrainConfig>();
  req.train.validate();
  req.model = model_json.get<ModelConfig>();
  req.model.validate();
  std::string data = f.o_data->count() ? f.data : section.value("data", std::string());
  std::string out_dir = f.o_out->count() ? f.out : section.value("out", std::string());
  std::string init = f.o_init->count() ? f.init : section.value("init", std::string());

  json effective{{"preset", preset}, {"model", req.model}, {"train", req.train}, {"data", data}, {"out", out_dir}};
  effective["init"] = init.empty() ? json(nullptr) : json(init);
  if (g.print_config) {
    out << json{{"train", effective}}.dump(2) << "\n";
    return kExitOk;
  }
  if (data.empty()) throw InvalidInput("--data is required");
  if (out_dir.empty()) throw InvalidInput("--out is required");
  req.manifest = data;
  req.out_dir = out_dir;
  if (!init.empty()) req.init_checkpoint = fs::path(init);

  const TrainResult result = run_training(req);
  write_run_config(req.out_dir, "train", effective);
  json summary{{"final_checkpoint", result.final_checkpoint.string()}, {"steps", result.log.size()}};
  if (!result.log.empty()) summary["last"] = result.log.back();
  out << summary.dump() << "\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalFlags {
  std::string pred, data, metrics, out, judge;
  int stub_score = 3;
  CLI::Option *o_pred, *o_data, *o_metrics, *o_out, *o_judge, *o_stub;

  void add(CLI::App& app) {
    o_pred = app.add_option("--pred", pred, "Predictions JSONL");
    o_data = app.add_option("--data", data, "Dataset manifest.jsonl");
    o_metrics = app.add_option("--metrics", metrics, "Comma-separated blocks: seg,text,judge");
    o_out = app.add_option("--out", out, "Directory for report.json (default: beside the predictions)");
    o_judge = app.add_option("--judge", judge, "llm (REASONSEG_JUDGE_* endpoint) or stub")
                  ->check(CLI::IsMember({"llm", "stub"}));
    o_stub = app.add_option("--judge-stub-score", stub_score, "Constant reply of the stub judge")
                 ->check(CLI::Range(0, 5));
  }
};

int run_eval(const EvalFlags& f, const Global& g, const json& file, std::ostream& out) {
  json patch = json::object();
  set_if(patch, f.o_pred, "pred", f.pred);
  set_if(patch, f.o_data, "data", f.data);
  set_if(patch, f.o_metrics, "metrics", f.metrics);
  set_if(patch, f.o_out, "out", f.out);
  set_if(patch, f.o_judge, "judge", f.judge);
  set_if(patch, f.o_stub, "judge_stub_score", f.stub_score);
  const json defaults{{"pred", ""}, {"data", ""},  {"metrics", "seg,text"},
                      {"out", ""},  {"judge", "llm"}, {"judge_stub_score", 3}};
  const json effective = layered(defaults, file, "eval", patch);
  const auto metrics = split_metrics(effective["metrics"].get<std::string>());
  if (g.print_config) {
    out << json{{"eval", effective}}.dump(2) << "\n";
    return kExitOk;
  }
  EvalRequest req;
  req.predictions = require(effective, "pred", "--pred");
  req.manifest = require(effective, "data", "--data");
  req.metrics = metrics;
  if (!fs::exists(req.predictions)) throw NotFound("predictions file not found: " + req.predictions.string());
  if (!fs::exists(req.manifest)) throw NotFound("manifest not found: " + req.manifest.string());

  std::unique_ptr<ChatClient> client;
  std::unique_ptr<JudgeClient> judge;
  if (metrics.count("judge")) {
    if (effective["judge"] == "stub") {
      judge = std::make_unique<StubJudge>(StubJudge::constant(effective["judge_stub_score"].get<int>()));
    } else {
      client = std::make_unique<HttpChatClient>(ChatEndpoint::from_env("REASONSEG_JUDGE"));
      judge = std::make_unique<ChatJudge>(*client);
    }
    req.judge = judge.get();
  }
  json report = evaluate(req);
  const std::string out_str = effective["out"].get<std::string>();
  const fs::path out_dir = out_str.empty() ? req.predictions.parent_path() : fs::path(out_str);
  fs::create_directories(out_dir.empty() ? fs::path(".") : out_dir);
  const fs::path report_path = out_dir / "report.json";
  {
    std::ofstream o(report_path);
    o << report.dump(2) << "\n";
    if (!o) throw IoError("cannot write " + report_path.string());
  }
  write_run_config(out_dir.empty() ? fs::path(".") : out_dir, "eval", effective);
  report.erase("samples");
  report["report"] = report_path.string();
  out << report.dump() << "\n";
  return kExitOk;
}

// ---- infer ------------------------------------------------------------------

struct InferFlags {
  std::string checkpoint, data, split, out, history;
  int max_new_tokens = 48, limit = 0;
  CLI::Option *o_ckpt, *o_data, *o_split, *o_out, *o_history, *o_tokens, *o_limit;

  void add(CLI::App& app) {
    o_ckpt = app.add_option("--checkpoint", checkpoint, "Run or step directory");
    o_data = app.add_option("--data", data, "Dataset manifest.jsonl");
    o_split = app.add_option("--split", split, "Split to predict (empty for all)");
    o_out = app.add_option("--out", out, "Directory for predictions.jsonl and masks/");
    o_history = app.add_option("--history", history, "Assistant turns shown to the model: reference or model")
                    ->check(CLI::IsMember({"reference", "model"}));
    o_tokens = app.add_option("--max-new-tokens", max_new_tokens, "Reply length limit");
    o_limit = app.add_option("--limit", limit, "Stop after this many samples (0: all)");
  }
};

int run_infer(const InferFlags& f, const Global& g, const json& file, std::ostream& out) {
  json patch = json::object();
  set_if(patch, f.o_ckpt, "checkpoint", f.checkpoint);
  set_if(patch, f.o_data, "data", f.data);
  set_if(patch, f.o_split, "split", f.split);
  set_if(patch, f.o_out, "out", f.out);
  set_if(patch, f.o_history, "history", f.history);
  set_if(patch, f.o_tokens, "max_new_tokens", f.max_new_tokens);
  set_if(patch, f.o_limit, "limit", f.limit);
  const json defaults{{"checkpoint", ""}, {"data", ""},          {"split", "test"}, {"out", ""},
                      {"history", "reference"}, {"max_new_tokens", 48}, {"limit", 0}};
  const json effective = layered(defaults, file, "infer", patch);
  InferOptions opts;
  opts.history = history_mode_from_string(effective["history"].get<std::string>());
  opts.max_new_tokens = effective["max_new_tokens"].get<int>();
  if (opts.max_new_tokens < 1) throw InvalidInput("--max-new-tokens must be positive");
  if (g.print_config) {
    out << json{{"infer", effective}}.dump(2) << "\n";
    return kExitOk;
  }
  const std::string ckpt = require(effective, "checkpoint", "--checkpoint");
  const std::string data = require(effective, "data", "--data");
  const fs::path out_dir = require(effective, "out", "--out");
  const Checkpoint ck = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(data);
  const auto preds =
      run_inference(*ck.model, ds, effective["split"].get<std::string>(), out_dir, opts, effective["limit"].get<int>());
  write_run_config(out_dir, "infer", effective);
  out << json{{"predictions", (out_dir / "predictions.jsonl").string()}, {"samples", preds.size()}}.dump() << "\n";
  return kExitOk;
}

// ---- serve ------------------------------------------------------------------

struct ServeFlags {
  std::string checkpoint, host, state_dir, ui_dir, cors_origin;
  int port = 0, max_new_tokens = 0;
  std::size_t max_sessions = 0;
  long long ttl_seconds = 0;
  CLI::Option *o_ckpt, *o_host, *o_state, *o_ui, *o_cors, *o_port, *o_tokens, *o_max, *o_ttl;

  void add(CLI::App& app) {
    o_ckpt = app.add_option("--checkpoint", checkpoint, "Run or step directory");
    o_host = app.add_option("--host", host, "Bind address");
    o_port = app.add_option("--port", port, "Port (0 picks a free one)");
    o_max = app.add_option("--max-sessions", max_sessions, "Concurrent session limit");
    o_ttl = app.add_option("--ttl-seconds", ttl_seconds, "Idle session lifetime");
    o_state = app.add_option("--state-dir", state_dir, "Persist sessions here");
    o_ui = app.add_option("--ui-dir", ui_dir, "Static web UI served under /ui");
    o_cors = app.add_option("--cors-origin", cors_origin, "Access-Control-Allow-Origin value");
    o_tokens = app.add_option("--max-new-tokens", max_new_tokens, "Reply length limit");
  }
};

ServiceConfig service_config(const ServeFlags& f, const json& file) {
  json j = json(ServiceConfig{});
  if (file.contains("serve")) j.merge_patch(file["serve"]);
  ServiceConfig cfg = j.get<ServiceConfig>();
  cfg.apply_env();
  json patch = json::object();
  set_if(patch, f.o_ckpt, "checkpoint", f.checkpoint);
  set_if(patch, f.o_host, "host", f.host);
  set_if(patch, f.o_port, "port", f.port);
  set_if(patch, f.o_max, "max_sessions", f.max_sessions);
  set_if(patch, f.o_ttl, "ttl_seconds", f.ttl_seconds);
  set_if(patch, f.o_state, "state_dir", f.state_dir);
  set_if(patch, f.o_ui, "ui_dir", f.ui_dir);
  set_if(patch, f.o_cors, "cors_origin", f.cors_origin);
  set_if(patch, f.o_tokens, "max_new_tokens", f.max_new_tokens);
  j = json(cfg);
  j.merge_patch(patch);
  cfg = j.get<ServiceConfig>();
  cfg.validate();
  return cfg;
}

int run_serve(const ServeFlags& f, const Global& g, const json& file, std::ostream& out) {
  const ServiceConfig cfg = service_config(f, file);
  if (g.print_config) {
    out << json{{"serve", cfg}}.dump(2) << "\n";
    return kExitOk;
  }
  if (cfg.checkpoint.empty()) throw InvalidInput("--checkpoint is required");
  SessionService service(CheckpointTurnModel::load(cfg.checkpoint, cfg.max_new_tokens), cfg);

  // Signals are taken synchronously by this thread; every thread started
  // below inherits the blocked mask.
  sigset_t signals, previous;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  sigaddset(&signals, SIGHUP);
  pthread_sigmask(SIG_BLOCK, &signals, &previous);

  ApiServer server(service, [&cfg] { return CheckpointTurnModel::load(cfg.checkpoint, cfg.max_new_tokens); });
  const int port = server.bind(cfg.host, cfg.port);
  out << json{{"listening", cfg.host + ":" + std::to_string(port)}, {"checkpoint_id", service.checkpoint_id()}}.dump()
      << std::endl;
  spdlog::info("serving on {}:{} (SIGHUP reloads the checkpoint)", cfg.host, port);
  std::thread worker([&server] { server.serve(); });

  for (;;) {
    timespec wait{60, 0};
    const int sig = sigtimedwait(&signals, nullptr, &wait);
    if (sig == SIGINT || sig == SIGTERM) break;
    if (sig == SIGHUP) {
      try {
        service.swap_model(CheckpointTurnModel::load(cfg.checkpoint, cfg.max_new_tokens));
      } catch (const std::exception& e) {
        spdlog::error("reload failed, keeping {}: {}", service.checkpoint_id(), e.what());
      }
      continue;
    }
    service.evict_expired();
  }
  spdlog::info("shutting down");
  server.stop();
  worker.join();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  return kExitOk;
}

// ---- chat -------------------------------------------------------------------

struct ChatFlags {
  std::string checkpoint, image, mask_dir;
  int max_new_tokens = 48;
  CLI::Option *o_ckpt, *o_image, *o_mask_dir, *o_tokens;

  void add(CLI::App& app) {
    o_ckpt = app.add_option("--checkpoint", checkpoint, "Run or step directory");
    o_image = app.add_option("--image", image, "PNG to talk about");
    o_mask_dir = app.add_option("--mask-dir", mask_dir, "Where masks are written (default: beside the image)");
    o_tokens = app.add_option("--max-new-tokens", max_new_tokens, "Reply length limit");
  }
};

int run_chat(const ChatFlags& f, const Global& g, const json& file, std::istream& in, std::ostream& out) {
  json patch = json::object();
  set_if(patch, f.o_ckpt, "checkpoint", f.checkpoint);
  set_if(patch, f.o_image, "image", f.image);
  set_if(patch, f.o_mask_dir, "mask_dir", f.mask_dir);
  set_if(patch, f.o_tokens, "max_new_tokens", f.max_new_tokens);
  const json defaults{{"checkpoint", ""}, {"image", ""}, {"mask_dir", ""}, {"max_new_tokens", 48}};
  const json effective = layered(defaults, file, "chat", patch);
  if (g.print_config) {
    out << json{{"chat", effective}}.dump(2) << "\n";
    return kExitOk;
  }
  const fs::path image = require(effective, "image", "--image");
  const std::string ckpt = require(effective, "checkpoint", "--checkpoint");
  if (!fs::exists(image)) throw NotFound("image not found: " + image.string());
  const std::string mask_dir_str = effective["mask_dir"].get<std::string>();
  const fs::path mask_dir = mask_dir_str.empty() ? image.parent_path() : fs::path(mask_dir_str);

  ServiceConfig cfg;
  cfg.max_sessions = 1;
  cfg.max_new_tokens = effective["max_new_tokens"].get<int>();
  SessionService service(CheckpointTurnModel::load(ckpt, cfg.max_new_tokens), cfg);
  const Session session = service.create_session(read_file(image));
  out << "session " << session.session_id << " on " << image.filename().string() << " (" << session.width << "x"
      << session.height << "); empty line or /quit ends" << std::endl;

  for (std::string line; out << "> " << std::flush, std::getline(in, line);) {
    if (line.empty() || line == "/quit") break;
    const TurnResult r = service.post_turn(session.session_id, line);
    out << r.assistant_text << "\n";
    if (r.mask) {
      const fs::path path = mask_dir / (image.stem().string() + "_turn" + std::to_string(r.turn) + "_mask.png");
      fs::create_directories(mask_dir.empty() ? fs::path(".") : mask_dir);
      write_file(path, mask_to_png(*r.mask));
      out << "mask: " << path.string() << "\n";
    } else if (r.reason) {
      out << "(no mask: " << *r.reason << ")\n";
    }
    out << std::flush;
  }
  return kExitOk;
}

int fail(std::ostream& err, int code, const std::string& kind, const std::string& message) {
  err << json{{"error", {{"code", kind}, {"message", message}}}}.dump() << "\n";
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pixel-level reasoning segmentation: data generation, training, evaluation and serving", "reasonseg"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--config", g.config_path, "JSON config file; flags override its values");
  app.add_flag("--print-config", g.print_config, "Print the effective config of the subcommand and exit");
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

  GenFlags gen;
  TrainFlags train;
  EvalFlags eval;
  InferFlags infer;
  ServeFlags serve;
  ChatFlags chat;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a dialogue segmentation dataset");
  gen.add(*c_gen);
  auto* c_train = app.add_subcommand("train", "Run one training stage");
  train.add(*c_train);
  auto* c_eval = app.add_subcommand("eval", "Score predictions against a dataset; writes report.json");
  eval.add(*c_eval);
  auto* c_infer = app.add_subcommand("infer", "Write predictions for a dataset split");
  infer.add(*c_infer);
  auto* c_serve = app.add_subcommand("serve", "Serve the session HTTP API");
  serve.add(*c_serve);
  auto* c_chat = app.add_subcommand("chat", "Talk to a checkpoint about one image in the terminal");
  chat.add(*c_chat);
  // Global options are accepted after the subcommand name too.
  app.fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << app.help();
    return fail(err, kExitInvalid, "usage", e.what());
  }

  try {
    configure_logging(g.log_level);
    const json file = read_config_file(g.config_path);
    g.seed_given = seed_opt->count() > 0;
    if (!g.seed_given && file.contains("seed")) {
      g.seed = file["seed"].get<std::uint64_t>();
      g.seed_given = true;
    }
    if (c_gen->parsed()) return run_gen_data(gen, g, file, out);
    if (c_train->parsed()) return run_train(train, g, file, out);
    if (c_eval->parsed()) return run_eval(eval, g, file, out);
    if (c_infer->parsed()) return run_infer(infer, g, file, out);
    if (c_serve->parsed()) return run_serve(serve, g, file, out);
    if (c_chat->parsed()) return run_chat(chat, g, file, in, out);
    return fail(err, kExitInvalid, "usage", "no subcommand");
  } catch (const NotFound& e) {
    return fail(err, kExitInvalid, "not_found", e.what());
  } catch (const InvalidInput& e) {
    return fail(err, kExitInvalid, "invalid_input", e.what());
  } catch (const DecodeError& e) {
    return fail(err, kExitInvalid, "undecodable", e.what());
  } catch (const json::exception& e) {
    return fail(err, kExitInvalid, "invalid_config", e.what());
  } catch (const std::exception& e) {
    return fail(err, kExitRuntime, "runtime", e.what());
  }
}

}  // namespace reasonseg::cli
