#include "reasonseg/session.h"

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include <spdlog/spdlog.h>

#include "reasonseg/checkpoint.h"
#include "reasonseg/dataset.h"
#include "reasonseg/errors.h"
#include "reasonseg/http_client.h"

namespace reasonseg {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::int64_t to_millis(Clock::time_point t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}
Clock::time_point from_millis(std::int64_t ms) { return Clock::time_point(std::chrono::milliseconds(ms)); }

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

std::optional<long long> env_int(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw InvalidInput(std::string(name) + " is not an integer: " + v);
  }
}

json result_record(const TurnResult& r) {
  json j{{"turn", r.turn},
         {"assistant_text", r.assistant_text},
         {"seg_triggered", r.seg_triggered},
         {"has_mask", r.mask.has_value()},
         {"latency_ms", r.latency_ms},
         {"checkpoint_id", r.checkpoint_id}};
  j["target_class"] = r.target_class ? json(*r.target_class) : json(nullptr);
  j["reason"] = r.reason ? json(*r.reason) : json(nullptr);
  return j;
}

TurnResult result_from_record(const json& j) {
  TurnResult r;
  r.turn = j.at("turn").get<int>();
  r.assistant_text = j.at("assistant_text").get<std::string>();
  r.seg_triggered = j.at("seg_triggered").get<bool>();
  r.latency_ms = j.value("latency_ms", 0.0);
  r.checkpoint_id = j.value("checkpoint_id", "");
  if (!j["target_class"].is_null()) r.target_class = j["target_class"].get<std::string>();
  if (!j["reason"].is_null()) r.reason = j["reason"].get<std::string>();
  return r;
}

}  // namespace

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw InvalidInput("port must be in [0, 65535]");
  if (max_sessions < 1) throw InvalidInput("max_sessions must be at least 1");
  if (ttl.count() < 1) throw InvalidInput("ttl must be at least one second");
  if (max_pixels < static_cast<std::int64_t>(ImageBuffer::kMinSide) * ImageBuffer::kMinSide) {
    throw InvalidInput("max_pixels is below the minimum image size");
  }
  if (max_new_tokens < 1) throw InvalidInput("max_new_tokens must be at least 1");
}

void ServiceConfig::apply_env() {
  if (auto v = env_int("REASONSEG_PORT")) port = static_cast<int>(*v);
  if (const char* c = std::getenv("REASONSEG_CHECKPOINT"); c && *c) checkpoint = c;
  if (auto v = env_int("REASONSEG_MAX_SESSIONS")) {
    if (*v < 1) throw InvalidInput("REASONSEG_MAX_SESSIONS must be at least 1");
    max_sessions = static_cast<std::size_t>(*v);
  }
  if (auto v = env_int("REASONSEG_TTL_SECONDS")) ttl = std::chrono::seconds(*v);
}

void to_json(json& j, const ServiceConfig& c) {
  j = json{{"host", c.host},
           {"port", c.port},
           {"checkpoint", c.checkpoint.string()},
           {"max_sessions", c.max_sessions},
           {"ttl_seconds", c.ttl.count()},
           {"max_pixels", c.max_pixels},
           {"max_new_tokens", c.max_new_tokens},
           {"cors_origin", c.cors_origin},
           {"state_dir", c.state_dir ? json(c.state_dir->string()) : json(nullptr)},
           {"ui_dir", c.ui_dir ? json(c.ui_dir->string()) : json(nullptr)}};
}

void from_json(const json& j, ServiceConfig& c) {
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.checkpoint = j.value("checkpoint", c.checkpoint.string());
  c.max_sessions = j.value("max_sessions", c.max_sessions);
  c.ttl = std::chrono::seconds(j.value("ttl_seconds", static_cast<long long>(c.ttl.count())));
  c.max_pixels = j.value("max_pixels", c.max_pixels);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.cors_origin = j.value("cors_origin", c.cors_origin);
  if (j.contains("state_dir")) {
    c.state_dir = j["state_dir"].is_null() ? std::nullopt : std::optional<fs::path>(j["state_dir"].get<std::string>());
  }
  if (j.contains("ui_dir")) {
    c.ui_dir = j["ui_dir"].is_null() ? std::nullopt : std::optional<fs::path>(j["ui_dir"].get<std::string>());
  }
}

CheckpointTurnModel::CheckpointTurnModel(std::unique_ptr<ReasoningSegModel> model, std::string checkpoint_id,
                                         int max_new_tokens)
    : model_(std::move(model)), checkpoint_id_(std::move(checkpoint_id)), max_new_tokens_(max_new_tokens) {
  if (!model_) throw InvalidInput("CheckpointTurnModel needs a model");
}

std::shared_ptr<CheckpointTurnModel> CheckpointTurnModel::load(const fs::path& path, int max_new_tokens) {
  Checkpoint ckpt = load_checkpoint(path);
  const std::string id = (ckpt.dir.parent_path().filename() / ckpt.dir.filename()).generic_string();
  spdlog::info("loaded checkpoint {} (stage {}, step {})", id, ckpt.state.stage, ckpt.state.step);
  return std::make_shared<CheckpointTurnModel>(std::move(ckpt.model), id, max_new_tokens);
}

TurnReply CheckpointTurnModel::respond(const PreparedImage& image, std::span<const Turn> history) const {
  const ReasoningSegModel::Reply r = model_->respond(image, history, max_new_tokens_);
  TurnReply out;
  out.text = r.text;
  // The span search is repeated on the generated ids alone so that its
  // indices address `generated`.
  const SegSpan span = find_seg_span(r.generated);
  out.outcome = span.outcome;
  if (span.outcome == SegOutcome::Ok) {
    const auto first = r.generated.begin() + span.begin + 1;
    const auto last = r.generated.begin() + span.end;
    if (first < last) out.target_class = model_->tokenizer().decode(std::vector<int>(first, last));
  }
  out.mask = r.mask;
  return out;
}

std::pair<std::int64_t, std::int64_t> png_dimensions(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() < 24 || !std::equal(std::begin(kSignature), std::end(kSignature), bytes.begin()) ||
      std::string(bytes.begin() + 12, bytes.begin() + 16) != "IHDR") {
    throw DecodeError("not a PNG image");
  }
  auto be32 = [&](std::size_t at) {
    return (static_cast<std::int64_t>(bytes[at]) << 24) | (static_cast<std::int64_t>(bytes[at + 1]) << 16) |
           (static_cast<std::int64_t>(bytes[at + 2]) << 8) | static_cast<std::int64_t>(bytes[at + 3]);
  };
  return {be32(16), be32(20)};
}

SessionService::SessionService(std::shared_ptr<const TurnModel> model, ServiceConfig config,
                               std::function<Clock::time_point()> now)
    : config_(std::move(config)), now_(std::move(now)), model_(std::move(model)), id_rng_(std::random_device{}()) {
  if (!model_) throw InvalidInput("SessionService needs a model");
  config_.validate();
  if (config_.state_dir) {
    fs::create_directories(*config_.state_dir);
    restore();
  }
}

std::string SessionService::new_session_id() {
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(id_rng_()),
                static_cast<unsigned long long>(id_rng_()));
  return buf;
}

Session SessionService::create_session(std::span<const std::uint8_t> png) {
  const auto [w, h] = png_dimensions(png);
  if (w * h > config_.max_pixels) {
    throw InvalidInput("image is " + std::to_string(w) + "x" + std::to_string(h) + ", above the limit of " +
                       std::to_string(config_.max_pixels) + " pixels");
  }
  auto entry = std::make_shared<Entry>();
  entry->image = png_to_image(png);

  std::shared_ptr<const TurnModel> model;
  {
    std::shared_lock lock(model_mutex_);
    model = model_;
    entry->prepared_generation = model_generation_;
  }
  entry->prepared = model->prepare(entry->image);

  Session& s = entry->session;
  s.width = entry->image.width();
  s.height = entry->image.height();
  s.created_at = s.last_active = now_();
  s.checkpoint_id = model->checkpoint_id();

  evict_expired();
  {
    std::lock_guard lock(sessions_mutex_);
    if (sessions_.size() >= config_.max_sessions) {
      throw Unavailable("session limit of " + std::to_string(config_.max_sessions) + " reached");
    }
    do {
      s.session_id = new_session_id();
    } while (sessions_.count(s.session_id));
    sessions_[s.session_id] = entry;
  }
  if (config_.state_dir) {
    const fs::path dir = *config_.state_dir / s.session_id;
    fs::create_directories(dir);
    write_file(dir / "image.png", png);
    std::lock_guard lock(entry->data);
    persist(*entry);
  }
  spdlog::info("session {} created ({}x{})", s.session_id, s.width, s.height);
  return s;
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& session_id) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFound("no session " + session_id);
  return it->second;
}

TurnResult SessionService::post_turn(const std::string& session_id, const std::string& user_text) {
  auto entry = find(session_id);
  std::unique_lock turn_lock(entry->turn, std::try_to_lock);
  if (!turn_lock.owns_lock()) throw Conflict("session " + session_id + " is already processing a turn");
  if (blank(user_text)) throw InvalidInput("turn text is empty");

  // Held until the turn is committed so that swap_model waits for it.
  std::shared_lock model_lock(model_mutex_);
  const TurnModel& model = *model_;

  std::vector<Turn> history;
  int width = 0, height = 0;
  bool reprepare = false;
  {
    std::lock_guard lock(entry->data);
    history = entry->session.history;
    width = entry->session.width;
    height = entry->session.height;
    reprepare = !entry->prepared || entry->prepared_generation != model_generation_;
  }
  if (reprepare) {
    PreparedImage prepared = model.prepare(entry->image);
    std::lock_guard lock(entry->data);
    entry->prepared = std::move(prepared);
    entry->prepared_generation = model_generation_;
  }
  history.push_back({Role::User, user_text});

  const auto start = std::chrono::steady_clock::now();
  TurnReply reply;
  try {
    reply = model.respond(*entry->prepared, history);
  } catch (const std::exception& e) {
    spdlog::error("session {}: generation failed: {}", session_id, e.what());
    throw PipelineError(session_id, std::string("generation failed: ") + e.what());
  }
  if (reply.mask && (reply.mask->width() != width || reply.mask->height() != height)) {
    throw PipelineError(session_id, "model returned a mask of the wrong size");
  }

  TurnResult result;
  result.turn = static_cast<int>(history.size() / 2);
  result.assistant_text = reply.text;
  result.checkpoint_id = model.checkpoint_id();
  result.seg_triggered = reply.outcome != SegOutcome::NoSegmentation;
  if (reply.outcome == SegOutcome::Ok) {
    result.mask = std::move(reply.mask);
    result.target_class = std::move(reply.target_class);
  } else if (reply.outcome == SegOutcome::Ambiguous) {
    result.reason = "ambiguous_span";
  } else if (is_segmentation_instruction(user_text)) {
    result.reason = "no_span";
  }
  result.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  {
    std::lock_guard lock(entry->data);
    Session& s = entry->session;
    s.history.push_back(history.back());
    s.history.push_back({Role::Assistant, reply.text});
    s.results.push_back(result);
    s.last_active = now_();
    if (config_.state_dir) {
      if (result.mask) persist_mask(session_id, result.turn, *result.mask);
      persist(*entry);
    }
  }
  return result;
}

Session SessionService::get_session(const std::string& session_id) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->data);
  return entry->session;
}

BinaryMask SessionService::turn_mask(const std::string& session_id, int turn) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->data);
  const auto& results = entry->session.results;
  if (turn < 0 || turn >= static_cast<int>(results.size())) {
    throw NotFound("session " + session_id + " has no turn " + std::to_string(turn));
  }
  if (!results[static_cast<std::size_t>(turn)].mask) {
    throw NotFound("turn " + std::to_string(turn) + " of session " + session_id + " has no mask");
  }
  return *results[static_cast<std::size_t>(turn)].mask;
}

void SessionService::swap_model(std::shared_ptr<const TurnModel> model) {
  if (!model) throw InvalidInput("swap_model needs a model");
  std::unique_lock lock(model_mutex_);
  spdlog::info("swapping model {} -> {}", model_->checkpoint_id(), model->checkpoint_id());
  model_ = std::move(model);
  ++model_generation_;
}

std::string SessionService::checkpoint_id() const {
  std::shared_lock lock(model_mutex_);
  return model_->checkpoint_id();
}

std::size_t SessionService::evict_expired() {
  const auto now = now_();
  std::vector<std::string> dropped;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      Entry& e = *it->second;
      std::unique_lock busy(e.turn, std::try_to_lock);
      bool expired = false;
      if (busy.owns_lock()) {
        std::lock_guard data(e.data);
        expired = now - e.session.last_active > config_.ttl;
      }
      if (expired) {
        dropped.push_back(it->first);
        busy.unlock();
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (const auto& id : dropped) {
    spdlog::info("session {} expired", id);
    if (config_.state_dir) {
      std::error_code ec;
      fs::remove_all(*config_.state_dir / id, ec);
    }
  }
  return dropped.size();
}

std::size_t SessionService::size() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

void SessionService::persist(const Entry& entry) const {
  const Session& s = entry.session;
  json j{{"session_id", s.session_id},
         {"width", s.width},
         {"height", s.height},
         {"history", s.history},
         {"created_at_ms", to_millis(s.created_at)},
         {"last_active_ms", to_millis(s.last_active)},
         {"checkpoint_id", s.checkpoint_id}};
  j["results"] = json::array();
  for (const auto& r : s.results) j["results"].push_back(result_record(r));
  const fs::path dir = *config_.state_dir / s.session_id;
  const fs::path tmp = dir / "session.json.tmp";
  {
    std::ofstream out(tmp);
    out << j.dump() << "\n";
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, dir / "session.json");
}

void SessionService::persist_mask(const std::string& session_id, int turn, const BinaryMask& mask) const {
  write_file(*config_.state_dir / session_id / ("mask_" + std::to_string(turn) + ".png"), mask_to_png(mask));
}

void SessionService::restore() {
  const auto now = now_();
  for (const auto& d : fs::directory_iterator(*config_.state_dir)) {
    if (!d.is_directory()) continue;
    const fs::path dir = d.path();
    try {
      std::ifstream in(dir / "session.json");
      if (!in) continue;
      const json j = json::parse(in);
      auto entry = std::make_shared<Entry>();
      Session& s = entry->session;
      s.session_id = j.at("session_id").get<std::string>();
      s.width = j.at("width").get<int>();
      s.height = j.at("height").get<int>();
      s.history = j.at("history").get<std::vector<Turn>>();
      s.created_at = from_millis(j.at("created_at_ms").get<std::int64_t>());
      s.last_active = from_millis(j.at("last_active_ms").get<std::int64_t>());
      s.checkpoint_id = j.value("checkpoint_id", "");
      if (now - s.last_active > config_.ttl) {
        fs::remove_all(dir);
        continue;
      }
      for (const auto& rj : j.at("results")) {
        TurnResult r = result_from_record(rj);
        if (rj.value("has_mask", false)) {
          r.mask = png_to_mask(read_file(dir / ("mask_" + std::to_string(r.turn) + ".png")));
        }
        s.results.push_back(std::move(r));
      }
      entry->image = png_to_image(read_file(dir / "image.png"));
      sessions_[s.session_id] = std::move(entry);
    } catch (const std::exception& e) {
      spdlog::warn("skipping unreadable session state in {}: {}", dir.string(), e.what());
    }
  }
  if (!sessions_.empty()) spdlog::info("restored {} sessions from {}", sessions_.size(), config_.state_dir->string());
}

std::string format_utc(Clock::time_point t) {
  const std::time_t tt = Clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string mask_url(const std::string& session_id, int turn) {
  return "/sessions/" + session_id + "/masks/" + std::to_string(turn);
}

json turn_result_json(const std::string& session_id, const TurnResult& r, bool inline_mask) {
  json j{{"turn", r.turn},
         {"assistant_text", r.assistant_text},
         {"seg_triggered", r.seg_triggered},
         {"latency_ms", r.latency_ms},
         {"checkpoint_id", r.checkpoint_id}};
  j["target_class"] = r.target_class ? json(*r.target_class) : json(nullptr);
  j["reason"] = r.reason ? json(*r.reason) : json(nullptr);
  j["mask_url"] = r.mask ? json(mask_url(session_id, r.turn)) : json(nullptr);
  if (inline_mask) j["mask_png_base64"] = r.mask ? json(base64_encode(mask_to_png(*r.mask))) : json(nullptr);
  return j;
}

json session_json(const Session& s) {
  json j{{"session_id", s.session_id},       {"width", s.width},
         {"height", s.height},               {"created_at", format_utc(s.created_at)},
         {"last_active", format_utc(s.last_active)}, {"checkpoint_id", s.checkpoint_id},
         {"history", s.history}};
  j["turns"] = json::array();
  for (const auto& r : s.results) j["turns"].push_back(turn_result_json(s.session_id, r, false));
  return j;
}

}  // namespace reasonseg
