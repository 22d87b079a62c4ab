#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reasonseg/model.h"
#include "reasonseg/png_codec.h"

namespace reasonseg {

using Clock = std::chrono::system_clock;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path checkpoint;
  std::size_t max_sessions = 64;
  std::chrono::seconds ttl = std::chrono::hours(24);
  std::int64_t max_pixels = 4096LL * 4096LL;
  int max_new_tokens = 48;
  std::string cors_origin = "*";
  // When set, sessions are written here and reloaded on restart.
  std::optional<std::filesystem::path> state_dir;
  // When set, served under /ui.
  std::optional<std::filesystem::path> ui_dir;

  void validate() const;
  /// Overrides from REASONSEG_PORT, REASONSEG_CHECKPOINT,
  /// REASONSEG_MAX_SESSIONS and REASONSEG_TTL_SECONDS when set.
  void apply_env();
};
void to_json(nlohmann::json& j, const ServiceConfig& c);
void from_json(const nlohmann::json& j, ServiceConfig& c);

/// What a model produced for one user turn.
struct TurnReply {
  std::string text;
  SegOutcome outcome = SegOutcome::NoSegmentation;
  std::optional<std::string> target_class;
  std::optional<BinaryMask> mask;  // at the original image size
};

/// The model as seen by the session engine.
class TurnModel {
 public:
  virtual ~TurnModel() = default;
  virtual PreparedImage prepare(const ImageBuffer& image) const = 0;
  /// `history` ends with the new user turn.
  virtual TurnReply respond(const PreparedImage& image, std::span<const Turn> history) const = 0;
  virtual std::string checkpoint_id() const = 0;
};

/// Greedy decoding with a loaded ReasoningSegModel.
class CheckpointTurnModel : public TurnModel {
 public:
  CheckpointTurnModel(std::unique_ptr<ReasoningSegModel> model, std::string checkpoint_id, int max_new_tokens = 48);
  /// Loads the newest checkpoint under `path`.
  static std::shared_ptr<CheckpointTurnModel> load(const std::filesystem::path& path, int max_new_tokens = 48);

  PreparedImage prepare(const ImageBuffer& image) const override { return model_->prepare(image); }
  TurnReply respond(const PreparedImage& image, std::span<const Turn> history) const override;
  std::string checkpoint_id() const override { return checkpoint_id_; }
  const ReasoningSegModel& model() const { return *model_; }

 private:
  std::unique_ptr<ReasoningSegModel> model_;
  std::string checkpoint_id_;
  int max_new_tokens_;
};

struct TurnResult {
  int turn = 0;  // 0-based index of the user turn
  std::string assistant_text;
  bool seg_triggered = false;
  std::optional<BinaryMask> mask;
  std::optional<std::string> target_class;
  // Machine-readable note when a segmentation was asked for or attempted but
  // no mask came back: "no_span" or "ambiguous_span".
  std::optional<std::string> reason;
  double latency_ms = 0;
  std::string checkpoint_id;
};

struct Session {
  std::string session_id;
  int width = 0;
  int height = 0;
  std::vector<Turn> history;  // user, assistant, user, ...
  std::vector<TurnResult> results;
  Clock::time_point created_at;
  Clock::time_point last_active;
  std::string checkpoint_id;  // model the session was created under
};

/// Reads width and height from a PNG header without decoding pixels.
/// Throws DecodeError when the bytes are not a PNG.
std::pair<std::int64_t, std::int64_t> png_dimensions(std::span<const std::uint8_t> bytes);

/// Session engine: owns session state and runs the model per user turn.
/// Turns on one session are serialized; a second concurrent turn on the same
/// session raises Conflict. The model is shared read-only and can be swapped
/// once in-flight turns finish.
class SessionService {
 public:
  SessionService(std::shared_ptr<const TurnModel> model, ServiceConfig config,
                 std::function<Clock::time_point()> now = Clock::now);

  /// Throws DecodeError for non-PNG bytes, InvalidInput for images outside
  /// the size limits and Unavailable when the session limit is reached.
  Session create_session(std::span<const std::uint8_t> png);
  /// Throws NotFound, Conflict, InvalidInput for blank text and
  /// PipelineError when generation fails (the session is left unchanged).
  TurnResult post_turn(const std::string& session_id, const std::string& user_text);
  Session get_session(const std::string& session_id);
  /// Mask of the given turn. Throws NotFound when the turn has none.
  BinaryMask turn_mask(const std::string& session_id, int turn);

  /// Blocks until in-flight turns finish, then serves new turns with `model`.
  void swap_model(std::shared_ptr<const TurnModel> model);
  std::string checkpoint_id() const;

  /// Drops sessions idle for longer than the TTL; returns how many.
  std::size_t evict_expired();
  std::size_t size() const;
  const ServiceConfig& config() const { return config_; }

 private:
  struct Entry {
    std::mutex turn;         // held for the whole of a turn
    mutable std::mutex data; // guards the fields below
    Session session;
    ImageBuffer image;
    std::optional<PreparedImage> prepared;
    std::uint64_t prepared_generation = 0;
  };

  std::shared_ptr<Entry> find(const std::string& session_id);
  std::string new_session_id();
  void persist(const Entry& entry) const;
  void persist_mask(const std::string& session_id, int turn, const BinaryMask& mask) const;
  void restore();

  ServiceConfig config_;
  std::function<Clock::time_point()> now_;

  mutable std::shared_mutex model_mutex_;
  std::shared_ptr<const TurnModel> model_;
  std::uint64_t model_generation_ = 1;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mt19937_64 id_rng_;
};

/// JSON views used by the HTTP API.
nlohmann::json session_json(const Session& s);
/// `inline_mask` adds the PNG as base64 under "mask_png_base64".
nlohmann::json turn_result_json(const std::string& session_id, const TurnResult& r, bool inline_mask);
std::string mask_url(const std::string& session_id, int turn);
std::string format_utc(Clock::time_point t);

}  // namespace reasonseg
