#include <atomic>
#include <condition_variable>
#include <future>
#include <thread>

#include <gtest/gtest.h>

#include "reasonseg/api_server.h"
#include "reasonseg/errors.h"
#include "reasonseg/http_client.h"
#include "reasonseg/session.h"
#include "temp_dir.h"

// After the Eigen-based headers: <resolv.h> defines a `_res` macro.
#include <httplib.h>

using namespace reasonseg;
using reasonseg::testing::TempDir;
using nlohmann::json;

namespace {

Bytes test_png(int w = 24, int h = 16) {
  std::vector<float> data(static_cast<std::size_t>(w * h * 3));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i % 7) / 7.0f;
  return image_to_png(ImageBuffer(w, h, std::move(data)));
}

// Replies from a fixed script. A segmentation instruction yields a span and
// a left-half mask unless `no_span` or `ambiguous` is set.
class ScriptedModel : public TurnModel {
 public:
  explicit ScriptedModel(std::string id = "scripted/step_1") : id_(std::move(id)) {}

  PreparedImage prepare(const ImageBuffer& image) const override {
    ++prepares;
    return {image.width(), image.height(), image, image};
  }

  TurnReply respond(const PreparedImage& image, std::span<const Turn> history) const override {
    if (gate) gate->wait();
    if (fail) throw NumericError("non-finite logits");
    TurnReply r;
    const std::string& text = history.back().text;
    if (is_segmentation_instruction(text) && !no_span) {
      if (ambiguous) {
        r.text = "[OBJ] cup [SEG] [OBJ] box [SEG]";
        r.outcome = SegOutcome::Ambiguous;
        return r;
      }
      r.text = "It is [OBJ] cup [SEG] .";
      r.outcome = SegOutcome::Ok;
      r.target_class = "cup";
      std::vector<std::uint8_t> bits(static_cast<std::size_t>(image.width * image.height), 0);
      for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width / 2; ++x) bits[static_cast<std::size_t>(y * image.width + x)] = 1;
      r.mask = BinaryMask(image.width, image.height, std::move(bits));
      return r;
    }
    r.text = "turn " + std::to_string(history.size() / 2) + " : " + id_;
    return r;
  }

  std::string checkpoint_id() const override { return id_; }

  // Blocks respond() until released.
  struct Gate {
    std::mutex m;
    std::condition_variable cv;
    bool open = false;
    std::atomic<int> waiting{0};
    void wait() {
      std::unique_lock lock(m);
      ++waiting;
      cv.wait(lock, [&] { return open; });
    }
    void release() {
      std::lock_guard lock(m);
      open = true;
      cv.notify_all();
    }
    void wait_for_entry() const {
      while (waiting.load() == 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  };

  std::shared_ptr<Gate> gate;
  bool fail = false;
  bool no_span = false;
  bool ambiguous = false;
  mutable std::atomic<int> prepares{0};

 private:
  std::string id_;
};

struct FakeClock {
  Clock::time_point t = Clock::time_point(std::chrono::hours(24 * 365 * 50));
  std::function<Clock::time_point()> fn() {
    return [this] { return t; };
  }
};

const std::string kSegment(kSegmentInstruction);

}  // namespace

TEST(PngDimensions, ReadsHeader) {
  const auto [w, h] = png_dimensions(test_png(31, 9));
  EXPECT_EQ(w, 31);
  EXPECT_EQ(h, 9);
  const Bytes junk = {1, 2, 3};
  EXPECT_THROW(png_dimensions(junk), DecodeError);
}

TEST(SessionService, CreateSessionValidatesImage) {
  auto model = std::make_shared<ScriptedModel>();
  SessionService svc(model, {});
  const Session a = svc.create_session(test_png());
  const Session b = svc.create_session(test_png());
  EXPECT_NE(a.session_id, b.session_id);
  EXPECT_EQ(a.width, 24);
  EXPECT_EQ(a.height, 16);
  EXPECT_EQ(a.checkpoint_id, "scripted/step_1");
  EXPECT_TRUE(a.history.empty());
  // Prepared once at creation.
  EXPECT_EQ(model->prepares.load(), 2);

  const std::uint8_t one_pixel[] = {0};
  EXPECT_THROW(svc.create_session(gray_to_png(1, 1, one_pixel)), InvalidInput);
  const Bytes junk(64, 7);
  EXPECT_THROW(svc.create_session(junk), DecodeError);

  ServiceConfig small;
  small.max_pixels = 100;
  SessionService limited(model, small);
  EXPECT_THROW(limited.create_session(test_png()), InvalidInput);
}

TEST(SessionService, TurnWithoutTriggerHasNoMask) {
  SessionService svc(std::make_shared<ScriptedModel>(), {});
  const auto id = svc.create_session(test_png()).session_id;
  const TurnResult r = svc.post_turn(id, "What is on the table ?");
  EXPECT_FALSE(r.seg_triggered);
  EXPECT_FALSE(r.mask);
  EXPECT_FALSE(r.reason);
  EXPECT_EQ(r.turn, 0);
  EXPECT_GE(r.latency_ms, 0.0);
}

TEST(SessionService, SegmentInstructionReturnsMaskAtImageSize) {
  SessionService svc(std::make_shared<ScriptedModel>(), {});
  const auto id = svc.create_session(test_png(24, 16)).session_id;
  svc.post_turn(id, "Which object is red ?");
  const TurnResult r = svc.post_turn(id, kSegment);
  ASSERT_TRUE(r.seg_triggered);
  ASSERT_TRUE(r.mask);
  EXPECT_EQ(r.mask->width(), 24);
  EXPECT_EQ(r.mask->height(), 16);
  EXPECT_EQ(r.target_class, "cup");
  EXPECT_EQ(r.turn, 1);
  EXPECT_EQ(svc.turn_mask(id, 1), *r.mask);
  EXPECT_THROW(svc.turn_mask(id, 0), NotFound);
  EXPECT_THROW(svc.turn_mask(id, 5), NotFound);
}

TEST(SessionService, MissingSpanIsReportedNotForced) {
  auto model = std::make_shared<ScriptedModel>();
  model->no_span = true;
  SessionService svc(model, {});
  const auto id = svc.create_session(test_png()).session_id;
  const TurnResult r = svc.post_turn(id, kSegment);
  EXPECT_FALSE(r.seg_triggered);
  EXPECT_FALSE(r.mask);
  EXPECT_EQ(r.reason, "no_span");

  auto amb = std::make_shared<ScriptedModel>();
  amb->ambiguous = true;
  SessionService svc2(amb, {});
  const auto id2 = svc2.create_session(test_png()).session_id;
  const TurnResult r2 = svc2.post_turn(id2, kSegment);
  EXPECT_TRUE(r2.seg_triggered);
  EXPECT_FALSE(r2.mask);
  EXPECT_EQ(r2.reason, "ambiguous_span");
}

TEST(SessionService, HistoryAlternatesAndIsStable) {
  SessionService svc(std::make_shared<ScriptedModel>(), {});
  const auto id = svc.create_session(test_png()).session_id;
  for (const char* t : {"first question", "second question", "third question"}) svc.post_turn(id, t);
  const Session s = svc.get_session(id);
  ASSERT_EQ(s.history.size(), 6u);
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    EXPECT_EQ(s.history[i].role, i % 2 == 0 ? Role::User : Role::Assistant);
  }
  EXPECT_EQ(s.history[2].text, "second question");
  EXPECT_EQ(s.results.size(), 3u);
  EXPECT_EQ(svc.get_session(id).history, s.history);
}

TEST(SessionService, UnknownSessionAndBlankText) {
  SessionService svc(std::make_shared<ScriptedModel>(), {});
  EXPECT_THROW(svc.get_session("abc"), NotFound);
  EXPECT_THROW(svc.post_turn("abc", "hi"), NotFound);
  const auto id = svc.create_session(test_png()).session_id;
  EXPECT_THROW(svc.post_turn(id, "  "), InvalidInput);
  EXPECT_TRUE(svc.get_session(id).history.empty());
}

TEST(SessionService, GenerationFailureLeavesSessionUnchanged) {
  auto model = std::make_shared<ScriptedModel>();
  SessionService svc(model, {});
  const auto id = svc.create_session(test_png()).session_id;
  svc.post_turn(id, "hello");
  model->fail = true;
  EXPECT_THROW(svc.post_turn(id, "again"), PipelineError);
  const Session s = svc.get_session(id);
  EXPECT_EQ(s.history.size(), 2u);
  EXPECT_EQ(s.results.size(), 1u);
}

TEST(SessionService, ConcurrentTurnOnOneSessionConflicts) {
  auto model = std::make_shared<ScriptedModel>();
  model->gate = std::make_shared<ScriptedModel::Gate>();
  SessionService svc(model, {});
  const auto id = svc.create_session(test_png()).session_id;
  const auto other = svc.create_session(test_png()).session_id;

  auto first = std::async(std::launch::async, [&] { return svc.post_turn(id, "slow turn"); });
  model->gate->wait_for_entry();
  EXPECT_THROW(svc.post_turn(id, "second turn"), Conflict);
  // Reads and other sessions are not blocked.
  EXPECT_TRUE(svc.get_session(id).history.empty());
  auto independent = std::async(std::launch::async, [&] { return svc.post_turn(other, "parallel"); });
  model->gate->release();
  EXPECT_EQ(first.get().turn, 0);
  EXPECT_EQ(independent.get().turn, 0);
  EXPECT_EQ(svc.get_session(id).history.size(), 2u);
}

TEST(SessionService, SwapWaitsForInFlightTurns) {
  auto old_model = std::make_shared<ScriptedModel>("run/step_1");
  old_model->gate = std::make_shared<ScriptedModel::Gate>();
  SessionService svc(old_model, {});
  const auto id = svc.create_session(test_png()).session_id;

  auto in_flight = std::async(std::launch::async, [&] { return svc.post_turn(id, "slow"); });
  old_model->gate->wait_for_entry();
  std::atomic<bool> swapped{false};
  auto swapper = std::async(std::launch::async, [&] {
    svc.swap_model(std::make_shared<ScriptedModel>("run/step_2"));
    swapped = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_FALSE(swapped.load());
  old_model->gate->release();
  EXPECT_EQ(in_flight.get().checkpoint_id, "run/step_1");
  swapper.get();
  EXPECT_TRUE(swapped.load());
  EXPECT_EQ(svc.checkpoint_id(), "run/step_2");
  EXPECT_EQ(svc.post_turn(id, "next").checkpoint_id, "run/step_2");
}

TEST(SessionService, IdleSessionsExpireAfterTtl) {
  FakeClock clock;
  ServiceConfig cfg;
  cfg.ttl = std::chrono::hours(24);
  SessionService svc(std::make_shared<ScriptedModel>(), cfg, clock.fn());
  const auto stale = svc.create_session(test_png()).session_id;
  clock.t += std::chrono::hours(20);
  const auto fresh = svc.create_session(test_png()).session_id;
  clock.t += std::chrono::hours(5);
  EXPECT_EQ(svc.evict_expired(), 1u);
  EXPECT_THROW(svc.get_session(stale), NotFound);
  EXPECT_NO_THROW(svc.get_session(fresh));
  // Activity resets the idle clock.
  svc.post_turn(fresh, "still here");
  clock.t += std::chrono::hours(23);
  EXPECT_EQ(svc.evict_expired(), 0u);
}

TEST(SessionService, SessionLimitRejectsUntilExpiry) {
  FakeClock clock;
  ServiceConfig cfg;
  cfg.max_sessions = 2;
  cfg.ttl = std::chrono::seconds(60);
  SessionService svc(std::make_shared<ScriptedModel>(), cfg, clock.fn());
  svc.create_session(test_png());
  svc.create_session(test_png());
  EXPECT_THROW(svc.create_session(test_png()), Unavailable);
  clock.t += std::chrono::seconds(61);
  EXPECT_NO_THROW(svc.create_session(test_png()));
  EXPECT_EQ(svc.size(), 1u);
}

TEST(SessionService, StateDirSurvivesRestart) {
  TempDir dir("sessions");
  ServiceConfig cfg;
  cfg.state_dir = dir.path();
  std::string id;
  BinaryMask mask;
  {
    SessionService svc(std::make_shared<ScriptedModel>(), cfg);
    id = svc.create_session(test_png()).session_id;
    svc.post_turn(id, "hello");
    mask = *svc.post_turn(id, kSegment).mask;
  }
  SessionService again(std::make_shared<ScriptedModel>(), cfg);
  const Session s = again.get_session(id);
  EXPECT_EQ(s.history.size(), 4u);
  EXPECT_EQ(again.turn_mask(id, 1), mask);
  EXPECT_EQ(again.post_turn(id, "more").turn, 2);
}

TEST(SessionService, RealModelRepliesMatchOfflineReplay) {
  Tokenizer tok;
  const std::vector<std::string> corpus = {"which object is red ? the cup is red .", std::string(kSegmentInstruction)};
  tok.fit(corpus);
  auto net = std::make_unique<ReasoningSegModel>(ModelConfig::preset("tiny"), tok);
  auto model = std::make_shared<CheckpointTurnModel>(std::move(net), "tiny/step_0", 12);
  SessionService svc(model, {});
  const Bytes png = test_png(40, 30);
  const auto id = svc.create_session(png).session_id;
  svc.post_turn(id, "which object is red ?");
  const TurnResult last = svc.post_turn(id, kSegment);
  if (last.mask) {
    EXPECT_EQ(last.mask->width(), 40);
    EXPECT_EQ(last.mask->height(), 30);
  }

  const Session s = svc.get_session(id);
  const PreparedImage prepared = model->model().prepare(png_to_image(png));
  std::vector<Turn> replay;
  for (std::size_t i = 0; i < s.history.size(); i += 2) {
    replay.push_back(s.history[i]);
    const auto offline = model->model().respond(prepared, replay, 12);
    EXPECT_EQ(offline.text, s.history[i + 1].text);
    replay.push_back(s.history[i + 1]);
  }
}

TEST(ServiceConfig, EnvOverridesAndValidation) {
  ServiceConfig c;
  ::setenv("REASONSEG_PORT", "9123", 1);
  ::setenv("REASONSEG_TTL_SECONDS", "60", 1);
  c.apply_env();
  ::unsetenv("REASONSEG_PORT");
  ::unsetenv("REASONSEG_TTL_SECONDS");
  EXPECT_EQ(c.port, 9123);
  EXPECT_EQ(c.ttl.count(), 60);
  ::setenv("REASONSEG_MAX_SESSIONS", "many", 1);
  EXPECT_THROW(c.apply_env(), InvalidInput);
  ::unsetenv("REASONSEG_MAX_SESSIONS");
  c.max_sessions = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
  const ServiceConfig round = json(ServiceConfig{}).get<ServiceConfig>();
  EXPECT_EQ(json(round), json(ServiceConfig{}));
}

class ApiFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = std::make_shared<ScriptedModel>("run/step_1");
    service_ = std::make_unique<SessionService>(model_, ServiceConfig{});
    server_ = std::make_unique<ApiServer>(*service_, [] { return std::make_shared<ScriptedModel>("run/step_9"); });
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->serve(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(10, 0);
    for (int i = 0; i < 200 && !client_->Get("/healthz"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }

  std::string create() {
    const Bytes png = test_png();
    httplib::MultipartFormDataItems items = {{"image", std::string(png.begin(), png.end()), "img.png", "image/png"}};
    auto res = client_->Post("/sessions", items);
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 201) << res->body;
    return json::parse(res->body)["session_id"].get<std::string>();
  }

  httplib::Result turn(const std::string& id, const std::string& text) {
    return client_->Post("/sessions/" + id + "/turns", json{{"text", text}}.dump(), "application/json");
  }

  std::shared_ptr<ScriptedModel> model_;
  std::unique_ptr<SessionService> service_;
  std::unique_ptr<ApiServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(ApiFixture, HealthzReportsCheckpoint) {
  auto res = client_->Get("/healthz");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const json j = json::parse(res->body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["checkpoint_id"], "run/step_1");
}

TEST_F(ApiFixture, FullDialogueOverHttp) {
  const std::string id = create();
  auto r1 = turn(id, "Which object is red ?");
  ASSERT_TRUE(r1);
  ASSERT_EQ(r1->status, 200) << r1->body;
  const json j1 = json::parse(r1->body);
  EXPECT_FALSE(j1["seg_triggered"].get<bool>());
  EXPECT_TRUE(j1["mask_url"].is_null());

  auto r2 = turn(id, kSegment);
  ASSERT_EQ(r2->status, 200);
  const json j2 = json::parse(r2->body);
  EXPECT_TRUE(j2["seg_triggered"].get<bool>());
  EXPECT_EQ(j2["target_class"], "cup");
  const std::string url = j2["mask_url"].get<std::string>();
  EXPECT_EQ(url, mask_url(id, 1));
  const BinaryMask inline_mask = png_to_mask(base64_decode(j2["mask_png_base64"].get<std::string>()));

  auto png = client_->Get(url);
  ASSERT_EQ(png->status, 200);
  EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
  const BinaryMask served =
      png_to_mask(std::span(reinterpret_cast<const std::uint8_t*>(png->body.data()), png->body.size()));
  EXPECT_EQ(served, inline_mask);
  EXPECT_EQ(served.width(), 24);
  EXPECT_EQ(served.height(), 16);

  auto s = client_->Get("/sessions/" + id);
  ASSERT_EQ(s->status, 200);
  const json sj = json::parse(s->body);
  EXPECT_EQ(sj["history"].size(), 4u);
  EXPECT_EQ(sj["turns"].size(), 2u);
  EXPECT_EQ(sj["turns"][1]["mask_url"], url);
  EXPECT_FALSE(sj["turns"][1].contains("mask_png_base64"));
}

TEST_F(ApiFixture, RawPngBodyIsAccepted) {
  const Bytes png = test_png();
  auto res = client_->Post("/sessions", std::string(png.begin(), png.end()), "image/png");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
}

TEST_F(ApiFixture, ErrorsAreJsonWithStatus) {
  auto missing = client_->Get("/sessions/deadbeef");
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["error"]["code"], "not_found");

  const std::string id = create();
  auto no_mask = client_->Get("/sessions/" + id + "/masks/0");
  EXPECT_EQ(no_mask->status, 404);

  auto bad_json = client_->Post("/sessions/" + id + "/turns", "{not json", "application/json");
  EXPECT_EQ(bad_json->status, 400);
  auto no_text = client_->Post("/sessions/" + id + "/turns", R"({"txt":"x"})", "application/json");
  EXPECT_EQ(no_text->status, 400);

  auto junk = client_->Post("/sessions", "not an image", "image/png");
  EXPECT_EQ(junk->status, 400);
  EXPECT_EQ(json::parse(junk->body)["error"]["code"], "undecodable");

  const std::uint8_t tiny[] = {0};
  const Bytes one = gray_to_png(1, 1, tiny);
  auto small = client_->Post("/sessions", std::string(one.begin(), one.end()), "image/png");
  EXPECT_EQ(small->status, 400);

  auto route = client_->Get("/nope");
  EXPECT_EQ(route->status, 404);

  model_->fail = true;
  auto failed = turn(id, "hi");
  EXPECT_EQ(failed->status, 500);
  EXPECT_EQ(json::parse(failed->body)["error"]["code"], "generation_failed");
}

TEST_F(ApiFixture, ConcurrentTurnsGetConflict) {
  const std::string id = create();
  model_->gate = std::make_shared<ScriptedModel::Gate>();
  auto slow = std::async(std::launch::async, [&] {
    httplib::Client c("127.0.0.1", port_);
    return c.Post("/sessions/" + id + "/turns", json{{"text", "slow"}}.dump(), "application/json")->status;
  });
  model_->gate->wait_for_entry();
  auto second = turn(id, "second");
  EXPECT_EQ(second->status, 409);
  model_->gate->release();
  EXPECT_EQ(slow.get(), 200);
}

TEST_F(ApiFixture, CorsHeadersAndPreflight) {
  auto res = client_->Get("/healthz");
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  auto pre = client_->Options("/sessions");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST_F(ApiFixture, ReloadSwapsCheckpoint) {
  auto res = client_->Post("/admin/reload", "", "application/json");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["checkpoint_id"], "run/step_9");
  EXPECT_EQ(service_->checkpoint_id(), "run/step_9");
}
