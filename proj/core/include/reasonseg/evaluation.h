#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reasonseg/dataset.h"
#include "reasonseg/http_client.h"
#include "reasonseg/imaging.h"

namespace reasonseg {

// ---- segmentation ---------------------------------------------------------

struct PixelPrf {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// TP / (TP + FP), TP / (TP + FN) and their harmonic mean, each 0 when its
/// denominator is 0. Throws InvalidInput on a shape mismatch.
PixelPrf pixel_prf(const BinaryMask& pred, const BinaryMask& gt);

/// Cumulative IoU: summed intersections over summed unions. 1.0 when every
/// union is empty. Throws InvalidInput for empty or misaligned lists.
double ciou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);
/// Per-sample IoU averaged over the list.
double mean_iou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);

struct SegScores {
  double ciou = 0;
  double mean_iou = 0;
  // Pooled over all pixels of all samples.
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};
SegScores seg_scores(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);

// ---- response text --------------------------------------------------------

/// Lower-cased tokens with punctuation split off.
std::vector<std::string> text_tokens(const std::string& text);

/// Porter (1980) suffix-stripping stemmer for lower-case English words.
std::string porter_stem(const std::string& word);

double bleu4(const std::vector<std::string>& pred, const std::vector<std::vector<std::string>>& refs);
/// LCS F-measure with recall weight beta, best over references.
double rouge_l(const std::vector<std::string>& pred, const std::vector<std::vector<std::string>>& refs,
               double beta = 1.2);
/// Distinct n-grams over total n-grams; 0 when there are none.
double distinct_n(const std::vector<std::string>& tokens, int n);
/// Unigram harmonic mean (recall weighted 9:1) with exact-then-stem matching
/// and the fragmentation penalty; no synonym stage. Best over references.
double meteor_v(const std::vector<std::string>& pred, const std::vector<std::vector<std::string>>& refs);

struct TextScores {
  double bleu4 = 0;
  double rouge_l = 0;
  double dist1 = 0;
  double dist2 = 0;
  double meteor_v = 0;
};
/// Throws InvalidInput for an empty prediction.
TextScores text_metrics(const std::string& pred, const std::vector<std::string>& refs);

// ---- judged reasoning quality ---------------------------------------------

enum class JudgeMetric { PR, LC, CC, TR };
inline constexpr std::array<JudgeMetric, 4> kJudgeMetrics = {JudgeMetric::PR, JudgeMetric::LC, JudgeMetric::CC,
                                                            JudgeMetric::TR};
std::string_view to_string(JudgeMetric m);

/// Rubric prompt for one metric over a rendered dialogue.
std::string judge_prompt(JudgeMetric metric, const std::string& dialogue);

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  /// Raw reply to one scoring request. `repeat` counts 0..4 and `attempt`
  /// is 1 for the retry of a malformed reply.
  virtual std::string ask(JudgeMetric metric, const std::string& prompt, int repeat, int attempt) = 0;
};

/// Deterministic judge: replies come from a function of (metric, repeat);
/// a retry gets the same reply.
class StubJudge : public JudgeClient {
 public:
  using Script = std::function<std::string(JudgeMetric, int repeat)>;
  explicit StubJudge(Script script) : script_(std::move(script)) {}
  /// Always answers `score`.
  static StubJudge constant(int score);
  std::string ask(JudgeMetric metric, const std::string&, int repeat, int) override {
    ++calls;
    return script_(metric, repeat);
  }
  int calls = 0;

 private:
  Script script_;
};

/// Judge backed by a chat-completions endpoint.
class ChatJudge : public JudgeClient {
 public:
  explicit ChatJudge(ChatClient& client) : client_(client) {}
  std::string ask(JudgeMetric metric, const std::string& prompt, int repeat, int attempt) override;

 private:
  ChatClient& client_;
};

/// Integer score 0..5 from a judge reply, if it holds exactly one.
std::optional<int> parse_judge_score(const std::string& reply);

inline constexpr int kJudgeRepeats = 5;
inline constexpr int kMinValidRepeats = 3;

struct JudgeScores {
  // Indexed by JudgeMetric; value is the mean of the valid repeats.
  std::array<double, 4> mean{};
  std::array<std::vector<int>, 4> repeats;
  bool scored = false;
  std::string reason;  // why the sample is unscored

  double pr() const { return mean[0]; }
  double lc() const { return mean[1]; }
  double cc() const { return mean[2]; }
  double tr() const { return mean[3]; }
  double overall() const { return (mean[0] + mean[1] + mean[2] + mean[3]) / 4; }
};
void to_json(nlohmann::json& j, const JudgeScores& s);

/// Dialogue rendered as "User: ... / Assistant: ..." lines.
std::string render_dialogue(std::span<const Turn> turns);

/// Five scoring requests per metric; a malformed reply is retried once and
/// then dropped. Fewer than three valid repeats for any metric leaves the
/// sample unscored.
JudgeScores judge_reasoning(std::span<const Turn> dialogue, JudgeClient& judge);

struct WinRateReport {
  int wins = 0;
  int losses = 0;
  int ties = 0;
  double win_rate = 0;  // percent, ties in the denominator
  /// Whole percentages print without decimals ("42").
  std::string formatted() const;
};
void to_json(nlohmann::json& j, const WinRateReport& r);

/// Throws InvalidInput for misaligned or empty lists.
WinRateReport win_rate(std::span<const double> model_scores, std::span<const double> human_scores);

// ---- report ---------------------------------------------------------------

struct Prediction {
  std::string sample_id;
  // Model turns for the dialogue, joined; compared against the reference
  // assistant turns.
  std::string response_text;
  std::optional<std::string> mask_path;  // relative to the predictions file
  // Full model-side dialogue for judging; optional.
  std::vector<Turn> turns;
};
void to_json(nlohmann::json& j, const Prediction& p);
void from_json(const nlohmann::json& j, Prediction& p);

/// Reads a predictions JSONL file. Throws NotFound / InvalidInput.
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

/// Reference text of a sample: its assistant turns joined by spaces.
std::string reference_text(const DialogueSample& sample);

struct EvalRequest {
  std::filesystem::path predictions;
  std::filesystem::path manifest;
  std::set<std::string> metrics = {"seg", "text"};  // plus "judge"
  JudgeClient* judge = nullptr;                     // required for "judge"
};

/// Computes every requested metric block plus per-sample rows. Predictions
/// for unknown samples raise InvalidInput; samples without a prediction are
/// skipped and counted.
nlohmann::json evaluate(const EvalRequest& request);

}  // namespace reasonseg
