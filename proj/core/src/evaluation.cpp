#include "reasonseg/evaluation.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>

#include <spdlog/spdlog.h>

#include "reasonseg/errors.h"
#include "reasonseg/png_codec.h"

namespace reasonseg {
namespace {

using nlohmann::json;
using Tokens = std::vector<std::string>;

void check_aligned(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  if (preds.empty()) throw InvalidInput("mask lists are empty");
  if (preds.size() != gts.size()) throw InvalidInput("prediction and ground-truth lists differ in length");
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (!preds[i].same_shape(gts[i])) throw InvalidInput("mask pair " + std::to_string(i) + " differs in shape");
}

struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  void add(const BinaryMask& pred, const BinaryMask& gt) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i], g = gt[i];
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
  }
  PixelPrf prf() const {
    PixelPrf r;
    if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
    return r;
  }
};

std::map<Tokens, int> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, int> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<long>(i), t.begin() + static_cast<long>(i + n))];
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double meteor_single(const Tokens& pred, const Tokens& ref) {
  if (pred.empty() || ref.empty()) return 0.0;
  std::vector<int> align(pred.size(), -1);
  std::vector<bool> used(ref.size(), false);
  auto match_pass = [&](auto&& same) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (align[i] >= 0) continue;
      for (std::size_t j = 0; j < ref.size(); ++j)
        if (!used[j] && same(pred[i], ref[j])) {
          align[i] = static_cast<int>(j);
          used[j] = true;
          break;
        }
    }
  };
  match_pass([](const std::string& a, const std::string& b) { return a == b; });
  match_pass([](const std::string& a, const std::string& b) { return porter_stem(a) == porter_stem(b); });

  int m = 0, chunks = 0;
  int last = -2;
  for (int j : align) {
    if (j < 0) {
      last = -2;
      continue;
    }
    ++m;
    if (j != last + 1) ++chunks;
    last = j;
  }
  if (m == 0) return 0.0;
  const double p = static_cast<double>(m) / static_cast<double>(pred.size());
  const double r = static_cast<double>(m) / static_cast<double>(ref.size());
  const double fmean = 10 * p * r / (r + 9 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3);
  return fmean * (1 - penalty);
}

std::string metric_focus(JudgeMetric m) {
  switch (m) {
    case JudgeMetric::PR:
      return "Progressiveness: does each turn prepare and lead into the turn after it, narrowing the search step "
             "by step?";
    case JudgeMetric::LC:
      return "Logical coherence: do consecutive turns follow from one another without gaps or contradictions?";
    case JudgeMetric::CC:
      return "Content consistency: does the whole conversation stay on its overall topic?";
    case JudgeMetric::TR:
      return "Target relevance: does the conversation keep its attention on the object that is finally "
             "segmented?";
  }
  return "";
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

PixelPrf pixel_prf(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_shape(gt)) throw InvalidInput("pixel_prf: masks differ in shape");
  Confusion c;
  c.add(pred, gt);
  return c.prf();
}

double ciou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  check_aligned(preds, gts);
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    inter += mask_intersection(preds[i], gts[i]);
    uni += mask_union(preds[i], gts[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_iou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  check_aligned(preds, gts);
  double s = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += mask_iou(preds[i], gts[i]);
  return s / static_cast<double>(preds.size());
}

SegScores seg_scores(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  SegScores s;
  s.ciou = ciou(preds, gts);
  s.mean_iou = mean_iou(preds, gts);
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) c.add(preds[i], gts[i]);
  const PixelPrf p = c.prf();
  s.precision = p.precision;
  s.recall = p.recall;
  s.f1 = p.f1;
  return s;
}

std::vector<std::string> text_tokens(const std::string& text) {
  static const std::regex token_re(R"(\[[A-Za-z]+\]|[A-Za-z0-9]+(?:['-][A-Za-z0-9]+)*|[^\sA-Za-z0-9])");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), token_re); it != std::sregex_iterator(); ++it) {
    std::string t = it->str();
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(t));
  }
  return out;
}

double bleu4(const Tokens& pred, const std::vector<Tokens>& refs) {
  if (pred.empty() || refs.empty()) return 0.0;
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto counts = ngram_counts(pred, n);
    std::map<Tokens, int> max_ref;
    for (const auto& r : refs)
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    int clipped = 0, total = 0;
    for (const auto& [g, c] : counts) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / total);
  }
  // Closest reference length, shorter on ties.
  const double c = static_cast<double>(pred.size());
  double r = static_cast<double>(refs.front().size());
  for (const auto& ref : refs) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4);
}

double rouge_l(const Tokens& pred, const std::vector<Tokens>& refs, double beta) {
  double best = 0;
  for (const auto& ref : refs) {
    if (pred.empty() || ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(pred, ref));
    if (lcs == 0) continue;
    const double r = lcs / static_cast<double>(ref.size());
    const double p = lcs / static_cast<double>(pred.size());
    const double b2 = beta * beta;
    best = std::max(best, (1 + b2) * r * p / (r + b2 * p));
  }
  return best;
}

double distinct_n(const Tokens& tokens, int n) {
  if (n < 1 || tokens.size() < static_cast<std::size_t>(n)) return 0.0;
  const auto counts = ngram_counts(tokens, static_cast<std::size_t>(n));
  return static_cast<double>(counts.size()) / static_cast<double>(tokens.size() - static_cast<std::size_t>(n) + 1);
}

double meteor_v(const Tokens& pred, const std::vector<Tokens>& refs) {
  double best = 0;
  for (const auto& r : refs) best = std::max(best, meteor_single(pred, r));
  return best;
}

TextScores text_metrics(const std::string& pred, const std::vector<std::string>& refs) {
  const Tokens p = text_tokens(pred);
  if (p.empty()) throw InvalidInput("text metrics need a non-empty prediction");
  std::vector<Tokens> r;
  for (const auto& s : refs) r.push_back(text_tokens(s));
  return {bleu4(p, r), rouge_l(p, r), distinct_n(p, 1), distinct_n(p, 2), meteor_v(p, r)};
}

std::string_view to_string(JudgeMetric m) {
  switch (m) {
    case JudgeMetric::PR: return "PR";
    case JudgeMetric::LC: return "LC";
    case JudgeMetric::CC: return "CC";
    case JudgeMetric::TR: return "TR";
  }
  return "?";
}

std::string judge_prompt(JudgeMetric metric, const std::string& dialogue) {
  return "You are grading one quality of a multi-turn conversation about an image.\n\n" + metric_focus(metric) +
         "\n\nScoring guide:\n"
         "0-1: the quality is mostly absent.\n"
         "2-3: the quality is present but uneven, with noticeable lapses.\n"
         "4-5: the quality holds throughout the conversation.\n\n"
         "Think it through step by step, then finish with a single line of the form \"Score: N\" where N is an "
         "integer from 0 to 5.\n\nConversation:\n" +
         dialogue;
}

StubJudge StubJudge::constant(int score) {
  return StubJudge([score](JudgeMetric, int) { return std::to_string(score); });
}

std::string ChatJudge::ask(JudgeMetric, const std::string& prompt, int, int) {
  return client_.complete({{"user", prompt, std::nullopt}});
}

std::optional<int> parse_judge_score(const std::string& reply) {
  static const std::regex labelled(R"(score\s*[:=]?\s*(\d+)\s*(?:/\s*5)?\s*\.?\s*$)", std::regex::icase);
  static const std::regex number(R"(\d+)");
  std::smatch m;
  std::string value;
  if (std::regex_search(reply, m, labelled)) {
    value = m[1];
  } else {
    std::vector<std::string> found;
    for (auto it = std::sregex_iterator(reply.begin(), reply.end(), number); it != std::sregex_iterator(); ++it)
      found.push_back(it->str());
    if (found.size() != 1) return std::nullopt;
    value = found.front();
  }
  if (value.size() > 1) return std::nullopt;
  const int v = value[0] - '0';
  if (v < 0 || v > 5) return std::nullopt;
  return v;
}

void to_json(json& j, const JudgeScores& s) {
  j = json{{"scored", s.scored}};
  if (!s.reason.empty()) j["reason"] = s.reason;
  for (std::size_t i = 0; i < kJudgeMetrics.size(); ++i) {
    const std::string key(to_string(kJudgeMetrics[i]));
    j[key] = s.mean[i];
    j[key + "_repeats"] = s.repeats[i];
  }
  if (s.scored) j["overall"] = s.overall();
}

std::string render_dialogue(std::span<const Turn> turns) {
  std::string out;
  for (const auto& t : turns) out += std::string(t.role == Role::User ? "User: " : "Assistant: ") + t.text + "\n";
  return out;
}

JudgeScores judge_reasoning(std::span<const Turn> dialogue, JudgeClient& judge) {
  JudgeScores s;
  s.scored = true;
  const std::string rendered = render_dialogue(dialogue);
  for (std::size_t mi = 0; mi < kJudgeMetrics.size(); ++mi) {
    const JudgeMetric metric = kJudgeMetrics[mi];
    const std::string prompt = judge_prompt(metric, rendered);
    for (int r = 0; r < kJudgeRepeats; ++r) {
      std::optional<int> score;
      for (int attempt = 0; attempt < 2 && !score; ++attempt) {
        try {
          score = parse_judge_score(judge.ask(metric, prompt, r, attempt));
        } catch (const IoError& e) {
          spdlog::warn("judge request failed ({} repeat {}): {}", to_string(metric), r, e.what());
        }
      }
      if (score) s.repeats[mi].push_back(*score);
    }
    const auto& reps = s.repeats[mi];
    if (static_cast<int>(reps.size()) < kMinValidRepeats) {
      s.scored = false;
      if (s.reason.empty()) {
        s.reason = std::string(to_string(metric)) + ": only " + std::to_string(reps.size()) + " valid repeats";
      }
      continue;
    }
    double sum = 0;
    for (int v : reps) sum += v;
    s.mean[mi] = sum / static_cast<double>(reps.size());
  }
  return s;
}

std::string WinRateReport::formatted() const {
  char buf[32];
  if (win_rate == std::round(win_rate)) {
    std::snprintf(buf, sizeof buf, "%.0f", win_rate);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", win_rate);
  }
  return buf;
}

void to_json(json& j, const WinRateReport& r) {
  j = json{{"wins", r.wins}, {"losses", r.losses}, {"ties", r.ties}, {"win_rate", r.win_rate},
           {"win_rate_text", r.formatted()}};
}

WinRateReport win_rate(std::span<const double> model_scores, std::span<const double> human_scores) {
  if (model_scores.size() != human_scores.size()) throw InvalidInput("win_rate: score lists differ in length");
  if (model_scores.empty()) throw InvalidInput("win_rate: no samples");
  WinRateReport r;
  for (std::size_t i = 0; i < model_scores.size(); ++i) {
    if (model_scores[i] > human_scores[i]) ++r.wins;
    else if (model_scores[i] < human_scores[i]) ++r.losses;
    else ++r.ties;
  }
  r.win_rate = 100.0 * r.wins / static_cast<double>(model_scores.size());
  return r;
}

void to_json(json& j, const Prediction& p) {
  j = json{{"sample_id", p.sample_id}, {"response_text", p.response_text}};
  if (p.mask_path) j["mask_path"] = *p.mask_path;
  if (!p.turns.empty()) j["turns"] = p.turns;
}

void from_json(const json& j, Prediction& p) {
  p.sample_id = j.at("sample_id").get<std::string>();
  p.response_text = j.value("response_text", "");
  if (j.contains("mask_path") && !j["mask_path"].is_null()) p.mask_path = j["mask_path"].get<std::string>();
  if (j.contains("turns")) p.turns = j["turns"].get<std::vector<Turn>>();
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("predictions file not found: " + path.string());
  std::vector<Prediction> out;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<Prediction>());
    } catch (const json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string reference_text(const DialogueSample& sample) {
  std::string out;
  for (const auto& t : sample.turns) {
    if (t.role != Role::Assistant) continue;
    if (!out.empty()) out += ' ';
    out += t.text;
  }
  return out;
}

json evaluate(const EvalRequest& request) {
  for (const auto& m : request.metrics)
    if (m != "seg" && m != "text" && m != "judge") throw InvalidInput("unknown metric block: " + m);
  if (request.metrics.count("judge") && !request.judge) throw InvalidInput("judge metrics need a judge");
  const Dataset dataset = load_dataset(request.manifest);
  const auto predictions = load_predictions(request.predictions);
  std::map<std::string, const DialogueSample*> by_id;
  for (const auto& s : dataset.samples) by_id[s.sample_id] = &s;

  const auto pred_dir = request.predictions.parent_path();
  std::vector<BinaryMask> preds, gts;
  std::vector<double> bleu, rouge, d1, d2, meteor;
  std::vector<double> model_overall, human_overall;
  std::array<std::vector<double>, 4> model_metric, human_metric;
  int missing_masks = 0, empty_responses = 0, unscored = 0;
  json rows = json::array();

  for (const auto& p : predictions) {
    const auto it = by_id.find(p.sample_id);
    if (it == by_id.end()) throw InvalidInput("prediction for unknown sample " + p.sample_id);
    const DialogueSample& s = *it->second;
    json row{{"sample_id", p.sample_id}};

    if (request.metrics.count("seg")) {
      BinaryMask gt = dataset.load_mask(s);
      BinaryMask pred(gt.width(), gt.height());
      if (p.mask_path) {
        pred = png_to_mask(read_file(pred_dir / *p.mask_path));
        if (!pred.same_shape(gt)) throw InvalidInput("predicted mask for " + p.sample_id + " has the wrong size");
      } else {
        ++missing_masks;
      }
      const PixelPrf prf = pixel_prf(pred, gt);
      row["iou"] = mask_iou(pred, gt);
      row["precision"] = prf.precision;
      row["recall"] = prf.recall;
      row["f1"] = prf.f1;
      preds.push_back(std::move(pred));
      gts.push_back(std::move(gt));
    }

    if (request.metrics.count("text")) {
      TextScores t;
      if (text_tokens(p.response_text).empty()) {
        ++empty_responses;
      } else {
        t = text_metrics(p.response_text, {reference_text(s)});
      }
      bleu.push_back(t.bleu4);
      rouge.push_back(t.rouge_l);
      d1.push_back(t.dist1);
      d2.push_back(t.dist2);
      meteor.push_back(t.meteor_v);
      row["bleu4"] = t.bleu4;
      row["rougeL"] = t.rouge_l;
      row["dist1"] = t.dist1;
      row["dist2"] = t.dist2;
      row["meteor_v"] = t.meteor_v;
    }

    if (request.metrics.count("judge") && !p.turns.empty()) {
      const JudgeScores model = judge_reasoning(p.turns, *request.judge);
      const JudgeScores human = judge_reasoning(s.turns, *request.judge);
      row["judge_model"] = model;
      row["judge_human"] = human;
      if (model.scored && human.scored) {
        model_overall.push_back(model.overall());
        human_overall.push_back(human.overall());
        for (std::size_t i = 0; i < 4; ++i) {
          model_metric[i].push_back(model.mean[i]);
          human_metric[i].push_back(human.mean[i]);
        }
      } else {
        ++unscored;
      }
    }
    rows.push_back(std::move(row));
  }

  json report{{"num_predictions", predictions.size()},
              {"num_samples", dataset.samples.size()},
              {"missing_predictions", static_cast<int>(dataset.samples.size()) - static_cast<int>(predictions.size())}};
  if (request.metrics.count("seg") && !preds.empty()) {
    const SegScores seg = seg_scores(preds, gts);
    report["seg"] = {{"ciou", seg.ciou},           {"mean_iou", seg.mean_iou}, {"precision", seg.precision},
                     {"recall", seg.recall},       {"f1", seg.f1},             {"missing_masks", missing_masks}};
  }
  if (request.metrics.count("text")) {
    report["text"] = {{"bleu4", mean_of(bleu)},  {"rougeL", mean_of(rouge)},      {"dist1", mean_of(d1)},
                      {"dist2", mean_of(d2)},    {"meteor_v", mean_of(meteor)},   {"empty_responses", empty_responses},
                      {"bertscore", nullptr}};
  }
  if (request.metrics.count("judge")) {
    json model, human;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string key(to_string(kJudgeMetrics[i]));
      model[key] = mean_of(model_metric[i]);
      human[key] = mean_of(human_metric[i]);
    }
    report["judge"] = {{"model", model}, {"human", human}, {"unscored", unscored}, {"scored", model_overall.size()}};
    if (!model_overall.empty()) report["judge"]["win_rate"] = win_rate(model_overall, human_overall);
  }
  report["samples"] = std::move(rows);
  return report;
}

}  // namespace reasonseg
