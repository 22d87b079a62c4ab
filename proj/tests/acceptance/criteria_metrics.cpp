// Metric oracle equivalence and judge protocol.

#include <algorithm>
#include <cmath>
#include <random>

#include <spdlog/fmt/fmt.h>

#include "acceptance.h"
#include "reasonseg/evaluation.h"
#include "reasonseg/generator.h"
#include "reasonseg/imaging.h"

namespace reasonseg::acceptance {
namespace {

struct Counts {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  void add(const BinaryMask& pred, const BinaryMask& gt) {
    for (int y = 0; y < gt.height(); ++y) {
      for (int x = 0; x < gt.width(); ++x) {
        const bool p = pred.at(x, y), g = gt.at(x, y);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
        tn += !p && !g;
      }
    }
  }
};

double ratio_or_zero(double num, double den) { return den > 0 ? num / den : 0.0; }

BinaryMask random_mask(std::mt19937_64& rng, int w, int h) {
  // Mix of empty, full and partially filled masks so the degenerate cases
  // come up regularly.
  std::uniform_int_distribution<int> kind(0, 9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int k = kind(rng);
  const double density = k == 0 ? 0.0 : k == 1 ? 1.0 : u(rng);
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.set(x, y, u(rng) < density);
  }
  return m;
}

void metric_oracles(Check& check) {
  constexpr int kPairs = 256;
  constexpr double kTol = 1e-9;
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<int> side(1, 64);
  std::vector<BinaryMask> preds, gts;
  double worst = 0;
  auto compare = [&](double actual, double expected, const std::string& what) {
    worst = std::max(worst, std::abs(actual - expected));
    check.near(actual, expected, kTol, what);
  };

  for (int i = 0; i < kPairs; ++i) {
    const int w = side(rng), h = side(rng);
    preds.push_back(random_mask(rng, w, h));
    gts.push_back(random_mask(rng, w, h));
    const BinaryMask& p = preds.back();
    const BinaryMask& g = gts.back();
    Counts c;
    c.add(p, g);

    const double precision = ratio_or_zero(c.tp, c.tp + c.fp);
    const double recall = ratio_or_zero(c.tp, c.tp + c.fn);
    const double f1 = ratio_or_zero(2 * precision * recall, precision + recall);
    const PixelPrf prf = pixel_prf(p, g);
    compare(prf.precision, precision, fmt::format("pair {} precision", i));
    compare(prf.recall, recall, fmt::format("pair {} recall", i));
    compare(prf.f1, f1, fmt::format("pair {} f1", i));

    const double uni = c.tp + c.fp + c.fn;
    compare(mask_iou(p, g), uni > 0 ? c.tp / uni : 1.0, fmt::format("pair {} mask_iou", i));

    const std::vector<BinaryMask> one_p{p}, one_g{g};
    compare(ciou(one_p, one_g), uni > 0 ? c.tp / uni : 1.0, fmt::format("pair {} ciou", i));
  }

  // Pooled quantities over random subsets and over the whole set.
  std::uniform_int_distribution<int> subset_size(1, kPairs);
  for (int trial = 0; trial <= 50; ++trial) {
    std::vector<int> idx(kPairs);
    for (int i = 0; i < kPairs; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(trial == 50 ? kPairs : subset_size(rng));

    std::vector<BinaryMask> sp, sg;
    Counts c;
    double iou_sum = 0;
    for (int i : idx) {
      sp.push_back(preds[i]);
      sg.push_back(gts[i]);
      Counts one;
      one.add(preds[i], gts[i]);
      const double uni = one.tp + one.fp + one.fn;
      iou_sum += uni > 0 ? one.tp / uni : 1.0;
      c.add(preds[i], gts[i]);
    }
    const double uni = c.tp + c.fp + c.fn;
    compare(ciou(sp, sg), uni > 0 ? c.tp / uni : 1.0, fmt::format("subset {} ciou", trial));
    compare(mean_iou(sp, sg), iou_sum / static_cast<double>(idx.size()), fmt::format("subset {} mean_iou", trial));

    // Kappa over pooled pixels: a labels "pred", b labels "gt".
    const double n = c.tp + c.fp + c.fn + c.tn;
    const double p_o = (c.tp + c.tn) / n;
    const double a_yes = (c.tp + c.fp) / n, b_yes = (c.tp + c.fn) / n;
    const double p_e = a_yes * b_yes + (1 - a_yes) * (1 - b_yes);
    const double kappa = p_e == 1.0 ? 1.0 : (p_o - p_e) / (1 - p_e);
    compare(cohen_kappa(sp, sg), kappa, fmt::format("subset {} kappa", trial));
  }
  check.report("pairs", kPairs);
  check.report("max_abs_err", worst);
}

void judge_protocol(Check& check) {
  const std::vector<Turn> dialogue = {{Role::User, "Which thing could hold coffee ?"},
                                      {Role::Assistant, "The cup near the left edge ."},
                                      {Role::User, std::string(kSegmentInstruction)},
                                      {Role::Assistant, segmentation_response("cup")}};

  // Scripted repeats, some malformed: every stored repeat must be a valid
  // score and each metric mean their plain arithmetic mean.
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> score(0, 5);
  std::bernoulli_distribution malformed(0.15);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::array<std::array<std::string, kJudgeRepeats>, 4> replies;
    std::array<std::vector<int>, 4> expected;
    for (int m = 0; m < 4; ++m) {
      for (int r = 0; r < kJudgeRepeats; ++r) {
        if (malformed(rng)) {
          replies[m][r] = "I would rather not say.";
        } else {
          const int s = score(rng);
          replies[m][r] = fmt::format("Reasoning is fine.\nScore: {}", s);
          expected[m].push_back(s);
        }
      }
    }
    StubJudge judge([&](JudgeMetric metric, int repeat) { return replies[static_cast<int>(metric)][repeat]; });
    const JudgeScores got = judge_reasoning(dialogue, judge);
    bool enough = true;
    for (const auto& e : expected) enough = enough && static_cast<int>(e.size()) >= kMinValidRepeats;
    check.that(got.scored == enough, fmt::format("trial {} scored flag", trial));
    if (!enough) continue;
    for (int m = 0; m < 4; ++m) {
      double sum = 0;
      for (int s : expected[m]) sum += s;
      const double mean = sum / static_cast<double>(expected[m].size());
      check.that(got.repeats[m] == expected[m], fmt::format("trial {} metric {} repeats", trial, m));
      check.that(got.mean[m] == mean,
                 fmt::format("trial {} metric {} mean {} != {}", trial, m, got.mean[m], mean));
    }
    ++checked;
  }
  check.at_least(checked, 100, "scored trials");

  // 100 samples: 42 model wins, 35 losses, 23 ties, each side's score a
  // stub-judged overall mean.
  std::vector<double> model_scores, human_scores;
  for (int i = 0; i < 100; ++i) {
    const int human = 1 + i % 4;
    const int model = i < 42 ? human + 1 : i < 77 ? human - 1 : human;
    StubJudge mj = StubJudge::constant(model), hj = StubJudge::constant(human);
    model_scores.push_back(judge_reasoning(dialogue, mj).overall());
    human_scores.push_back(judge_reasoning(dialogue, hj).overall());
  }
  const WinRateReport wr = win_rate(model_scores, human_scores);
  check.that(wr.wins == 42 && wr.losses == 35 && wr.ties == 23,
             fmt::format("win/loss/tie {}/{}/{}", wr.wins, wr.losses, wr.ties));
  check.that(wr.win_rate == 42.0, fmt::format("win_rate {}", wr.win_rate));
  check.that(wr.formatted() == "42", "formatted win rate '" + wr.formatted() + "'");
  check.report("scored_trials", checked);
  check.report("win_rate", wr.formatted());
}

}  // namespace

void add_metric_criteria(std::vector<Criterion>& out) {
  out.push_back({"metric_oracle_equivalence", 30, metric_oracles});
  out.push_back({"judge_protocol", 10, judge_protocol});
}

}  // namespace reasonseg::acceptance
