#include "reasonseg/inference.h"

#include <fstream>

#include <spdlog/spdlog.h>

#include "reasonseg/errors.h"
#include "reasonseg/png_codec.h"

namespace reasonseg {

HistoryMode history_mode_from_string(const std::string& s) {
  if (s == "reference") return HistoryMode::Reference;
  if (s == "model") return HistoryMode::Model;
  throw InvalidInput("history mode must be 'reference' or 'model', got '" + s + "'");
}

SamplePrediction predict_sample(const ReasoningSegModel& model, const Dataset& dataset, const DialogueSample& sample,
                                const InferOptions& options) {
  const PreparedImage image = model.prepare(dataset.load_image(sample));
  SamplePrediction out;
  out.prediction.sample_id = sample.sample_id;
  std::vector<Turn> history;
  std::string joined;
  for (std::size_t i = 0; i < sample.turns.size(); ++i) {
    const Turn& t = sample.turns[i];
    if (t.role == Role::Assistant) {
      if (options.history == HistoryMode::Reference) history.push_back(t);
      continue;
    }
    history.push_back(t);
    ReasoningSegModel::Reply reply = model.respond(image, history, options.max_new_tokens);
    if (reply.mask) out.mask = std::move(reply.mask);
    out.prediction.turns.push_back(t);
    out.prediction.turns.push_back({Role::Assistant, reply.text});
    if (options.history == HistoryMode::Model) history.push_back({Role::Assistant, reply.text});
    if (!joined.empty()) joined += ' ';
    joined += reply.text;
  }
  out.prediction.response_text = joined;
  return out;
}

std::vector<Prediction> run_inference(const ReasoningSegModel& model, const Dataset& dataset, const std::string& split,
                                      const std::filesystem::path& out_dir, const InferOptions& options, int limit) {
  const auto samples = dataset.split(split);
  if (samples.empty()) throw InvalidInput("dataset has no samples in split '" + split + "'");
  std::filesystem::create_directories(out_dir / "masks");
  std::ofstream out(out_dir / "predictions.jsonl", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (out_dir / "predictions.jsonl").string());

  std::vector<Prediction> predictions;
  int with_mask = 0;
  for (const DialogueSample* s : samples) {
    if (limit > 0 && static_cast<int>(predictions.size()) >= limit) break;
    SamplePrediction p = predict_sample(model, dataset, *s, options);
    if (p.mask) {
      const std::string rel = "masks/" + s->sample_id + ".png";
      write_file(out_dir / rel, mask_to_png(*p.mask));
      p.prediction.mask_path = rel;
      ++with_mask;
    }
    out << nlohmann::json(p.prediction).dump() << "\n";
    predictions.push_back(std::move(p.prediction));
  }
  spdlog::info("predicted {} samples, {} with a mask", predictions.size(), with_mask);
  return predictions;
}

}  // namespace reasonseg
