#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "reasonseg/dataset.h"
#include "reasonseg/evaluation.h"
#include "reasonseg/model.h"

namespace reasonseg {

/// Which assistant turns the model sees while answering later user turns.
enum class HistoryMode {
  Reference,  // the dataset's assistant turns
  Model,      // the model's own earlier replies
};
HistoryMode history_mode_from_string(const std::string& s);

struct InferOptions {
  HistoryMode history = HistoryMode::Reference;
  int max_new_tokens = 48;
};

struct SamplePrediction {
  Prediction prediction;  // mask_path unset
  std::optional<BinaryMask> mask;
};

/// Answers every user turn of `sample` against its image. The mask is the
/// last one the replies produced.
SamplePrediction predict_sample(const ReasoningSegModel& model, const Dataset& dataset, const DialogueSample& sample,
                                const InferOptions& options = {});

/// Predicts every sample of `split` (every sample when empty), writing
/// `predictions.jsonl` and `masks/<sample_id>.png` under `out_dir`.
/// `limit` > 0 stops after that many samples. Returns the predictions.
std::vector<Prediction> run_inference(const ReasoningSegModel& model, const Dataset& dataset, const std::string& split,
                                      const std::filesystem::path& out_dir, const InferOptions& options = {},
                                      int limit = 0);

}  // namespace reasonseg
