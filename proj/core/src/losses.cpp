#include "reasonseg/losses.h"

#include <cmath>
#include <spdlog/spdlog.h>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

void require_shape(const ag::Var& logits, const BinaryMask& target, const char* what) {
  if (logits.rows() != target.height() || logits.cols() != target.width()) {
    throw InvalidInput(std::string(what) + ": logits and target mask differ in shape");
  }
}

}  // namespace

void LossWeights::validate() const {
  if (!(text >= 0 && bce >= 0 && dice >= 0)) throw InvalidInput("loss weights must be non-negative");
}

ag::Matrix mask_to_matrix(const BinaryMask& mask) {
  ag::Matrix m(mask.height(), mask.width());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) m(y, x) = mask.at(x, y) ? 1.0 : 0.0;
  return m;
}

ag::Var text_loss(const ag::Var& logits, std::span<const int> ids, std::span<const std::uint8_t> loss_mask) {
  if (static_cast<std::size_t>(logits.rows()) != ids.size() || loss_mask.size() != ids.size()) {
    throw InvalidInput("text_loss: logits, ids and loss mask must be aligned");
  }
  if (ids.size() < 2) throw InvalidInput("text_loss: sequence too short");
  const std::size_t n = ids.size() - 1;
  bool any = false;
  for (std::size_t i = 1; i < ids.size(); ++i) any = any || loss_mask[i] != 0;
  if (!any) {
    spdlog::warn("text_loss: sample has no supervised tokens; contributing 0");
    return ag::constant(ag::Matrix::Zero(1, 1));
  }
  return ag::cross_entropy(ag::slice_rows(logits, 0, static_cast<Eigen::Index>(n)), ids.subspan(1),
                           loss_mask.subspan(1));
}

ag::Var bce_loss(const ag::Var& logits, const BinaryMask& target) {
  require_shape(logits, target, "bce_loss");
  return ag::bce_with_logits(logits, mask_to_matrix(target));
}

ag::Var dice_loss(const ag::Var& logits, const BinaryMask& target, double eps) {
  require_shape(logits, target, "dice_loss");
  return ag::dice_loss(logits, mask_to_matrix(target), eps);
}

ag::Var total_loss(const ag::Var& text, const ag::Var& bce, const ag::Var& dice, const LossWeights& weights) {
  weights.validate();
  ag::Var total;
  auto accumulate = [&](const ag::Var& part, double w, const char* name) {
    if (!part.defined()) return;
    if (!std::isfinite(part.item())) throw NumericError(std::string("non-finite ") + name + " loss");
    ag::Var term = ag::scale(part, w);
    total = total.defined() ? ag::add(total, term) : term;
  };
  accumulate(text, weights.text, "text");
  accumulate(bce, weights.bce, "bce");
  accumulate(dice, weights.dice, "dice");
  return total.defined() ? total : ag::constant(ag::Matrix::Zero(1, 1));
}

}  // namespace reasonseg
