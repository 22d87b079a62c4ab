#pragma once

#include <cstdint>
#include <span>

#include "reasonseg/autograd.h"
#include "reasonseg/imaging.h"

namespace reasonseg {

struct LossWeights {
  double text = 1.0;
  double bce = 2.0;
  double dice = 0.5;

  void validate() const;
};

/// Next-token cross-entropy averaged over positions whose target token is
/// marked in `loss_mask`. Row t of `logits` scores ids[t + 1]. A sample with
/// no marked targets contributes 0 and logs a warning.
ag::Var text_loss(const ag::Var& logits, std::span<const int> ids, std::span<const std::uint8_t> loss_mask);

/// Mean per-pixel binary cross-entropy of H x W logits against a mask.
ag::Var bce_loss(const ag::Var& logits, const BinaryMask& target);

/// Soft Dice loss with additive smoothing `eps`.
ag::Var dice_loss(const ag::Var& logits, const BinaryMask& target, double eps = 1.0);

/// lambda_t * text + lambda_bce * bce + lambda_dice * dice. Undefined parts
/// count as zero. Throws NumericError when a part is not finite.
ag::Var total_loss(const ag::Var& text, const ag::Var& bce, const ag::Var& dice, const LossWeights& weights);

/// H x W matrix of 0/1 values.
ag::Matrix mask_to_matrix(const BinaryMask& mask);

}  // namespace reasonseg
