#pragma once

#include <iosfwd>
#include <vector>

#include "reasonseg/nn.h"

namespace reasonseg {

/// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to
/// 0 at `total`. Steps are 1-based optimizer updates.
class LrSchedule {
 public:
  LrSchedule(double peak, int warmup, int total);
  double at(int step) const;
  double peak() const { return peak_; }

 private:
  double peak_;
  int warmup_;
  int total_;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam over the trainable tensors of a parameter
/// store. Tensors that do not require gradient are never touched.
class AdamW {
 public:
  AdamW(nn::ParameterStore& store, AdamWConfig config);

  /// Applies one update with learning rate `lr` using the accumulated
  /// gradients, then clears them.
  void step(double lr);
  int steps_taken() const { return t_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  nn::ParameterStore& store_;
  AdamWConfig config_;
  std::vector<ag::Matrix> m_;
  std::vector<ag::Matrix> v_;
  int t_ = 0;
};

}  // namespace reasonseg
