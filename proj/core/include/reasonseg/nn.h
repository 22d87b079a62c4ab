#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "reasonseg/autograd.h"

namespace reasonseg::nn {

using ag::Matrix;
using ag::Var;

struct Parameter {
  std::string name;
  std::string group;  // freezing unit, e.g. "vision.high" or "seg.decoder"
  Var var;
};

/// Owns every learnable tensor of a model in registration order.
class ParameterStore {
 public:
  Var create(const std::string& name, const std::string& group, Matrix init);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  const Parameter& get(const std::string& name) const;
  Parameter& get(const std::string& name);

  /// Groups whose parameters currently require gradient.
  std::vector<std::string> groups() const;
  void set_group_trainable(const std::string& group, bool trainable);
  void set_all_trainable(bool trainable);
  void zero_grad();
  std::size_t count() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// Parameter initialisation source; deterministic under a seed.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Matrix normal(Eigen::Index rows, Eigen::Index cols, double stddev);
  Matrix xavier(Eigen::Index fan_in, Eigen::Index fan_out);
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, Initializer& init, const std::string& name, const std::string& group,
         int in, int out, bool zero_init = false);
  Var operator()(const Var& x) const { return ag::add_row(ag::matmul(x, weight), bias); }

  Var weight;  // in x out
  Var bias;    // 1 x out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, const std::string& group, int dim);
  Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta); }

  Var gamma;
  Var beta;
};

/// Two-layer perceptron with a GELU between the layers.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore& store, Initializer& init, const std::string& name, const std::string& group,
              int in, int hidden, int out, bool zero_init_output = false);
  Var operator()(const Var& x) const { return down(ag::gelu(up(x))); }

  Linear up;
  Linear down;
};

/// Scaled dot-product multi-head attention with separate query and key/value
/// inputs. Scores use 1/sqrt(d_head).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, Initializer& init, const std::string& name,
                     const std::string& group, int dim, int heads, int kv_dim = -1);

  /// When `weights` is non-null it receives one (queries x keys) matrix per
  /// head.
  Var operator()(const Var& query, const Var& key_value, bool causal = false,
                 std::vector<Matrix>* weights = nullptr) const;

  int dim = 0;
  int heads = 1;
  Linear q, k, v, o;
};

/// 2-D convolution over a (H*W) x C feature map via im2col.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, Initializer& init, const std::string& name, const std::string& group,
         int in_channels, int out_channels, int kernel, int stride, int pad);

  struct Output {
    Var x;
    int height;
    int width;
  };
  Output operator()(const Var& x, int height, int width) const;

  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  Var weight;  // (k*k*Cin) x Cout
  Var bias;    // 1 x Cout
};

}  // namespace reasonseg::nn
