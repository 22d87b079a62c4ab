#include "reasonseg/nn.h"

#include <cmath>
#include <limits>
#include <set>

#include "reasonseg/errors.h"

namespace reasonseg::nn {

Var ParameterStore::create(const std::string& name, const std::string& group, Matrix init) {
  if (index_.count(name)) throw InvalidInput("duplicate parameter name: " + name);
  Var v = ag::leaf(std::move(init), true);
  index_[name] = params_.size();
  params_.push_back({name, group, v});
  return v;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFound("no parameter named " + name);
  return params_[it->second];
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFound("no parameter named " + name);
  return params_[it->second];
}

std::vector<std::string> ParameterStore::groups() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : params_)
    if (seen.insert(p.group).second) out.push_back(p.group);
  return out;
}

void ParameterStore::set_group_trainable(const std::string& group, bool trainable) {
  bool found = false;
  for (auto& p : params_) {
    if (p.group == group) {
      p.var.set_requires_grad(trainable);
      found = true;
    }
  }
  if (!found) throw InvalidInput("unknown parameter group: " + group);
}

void ParameterStore::set_all_trainable(bool trainable) {
  for (auto& p : params_) p.var.set_requires_grad(trainable);
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

Matrix Initializer::normal(Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
  return m;
}

Matrix Initializer::xavier(Eigen::Index fan_in, Eigen::Index fan_out) {
  return normal(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
}

Linear::Linear(ParameterStore& store, Initializer& init, const std::string& name, const std::string& group,
               int in, int out, bool zero_init) {
  weight = store.create(name + ".weight", group, zero_init ? Matrix::Zero(in, out) : init.xavier(in, out));
  bias = store.create(name + ".bias", group, Matrix::Zero(1, out));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, const std::string& group, int dim) {
  gamma = store.create(name + ".gamma", group, Matrix::Ones(1, dim));
  beta = store.create(name + ".beta", group, Matrix::Zero(1, dim));
}

FeedForward::FeedForward(ParameterStore& store, Initializer& init, const std::string& name,
                         const std::string& group, int in, int hidden, int out, bool zero_init_output)
    : up(store, init, name + ".up", group, in, hidden),
      down(store, init, name + ".down", group, hidden, out, zero_init_output) {}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, Initializer& init, const std::string& name,
                                       const std::string& group, int dim_, int heads_, int kv_dim)
    : dim(dim_), heads(heads_) {
  if (heads <= 0 || dim % heads != 0) throw InvalidInput("attention dim must be divisible by heads");
  const int kv_in = kv_dim < 0 ? dim : kv_dim;
  q = Linear(store, init, name + ".q", group, dim, dim);
  k = Linear(store, init, name + ".k", group, kv_in, dim);
  v = Linear(store, init, name + ".v", group, kv_in, dim);
  o = Linear(store, init, name + ".o", group, dim, dim);
}

Var MultiHeadAttention::operator()(const Var& query, const Var& key_value, bool causal,
                                   std::vector<Matrix>* weights) const {
  if (query.cols() != q.weight.rows()) throw InvalidInput("attention query width mismatch");
  if (key_value.cols() != k.weight.rows()) throw InvalidInput("attention key/value width mismatch");
  const Var qp = q(query);
  const Var kp = k(key_value);
  const Var vp = v(key_value);
  const int dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix causal_mask;
  if (causal) {
    causal_mask = Matrix::Zero(query.rows(), key_value.rows());
    for (Eigen::Index i = 0; i < causal_mask.rows(); ++i)
      for (Eigen::Index j = i + 1; j < causal_mask.cols(); ++j) causal_mask(i, j) = -std::numeric_limits<double>::infinity();
  }
  if (weights) weights->clear();
  std::vector<Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? qp : ag::slice_cols(qp, h * dh, dh);
    Var kh = heads == 1 ? kp : ag::slice_cols(kp, h * dh, dh);
    Var vh = heads == 1 ? vp : ag::slice_cols(vp, h * dh, dh);
    Var scores = ag::scale(ag::matmul_nt(qh, kh), scale);
    if (causal) scores = ag::add_constant(scores, causal_mask);
    Var attn = ag::softmax_rows(scores);
    if (weights) weights->push_back(attn.value());
    outs.push_back(ag::matmul(attn, vh));
  }
  Var merged = heads == 1 ? outs[0] : ag::concat_cols(outs);
  return o(merged);
}

Conv2d::Conv2d(ParameterStore& store, Initializer& init, const std::string& name, const std::string& group,
               int in_c, int out_c, int kernel_, int stride_, int pad_)
    : in_channels(in_c), out_channels(out_c), kernel(kernel_), stride(stride_), pad(pad_) {
  const int fan_in = kernel * kernel * in_c;
  weight = store.create(name + ".weight", group, init.normal(fan_in, out_c, std::sqrt(2.0 / fan_in)));
  bias = store.create(name + ".bias", group, Matrix::Zero(1, out_c));
}

Conv2d::Output Conv2d::operator()(const Var& x, int height, int width) const {
  ag::ConvGeometry g{height, width, in_channels, kernel, stride, pad};
  Var cols = ag::im2col(x, g);
  return {ag::add_row(ag::matmul(cols, weight), bias), g.out_height(), g.out_width()};
}

}  // namespace reasonseg::nn
