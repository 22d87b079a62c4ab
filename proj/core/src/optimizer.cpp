#include "reasonseg/optimizer.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "reasonseg/errors.h"

namespace reasonseg {

LrSchedule::LrSchedule(double peak, int warmup, int total) : peak_(peak), warmup_(warmup), total_(total) {
  if (!(peak > 0)) throw InvalidInput("learning rate must be positive");
  if (warmup < 0 || total < 1) throw InvalidInput("invalid learning-rate schedule lengths");
}

double LrSchedule::at(int step) const {
  if (step <= 0) return 0.0;
  if (warmup_ > 0 && step < warmup_) return peak_ * step / warmup_;
  if (total_ <= warmup_) return peak_;
  const double remaining = static_cast<double>(total_ - step) / (total_ - warmup_);
  return peak_ * std::clamp(remaining, 0.0, 1.0);
}

AdamW::AdamW(nn::ParameterStore& store, AdamWConfig config) : store_(store), config_(config) {
  for (const auto& p : store_.params()) {
    m_.push_back(ag::Matrix::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(ag::Matrix::Zero(p.var.rows(), p.var.cols()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, t_);
  const double c2 = 1.0 - std::pow(config_.beta2, t_);
  auto& params = store_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Var& var = params[i].var;
    if (!var.requires_grad() || !var.has_grad()) continue;
    const ag::Matrix& g = var.grad();
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    ag::Matrix& w = var.mutable_value();
    if (config_.weight_decay > 0) w *= 1.0 - lr * config_.weight_decay;
    w.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
  store_.zero_grad();
}

void AdamW::save(std::ostream& out) const {
  out.write(reinterpret_cast<const char*>(&t_), sizeof t_);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.write(reinterpret_cast<const char*>(m_[i].data()), static_cast<std::streamsize>(m_[i].size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(v_[i].data()), static_cast<std::streamsize>(v_[i].size() * sizeof(double)));
  }
}

void AdamW::load(std::istream& in) {
  in.read(reinterpret_cast<char*>(&t_), sizeof t_);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    in.read(reinterpret_cast<char*>(m_[i].data()), static_cast<std::streamsize>(m_[i].size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(v_[i].data()), static_cast<std::streamsize>(v_[i].size() * sizeof(double)));
  }
  if (!in) throw DecodeError("optimizer state is truncated");
}

}  // namespace reasonseg
