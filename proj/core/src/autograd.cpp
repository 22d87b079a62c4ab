#include "reasonseg/autograd.h"

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "reasonseg/errors.h"

namespace reasonseg::ag {
namespace {

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(Node&)>;

Var make_result(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Var make_result_many(Matrix value, std::span<const Var> parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

inline bool wants(const std::shared_ptr<Node>& n) { return n->requires_grad; }

void require(bool cond, const char* what) {
  if (!cond) throw InvalidInput(what);
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Matrix value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  require(root.rows() == 1 && root.cols() == 1, "backward root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !p->parents.empty() && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
  for (Node* n : order) {
    n->parents.clear();
    n->backward_fn = nullptr;
    n->grad.resize(0, 0);
  }
}

// --- elementwise and linear algebra -------------------------------------

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (wants(p)) p->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (wants(self.parents[0])) self.parents[0]->accumulate(self.grad);
    if (wants(self.parents[1])) self.parents[1]->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) pa->accumulate(self.grad.cwiseProduct(pb->value));
    if (wants(pb)) pb->accumulate(self.grad.cwiseProduct(pa->value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (wants(self.parents[0])) self.parents[0]->accumulate(self.grad);
    if (wants(self.parents[1])) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

Var add_constant(const Var& a, const Matrix& c) {
  require(a.rows() == c.rows() && a.cols() == c.cols(), "add_constant: shape mismatch");
  return make_result(a.value() + c, {a}, [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      Matrix g(pa->value.rows(), pa->value.cols());
      g.noalias() = self.grad * pb->value.transpose();
      pa->accumulate(g);
    }
    if (wants(pb)) {
      Matrix g(pb->value.rows(), pb->value.cols());
      g.noalias() = pa->value.transpose() * self.grad;
      pb->accumulate(g);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      Matrix g(pa->value.rows(), pa->value.cols());
      g.noalias() = self.grad * pb->value;
      pa->accumulate(g);
    }
    if (wants(pb)) {
      Matrix g(pb->value.rows(), pb->value.cols());
      g.noalias() = self.grad.transpose() * pa->value;
      pb->accumulate(g);
    }
  });
}

Var transpose(const Var& a) {
  return make_result(a.value().transpose(), {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

// --- nonlinearities -------------------------------------------------------

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Matrix out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make_result(std::move(out), {a}, [](Node& self) {
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    const Matrix& x = self.parents[0]->value;
    Matrix d = x.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
    });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return make_result(std::move(out), {a}, [](Node& self) {
    Matrix d = self.value.cwiseProduct((1.0 - self.value.array()).matrix());
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double m = row.maxCoeff();
    if (!std::isfinite(m)) m = 0.0;
    // Scalar exp: Eigen's vectorised exp yields denormals instead of exact
    // zeros for masked (-inf) scores.
    for (Eigen::Index c = 0; c < row.size(); ++c) row(c) = std::exp(row(c) - m);
    row /= row.sum();
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    const Matrix& y = self.value;
    Matrix gy = self.grad.cwiseProduct(y);
    Eigen::VectorXd s = gy.rowwise().sum();
    Matrix g = gy - (y.array().colwise() * s.array()).matrix();
    self.parents[0]->accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  require(gamma.cols() == d && beta.cols() == d && gamma.rows() == 1 && beta.rows() == 1,
          "layer_norm: parameter shape mismatch");
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    double mu = x.value().row(r).mean();
    auto centered = (x.value().row(r).array() - mu);
    double var = centered.square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (centered * inv_std(r)).matrix();
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       auto& px = self.parents[0];
                       auto& pg = self.parents[1];
                       auto& pb = self.parents[2];
                       if (wants(pb)) pb->accumulate(self.grad.colwise().sum());
                       if (wants(pg)) pg->accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
                       if (wants(px)) {
                         Matrix dxhat = self.grad.array().rowwise() * pg->value.row(0).array();
                         const double dd = static_cast<double>(dxhat.cols());
                         Eigen::VectorXd m1 = dxhat.rowwise().sum() / dd;
                         Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / dd;
                         Matrix g = dxhat;
                         g.colwise() -= m1;
                         g -= (xhat.array().colwise() * m2.array()).matrix();
                         g = (g.array().colwise() * inv_std.array()).matrix();
                         px->accumulate(g);
                       }
                     });
}

// --- structural -----------------------------------------------------------

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result_many(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = self.parents[i];
      if (wants(p)) p->accumulate(self.grad.middleRows(offsets[i], p->value.rows()));
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result_many(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = self.parents[i];
      if (wants(p)) p->accumulate(self.grad.middleCols(offsets[i], p->value.cols()));
    }
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.value().size(), "reshape: element count mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_result(std::move(out), {a}, [](Node& self) {
    auto& p = self.parents[0];
    p->accumulate(Eigen::Map<const Matrix>(self.grad.data(), p->value.rows(), p->value.cols()));
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  return make_result(a.value().middleRows(start, count), {a}, [start](Node& self) {
    auto& p = self.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    g.middleRows(start, self.grad.rows()) = self.grad;
    p->accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  return make_result(a.value().middleCols(start, count), {a}, [start](Node& self) {
    auto& p = self.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    g.middleCols(start, self.grad.cols()) = self.grad;
    p->accumulate(g);
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [idx = std::move(idx)](Node& self) {
    auto& p = self.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    p->accumulate(g);
  });
}

Var im2col(const Var& x, const ConvGeometry& g) {
  require(x.rows() == static_cast<Eigen::Index>(g.height) * g.width && x.cols() == g.channels,
          "im2col: input does not match geometry");
  const int ho = g.out_height();
  const int wo = g.out_width();
  const int k = g.kernel;
  const int c = g.channels;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(ho) * wo, static_cast<Eigen::Index>(k) * k * c);
  const Matrix& in = x.value();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const Eigen::Index row = static_cast<Eigen::Index>(oy) * wo + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.width) continue;
          out.block(row, (ky * k + kx) * c, 1, c) = in.row(static_cast<Eigen::Index>(iy) * g.width + ix);
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [g, ho, wo](Node& self) {
    auto& p = self.parents[0];
    const int k = g.kernel;
    const int c = g.channels;
    Matrix grad = Matrix::Zero(p->value.rows(), p->value.cols());
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index row = static_cast<Eigen::Index>(oy) * wo + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.width) continue;
            grad.row(static_cast<Eigen::Index>(iy) * g.width + ix) +=
                self.grad.block(row, (ky * k + kx) * c, 1, c);
          }
        }
      }
    }
    p->accumulate(grad);
  });
}

Var pixel_shuffle(const Var& x, int height, int width, int r) {
  require(x.rows() == static_cast<Eigen::Index>(height) * width, "pixel_shuffle: row count mismatch");
  require(r > 0 && x.cols() % (r * r) == 0, "pixel_shuffle: channels not divisible by r^2");
  const Eigen::Index c = x.cols() / (r * r);
  const int out_w = width * r;
  Matrix out(static_cast<Eigen::Index>(height) * r * out_w, c);
  const Matrix& in = x.value();
  for (int y = 0; y < height; ++y)
    for (int xx = 0; xx < width; ++xx)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx)
          out.row(static_cast<Eigen::Index>(y * r + dy) * out_w + (xx * r + dx)) =
              in.block(static_cast<Eigen::Index>(y) * width + xx, (dy * r + dx) * c, 1, c);
  return make_result(std::move(out), {x}, [height, width, r, c, out_w](Node& self) {
    auto& p = self.parents[0];
    Matrix g(p->value.rows(), p->value.cols());
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx)
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx)
            g.block(static_cast<Eigen::Index>(y) * width + xx, (dy * r + dx) * c, 1, c) =
                self.grad.row(static_cast<Eigen::Index>(y * r + dy) * out_w + (xx * r + dx));
    p->accumulate(g);
  });
}

// --- reductions and losses ------------------------------------------------

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    auto& p = self.parents[0];
    p->accumulate(Matrix::Constant(p->value.rows(), p->value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  require(n > 0, "mean: empty input");
  return scale(sum(a), 1.0 / n);
}

Var cross_entropy(const Var& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const Eigen::Index rows = logits.rows();
  require(static_cast<Eigen::Index>(targets.size()) == rows &&
              static_cast<Eigen::Index>(mask.size()) == rows,
          "cross_entropy: targets/mask length must equal logit rows");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) return constant(Matrix::Zero(1, 1));

  Matrix probs = Matrix::Zero(rows, logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    require(targets[r] >= 0 && targets[r] < logits.cols(), "cross_entropy: target out of range");
    auto row = logits.value().row(r);
    double m = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - m).exp().matrix();
    double z = e.sum();
    total += (m + std::log(z)) - row(targets[r]);
    probs.row(r) = e / z;
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return make_result(std::move(out), {logits},
                     [probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk), count](Node& self) {
                       Matrix g = probs;
                       for (std::size_t r = 0; r < tgt.size(); ++r)
                         if (msk[r]) g(static_cast<Eigen::Index>(r), tgt[r]) -= 1.0;
                       g *= self.grad(0, 0) / static_cast<double>(count);
                       self.parents[0]->accumulate(g);
                     });
}

Var bce_with_logits(const Var& logits, const Matrix& target) {
  require(logits.rows() == target.rows() && logits.cols() == target.cols(), "bce: shape mismatch");
  const Matrix& z = logits.value();
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z.data()[i];
    total += std::max(zi, 0.0) - zi * target.data()[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  Matrix out(1, 1);
  out(0, 0) = total / n;
  return make_result(std::move(out), {logits}, [target, n](Node& self) {
    const Matrix& z = self.parents[0]->value;
    Matrix g = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }) - target;
    g *= self.grad(0, 0) / n;
    self.parents[0]->accumulate(g);
  });
}

Var dice_loss(const Var& logits, const Matrix& target, double eps) {
  require(logits.rows() == target.rows() && logits.cols() == target.cols(), "dice: shape mismatch");
  Matrix p = logits.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  const double inter = p.cwiseProduct(target).sum();
  const double denom = p.sum() + target.sum() + eps;
  Matrix out(1, 1);
  out(0, 0) = 1.0 - (2.0 * inter + eps) / denom;
  return make_result(std::move(out), {logits}, [p = std::move(p), target, inter, denom, eps](Node& self) {
    // d/dp_i = -(2 t_i * denom - (2I + eps)) / denom^2, then chain through sigmoid.
    const double numer = 2.0 * inter + eps;
    Matrix dp = ((2.0 * denom) * target.array() - numer).matrix() * (-1.0 / (denom * denom));
    Matrix g = dp.cwiseProduct(p.cwiseProduct((1.0 - p.array()).matrix()));
    g *= self.grad(0, 0);
    self.parents[0]->accumulate(g);
  });
}

}  // namespace reasonseg::ag
