#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every activation in the model is a 2-D matrix: rows are tokens
// (or pixels, row-major over the spatial grid) and columns are channels.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace reasonseg::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Value that never receives gradient.
Var constant(Matrix value);
/// Leaf that accumulates gradient when requires_grad is set.
Var leaf(Matrix value, bool requires_grad = true);

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Back-propagates from a 1x1 root. Gradients accumulate into leaves; interior
/// nodes release their graph links afterwards.
void backward(const Var& root);

// --- elementwise and linear algebra -------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a + row, with the 1xC row broadcast over every row of a.
Var add_row(const Var& a, const Var& row);
/// a + c for a constant c of the same shape (attention masks and the like).
Var add_constant(const Var& a, const Matrix& c);
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

// --- nonlinearities -------------------------------------------------------

/// Exact GELU, x * Phi(x).
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// --- structural -----------------------------------------------------------

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Same elements in row-major order, new shape.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// Rows of `table` selected by `ids` (embedding lookup).
Var gather_rows(const Var& table, std::span<const int> ids);

struct ConvGeometry {
  int height = 0;
  int width = 0;
  int channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

/// (H*W) x C feature map -> (Ho*Wo) x (k*k*C) patch matrix, zero padded.
/// Column order is (ky, kx, c).
Var im2col(const Var& x, const ConvGeometry& g);

/// (H*W) x (r*r*C) -> (H*r * W*r) x C; channel block (dy*r+dx) lands at
/// sub-pixel offset (dy, dx).
Var pixel_shuffle(const Var& x, int height, int width, int r);

// --- reductions and losses ------------------------------------------------

Var sum(const Var& a);
Var mean(const Var& a);

/// Mean token cross-entropy over rows whose mask byte is non-zero. Returns
/// zero (with no gradient) when every row is masked out.
Var cross_entropy(const Var& logits, std::span<const int> targets,
                  std::span<const std::uint8_t> mask);

/// Mean per-element binary cross-entropy on logits, log-sum-exp stable.
Var bce_with_logits(const Var& logits, const Matrix& target);

/// 1 - (2*sum(sigmoid(z)*m) + eps) / (sum(sigmoid(z)) + sum(m) + eps)
Var dice_loss(const Var& logits, const Matrix& target, double eps = 1.0);

}  // namespace reasonseg::ag
