#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.h"
#include "reasonseg/autograd.h"
#include "reasonseg/nn.h"

namespace reasonseg {
namespace {

using ag::Matrix;
using ag::Var;
using testing::grad_check;
using testing::random_matrix;

constexpr double kTol = 1e-4;

// Weighted sum so every output element carries a distinct upstream gradient.
Var probe(const Var& x, const Matrix& w) { return ag::sum(ag::mul(x, ag::constant(w))); }

class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{1234};
  Matrix rnd(int r, int c, double s = 1.0) { return random_matrix(rng, r, c, s); }
};

TEST_F(OpGradients, MatmulAndTranspose) {
  Var a = ag::leaf(rnd(3, 4)), b = ag::leaf(rnd(4, 5));
  Matrix w = rnd(3, 5);
  auto r = grad_check([&] { return probe(ag::matmul(a, b), w); }, {a, b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  Matrix wt = rnd(5, 4);
  r = grad_check([&] { return probe(ag::transpose(b), wt); }, {b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST_F(OpGradients, MatmulNt) {
  Var a = ag::leaf(rnd(3, 4)), b = ag::leaf(rnd(5, 4));
  Matrix w = rnd(3, 5);
  auto r = grad_check([&] { return probe(ag::matmul_nt(a, b), w); }, {a, b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST_F(OpGradients, ElementwiseAndBroadcast) {
  Var a = ag::leaf(rnd(3, 4)), b = ag::leaf(rnd(3, 4)), row = ag::leaf(rnd(1, 4));
  Matrix w = rnd(3, 4);
  auto r = grad_check(
      [&] { return probe(ag::add_row(ag::mul(ag::sub(a, b), ag::add(a, ag::scale(b, 0.3))), row), w); },
      {a, b, row});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST_F(OpGradients, Nonlinearities) {
  Var a = ag::leaf(rnd(4, 3, 1.5));
  Matrix w = rnd(4, 3);
  for (auto f : {+[](const Var& x) { return ag::gelu(x); }, +[](const Var& x) { return ag::sigmoid(x); },
                 +[](const Var& x) { return ag::softmax_rows(x); }}) {
    auto r = grad_check([&] { return probe(f(a), w); }, {a});
    EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  }
}

TEST_F(OpGradients, LayerNorm) {
  Var x = ag::leaf(rnd(3, 6)), g = ag::leaf(rnd(1, 6)), b = ag::leaf(rnd(1, 6));
  Matrix w = rnd(3, 6);
  auto r = grad_check([&] { return probe(ag::layer_norm(x, g, b), w); }, {x, g, b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST_F(OpGradients, StructuralOps) {
  Var a = ag::leaf(rnd(2, 3)), b = ag::leaf(rnd(4, 3)), table = ag::leaf(rnd(5, 3));
  std::vector<int> ids = {4, 0, 4, 2};
  Matrix w = rnd(10, 2);
  auto r = grad_check(
      [&] {
        std::vector<Var> rows = {a, b, ag::gather_rows(table, ids)};
        Var cat = ag::concat_rows(rows);
        Var left = ag::slice_cols(cat, 0, 1);
        Var right = ag::slice_cols(cat, 2, 1);
        std::vector<Var> cols = {left, right};
        return probe(ag::concat_cols(cols), w);
      },
      {a, b, table});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  Matrix w2 = rnd(2, 3);
  r = grad_check([&] { return probe(ag::slice_rows(b, 1, 2), w2); }, {b});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST_F(OpGradients, Im2colAndPixelShuffle) {
  ag::ConvGeometry g{5, 4, 2, 3, 2, 1};
  Var x = ag::leaf(rnd(20, 2));
  Matrix w = rnd(g.out_height() * g.out_width(), 18);
  auto r = grad_check([&] { return probe(ag::im2col(x, g), w); }, {x});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;

  Var y = ag::leaf(rnd(6, 8));  // 2x3 grid, r=2, 2 output channels
  Matrix w2 = rnd(24, 2);
  r = grad_check([&] { return probe(ag::pixel_shuffle(y, 2, 3, 2), w2); }, {y});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Im2col, MatchesDirectConvolution) {
  std::mt19937_64 rng(7);
  const int h = 6, w = 5, cin = 2, cout = 3;
  Matrix x = random_matrix(rng, h * w, cin);
  Matrix k = random_matrix(rng, 9 * cin, cout);
  ag::ConvGeometry g{h, w, cin, 3, 2, 1};
  Matrix out = ag::im2col(ag::constant(x), g).value() * k;
  for (int oy = 0; oy < g.out_height(); ++oy)
    for (int ox = 0; ox < g.out_width(); ++ox)
      for (int co = 0; co < cout; ++co) {
        double acc = 0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            for (int ci = 0; ci < cin; ++ci) {
              int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
              acc += x(iy * w + ix, ci) * k((ky * 3 + kx) * cin + ci, co);
            }
        EXPECT_NEAR(out(oy * g.out_width() + ox, co), acc, 1e-12);
      }
}

TEST(PixelShuffle, PlacesChannelBlocksAtSubpixelOffsets) {
  Matrix x(1, 4);
  x << 1, 2, 3, 4;  // one input pixel, r = 2, one output channel
  Matrix out = ag::pixel_shuffle(ag::constant(x), 1, 1, 2).value();
  ASSERT_EQ(out.rows(), 4);
  EXPECT_EQ(out(0, 0), 1);  // (0,0)
  EXPECT_EQ(out(1, 0), 2);  // (0,1)
  EXPECT_EQ(out(2, 0), 3);  // (1,0)
  EXPECT_EQ(out(3, 0), 4);  // (1,1)
}

TEST_F(OpGradients, Losses) {
  Var logits = ag::leaf(rnd(4, 6));
  std::vector<int> targets = {1, 5, 0, 2};
  std::vector<std::uint8_t> mask = {1, 0, 1, 1};
  auto r = grad_check([&] { return ag::cross_entropy(logits, targets, mask); }, {logits});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;

  Var z = ag::leaf(rnd(3, 3, 2.0));
  Matrix t(3, 3);
  t << 1, 0, 1, 0, 0, 1, 1, 1, 0;
  r = grad_check([&] { return ag::bce_with_logits(z, t); }, {z});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  r = grad_check([&] { return ag::dice_loss(z, t, 1.0); }, {z});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Autograd, CrossEntropyAllMaskedIsZeroWithoutGradient) {
  Var logits = ag::leaf(Matrix::Random(2, 3));
  std::vector<int> t = {0, 1};
  std::vector<std::uint8_t> m = {0, 0};
  Var loss = ag::cross_entropy(logits, t, m);
  EXPECT_EQ(loss.item(), 0.0);
  EXPECT_FALSE(loss.requires_grad());
}

TEST(Autograd, GradientsAccumulateAcrossBackwardCalls) {
  Var a = ag::leaf(Matrix::Constant(1, 1, 2.0));
  ag::backward(ag::mul(a, a));
  ag::backward(ag::mul(a, a));
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 8.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Var a = ag::leaf(Matrix::Constant(1, 1, 2.0));
  ag::NoGradGuard guard;
  Var b = ag::mul(a, a);
  EXPECT_FALSE(b.requires_grad());
}

TEST(Autograd, FrozenLeafReceivesNoGradient) {
  Var a = ag::leaf(Matrix::Constant(1, 1, 2.0), false);
  Var b = ag::leaf(Matrix::Constant(1, 1, 3.0));
  ag::backward(ag::mul(a, b));
  EXPECT_FALSE(a.has_grad());
  EXPECT_DOUBLE_EQ(b.grad()(0, 0), 2.0);
}

TEST(Attention, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  nn::ParameterStore store;
  nn::Initializer init(1);
  nn::MultiHeadAttention mha(store, init, "a", "g", 8, 2);
  std::vector<Matrix> weights;
  mha(ag::constant(random_matrix(rng, 5, 8)), ag::constant(random_matrix(rng, 7, 8)), false, &weights);
  ASSERT_EQ(weights.size(), 2u);
  for (const auto& w : weights) {
    EXPECT_EQ(w.rows(), 5);
    EXPECT_EQ(w.cols(), 7);
    EXPECT_TRUE((w.array() >= 0).all());
    for (Eigen::Index r = 0; r < w.rows(); ++r) EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-6);
  }
}

TEST(Attention, CausalMaskBlocksFuturePositions) {
  std::mt19937_64 rng(4);
  nn::ParameterStore store;
  nn::Initializer init(2);
  nn::MultiHeadAttention mha(store, init, "a", "g", 4, 1);
  Var x = ag::constant(random_matrix(rng, 5, 4));
  std::vector<Matrix> weights;
  mha(x, x, true, &weights);
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) EXPECT_EQ(weights[0](i, j), 0.0);
}

}  // namespace
}  // namespace reasonseg
