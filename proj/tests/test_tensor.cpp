// Tensor core: construction, ops with hand-computed expected values, and the
// reverse-mode gradient rules on small worked examples.
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ocseg/tensor.hpp"

using ocseg::Tensor;

namespace {

Tensor<double> randt(std::vector<int> shape, std::mt19937& rng, bool rg = false) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  auto t = Tensor<double>::zeros(shape, rg);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

}  // namespace

TEST(TensorBasics, ConstructionAndAccess) {
  auto t = Tensor<float>::zeros({2, 3});
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.numel(), 6);
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);

  auto f = Tensor<float>::full({2, 2}, 3.5f);
  EXPECT_EQ(f.at({1, 1}), 3.5f);

  auto d = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(d.at({0, 1}), 2.0f);
  EXPECT_EQ(d.at({1, 0}), 3.0f);

  EXPECT_THROW(Tensor<float>::from_data({2, 2}, {1, 2, 3}), ocseg::ContractError);
  EXPECT_THROW(Tensor<float>::zeros({2, 0}), ocseg::ContractError);
  EXPECT_THROW(Tensor<float>::zeros({}), ocseg::ContractError);
  EXPECT_THROW(Tensor<float>::full({2}, 1.0f).item(), ocseg::ContractError);
  EXPECT_EQ(Tensor<float>::scalar(7.0f).item(), 7.0f);
}

TEST(TensorBasics, Shape4Validation) {
  auto t = Tensor<float>::zeros({1, 2, 3, 4});
  auto s = t.shape4();
  EXPECT_EQ(s.batch, 1);
  EXPECT_EQ(s.channels, 2);
  EXPECT_EQ(s.height, 3);
  EXPECT_EQ(s.width, 4);
  EXPECT_EQ(s.pixels(), 12);
  EXPECT_THROW(Tensor<float>::zeros({2, 3}).shape4(), ocseg::ShapeError);
}

TEST(Elementwise, AddSubMulScale) {
  auto a = Tensor<double>::from_data({3}, {1, 2, 3});
  auto b = Tensor<double>::from_data({3}, {10, 20, 30});
  auto s = ocseg::add(a, b);
  EXPECT_EQ(s.at({0}), 11);
  EXPECT_EQ(s.at({2}), 33);
  auto d = ocseg::sub(b, a);
  EXPECT_EQ(d.at({1}), 18);
  auto m = ocseg::mul(a, b);
  EXPECT_EQ(m.at({2}), 90);
  auto sc = ocseg::scale(a, 0.5);
  EXPECT_EQ(sc.at({1}), 1.0);
  EXPECT_THROW(ocseg::add(a, Tensor<double>::zeros({4})), ocseg::ShapeError);
}

TEST(Elementwise, ReluForwardAndMask) {
  auto x = Tensor<double>::from_data({4}, {-2, -0.5, 0, 3}, true);
  auto y = ocseg::relu(x);
  EXPECT_EQ(y.at({0}), 0);
  EXPECT_EQ(y.at({1}), 0);
  EXPECT_EQ(y.at({2}), 0);
  EXPECT_EQ(y.at({3}), 3);
  ocseg::sum_all(y).backward();
  auto g = x.grad();
  EXPECT_EQ(g[0], 0);
  EXPECT_EQ(g[1], 0);
  EXPECT_EQ(g[2], 0);  // gradient at exactly zero is zero
  EXPECT_EQ(g[3], 1);
}

TEST(Matmul, HandComputedProduct) {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2, 1}, {5, 6});
  auto c = ocseg::matmul(a, b);
  ASSERT_EQ(c.shape(), (std::vector<int>{2, 1}));
  EXPECT_EQ(c.at({0, 0}), 17);  // 1*5 + 2*6
  EXPECT_EQ(c.at({1, 0}), 39);  // 3*5 + 4*6
}

TEST(Matmul, ShapeErrors) {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 2});
  try {
    ocseg::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ocseg::ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ocseg::matmul(Tensor<double>::zeros({2}), b), ocseg::ShapeError);
}

TEST(Matmul, GradientOfSummedProduct) {
  // L = sum(A B): dL/dA = ones * B^T (rows all [5,6]), dL/dB = A^T * ones.
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
  auto b = Tensor<double>::from_data({2, 1}, {5, 6}, true);
  ocseg::sum_all(ocseg::matmul(a, b)).backward();
  auto ga = a.grad();
  EXPECT_DOUBLE_EQ(ga[0], 5);
  EXPECT_DOUBLE_EQ(ga[1], 6);
  EXPECT_DOUBLE_EQ(ga[2], 5);
  EXPECT_DOUBLE_EQ(ga[3], 6);
  auto gb = b.grad();
  EXPECT_DOUBLE_EQ(gb[0], 4);  // column sums of A
  EXPECT_DOUBLE_EQ(gb[1], 6);
}

TEST(Bmm, MatchesPerSliceMatmul) {
  std::mt19937 rng(7);
  auto a = randt({3, 4, 5}, rng);
  auto b = randt({3, 5, 2}, rng);
  auto c = ocseg::bmm(a, b);
  ASSERT_EQ(c.shape(), (std::vector<int>{3, 4, 2}));
  for (int bi = 0; bi < 3; ++bi)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) {
        double acc = 0;
        for (int k = 0; k < 5; ++k) acc += a.at({bi, i, k}) * b.at({bi, k, j});
        EXPECT_NEAR(c.at({bi, i, j}), acc, 1e-12);
      }
  EXPECT_THROW(ocseg::bmm(a, randt({2, 5, 2}, rng)), ocseg::ShapeError);
  EXPECT_THROW(ocseg::bmm(a, randt({3, 4, 2}, rng)), ocseg::ShapeError);
}

TEST(Bmm, GradientMatchesUnbatchedMatmul) {
  std::mt19937 rng(13);
  auto a = randt({2, 3, 4}, rng, true);
  auto b = randt({2, 4, 2}, rng, true);
  auto w = randt({2, 3, 2}, rng);
  ocseg::sum_all(ocseg::mul(ocseg::bmm(a, b), w)).backward();

  for (int bi = 0; bi < 2; ++bi) {
    std::vector<double> as(a.data().begin() + bi * 12, a.data().begin() + (bi + 1) * 12);
    std::vector<double> bs(b.data().begin() + bi * 8, b.data().begin() + (bi + 1) * 8);
    std::vector<double> ws(w.data().begin() + bi * 6, w.data().begin() + (bi + 1) * 6);
    auto a2 = Tensor<double>::from_data({3, 4}, as, true);
    auto b2 = Tensor<double>::from_data({4, 2}, bs, true);
    auto w2 = Tensor<double>::from_data({3, 2}, ws);
    ocseg::sum_all(ocseg::mul(ocseg::matmul(a2, b2), w2)).backward();
    for (int i = 0; i < 12; ++i)
      EXPECT_NEAR(a.grad()[bi * 12 + i], a2.grad()[i], 1e-12);
    for (int i = 0; i < 8; ++i)
      EXPECT_NEAR(b.grad()[bi * 8 + i], b2.grad()[i], 1e-12);
  }
}

TEST(TransposeLast2, RoundTripAndGradient) {
  auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto t = ocseg::transpose_last2(a);
  ASSERT_EQ(t.shape(), (std::vector<int>{3, 2}));
  EXPECT_EQ(t.at({0, 1}), 4);
  EXPECT_EQ(t.at({2, 0}), 3);

  auto mask = Tensor<double>::from_data({3, 2}, {1, 0, 0, 0, 0, 1});
  ocseg::sum_all(ocseg::mul(t, mask)).backward();
  auto g = a.grad();
  EXPECT_EQ(g[0], 1);  // (0,0)
  EXPECT_EQ(g[5], 1);  // (1,2) <- transposed (2,1)
  EXPECT_EQ(g[1], 0);

  std::mt19937 rng(3);
  auto r3 = randt({2, 3, 4}, rng);
  auto back = ocseg::transpose_last2(ocseg::transpose_last2(r3));
  for (int64_t i = 0; i < r3.numel(); ++i)
    EXPECT_EQ(back.data()[i], r3.data()[i]);
  EXPECT_THROW(ocseg::transpose_last2(Tensor<double>::zeros({2, 2, 2, 2})),
               ocseg::ShapeError);
}

TEST(Reshape, PreservesDataAndRoutesGradient) {
  auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto r = ocseg::reshape(a, {3, 2});
  EXPECT_EQ(r.at({2, 1}), 6);
  EXPECT_THROW(ocseg::reshape(a, {4, 2}), ocseg::ShapeError);
  ocseg::sum_all(ocseg::mul(r, r)).backward();
  auto g = a.grad();
  for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * (i + 1));
}

TEST(Softmax, FrozenReferenceRow) {
  auto x = Tensor<double>::from_data({1, 3}, {1, 2, 3});
  auto y = ocseg::softmax_rows(x);
  EXPECT_NEAR(y.at({0, 0}), 0.09003057, 1e-8);
  EXPECT_NEAR(y.at({0, 1}), 0.24472847, 1e-8);
  EXPECT_NEAR(y.at({0, 2}), 0.66524096, 1e-8);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> d(-30.0, 30.0);
  auto x = Tensor<double>::zeros({8, 16});
  for (auto& v : x.data()) v = d(rng);
  auto y = ocseg::softmax_rows(x);
  for (int r = 0; r < 8; ++r) {
    double s = 0;
    for (int c = 0; c < 16; ++c) {
      double v = y.at({r, c});
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  // shifting a row by a constant leaves the distribution unchanged
  auto shifted = Tensor<double>::zeros({8, 16});
  for (int64_t i = 0; i < x.numel(); ++i) shifted.data()[i] = x.data()[i] + 100.0;
  auto y2 = ocseg::softmax_rows(shifted);
  for (int64_t i = 0; i < y.numel(); ++i)
    EXPECT_NEAR(y2.data()[i], y.data()[i], 1e-12);
}

TEST(Softmax, ExtremeLogitsStayFinite) {
  auto x = Tensor<double>::from_data({1, 3}, {1000.0, 999.0, -1000.0});
  auto y = ocseg::softmax_rows(x);
  double s = 0;
  for (int c = 0; c < 3; ++c) {
    EXPECT_TRUE(std::isfinite(y.at({0, c})));
    s += y.at({0, c});
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_GT(y.at({0, 0}), y.at({0, 1}));
}

TEST(Softmax, NonFiniteInputRejected) {
  auto x = Tensor<double>::from_data({1, 3}, {1.0, std::nan(""), 3.0});
  try {
    ocseg::softmax_rows(x);
    FAIL() << "expected NumericError";
  } catch (const ocseg::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos) << e.what();
  }
  auto inf = Tensor<double>::from_data({1, 2}, {1.0, INFINITY});
  EXPECT_THROW(ocseg::softmax_rows(inf), ocseg::NumericError);
}

TEST(Softmax, GradientOfSelectedEntry) {
  // L = softmax(x)[0]; dL/dx_j = y0 * (delta_0j - y_j).
  auto x = Tensor<double>::from_data({1, 3}, {1, 2, 3}, true);
  auto y = ocseg::softmax_rows(x);
  auto sel = Tensor<double>::from_data({1, 3}, {1, 0, 0});
  ocseg::sum_all(ocseg::mul(y, sel)).backward();
  auto g = x.grad();
  EXPECT_NEAR(g[0], 0.08192507, 1e-7);
  EXPECT_NEAR(g[1], -0.02203304, 1e-7);
  EXPECT_NEAR(g[2], -0.05989203, 1e-7);
}

TEST(Backward, ScalarOnlyContract) {
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  auto y = ocseg::scale(x, 2.0);
  EXPECT_THROW(y.backward(), ocseg::ContractError);
}

TEST(Backward, FanOutAccumulatesBothPaths) {
  // y = x*x + x at x=3: y = 12, dy/dx = 2x + 1 = 7.
  auto x = Tensor<double>::from_data({1}, {3}, true);
  auto y = ocseg::add(ocseg::mul(x, x), x);
  EXPECT_DOUBLE_EQ(y.item(), 12.0);
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Backward, AccumulatesAcrossCallsUntilZeroed) {
  auto x = Tensor<double>::from_data({1}, {2}, true);
  ocseg::mul(x, x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  ocseg::mul(x, x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);  // summed, not overwritten
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Backward, GraphPrunedWithoutRequiresGrad) {
  auto x = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});  // no grad
  auto y = ocseg::matmul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());  // nothing retained
}

TEST(Backward, DiamondGraphSumsPaths) {
  // z = (x + x) * x = 2x^2; dz/dx = 4x = 8 at x=2.
  auto x = Tensor<double>::from_data({1}, {2}, true);
  auto z = ocseg::mul(ocseg::add(x, x), x);
  EXPECT_DOUBLE_EQ(z.item(), 8.0);
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(ConcatChannels, WidthsAddUp) {
  auto a = Tensor<float>::zeros({2, 512, 1, 1});
  auto b = Tensor<float>::zeros({2, 512, 1, 1});
  EXPECT_EQ(ocseg::concat_channels<float>({a, b}).dim(1), 1024);

  std::vector<Tensor<float>> pyr;
  for (int i = 0; i < 4; ++i) pyr.push_back(Tensor<float>::zeros({1, 512, 1, 1}));
  pyr.push_back(Tensor<float>::zeros({1, 2048, 1, 1}));
  EXPECT_EQ(ocseg::concat_channels(pyr).dim(1), 4096);

  std::vector<Tensor<float>> asp(5, Tensor<float>::zeros({1, 512, 1, 1}));
  EXPECT_EQ(ocseg::concat_channels(asp).dim(1), 2560);
}

TEST(ConcatChannels, ValuesLandInOrderAndSliceInverts) {
  std::mt19937 rng(23);
  auto a = randt({2, 3, 4, 5}, rng);
  auto b = randt({2, 2, 4, 5}, rng);
  auto cat = ocseg::concat_channels<double>({a, b});
  ASSERT_EQ(cat.shape(), (std::vector<int>{2, 5, 4, 5}));
  auto a2 = ocseg::slice_channels(cat, 0, 3);
  auto b2 = ocseg::slice_channels(cat, 3, 5);
  for (int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a2.data()[i], a.data()[i]);
  for (int64_t i = 0; i < b.numel(); ++i) EXPECT_EQ(b2.data()[i], b.data()[i]);
  EXPECT_THROW(ocseg::concat_channels<double>({a, randt({2, 2, 3, 5}, rng)}),
               ocseg::ShapeError);
  EXPECT_THROW(ocseg::slice_channels(cat, 3, 3), ocseg::ShapeError);
  EXPECT_THROW(ocseg::slice_channels(cat, 0, 6), ocseg::ShapeError);
}

TEST(ConcatChannels, GradientSplitsByRange) {
  auto a = Tensor<double>::from_data({1, 1, 1, 2}, {1, 2}, true);
  auto b = Tensor<double>::from_data({1, 2, 1, 2}, {3, 4, 5, 6}, true);
  auto cat = ocseg::concat_channels<double>({a, b});
  auto w = Tensor<double>::from_data({1, 3, 1, 2}, {10, 20, 30, 40, 50, 60});
  ocseg::sum_all(ocseg::mul(cat, w)).backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 10);
  EXPECT_DOUBLE_EQ(a.grad()[1], 20);
  EXPECT_DOUBLE_EQ(b.grad()[0], 30);
  EXPECT_DOUBLE_EQ(b.grad()[3], 60);
}

TEST(SliceSpatial, WindowAndGradient) {
  auto t = Tensor<double>::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}, true);
  auto w = ocseg::slice_spatial(t, 1, 3, 0, 2);
  ASSERT_EQ(w.shape(), (std::vector<int>{1, 1, 2, 2}));
  EXPECT_EQ(w.at({0, 0, 0, 0}), 4);
  EXPECT_EQ(w.at({0, 0, 1, 1}), 8);
  ocseg::sum_all(w).backward();
  auto g = t.grad();
  const double want[9] = {0, 0, 0, 1, 1, 0, 1, 1, 0};
  for (int i = 0; i < 9; ++i) EXPECT_EQ(g[i], want[i]);
  EXPECT_THROW(ocseg::slice_spatial(t, 0, 4, 0, 2), ocseg::ShapeError);
}

TEST(AssembleSpatial, InvertsQuadrantSlicing) {
  std::mt19937 rng(5);
  auto t = randt({2, 3, 4, 6}, rng, true);
  std::vector<ocseg::SpatialBox> boxes{
      {0, 2, 0, 3}, {0, 2, 3, 6}, {2, 4, 0, 3}, {2, 4, 3, 6}};
  std::vector<Tensor<double>> parts;
  for (const auto& b : boxes)
    parts.push_back(ocseg::slice_spatial(t, b.y0, b.y1, b.x0, b.x1));
  auto back = ocseg::assemble_spatial(parts, boxes, 4, 6);
  for (int64_t i = 0; i < t.numel(); ++i)
    EXPECT_EQ(back.data()[i], t.data()[i]);  // bitwise round trip

  ocseg::sum_all(back).backward();
  for (double g : t.grad()) EXPECT_EQ(g, 1.0);  // each cell used exactly once
}

TEST(AssembleSpatial, RejectsBadTilings) {
  auto part = Tensor<double>::zeros({1, 1, 2, 2});
  // gap: only half the 2x4 grid covered
  EXPECT_THROW(ocseg::assemble_spatial<double>({part}, {{0, 2, 0, 2}}, 2, 4),
               ocseg::ContractError);
  // overlap with matching total area
  auto full = Tensor<double>::zeros({1, 1, 2, 4});
  EXPECT_THROW(ocseg::assemble_spatial<double>({part, part}, {{0, 2, 0, 2}, {0, 2, 0, 2}},
                                               2, 4),
               ocseg::ContractError);
  // box extent disagrees with part extent
  EXPECT_THROW(ocseg::assemble_spatial<double>({full}, {{0, 2, 0, 2}}, 2, 2),
               ocseg::ContractError);
}

TEST(BroadcastSpatial, TileAndSumBack) {
  auto t = Tensor<double>::from_data({1, 2, 1, 1}, {3, 4}, true);
  auto b = ocseg::broadcast_spatial(t, 2, 3);
  ASSERT_EQ(b.shape(), (std::vector<int>{1, 2, 2, 3}));
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      EXPECT_EQ(b.at({0, 0, y, x}), 3);
      EXPECT_EQ(b.at({0, 1, y, x}), 4);
    }
  ocseg::sum_all(b).backward();
  EXPECT_DOUBLE_EQ(t.grad()[0], 6.0);  // 2*3 tiles
  EXPECT_DOUBLE_EQ(t.grad()[1], 6.0);
  EXPECT_THROW(ocseg::broadcast_spatial(b, 4, 4), ocseg::ShapeError);
}

TEST(SumAll, TotalAndGradient) {
  auto t = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
  auto s = ocseg::sum_all(t);
  EXPECT_DOUBLE_EQ(s.item(), 10.0);
  s.backward();
  for (double g : t.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}
