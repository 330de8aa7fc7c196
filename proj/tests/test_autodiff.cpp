#include <gtest/gtest.h>

#include "cfconv/autodiff.hpp"
#include "cfconv/error.hpp"
#include "fd_util.hpp"
#include "test_util.hpp"

using namespace cfconv;
using namespace cfconv::ad;
using namespace testutil;

namespace {

constexpr double kEps = 1e-4;
constexpr double kTol = 1e-4;

double fd_error(const std::vector<ParamSpec>& specs, const Builder& build, std::uint64_t seed,
                double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  const auto f = make_objective(specs, build);
  return check_gradients(f, random_params(flat_size(specs), rng, lo, hi), kEps).max_relative_error;
}

// Values bounded away from zero, so ReLU inputs never sit near a kink.
std::vector<double> jittered(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> out(n);
  for (auto& v : out) v = sign(rng) ? mag(rng) : -mag(rng);
  return out;
}

}  // namespace

TEST(Relu, ForwardAndBackward) {
  Tape tape;
  auto x = tape.parameter(ParamId{0}, RealGrid({2}, {-1.0, 2.0}));
  auto y = tape.relu(x);
  EXPECT_EQ(tape.real(y).data, (std::vector<double>{0.0, 2.0}));
  const auto g = tape.backward(scalarize(tape, y));
  EXPECT_EQ(g.real(ParamId{0}).data[0], 0.0);
  EXPECT_NE(g.real(ParamId{0}).data[1], 0.0);
}

TEST(Relu, UnitUpstreamGivesGate) {
  // loss = sum relu(x) written as a 1-row linear map with unit weights.
  Tape tape;
  auto x = tape.parameter(ParamId{0}, RealGrid({1, 2}, {-1.0, 2.0}));
  auto r = tape.relu(x);
  auto w = tape.constant(RealGrid({1, 2}, {1.0, 1.0}));
  auto b = tape.constant(RealGrid({1}, {0.0}));
  auto loss = tape.linear(r, w, b);
  EXPECT_DOUBLE_EQ(tape.real(loss).data[0], 2.0);
  const auto g = tape.backward(loss);
  EXPECT_EQ(g.real(ParamId{0}).data, (std::vector<double>{0.0, 1.0}));
}

TEST(Backward, SquareViaFanOut) {
  // x * x + 0 through the affine op with x as both input and weight.
  Tape tape;
  auto x = tape.parameter(ParamId{0}, RealGrid({1, 1}, {3.0}));
  auto b = tape.constant(RealGrid({1}, {0.0}));
  auto loss = tape.linear(x, x, b);
  EXPECT_DOUBLE_EQ(tape.real(loss).data[0], 9.0);
  const auto g = tape.backward(loss);
  EXPECT_DOUBLE_EQ(g.real(ParamId{0}).data[0], 6.0);
}

TEST(Backward, SigmoidAtZero) {
  Tape tape;
  auto x = tape.constant(RealGrid({1, 1}, {1.0}));
  auto w = tape.parameter(ParamId{0}, RealGrid({1, 1}, {0.0}));
  auto b = tape.constant(RealGrid({1}, {0.0}));
  auto loss = tape.sigmoid(tape.linear(x, w, b));
  const auto g = tape.backward(loss);
  EXPECT_DOUBLE_EQ(g.real(ParamId{0}).data[0], 0.25);
}

TEST(Backward, NonScalarLossThrows) {
  Tape tape;
  auto x = tape.parameter(ParamId{0}, RealGrid({2}, {1.0, 2.0}));
  EXPECT_THROW(tape.backward(tape.relu(x)), ShapeError);
}

TEST(Backward, ComplexLossThrows) {
  Tape tape;
  auto x = tape.parameter(ParamId{0}, ComplexGrid({1, 1}));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Backward, SecondCallThrows) {
  Tape tape;
  auto x = tape.parameter(ParamId{0}, RealGrid({1, 1}, {0.5}));
  auto loss = tape.sigmoid(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), Error);
}

TEST(Record, UnsupportedOpThrows) {
  Tape tape;
  auto x = tape.constant(RealGrid({1}, {1.0}));
  EXPECT_THROW(tape.record(static_cast<Op>(200), {x}), Error);
  EXPECT_THROW(tape.record(Op::kLeaf, {x}), Error);
}

TEST(Record, ArityAndShapeErrors) {
  Tape tape;
  auto x = tape.constant(RealGrid({2, 3}));
  auto w = tape.constant(RealGrid({4, 2}));
  auto b = tape.constant(RealGrid({4}));
  EXPECT_THROW(tape.linear(x, w, b), ShapeError);
  EXPECT_THROW(tape.record(Op::kRelu, {}), Error);
  auto c = tape.constant(ComplexGrid({2, 2}));
  EXPECT_THROW(tape.relu(c), Error);
}

TEST(Backward, UnreachedParameterGetsZeros) {
  Tape tape;
  auto x = tape.parameter(ParamId{0}, RealGrid({1, 1}, {0.3}));
  tape.parameter(ParamId{1}, RealGrid({2, 2}, 1.0));
  const auto g = tape.backward(tape.sigmoid(x));
  ASSERT_TRUE(g.contains(ParamId{1}));
  EXPECT_EQ(g.real(ParamId{1}), RealGrid({2, 2}, 0.0));
}

TEST(Backward, FanOutAccumulatesBothPaths) {
  // w feeds two affine maps whose outputs are summed by a third.
  auto build = [](Tape& t, const std::vector<NodeRef>& p) {
    auto x = t.constant(RealGrid({1, 2}, {0.4, -0.7}));
    auto b = t.constant(RealGrid({2}, 0.0));
    auto h1 = t.linear(x, p[0], b);
    auto h2 = t.linear(t.sigmoid(h1), p[0], b);
    return scalarize(t, h2);
  };
  EXPECT_LT(fd_error({{{2, 2}}}, build, 1), kTol);
  // Path sum equals gradient computed by a single tape.
  std::mt19937_64 rng(2);
  const auto f = make_objective({{{2, 2}}}, build);
  std::vector<double> grad;
  f(random_params(4, rng), &grad);
  for (double g : grad) EXPECT_TRUE(std::isfinite(g));
}

TEST(Backward, LinearInUpstream) {
  // BCE is affine in its targets, so gradients must be too: g(a t1 + b t2) =
  // a g(t1) + b g(t2) whenever a + b = 1.
  std::mt19937_64 rng(3);
  const auto params = random_params(6 + 3, rng);
  auto grads_for = [&](std::vector<double> targets) {
    auto build = [targets](Tape& t, const std::vector<NodeRef>& p) {
      auto x = t.constant(RealGrid({3, 2}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6}));
      auto h = t.linear(x, p[0], p[1]);
      return t.binary_cross_entropy(t.sigmoid(h), targets);
    };
    std::vector<double> g;
    make_objective({{{3, 2}}, {{3}}}, build)(params, &g);
    return g;
  };
  const std::vector<double> t1(9, 0.0), t2 = soft_targets(9, 4);
  std::vector<double> t1v = soft_targets(9, 5);
  const double a = 0.3, b = 0.7;
  std::vector<double> mix(9);
  for (std::size_t i = 0; i < 9; ++i) mix[i] = a * t1v[i] + b * t2[i];
  const auto g1 = grads_for(t1v), g2 = grads_for(t2), gm = grads_for(mix);
  for (std::size_t i = 0; i < gm.size(); ++i) EXPECT_NEAR(gm[i], a * g1[i] + b * g2[i], 1e-10);
}

// ---- per-op finite-difference checks (shapes within 4x4x2x2) ----

TEST(OpGradient, Linear) {
  auto build = [](Tape& t, const std::vector<NodeRef>& p) { return scalarize(t, t.linear(p[0], p[1], p[2])); };
  EXPECT_LT(fd_error({{{4, 3}}, {{2, 3}}, {{2}}}, build, 10), kTol);
}

TEST(OpGradient, GroupedLinear) {
  auto build = [](Tape& t, const std::vector<NodeRef>& p) {
    return scalarize(t, t.linear(p[0], p[1], p[2], {1, 0, 1, 2}));
  };
  EXPECT_LT(fd_error({{{4, 3}}, {{3, 2, 3}}, {{3, 2}}}, build, 11), kTol);
}

TEST(OpGradient, Relu) {
  std::mt19937_64 rng(12);
  auto build = [](Tape& t, const std::vector<NodeRef>& p) { return scalarize(t, t.relu(p[0])); };
  const auto f = make_objective({{{4, 4, 2}}}, build);
  EXPECT_LT(check_gradients(f, jittered(32, rng), kEps).max_relative_error, kTol);
}

TEST(OpGradient, Sigmoid) {
  auto build = [](Tape& t, const std::vector<NodeRef>& p) { return scalarize(t, t.sigmoid(p[0])); };
  EXPECT_LT(fd_error({{{3, 4}}}, build, 13, -3.0, 3.0), kTol);
}

TEST(OpGradient, MeanPoolSpatial) {
  auto build = [](Tape& t, const std::vector<NodeRef>& p) { return scalarize(t, t.mean_pool_spatial(p[0])); };
  EXPECT_LT(fd_error({{{2, 4, 3, 2}}}, build, 14), kTol);
  EXPECT_LT(fd_error({{{4, 4, 2}}}, build, 15), kTol);
}

TEST(OpGradient, Fft2dThroughMixingKernel) {
  std::mt19937_64 rng(16);
  const auto k = random_complex({4, 3, 2, 2}, rng);
  auto build = [k](Tape& t, const std::vector<NodeRef>& p) {
    auto f = t.fft_2d(p[0]);
    return scalarize(t, t.ifft_2d_real(t.complex_mul_accumulate(f, t.constant(k))));
  };
  EXPECT_LT(fd_error({{{4, 3, 2}}}, build, 17), kTol);
  EXPECT_LT(fd_error({{{4, 3, 2}, true}}, build, 18), kTol);
}

TEST(OpGradient, InverseFft2dOnComplex) {
  std::mt19937_64 rng(19);
  const auto k = random_complex({3, 4, 2, 1}, rng);
  auto build = [k](Tape& t, const std::vector<NodeRef>& p) {
    auto g = t.fft_2d(p[0], 0, true);
    return scalarize(t, t.ifft_2d_real(t.complex_mul_accumulate(g, t.constant(k))));
  };
  EXPECT_LT(fd_error({{{3, 4, 2}, true}}, build, 20), kTol);
}

TEST(OpGradient, IfftReal3x3) {
  auto build = [](Tape& t, const std::vector<NodeRef>& p) { return scalarize(t, t.ifft_2d_real(p[0])); };
  std::mt19937_64 rng(21);
  const auto f = make_objective({{{3, 3}, true}}, build);
  EXPECT_LT(check_gradients(f, random_params(18, rng), kEps).max_relative_error, 1e-6);
}

TEST(OpGradient, IfftRealBatched) {
  auto build = [](Tape& t, const std::vector<NodeRef>& p) { return scalarize(t, t.ifft_2d_real(p[0], 1)); };
  EXPECT_LT(fd_error({{{2, 4, 3, 2}, true}}, build, 22), kTol);
}

TEST(OpGradient, ComplexMulAccumulateBothInputs) {
  auto build = [](Tape& t, const std::vector<NodeRef>& p) {
    return scalarize(t, t.ifft_2d_real(t.complex_mul_accumulate(p[0], p[1])));
  };
  EXPECT_LT(fd_error({{{4, 4, 2}, true}, {{4, 4, 2, 2}, true}}, build, 23), kTol);
  EXPECT_LT(fd_error({{{2, 3, 3, 2}, true}, {{3, 3, 2, 2}, true}}, build, 24), kTol);
}

TEST(OpGradient, ComplexMulAccumulateHandRule) {
  // Single entry: dL/du = a g_r + b g_i, dL/dv = -b g_r + a g_i.
  const double a = 0.6, bb = -0.8;
  Tape tape;
  auto f = tape.constant(ComplexGrid({1, 1, 1}, {a}, {bb}));
  auto k = tape.parameter(ParamId{0}, ComplexGrid({1, 1, 1, 1}, {0.3}, {0.9}));
  auto g = tape.complex_mul_accumulate(f, k);
  // Real loss through ifft (1x1: identity on the real part), then sigmoid + BCE.
  auto r = tape.ifft_2d_real(g);
  const double re = tape.real(r).data[0];
  auto loss = tape.binary_cross_entropy(tape.sigmoid(r), {0.25});
  const auto grads = tape.backward(loss);
  const double p = 1.0 / (1.0 + std::exp(-re));
  const double g_r = p - 0.25, g_i = 0.0;  // the real part is all that reaches the loss
  EXPECT_NEAR(grads.complex(ParamId{0}).re[0], a * g_r + bb * g_i, 1e-12);
  EXPECT_NEAR(grads.complex(ParamId{0}).im[0], -bb * g_r + a * g_i, 1e-12);
}

TEST(OpGradient, ScaleAndAdd) {
  std::mt19937_64 rng(25);
  const auto base = random_complex({2, 2, 2, 2}, rng);
  auto build = [base](Tape& t, const std::vector<NodeRef>& p) {
    auto k = t.scale_and_add(p[0], p[1], base, {1, 6, 9, 15}, 0.9, 0.1);
    auto f = t.constant(ComplexGrid({2, 2, 2}, std::vector<double>(8, 0.5), std::vector<double>(8, -0.25)));
    return scalarize(t, t.ifft_2d_real(t.complex_mul_accumulate(f, k)));
  };
  EXPECT_LT(fd_error({{{4, 1}}, {{4, 1}}}, build, 26), kTol);
}

TEST(OpGradient, ScaleAndAddForward) {
  Tape tape;
  ComplexGrid base({2, 2}, {1, 2, 3, 4}, {0, 0, 0, 0});
  auto re = tape.constant(RealGrid({1, 1}, {10.0}));
  auto im = tape.constant(RealGrid({1, 1}, {-10.0}));
  auto out = tape.scale_and_add(re, im, base, {2}, 0.9, 0.1);
  const auto& v = tape.complex(out);
  EXPECT_EQ(v.re[0], 1.0);
  EXPECT_EQ(v.re[2], blend(0.9, 3.0, 0.1, 10.0));
  EXPECT_EQ(v.im[2], blend(0.9, 0.0, 0.1, -10.0));
  EXPECT_EQ(v.im[3], 0.0);
}

TEST(OpGradient, BinaryCrossEntropy) {
  const auto targets = soft_targets(5, 27);
  auto build = [targets](Tape& t, const std::vector<NodeRef>& p) {
    return t.binary_cross_entropy(t.sigmoid(p[0]), targets);
  };
  EXPECT_LT(fd_error({{{5, 1}}}, build, 28, -2.0, 2.0), kTol);
}

TEST(OpGradient, Conv3x3) {
  auto build = [](Tape& t, const std::vector<NodeRef>& p) { return scalarize(t, t.conv3x3(p[0], p[1])); };
  EXPECT_LT(fd_error({{{1, 4, 4, 2}}, {{3, 3, 2, 2}}}, build, 29), kTol);
}

// ---- adjoint property of the linear complex maps ----

namespace {

double inner(const ComplexGrid& a, const ComplexGrid& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.re[i] * b.re[i] + a.im[i] * b.im[i];
  return s;
}

double inner(const RealGrid& a, const RealGrid& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace

TEST(Adjoint, Fft2d) {
  std::mt19937_64 rng(30);
  for (numerics::Shape s : {numerics::Shape{4, 4}, numerics::Shape{3, 5}, numerics::Shape{7, 2}}) {
    const auto x = random_complex(s, rng), y = random_complex(s, rng);
    const double area = static_cast<double>(s[0] * s[1]);
    auto adj = numerics::fft_2d(y, true);
    for (auto& v : adj.re) v *= area;
    for (auto& v : adj.im) v *= area;
    EXPECT_NEAR(inner(numerics::fft_2d(x, false), y), inner(x, adj), 1e-9);
  }
}

TEST(Adjoint, IfftReal) {
  std::mt19937_64 rng(31);
  const auto x = random_complex({4, 3}, rng);
  const auto y = random_real({4, 3}, rng);
  auto adj = numerics::fft_2d(y, false);
  for (auto& v : adj.re) v /= 12.0;
  for (auto& v : adj.im) v /= 12.0;
  EXPECT_NEAR(inner(numerics::ifft_2d_real(x), y), inner(x, adj), 1e-9);
}

TEST(Adjoint, ComplexMulAccumulate) {
  std::mt19937_64 rng(32);
  const auto f = random_complex({3, 2, 2}, rng);
  const auto k = random_complex({3, 2, 2, 3}, rng);
  const auto y = random_complex({3, 2, 3}, rng);
  const auto g = numerics::complex_mul_accumulate(f, k);
  EXPECT_NEAR(inner(g, y), inner(f, numerics::complex_mul_accumulate_grad_features(y, k)), 1e-9);
  EXPECT_NEAR(inner(g, y), inner(k, numerics::complex_mul_accumulate_grad_kernel(y, f)), 1e-9);
}

namespace {

// <T(x), y> as a one-row affine map: with H = 1 the op outputs are [1, W] rows.
NodeRef pair_with(Tape& t, NodeRef out, const RealGrid& y) {
  return t.linear(out, t.constant(y), t.constant(RealGrid({1}, {0.0})));
}

}  // namespace

TEST(Adjoint, TapeIfftRealGradientIsAdjoint) {
  std::mt19937_64 rng(33);
  const auto x = random_complex({1, 6}, rng);
  const auto y = random_real({1, 6}, rng);
  Tape tape;
  auto loss = pair_with(tape, tape.ifft_2d_real(tape.parameter(ParamId{0}, x)), y);
  EXPECT_NEAR(tape.real(loss).data[0], inner(numerics::ifft_2d_real(x), y), 1e-12);
  const auto g = tape.backward(loss).complex(ParamId{0});
  const auto want = numerics::fft_2d(y, false);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(g.re[i], want.re[i] / 6.0, 1e-12);
    EXPECT_NEAR(g.im[i], want.im[i] / 6.0, 1e-12);
  }
}

TEST(Adjoint, TapeFftRoundTripGradientIsIdentity) {
  // Re(IFFT(FFT(x))) = x, so the pullback of y must be y.
  std::mt19937_64 rng(34);
  const auto x = random_real({1, 5}, rng);
  const auto y = random_real({1, 5}, rng);
  Tape tape;
  auto out = tape.ifft_2d_real(tape.fft_2d(tape.parameter(ParamId{0}, x)));
  const auto g = tape.backward(pair_with(tape, out, y)).real(ParamId{0});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(g.data[i], y.data[i], 1e-12);
}

// ---- memory policy ----

TEST(Retention, ReleaseDropsForwardOnlyValues) {
  std::mt19937_64 rng(35);
  Tape tape;
  auto x = tape.constant(random_real({2, 4, 4, 2}, rng));
  auto f = tape.fft_2d(x, 1);
  auto k = tape.parameter(ParamId{0}, random_complex({4, 4, 2, 2}, rng));
  auto g = tape.complex_mul_accumulate(f, k);
  auto r = tape.relu(tape.ifft_2d_real(g, 1));
  auto loss = scalarize(tape, r);
  const auto before = tape.resident_bytes();
  tape.release_forward_only();
  const auto after = tape.resident_bytes();
  EXPECT_LT(after, before);
  EXPECT_EQ(after, tape.saved_bytes());
  const auto grads = tape.backward(loss);
  EXPECT_TRUE(grads.all_finite());
  EXPECT_EQ(tape.resident_bytes(), 0u);
}

// ---- check_gradients harness ----

TEST(CheckGradients, Cubic) {
  ad::DifferentiableFunction f = [](std::span<const double> w, std::vector<double>* g) {
    if (g) *g = {3.0 * w[0] * w[0]};
    return w[0] * w[0] * w[0];
  };
  EXPECT_LT(check_gradients(f, {2.0}, 1e-4).max_relative_error, 1e-6);
}

TEST(CheckGradients, ReluMlpAwayFromKinks) {
  std::mt19937_64 rng(36);
  auto build = [](Tape& t, const std::vector<NodeRef>& p) {
    auto x = t.constant(RealGrid({3, 2}, {0.5, -0.4, 0.9, 0.1, -0.7, 0.3}));
    auto h = t.relu(t.linear(x, p[0], p[1]));
    return scalarize(t, t.linear(h, p[2], p[3]));
  };
  const auto f = make_objective({{{4, 2}}, {{4}}, {{1, 4}}, {{1}}}, build);
  EXPECT_LT(check_gradients(f, jittered(17, rng), kEps).max_relative_error, kTol);
}

TEST(CheckGradients, ReluKinkAtZeroIsReportedLarge) {
  // Expected failure mode: central differences straddle the kink.
  auto build = [](Tape& t, const std::vector<NodeRef>& p) {
    auto w = t.constant(RealGrid({1, 1}, {1.0}));
    auto b = t.constant(RealGrid({1}, {0.0}));
    return t.linear(t.relu(p[0]), w, b);
  };
  const auto f = make_objective({{{1, 1}}}, build);
  EXPECT_GT(check_gradients(f, {0.0}, kEps).max_relative_error, 0.1);
}

TEST(CheckGradients, RelativeErrorDenominator) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0), 1e-12 / 1e-8);
}

TEST(CheckGradients, ResolutionFloorScalesWithRoundOff) {
  const double eps = std::numeric_limits<double>::epsilon();
  EXPECT_DOUBLE_EQ(difference_resolution(0.5, 0.5, 1e-4), 1e4 * 5 * eps / 1e-4);
  EXPECT_DOUBLE_EQ(difference_resolution(300.0, -2.0, 1e-4), 1e4 * 5 * eps * 300 / 1e-4);
  EXPECT_DOUBLE_EQ(difference_resolution(0.5, 0.5, 1.0), 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0, 1e-6), 1e-6);
}
