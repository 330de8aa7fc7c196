#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <set>

#include "cfconv/error.hpp"
#include "cfconv/layer.hpp"
#include "fd_util.hpp"
#include "test_util.hpp"

using namespace cfconv;
using namespace cfconv::conv;
using kernelgen::KernelValues;
using kernelgen::Position;

namespace {

// Single-layer linear MLPs: phi(c) = w . c + b, so parameter gradients are
// easy to predict by hand.
CFConvLayer linear_layer(KernelDims dims, std::uint64_t seed = 1, double alpha = kDefaultEmaAlpha) {
  std::mt19937_64 rng(seed);
  return CFConvLayer(dims, Parameterization::kHWCinCout, {1}, rng, alpha);
}

void set_constant_phi(CFConvLayer& layer, double re, double im) {
  for (auto* mlp : {&layer.mlps.real, &layer.mlps.imag}) {
    for (auto& w : mlp->weights) std::fill(w.data.begin(), w.data.end(), 0.0);
    for (auto& b : mlp->biases) std::fill(b.data.begin(), b.data.end(), 0.0);
  }
  layer.mlps.real.biases.back().data.assign(1, re);
  layer.mlps.imag.biases.back().data.assign(1, im);
}

struct Run {
  ComplexGrid kernel;
  RealGrid output;
  double loss = 0.0;
  std::vector<RealGrid> grads;  // one per layer tensor
};

Run run_layer(const CFConvLayer& layer, const SelectionSet& sel, const RealGrid& input) {
  ad::Tape tape;
  const auto in = tape.constant(input);
  const auto ek = build_effective_kernel(layer, sel, tape, 0);
  const auto out = forward(layer, in, ek, tape);
  const auto loss = testutil::scalarize(tape, out);
  Run r{tape.complex(ek.kernel), tape.real(out), tape.real(loss).data[0], {}};
  const auto grads = tape.backward(loss);
  for (std::size_t k = 0; k < layer.tensor_count(); ++k) {
    const ad::ParamId id{k};
    r.grads.push_back(grads.contains(id) ? grads.real(id)
                                         : RealGrid(layer.tensors()[k]->shape, 0.0));
  }
  return r;
}

// Real part of the inverse DFT of one (c_in, c_out) slice.
RealGrid spatial_equivalent(const ComplexGrid& k, std::size_t ci, std::size_t co) {
  const std::size_t h = k.shape[0], w = k.shape[1], cin = k.shape[2], cout = k.shape[3];
  std::vector<testutil::cd> slice(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) slice[y * w + x] = k.at(((y * w + x) * cin + ci) * cout + co);
  const auto spatial = testutil::naive_dft2(slice, h, w, true);
  RealGrid out({h, w});
  for (std::size_t i = 0; i < h * w; ++i) out.data[i] = spatial[i].real();
  return out;
}

RealGrid channel(const RealGrid& x, std::size_t b, std::size_t c) {
  const std::size_t rank = x.rank();
  const std::size_t h = x.shape[rank - 3], w = x.shape[rank - 2], C = x.shape[rank - 1];
  RealGrid out({h, w});
  for (std::size_t i = 0; i < h * w; ++i) out.data[i] = x.data[(b * h * w + i) * C + c];
  return out;
}

// Circular convolution per output channel, summed over input channels.
std::vector<double> oracle_output(const RealGrid& x, const ComplexGrid& k) {
  const std::size_t rank = x.rank();
  const std::size_t batch = rank == 4 ? x.shape[0] : 1;
  const std::size_t h = k.shape[0], w = k.shape[1], cin = k.shape[2], cout = k.shape[3];
  std::vector<double> out(batch * h * w * cout, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < cout; ++co) {
        const auto conv = testutil::circular_convolution(channel(x, b, ci), spatial_equivalent(k, ci, co));
        for (std::size_t i = 0; i < h * w; ++i) out[(b * h * w + i) * cout + co] += conv[i];
      }
  return out;
}

}  // namespace

TEST(InitState, RangeAndDeterminism) {
  std::mt19937_64 a(11), b(11);
  const auto s = init_state({2, 2, 1, 1}, a);
  ASSERT_EQ(s.re.size(), 4u);
  ASSERT_EQ(s.im.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GE(s.re[i], -1.0);
    EXPECT_LE(s.re[i], 1.0);
    EXPECT_GE(s.im[i], -1.0);
    EXPECT_LE(s.im[i], 1.0);
  }
  EXPECT_EQ(s, init_state({2, 2, 1, 1}, b));
  EXPECT_EQ(s.step_counter, 0u);
}

TEST(InitState, MomentsOfUniform) {
  std::mt19937_64 rng(12);
  const auto s = init_state({150, 150, 3, 32}, rng);
  const std::size_t n = 1000000;
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += s.re[i];
    sq += s.re[i] * s.re[i];
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 1.0 / 3.0, 0.02);
}

TEST(InitState, ZeroExtentThrows) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(init_state({0, 2, 1, 1}, rng), ShapeError);
}

TEST(CFConvLayer, AlphaOutsideRangeThrows) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(CFConvLayer({2, 2, 1, 1}, Parameterization::kHW, {1}, rng, 0.0), ConfigError);
  EXPECT_THROW(CFConvLayer({2, 2, 1, 1}, Parameterization::kHW, {1}, rng, 1.5), ConfigError);
}

TEST(CFConvLayer, EmaReadings) {
  std::mt19937_64 rng(1);
  EXPECT_DOUBLE_EQ(CFConvLayer({2, 2, 1, 1}, Parameterization::kHW, {1}, rng).phi_weight(), 0.1);
  EXPECT_DOUBLE_EQ(CFConvLayer({2, 2, 1, 1}, Parameterization::kHW, {1}, rng, 0.1,
                               EmaReading::kWeightOnOld).phi_weight(), 0.9);
}

TEST(EffectiveKernel, EmptySelectionIsStoredStateWithNoGradient) {
  std::mt19937_64 rng(2);
  CFConvLayer layer({4, 4, 2, 2}, Parameterization::kHWCinCout, kernelgen::kDefaultWidths, rng);
  const auto x = testutil::random_real({4, 4, 2}, rng);
  const auto r = run_layer(layer, kernelgen::empty_selection(layer.dims()), x);
  EXPECT_EQ(r.kernel.re, layer.state.re);
  EXPECT_EQ(r.kernel.im, layer.state.im);
  for (const auto& g : r.grads)
    for (double v : g.data) EXPECT_EQ(v, 0.0);
}

TEST(EffectiveKernel, AlphaOneFullSelectionIsPureMlp) {
  std::mt19937_64 rng(3);
  CFConvLayer layer({3, 4, 2, 2}, Parameterization::kHWCin, kernelgen::kDefaultWidths, rng, 1.0);
  const auto x = testutil::random_real({3, 4, 2}, rng);
  const auto r = run_layer(layer, kernelgen::full_selection(layer.dims()), x);
  const auto phi = kernelgen::generate_full_kernel(layer.mlps, Parameterization::kHWCin, layer.dims());
  EXPECT_LT(testutil::max_abs_diff(r.kernel.re, phi.re), 1e-14);
  EXPECT_LT(testutil::max_abs_diff(r.kernel.im, phi.im), 1e-14);
}

TEST(EffectiveKernel, HandBlendAndGradient) {
  auto layer = linear_layer({1, 1, 1, 1});
  set_constant_phi(layer, 1.5, 0.0);
  layer.state.re = {0.5};
  layer.state.im = {0.0};
  ad::Tape tape;
  const auto ek = build_effective_kernel(layer, kernelgen::full_selection(layer.dims()), tape, 0);
  EXPECT_NEAR(tape.complex(ek.kernel).re[0], 0.6, 1e-15);
  // With a 1x1 input of value 1 the output is Re K, so dL/dphi = 0.1 * dL/dK.
  const auto out = forward(layer, tape.constant(RealGrid({1, 1, 1}, 1.0)), ek, tape);
  EXPECT_NEAR(tape.real(out).data[0], 0.6, 1e-15);
  const auto loss = tape.binary_cross_entropy(tape.sigmoid(out), {0.25});
  const auto grads = tape.backward(loss);
  const double dl_dk = 1.0 / (1.0 + std::exp(-0.6)) - 0.25;
  // Real MLP tensors: weight (id 0), bias (id 1). phi = w . c + b.
  EXPECT_NEAR(grads.real(ad::ParamId{1}).data[0], 0.1 * dl_dk, 1e-14);
}

TEST(EffectiveKernel, OutOfBoundsSelectionThrows) {
  auto layer = linear_layer({2, 2, 1, 1});
  SelectionSet bad{layer.dims(), {4}, 0};
  ad::Tape tape;
  EXPECT_THROW(build_effective_kernel(layer, bad, tape, 0), ShapeError);
  SelectionSet other_dims{{2, 2, 1, 2}, {0}, 0};
  EXPECT_THROW(build_effective_kernel(layer, other_dims, tape, 0), ShapeError);
}

TEST(Forward, IdentityKernel) {
  auto layer = linear_layer({5, 6, 1, 1});
  std::fill(layer.state.re.begin(), layer.state.re.end(), 1.0);
  std::fill(layer.state.im.begin(), layer.state.im.end(), 0.0);
  std::mt19937_64 rng(4);
  const auto x = testutil::random_real({5, 6, 1}, rng);
  const auto r = run_layer(layer, kernelgen::empty_selection(layer.dims()), x);
  EXPECT_LT(testutil::max_abs_diff(r.output.data, x.data), 1e-9);
}

TEST(Forward, ZeroKernel) {
  auto layer = linear_layer({4, 4, 2, 3});
  std::fill(layer.state.re.begin(), layer.state.re.end(), 0.0);
  std::fill(layer.state.im.begin(), layer.state.im.end(), 0.0);
  std::mt19937_64 rng(5);
  const auto r = run_layer(layer, kernelgen::empty_selection(layer.dims()), testutil::random_real({4, 4, 2}, rng));
  for (double v : r.output.data) EXPECT_EQ(v, 0.0);
}

TEST(Forward, CircularConvolutionOracle) {
  std::mt19937_64 rng(6);
  CFConvLayer layer({4, 4, 2, 3}, Parameterization::kHWCinCout, kernelgen::kDefaultWidths, rng);
  const auto x = testutil::random_real({4, 4, 2}, rng);
  const auto sel = kernelgen::sample_positions(layer.dims(), 20, rng);
  const auto r = run_layer(layer, sel, x);
  EXPECT_LT(testutil::max_abs_diff(r.output.data, oracle_output(x, r.kernel)), 1e-7);
}

TEST(Forward, OracleForAllSmallDims) {
  std::mt19937_64 rng(7);
  for (std::size_t h = 1; h <= 4; ++h)
    for (std::size_t w = 1; w <= 4; ++w)
      for (std::size_t cin = 1; cin <= 2; ++cin)
        for (std::size_t cout = 1; cout <= 2; ++cout) {
          CFConvLayer layer({h, w, cin, cout}, Parameterization::kHW, kernelgen::kPerPairWidths, rng);
          const auto x = testutil::random_real({2, h, w, cin}, rng);
          const auto sel = kernelgen::sample_positions(layer.dims(), 3, rng);
          const auto r = run_layer(layer, sel, x);
          EXPECT_LT(testutil::max_abs_diff(r.output.data, oracle_output(x, r.kernel)), 1e-7)
              << h << "x" << w << "x" << cin << "x" << cout;
        }
}

TEST(Forward, SpatialMismatchThrows) {
  auto layer = linear_layer({4, 4, 1, 1});
  ad::Tape tape;
  const auto ek = build_effective_kernel(layer, kernelgen::empty_selection(layer.dims()), tape, 0);
  EXPECT_THROW(forward(layer, tape.constant(RealGrid({4, 5, 1})), ek, tape), ShapeError);
  EXPECT_THROW(inference_forward(layer, RealGrid({5, 4, 1})), ShapeError);
}

TEST(Forward, InferenceUsesStoredState) {
  std::mt19937_64 rng(8);
  CFConvLayer layer({6, 5, 2, 3}, Parameterization::kHWCout, kernelgen::kDefaultWidths, rng);
  const auto x = testutil::random_real({3, 6, 5, 2}, rng);
  const auto r = run_layer(layer, kernelgen::empty_selection(layer.dims()), x);
  EXPECT_LT(testutil::max_abs_diff(inference_forward(layer, x).data, r.output.data), 1e-12);
}

TEST(Commit, OneStep) {
  auto layer = linear_layer({1, 1, 1, 1});
  layer.state.re = {0.0};
  layer.state.im = {0.0};
  commit_update(layer, kernelgen::full_selection(layer.dims()), KernelValues{{1.0}, {1.0}});
  EXPECT_NEAR(layer.state.re[0], 0.1, 1e-15);
  EXPECT_NEAR(layer.state.im[0], 0.1, 1e-15);
  EXPECT_EQ(layer.state.step_counter, 1u);
}

TEST(Commit, GeometricRecursion) {
  auto layer = linear_layer({1, 1, 1, 1});
  layer.state.re = {0.0};
  layer.state.im = {0.0};
  for (int n = 0; n < 5; ++n)
    commit_update(layer, kernelgen::full_selection(layer.dims()), KernelValues{{1.0}, {1.0}});
  EXPECT_NEAR(layer.state.re[0], 0.40951, 1e-12);
  EXPECT_NEAR(layer.state.im[0], 1.0 - std::pow(0.9, 5), 1e-12);
  EXPECT_EQ(layer.state.step_counter, 5u);
}

TEST(Commit, UnselectedPositionsUntouched) {
  std::mt19937_64 rng(9);
  CFConvLayer layer({4, 4, 2, 2}, Parameterization::kHWCinCout, kernelgen::kDefaultWidths, rng);
  const auto init = layer.state;
  std::set<std::size_t> touched;
  for (int step = 0; step < 100; ++step) {
    // Position 0 is never offered to the sampler.
    auto sel = kernelgen::sample_positions(layer.dims(), 3, rng);
    sel.flat.erase(std::remove(sel.flat.begin(), sel.flat.end(), std::size_t{0}), sel.flat.end());
    const auto phi = kernelgen::generate_kernel_values(layer.mlps, layer.parameterization(), layer.dims(), sel.flat);
    commit_update(layer, sel, phi);
    touched.insert(sel.flat.begin(), sel.flat.end());
  }
  EXPECT_EQ(layer.state.re[0], init.re[0]);
  EXPECT_EQ(layer.state.im[0], init.im[0]);
  for (std::size_t p = 0; p < init.re.size(); ++p) {
    if (touched.count(p)) continue;
    EXPECT_EQ(layer.state.re[p], init.re[p]);
    EXPECT_EQ(layer.state.im[p], init.im[p]);
  }
  EXPECT_EQ(layer.state.step_counter, 100u);
}

TEST(Commit, LocalityOfSingleCommit) {
  std::mt19937_64 rng(10);
  CFConvLayer layer({3, 3, 2, 2}, Parameterization::kHWCinCout, kernelgen::kDefaultWidths, rng);
  const auto before = materialize_full_kernel(layer).snapshot;
  const SelectionSet sel{layer.dims(), {13}, 0};
  commit_update(layer, sel, KernelValues{{before.re[13] + 1.0}, {before.im[13] - 1.0}});
  const auto after = materialize_full_kernel(layer).snapshot;
  for (std::size_t p = 0; p < before.re.size(); ++p) {
    EXPECT_EQ(after.re[p] != before.re[p], p == 13);
    EXPECT_EQ(after.im[p] != before.im[p], p == 13);
  }
}

TEST(Commit, LengthMismatchThrows) {
  auto layer = linear_layer({2, 2, 1, 1});
  EXPECT_THROW(commit_update(layer, kernelgen::full_selection(layer.dims()), KernelValues{{1.0}, {1.0}}),
               ShapeError);
}

TEST(Commit, EmaConvergesGeometrically) {
  std::mt19937_64 rng(11);
  CFConvLayer layer({3, 3, 2, 2}, Parameterization::kHWCinCout, kernelgen::kDefaultWidths, rng);
  const auto full = kernelgen::full_selection(layer.dims());
  const auto phi = kernelgen::generate_full_kernel(layer.mlps, layer.parameterization(), layer.dims());
  const auto init = layer.state;
  const int steps = 60;
  for (int n = 0; n < steps; ++n) commit_update(layer, full, phi);
  const double ratio = std::pow(0.9, steps);
  for (std::size_t p = 0; p < init.re.size(); ++p) {
    EXPECT_NEAR(layer.state.re[p] - phi.re[p], ratio * (init.re[p] - phi.re[p]), 1e-12);
    EXPECT_NEAR(layer.state.im[p] - phi.im[p], ratio * (init.im[p] - phi.im[p]), 1e-12);
  }
}

TEST(Materialize, FreshLayerSnapshotIsInit) {
  std::mt19937_64 a(12), b(12);
  CFConvLayer layer({4, 4, 1, 2}, Parameterization::kHWCout, kernelgen::kDefaultWidths, a);
  EXPECT_EQ(materialize_full_kernel(layer).snapshot, init_state({4, 4, 1, 2}, b));
}

TEST(Materialize, RecoversThreeByThreeFilter) {
  const std::size_t h = 8, w = 7;
  auto layer = linear_layer({h, w, 1, 1});
  std::mt19937_64 rng(13);
  RealGrid filter({h, w}, 0.0);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) filter.data[y * w + x] = std::uniform_real_distribution<double>(-1, 1)(rng);
  std::vector<testutil::cd> spatial(filter.data.begin(), filter.data.end());
  const auto spectrum = testutil::naive_dft2(spatial, h, w, false);
  for (std::size_t i = 0; i < h * w; ++i) {
    layer.state.re[i] = spectrum[i].real();
    layer.state.im[i] = spectrum[i].imag();
  }
  const auto m = materialize_full_kernel(layer);
  ASSERT_EQ(m.spatial.shape, (numerics::Shape{h, w, 1, 1}));
  EXPECT_LT(testutil::max_abs_diff(m.spatial.data, filter.data), 1e-8);
}

TEST(Conv3x3, CenterOneIsIdentity) {
  RealGrid weights({3, 3, 2, 2}, 0.0);
  weights.data[((1 * 3 + 1) * 2 + 0) * 2 + 0] = 1.0;
  weights.data[((1 * 3 + 1) * 2 + 1) * 2 + 1] = 1.0;
  std::mt19937_64 rng(14);
  const auto x = testutil::random_real({5, 6, 2}, rng);
  EXPECT_EQ(spatial_conv3x3_forward(weights, x).data, x.data);
}

TEST(Conv3x3, BoxSumWithZeroPadding) {
  const auto out = spatial_conv3x3_forward(RealGrid({3, 3, 1, 1}, 1.0), RealGrid({5, 5, 1}, 1.0));
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      const bool edge_y = y == 0 || y == 4, edge_x = x == 0 || x == 4;
      const double expected = edge_y && edge_x ? 4 : (edge_y || edge_x ? 6 : 9);
      EXPECT_EQ(out.data[y * 5 + x], expected);
    }
}

TEST(Conv3x3, LoopOracle) {
  std::mt19937_64 rng(15);
  const std::size_t B = 2, H = 5, W = 4, CI = 3, CO = 2;
  const auto x = testutil::random_real({B, H, W, CI}, rng);
  const auto k = testutil::random_real({3, 3, CI, CO}, rng);
  const auto out = spatial_conv3x3_forward(k, x);
  std::vector<double> ref(B * H * W * CO, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        for (std::size_t co = 0; co < CO; ++co)
          for (std::size_t dy = 0; dy < 3; ++dy)
            for (std::size_t dx = 0; dx < 3; ++dx) {
              const long sy = static_cast<long>(y + dy) - 1, sx = static_cast<long>(xx + dx) - 1;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(W)) continue;
              for (std::size_t ci = 0; ci < CI; ++ci)
                ref[((b * H + y) * W + xx) * CO + co] +=
                    x.data[((b * H + sy) * W + sx) * CI + ci] * k.data[((dy * 3 + dx) * CI + ci) * CO + co];
            }
  EXPECT_LT(testutil::max_abs_diff(out.data, ref), 1e-10);
}

TEST(Conv3x3, ShapeErrors) {
  EXPECT_THROW(spatial_conv3x3_forward(RealGrid({3, 3, 1, 1}), RealGrid({2, 5, 1})), ShapeError);
  EXPECT_THROW(spatial_conv3x3_forward(RealGrid({3, 3, 2, 1}), RealGrid({5, 5, 1})), ShapeError);
}

TEST(Gradient, SinglePositionMatchesScaledDenseGradient) {
  const KernelDims dims{4, 4, 2, 2};
  auto layer = linear_layer(dims, 16);
  std::mt19937_64 rng(16);
  const auto x = testutil::random_real({4, 4, 2}, rng);
  const std::size_t p = 21;
  const SelectionSet sel{dims, {p}, 0};
  const auto r = run_layer(layer, sel, x);

  // Same kernel values as a directly parameterized dense kernel.
  ad::Tape tape;
  const auto k = tape.parameter(ad::ParamId{0}, r.kernel);
  const auto out = tape.ifft_2d_real(tape.complex_mul_accumulate(tape.fft_2d(tape.constant(x)), k));
  const auto dense = tape.backward(testutil::scalarize(tape, out)).complex(ad::ParamId{0});

  const auto c = kernelgen::normalize_coords(kernelgen::unflatten(p, dims), dims, Parameterization::kHWCinCout);
  const double alpha = layer.ema_alpha();
  // tensors: real w, real b, imag w, imag b
  for (int part = 0; part < 2; ++part) {
    const double g = alpha * (part == 0 ? dense.re[p] : dense.im[p]);
    ASSERT_NE(g, 0.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.grads[2 * part].data[i], g * c[i], 1e-12);
    EXPECT_NEAR(r.grads[2 * part + 1].data[0], g, 1e-12);
  }
}

TEST(Gradient, OneLayerFiniteDifferences) {
  const KernelDims dims{4, 4, 1, 1};
  std::mt19937_64 rng(17);
  CFConvLayer layer(dims, Parameterization::kHWCinCout, kernelgen::kDefaultWidths, rng);
  const auto x = testutil::random_real({4, 4, 1}, rng);
  const auto sel = kernelgen::sample_positions(dims, 8, rng);
  std::vector<double> flat;
  for (const auto* t : std::as_const(layer).tensors()) flat.insert(flat.end(), t->data.begin(), t->data.end());
  // Jitter until every hidden pre-activation clears the perturbation scale.
  const auto coords = kernelgen::coordinate_batch(dims, layer.parameterization(), sel.flat);
  const auto groups = kernelgen::routing(dims, layer.parameterization(), sel.flat);
  const auto base = flat;
  for (int attempt = 0;; ++attempt) {
    ASSERT_LT(attempt, 1000) << "no kink-free jitter found";
    flat = base;
    for (auto& v : flat) v += std::uniform_real_distribution<double>(-0.05, 0.05)(rng);
    CFConvLayer probe = layer;
    std::size_t off = 0;
    for (auto* t : probe.tensors()) {
      std::copy(flat.begin() + off, flat.begin() + off + t->data.size(), t->data.begin());
      off += t->data.size();
    }
    if (std::min(testutil::min_hidden_preactivation(probe.mlps.real, coords, groups),
                 testutil::min_hidden_preactivation(probe.mlps.imag, coords, groups)) > 1e-3)
      break;
  }
  auto f = [&](std::span<const double> params, std::vector<double>* grad) {
    CFConvLayer l = layer;
    std::size_t off = 0;
    for (auto* t : l.tensors()) {
      std::copy(params.begin() + off, params.begin() + off + t->data.size(), t->data.begin());
      off += t->data.size();
    }
    const auto r = run_layer(l, sel, x);
    if (grad) {
      grad->clear();
      for (const auto& g : r.grads) grad->insert(grad->end(), g.data.begin(), g.data.end());
    }
    return r.loss;
  };
  const auto res = ad::check_gradients(f, flat, 1e-4);
  EXPECT_LT(res.max_relative_error, 1e-4) << "index " << res.worst_index << " analytic " << res.analytic
                                          << " numeric " << res.numeric;
}

TEST(Runtime, ForwardTimeIndependentOfSpatialSupport) {
  const KernelDims dims{64, 64, 4, 4};
  std::mt19937_64 rng(18);
  auto point = linear_layer(dims, 18);
  std::fill(point.state.re.begin(), point.state.re.end(), 0.5);  // 1x1 spatial support
  std::fill(point.state.im.begin(), point.state.im.end(), 0.0);
  auto wide = linear_layer(dims, 19);  // random spectrum: full support
  const auto x = testutil::random_real({4, 64, 64, 4}, rng);
  const auto sel = kernelgen::sample_positions(dims, 1024, rng);
  auto time_once = [&](const CFConvLayer& l) {
    const auto t0 = std::chrono::steady_clock::now();
    run_layer(l, sel, x);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  std::vector<double> tp, tw;
  for (int rep = 0; rep < 9; ++rep) {
    tp.push_back(time_once(point));
    tw.push_back(time_once(wide));
  }
  std::nth_element(tp.begin(), tp.begin() + 4, tp.end());
  std::nth_element(tw.begin(), tw.begin() + 4, tw.end());
  const double ratio = tp[4] / tw[4];
  EXPECT_GT(ratio, 1.0 / 1.2);
  EXPECT_LT(ratio, 1.2);
}
