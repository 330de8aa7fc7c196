#include "cfconv/layer.hpp"

#include "cfconv/error.hpp"

namespace cfconv::conv {

ComplexGrid SplitKernelState::as_complex() const { return ComplexGrid(dims.shape(), re, im); }

SplitKernelState init_state(const KernelDims& dims, std::mt19937_64& rng) {
  if (dims.total() == 0) {
    throw ShapeError("init_state: zero extent in kernel shape " +
                     numerics::shape_string(dims.shape()));
  }
  SplitKernelState state{dims, std::vector<double>(dims.total()),
                         std::vector<double>(dims.total()), 0};
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : state.re) v = dist(rng);
  for (auto& v : state.im) v = dist(rng);
  return state;
}

CFConvLayer::CFConvLayer(KernelDims dims, Parameterization p,
                         const std::vector<std::size_t>& widths, std::mt19937_64& rng,
                         double ema_alpha, EmaReading reading)
    : parameterization_(p), ema_alpha_(ema_alpha), ema_reading_(reading) {
  if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) {
    throw ConfigError("CFConvLayer: ema_alpha must lie in (0, 1], got " + std::to_string(ema_alpha));
  }
  state = init_state(dims, rng);
  mlps = kernelgen::make_split_mlp(p, dims, widths, rng);
}

double CFConvLayer::phi_weight() const {
  return ema_reading_ == EmaReading::kWeightOnNew ? ema_alpha_ : 1.0 - ema_alpha_;
}

std::vector<RealGrid*> CFConvLayer::tensors() {
  std::vector<RealGrid*> out;
  for (auto* mlp : {&mlps.real, &mlps.imag}) {
    for (std::size_t l = 0; l < mlp->layer_count(); ++l) {
      out.push_back(&mlp->weights[l]);
      out.push_back(&mlp->biases[l]);
    }
  }
  return out;
}

std::vector<const RealGrid*> CFConvLayer::tensors() const {
  std::vector<const RealGrid*> out;
  for (const auto* mlp : {&mlps.real, &mlps.imag}) {
    for (std::size_t l = 0; l < mlp->layer_count(); ++l) {
      out.push_back(&mlp->weights[l]);
      out.push_back(&mlp->biases[l]);
    }
  }
  return out;
}

EffectiveKernel build_effective_kernel(const CFConvLayer& layer, const SelectionSet& selection,
                                       ad::Tape& tape, std::size_t first_param) {
  const auto& dims = layer.dims();
  if (!(selection.dims == dims)) throw ShapeError("build_effective_kernel: selection dims differ");
  for (auto flat : selection.flat) {
    if (flat >= dims.total()) throw ShapeError("build_effective_kernel: selection out of bounds");
  }
  const auto p = layer.parameterization();
  auto coords = tape.constant(kernelgen::coordinate_batch(dims, p, selection.flat));
  const auto groups = kernelgen::routing(dims, p, selection.flat);
  EffectiveKernel out;
  out.phi_re = kernelgen::record_mlp(tape, layer.mlps.real, first_param, coords, groups);
  out.phi_im = kernelgen::record_mlp(tape, layer.mlps.imag,
                                     first_param + 2 * layer.mlps.real.layer_count(), coords,
                                     groups);
  const double add = layer.phi_weight();
  out.kernel = tape.scale_and_add(out.phi_re, out.phi_im, layer.state.as_complex(), selection.flat,
                                  1.0 - add, add);
  return out;
}

ad::NodeRef forward(const CFConvLayer& layer, ad::NodeRef input, const EffectiveKernel& kernel,
                    ad::Tape& tape) {
  const auto& shape = tape.shape(input);
  if (shape.size() != 3 && shape.size() != 4) {
    throw ShapeError("cfconv forward: input must be [H,W,C] or [B,H,W,C], got " +
                     numerics::shape_string(shape));
  }
  const std::size_t axis = shape.size() - 3;
  const auto& d = layer.dims();
  if (shape[axis] != d.height || shape[axis + 1] != d.width) {
    throw ShapeError("cfconv forward: spatial dims " + std::to_string(shape[axis]) + "x" +
                     std::to_string(shape[axis + 1]) + " do not match kernel " +
                     std::to_string(d.height) + "x" + std::to_string(d.width));
  }
  auto spectrum = tape.fft_2d(input, axis);
  auto product = tape.complex_mul_accumulate(spectrum, kernel.kernel);
  return tape.ifft_2d_real(product, axis);
}

void commit_update(CFConvLayer& layer, const SelectionSet& selection,
                   const kernelgen::KernelValues& phi) {
  if (phi.re.size() != selection.size() || phi.im.size() != selection.size()) {
    throw ShapeError("commit_update: " + std::to_string(selection.size()) + " positions but " +
                     std::to_string(phi.re.size()) + "/" + std::to_string(phi.im.size()) +
                     " values");
  }
  const double add = layer.phi_weight();
  const double keep = 1.0 - add;
  auto& s = layer.state;
  for (std::size_t k = 0; k < selection.size(); ++k) {
    const std::size_t p = selection.flat[k];
    if (p >= s.re.size()) throw ShapeError("commit_update: position out of bounds");
    s.re[p] = ad::blend(keep, s.re[p], add, phi.re[k]);
    s.im[p] = ad::blend(keep, s.im[p], add, phi.im[k]);
  }
  ++s.step_counter;
}

RealGrid inference_forward(const CFConvLayer& layer, const RealGrid& input) {
  if (input.rank() != 3 && input.rank() != 4) {
    throw ShapeError("cfconv inference: input must be [H,W,C] or [B,H,W,C]");
  }
  const std::size_t axis = input.rank() - 3;
  const auto& d = layer.dims();
  if (input.shape[axis] != d.height || input.shape[axis + 1] != d.width) {
    throw ShapeError("cfconv inference: spatial dims do not match kernel");
  }
  auto spectrum = numerics::fft_2d(input, false, axis);
  auto product = numerics::complex_mul_accumulate(spectrum, layer.state.as_complex());
  return numerics::ifft_2d_real(product, axis);
}

MaterializedKernel materialize_full_kernel(const CFConvLayer& layer) {
  return {layer.state, numerics::ifft_2d_real(layer.state.as_complex(), 0)};
}

RealGrid spatial_conv3x3_forward(const RealGrid& weights, const RealGrid& input) {
  if (input.rank() < 3) throw ShapeError("spatial_conv3x3: input rank below 3");
  const std::size_t axis = input.rank() - 3;
  if (input.shape[axis] < 3 || input.shape[axis + 1] < 3) {
    throw ShapeError("spatial_conv3x3: input must be at least 3x3");
  }
  return numerics::conv3x3_same(input, weights);
}

}  // namespace cfconv::conv
