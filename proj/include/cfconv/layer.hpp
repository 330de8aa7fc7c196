#pragma once

// The CF-Conv layer: a persistent split kernel (real and imaginary planes of
// shape H x W x C_in x C_out) that coordinate MLPs refresh at a sparse set of
// sampled positions each training step through an exponential moving average.

#include <cstdint>
#include <random>

#include "cfconv/autodiff.hpp"
#include "cfconv/kernelgen.hpp"
#include "cfconv/numerics.hpp"

namespace cfconv::conv {

using kernelgen::KernelDims;
using kernelgen::Parameterization;
using kernelgen::SelectionSet;
using numerics::ComplexGrid;
using numerics::RealGrid;

/// How the blend weight alpha is applied at selected positions:
///   kWeightOnNew: stored <- (1 - alpha) * stored + alpha * phi   (default)
///   kWeightOnOld: stored <- alpha * stored + (1 - alpha) * phi
enum class EmaReading { kWeightOnNew, kWeightOnOld };

inline constexpr double kDefaultEmaAlpha = 0.1;

struct SplitKernelState {
  KernelDims dims;
  std::vector<double> re;
  std::vector<double> im;
  std::uint64_t step_counter = 0;

  ComplexGrid as_complex() const;
  friend bool operator==(const SplitKernelState&, const SplitKernelState&) = default;
};

/// Both planes i.i.d. uniform on [-1, 1].
SplitKernelState init_state(const KernelDims& dims, std::mt19937_64& rng);

class CFConvLayer {
 public:
  CFConvLayer(KernelDims dims, Parameterization p, const std::vector<std::size_t>& widths,
              std::mt19937_64& rng, double ema_alpha = kDefaultEmaAlpha,
              EmaReading reading = EmaReading::kWeightOnNew);

  const KernelDims& dims() const { return state.dims; }
  Parameterization parameterization() const { return parameterization_; }
  double ema_alpha() const { return ema_alpha_; }
  EmaReading ema_reading() const { return ema_reading_; }
  /// Weight on the freshly generated value at a selected position.
  double phi_weight() const;

  /// Parameter tensors in the order real weights/biases then imag weights/biases.
  std::size_t tensor_count() const { return 2 * mlps.real.layer_count() + 2 * mlps.imag.layer_count(); }
  std::vector<RealGrid*> tensors();
  std::vector<const RealGrid*> tensors() const;

  SplitKernelState state;
  kernelgen::SplitMlp mlps;

 private:
  Parameterization parameterization_;
  double ema_alpha_;
  EmaReading ema_reading_;
};

struct EffectiveKernel {
  ad::NodeRef kernel;  // complex [H, W, C_in, C_out]
  ad::NodeRef phi_re;  // [S, 1] MLP outputs at the selected positions
  ad::NodeRef phi_im;
};

/// Kernel used in the forward pass: stored state everywhere, blended with the
/// MLP output at selected positions. Only the blended entries carry gradient.
/// MLP tensors are registered as parameters first_param .. first_param + tensor_count().
EffectiveKernel build_effective_kernel(const CFConvLayer& layer, const SelectionSet& selection,
                                       ad::Tape& tape, std::size_t first_param);

/// ifft_2d_real(complex_mul_accumulate(fft_2d(input), kernel)). `input` is a
/// real [H, W, C_in] or [B, H, W, C_in] node.
ad::NodeRef forward(const CFConvLayer& layer, ad::NodeRef input, const EffectiveKernel& kernel,
                    ad::Tape& tape);

/// Applies the blend at the selected positions using the MLP values from the
/// forward pass; everything else is left untouched.
void commit_update(CFConvLayer& layer, const SelectionSet& selection,
                   const kernelgen::KernelValues& phi);

/// Uses the stored state only, as in inference.
RealGrid inference_forward(const CFConvLayer& layer, const RealGrid& input);

struct MaterializedKernel {
  SplitKernelState snapshot;
  RealGrid spatial;  // [H, W, C_in, C_out], real part of the inverse DFT per (c_in, c_out)
};

MaterializedKernel materialize_full_kernel(const CFConvLayer& layer);

/// Spatial 3x3 baseline layer (no bias), zero "same" padding.
RealGrid spatial_conv3x3_forward(const RealGrid& weights, const RealGrid& input);

}  // namespace cfconv::conv
