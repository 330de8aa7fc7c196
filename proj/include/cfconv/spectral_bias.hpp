#pragma once

// Spectral-bias experiment. The protocol is this project's own construction:
// fit a target filter with coordinate MLPs either on its spatial values or on
// its Fourier coefficients, then compare the two fits band by band in the
// Fourier domain.

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cfconv/numerics.hpp"

namespace cfconv::profile {

enum class Target { kHighPass, kAllPass, kZero };

std::string_view to_string(Target t);
Target parse_target(std::string_view name);

struct SpectralBiasOptions {
  Target target = Target::kHighPass;
  std::size_t grid = 32;
  double cutoff = 0.5;  // fraction of Nyquist
  std::vector<std::size_t> widths = {32, 32, 1};
  std::size_t steps = 5000;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

inline constexpr std::array<const char*, 3> kBandNames = {"low", "mid", "high"};

struct BandErrorReport {
  std::string target;
  std::string domain;  // "spatial-fit" or "fourier-fit"
  std::array<double, 3> band_mse{};
  std::size_t steps = 0;
  std::size_t parameters = 0;  // both planes
  double final_loss = 0.0;     // training MSE in the fitted domain
};

/// Target spectrum on the unshifted grid (real and symmetric, so the spatial
/// filter is real).
numerics::ComplexGrid target_spectrum(const SpectralBiasOptions& options);

/// Band index (0, 1, 2) of an unshifted frequency bin: thirds of radial
/// frequency over the largest radius on the grid.
std::size_t band_of(std::size_t ky, std::size_t kx, std::size_t grid);

struct SpectralBiasResult {
  BandErrorReport spatial;
  BandErrorReport fourier;
};

SpectralBiasResult run_spectral_bias(const SpectralBiasOptions& options);
void print_spectral_bias(std::ostream& os, const SpectralBiasOptions& options,
                         const SpectralBiasResult& result);
void write_spectral_bias_csv(const std::string& path, const SpectralBiasResult& result);

}  // namespace cfconv::profile
