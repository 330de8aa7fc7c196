#pragma once

// Kernel export. Each file is "CFKN", u32 version, u32 plane count, u32 H, W,
// C_in, C_out, then float64 little-endian planes in [H, W, C_in, C_out] order.

#include <string>
#include <vector>

#include "cfconv/layer.hpp"
#include "cfconv/model.hpp"

namespace cfconv::profile {

using numerics::RealGrid;

struct KernelFile {
  kernelgen::KernelDims dims;
  std::vector<std::vector<double>> planes;
};

void write_kernel_file(const std::string& path, const KernelFile& file);
KernelFile read_kernel_file(const std::string& path);

/// Energy-weighted mean radial frequency (0 at DC, 1 at the grid corner) of
/// one (c_in, c_out) filter of a stored split kernel.
double spectral_centroid(const conv::SplitKernelState& state, std::size_t c_in, std::size_t c_out);

/// Fraction of a spatial filter's energy outside the 3x3 neighbourhood of the
/// origin (circularly).
double energy_outside_center(const RealGrid& spatial, std::size_t c_in, std::size_t c_out);

struct ExportSummary {
  std::vector<std::string> files;
  std::string centroid_csv;
  std::vector<double> centroids;  // layer-major, then c_in, then c_out
};

/// Writes layer<l>_kernel.cfkn (re, im) and layer<l>_spatial.cfkn per CF-Conv
/// layer, plus centroids.csv.
ExportSummary export_kernels(const train::Model& model, const std::string& out_dir);

}  // namespace cfconv::profile
