#pragma once

// Parameter and peak-memory reports. Memory is an analytic estimate:
// positions differentiated together times the per-position activation
// footprint of the MLP stack, plus a model constant.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cfconv/config.hpp"
#include "cfconv/kernelgen.hpp"

namespace cfconv::profile {

using kernelgen::Parameterization;

inline constexpr std::size_t kFloatBytes = 4;

struct ReferenceFigure {
  std::string label;     // e.g. "60K"
  double value = 0.0;    // e.g. 60000
  double tolerance = 0;  // relative
  std::string note;
};

/// Reference whole-model figures for the default six-layer, 32-filter model.
std::optional<ReferenceFigure> reference_total(const train::ModelConfig& config);

struct ParamReport {
  std::string variant;
  kernelgen::ModelCount count;
  std::optional<ReferenceFigure> reference;
  std::size_t spatial_example = 0;  // 3x3 kernel, 10 -> 32 channels
  std::size_t fourier_example = 0;  // discrete 150x150 complex kernel, 10 -> 32 channels
};

ParamReport param_report(const train::ModelConfig& config);
void print_param_report(std::ostream& os, const ParamReport& report);
void write_param_csv(const std::string& path, const ParamReport& report);

struct MemoryEstimate {
  Parameterization parameterization = Parameterization::kHWCinCout;
  std::optional<std::size_t> sparse_positions;  // empty for naive mode
  std::size_t mlps_per_layer = 0;               // for a C_in = C_out = filters layer
  std::size_t positions_per_unit = 0;
  std::size_t bytes_peak = 0;

  std::string mode() const;
};

/// Activation bytes per differentiated position: both planes' MLP widths.
std::size_t footprint_bytes(const std::vector<std::size_t>& widths);
/// Stored kernel state for every layer (identical across rows).
std::size_t overhead_bytes(const train::ModelConfig& config);

std::size_t positions_per_unit(Parameterization p, const kernelgen::KernelDims& dims);

/// Naive rows for all four parameterizations plus one sparse HW_Cin_Cout row
/// per entry of `sparse_counts`, sorted by bytes_peak (ties keep input order).
std::vector<MemoryEstimate> estimate_memory(const train::ModelConfig& config,
                                            const std::vector<std::size_t>& sparse_counts);

void print_memory_table(std::ostream& os, const std::vector<MemoryEstimate>& rows);
void write_memory_csv(const std::string& path, const std::vector<MemoryEstimate>& rows);

/// Thousands separators: 14400000 -> "14,400,000".
std::string group_digits(std::size_t value);

}  // namespace cfconv::profile
