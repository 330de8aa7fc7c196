#include "cfconv/profile.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "cfconv/error.hpp"

namespace cfconv::profile {

namespace {

bool is_default_stack(const train::ModelConfig& c) {
  return c.layer_count == 6 && c.filters_per_layer == 32 && c.input_channels == 3 &&
         c.mlp_widths == train::default_widths(c.parameterization);
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  return out;
}

}  // namespace

std::string group_digits(std::size_t value) {
  std::string digits = std::to_string(value);
  for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) digits.insert(i, ",");
  return digits;
}

std::optional<ReferenceFigure> reference_total(const train::ModelConfig& c) {
  if (!is_default_stack(c)) return std::nullopt;
  if (c.baseline) return ReferenceFigure{"60K", 60000, 0.01, ""};
  switch (c.parameterization) {
    case Parameterization::kHW:
      return ReferenceFigure{"107K", 107000, 0.01, ""};
    case Parameterization::kHWCinCout:
      return ReferenceFigure{
          "59K", 59000, 0.10,
          "the stated MLP widths give 7,266 per layer; the reference total is not reproduced "
          "by any width list consistent with the description, so the count is reported as is"};
    default:
      return std::nullopt;
  }
}

ParamReport param_report(const train::ModelConfig& c) {
  ParamReport r;
  r.variant = train::parameterization_name(c);
  std::optional<Parameterization> p;
  if (!c.baseline) p = c.parameterization;
  r.count = kernelgen::count_model_parameters(p, c.layer_count, c.input_channels,
                                              c.filters_per_layer, c.mlp_widths);
  r.reference = reference_total(c);
  r.spatial_example = kernelgen::discrete_spatial_parameters(3, 3, 10, 32);
  r.fourier_example = kernelgen::discrete_fourier_parameters(150, 150, 10, 32);
  return r;
}

void print_param_report(std::ostream& os, const ParamReport& r) {
  os << "variant " << r.variant << "\n";
  os << std::left << std::setw(10) << "layer" << std::right << std::setw(6) << "c_in" << std::setw(7)
     << "c_out" << std::setw(7) << "mlps" << std::setw(12) << "params" << "\n";
  for (const auto& l : r.count.layers) {
    os << std::left << std::setw(10) << l.name << std::right << std::setw(6) << l.c_in
       << std::setw(7) << l.c_out << std::setw(7) << l.mlps << std::setw(12)
       << group_digits(l.parameters) << "\n";
  }
  os << "total " << group_digits(r.count.total) << "\n";
  if (r.reference) {
    const double rel = (static_cast<double>(r.count.total) - r.reference->value) / r.reference->value;
    os << "reference " << r.reference->label << " (relative difference " << std::fixed
       << std::setprecision(2) << 100.0 * rel << "%)" << std::defaultfloat << "\n";
    if (!r.reference->note.empty()) os << "note: " << r.reference->note << "\n";
  }
  os << "discrete spatial 3x3, 10 -> 32: " << group_digits(r.spatial_example) << "\n";
  os << "discrete Fourier 150x150 complex, 10 -> 32: " << group_digits(r.fourier_example) << "\n";
}

void write_param_csv(const std::string& path, const ParamReport& r) {
  auto out = open_csv(path);
  out << "layer,c_in,c_out,mlps,parameters\n";
  for (const auto& l : r.count.layers) {
    out << l.name << "," << l.c_in << "," << l.c_out << "," << l.mlps << "," << l.parameters << "\n";
  }
  out << "total,,,," << r.count.total << "\n";
  out << "discrete_spatial_3x3_10x32,10,32,0," << r.spatial_example << "\n";
  out << "discrete_fourier_150x150_10x32,10,32,0," << r.fourier_example << "\n";
}

std::string MemoryEstimate::mode() const {
  return sparse_positions ? "sparse(" + std::to_string(*sparse_positions) + ")" : "naive";
}

std::size_t footprint_bytes(const std::vector<std::size_t>& widths) {
  return 2 * std::accumulate(widths.begin(), widths.end(), std::size_t{0}) * kFloatBytes;
}

std::size_t overhead_bytes(const train::ModelConfig& c) {
  std::size_t total = 0;
  for (std::size_t l = 0; l < c.layer_count; ++l) {
    const std::size_t c_in = l == 0 ? c.input_channels : c.filters_per_layer;
    total += 2 * c.input_height * c.input_width * c_in * c.filters_per_layer * kFloatBytes;
  }
  return total;
}

std::size_t positions_per_unit(Parameterization p, const kernelgen::KernelDims& d) {
  const std::size_t plane = d.height * d.width;
  switch (p) {
    case Parameterization::kHW: return plane;
    case Parameterization::kHWCin: return plane * d.c_in;
    case Parameterization::kHWCout: return plane * d.c_out;
    case Parameterization::kHWCinCout: return plane * d.c_in * d.c_out;
  }
  return plane;
}

std::vector<MemoryEstimate> estimate_memory(const train::ModelConfig& c,
                                            const std::vector<std::size_t>& sparse_counts) {
  const std::size_t footprint = footprint_bytes(c.mlp_widths);
  const std::size_t overhead = overhead_bytes(c);
  auto largest = [&](Parameterization p) {
    std::size_t best = 0;
    for (std::size_t l = 0; l < c.layer_count; ++l) {
      const std::size_t c_in = l == 0 ? c.input_channels : c.filters_per_layer;
      best = std::max(best, positions_per_unit(p, {c.input_height, c.input_width, c_in, c.filters_per_layer}));
    }
    return best;
  };
  const kernelgen::KernelDims square{c.input_height, c.input_width, c.filters_per_layer,
                                     c.filters_per_layer};
  std::vector<MemoryEstimate> rows;
  for (auto p : kernelgen::kAllParameterizations) {
    MemoryEstimate e;
    e.parameterization = p;
    e.mlps_per_layer = kernelgen::count_mlps(p, square.c_in, square.c_out);
    e.positions_per_unit = largest(p);
    e.bytes_peak = e.positions_per_unit * footprint + overhead;
    rows.push_back(e);
  }
  const std::size_t full = largest(Parameterization::kHWCinCout);
  for (auto s : sparse_counts) {
    if (s == 0) throw ConfigError("sparse position count must be at least 1");
    MemoryEstimate e;
    e.parameterization = Parameterization::kHWCinCout;
    e.sparse_positions = s;
    e.mlps_per_layer = kernelgen::count_mlps(e.parameterization, square.c_in, square.c_out);
    e.positions_per_unit = std::min(s, full);
    e.bytes_peak = e.positions_per_unit * footprint + overhead;
    rows.push_back(e);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.bytes_peak < b.bytes_peak; });
  return rows;
}

void print_memory_table(std::ostream& os, const std::vector<MemoryEstimate>& rows) {
  os << std::left << std::setw(14) << "param" << std::setw(16) << "mode" << std::right
     << std::setw(8) << "mlps" << std::setw(16) << "positions" << std::setw(18) << "bytes_peak" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(14) << kernelgen::to_string(r.parameterization) << std::setw(16)
       << r.mode() << std::right << std::setw(8) << r.mlps_per_layer << std::setw(16)
       << group_digits(r.positions_per_unit) << std::setw(18) << group_digits(r.bytes_peak) << "\n";
  }
}

void write_memory_csv(const std::string& path, const std::vector<MemoryEstimate>& rows) {
  auto out = open_csv(path);
  out << "parameterization,mode,mlps_per_layer,positions_per_unit,bytes_peak\n";
  for (const auto& r : rows) {
    out << kernelgen::to_string(r.parameterization) << "," << r.mode() << "," << r.mlps_per_layer
        << "," << r.positions_per_unit << "," << r.bytes_peak << "\n";
  }
}

}  // namespace cfconv::profile
