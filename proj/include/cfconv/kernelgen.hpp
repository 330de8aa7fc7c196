#pragma once

// Coordinate MLPs that generate Fourier-domain kernel values, the four ways of
// conditioning them on kernel axes, uniform position sampling, and the
// parameter/MLP counting arithmetic used by the profilers.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfconv/autodiff.hpp"
#include "cfconv/numerics.hpp"

namespace cfconv::kernelgen {

using numerics::RealGrid;

/// Which kernel axes the generating MLP sees. kHW means one MLP pair per
/// (c_in, c_out) channel pair; kHWCinCout means a single shared pair.
enum class Parameterization { kHW, kHWCin, kHWCout, kHWCinCout };

inline constexpr std::array<Parameterization, 4> kAllParameterizations = {
    Parameterization::kHW, Parameterization::kHWCin, Parameterization::kHWCout,
    Parameterization::kHWCinCout};

std::string_view to_string(Parameterization p);
std::optional<Parameterization> parse_parameterization(std::string_view name);

/// MLP input arity: 2 for kHW, 3 for the single-channel variants, 4 otherwise.
std::size_t input_arity(Parameterization p);

/// Per-layer MLP count, including the factor 2 for real and imaginary planes.
std::size_t count_mlps(Parameterization p, std::size_t c_in, std::size_t c_out);

/// MLP instances generating one plane (count_mlps / 2).
std::size_t instances_per_plane(Parameterization p, std::size_t c_in, std::size_t c_out);

inline const std::vector<std::size_t> kDefaultWidths = {32, 32, 32, 16, 16, 16, 8, 8, 8, 1};
inline const std::vector<std::size_t> kPerPairWidths = {2, 1};

struct KernelDims {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t c_in = 1;
  std::size_t c_out = 1;

  std::size_t total() const { return height * width * c_in * c_out; }
  numerics::Shape shape() const { return {height, width, c_in, c_out}; }
  friend bool operator==(const KernelDims&, const KernelDims&) = default;
};

using Position = std::array<std::size_t, 4>;  // (h, w, c_in, c_out)

std::size_t flatten(const Position& p, const KernelDims& dims);
Position unflatten(std::size_t flat, const KernelDims& dims);

/// i -> 2 i / (n - 1) - 1, with n == 1 mapping to 0.
double normalize_axis(std::size_t index, std::size_t extent);

/// Normalized coordinates of the axes `p` conditions on, in (h, w, c_in, c_out) order.
std::vector<double> normalize_coords(const Position& index, const KernelDims& dims,
                                     Parameterization p);

/// MLP instance (within one plane) that generates position `index`.
std::uint32_t instance_for(const Position& index, const KernelDims& dims, Parameterization p);

/// A bank of identically shaped MLPs: ReLU between layers, identity output.
/// Layer l stores weights [instances, fan_out, fan_in] and biases [instances, fan_out].
class KernelMlp {
 public:
  KernelMlp() = default;
  KernelMlp(std::size_t input_dim, std::vector<std::size_t> widths, std::size_t instances = 1);

  std::size_t input_dim() const { return input_dim_; }
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t instances() const { return instances_; }
  std::size_t layer_count() const { return widths_.size(); }

  /// Parameters of a single instance: sum over layers of fan_in * fan_out + fan_out.
  std::size_t parameters_per_instance() const;
  std::size_t parameter_count() const { return parameters_per_instance() * instances_; }

  /// Weights uniform in +-sqrt(6 / fan_in), biases zero.
  void initialize(std::mt19937_64& rng);

  std::vector<RealGrid> weights;
  std::vector<RealGrid> biases;

 private:
  std::size_t input_dim_ = 0;
  std::vector<std::size_t> widths_;
  std::size_t instances_ = 0;
};

/// Evaluates `coords` ([N, input_dim]) through the instance selected per row.
/// An empty `instances` span routes every row to instance 0.
std::vector<double> mlp_forward(const KernelMlp& mlp, const RealGrid& coords,
                                std::span<const std::uint32_t> instances = {});

struct SplitMlp {
  KernelMlp real;
  KernelMlp imag;

  std::size_t parameter_count() const { return real.parameter_count() + imag.parameter_count(); }
};

SplitMlp make_split_mlp(Parameterization p, const KernelDims& dims,
                        const std::vector<std::size_t>& widths, std::mt19937_64& rng);

/// Sorted, duplicate-free flat kernel indices sampled uniformly without replacement.
struct SelectionSet {
  KernelDims dims;
  std::vector<std::size_t> flat;
  std::uint64_t seed = 0;

  std::size_t size() const { return flat.size(); }
  Position position(std::size_t k) const { return unflatten(flat[k], dims); }
};

SelectionSet sample_positions(const KernelDims& dims, std::size_t count, std::uint64_t seed);
/// Draws a fresh seed from `rng` and samples with it.
SelectionSet sample_positions(const KernelDims& dims, std::size_t count, std::mt19937_64& rng);
SelectionSet full_selection(const KernelDims& dims);
SelectionSet empty_selection(const KernelDims& dims);

struct KernelValues {
  std::vector<double> re;
  std::vector<double> im;
};

inline constexpr std::size_t kDefaultChunk = std::size_t{1} << 15;

/// Real and imaginary kernel values at `flat_positions`, evaluated in chunks of
/// at most `chunk` positions.
KernelValues generate_kernel_values(const SplitMlp& mlps, Parameterization p,
                                    const KernelDims& dims,
                                    std::span<const std::size_t> flat_positions,
                                    std::size_t chunk = kDefaultChunk);
KernelValues generate_full_kernel(const SplitMlp& mlps, Parameterization p,
                                  const KernelDims& dims, std::size_t chunk = kDefaultChunk);

/// Coordinates [N, arity] and per-row instance routing for a set of positions.
RealGrid coordinate_batch(const KernelDims& dims, Parameterization p,
                          std::span<const std::size_t> flat_positions);
std::vector<std::uint32_t> routing(const KernelDims& dims, Parameterization p,
                                   std::span<const std::size_t> flat_positions);

/// Records an MLP bank on the tape. Weight and bias of layer l get parameter
/// ids first_param + 2 l and first_param + 2 l + 1. Returns the [N, 1] output.
ad::NodeRef record_mlp(ad::Tape& tape, const KernelMlp& mlp, std::size_t first_param,
                       ad::NodeRef coords, const std::vector<std::uint32_t>& groups);

// ---- counting ----

std::size_t mlp_parameter_count(std::size_t input_dim, const std::vector<std::size_t>& widths);
std::size_t discrete_spatial_parameters(std::size_t kernel_h, std::size_t kernel_w,
                                        std::size_t c_in, std::size_t c_out);
/// Discrete complex Fourier kernel: H * W * C_in * C_out * 2.
std::size_t discrete_fourier_parameters(std::size_t height, std::size_t width,
                                        std::size_t c_in, std::size_t c_out);
std::size_t cfconv_layer_parameters(Parameterization p, std::size_t c_in, std::size_t c_out,
                                    const std::vector<std::size_t>& widths);
std::size_t dense_parameters(std::size_t fan_in, std::size_t fan_out);

inline const std::vector<std::size_t> kHeadWidths = {128, 64, 1};

struct LayerCount {
  std::string name;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t mlps = 0;  // zero for spatial and dense layers
  std::size_t parameters = 0;
};

struct ModelCount {
  std::vector<LayerCount> layers;
  std::size_t total = 0;
};

/// Whole-model count: `layer_count` conv layers (spatial 3x3 when `p` is empty,
/// CF-Conv otherwise), global average pooling, then the dense head.
ModelCount count_model_parameters(std::optional<Parameterization> p, std::size_t layer_count,
                                  std::size_t input_channels, std::size_t filters,
                                  const std::vector<std::size_t>& widths,
                                  const std::vector<std::size_t>& head = kHeadWidths);

}  // namespace cfconv::kernelgen
