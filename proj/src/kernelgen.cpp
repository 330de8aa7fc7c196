#include "cfconv/kernelgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "cfconv/error.hpp"

namespace cfconv::kernelgen {

std::string_view to_string(Parameterization p) {
  switch (p) {
    case Parameterization::kHW: return "hw";
    case Parameterization::kHWCin: return "hw-cin";
    case Parameterization::kHWCout: return "hw-cout";
    case Parameterization::kHWCinCout: return "hw-cin-cout";
  }
  return "?";
}

std::optional<Parameterization> parse_parameterization(std::string_view name) {
  for (auto p : kAllParameterizations) {
    if (to_string(p) == name) return p;
  }
  return std::nullopt;
}

std::size_t input_arity(Parameterization p) {
  switch (p) {
    case Parameterization::kHW: return 2;
    case Parameterization::kHWCin:
    case Parameterization::kHWCout: return 3;
    case Parameterization::kHWCinCout: return 4;
  }
  return 0;
}

std::size_t instances_per_plane(Parameterization p, std::size_t c_in, std::size_t c_out) {
  switch (p) {
    case Parameterization::kHW: return c_in * c_out;
    case Parameterization::kHWCin: return c_out;  // conditioned on c_in, one per filter
    case Parameterization::kHWCout: return c_in;
    case Parameterization::kHWCinCout: return 1;
  }
  return 0;
}

std::size_t count_mlps(Parameterization p, std::size_t c_in, std::size_t c_out) {
  return 2 * instances_per_plane(p, c_in, c_out);
}

std::size_t flatten(const Position& p, const KernelDims& d) {
  return ((p[0] * d.width + p[1]) * d.c_in + p[2]) * d.c_out + p[3];
}

Position unflatten(std::size_t flat, const KernelDims& d) {
  Position p{};
  p[3] = flat % d.c_out;
  flat /= d.c_out;
  p[2] = flat % d.c_in;
  flat /= d.c_in;
  p[1] = flat % d.width;
  p[0] = flat / d.width;
  return p;
}

double normalize_axis(std::size_t index, std::size_t extent) {
  if (extent <= 1) return 0.0;
  return 2.0 * static_cast<double>(index) / static_cast<double>(extent - 1) - 1.0;
}

namespace {

void check_in_bounds(const Position& index, const KernelDims& dims) {
  const std::array<std::size_t, 4> extents{dims.height, dims.width, dims.c_in, dims.c_out};
  static const char* names[] = {"h", "w", "c_in", "c_out"};
  for (std::size_t a = 0; a < 4; ++a) {
    if (index[a] >= extents[a]) {
      throw ShapeError(std::string("kernel index out of bounds on axis ") + names[a] + ": " +
                       std::to_string(index[a]) + " >= " + std::to_string(extents[a]));
    }
  }
}

// Writes the normalized coordinates of `index` into out[0 .. arity).
void write_coords(const Position& index, const KernelDims& dims, Parameterization p, double* out) {
  out[0] = normalize_axis(index[0], dims.height);
  out[1] = normalize_axis(index[1], dims.width);
  switch (p) {
    case Parameterization::kHW: break;
    case Parameterization::kHWCin: out[2] = normalize_axis(index[2], dims.c_in); break;
    case Parameterization::kHWCout: out[2] = normalize_axis(index[3], dims.c_out); break;
    case Parameterization::kHWCinCout:
      out[2] = normalize_axis(index[2], dims.c_in);
      out[3] = normalize_axis(index[3], dims.c_out);
      break;
  }
}

}  // namespace

std::vector<double> normalize_coords(const Position& index, const KernelDims& dims,
                                     Parameterization p) {
  check_in_bounds(index, dims);
  std::vector<double> out(input_arity(p));
  write_coords(index, dims, p, out.data());
  return out;
}

std::uint32_t instance_for(const Position& index, const KernelDims& dims, Parameterization p) {
  switch (p) {
    case Parameterization::kHW: return static_cast<std::uint32_t>(index[2] * dims.c_out + index[3]);
    case Parameterization::kHWCin: return static_cast<std::uint32_t>(index[3]);
    case Parameterization::kHWCout: return static_cast<std::uint32_t>(index[2]);
    case Parameterization::kHWCinCout: return 0;
  }
  return 0;
}

KernelMlp::KernelMlp(std::size_t input_dim, std::vector<std::size_t> widths, std::size_t instances)
    : input_dim_(input_dim), widths_(std::move(widths)), instances_(instances) {
  if (input_dim_ == 0 || instances_ == 0) throw ConfigError("KernelMlp: zero input dim or instances");
  if (widths_.empty() || widths_.back() != 1) {
    throw ConfigError("KernelMlp: widths must be non-empty and end in 1");
  }
  std::size_t fan_in = input_dim_;
  for (auto fan_out : widths_) {
    if (fan_out == 0) throw ConfigError("KernelMlp: zero layer width");
    weights.emplace_back(numerics::Shape{instances_, fan_out, fan_in});
    biases.emplace_back(numerics::Shape{instances_, fan_out});
    fan_in = fan_out;
  }
}

std::size_t KernelMlp::parameters_per_instance() const {
  return mlp_parameter_count(input_dim_, widths_);
}

void KernelMlp::initialize(std::mt19937_64& rng) {
  std::size_t fan_in = input_dim_;
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : weights[l].data) w = dist(rng);
    std::fill(biases[l].data.begin(), biases[l].data.end(), 0.0);
    fan_in = widths_[l];
  }
}

std::vector<double> mlp_forward(const KernelMlp& mlp, const RealGrid& coords,
                                std::span<const std::uint32_t> instances) {
  if (coords.rank() != 2 || coords.shape[1] != mlp.input_dim()) {
    throw ShapeError("mlp_forward: coordinates " + numerics::shape_string(coords.shape) +
                     " do not have arity " + std::to_string(mlp.input_dim()));
  }
  const std::size_t rows = coords.shape[0];
  if (!instances.empty() && instances.size() != rows) {
    throw ShapeError("mlp_forward: routing length does not match coordinate count");
  }
  std::size_t max_width = mlp.input_dim();
  for (auto w : mlp.widths()) max_width = std::max(max_width, w);
  std::vector<double> a(max_width), b(max_width);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t g = instances.empty() ? 0 : instances[r];
    if (g >= mlp.instances()) throw ShapeError("mlp_forward: instance index out of range");
    std::copy_n(coords.data.data() + r * mlp.input_dim(), mlp.input_dim(), a.begin());
    std::size_t fan_in = mlp.input_dim();
    for (std::size_t l = 0; l < mlp.layer_count(); ++l) {
      const std::size_t fan_out = mlp.widths()[l];
      const double* w = mlp.weights[l].data.data() + g * fan_out * fan_in;
      const double* bias = mlp.biases[l].data.data() + g * fan_out;
      const bool last = l + 1 == mlp.layer_count();
      for (std::size_t o = 0; o < fan_out; ++o) {
        double acc = bias[o];
        for (std::size_t i = 0; i < fan_in; ++i) acc += w[o * fan_in + i] * a[i];
        b[o] = (last || acc > 0.0) ? acc : 0.0;
      }
      std::swap(a, b);
      fan_in = fan_out;
    }
    out[r] = a[0];
  }
  return out;
}

SplitMlp make_split_mlp(Parameterization p, const KernelDims& dims,
                        const std::vector<std::size_t>& widths, std::mt19937_64& rng) {
  const std::size_t n = instances_per_plane(p, dims.c_in, dims.c_out);
  SplitMlp split{KernelMlp(input_arity(p), widths, n), KernelMlp(input_arity(p), widths, n)};
  split.real.initialize(rng);
  split.imag.initialize(rng);
  return split;
}

SelectionSet sample_positions(const KernelDims& dims, std::size_t count, std::uint64_t seed) {
  SelectionSet set{dims, {}, seed};
  const std::size_t total = dims.total();
  if (count >= total) {
    set.flat.resize(total);
    std::iota(set.flat.begin(), set.flat.end(), std::size_t{0});
    return set;
  }
  std::mt19937_64 rng(seed);
  if (2 * count > total) {
    // Partial Fisher-Yates over the full index range.
    std::vector<std::size_t> all(total);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    all.resize(count);
    set.flat = std::move(all);
  } else {
    // Floyd's algorithm: each j contributes exactly one new element.
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(2 * count);
    set.flat.reserve(count);
    for (std::size_t j = total - count; j < total; ++j) {
      std::uniform_int_distribution<std::size_t> pick(0, j);
      const std::size_t t = pick(rng);
      const std::size_t v = chosen.insert(t).second ? t : j;
      if (v == j) chosen.insert(j);
      set.flat.push_back(v);
    }
  }
  std::sort(set.flat.begin(), set.flat.end());
  return set;
}

SelectionSet sample_positions(const KernelDims& dims, std::size_t count, std::mt19937_64& rng) {
  return sample_positions(dims, count, static_cast<std::uint64_t>(rng()));
}

SelectionSet full_selection(const KernelDims& dims) {
  return sample_positions(dims, dims.total(), std::uint64_t{0});
}

SelectionSet empty_selection(const KernelDims& dims) { return SelectionSet{dims, {}, 0}; }

RealGrid coordinate_batch(const KernelDims& dims, Parameterization p,
                          std::span<const std::size_t> flat_positions) {
  const std::size_t arity = input_arity(p);
  RealGrid coords({flat_positions.size(), arity});
  for (std::size_t k = 0; k < flat_positions.size(); ++k) {
    if (flat_positions[k] >= dims.total()) throw ShapeError("coordinate_batch: position out of range");
    write_coords(unflatten(flat_positions[k], dims), dims, p, coords.data.data() + k * arity);
  }
  return coords;
}

std::vector<std::uint32_t> routing(const KernelDims& dims, Parameterization p,
                                   std::span<const std::size_t> flat_positions) {
  std::vector<std::uint32_t> groups(flat_positions.size(), 0);
  if (p == Parameterization::kHWCinCout) return groups;
  for (std::size_t k = 0; k < flat_positions.size(); ++k) {
    groups[k] = instance_for(unflatten(flat_positions[k], dims), dims, p);
  }
  return groups;
}

KernelValues generate_kernel_values(const SplitMlp& mlps, Parameterization p,
                                    const KernelDims& dims,
                                    std::span<const std::size_t> flat_positions,
                                    std::size_t chunk) {
  const std::size_t expected = instances_per_plane(p, dims.c_in, dims.c_out);
  if (mlps.real.instances() != expected || mlps.imag.instances() != expected ||
      mlps.real.input_dim() != input_arity(p) || mlps.imag.input_dim() != input_arity(p)) {
    throw ConfigError("generate_kernel_values: MLP multiplicity " +
                      std::to_string(mlps.real.instances()) + " does not match " +
                      std::string(to_string(p)) + " (expected " + std::to_string(expected) + ")");
  }
  if (chunk == 0) chunk = kDefaultChunk;
  KernelValues values;
  values.re.reserve(flat_positions.size());
  values.im.reserve(flat_positions.size());
  for (std::size_t start = 0; start < flat_positions.size(); start += chunk) {
    const auto part = flat_positions.subspan(start, std::min(chunk, flat_positions.size() - start));
    const RealGrid coords = coordinate_batch(dims, p, part);
    const auto groups = routing(dims, p, part);
    const auto re = mlp_forward(mlps.real, coords, groups);
    const auto im = mlp_forward(mlps.imag, coords, groups);
    values.re.insert(values.re.end(), re.begin(), re.end());
    values.im.insert(values.im.end(), im.begin(), im.end());
  }
  return values;
}

KernelValues generate_full_kernel(const SplitMlp& mlps, Parameterization p,
                                  const KernelDims& dims, std::size_t chunk) {
  std::vector<std::size_t> all(dims.total());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return generate_kernel_values(mlps, p, dims, all, chunk);
}

ad::NodeRef record_mlp(ad::Tape& tape, const KernelMlp& mlp, std::size_t first_param,
                       ad::NodeRef coords, const std::vector<std::uint32_t>& groups) {
  const bool shared = mlp.instances() == 1;
  ad::NodeRef h = coords;
  for (std::size_t l = 0; l < mlp.layer_count(); ++l) {
    auto w = tape.parameter(ad::ParamId{first_param + 2 * l}, mlp.weights[l]);
    auto b = tape.parameter(ad::ParamId{first_param + 2 * l + 1}, mlp.biases[l]);
    h = tape.linear(h, w, b, shared ? std::vector<std::uint32_t>{} : groups);
    if (l + 1 < mlp.layer_count()) h = tape.relu(h);
  }
  return h;
}

std::size_t mlp_parameter_count(std::size_t input_dim, const std::vector<std::size_t>& widths) {
  std::size_t total = 0;
  std::size_t fan_in = input_dim;
  for (auto fan_out : widths) {
    total += fan_in * fan_out + fan_out;
    fan_in = fan_out;
  }
  return total;
}

std::size_t discrete_spatial_parameters(std::size_t kernel_h, std::size_t kernel_w,
                                        std::size_t c_in, std::size_t c_out) {
  return kernel_h * kernel_w * c_in * c_out;
}

std::size_t discrete_fourier_parameters(std::size_t height, std::size_t width, std::size_t c_in,
                                        std::size_t c_out) {
  return height * width * c_in * c_out * 2;
}

std::size_t cfconv_layer_parameters(Parameterization p, std::size_t c_in, std::size_t c_out,
                                    const std::vector<std::size_t>& widths) {
  return count_mlps(p, c_in, c_out) * mlp_parameter_count(input_arity(p), widths);
}

std::size_t dense_parameters(std::size_t fan_in, std::size_t fan_out) {
  return fan_in * fan_out + fan_out;
}

ModelCount count_model_parameters(std::optional<Parameterization> p, std::size_t layer_count,
                                  std::size_t input_channels, std::size_t filters,
                                  const std::vector<std::size_t>& widths,
                                  const std::vector<std::size_t>& head) {
  ModelCount count;
  std::size_t c_in = input_channels;
  for (std::size_t l = 0; l < layer_count; ++l) {
    LayerCount layer{"conv" + std::to_string(l), c_in, filters, 0, 0};
    if (p) {
      layer.mlps = count_mlps(*p, c_in, filters);
      layer.parameters = cfconv_layer_parameters(*p, c_in, filters, widths);
    } else {
      layer.parameters = discrete_spatial_parameters(3, 3, c_in, filters);
    }
    count.layers.push_back(layer);
    c_in = filters;
  }
  std::size_t fan_in = layer_count ? filters : input_channels;
  for (std::size_t d = 0; d < head.size(); ++d) {
    count.layers.push_back(
        {"dense" + std::to_string(d), fan_in, head[d], 0, dense_parameters(fan_in, head[d])});
    fan_in = head[d];
  }
  for (const auto& layer : count.layers) count.total += layer.parameters;
  return count;
}

}  // namespace cfconv::kernelgen
