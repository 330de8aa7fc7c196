#include "cfconv/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include "cfconv/error.hpp"

namespace cfconv::numerics {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

bool finite_span(const std::vector<double>& values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

RealGrid::RealGrid(Shape extents, double fill)
    : shape(std::move(extents)), data(element_count(shape), fill) {}

RealGrid::RealGrid(Shape extents, std::vector<double> values)
    : shape(std::move(extents)), data(std::move(values)) {
  if (data.size() != element_count(shape)) {
    throw ShapeError("RealGrid: " + std::to_string(data.size()) + " values for shape " +
                     shape_string(shape));
  }
}

bool RealGrid::all_finite() const { return finite_span(data); }

ComplexGrid::ComplexGrid(Shape extents)
    : shape(std::move(extents)), re(element_count(shape), 0.0), im(element_count(shape), 0.0) {}

ComplexGrid::ComplexGrid(Shape extents, std::vector<double> real, std::vector<double> imag)
    : shape(std::move(extents)), re(std::move(real)), im(std::move(imag)) {
  const auto n = element_count(shape);
  if (re.size() != n || im.size() != n) {
    throw ShapeError("ComplexGrid: plane sizes do not match shape " + shape_string(shape));
  }
}

ComplexGrid::ComplexGrid(const RealGrid& real)
    : shape(real.shape), re(real.data), im(real.data.size(), 0.0) {}

RealGrid ComplexGrid::real_part() const { return RealGrid(shape, re); }
RealGrid ComplexGrid::imag_part() const { return RealGrid(shape, im); }
bool ComplexGrid::all_finite() const { return finite_span(re) && finite_span(im); }

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

std::size_t next_power_of_two(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

struct Radix2Plan {
  std::size_t n = 0;
  std::vector<std::size_t> bit_reverse;
  std::vector<double> cos_table;  // cos(2*pi*k/n), k < n/2
  std::vector<double> sin_table;  // sin(2*pi*k/n)
};

struct BluesteinPlan {
  std::size_t n = 0;
  std::size_t padded = 0;
  std::shared_ptr<const Radix2Plan> inner;
  std::vector<double> chirp_re, chirp_im;    // exp(-i*pi*k^2/n)
  std::vector<double> filter_re, filter_im;  // padded FFT of conj(chirp), pre-scaled by 1/padded
};

struct Plan {
  std::shared_ptr<const Radix2Plan> radix2;
  std::shared_ptr<const BluesteinPlan> bluestein;
};

std::shared_ptr<const Radix2Plan> make_radix2(std::size_t n) {
  auto plan = std::make_shared<Radix2Plan>();
  plan->n = n;
  plan->bit_reverse.resize(n);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
    plan->bit_reverse[i] = r;
  }
  plan->cos_table.resize(n / 2);
  plan->sin_table.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    plan->cos_table[k] = std::cos(angle);
    plan->sin_table[k] = std::sin(angle);
  }
  return plan;
}

// Element k, lane l lives at base[k * stride + l]. Unnormalized in both directions.
void radix2_lanes(double* re, double* im, std::size_t stride, std::size_t lanes,
                  const Radix2Plan& plan, bool inverse) {
  const std::size_t n = plan.n;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = plan.bit_reverse[i];
    if (i < j) {
      std::swap_ranges(re + i * stride, re + i * stride + lanes, re + j * stride);
      std::swap_ranges(im + i * stride, im + i * stride + lanes, im + j * stride);
    }
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t j = 0; j < half; ++j) {
        const double wr = plan.cos_table[j * step];
        const double wi = sign * plan.sin_table[j * step];
        double* ur = re + (start + j) * stride;
        double* ui = im + (start + j) * stride;
        double* vr = re + (start + j + half) * stride;
        double* vi = im + (start + j + half) * stride;
        for (std::size_t l = 0; l < lanes; ++l) {
          const double tr = vr[l] * wr - vi[l] * wi;
          const double ti = vr[l] * wi + vi[l] * wr;
          vr[l] = ur[l] - tr;
          vi[l] = ui[l] - ti;
          ur[l] += tr;
          ui[l] += ti;
        }
      }
    }
  }
}

std::shared_ptr<const BluesteinPlan> make_bluestein(std::size_t n,
                                                    std::shared_ptr<const Radix2Plan> inner) {
  auto plan = std::make_shared<BluesteinPlan>();
  plan->n = n;
  plan->padded = inner->n;
  plan->inner = inner;
  plan->chirp_re.resize(n);
  plan->chirp_im.resize(n);
  const std::size_t period = 2 * n;
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle small for large k.
    const std::size_t k2 = (k * k) % period;
    const double angle = std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    plan->chirp_re[k] = std::cos(angle);
    plan->chirp_im[k] = -std::sin(angle);
  }
  const std::size_t m = plan->padded;
  std::vector<double> fr(m, 0.0), fi(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    fr[k] = plan->chirp_re[k];
    fi[k] = -plan->chirp_im[k];
    if (k != 0) {
      fr[m - k] = fr[k];
      fi[m - k] = fi[k];
    }
  }
  radix2_lanes(fr.data(), fi.data(), 1, 1, *inner, false);
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < m; ++k) {
    fr[k] *= scale;
    fi[k] *= scale;
  }
  plan->filter_re = std::move(fr);
  plan->filter_im = std::move(fi);
  return plan;
}

Plan plan_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, Plan> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find(n); it != cache.end()) return it->second;

  auto radix2_for = [&](std::size_t m) {
    if (auto it = cache.find(m); it != cache.end() && it->second.radix2) return it->second.radix2;
    auto p = make_radix2(m);
    cache[m] = Plan{p, nullptr};
    return p;
  };

  Plan plan;
  if (is_power_of_two(n)) {
    plan.radix2 = radix2_for(n);
  } else {
    plan.bluestein = make_bluestein(n, radix2_for(next_power_of_two(2 * n - 1)));
    cache[n] = plan;
  }
  return plan;
}

void bluestein_lanes(double* re, double* im, std::size_t stride, std::size_t lanes,
                     const BluesteinPlan& plan, bool inverse) {
  const std::size_t n = plan.n;
  const std::size_t m = plan.padded;
  std::vector<double> ar(m * lanes, 0.0), ai(m * lanes, 0.0);
  // The inverse transform is conj(forward(conj(x))).
  const double conj_sign = inverse ? -1.0 : 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double cr = plan.chirp_re[k];
    const double ci = plan.chirp_im[k];
    const double* xr = re + k * stride;
    const double* xi = im + k * stride;
    double* outr = ar.data() + k * lanes;
    double* outi = ai.data() + k * lanes;
    for (std::size_t l = 0; l < lanes; ++l) {
      const double vr = xr[l];
      const double vi = conj_sign * xi[l];
      outr[l] = vr * cr - vi * ci;
      outi[l] = vr * ci + vi * cr;
    }
  }
  radix2_lanes(ar.data(), ai.data(), lanes, lanes, *plan.inner, false);
  for (std::size_t k = 0; k < m; ++k) {
    const double br = plan.filter_re[k];
    const double bi = plan.filter_im[k];
    double* pr = ar.data() + k * lanes;
    double* pi = ai.data() + k * lanes;
    for (std::size_t l = 0; l < lanes; ++l) {
      const double vr = pr[l];
      const double vi = pi[l];
      pr[l] = vr * br - vi * bi;
      pi[l] = vr * bi + vi * br;
    }
  }
  radix2_lanes(ar.data(), ai.data(), lanes, lanes, *plan.inner, true);
  for (std::size_t k = 0; k < n; ++k) {
    const double cr = plan.chirp_re[k];
    const double ci = plan.chirp_im[k];
    double* xr = re + k * stride;
    double* xi = im + k * stride;
    const double* pr = ar.data() + k * lanes;
    const double* pi = ai.data() + k * lanes;
    for (std::size_t l = 0; l < lanes; ++l) {
      xr[l] = pr[l] * cr - pi[l] * ci;
      xi[l] = conj_sign * (pr[l] * ci + pi[l] * cr);
    }
  }
}

void check_transform_axes(const Shape& shape, std::size_t first_axis, const char* op) {
  if (shape.size() < first_axis + 2) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(shape) +
                     " has no axes " + std::to_string(first_axis) + " and " +
                     std::to_string(first_axis + 1));
  }
  if (shape[first_axis] == 0 || shape[first_axis + 1] == 0) {
    throw EmptyInputError(std::string(op) + ": zero-length transform axis in " +
                          shape_string(shape));
  }
}

}  // namespace

void transform_axis(std::span<double> re, std::span<double> im, const Shape& shape,
                    std::size_t axis, bool inverse) {
  if (axis >= shape.size()) {
    throw ShapeError("transform_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape));
  }
  const std::size_t n = shape[axis];
  if (n == 0) throw EmptyInputError("transform_axis: zero-length axis");
  if (re.size() != element_count(shape) || im.size() != re.size()) {
    throw ShapeError("transform_axis: buffer size does not match " + shape_string(shape));
  }
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t outer = re.size() / (n * inner);
  if (n > 1) {
    const Plan plan = plan_for(n);
    for (std::size_t o = 0; o < outer; ++o) {
      double* br = re.data() + o * n * inner;
      double* bi = im.data() + o * n * inner;
      if (plan.radix2) {
        radix2_lanes(br, bi, inner, inner, *plan.radix2, inverse);
      } else {
        bluestein_lanes(br, bi, inner, inner, *plan.bluestein, inverse);
      }
    }
  }
  if (inverse && n > 1) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : re) v *= scale;
    for (auto& v : im) v *= scale;
  }
}

ComplexGrid fft_1d(const ComplexGrid& signal, bool inverse) {
  if (signal.rank() != 1) {
    throw ShapeError("fft_1d: expected rank-1 signal, got " + shape_string(signal.shape));
  }
  if (signal.size() == 0) throw EmptyInputError("fft_1d: empty signal");
  ComplexGrid out = signal;
  transform_axis(out.re, out.im, out.shape, 0, inverse);
  return out;
}

ComplexGrid fft_2d(const ComplexGrid& grid, bool inverse, std::size_t first_axis) {
  check_transform_axes(grid.shape, first_axis, "fft_2d");
  ComplexGrid out = grid;
  transform_axis(out.re, out.im, out.shape, first_axis + 1, inverse);
  transform_axis(out.re, out.im, out.shape, first_axis, inverse);
  return out;
}

ComplexGrid fft_2d(const RealGrid& grid, bool inverse, std::size_t first_axis) {
  return fft_2d(ComplexGrid(grid), inverse, first_axis);
}

RealGrid ifft_2d_real(const ComplexGrid& spectrum, std::size_t first_axis) {
  check_transform_axes(spectrum.shape, first_axis, "ifft_2d_real");
  ComplexGrid full = fft_2d(spectrum, true, first_axis);
  return RealGrid(std::move(full.shape), std::move(full.re));
}

namespace {

struct MulDims {
  std::size_t batch, pixels, c_in, c_out;
};

MulDims check_mul_shapes(const Shape& features, const Shape& kernel, const char* op) {
  if (kernel.size() != 4) {
    throw ShapeError(std::string(op) + ": kernel must be [H,W,C_in,C_out], got " +
                     shape_string(kernel));
  }
  if (features.size() != 3 && features.size() != 4) {
    throw ShapeError(std::string(op) + ": features must be [H,W,C_in] or [B,H,W,C_in], got " +
                     shape_string(features));
  }
  const std::size_t off = features.size() - 3;
  static const char* names[] = {"H", "W", "C_in"};
  for (std::size_t a = 0; a < 3; ++a) {
    if (features[off + a] != kernel[a]) {
      throw ShapeError(std::string(op) + ": axis " + names[a] + " mismatch (features " +
                       std::to_string(features[off + a]) + ", kernel " +
                       std::to_string(kernel[a]) + ")");
    }
  }
  return {off ? features[0] : 1, kernel[0] * kernel[1], kernel[2], kernel[3]};
}

Shape output_shape(const Shape& features, std::size_t c_out) {
  Shape s = features;
  s.back() = c_out;
  return s;
}

}  // namespace

ComplexGrid complex_mul_accumulate(const ComplexGrid& features, const ComplexGrid& kernel) {
  const auto d = check_mul_shapes(features.shape, kernel.shape, "complex_mul_accumulate");
  ComplexGrid out(output_shape(features.shape, d.c_out));
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t p = 0; p < d.pixels; ++p) {
      const std::size_t f_base = (b * d.pixels + p) * d.c_in;
      double* gr = out.re.data() + (b * d.pixels + p) * d.c_out;
      double* gi = out.im.data() + (b * d.pixels + p) * d.c_out;
      for (std::size_t i = 0; i < d.c_in; ++i) {
        const double fr = features.re[f_base + i];
        const double fi = features.im[f_base + i];
        const double* kr = kernel.re.data() + (p * d.c_in + i) * d.c_out;
        const double* ki = kernel.im.data() + (p * d.c_in + i) * d.c_out;
        for (std::size_t o = 0; o < d.c_out; ++o) {
          gr[o] += fr * kr[o] - fi * ki[o];
          gi[o] += fr * ki[o] + fi * kr[o];
        }
      }
    }
  }
  return out;
}

ComplexGrid complex_mul_accumulate_grad_features(const ComplexGrid& upstream,
                                                 const ComplexGrid& kernel) {
  Shape feature_shape = upstream.shape;
  if (kernel.rank() == 4 && !feature_shape.empty()) feature_shape.back() = kernel.shape[2];
  const auto d = check_mul_shapes(feature_shape, kernel.shape, "complex_mul_accumulate");
  if (upstream.shape.back() != d.c_out) {
    throw ShapeError("complex_mul_accumulate: axis C_out mismatch in upstream gradient");
  }
  ComplexGrid grad(feature_shape);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t p = 0; p < d.pixels; ++p) {
      const double* gr = upstream.re.data() + (b * d.pixels + p) * d.c_out;
      const double* gi = upstream.im.data() + (b * d.pixels + p) * d.c_out;
      const std::size_t f_base = (b * d.pixels + p) * d.c_in;
      for (std::size_t i = 0; i < d.c_in; ++i) {
        const double* kr = kernel.re.data() + (p * d.c_in + i) * d.c_out;
        const double* ki = kernel.im.data() + (p * d.c_in + i) * d.c_out;
        double sr = 0.0, si = 0.0;
        // conj(K) * g
        for (std::size_t o = 0; o < d.c_out; ++o) {
          sr += kr[o] * gr[o] + ki[o] * gi[o];
          si += kr[o] * gi[o] - ki[o] * gr[o];
        }
        grad.re[f_base + i] = sr;
        grad.im[f_base + i] = si;
      }
    }
  }
  return grad;
}

ComplexGrid complex_mul_accumulate_grad_kernel(const ComplexGrid& upstream,
                                               const ComplexGrid& features) {
  if (features.rank() != 3 && features.rank() != 4) {
    throw ShapeError("complex_mul_accumulate: features must be rank 3 or 4");
  }
  const std::size_t off = features.rank() - 3;
  Shape kernel_shape{features.shape[off], features.shape[off + 1], features.shape[off + 2],
                     upstream.shape.back()};
  const auto d = check_mul_shapes(features.shape, kernel_shape, "complex_mul_accumulate");
  if (output_shape(features.shape, d.c_out) != upstream.shape) {
    throw ShapeError("complex_mul_accumulate: upstream gradient shape " +
                     shape_string(upstream.shape) + " does not match output");
  }
  ComplexGrid grad(kernel_shape);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t p = 0; p < d.pixels; ++p) {
      const double* gr = upstream.re.data() + (b * d.pixels + p) * d.c_out;
      const double* gi = upstream.im.data() + (b * d.pixels + p) * d.c_out;
      const std::size_t f_base = (b * d.pixels + p) * d.c_in;
      for (std::size_t i = 0; i < d.c_in; ++i) {
        const double a = features.re[f_base + i];
        const double c = features.im[f_base + i];
        double* kr = grad.re.data() + (p * d.c_in + i) * d.c_out;
        double* ki = grad.im.data() + (p * d.c_in + i) * d.c_out;
        // conj(F) * g
        for (std::size_t o = 0; o < d.c_out; ++o) {
          kr[o] += a * gr[o] + c * gi[o];
          ki[o] += a * gi[o] - c * gr[o];
        }
      }
    }
  }
  return grad;
}

RealGrid conv3x3_same(const RealGrid& input, const RealGrid& weights) {
  if (input.rank() != 3 && input.rank() != 4) {
    throw ShapeError("conv3x3: input must be [H,W,C] or [B,H,W,C], got " +
                     shape_string(input.shape));
  }
  const std::size_t off = input.rank() - 3;
  const std::size_t batch = off ? input.shape[0] : 1;
  const std::size_t height = input.shape[off];
  const std::size_t width = input.shape[off + 1];
  const std::size_t channels = input.shape[off + 2];
  if (weights.rank() != 4 || weights.shape[0] != 3 || weights.shape[1] != 3) {
    throw ShapeError("conv3x3: weights must be [3,3,C_in,C_out], got " +
                     shape_string(weights.shape));
  }
  if (weights.shape[2] != channels) {
    throw ShapeError("conv3x3: axis C_in mismatch (input " + std::to_string(channels) +
                     ", weights " + std::to_string(weights.shape[2]) + ")");
  }
  const std::size_t c_out = weights.shape[3];
  Shape out_shape = input.shape;
  out_shape.back() = c_out;
  RealGrid y(out_shape);
  const auto h_max = static_cast<long>(height);
  const auto w_max = static_cast<long>(width);
  for (std::size_t b = 0; b < batch; ++b) {
    for (long h = 0; h < h_max; ++h) {
      for (long c = 0; c < w_max; ++c) {
        double* out = y.data.data() + ((b * height + h) * width + c) * c_out;
        for (long dy = 0; dy < 3; ++dy) {
          const long hh = h + dy - 1;
          if (hh < 0 || hh >= h_max) continue;
          for (long dx = 0; dx < 3; ++dx) {
            const long cc = c + dx - 1;
            if (cc < 0 || cc >= w_max) continue;
            const double* in = input.data.data() + ((b * height + hh) * width + cc) * channels;
            const double* kw = weights.data.data() + ((dy * 3 + dx) * channels) * c_out;
            for (std::size_t i = 0; i < channels; ++i) {
              const double v = in[i];
              for (std::size_t o = 0; o < c_out; ++o) out[o] += v * kw[i * c_out + o];
            }
          }
        }
      }
    }
  }
  return y;
}

}  // namespace cfconv::numerics
