#pragma once

// Dense real/complex grids and FFTs of arbitrary length.
//
// Conventions:
//   * grids are row-major; the last axis is contiguous
//   * forward transforms are unnormalized, inverse transforms carry 1/N per axis
//   * power-of-two lengths use iterative radix-2 Cooley-Tukey, every other
//     length goes through Bluestein's chirp-z transform on a padded radix-2 FFT

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cfconv::numerics {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

struct RealGrid {
  Shape shape;
  std::vector<double> data;

  RealGrid() = default;
  explicit RealGrid(Shape extents, double fill = 0.0);
  RealGrid(Shape extents, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const;
  friend bool operator==(const RealGrid&, const RealGrid&) = default;
};

struct ComplexGrid {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  ComplexGrid() = default;
  explicit ComplexGrid(Shape extents);
  ComplexGrid(Shape extents, std::vector<double> real, std::vector<double> imag);
  /// Real grid promoted to complex with a zero imaginary plane.
  explicit ComplexGrid(const RealGrid& real);

  std::size_t size() const { return re.size(); }
  std::size_t rank() const { return shape.size(); }
  std::complex<double> at(std::size_t i) const { return {re[i], im[i]}; }
  void set(std::size_t i, std::complex<double> v) {
    re[i] = v.real();
    im[i] = v.imag();
  }

  RealGrid real_part() const;
  RealGrid imag_part() const;
  bool all_finite() const;
  friend bool operator==(const ComplexGrid&, const ComplexGrid&) = default;
};

/// In-place transform of one axis of a split-complex buffer laid out
/// row-major with `shape`. Every other axis is treated as a batch.
void transform_axis(std::span<double> re, std::span<double> im, const Shape& shape,
                    std::size_t axis, bool inverse);

ComplexGrid fft_1d(const ComplexGrid& signal, bool inverse);

/// Transforms axes `first_axis` and `first_axis + 1`; leading axes are batch
/// axes and trailing axes are channel axes.
ComplexGrid fft_2d(const ComplexGrid& grid, bool inverse, std::size_t first_axis = 0);
ComplexGrid fft_2d(const RealGrid& grid, bool inverse, std::size_t first_axis = 0);

/// Real part of the inverse 2D transform. The imaginary residue is dropped.
RealGrid ifft_2d_real(const ComplexGrid& spectrum, std::size_t first_axis = 0);

/// G[.., h, w, o] = sum_i F[.., h, w, i] * K[h, w, i, o].
/// `features` is [H, W, C_in] or [B, H, W, C_in]; `kernel` is [H, W, C_in, C_out].
ComplexGrid complex_mul_accumulate(const ComplexGrid& features, const ComplexGrid& kernel);

/// Adjoints of complex_mul_accumulate with respect to each operand, given the
/// upstream gradient in split (re, im) coordinates.
ComplexGrid complex_mul_accumulate_grad_features(const ComplexGrid& upstream,
                                                 const ComplexGrid& kernel);
ComplexGrid complex_mul_accumulate_grad_kernel(const ComplexGrid& upstream,
                                               const ComplexGrid& features);

/// Zero-padded "same" 3x3 cross-correlation, stride 1.
/// `input` is [H, W, C_in] or [B, H, W, C_in]; `weights` is [3, 3, C_in, C_out].
RealGrid conv3x3_same(const RealGrid& input, const RealGrid& weights);

bool is_power_of_two(std::size_t n);

}  // namespace cfconv::numerics
