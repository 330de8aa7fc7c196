#pragma once

// Shared helpers and independent oracles for the test suites.

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "cfconv/numerics.hpp"

namespace testutil {

using cfconv::numerics::ComplexGrid;
using cfconv::numerics::RealGrid;
using cfconv::numerics::Shape;
using cd = std::complex<double>;

inline RealGrid random_real(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  RealGrid g(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : g.data) v = u(rng);
  return g;
}

inline ComplexGrid random_complex(const Shape& shape, std::mt19937_64& rng) {
  ComplexGrid g(shape);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.re[i] = u(rng);
    g.im[i] = u(rng);
  }
  return g;
}

// O(N^2) DFT with the same conventions as the library: forward unnormalized,
// inverse scaled by 1/N.
inline std::vector<cd> naive_dft(const std::vector<cd>& x, bool inverse) {
  const std::size_t n = x.size();
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cd> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cd acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = sign * 2.0 * M_PI * static_cast<double>(k * t % n) / static_cast<double>(n);
      acc += x[t] * cd(std::cos(angle), std::sin(angle));
    }
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  return out;
}

// Quadruple-loop 2-D DFT of an H x W grid.
inline std::vector<cd> naive_dft2(const std::vector<cd>& x, std::size_t h, std::size_t w, bool inverse) {
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cd> out(h * w);
  for (std::size_t ky = 0; ky < h; ++ky) {
    for (std::size_t kx = 0; kx < w; ++kx) {
      cd acc = 0;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double angle = sign * 2.0 * M_PI *
                               (static_cast<double>(ky * y % h) / static_cast<double>(h) +
                                static_cast<double>(kx * xx % w) / static_cast<double>(w));
          acc += x[y * w + xx] * cd(std::cos(angle), std::sin(angle));
        }
      }
      out[ky * w + kx] = inverse ? acc / static_cast<double>(h * w) : acc;
    }
  }
  return out;
}

inline std::vector<cd> to_complex(const ComplexGrid& g) {
  std::vector<cd> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g.at(i);
  return out;
}

// Circular (wrapped) convolution of two H x W real grids.
inline std::vector<double> circular_convolution(const RealGrid& x, const RealGrid& k) {
  const std::size_t h = x.shape[0], w = x.shape[1];
  std::vector<double> out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t a = 0; a < h; ++a)
        for (std::size_t b = 0; b < w; ++b)
          out[y * w + xx] += x.data[a * w + b] * k.data[((y + h - a) % h) * w + (xx + w - b) % w];
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
