#include "cfconv/spectral_bias.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include "cfconv/error.hpp"
#include "cfconv/kernelgen.hpp"
#include "cfconv/optimizer.hpp"

namespace cfconv::profile {

using numerics::ComplexGrid;
using numerics::RealGrid;

namespace {

double signed_frequency(std::size_t k, std::size_t n) {
  return k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

double radius(std::size_t ky, std::size_t kx, std::size_t n) {
  return std::hypot(signed_frequency(ky, n), signed_frequency(kx, n));
}

// Plain ReLU MLP trained full-batch on squared error.
class Regressor {
 public:
  Regressor(std::size_t input_dim, const std::vector<std::size_t>& widths, std::mt19937_64& rng) {
    std::size_t fan_in = input_dim;
    for (auto w : widths) {
      RealGrid weight({w, fan_in});
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (auto& v : weight.data) v = u(rng);
      params_.push_back(std::move(weight));
      params_.emplace_back(numerics::Shape{w});
      fan_in = w;
    }
    std::vector<RealGrid*> ptrs = pointers();
    moments_ = train::make_moments(ptrs);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  // x: [N, d] row-major. Returns one output per row.
  std::vector<double> predict(const std::vector<double>& x, std::size_t n) const {
    std::vector<std::vector<double>> acts;
    return forward(x, n, acts);
  }

  // One Adam step on mean squared error; returns the loss before the step.
  double step(const std::vector<double>& x, const std::vector<double>& y, std::size_t n,
              const train::AdamHyper& hyper) {
    std::vector<std::vector<double>> acts;
    const auto out = forward(x, n, acts);
    double loss = 0.0;
    std::vector<double> delta(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = out[i] - y[i];
      loss += r * r;
      delta[i] = 2.0 * r / static_cast<double>(n);
    }
    loss /= static_cast<double>(n);

    std::vector<RealGrid> grads;
    for (const auto& p : params_) grads.emplace_back(p.shape);
    const std::size_t layers = params_.size() / 2;
    for (std::size_t l = layers; l-- > 0;) {
      const auto& w = params_[2 * l];
      const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
      const auto& in = acts[l];
      auto& gw = grads[2 * l].data;
      auto& gb = grads[2 * l + 1].data;
      std::vector<double> prev(l > 0 ? n * in_dim : 0, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double d = delta[i * out_dim + o];
          if (d == 0.0) continue;
          gb[o] += d;
          const double* xi = &in[i * in_dim];
          double* gwo = &gw[o * in_dim];
          for (std::size_t k = 0; k < in_dim; ++k) gwo[k] += d * xi[k];
          if (l > 0) {
            const double* wo = &w.data[o * in_dim];
            double* pi = &prev[i * in_dim];
            for (std::size_t k = 0; k < in_dim; ++k) pi[k] += d * wo[k];
          }
        }
      }
      if (l > 0) {
        for (std::size_t j = 0; j < prev.size(); ++j) {
          if (in[j] <= 0.0) prev[j] = 0.0;  // in = relu output of layer l - 1
        }
        delta = std::move(prev);
      }
    }
    std::vector<const RealGrid*> gptrs;
    for (const auto& g : grads) gptrs.push_back(&g);
    train::adam_update(pointers(), gptrs, moments_, hyper);
    return loss;
  }

 private:
  std::vector<RealGrid*> pointers() {
    std::vector<RealGrid*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  // acts[l] holds the input to layer l.
  std::vector<double> forward(const std::vector<double>& x, std::size_t n,
                              std::vector<std::vector<double>>& acts) const {
    acts.assign(1, x);
    const std::size_t layers = params_.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& w = params_[2 * l];
      const auto& b = params_[2 * l + 1];
      const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
      const auto& in = acts.back();
      std::vector<double> out(n * out_dim);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out_dim; ++o) {
          double acc = b.data[o];
          const double* wo = &w.data[o * in_dim];
          const double* xi = &in[i * in_dim];
          for (std::size_t k = 0; k < in_dim; ++k) acc += wo[k] * xi[k];
          out[i * out_dim + o] = (l + 1 < layers && acc < 0.0) ? 0.0 : acc;
        }
      }
      if (l + 1 == layers) return out;
      acts.push_back(std::move(out));
    }
    return {};
  }

  std::vector<RealGrid> params_;
  train::AdamMoments moments_;
};

struct PlaneFit {
  std::vector<double> re, im;
  double loss = 0.0;
  std::size_t parameters = 0;
};

PlaneFit fit_pair(const std::vector<double>& coords, const std::vector<double>& target_re,
                  const std::vector<double>& target_im, const SpectralBiasOptions& o) {
  const std::size_t n = target_re.size();
  std::mt19937_64 rng(o.seed);
  Regressor real(2, o.widths, rng);
  Regressor imag(2, o.widths, rng);
  const train::AdamHyper hyper{o.learning_rate, 0.9, 0.999, 1e-8};
  PlaneFit fit;
  for (std::size_t s = 0; s < o.steps; ++s) {
    real.step(coords, target_re, n, hyper);
    imag.step(coords, target_im, n, hyper);
  }
  fit.re = real.predict(coords, n);
  fit.im = imag.predict(coords, n);
  for (std::size_t i = 0; i < n; ++i) {
    fit.loss += (fit.re[i] - target_re[i]) * (fit.re[i] - target_re[i]) +
                (fit.im[i] - target_im[i]) * (fit.im[i] - target_im[i]);
  }
  fit.loss /= static_cast<double>(2 * n);
  fit.parameters = real.parameter_count() + imag.parameter_count();
  return fit;
}

std::array<double, 3> band_errors(const ComplexGrid& estimate, const ComplexGrid& target,
                                  std::size_t grid) {
  std::array<double, 3> sum{}, count{};
  for (std::size_t y = 0; y < grid; ++y) {
    for (std::size_t x = 0; x < grid; ++x) {
      const std::size_t i = y * grid + x;
      const double dr = estimate.re[i] - target.re[i];
      const double di = estimate.im[i] - target.im[i];
      const auto b = band_of(y, x, grid);
      sum[b] += dr * dr + di * di;
      count[b] += 1.0;
    }
  }
  // Unitary scaling (1/sqrt(N) per coefficient): summed over bins, the error
  // equals the spatial-domain squared error.
  const double unitary = 1.0 / static_cast<double>(grid * grid);
  for (std::size_t b = 0; b < 3; ++b) sum[b] = count[b] > 0 ? unitary * sum[b] / count[b] : 0.0;
  return sum;
}

}  // namespace

std::string_view to_string(Target t) {
  switch (t) {
    case Target::kHighPass: return "high-pass";
    case Target::kAllPass: return "all-pass";
    case Target::kZero: return "zero";
  }
  return "high-pass";
}

Target parse_target(std::string_view name) {
  for (auto t : {Target::kHighPass, Target::kAllPass, Target::kZero}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown spectral-bias target '" + std::string(name) +
                    "' (expected high-pass, all-pass or zero)");
}

std::size_t band_of(std::size_t ky, std::size_t kx, std::size_t grid) {
  const double r_max = radius(grid / 2, grid / 2, grid);
  const double rho = r_max > 0 ? radius(ky, kx, grid) / r_max : 0.0;
  if (rho < 1.0 / 3.0) return 0;
  if (rho < 2.0 / 3.0) return 1;
  return 2;
}

ComplexGrid target_spectrum(const SpectralBiasOptions& o) {
  const std::size_t n = o.grid;
  ComplexGrid t(numerics::Shape{n, n});
  const double nyquist = static_cast<double>(n) / 2.0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double v = 0.0;
      switch (o.target) {
        case Target::kHighPass: v = radius(y, x, n) > o.cutoff * nyquist ? 1.0 : 0.0; break;
        case Target::kAllPass: v = 1.0; break;
        case Target::kZero: v = 0.0; break;
      }
      t.re[y * n + x] = v;
    }
  }
  return t;
}

SpectralBiasResult run_spectral_bias(const SpectralBiasOptions& o) {
  if (o.grid < 2) throw ConfigError("spectral-bias grid must be at least 2");
  if (o.widths.empty() || o.widths.back() != 1) throw ConfigError("spectral-bias widths must end in 1");
  const std::size_t n = o.grid;
  const std::size_t points = n * n;
  const auto spectrum = target_spectrum(o);
  const auto spatial = numerics::fft_2d(spectrum, true);

  std::vector<double> spatial_coords(2 * points), fourier_coords(2 * points);
  const double half = static_cast<double>(n) / 2.0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t i = y * n + x;
      spatial_coords[2 * i] = kernelgen::normalize_axis(y, n);
      spatial_coords[2 * i + 1] = kernelgen::normalize_axis(x, n);
      fourier_coords[2 * i] = signed_frequency(y, n) / half;
      fourier_coords[2 * i + 1] = signed_frequency(x, n) / half;
    }
  }

  SpectralBiasResult result;
  const std::string target_name(to_string(o.target));

  const auto a = fit_pair(spatial_coords, spatial.re, spatial.im, o);
  ComplexGrid a_spatial(numerics::Shape{n, n});
  a_spatial.re = a.re;
  a_spatial.im = a.im;
  const auto a_spectrum = numerics::fft_2d(a_spatial, false);
  result.spatial = {target_name, "spatial-fit", band_errors(a_spectrum, spectrum, n), o.steps,
                    a.parameters, a.loss};

  const auto b = fit_pair(fourier_coords, spectrum.re, spectrum.im, o);
  ComplexGrid b_spectrum(numerics::Shape{n, n});
  b_spectrum.re = b.re;
  b_spectrum.im = b.im;
  result.fourier = {target_name, "fourier-fit", band_errors(b_spectrum, spectrum, n), o.steps,
                    b.parameters, b.loss};
  return result;
}

void print_spectral_bias(std::ostream& os, const SpectralBiasOptions& o, const SpectralBiasResult& r) {
  os << "# spectral-bias protocol (constructed for this project, not a published procedure):\n"
     << "#   target " << to_string(o.target) << " on a " << o.grid << "x" << o.grid
     << " grid, cutoff " << o.cutoff << " x Nyquist\n"
     << "#   split ReLU MLP pair, widths";
  for (auto w : o.widths) os << " " << w;
  os << ", " << o.steps << " full-batch Adam steps, lr " << o.learning_rate << ", seed " << o.seed
     << "\n#   errors are per-band mean |estimate - target|^2 over unitary Fourier bins (bands: "
        "thirds of radius / max radius)\n";
  os << std::left << std::setw(13) << "domain" << std::right;
  for (auto name : kBandNames) os << std::setw(14) << name;
  os << std::setw(10) << "params" << "\n";
  for (const auto* rep : {&r.spatial, &r.fourier}) {
    os << std::left << std::setw(13) << rep->domain << std::right << std::scientific << std::setprecision(4);
    for (double e : rep->band_mse) os << std::setw(14) << e;
    os << std::defaultfloat << std::setw(10) << rep->parameters << "\n";
  }
}

void write_spectral_bias_csv(const std::string& path, const SpectralBiasResult& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "target,domain,band,mse,steps,parameters\n" << std::setprecision(17);
  for (const auto* rep : {&r.spatial, &r.fourier}) {
    for (std::size_t b = 0; b < 3; ++b) {
      out << rep->target << "," << rep->domain << "," << kBandNames[b] << "," << rep->band_mse[b]
          << "," << rep->steps << "," << rep->parameters << "\n";
    }
  }
}

}  // namespace cfconv::profile
