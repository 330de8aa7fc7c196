#include "cfconv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "cfconv/error.hpp"

namespace cfconv::train {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'D', 'S'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 2 + 2 + 1;

template <typename T>
void put_le(std::vector<char>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& data) {
  if (data.pixels.size() != data.size() * data.image_size()) {
    throw DataError("write_dataset: pixel buffer does not match record count");
  }
  std::vector<char> header;
  header.insert(header.end(), kMagic, kMagic + 4);
  put_le<std::uint32_t>(header, kDatasetVersion);
  put_le<std::uint32_t>(header, static_cast<std::uint32_t>(data.size()));
  put_le<std::uint16_t>(header, data.height);
  put_le<std::uint16_t>(header, data.width);
  put_le<std::uint8_t>(header, data.channels);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.put(static_cast<char>(data.labels[i]));
    const auto img = data.image(i);
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes) throw DataError("malformed header in '" + path + "': file too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("malformed header in '" + path + "': bad magic");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kDatasetVersion) {
    throw DataError("malformed header in '" + path + "': unsupported version " +
                    std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(bytes.data() + 8);
  Dataset data;
  data.height = get_le<std::uint16_t>(bytes.data() + 12);
  data.width = get_le<std::uint16_t>(bytes.data() + 14);
  data.channels = bytes[16];
  const std::size_t record = 1 + data.image_size();
  data.labels.resize(count);
  data.pixels.resize(std::size_t{count} * data.image_size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t offset = kHeaderBytes + i * record;
    if (offset + record > bytes.size()) {
      throw DataError("truncated record " + std::to_string(i) + " in '" + path + "'");
    }
    const auto label = bytes[offset];
    if (label > 1) {
      throw DataError("record " + std::to_string(i) + " in '" + path + "' has label " +
                      std::to_string(label) + " outside {0,1}");
    }
    data.labels[i] = label;
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(offset + 1), data.image_size(),
                data.pixels.begin() + static_cast<std::ptrdiff_t>(i * data.image_size()));
  }
  return data;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  Batch batch{RealGrid({indices.size(), data.height, data.width, data.channels}), {}};
  const std::size_t stride = data.image_size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto img = data.image(indices[b]);
    for (std::size_t k = 0; k < stride; ++k) batch.images.data[b * stride + k] = img[k] / 255.0;
    batch.labels.push_back(static_cast<double>(data.labels[indices[b]]));
  }
  return batch;
}

BatchStream::BatchStream(const Dataset& data, BatchOptions options, std::uint64_t seed)
    : data_(&data), options_(options), rng_(seed), order_(data.size()) {
  if (options_.batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (options_.shuffle) std::shuffle(order_.begin(), order_.end(), rng_);
}

std::size_t BatchStream::batch_count() const {
  return (order_.size() + options_.batch_size - 1) / options_.batch_size;
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(options_.batch_size, order_.size() - cursor_);
  Batch batch = make_batch(*data_, std::span(order_).subspan(cursor_, n));
  cursor_ += n;
  if (options_.augment) {
    const std::size_t h = data_->height, w = data_->width, c = data_->channels;
    const auto shift = static_cast<long>(options_.shift_pixels);
    std::uniform_int_distribution<long> offset(-shift, shift);
    std::bernoulli_distribution flip(0.5);
    std::vector<double> tmp(h * w * c);
    for (std::size_t b = 0; b < n; ++b) {
      const bool do_flip = flip(rng_);
      const long dy = offset(rng_);
      const long dx = offset(rng_);
      double* img = batch.images.data.data() + b * h * w * c;
      std::fill(tmp.begin(), tmp.end(), 0.0);
      for (std::size_t y = 0; y < h; ++y) {
        const long sy = static_cast<long>(y) - dy;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (std::size_t x = 0; x < w; ++x) {
          long sx = static_cast<long>(x) - dx;
          if (sx < 0 || sx >= static_cast<long>(w)) continue;
          if (do_flip) sx = static_cast<long>(w) - 1 - sx;
          std::copy_n(img + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c, c,
                      tmp.begin() + static_cast<std::ptrdiff_t>((y * w + x) * c));
        }
      }
      std::copy(tmp.begin(), tmp.end(), img);
    }
  }
  return batch;
}

std::vector<Batch> load_dataset(const std::string& path, const BatchOptions& options,
                                std::uint64_t seed) {
  const Dataset data = read_dataset(path);
  BatchStream stream(data, options, seed);
  std::vector<Batch> batches;
  while (auto b = stream.next()) batches.push_back(std::move(*b));
  return batches;
}

namespace {

std::uint8_t to_pixel(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Dataset make_synthetic_dataset(std::size_t n, std::size_t size, std::uint64_t seed,
                               std::size_t channels) {
  if (n < 2 || n % 2 != 0) throw ConfigError("synthetic dataset needs an even count >= 2");
  if (size < 4 || size > 65535) throw ConfigError("synthetic image size must lie in [4, 65535]");
  Dataset data;
  data.height = static_cast<std::uint16_t>(size);
  data.width = static_cast<std::uint16_t>(size);
  data.channels = static_cast<std::uint8_t>(channels);
  data.labels.resize(n);
  data.pixels.resize(n * data.image_size());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const numerics::Shape plane{size, size};
  std::vector<double> field(size * size);

  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = static_cast<std::uint8_t>(i % 2);
    data.labels[i] = label;
    // Grating parameters are shared by the channels of one image.
    const double angle = two_pi * unit(rng);
    const double period = 2.5 + 1.5 * unit(rng);  // pixels
    const double fx = std::cos(angle) / period;
    const double fy = std::sin(angle) / period;
    for (std::size_t c = 0; c < channels; ++c) {
      if (label == 0) {
        // White noise low-passed with a Gaussian transfer function.
        numerics::ComplexGrid g(plane);
        for (auto& v : g.re) v = gauss(rng);
        g = numerics::fft_2d(g, false);
        const double cutoff = 0.08;  // cycles per pixel
        for (std::size_t y = 0; y < size; ++y) {
          const double ky = static_cast<double>(y <= size / 2 ? y : size - y) / size;
          for (std::size_t x = 0; x < size; ++x) {
            const double kx = static_cast<double>(x <= size / 2 ? x : size - x) / size;
            const double gain = std::exp(-(kx * kx + ky * ky) / (2 * cutoff * cutoff));
            g.re[y * size + x] *= gain;
            g.im[y * size + x] *= gain;
          }
        }
        const auto smooth = numerics::ifft_2d_real(g);
        double sq = 0.0;
        for (double v : smooth.data) sq += v * v;
        const double rms = std::sqrt(sq / smooth.size()) + 1e-12;
        for (std::size_t k = 0; k < field.size(); ++k) field[k] = 128.0 + 50.0 * smooth.data[k] / rms;
      } else {
        const double phase = two_pi * unit(rng);
        for (std::size_t y = 0; y < size; ++y) {
          for (std::size_t x = 0; x < size; ++x) {
            field[y * size + x] = 128.0 + 60.0 * std::sin(two_pi * (fx * x + fy * y) + phase) +
                                  10.0 * gauss(rng);
          }
        }
      }
      for (std::size_t k = 0; k < field.size(); ++k) {
        data.pixels[i * data.image_size() + k * channels + c] = to_pixel(field[k]);
      }
    }
  }
  return data;
}

double band_energy(const Dataset& data, std::size_t index, double lo, double hi) {
  const std::size_t h = data.height, w = data.width, c = data.channels;
  const auto img = data.image(index);
  double total = 0.0;
  std::size_t bins = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    numerics::ComplexGrid g({h, w});
    for (std::size_t k = 0; k < h * w; ++k) g.re[k] = img[k * c + ch] / 255.0;
    g = numerics::fft_2d(g, false);
    for (std::size_t y = 0; y < h; ++y) {
      const double ky = static_cast<double>(y <= h / 2 ? y : h - y) / (h / 2.0);
      for (std::size_t x = 0; x < w; ++x) {
        const double kx = static_cast<double>(x <= w / 2 ? x : w - x) / (w / 2.0);
        const double r = std::sqrt(kx * kx + ky * ky) / std::sqrt(2.0);
        if (r >= lo && r < hi) {
          total += g.re[y * w + x] * g.re[y * w + x] + g.im[y * w + x] * g.im[y * w + x];
          ++bins;
        }
      }
    }
  }
  return bins ? total / static_cast<double>(bins) : 0.0;
}

}  // namespace cfconv::train
