#pragma once

// Packed image dataset ("CFDS"): magic, u32 version = 1, u32 count, u16 H,
// u16 W, u8 channels, then per record a u8 label followed by H*W*C 8-bit
// pixels (row-major, channel-interleaved). Integers are little-endian.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cfconv/numerics.hpp"

namespace cfconv::train {

using numerics::RealGrid;

inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t channels = 0;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // count * H * W * C

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return std::size_t{height} * width * channels; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span(pixels).subspan(i * image_size(), image_size());
  }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

void write_dataset(const std::string& path, const Dataset& data);
/// Throws DataError on a malformed header, a truncated record or a label
/// outside {0, 1}; record errors name the record index.
Dataset read_dataset(const std::string& path);

/// Images scaled to [0, 1], shape [B, H, W, C].
struct Batch {
  RealGrid images;
  std::vector<double> labels;

  std::size_t size() const { return labels.size(); }
};

struct BatchOptions {
  std::size_t batch_size = 32;
  bool shuffle = true;
  /// Horizontal flip with probability 0.5 and a uniform shift of up to
  /// shift_pixels in each direction (zero fill). Training split only.
  bool augment = false;
  std::size_t shift_pixels = 8;
};

/// Walks a dataset in (optionally shuffled) batches; the last batch may be short.
class BatchStream {
 public:
  BatchStream(const Dataset& data, BatchOptions options, std::uint64_t seed);

  std::size_t batch_count() const;
  std::optional<Batch> next();

 private:
  const Dataset* data_;
  BatchOptions options_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Reads `path` and materializes every batch.
std::vector<Batch> load_dataset(const std::string& path, const BatchOptions& options,
                                std::uint64_t seed);

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Desk-scale two-class texture task. Class 0 holds smoothed noise (energy at
/// low frequencies), class 1 holds high-frequency oriented gratings plus noise.
/// Labels alternate so the split is exactly n / 2 per class.
Dataset make_synthetic_dataset(std::size_t n, std::size_t size, std::uint64_t seed,
                               std::size_t channels = 3);

/// Mean spectral energy per image in the radial band [lo, hi) of normalized
/// frequency (0 at DC, 1 at the Nyquist corner), averaged over channels.
double band_energy(const Dataset& data, std::size_t index, double lo, double hi);

}  // namespace cfconv::train
