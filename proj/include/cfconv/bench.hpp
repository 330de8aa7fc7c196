#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace cfconv::profile {

struct BenchOptions {
  std::size_t size = 64;      // H = W
  std::size_t channels = 8;   // C_in = C_out
  std::size_t batch = 4;
  std::size_t repetitions = 5;
  std::size_t support_positions = std::size_t{1} << 15;
  std::vector<std::size_t> sweep = {std::size_t{1} << 12, std::size_t{1} << 15, std::size_t{1} << 18};
  std::uint64_t seed = 0;
};

struct SweepPoint {
  std::size_t positions = 0;
  double seconds = 0.0;
};

struct BenchReport {
  BenchOptions options;
  double point_support_seconds = 0.0;  // kernel equivalent to a 1x1 spatial filter
  double full_support_seconds = 0.0;   // kernel with full H x W spatial support
  double baseline_seconds = 0.0;       // spatial 3x3 layer
  std::vector<SweepPoint> sweep;

  double support_ratio() const { return full_support_seconds / point_support_seconds; }
};

/// Median train-step wall time of a one-layer model for each case.
BenchReport run_bench(const BenchOptions& options);
void print_bench(std::ostream& os, const BenchReport& report);
void write_bench_csv(const std::string& path, const BenchReport& report);

}  // namespace cfconv::profile
