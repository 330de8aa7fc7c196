#include "cfconv/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>

#include "cfconv/error.hpp"
#include "cfconv/model.hpp"

namespace cfconv::profile {

namespace {

using train::Model;
using train::ModelConfig;

ModelConfig bench_config(const BenchOptions& o, bool baseline, std::size_t positions) {
  ModelConfig c;
  c.layer_count = 1;
  c.filters_per_layer = o.channels;
  c.input_height = o.size;
  c.input_width = o.size;
  c.input_channels = o.channels;
  c.baseline = baseline;
  c.selected_positions = positions;
  c.batch_size = o.batch;
  c.seed = o.seed;
  return c;
}

train::Batch random_batch(const BenchOptions& o) {
  std::mt19937_64 rng(o.seed + 17);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  train::Batch b{numerics::RealGrid({o.batch, o.size, o.size, o.channels}), std::vector<double>(o.batch)};
  for (auto& v : b.images.data) v = pixel(rng);
  for (std::size_t i = 0; i < o.batch; ++i) b.labels[i] = static_cast<double>(i % 2);
  return b;
}

// Spectrum constant over (h, w) for every channel pair: a 1x1 spatial filter.
void set_point_support(conv::SplitKernelState& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t pairs = s.dims.c_in * s.dims.c_out;
  std::vector<double> re(pairs);
  for (auto& v : re) v = u(rng);
  for (std::size_t i = 0; i < s.re.size(); ++i) {
    s.re[i] = re[i % pairs];
    s.im[i] = 0.0;
  }
}

double seconds_of(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchReport run_bench(const BenchOptions& o) {
  if (o.repetitions == 0 || o.size < 3 || o.channels == 0 || o.batch == 0) {
    throw ConfigError("bench needs repetitions >= 1, size >= 3, channels >= 1, batch >= 1");
  }
  BenchReport report;
  report.options = o;
  const auto batch = random_batch(o);

  // Support invariance: alternate the two kernels so drift affects both alike.
  {
    Model point(bench_config(o, false, o.support_positions));
    Model full(bench_config(o, false, o.support_positions));
    std::mt19937_64 rng(o.seed + 1);
    set_point_support(point.cf_layers[0].state, rng);
    train::train_step(point, batch);  // warm-up: FFT plans, allocations
    train::train_step(full, batch);
    std::vector<double> tp, tf;
    for (std::size_t r = 0; r < o.repetitions; ++r) {
      tp.push_back(seconds_of([&] { train::train_step(point, batch); }));
      tf.push_back(seconds_of([&] { train::train_step(full, batch); }));
    }
    report.point_support_seconds = median(tp);
    report.full_support_seconds = median(tf);
  }
  {
    Model base(bench_config(o, true, 1));
    train::train_step(base, batch);
    std::vector<double> t;
    for (std::size_t r = 0; r < o.repetitions; ++r) t.push_back(seconds_of([&] { train::train_step(base, batch); }));
    report.baseline_seconds = median(t);
  }
  for (auto s : o.sweep) {
    Model m(bench_config(o, false, s));
    train::train_step(m, batch);
    std::vector<double> t;
    for (std::size_t r = 0; r < o.repetitions; ++r) t.push_back(seconds_of([&] { train::train_step(m, batch); }));
    report.sweep.push_back({s, median(t)});
  }
  return report;
}

void print_bench(std::ostream& os, const BenchReport& r) {
  const auto& o = r.options;
  os << "layer " << o.size << "x" << o.size << ", " << o.channels << " -> " << o.channels
     << " channels, batch " << o.batch << ", median of " << o.repetitions << " steps\n";
  os << std::fixed << std::setprecision(4);
  os << "[support] S=" << o.support_positions << " 1x1-equivalent " << r.point_support_seconds
     << " s, full " << o.size << "x" << o.size << " " << r.full_support_seconds << " s, ratio "
     << r.support_ratio() << "\n";
  os << "[baseline] spatial 3x3 step " << r.baseline_seconds << " s\n";
  os << "[sweep]";
  for (const auto& p : r.sweep) os << " S=" << p.positions << ": " << p.seconds << " s;";
  os << "\n" << std::defaultfloat;
}

void write_bench_csv(const std::string& path, const BenchReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "section,case,positions,seconds\n";
  out << "support,1x1," << r.options.support_positions << "," << r.point_support_seconds << "\n";
  out << "support,full," << r.options.support_positions << "," << r.full_support_seconds << "\n";
  out << "baseline,spatial3x3,0," << r.baseline_seconds << "\n";
  for (const auto& p : r.sweep) out << "sweep,cf-conv," << p.positions << "," << p.seconds << "\n";
}

}  // namespace cfconv::profile
