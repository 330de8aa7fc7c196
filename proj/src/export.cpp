#include "cfconv/export.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "cfconv/error.hpp"

namespace cfconv::profile {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'K', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const std::vector<char>& bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

double signed_frequency(std::size_t k, std::size_t n) {
  return k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

}  // namespace

void write_kernel_file(const std::string& path, const KernelFile& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(f.planes.size()));
  for (auto d : f.dims.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (const auto& plane : f.planes) {
    if (plane.size() != f.dims.total()) throw ShapeError("kernel plane size does not match its dims");
    out.write(reinterpret_cast<const char*>(plane.data()), static_cast<std::streamsize>(plane.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing " + path);
}

KernelFile read_kernel_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 28 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(path + ": not a kernel file");
  if (get_u32(bytes, 4) != kVersion) throw Error(path + ": unsupported kernel file version");
  KernelFile f;
  const std::size_t planes = get_u32(bytes, 8);
  f.dims = {get_u32(bytes, 12), get_u32(bytes, 16), get_u32(bytes, 20), get_u32(bytes, 24)};
  const std::size_t n = f.dims.total();
  if (bytes.size() != 28 + planes * n * sizeof(double)) throw Error(path + ": truncated kernel file");
  for (std::size_t p = 0; p < planes; ++p) {
    std::vector<double> plane(n);
    std::memcpy(plane.data(), bytes.data() + 28 + p * n * sizeof(double), n * sizeof(double));
    f.planes.push_back(std::move(plane));
  }
  return f;
}

double spectral_centroid(const conv::SplitKernelState& s, std::size_t ci, std::size_t co) {
  const auto& d = s.dims;
  const double r_max = std::hypot(signed_frequency(d.height / 2, d.height), signed_frequency(d.width / 2, d.width));
  double weighted = 0.0, energy = 0.0;
  for (std::size_t y = 0; y < d.height; ++y) {
    for (std::size_t x = 0; x < d.width; ++x) {
      const std::size_t i = ((y * d.width + x) * d.c_in + ci) * d.c_out + co;
      const double e = s.re[i] * s.re[i] + s.im[i] * s.im[i];
      const double r = r_max > 0 ? std::hypot(signed_frequency(y, d.height), signed_frequency(x, d.width)) / r_max : 0.0;
      weighted += e * r;
      energy += e;
    }
  }
  return energy > 0 ? weighted / energy : 0.0;
}

double energy_outside_center(const RealGrid& spatial, std::size_t ci, std::size_t co) {
  const std::size_t h = spatial.shape[0], w = spatial.shape[1], c_in = spatial.shape[2], c_out = spatial.shape[3];
  double inside = 0.0, total = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = spatial.data[((y * w + x) * c_in + ci) * c_out + co];
      total += v * v;
      const bool near_y = y <= 1 || y + 1 >= h;
      const bool near_x = x <= 1 || x + 1 >= w;
      if (near_y && near_x) inside += v * v;
    }
  }
  return total > 0 ? (total - inside) / total : 0.0;
}

ExportSummary export_kernels(const train::Model& model, const std::string& out_dir) {
  if (model.baseline()) throw ConfigError("export-kernels needs a CF-Conv model; the checkpoint is a spatial baseline");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir + ": " + ec.message());
  ExportSummary summary;
  summary.centroid_csv = (std::filesystem::path(out_dir) / "centroids.csv").string();
  std::ofstream csv(summary.centroid_csv);
  if (!csv) throw Error("cannot open " + summary.centroid_csv + " for writing");
  csv << "layer,c_in,c_out,spectral_centroid,energy_outside_3x3\n";
  for (std::size_t l = 0; l < model.cf_layers.size(); ++l) {
    const auto m = conv::materialize_full_kernel(model.cf_layers[l]);
    const auto base = std::filesystem::path(out_dir) / ("layer" + std::to_string(l));
    const std::string kernel_path = base.string() + "_kernel.cfkn";
    const std::string spatial_path = base.string() + "_spatial.cfkn";
    write_kernel_file(kernel_path, {m.snapshot.dims, {m.snapshot.re, m.snapshot.im}});
    write_kernel_file(spatial_path, {m.snapshot.dims, {m.spatial.data}});
    summary.files.push_back(kernel_path);
    summary.files.push_back(spatial_path);
    for (std::size_t ci = 0; ci < m.snapshot.dims.c_in; ++ci) {
      for (std::size_t co = 0; co < m.snapshot.dims.c_out; ++co) {
        const double c = spectral_centroid(m.snapshot, ci, co);
        summary.centroids.push_back(c);
        csv << l << "," << ci << "," << co << "," << c << "," << energy_outside_center(m.spatial, ci, co) << "\n";
      }
    }
  }
  return summary;
}

}  // namespace cfconv::profile
