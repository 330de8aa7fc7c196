#include "cfconv/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

#include "cfconv/error.hpp"

namespace cfconv::train {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'F', 'C', 'V'};

// Every blob in file order, paired with its section entry.
template <typename M, typename Fn>
void for_each_blob(M& model, Fn&& fn) {
  std::size_t id = 0;
  auto params = model.parameters();
  for (std::size_t l = 0; l < model.conv_layer_count(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    if (model.baseline()) {
      fn(prefix + ".spatial3x3", params[id]->shape, params[id]->data);
      ++id;
      continue;
    }
    auto& layer = model.cf_layers[l];
    const std::size_t per_plane = layer.mlps.real.layer_count();
    for (const char* plane : {"re", "im"}) {
      for (std::size_t k = 0; k < per_plane; ++k) {
        const std::string base = prefix + ".mlp_" + plane + ".";
        fn(base + "w" + std::to_string(k), params[id]->shape, params[id]->data);
        fn(base + "b" + std::to_string(k), params[id + 1]->shape, params[id + 1]->data);
        id += 2;
      }
    }
    fn(prefix + ".state_re", layer.state.dims.shape(), layer.state.re);
    fn(prefix + ".state_im", layer.state.dims.shape(), layer.state.im);
  }
  for (std::size_t d = 0; d < model.head.size(); ++d) {
    const std::string prefix = "head" + std::to_string(d);
    fn(prefix + ".weight", params[id]->shape, params[id]->data);
    fn(prefix + ".bias", params[id + 1]->shape, params[id + 1]->data);
    id += 2;
  }
  for (std::size_t i = 0; i < model.moments.first.size(); ++i) {
    fn("adam.m" + std::to_string(i), model.moments.first[i].shape, model.moments.first[i].data);
    fn("adam.v" + std::to_string(i), model.moments.second[i].shape, model.moments.second[i].data);
  }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<Section> checkpoint_sections(const Model& model) {
  std::vector<Section> out;
  for_each_blob(model, [&](const std::string& name, const numerics::Shape& shape, const auto&) {
    out.push_back({name, shape});
  });
  return out;
}

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  json meta;
  meta["config"] = to_json(model.config());
  json sections = json::array();
  for (const auto& s : checkpoint_sections(model)) {
    sections.push_back({{"name", s.name}, {"shape", s.shape}, {"dtype", "f64"}});
  }
  meta["sections"] = sections;
  std::ostringstream rng;
  rng << model.rng;
  meta["rng"] = rng.str();
  meta["optimizer_step"] = model.moments.step;
  meta["steps_taken"] = model.steps_taken;
  json counters = json::array();
  for (const auto& layer : model.cf_layers) counters.push_back(layer.state.step_counter);
  meta["kernel_step_counters"] = counters;

  const std::string text = meta.dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for_each_blob(model, [&](const std::string&, const numerics::Shape&, const std::vector<double>& v) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(v.data());
    out.insert(out.end(), bytes, bytes + v.size() * sizeof(double));
  });
  return out;
}

Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("checkpoint magic mismatch (expected CFCV)");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version mismatch: file has " + std::to_string(version) +
                          ", reader supports " + std::to_string(kCheckpointVersion));
  }
  const std::size_t meta_len = get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + meta_len) throw CheckpointError("corrupt checkpoint: truncated metadata");
  json meta;
  try {
    meta = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(meta_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }

  Model model(config_from_json(meta.at("config")));
  const auto expected = checkpoint_sections(model);
  const auto& table = meta.at("sections");
  if (table.size() != expected.size()) {
    throw CheckpointError("checkpoint section table has " + std::to_string(table.size()) +
                          " entries, model expects " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (table[i].at("name").get<std::string>() != expected[i].name ||
        table[i].at("shape").get<numerics::Shape>() != expected[i].shape ||
        table[i].at("dtype").get<std::string>() != "f64") {
      throw CheckpointError("checkpoint section " + std::to_string(i) + " (" +
                            table[i].at("name").get<std::string>() + ") does not match the model");
    }
  }

  std::size_t offset = 12 + meta_len;
  for_each_blob(model, [&](const std::string& name, const numerics::Shape&, std::vector<double>& v) {
    const std::size_t n = v.size() * sizeof(double);
    if (bytes.size() - offset < n) {
      throw CheckpointError("corrupt blob in section " + name + ": expected " + std::to_string(n) +
                            " bytes, " + std::to_string(bytes.size() - offset) + " remain");
    }
    std::memcpy(v.data(), bytes.data() + offset, n);
    offset += n;
  });
  if (offset != bytes.size()) {
    throw CheckpointError("corrupt checkpoint: " + std::to_string(bytes.size() - offset) +
                          " trailing bytes");
  }

  std::istringstream rng(meta.at("rng").get<std::string>());
  rng >> model.rng;
  if (!rng) throw CheckpointError("corrupt checkpoint: unreadable RNG state");
  model.moments.step = meta.at("optimizer_step").get<std::uint64_t>();
  model.steps_taken = meta.at("steps_taken").get<std::uint64_t>();
  const auto& counters = meta.at("kernel_step_counters");
  for (std::size_t l = 0; l < model.cf_layers.size(); ++l) {
    model.cf_layers[l].state.step_counter = counters.at(l).get<std::uint64_t>();
  }
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint " + path + ": " + e.what());
  }
}

}  // namespace cfconv::train
