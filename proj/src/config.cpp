#include "cfconv/config.hpp"

#include <fstream>

#include "cfconv/error.hpp"

namespace cfconv::train {

using nlohmann::json;

std::vector<std::size_t> default_widths(Parameterization p) {
  return p == Parameterization::kHW ? kernelgen::kPerPairWidths : kernelgen::kDefaultWidths;
}

std::string parameterization_name(const ModelConfig& config) {
  if (config.baseline) return "spatial3x3";
  return std::string(kernelgen::to_string(config.parameterization));
}

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
  if (c.filters_per_layer == 0) fail("filters_per_layer must be >= 1");
  if (c.input_height == 0 || c.input_width == 0 || c.input_channels == 0) fail("zero input extent");
  if (c.baseline && (c.input_height < 3 || c.input_width < 3)) fail("spatial3x3 needs inputs of at least 3x3");
  if (!c.baseline) {
    if (c.mlp_widths.empty() || c.mlp_widths.back() != 1) fail("mlp_widths must end in 1");
    for (auto w : c.mlp_widths) {
      if (w == 0) fail("mlp_widths entries must be >= 1");
    }
  }
  if (c.selected_positions && *c.selected_positions == 0) fail("selected_positions must be >= 1");
  if (!(c.ema_alpha > 0.0 && c.ema_alpha <= 1.0)) fail("ema_alpha must lie in (0, 1]");
  if (c.batch_size == 0) fail("batch_size must be >= 1");
  if (!(c.optimizer.learning_rate > 0.0)) fail("learning_rate must be positive");
}

json to_json(const ModelConfig& c) {
  json j;
  j["layer_count"] = c.layer_count;
  j["filters_per_layer"] = c.filters_per_layer;
  j["input_height"] = c.input_height;
  j["input_width"] = c.input_width;
  j["input_channels"] = c.input_channels;
  j["parameterization"] = parameterization_name(c);
  j["mlp_widths"] = c.mlp_widths;
  if (c.selected_positions) {
    j["selected_positions"] = *c.selected_positions;
  } else {
    j["selected_positions"] = "all";
  }
  j["ema_alpha"] = c.ema_alpha;
  j["ema_reading"] = c.ema_reading == conv::EmaReading::kWeightOnNew ? "weight-on-new" : "weight-on-old";
  j["optimizer"] = {{"learning_rate", c.optimizer.learning_rate},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"epsilon", c.optimizer.epsilon}};
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["augment"] = c.augment;
  j["shift_pixels"] = c.shift_pixels;
  j["train_data"] = c.train_data;
  j["test_data"] = c.test_data;
  return j;
}

ModelConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ModelConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("layer_count", c.layer_count);
    get("filters_per_layer", c.filters_per_layer);
    get("input_height", c.input_height);
    get("input_width", c.input_width);
    get("input_channels", c.input_channels);
    if (j.contains("parameterization")) {
      const auto name = j.at("parameterization").get<std::string>();
      if (name == "spatial3x3") {
        c.baseline = true;
      } else if (auto p = kernelgen::parse_parameterization(name)) {
        c.parameterization = *p;
      } else {
        throw ConfigError("unknown parameterization '" + name + "'");
      }
    }
    if (j.contains("mlp_widths")) {
      j.at("mlp_widths").get_to(c.mlp_widths);
    } else {
      c.mlp_widths = default_widths(c.parameterization);
    }
    if (j.contains("selected_positions")) {
      const auto& s = j.at("selected_positions");
      if (s.is_string()) {
        if (s.get<std::string>() != "all") throw ConfigError("selected_positions must be an integer or \"all\"");
        c.selected_positions.reset();
      } else {
        c.selected_positions = s.get<std::size_t>();
      }
    }
    get("ema_alpha", c.ema_alpha);
    if (j.contains("ema_reading")) {
      const auto r = j.at("ema_reading").get<std::string>();
      if (r == "weight-on-new") {
        c.ema_reading = conv::EmaReading::kWeightOnNew;
      } else if (r == "weight-on-old") {
        c.ema_reading = conv::EmaReading::kWeightOnOld;
      } else {
        throw ConfigError("unknown ema_reading '" + r + "'");
      }
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      if (o.contains("learning_rate")) o.at("learning_rate").get_to(c.optimizer.learning_rate);
      if (o.contains("beta1")) o.at("beta1").get_to(c.optimizer.beta1);
      if (o.contains("beta2")) o.at("beta2").get_to(c.optimizer.beta2);
      if (o.contains("epsilon")) o.at("epsilon").get_to(c.optimizer.epsilon);
    }
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("seed", c.seed);
    get("augment", c.augment);
    get("shift_pixels", c.shift_pixels);
    get("train_data", c.train_data);
    get("test_data", c.test_data);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  validate(c);
  return c;
}

json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config file '" + path + "': " + e.what());
  }
}

ModelConfig load_config(const std::string& path) { return config_from_json(load_config_json(path)); }

}  // namespace cfconv::train
