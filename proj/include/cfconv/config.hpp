#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfconv/kernelgen.hpp"
#include "cfconv/layer.hpp"
#include "cfconv/optimizer.hpp"

namespace cfconv::train {

using kernelgen::Parameterization;

struct ModelConfig {
  std::size_t layer_count = 6;
  std::size_t filters_per_layer = 32;
  std::size_t input_height = 150;
  std::size_t input_width = 150;
  std::size_t input_channels = 3;
  /// Spatial 3x3 baseline instead of CF-Conv layers.
  bool baseline = false;
  Parameterization parameterization = Parameterization::kHWCinCout;
  std::vector<std::size_t> mlp_widths = kernelgen::kDefaultWidths;
  /// Positions sampled per layer and step; empty means every position.
  std::optional<std::size_t> selected_positions = std::size_t{1} << 18;
  double ema_alpha = conv::kDefaultEmaAlpha;
  conv::EmaReading ema_reading = conv::EmaReading::kWeightOnNew;
  AdamHyper optimizer;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool augment = false;
  std::size_t shift_pixels = 8;
  std::string train_data;
  std::string test_data;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// [2, 1] per channel pair for kHW, the deep default otherwise.
std::vector<std::size_t> default_widths(Parameterization p);

/// "hw", "hw-cin", "hw-cout", "hw-cin-cout" or "spatial3x3".
std::string parameterization_name(const ModelConfig& config);

void validate(const ModelConfig& config);

nlohmann::json to_json(const ModelConfig& config);
/// Missing fields take their defaults; a missing mlp_widths follows the
/// parameterization. Throws ConfigError on malformed input.
ModelConfig config_from_json(const nlohmann::json& j);
ModelConfig load_config(const std::string& path);
nlohmann::json load_config_json(const std::string& path);

}  // namespace cfconv::train
