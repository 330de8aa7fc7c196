#pragma once

// Checkpoint file: "CFCV", u32 version, u32 metadata length, JSON metadata
// (config, section table, RNG and step counters), then raw little-endian
// float64 blobs in section-table order.

#include <cstdint>
#include <string>
#include <vector>

#include "cfconv/model.hpp"

namespace cfconv::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Section {
  std::string name;
  numerics::Shape shape;
};

/// Section table for `model` in file order.
std::vector<Section> checkpoint_sections(const Model& model);

std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model& model, const std::string& path);
/// Throws CheckpointError on magic/version mismatch or a short blob (naming the section).
Model load_checkpoint(const std::string& path);

}  // namespace cfconv::train
