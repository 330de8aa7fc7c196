#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cfconv/numerics.hpp"

namespace cfconv::train {

using numerics::RealGrid;

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

struct AdamMoments {
  std::vector<RealGrid> first;
  std::vector<RealGrid> second;
  std::uint64_t step = 0;
};

/// Zero moments shaped like `params`.
AdamMoments make_moments(std::span<RealGrid* const> params);

/// One bias-corrected Adam step applied to every parameter in place.
void adam_update(std::span<RealGrid* const> params, std::span<const RealGrid* const> grads,
                 AdamMoments& moments, const AdamHyper& hyper);

}  // namespace cfconv::train
