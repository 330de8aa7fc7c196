#include "cfconv/optimizer.hpp"

#include <cmath>

#include "cfconv/error.hpp"

namespace cfconv::train {

AdamMoments make_moments(std::span<RealGrid* const> params) {
  AdamMoments m;
  for (const auto* p : params) {
    m.first.emplace_back(p->shape);
    m.second.emplace_back(p->shape);
  }
  return m;
}

void adam_update(std::span<RealGrid* const> params, std::span<const RealGrid* const> grads,
                 AdamMoments& moments, const AdamHyper& hyper) {
  if (params.size() != grads.size() || params.size() != moments.first.size() ||
      params.size() != moments.second.size()) {
    throw ShapeError("adam_update: parameter, gradient and moment counts differ");
  }
  ++moments.step;
  const double t = static_cast<double>(moments.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->data;
    const auto& g = grads[k]->data;
    auto& m = moments.first[k].data;
    auto& v = moments.second[k].data;
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
      throw ShapeError("adam_update: shape mismatch for parameter " + std::to_string(k));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
    }
  }
}

}  // namespace cfconv::train
