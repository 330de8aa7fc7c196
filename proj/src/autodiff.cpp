#include "cfconv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cfconv/error.hpp"

namespace cfconv::ad {

using numerics::element_count;
using numerics::shape_string;

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kLinear: return "linear";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kMeanPoolSpatial: return "mean_pool_spatial";
    case Op::kFft2d: return "fft_2d";
    case Op::kIfft2dReal: return "ifft_2d_real";
    case Op::kComplexMulAccumulate: return "complex_mul_accumulate";
    case Op::kScaleAndAdd: return "scale_and_add";
    case Op::kBinaryCrossEntropy: return "binary_cross_entropy";
    case Op::kConv3x3: return "conv3x3";
  }
  return "unknown";
}

namespace {

constexpr double kProbabilityFloor = 1e-12;

bool holds_complex(const Value& v) { return std::holds_alternative<ComplexGrid>(v); }

const Shape& shape_of(const Value& v) {
  return std::visit([](const auto& g) -> const Shape& { return g.shape; }, v);
}

std::size_t bytes_of(const Value& v) {
  if (holds_complex(v)) return std::get<ComplexGrid>(v).size() * 2 * sizeof(double);
  return std::get<RealGrid>(v).size() * sizeof(double);
}

Value zeros_like(const Shape& shape, bool complex) {
  if (complex) return ComplexGrid(shape);
  return RealGrid(shape);
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void accumulate_value(std::optional<Value>& slot, Value grad) {
  if (!slot) {
    slot = std::move(grad);
    return;
  }
  if (holds_complex(*slot)) {
    auto& dst = std::get<ComplexGrid>(*slot);
    const auto& src = std::get<ComplexGrid>(grad);
    add_into(dst.re, src.re);
    add_into(dst.im, src.im);
  } else {
    add_into(std::get<RealGrid>(*slot).data, std::get<RealGrid>(grad).data);
  }
}

struct LinearDims {
  std::size_t rows, fan_in, fan_out, instances;
};

LinearDims linear_dims(const Shape& x, const Shape& w, const Shape& b) {
  if (x.size() != 2) throw ShapeError("linear: input must be [N, in], got " + shape_string(x));
  LinearDims d{x[0], x[1], 0, 1};
  if (w.size() == 2) {
    d.fan_out = w[0];
    if (w[1] != d.fan_in) throw ShapeError("linear: axis in mismatch, weight " + shape_string(w));
  } else if (w.size() == 3) {
    d.instances = w[0];
    d.fan_out = w[1];
    if (w[2] != d.fan_in) throw ShapeError("linear: axis in mismatch, weight " + shape_string(w));
  } else {
    throw ShapeError("linear: weight must be rank 2 or 3, got " + shape_string(w));
  }
  if (element_count(b) != d.instances * d.fan_out) {
    throw ShapeError("linear: bias " + shape_string(b) + " does not match weight " +
                     shape_string(w));
  }
  return d;
}

struct SpatialDims {
  std::size_t batch, height, width, channels;
};

SpatialDims spatial_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw ShapeError(std::string(op) + ": expected [H,W,C] or [B,H,W,C], got " + shape_string(s));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Value& GradStore::at(ParamId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw Error("GradStore: no gradient for parameter " + std::to_string(id.value));
  return it->second;
}

const RealGrid& GradStore::real(ParamId id) const { return std::get<RealGrid>(at(id)); }
const ComplexGrid& GradStore::complex(ParamId id) const { return std::get<ComplexGrid>(at(id)); }

double GradStore::squared_norm() const {
  double total = 0.0;
  for (const auto& [id, g] : grads_) {
    if (holds_complex(g)) {
      const auto& c = std::get<ComplexGrid>(g);
      for (std::size_t i = 0; i < c.size(); ++i) total += c.re[i] * c.re[i] + c.im[i] * c.im[i];
    } else {
      for (double v : std::get<RealGrid>(g).data) total += v * v;
    }
  }
  return total;
}

bool GradStore::all_finite() const {
  return std::all_of(grads_.begin(), grads_.end(), [](const auto& kv) {
    return std::visit([](const auto& g) { return g.all_finite(); }, kv.second);
  });
}

void GradStore::accumulate(ParamId id, Value grad) {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    grads_.emplace(id, std::move(grad));
    return;
  }
  std::optional<Value> slot(std::move(it->second));
  accumulate_value(slot, std::move(grad));
  it->second = std::move(*slot);
}

NodeRef Tape::push(Node node) {
  if (consumed_) throw Error("Tape: cannot record after backward");
  node.shape = shape_of(*node.value);
  node.is_complex = holds_complex(*node.value);
  nodes_.push_back(std::move(node));
  return NodeRef{nodes_.size() - 1};
}

NodeRef Tape::constant(Value value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeRef Tape::parameter(ParamId id, Value value) {
  Node n;
  n.value = std::move(value);
  n.param = id;
  return push(std::move(n));
}

const Value& Tape::value(NodeRef node) const {
  const auto& n = nodes_.at(node.index);
  if (!n.value) {
    throw Error("Tape: value of node " + std::to_string(node.index) + " (" +
                std::string(op_name(n.op)) + ") has been released");
  }
  return *n.value;
}

const RealGrid& Tape::real(NodeRef node) const {
  const auto& v = value(node);
  if (holds_complex(v)) throw Error("Tape: node " + std::to_string(node.index) + " is complex");
  return std::get<RealGrid>(v);
}

const ComplexGrid& Tape::complex(NodeRef node) const {
  const auto& v = value(node);
  if (!holds_complex(v)) throw Error("Tape: node " + std::to_string(node.index) + " is real");
  return std::get<ComplexGrid>(v);
}

NodeRef Tape::record(Op op, std::vector<NodeRef> inputs, Attributes attrs) {
  auto expect_inputs = [&](std::size_t count) {
    if (inputs.size() != count) {
      throw Error(std::string(op_name(op)) + ": expected " + std::to_string(count) +
                  " inputs, got " + std::to_string(inputs.size()));
    }
    for (auto ref : inputs) {
      if (ref.index >= nodes_.size()) throw Error(std::string(op_name(op)) + ": dangling input");
    }
  };

  Node n;
  n.op = op;
  for (auto ref : inputs) n.inputs.push_back(ref.index);

  switch (op) {
    case Op::kLinear: {
      expect_inputs(3);
      const auto& x = real(inputs[0]);
      const auto& w = real(inputs[1]);
      const auto& b = real(inputs[2]);
      if (std::holds_alternative<std::monostate>(attrs)) attrs = LinearAttrs{};
      const auto& groups = std::get<LinearAttrs>(attrs).groups;
      const auto d = linear_dims(x.shape, w.shape, b.shape);
      if (groups.empty() && d.instances != 1 && d.rows != 0) {
        throw ShapeError("linear: " + std::to_string(d.instances) +
                         " weight instances but no row routing");
      }
      if (!groups.empty() && groups.size() != d.rows) {
        throw ShapeError("linear: routing has " + std::to_string(groups.size()) + " rows, input " +
                         std::to_string(d.rows));
      }
      RealGrid y({d.rows, d.fan_out});
      for (std::size_t r = 0; r < d.rows; ++r) {
        const std::size_t g = groups.empty() ? 0 : groups[r];
        if (g >= d.instances) throw ShapeError("linear: routing index out of range");
        const double* xr = x.data.data() + r * d.fan_in;
        const double* wg = w.data.data() + g * d.fan_out * d.fan_in;
        const double* bg = b.data.data() + g * d.fan_out;
        double* yr = y.data.data() + r * d.fan_out;
        for (std::size_t o = 0; o < d.fan_out; ++o) {
          double acc = bg[o];
          const double* wo = wg + o * d.fan_in;
          for (std::size_t i = 0; i < d.fan_in; ++i) acc += wo[i] * xr[i];
          yr[o] = acc;
        }
      }
      n.value = std::move(y);
      nodes_[inputs[0].index].retained = true;
      nodes_[inputs[1].index].retained = true;
      break;
    }
    case Op::kRelu: {
      expect_inputs(1);
      RealGrid y = real(inputs[0]);
      for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
      n.value = std::move(y);
      n.retained = true;
      break;
    }
    case Op::kSigmoid: {
      expect_inputs(1);
      RealGrid y = real(inputs[0]);
      for (auto& v : y.data) v = stable_sigmoid(v);
      n.value = std::move(y);
      n.retained = true;
      break;
    }
    case Op::kMeanPoolSpatial: {
      expect_inputs(1);
      const auto& x = real(inputs[0]);
      const auto d = spatial_dims(x.shape, "mean_pool_spatial");
      Shape out_shape = x.rank() == 3 ? Shape{d.channels} : Shape{d.batch, d.channels};
      RealGrid y(out_shape);
      const double scale = 1.0 / static_cast<double>(d.height * d.width);
      for (std::size_t b = 0; b < d.batch; ++b) {
        double* yb = y.data.data() + b * d.channels;
        for (std::size_t p = 0; p < d.height * d.width; ++p) {
          const double* xp = x.data.data() + (b * d.height * d.width + p) * d.channels;
          for (std::size_t c = 0; c < d.channels; ++c) yb[c] += xp[c];
        }
        for (std::size_t c = 0; c < d.channels; ++c) yb[c] *= scale;
      }
      n.value = std::move(y);
      break;
    }
    case Op::kFft2d: {
      expect_inputs(1);
      if (std::holds_alternative<std::monostate>(attrs)) attrs = FftAttrs{};
      const auto& a = std::get<FftAttrs>(attrs);
      const auto& x = value(inputs[0]);
      if (holds_complex(x)) {
        n.value = numerics::fft_2d(std::get<ComplexGrid>(x), a.inverse, a.first_axis);
      } else {
        n.value = numerics::fft_2d(std::get<RealGrid>(x), a.inverse, a.first_axis);
      }
      break;
    }
    case Op::kIfft2dReal: {
      expect_inputs(1);
      if (std::holds_alternative<std::monostate>(attrs)) attrs = FftAttrs{0, true};
      const auto& a = std::get<FftAttrs>(attrs);
      n.value = numerics::ifft_2d_real(complex(inputs[0]), a.first_axis);
      break;
    }
    case Op::kComplexMulAccumulate: {
      expect_inputs(2);
      n.value = numerics::complex_mul_accumulate(complex(inputs[0]), complex(inputs[1]));
      nodes_[inputs[0].index].retained = true;
      nodes_[inputs[1].index].retained = true;
      break;
    }
    case Op::kScaleAndAdd: {
      expect_inputs(2);
      auto& a = std::get<ScaleAddAttrs>(attrs);
      const auto& re_vals = real(inputs[0]);
      const auto& im_vals = real(inputs[1]);
      const std::size_t count = a.positions.size();
      if (re_vals.size() != count || im_vals.size() != count) {
        throw ShapeError("scale_and_add: " + std::to_string(count) + " positions but " +
                         std::to_string(re_vals.size()) + "/" + std::to_string(im_vals.size()) +
                         " values");
      }
      ComplexGrid out = std::move(a.base);
      a.base = ComplexGrid{};
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t p = a.positions[k];
        if (p >= out.size()) throw ShapeError("scale_and_add: position out of range");
        out.re[p] = blend(a.keep_weight, out.re[p], a.add_weight, re_vals.data[k]);
        out.im[p] = blend(a.keep_weight, out.im[p], a.add_weight, im_vals.data[k]);
      }
      n.value = std::move(out);
      break;
    }
    case Op::kBinaryCrossEntropy: {
      expect_inputs(1);
      const auto& p = real(inputs[0]);
      const auto& targets = std::get<BceAttrs>(attrs).targets;
      if (p.size() != targets.size() || p.size() == 0) {
        throw ShapeError("binary_cross_entropy: " + std::to_string(p.size()) +
                         " probabilities for " + std::to_string(targets.size()) + " targets");
      }
      double loss = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p.data[i], kProbabilityFloor, 1.0 - kProbabilityFloor);
        loss -= targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q);
      }
      n.value = RealGrid({1}, loss / static_cast<double>(p.size()));
      nodes_[inputs[0].index].retained = true;
      break;
    }
    case Op::kConv3x3: {
      expect_inputs(2);
      n.value = numerics::conv3x3_same(real(inputs[0]), real(inputs[1]));
      nodes_[inputs[0].index].retained = true;
      nodes_[inputs[1].index].retained = true;
      break;
    }
    case Op::kLeaf:
      throw Error("record: leaves are created with constant() or parameter()");
    default:
      throw Error("record: unsupported op id " + std::to_string(static_cast<int>(op)));
  }
  n.attrs = std::move(attrs);
  return push(std::move(n));
}

NodeRef Tape::linear(NodeRef x, NodeRef w, NodeRef b, std::vector<std::uint32_t> groups) {
  return record(Op::kLinear, {x, w, b}, LinearAttrs{std::move(groups)});
}
NodeRef Tape::relu(NodeRef x) { return record(Op::kRelu, {x}); }
NodeRef Tape::sigmoid(NodeRef x) { return record(Op::kSigmoid, {x}); }
NodeRef Tape::mean_pool_spatial(NodeRef x) { return record(Op::kMeanPoolSpatial, {x}); }
NodeRef Tape::fft_2d(NodeRef x, std::size_t first_axis, bool inverse) {
  return record(Op::kFft2d, {x}, FftAttrs{first_axis, inverse});
}
NodeRef Tape::ifft_2d_real(NodeRef x, std::size_t first_axis) {
  return record(Op::kIfft2dReal, {x}, FftAttrs{first_axis, true});
}
NodeRef Tape::complex_mul_accumulate(NodeRef features, NodeRef kernel) {
  return record(Op::kComplexMulAccumulate, {features, kernel});
}
NodeRef Tape::scale_and_add(NodeRef re_values, NodeRef im_values, ComplexGrid base,
                            std::vector<std::size_t> positions, double keep_weight,
                            double add_weight) {
  return record(Op::kScaleAndAdd, {re_values, im_values},
                ScaleAddAttrs{std::move(base), std::move(positions), keep_weight, add_weight});
}
NodeRef Tape::binary_cross_entropy(NodeRef probabilities, std::vector<double> targets) {
  return record(Op::kBinaryCrossEntropy, {probabilities}, BceAttrs{std::move(targets)});
}
NodeRef Tape::conv3x3(NodeRef x, NodeRef w) { return record(Op::kConv3x3, {x, w}); }

std::size_t Tape::saved_bytes() const {
  std::size_t total = 0;
  for (const auto& n : nodes_) {
    if (n.retained && n.value) total += bytes_of(*n.value);
  }
  return total;
}

std::size_t Tape::resident_bytes() const {
  std::size_t total = 0;
  for (const auto& n : nodes_) {
    if (n.value) total += bytes_of(*n.value);
  }
  return total;
}

void Tape::release_forward_only() {
  for (auto& n : nodes_) {
    if (!n.retained) n.value.reset();
  }
}

void Tape::backward_node(const Node& node, const Value& grad_value,
                         std::vector<std::optional<Value>>& grads) const {
  auto input_value = [&](std::size_t k) -> const Value& { return *input_node(node, k).value; };
  auto emit = [&](std::size_t k, Value g) { accumulate_value(grads[node.inputs[k]], std::move(g)); };

  switch (node.op) {
    case Op::kLinear: {
      const auto& g = std::get<RealGrid>(grad_value);
      const auto& x = std::get<RealGrid>(input_value(0));
      const auto& w = std::get<RealGrid>(input_value(1));
      const auto& groups = std::get<LinearAttrs>(node.attrs).groups;
      const auto d = linear_dims(x.shape, w.shape, input_node(node, 2).shape);
      RealGrid dx(x.shape), dw(w.shape), db(input_node(node, 2).shape);
      for (std::size_t r = 0; r < d.rows; ++r) {
        const std::size_t grp = groups.empty() ? 0 : groups[r];
        const double* gr = g.data.data() + r * d.fan_out;
        const double* xr = x.data.data() + r * d.fan_in;
        const double* wg = w.data.data() + grp * d.fan_out * d.fan_in;
        double* dwg = dw.data.data() + grp * d.fan_out * d.fan_in;
        double* dbg = db.data.data() + grp * d.fan_out;
        double* dxr = dx.data.data() + r * d.fan_in;
        for (std::size_t o = 0; o < d.fan_out; ++o) {
          const double go = gr[o];
          if (go == 0.0) continue;
          dbg[o] += go;
          const double* wo = wg + o * d.fan_in;
          double* dwo = dwg + o * d.fan_in;
          for (std::size_t i = 0; i < d.fan_in; ++i) {
            dxr[i] += go * wo[i];
            dwo[i] += go * xr[i];
          }
        }
      }
      emit(0, std::move(dx));
      emit(1, std::move(dw));
      emit(2, std::move(db));
      break;
    }
    case Op::kRelu: {
      RealGrid dx = std::get<RealGrid>(grad_value);
      const auto& y = std::get<RealGrid>(*node.value);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (y.data[i] <= 0.0) dx.data[i] = 0.0;
      }
      emit(0, std::move(dx));
      break;
    }
    case Op::kSigmoid: {
      RealGrid dx = std::get<RealGrid>(grad_value);
      const auto& y = std::get<RealGrid>(*node.value);
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= y.data[i] * (1.0 - y.data[i]);
      emit(0, std::move(dx));
      break;
    }
    case Op::kMeanPoolSpatial: {
      const auto& g = std::get<RealGrid>(grad_value);
      const auto& in_shape = input_node(node, 0).shape;
      const auto d = spatial_dims(in_shape, "mean_pool_spatial");
      RealGrid dx(in_shape);
      const double scale = 1.0 / static_cast<double>(d.height * d.width);
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* gb = g.data.data() + b * d.channels;
        for (std::size_t p = 0; p < d.height * d.width; ++p) {
          double* xp = dx.data.data() + (b * d.height * d.width + p) * d.channels;
          for (std::size_t c = 0; c < d.channels; ++c) xp[c] = gb[c] * scale;
        }
      }
      emit(0, std::move(dx));
      break;
    }
    case Op::kFft2d:
    case Op::kIfft2dReal: {
      const auto& a = std::get<FftAttrs>(node.attrs);
      const Shape& s = node.shape;
      const double area = static_cast<double>(s[a.first_axis] * s[a.first_axis + 1]);
      ComplexGrid g = holds_complex(grad_value) ? std::get<ComplexGrid>(grad_value)
                                                : ComplexGrid(std::get<RealGrid>(grad_value));
      // Adjoint of the unnormalized forward DFT is area * inverse DFT; adjoint
      // of the 1/area inverse DFT is forward DFT / area.
      ComplexGrid dx;
      if (a.inverse) {
        dx = numerics::fft_2d(g, false, a.first_axis);
        const double scale = 1.0 / area;
        for (auto& v : dx.re) v *= scale;
        for (auto& v : dx.im) v *= scale;
      } else {
        dx = numerics::fft_2d(g, true, a.first_axis);
        for (auto& v : dx.re) v *= area;
        for (auto& v : dx.im) v *= area;
      }
      if (input_node(node, 0).is_complex) {
        emit(0, std::move(dx));
      } else {
        emit(0, RealGrid(std::move(dx.shape), std::move(dx.re)));
      }
      break;
    }
    case Op::kComplexMulAccumulate: {
      const auto& g = std::get<ComplexGrid>(grad_value);
      const auto& f = std::get<ComplexGrid>(input_value(0));
      const auto& k = std::get<ComplexGrid>(input_value(1));
      emit(0, numerics::complex_mul_accumulate_grad_features(g, k));
      emit(1, numerics::complex_mul_accumulate_grad_kernel(g, f));
      break;
    }
    case Op::kScaleAndAdd: {
      const auto& g = std::get<ComplexGrid>(grad_value);
      const auto& a = std::get<ScaleAddAttrs>(node.attrs);
      RealGrid d_re(input_node(node, 0).shape), d_im(input_node(node, 1).shape);
      for (std::size_t k = 0; k < a.positions.size(); ++k) {
        d_re.data[k] = a.add_weight * g.re[a.positions[k]];
        d_im.data[k] = a.add_weight * g.im[a.positions[k]];
      }
      emit(0, std::move(d_re));
      emit(1, std::move(d_im));
      break;
    }
    case Op::kBinaryCrossEntropy: {
      const double upstream = std::get<RealGrid>(grad_value).data[0];
      const auto& p = std::get<RealGrid>(input_value(0));
      const auto& targets = std::get<BceAttrs>(node.attrs).targets;
      RealGrid dp(p.shape);
      const double n = static_cast<double>(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p.data[i], kProbabilityFloor, 1.0 - kProbabilityFloor);
        dp.data[i] = upstream * (q - targets[i]) / (q * (1.0 - q)) / n;
      }
      emit(0, std::move(dp));
      break;
    }
    case Op::kConv3x3: {
      const auto& g = std::get<RealGrid>(grad_value);
      const auto& x = std::get<RealGrid>(input_value(0));
      const auto& w = std::get<RealGrid>(input_value(1));
      const auto d = spatial_dims(x.shape, "conv3x3");
      const std::size_t c_out = w.shape[3];
      RealGrid dx(x.shape), dw(w.shape);
      const auto h_max = static_cast<long>(d.height);
      const auto w_max = static_cast<long>(d.width);
      for (std::size_t b = 0; b < d.batch; ++b) {
        for (long h = 0; h < h_max; ++h) {
          for (long c = 0; c < w_max; ++c) {
            const double* gout = g.data.data() + ((b * d.height + h) * d.width + c) * c_out;
            for (long dy = 0; dy < 3; ++dy) {
              const long hh = h + dy - 1;
              if (hh < 0 || hh >= h_max) continue;
              for (long dxo = 0; dxo < 3; ++dxo) {
                const long cc = c + dxo - 1;
                if (cc < 0 || cc >= w_max) continue;
                const std::size_t in_base = ((b * d.height + hh) * d.width + cc) * d.channels;
                const std::size_t w_base = ((dy * 3 + dxo) * d.channels) * c_out;
                for (std::size_t i = 0; i < d.channels; ++i) {
                  const double xv = x.data[in_base + i];
                  const double* wrow = w.data.data() + w_base + i * c_out;
                  double* dwrow = dw.data.data() + w_base + i * c_out;
                  double acc = 0.0;
                  for (std::size_t o = 0; o < c_out; ++o) {
                    acc += gout[o] * wrow[o];
                    dwrow[o] += gout[o] * xv;
                  }
                  dx.data[in_base + i] += acc;
                }
              }
            }
          }
        }
      }
      emit(0, std::move(dx));
      emit(1, std::move(dw));
      break;
    }
    case Op::kLeaf:
      break;
  }
}

GradStore Tape::backward(NodeRef loss) {
  if (consumed_) throw Error("Tape: backward already ran on this tape");
  if (loss.index >= nodes_.size()) throw Error("Tape: loss node out of range");
  const auto& loss_node = nodes_[loss.index];
  if (loss_node.is_complex || element_count(loss_node.shape) != 1) {
    throw ShapeError("Tape: loss must be a real scalar, got shape " + shape_string(loss_node.shape));
  }
  release_forward_only();
  consumed_ = true;

  std::vector<std::optional<Value>> grads(nodes_.size());
  grads[loss.index] = RealGrid(loss_node.shape, 1.0);
  GradStore store;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (grads[i]) {
      if (node.op == Op::kLeaf) {
        if (node.param) store.accumulate(*node.param, std::move(*grads[i]));
      } else {
        backward_node(node, *grads[i], grads);
      }
    }
    grads[i].reset();
    node.value.reset();
  }
  for (auto& node : nodes_) {
    node.value.reset();
    if (node.param && !store.contains(*node.param)) {
      store.accumulate(*node.param, zeros_like(node.shape, node.is_complex));
    }
  }
  return store;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double difference_resolution(double f_up, double f_down, double epsilon) {
  // A central difference cannot resolve gradients much finer than a few ulps of
  // f over epsilon; the floor sits 1e4 above that so round-off stays under 1e-4.
  constexpr double kUlps = 5.0;
  const double scale = std::max({std::abs(f_up), std::abs(f_down), 1.0});
  return std::max(1e-8, 1e4 * kUlps * std::numeric_limits<double>::epsilon() * scale / epsilon);
}

GradientCheckResult check_gradients(const DifferentiableFunction& f, std::vector<double> params,
                                    double epsilon) {
  std::vector<double> analytic(params.size(), 0.0);
  f(params, &analytic);
  if (analytic.size() != params.size()) {
    throw ShapeError("check_gradients: gradient has " + std::to_string(analytic.size()) +
                     " entries for " + std::to_string(params.size()) + " parameters");
  }
  GradientCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + epsilon;
    const double up = f(params, nullptr);
    params[i] = saved - epsilon;
    const double down = f(params, nullptr);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = relative_error(analytic[i], numeric, difference_resolution(up, down, epsilon));
    if (i == 0 || err > result.max_relative_error) result = {err, i, analytic[i], numeric};
  }
  return result;
}

}  // namespace cfconv::ad
