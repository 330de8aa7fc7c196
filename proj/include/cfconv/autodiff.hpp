#pragma once

// Reverse-mode differentiation over the closed set of ops the CF-Conv model
// needs. Complex values are differentiated in split (re, im) coordinates: the
// gradient of a real loss with respect to a complex grid is the complex grid
// dL/dre + j dL/dim.
//
// Each op declares which forward values its backward rule reads. Values no
// backward rule needs are dropped before the backward sweep, and every node's
// value and gradient are released once the sweep has passed it.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "cfconv/numerics.hpp"

namespace cfconv::ad {

using numerics::ComplexGrid;
using numerics::RealGrid;
using numerics::Shape;

using Value = std::variant<RealGrid, ComplexGrid>;

enum class Op : std::uint8_t {
  kLeaf,
  kLinear,
  kRelu,
  kSigmoid,
  kMeanPoolSpatial,
  kFft2d,
  kIfft2dReal,
  kComplexMulAccumulate,
  kScaleAndAdd,
  kBinaryCrossEntropy,
  kConv3x3,
};

std::string_view op_name(Op op);

struct NodeRef {
  std::size_t index = 0;
};

struct ParamId {
  std::size_t value = 0;
  auto operator<=>(const ParamId&) const = default;
};

/// Row n of the input uses weight instance groups[n]. Empty means one shared instance.
struct LinearAttrs {
  std::vector<std::uint32_t> groups;
};

struct FftAttrs {
  std::size_t first_axis = 0;
  bool inverse = false;
};

/// keep * old + add * fresh, shared by the scale-and-add op and by callers
/// that must reproduce its result bit for bit.
inline double blend(double keep, double old, double add, double fresh) {
  return keep * old + add * fresh;
}

/// out = base; out[p_k] = keep * base[p_k] + add * (re_k + j im_k).
struct ScaleAddAttrs {
  ComplexGrid base;
  std::vector<std::size_t> positions;
  double keep_weight = 1.0;
  double add_weight = 0.0;
};

struct BceAttrs {
  std::vector<double> targets;
};

using Attributes = std::variant<std::monostate, LinearAttrs, FftAttrs, ScaleAddAttrs, BceAttrs>;

class GradStore {
 public:
  bool contains(ParamId id) const { return grads_.count(id) != 0; }
  const Value& at(ParamId id) const;
  const RealGrid& real(ParamId id) const;
  const ComplexGrid& complex(ParamId id) const;
  std::size_t size() const { return grads_.size(); }
  double squared_norm() const;
  bool all_finite() const;

  void accumulate(ParamId id, Value grad);

 private:
  std::map<ParamId, Value> grads_;
};

class Tape {
 public:
  NodeRef constant(Value value);
  NodeRef parameter(ParamId id, Value value);

  /// Generic entry point; the typed helpers below forward here.
  NodeRef record(Op op, std::vector<NodeRef> inputs, Attributes attrs = {});

  /// x [N, in], w [out, in] or [G, out, in], b [out] or [G, out].
  NodeRef linear(NodeRef x, NodeRef w, NodeRef b, std::vector<std::uint32_t> groups = {});
  NodeRef relu(NodeRef x);
  NodeRef sigmoid(NodeRef x);
  /// [H, W, C] -> [C] or [B, H, W, C] -> [B, C].
  NodeRef mean_pool_spatial(NodeRef x);
  NodeRef fft_2d(NodeRef x, std::size_t first_axis = 0, bool inverse = false);
  NodeRef ifft_2d_real(NodeRef x, std::size_t first_axis = 0);
  NodeRef complex_mul_accumulate(NodeRef features, NodeRef kernel);
  NodeRef scale_and_add(NodeRef re_values, NodeRef im_values, ComplexGrid base,
                        std::vector<std::size_t> positions, double keep_weight,
                        double add_weight);
  /// Mean binary cross-entropy of probabilities against (possibly soft) targets.
  NodeRef binary_cross_entropy(NodeRef probabilities, std::vector<double> targets);
  /// Zero-padded "same" 3x3 cross-correlation: x [B, H, W, C_in], w [3, 3, C_in, C_out].
  NodeRef conv3x3(NodeRef x, NodeRef w);

  const Value& value(NodeRef node) const;
  const RealGrid& real(NodeRef node) const;
  const ComplexGrid& complex(NodeRef node) const;
  const Shape& shape(NodeRef node) const { return nodes_.at(node.index).shape; }
  Op op(NodeRef node) const { return nodes_.at(node.index).op; }

  std::size_t size() const { return nodes_.size(); }
  /// Bytes of forward values currently held for use by backward rules.
  std::size_t saved_bytes() const;
  /// Bytes of every forward value still resident.
  std::size_t resident_bytes() const;
  /// Drops every value no backward rule reads.
  void release_forward_only();

  /// Gradients of a single-element loss with respect to every parameter leaf.
  /// Parameters the loss does not reach receive zero gradients. The tape's
  /// values are consumed.
  GradStore backward(NodeRef loss);

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<std::size_t> inputs;
    std::optional<Value> value;
    Shape shape;
    bool is_complex = false;
    std::optional<ParamId> param;
    Attributes attrs;
    bool retained = false;
  };

  NodeRef push(Node node);
  const Node& input_node(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]]; }
  void backward_node(const Node& node, const Value& grad,
                     std::vector<std::optional<Value>>& grads) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Objective for check_gradients: returns f(params) and, when `gradient` is
/// non-null, writes the analytic gradient into it.
using DifferentiableFunction =
    std::function<double(std::span<const double> params, std::vector<double>* gradient)>;

/// Central differences per coordinate. Relative error uses the denominator
/// max(|analytic|, |numeric|, difference_resolution(f+, f-, epsilon)).
GradientCheckResult check_gradients(const DifferentiableFunction& f,
                                    std::vector<double> params, double epsilon);

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Denominator floor for a central difference with step `epsilon`: the larger
/// of 1e-8 and 1e4 times the round-off resolution 5 ulp(max(|f|, 1)) / epsilon.
double difference_resolution(double f_up, double f_down, double epsilon);

}  // namespace cfconv::ad
