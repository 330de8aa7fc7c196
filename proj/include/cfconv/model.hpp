#pragma once

// The classifier: `layer_count` conv blocks (CF-Conv or spatial 3x3, each
// followed by a spatial ReLU), per-channel global average pooling, then dense
// 128 -> 64 -> 1 with ReLU and a final sigmoid.

#include <cstdint>
#include <random>
#include <vector>

#include "cfconv/autodiff.hpp"
#include "cfconv/config.hpp"
#include "cfconv/dataset.hpp"
#include "cfconv/kernelgen.hpp"
#include "cfconv/layer.hpp"
#include "cfconv/optimizer.hpp"

namespace cfconv::train {

struct DenseLayer {
  RealGrid weight;  // [out, in]
  RealGrid bias;    // [out]
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  bool baseline() const { return config_.baseline; }
  std::size_t conv_layer_count() const { return config_.layer_count; }
  kernelgen::KernelDims kernel_dims(std::size_t layer) const;

  /// Trainable tensors in parameter-id order: conv layers, then the head.
  std::vector<RealGrid*> parameters();
  std::vector<const RealGrid*> parameters() const;
  std::size_t parameter_count() const;
  /// First parameter id of conv layer `layer`.
  std::size_t first_param(std::size_t layer) const { return layer_param_offsets_.at(layer); }

  std::vector<conv::CFConvLayer> cf_layers;  // empty for the baseline
  std::vector<RealGrid> spatial_weights;     // [3, 3, C_in, C_out]; baseline only
  std::vector<DenseLayer> head;
  AdamMoments moments;
  std::mt19937_64 rng;
  std::uint64_t steps_taken = 0;

 private:
  ModelConfig config_;
  std::vector<std::size_t> layer_param_offsets_;
};

Model build_model(const ModelConfig& config);

/// One selection per CF-Conv layer (empty for the baseline).
using Selections = std::vector<kernelgen::SelectionSet>;

Selections draw_selections(Model& model);

struct ForwardTrace {
  ad::NodeRef probabilities;  // [B, 1]
  ad::NodeRef loss;
  std::vector<conv::EffectiveKernel> kernels;
};

/// Records the training-mode forward pass and loss on `tape`.
ForwardTrace record_forward(const Model& model, ad::Tape& tape, const Batch& batch,
                            const Selections& selections);

struct LossAndGradients {
  double loss = 0.0;
  std::vector<double> probabilities;
  ad::GradStore grads;
};

LossAndGradients loss_and_gradients(const Model& model, const Batch& batch,
                                    const Selections& selections);

struct StepMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double grad_norm = 0.0;
};

/// Sample -> blended forward -> backward -> Adam -> EMA commit. Throws
/// NumericalError naming the layer and step on non-finite values.
StepMetrics train_step(Model& model, const Batch& batch);

/// Inference-mode probabilities (stored kernels only), one per image.
std::vector<double> predict(const Model& model, const RealGrid& images);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

EvalResult evaluate(const Model& model, const Dataset& data, std::size_t batch_size = 32);

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1.
double binary_cross_entropy(std::span<const double> probabilities, std::span<const double> labels);

}  // namespace cfconv::train
