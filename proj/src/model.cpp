#include "cfconv/model.hpp"

#include <algorithm>
#include <cmath>

#include "cfconv/error.hpp"

namespace cfconv::train {

namespace {

void init_uniform(RealGrid& g, double fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : g.data) v = dist(rng);
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Model::Model(ModelConfig config) : rng(config.seed), config_(std::move(config)) {
  validate(config_);
  std::size_t next_param = 0;
  std::size_t c_in = config_.input_channels;
  for (std::size_t l = 0; l < config_.layer_count; ++l) {
    layer_param_offsets_.push_back(next_param);
    const auto dims = kernel_dims(l);
    if (config_.baseline) {
      RealGrid w({3, 3, c_in, config_.filters_per_layer});
      init_uniform(w, 9.0 * static_cast<double>(c_in), rng);
      spatial_weights.push_back(std::move(w));
      next_param += 1;
    } else {
      cf_layers.emplace_back(dims, config_.parameterization, config_.mlp_widths, rng,
                             config_.ema_alpha, config_.ema_reading);
      next_param += cf_layers.back().tensor_count();
    }
    c_in = config_.filters_per_layer;
  }
  std::size_t fan_in = c_in;
  for (auto width : kernelgen::kHeadWidths) {
    DenseLayer d{RealGrid({width, fan_in}), RealGrid({width})};
    // The output layer starts at zero so the first predictions are 0.5.
    if (head.size() + 1 < kernelgen::kHeadWidths.size()) {
      init_uniform(d.weight, static_cast<double>(fan_in), rng);
    }
    head.push_back(std::move(d));
    fan_in = width;
  }
  auto params = parameters();
  moments = make_moments(params);
}

kernelgen::KernelDims Model::kernel_dims(std::size_t layer) const {
  const std::size_t c_in = layer == 0 ? config_.input_channels : config_.filters_per_layer;
  return {config_.input_height, config_.input_width, c_in, config_.filters_per_layer};
}

std::vector<RealGrid*> Model::parameters() {
  std::vector<RealGrid*> out;
  for (auto& layer : cf_layers) {
    auto t = layer.tensors();
    out.insert(out.end(), t.begin(), t.end());
  }
  for (auto& w : spatial_weights) out.push_back(&w);
  for (auto& d : head) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

std::vector<const RealGrid*> Model::parameters() const {
  std::vector<const RealGrid*> out;
  for (const auto& layer : cf_layers) {
    auto t = layer.tensors();
    out.insert(out.end(), t.begin(), t.end());
  }
  for (const auto& w : spatial_weights) out.push_back(&w);
  for (const auto& d : head) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto* p : parameters()) total += p->size();
  return total;
}

Model build_model(const ModelConfig& config) { return Model(config); }

Selections draw_selections(Model& model) {
  Selections out;
  for (const auto& layer : model.cf_layers) {
    const auto& dims = layer.dims();
    const std::size_t count = model.config().selected_positions
                                  ? std::min(*model.config().selected_positions, dims.total())
                                  : dims.total();
    out.push_back(kernelgen::sample_positions(dims, count, model.rng));
  }
  return out;
}

ForwardTrace record_forward(const Model& model, ad::Tape& tape, const Batch& batch,
                            const Selections& selections) {
  const auto& cfg = model.config();
  if (batch.size() == 0) throw DataError("empty batch");
  const auto& s = batch.images.shape;
  if (s.size() != 4 || s[1] != cfg.input_height || s[2] != cfg.input_width ||
      s[3] != cfg.input_channels) {
    throw ShapeError("batch images " + numerics::shape_string(s) + " do not match model input " +
                     std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width) +
                     "x" + std::to_string(cfg.input_channels));
  }
  if (!model.baseline() && selections.size() != model.cf_layers.size()) {
    throw ShapeError("record_forward: expected one selection per CF-Conv layer");
  }
  ForwardTrace trace;
  auto x = tape.constant(batch.images);
  for (std::size_t l = 0; l < cfg.layer_count; ++l) {
    ad::NodeRef y;
    if (model.baseline()) {
      auto w = tape.parameter(ad::ParamId{model.first_param(l)}, model.spatial_weights[l]);
      y = tape.conv3x3(x, w);
    } else {
      const auto& layer = model.cf_layers[l];
      trace.kernels.push_back(
          conv::build_effective_kernel(layer, selections[l], tape, model.first_param(l)));
      y = conv::forward(layer, x, trace.kernels.back(), tape);
    }
    x = tape.relu(y);
    if (!tape.real(x).all_finite()) {
      throw NumericalError("non-finite activations after conv layer " + std::to_string(l));
    }
  }
  auto h = tape.mean_pool_spatial(x);
  std::size_t id = model.parameters().size() - 2 * model.head.size();
  for (std::size_t d = 0; d < model.head.size(); ++d) {
    auto w = tape.parameter(ad::ParamId{id++}, model.head[d].weight);
    auto b = tape.parameter(ad::ParamId{id++}, model.head[d].bias);
    h = tape.linear(h, w, b);
    if (!tape.real(h).all_finite()) {
      throw NumericalError("non-finite activations after head layer " + std::to_string(d));
    }
    if (d + 1 < model.head.size()) h = tape.relu(h);
  }
  trace.probabilities = tape.sigmoid(h);
  trace.loss = tape.binary_cross_entropy(trace.probabilities, batch.labels);
  return trace;
}

LossAndGradients loss_and_gradients(const Model& model, const Batch& batch,
                                    const Selections& selections) {
  ad::Tape tape;
  auto trace = record_forward(model, tape, batch, selections);
  LossAndGradients out;
  out.loss = tape.real(trace.loss).data[0];
  out.probabilities = tape.real(trace.probabilities).data;
  out.grads = tape.backward(trace.loss);
  return out;
}

namespace {

double batch_accuracy(std::span<const double> probabilities, std::span<const double> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double predicted = probabilities[i] >= 0.5 ? 1.0 : 0.0;
    if (predicted == labels[i]) ++correct;
  }
  return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

StepMetrics train_step(Model& model, const Batch& batch) {
  const auto step = model.steps_taken;
  auto fail = [&](const std::string& what) {
    throw NumericalError(what + " at step " + std::to_string(step));
  };
  const Selections selections = draw_selections(model);

  ad::Tape tape;
  ForwardTrace trace;
  try {
    trace = record_forward(model, tape, batch, selections);
  } catch (const NumericalError& e) {
    fail(e.what());
  }
  const double loss = tape.real(trace.loss).data[0];
  if (!std::isfinite(loss)) fail("non-finite loss");
  const std::vector<double> probabilities = tape.real(trace.probabilities).data;

  std::vector<kernelgen::KernelValues> phi;
  for (const auto& k : trace.kernels) phi.push_back({tape.real(k.phi_re).data, tape.real(k.phi_im).data});

  const ad::GradStore grads = tape.backward(trace.loss);
  if (!grads.all_finite()) fail("non-finite gradients");

  auto params = model.parameters();
  std::vector<const RealGrid*> grad_ptrs;
  for (std::size_t i = 0; i < params.size(); ++i) grad_ptrs.push_back(&grads.real(ad::ParamId{i}));
  adam_update(params, grad_ptrs, model.moments, model.config().optimizer);

  for (std::size_t l = 0; l < model.cf_layers.size(); ++l) {
    conv::commit_update(model.cf_layers[l], selections[l], phi[l]);
  }
  ++model.steps_taken;
  return {loss, batch_accuracy(probabilities, batch.labels), std::sqrt(grads.squared_norm())};
}

std::vector<double> predict(const Model& model, const RealGrid& images) {
  const auto& cfg = model.config();
  RealGrid x = images;
  for (std::size_t l = 0; l < cfg.layer_count; ++l) {
    x = model.baseline() ? numerics::conv3x3_same(x, model.spatial_weights[l])
                         : conv::inference_forward(model.cf_layers[l], x);
    for (auto& v : x.data) v = v > 0.0 ? v : 0.0;
  }
  const std::size_t batch = x.shape[0];
  const std::size_t pixels = x.shape[1] * x.shape[2];
  const std::size_t channels = x.shape[3];
  std::vector<double> features(batch * channels, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t c = 0; c < channels; ++c) {
        features[b * channels + c] += x.data[(b * pixels + p) * channels + c];
      }
    }
  }
  for (auto& v : features) v /= static_cast<double>(pixels);

  std::size_t fan_in = channels;
  for (std::size_t d = 0; d < model.head.size(); ++d) {
    const auto& layer = model.head[d];
    const std::size_t fan_out = layer.bias.size();
    std::vector<double> next(batch * fan_out);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < fan_out; ++o) {
        double acc = layer.bias.data[o];
        for (std::size_t i = 0; i < fan_in; ++i) {
          acc += layer.weight.data[o * fan_in + i] * features[b * fan_in + i];
        }
        next[b * fan_out + o] = (d + 1 < model.head.size() && acc < 0.0) ? 0.0 : acc;
      }
    }
    features = std::move(next);
    fan_in = fan_out;
  }
  for (auto& v : features) v = stable_sigmoid(v);
  return features;
}

double binary_cross_entropy(std::span<const double> probabilities, std::span<const double> labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double q = std::clamp(probabilities[i], 1e-12, 1.0 - 1e-12);
    loss -= labels[i] * std::log(q) + (1.0 - labels[i]) * std::log(1.0 - q);
  }
  return labels.empty() ? 0.0 : loss / static_cast<double>(labels.size());
}

EvalResult evaluate(const Model& model, const Dataset& data, std::size_t batch_size) {
  BatchStream stream(data, BatchOptions{batch_size, false, false, 0}, 0);
  std::size_t correct = 0;
  double loss_sum = 0.0;
  while (auto batch = stream.next()) {
    const auto p = predict(model, batch->images);
    loss_sum += binary_cross_entropy(p, batch->labels) * static_cast<double>(batch->size());
    correct += static_cast<std::size_t>(
        std::lround(batch_accuracy(p, batch->labels) * static_cast<double>(batch->size())));
  }
  if (data.size() == 0) return {};
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss_sum / n};
}

}  // namespace cfconv::train
