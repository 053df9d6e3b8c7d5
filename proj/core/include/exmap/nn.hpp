#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "exmap/matrix.hpp"
#include "exmap/tensor.hpp"

namespace exmap::nn {

/// Fully connected layer. weight is (in_features, out_features).
struct Dense {
  Tensor weight;
  Tensor bias;
  friend bool operator==(const Dense&, const Dense&) = default;
};

/// Valid (unpadded) 2-D convolution. kernel is (out_ch, in_ch, kh, kw).
struct Conv2d {
  Tensor kernel;
  Tensor bias;
  std::size_t stride = 1;
  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

struct ReLU {
  friend bool operator==(ReLU, ReLU) = default;
};

/// Non-overlapping average pooling; trailing rows/cols that do not fill a
/// window are dropped.
struct AvgPool {
  std::size_t window = 2;
  friend bool operator==(AvgPool, AvgPool) = default;
};

struct Flatten {
  friend bool operator==(Flatten, Flatten) = default;
};

using Layer = std::variant<Dense, Conv2d, ReLU, AvgPool, Flatten>;

enum class LayerKind : std::uint8_t { kDense = 1, kConv2d = 2, kReLU = 3, kAvgPool = 4, kFlatten = 5 };

LayerKind kind_of(const Layer& layer);
std::string_view kind_name(LayerKind kind);

/// Ordered layer stack. Construction validates that per-sample shapes
/// compose from the input shape through to a 1-D logit vector.
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const noexcept { return shapes_.front(); }
  /// Per-sample input shape of layer i; index num_layers() gives the output.
  const Shape& shape_at(std::size_t i) const { return shapes_.at(i); }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t num_classes() const noexcept { return shapes_.back().at(0); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  /// Index of the last Dense layer, whose input is the penultimate feature.
  std::size_t final_dense_index() const;
  const Dense& final_dense() const;
  /// Replaces the last Dense layer; shapes must match the existing one.
  void set_final_dense(Dense dense);

  /// Parameter tensors in layer order (weight/kernel before bias).
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_{Shape{}};
};

/// Layer inputs retained from one batched forward pass; inputs[0] is the batch.
struct ForwardTrace {
  std::vector<Tensor> inputs;
};

struct ForwardResult {
  Tensor logits;  // (batch, C)
  ForwardTrace trace;
};

/// Gradients aligned one-to-one with Network::parameters().
using ParamGrads = std::vector<Tensor>;

/// Output shape of one layer for a per-sample input shape (throws kShape).
Shape layer_output_shape(const Layer& layer, const Shape& input, std::size_t index);

/// Applies one layer to a batch (leading axis = batch).
Tensor apply_layer(const Layer& layer, const Tensor& batch);

/// Vector-Jacobian product of one layer with respect to its input (batched).
/// For the linear layers this is the transpose map; LRP reuses it with
/// rule-modified weights.
Tensor input_vjp(const Layer& layer, const Tensor& input, const Tensor& grad_out);

/// Accepts either a batch (B, ...input_shape) or a single sample.
ForwardResult forward(const Network& net, const Tensor& batch);

/// Logits for arbitrarily many samples, evaluated in chunks without a trace.
Tensor predict_logits(const Network& net, const Tensor& images, std::size_t chunk = 256);
std::vector<int> predict_classes(const Network& net, const Tensor& images);

/// Inputs of the final Dense layer, one row per sample.
Matrix penultimate_features(const Network& net, const Tensor& images, std::size_t chunk = 256);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean softmax cross-entropy. With weights, the loss is
/// sum_i w_i * l_i / sum_i w_i (a weighted multiset mean).
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels,
                         std::span<const double> weights = {});

/// Stable log-softmax of one logit row.
std::vector<double> log_softmax(std::span<const double> logits);

ParamGrads backward(const Network& net, const ForwardTrace& trace, const Tensor& grad_logits);

/// Initializers ------------------------------------------------------------

/// He-uniform weights, zero biases.
void init_parameters(Network& net, std::uint64_t seed);

/// Conv(8,3x3) ReLU AvgPool(2) Conv(16,3x3) ReLU AvgPool(2) Flatten
/// Dense(64) ReLU Dense(C), He-initialized.
Network make_desk_net(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed);

/// Dense/ReLU stack with the given widths (widths[0] = input features).
Network make_dense_net(std::span<const std::size_t> widths, std::uint64_t seed,
                       bool with_bias = true);

}  // namespace exmap::nn
