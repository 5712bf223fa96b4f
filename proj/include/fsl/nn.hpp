#pragma once

// Minimal feed-forward classifier: dense layers with ReLU hidden activations,
// an identity output layer feeding softmax, and an optional single-channel
// convolution + max-pool front-end. All arithmetic is in double precision.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fsl/matrix.hpp"

namespace fsl {

enum class LayerKind { kDense, kConv };

// Valid 2-D convolution over a single-channel image, ReLU, then non-overlapping
// max pooling (floor division of the spatial extent).
struct ConvShape {
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t filters = 8;
  std::size_t kernel = 3;
  std::size_t pool = 2;

  std::size_t conv_height() const { return height - kernel + 1; }
  std::size_t conv_width() const { return width - kernel + 1; }
  std::size_t pooled_height() const { return conv_height() / pool; }
  std::size_t pooled_width() const { return conv_width() / pool; }
  std::size_t input_size() const { return height * width; }
  std::size_t conv_size() const { return filters * conv_height() * conv_width(); }
  std::size_t output_size() const { return filters * pooled_height() * pooled_width(); }

  bool operator==(const ConvShape&) const = default;
};

// One layer's parameters. Dense weights are out x in, row-major, so that
// weights[o * in + i] connects input i to output o. Conv weights are
// filters x (kernel * kernel).
struct Layer {
  LayerKind kind = LayerKind::kDense;
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;
  ConvShape conv{};

  std::size_t parameter_count() const { return weights.size() + bias.size(); }
  bool same_shape(const Layer& other) const;
  bool operator==(const Layer&) const = default;
};

// Layered model parameters. Also used for gradients, velocities and
// pseudo-gradients, which share the same shape.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const Layer& last_layer() const { return layers_.back(); }

  std::size_t input_dim() const { return layers_.front().in; }
  std::size_t num_classes() const { return layers_.back().out; }
  std::size_t size() const;

  // Canonical flat view: layer order, weights row-major, then bias.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);
  static ParameterSet unflatten(const ParameterSet& shape, std::span<const double> flat);

  bool same_architecture(const ParameterSet& other) const;
  ParameterSet zeros_like() const;

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<Layer> layers_;
};

struct Architecture {
  std::size_t input_dim = 784;
  std::vector<std::size_t> hidden = {32};
  std::size_t num_classes = 10;
  std::optional<ConvShape> conv;

  bool operator==(const Architecture&) const = default;
};

// He-uniform weights, zero biases, deterministic in `seed`.
ParameterSet make_model(const Architecture& arch, std::uint64_t seed);

struct Batch {
  Matrix inputs;
  std::vector<int> labels;
};

struct ForwardCache {
  std::vector<Matrix> inputs;       // input activation of each layer
  std::vector<Matrix> pre;          // pre-activation (conv: before pooling)
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // conv layers only
  Matrix logits;
  Matrix probs;
};

ForwardCache forward(const ParameterSet& model, const Matrix& inputs);
ForwardCache forward(const ParameterSet& model, const Batch& batch);

std::vector<double> softmax(std::span<const double> logits);
double cross_entropy(std::span<const double> probs, std::span<const double> one_hot);
std::vector<double> output_delta(std::span<const double> probs, std::span<const double> one_hot);
std::vector<double> one_hot(int label, std::size_t num_classes);

// Mean gradient of the cross-entropy loss over the batch.
ParameterSet backward(const ParameterSet& model, const ForwardCache& cache,
                      std::span<const int> labels);

// v <- momentum * v + g; w <- w - lr * v
void sgd_step(ParameterSet& model, const ParameterSet& grads, double lr, double momentum,
              ParameterSet& velocity);

// flatten(global.last - local.last), weights then bias.
std::vector<double> last_layer_pseudo_gradient(const ParameterSet& global,
                                               const ParameterSet& local);

double mean_loss(const ParameterSet& model, const Batch& batch);
std::vector<int> predict(const ParameterSet& model, const Matrix& inputs);

}  // namespace fsl
