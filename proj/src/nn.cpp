#include "fsl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

constexpr double kLogClamp = 1e-12;

void check_layer(const Layer& layer, std::size_t index) {
  const auto where = "layer " + std::to_string(index) + ": ";
  if (layer.kind == LayerKind::kDense) {
    if (layer.weights.size() != layer.in * layer.out || layer.bias.size() != layer.out) {
      throw InputError(where + "dense parameter sizes do not match (in, out)");
    }
    return;
  }
  const ConvShape& c = layer.conv;
  if (c.kernel == 0 || c.pool == 0 || c.kernel > c.height || c.kernel > c.width ||
      c.pooled_height() == 0 || c.pooled_width() == 0) {
    throw InputError(where + "invalid convolution geometry");
  }
  if (layer.in != c.input_size() || layer.out != c.output_size() ||
      layer.weights.size() != c.filters * c.kernel * c.kernel || layer.bias.size() != c.filters) {
    throw InputError(where + "conv parameter sizes do not match its geometry");
  }
}

void dense_forward(const Layer& layer, const Matrix& in, Matrix& out) {
  out = Matrix(in.rows, layer.out);
  for (std::size_t b = 0; b < in.rows; ++b) {
    const auto x = in.row(b);
    auto z = out.row(b);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = layer.weights.data() + o * layer.in;
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * x[i];
      z[o] = acc;
    }
  }
}

void conv_forward(const Layer& layer, const Matrix& in, Matrix& pre, Matrix& out,
                  std::vector<std::uint32_t>& argmax) {
  const ConvShape& c = layer.conv;
  const std::size_t ch = c.conv_height(), cw = c.conv_width();
  const std::size_t ph = c.pooled_height(), pw = c.pooled_width();
  pre = Matrix(in.rows, c.conv_size());
  out = Matrix(in.rows, c.output_size());
  argmax.assign(in.rows * c.output_size(), 0);

  for (std::size_t b = 0; b < in.rows; ++b) {
    const auto img = in.row(b);
    auto z = pre.row(b);
    for (std::size_t f = 0; f < c.filters; ++f) {
      const double* kern = layer.weights.data() + f * c.kernel * c.kernel;
      for (std::size_t y = 0; y < ch; ++y) {
        for (std::size_t x = 0; x < cw; ++x) {
          double acc = layer.bias[f];
          for (std::size_t ky = 0; ky < c.kernel; ++ky) {
            const double* src = img.data() + (y + ky) * c.width + x;
            for (std::size_t kx = 0; kx < c.kernel; ++kx) acc += kern[ky * c.kernel + kx] * src[kx];
          }
          z[(f * ch + y) * cw + x] = acc;
        }
      }
    }
    auto a = out.row(b);
    std::uint32_t* arg = argmax.data() + b * c.output_size();
    for (std::size_t f = 0; f < c.filters; ++f) {
      for (std::size_t py = 0; py < ph; ++py) {
        for (std::size_t px = 0; px < pw; ++px) {
          std::size_t best = (f * ch + py * c.pool) * cw + px * c.pool;
          for (std::size_t dy = 0; dy < c.pool; ++dy) {
            for (std::size_t dx = 0; dx < c.pool; ++dx) {
              const std::size_t idx = (f * ch + py * c.pool + dy) * cw + px * c.pool + dx;
              if (z[idx] > z[best]) best = idx;
            }
          }
          const std::size_t o = (f * ph + py) * pw + px;
          arg[o] = static_cast<std::uint32_t>(best);
          a[o] = std::max(0.0, z[best]);
        }
      }
    }
  }
}

void check_one_hot(std::span<const double> probs, std::span<const double> y) {
  if (probs.size() != y.size() || y.empty()) throw InputError("probs and label vector differ in length");
  std::size_t ones = 0;
  for (double v : y) {
    if (v == 1.0) {
      ++ones;
    } else if (v != 0.0) {
      throw InputError("label vector is not one-hot");
    }
  }
  if (ones != 1) throw InputError("label vector is not one-hot");
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool Layer::same_shape(const Layer& other) const {
  return kind == other.kind && in == other.in && out == other.out &&
         weights.size() == other.weights.size() && bias.size() == other.bias.size() &&
         (kind == LayerKind::kDense || conv == other.conv);
}

ParameterSet::ParameterSet(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InputError("a model needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    check_layer(layers_[l], l);
    if (layers_[l].kind == LayerKind::kConv && l != 0) {
      throw InputError("a convolution layer may only be the first layer");
    }
    if (l + 1 < layers_.size() && layers_[l].out != layers_[l + 1].in) {
      throw InputError("layer " + std::to_string(l) + " output dim " + std::to_string(layers_[l].out) +
                       " does not match layer " + std::to_string(l + 1) + " input dim " +
                       std::to_string(layers_[l + 1].in));
    }
  }
  if (layers_.back().kind != LayerKind::kDense) throw InputError("the output layer must be dense");
}

std::size_t ParameterSet::size() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.parameter_count();
  return n;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (const auto& layer : layers_) {
    flat.insert(flat.end(), layer.weights.begin(), layer.weights.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void ParameterSet::assign_flat(std::span<const double> flat) {
  if (flat.size() != size()) {
    throw InputError("flat vector has " + std::to_string(flat.size()) + " entries, model has " +
                     std::to_string(size()));
  }
  auto it = flat.begin();
  for (auto& layer : layers_) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(layer.weights.size()), layer.weights.begin());
    it += static_cast<std::ptrdiff_t>(layer.weights.size());
    std::copy(it, it + static_cast<std::ptrdiff_t>(layer.bias.size()), layer.bias.begin());
    it += static_cast<std::ptrdiff_t>(layer.bias.size());
  }
}

ParameterSet ParameterSet::unflatten(const ParameterSet& shape, std::span<const double> flat) {
  ParameterSet out = shape;
  out.assign_flat(flat);
  return out;
}

bool ParameterSet::same_architecture(const ParameterSet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (!layers_[l].same_shape(other.layers_[l])) return false;
  }
  return true;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out = *this;
  for (auto& layer : out.layers_) {
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return out;
}

ParameterSet make_model(const Architecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  std::size_t in = arch.input_dim;

  auto init = [&rng](std::vector<double>& w, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : w) v = dist(rng);
  };

  if (arch.conv) {
    const ConvShape& c = *arch.conv;
    if (c.input_size() != arch.input_dim) {
      throw ConfigError("conv geometry " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                        " does not match input_dim " + std::to_string(arch.input_dim));
    }
    Layer layer;
    layer.kind = LayerKind::kConv;
    layer.conv = c;
    layer.in = c.input_size();
    layer.out = c.output_size();
    layer.weights.resize(c.filters * c.kernel * c.kernel);
    layer.bias.assign(c.filters, 0.0);
    init(layer.weights, c.kernel * c.kernel);
    in = layer.out;
    layers.push_back(std::move(layer));
  }

  std::vector<std::size_t> outs = arch.hidden;
  outs.push_back(arch.num_classes);
  for (std::size_t out : outs) {
    if (in == 0 || out == 0) throw ConfigError("layer widths must be positive");
    Layer layer;
    layer.in = in;
    layer.out = out;
    layer.weights.resize(in * out);
    layer.bias.assign(out, 0.0);
    init(layer.weights, in);
    layers.push_back(std::move(layer));
    in = out;
  }
  return ParameterSet(std::move(layers));
}

ForwardCache forward(const ParameterSet& model, const Matrix& inputs) {
  if (inputs.cols != model.input_dim()) {
    throw ConfigError("batch input dim " + std::to_string(inputs.cols) +
                      " does not match model input dim " + std::to_string(model.input_dim()));
  }
  const auto& layers = model.layers();
  ForwardCache cache;
  cache.inputs.resize(layers.size());
  cache.pre.resize(layers.size());
  cache.pool_argmax.resize(layers.size());

  Matrix act = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    cache.inputs[l] = std::move(act);
    if (layer.kind == LayerKind::kConv) {
      conv_forward(layer, cache.inputs[l], cache.pre[l], act, cache.pool_argmax[l]);
      continue;
    }
    dense_forward(layer, cache.inputs[l], cache.pre[l]);
    act = cache.pre[l];
    if (l + 1 < layers.size()) {
      for (auto& v : act.data) v = std::max(0.0, v);
    }
  }

  cache.logits = std::move(act);
  cache.probs = Matrix(cache.logits.rows, cache.logits.cols);
  for (std::size_t b = 0; b < cache.logits.rows; ++b) {
    const auto p = softmax(cache.logits.row(b));
    std::copy(p.begin(), p.end(), cache.probs.row(b).begin());
  }
  return cache;
}

ForwardCache forward(const ParameterSet& model, const Batch& batch) {
  if (batch.inputs.rows != batch.labels.size()) {
    throw InputError("batch has " + std::to_string(batch.inputs.rows) + " inputs but " +
                     std::to_string(batch.labels.size()) + " labels");
  }
  return forward(model, batch.inputs);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InputError("softmax of an empty vector");
  double max = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (std::isnan(v)) throw NumericError("softmax input contains NaN");
    if (!std::isfinite(v)) throw NumericError("softmax input is not finite");
    max = std::max(max, v);
  }
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

double cross_entropy(std::span<const double> probs, std::span<const double> y) {
  check_one_hot(probs, y);
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (y[i] == 1.0) loss -= std::log(std::max(probs[i], kLogClamp));
  }
  return loss;
}

std::vector<double> output_delta(std::span<const double> probs, std::span<const double> y) {
  check_one_hot(probs, y);
  std::vector<double> delta(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) delta[i] = probs[i] - y[i];
  return delta;
}

std::vector<double> one_hot(int label, std::size_t num_classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
    throw InputError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  std::vector<double> y(num_classes, 0.0);
  y[static_cast<std::size_t>(label)] = 1.0;
  return y;
}

ParameterSet backward(const ParameterSet& model, const ForwardCache& cache, std::span<const int> labels) {
  const auto& layers = model.layers();
  const std::size_t batch = labels.size();
  if (cache.inputs.size() != layers.size() || cache.probs.rows != batch ||
      cache.probs.cols != model.num_classes() || batch == 0) {
    throw InternalError("forward cache does not belong to this model and batch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (cache.inputs[l].cols != layers[l].in || cache.inputs[l].rows != batch) {
      throw InternalError("forward cache does not belong to this model and batch");
    }
  }

  ParameterSet grads = model.zeros_like();
  const double scale = 1.0 / static_cast<double>(batch);

  // Output error (p - y) / B, identity output activation.
  Matrix delta = cache.probs;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes()) {
      throw InputError("label " + std::to_string(y) + " outside the model's classes");
    }
    delta(b, static_cast<std::size_t>(y)) -= 1.0;
  }
  for (auto& v : delta.data) v *= scale;

  for (std::size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    Layer& g = grads.layers()[l];
    const Matrix& in = cache.inputs[l];

    if (layer.kind == LayerKind::kConv) {
      const ConvShape& c = layer.conv;
      const std::size_t ch = c.conv_height(), cw = c.conv_width();
      std::vector<double> dpre(c.conv_size());
      for (std::size_t b = 0; b < batch; ++b) {
        std::fill(dpre.begin(), dpre.end(), 0.0);
        const auto pre = cache.pre[l].row(b);
        const std::uint32_t* arg = cache.pool_argmax[l].data() + b * layer.out;
        for (std::size_t o = 0; o < layer.out; ++o) {
          if (pre[arg[o]] > 0.0) dpre[arg[o]] += delta(b, o);
        }
        const auto img = in.row(b);
        for (std::size_t f = 0; f < c.filters; ++f) {
          double* gk = g.weights.data() + f * c.kernel * c.kernel;
          for (std::size_t y = 0; y < ch; ++y) {
            for (std::size_t x = 0; x < cw; ++x) {
              const double d = dpre[(f * ch + y) * cw + x];
              if (d == 0.0) continue;
              g.bias[f] += d;
              for (std::size_t ky = 0; ky < c.kernel; ++ky) {
                const double* src = img.data() + (y + ky) * c.width + x;
                for (std::size_t kx = 0; kx < c.kernel; ++kx) gk[ky * c.kernel + kx] += d * src[kx];
              }
            }
          }
        }
      }
      continue;
    }

    for (std::size_t b = 0; b < batch; ++b) {
      const auto x = in.row(b);
      const auto d = delta.row(b);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double dv = d[o];
        g.bias[o] += dv;
        if (dv == 0.0) continue;
        double* gw = g.weights.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) gw[i] += dv * x[i];
      }
    }
    if (l == 0) break;

    Matrix next(batch, layer.in);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto d = delta.row(b);
      auto dn = next.row(b);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        const double* w = layer.weights.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) dn[i] += dv * w[i];
      }
    }
    // Dense hidden layers carry a ReLU; a conv predecessor handles its own
    // ReLU while routing through the pool argmax.
    if (layers[l - 1].kind == LayerKind::kDense) {
      const Matrix& pre = cache.pre[l - 1];
      for (std::size_t k = 0; k < next.data.size(); ++k) {
        if (pre.data[k] <= 0.0) next.data[k] = 0.0;
      }
    }
    delta = std::move(next);
  }
  return grads;
}

void sgd_step(ParameterSet& model, const ParameterSet& grads, double lr, double momentum,
              ParameterSet& velocity) {
  if (!model.same_architecture(grads) || !model.same_architecture(velocity)) {
    throw InputError("sgd_step: model, gradient and velocity shapes differ");
  }
  auto& ml = model.layers();
  auto& vl = velocity.layers();
  const auto& gl = grads.layers();
  auto update = [lr, momentum](std::vector<double>& w, std::vector<double>& v, const std::vector<double>& g) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= lr * v[i];
    }
  };
  for (std::size_t l = 0; l < ml.size(); ++l) {
    update(ml[l].weights, vl[l].weights, gl[l].weights);
    update(ml[l].bias, vl[l].bias, gl[l].bias);
  }
}

std::vector<double> last_layer_pseudo_gradient(const ParameterSet& global, const ParameterSet& local) {
  if (!global.same_architecture(local)) throw InputError("pseudo-gradient of models with different architectures");
  const Layer& g = global.last_layer();
  const Layer& w = local.last_layer();
  std::vector<double> out;
  out.reserve(g.parameter_count());
  for (std::size_t i = 0; i < g.weights.size(); ++i) out.push_back(g.weights[i] - w.weights[i]);
  for (std::size_t i = 0; i < g.bias.size(); ++i) out.push_back(g.bias[i] - w.bias[i]);
  return out;
}

double mean_loss(const ParameterSet& model, const Batch& batch) {
  const ForwardCache cache = forward(model, batch);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.labels.size(); ++b) {
    const double p = cache.probs(b, static_cast<std::size_t>(batch.labels[b]));
    total -= std::log(std::max(p, kLogClamp));
  }
  return total / static_cast<double>(batch.labels.size());
}

std::vector<int> predict(const ParameterSet& model, const Matrix& inputs) {
  const ForwardCache cache = forward(model, inputs);
  std::vector<int> out(inputs.rows);
  for (std::size_t b = 0; b < inputs.rows; ++b) {
    const auto p = cache.logits.row(b);
    out[b] = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  return out;
}

}  // namespace fsl
