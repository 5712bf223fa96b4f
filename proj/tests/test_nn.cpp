#include <cmath>
#include <limits>

#include "doctest.h"
#include "fsl/data.hpp"
#include "fsl/errors.hpp"
#include "fsl/nn.hpp"
#include "oracles.hpp"

using namespace fsl;

namespace {

// Naive forward pass for dense ReLU nets, written from the layer definition.
Matrix naive_logits(const ParameterSet& model, const Matrix& x) {
  Matrix a = x;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const Layer& layer = model.layers()[l];
    Matrix z(a.rows, layer.out);
    for (std::size_t n = 0; n < a.rows; ++n) {
      for (std::size_t o = 0; o < layer.out; ++o) {
        double s = layer.bias[o];
        for (std::size_t i = 0; i < layer.in; ++i) s += layer.weights[o * layer.in + i] * a(n, i);
        z(n, o) = (l + 1 < model.layers().size()) ? std::max(s, 0.0) : s;
      }
    }
    a = z;
  }
  return a;
}

ParameterSet jittered(ParameterSet model, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  auto flat = model.flatten();
  for (auto& w : flat) w += n(rng);
  model.assign_flat(flat);
  return model;
}

}  // namespace

TEST_CASE("forward matches a naive matmul pass") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 10; ++t) {
    const auto model = jittered(oracle::random_model(rng, 7, {5, 4}, 3), rng);
    const auto batch = oracle::random_batch(rng, 6, 7, 3);
    const auto cache = forward(model, batch);
    const auto want = naive_logits(model, batch.inputs);
    for (std::size_t i = 0; i < want.data.size(); ++i) CHECK(cache.logits.data[i] == doctest::Approx(want.data[i]).epsilon(1e-13));
  }
}

TEST_CASE("softmax rows sum to one and survive extreme logits") {
  const auto p = softmax(std::vector<double>{1000.0, 0.0, -1000.0});
  CHECK(p[0] == 1.0);
  CHECK(p[2] >= 0.0);
  const auto q = softmax(std::vector<double>{0.3, -1.2, 2.0, 0.0});
  double s = 0.0;
  for (double v : q) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(softmax(std::vector<double>{0.0, std::nan("")}), NumericError);
}

TEST_CASE("cross entropy clamps log(0)") {
  const double ce = cross_entropy(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0});
  CHECK(ce == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(cross_entropy(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 1.0}), InputError);
}

TEST_CASE("output delta is p - y") {
  const auto d = output_delta(std::vector<double>{0.2, 0.7, 0.1}, std::vector<double>{0.0, 1.0, 0.0});
  CHECK(d[0] == 0.2);
  CHECK(d[1] == doctest::Approx(-0.3));
  CHECK(d[2] == 0.1);
  CHECK_THROWS_AS(output_delta(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}), InputError);
}

TEST_CASE("backward matches central finite differences") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 6; ++t) {
    const auto model = jittered(oracle::random_model(rng, 6, {5}, 4), rng);
    const auto batch = oracle::random_batch(rng, 3, 6, 4);
    CHECK(oracle::gradient_check(model, batch) < 1e-4);
  }
  SUBCASE("conv front-end") {
    Architecture arch;
    arch.conv = ConvShape{6, 6, 2, 3, 2};
    arch.input_dim = 36;
    arch.hidden = {4};
    arch.num_classes = 3;
    const auto model = jittered(make_model(arch, 5), rng);
    const auto batch = oracle::random_batch(rng, 3, 36, 3);
    CHECK(oracle::gradient_check(model, batch) < 1e-4);
  }
}

TEST_CASE("single-example last-layer gradients are delta and delta x activation") {
  std::mt19937_64 rng(8);
  const auto model = jittered(oracle::random_model(rng, 5, {4}, 3), rng);
  const auto batch = oracle::random_batch(rng, 1, 5, 3);
  const auto cache = forward(model, batch);
  const auto grads = backward(model, cache, batch.labels);
  const auto delta = output_delta(cache.probs.row(0), one_hot(batch.labels[0], 3));
  const Layer& last = grads.last_layer();
  const Matrix& a = cache.inputs.back();
  for (std::size_t o = 0; o < 3; ++o) {
    CHECK(last.bias[o] == delta[o]);
    for (std::size_t i = 0; i < last.in; ++i) CHECK(last.weights[o * last.in + i] == delta[o] * a(0, i));
  }
}

TEST_CASE("sgd momentum matches a hand-unrolled two-step update") {
  std::mt19937_64 rng(2);
  auto model = oracle::random_model(rng, 3, {}, 2);
  const auto w0 = model.flatten();
  auto g1 = model.zeros_like(), g2 = model.zeros_like();
  std::vector<double> a(w0.size()), b(w0.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = 0.1 * static_cast<double>(i) - 0.2;
    b[i] = 0.05 - 0.03 * static_cast<double>(i);
  }
  g1.assign_flat(a);
  g2.assign_flat(b);
  auto v = model.zeros_like();
  const double lr = 0.1, mu = 0.9;
  sgd_step(model, g1, lr, mu, v);
  sgd_step(model, g2, lr, mu, v);
  const auto w2 = model.flatten();
  for (std::size_t i = 0; i < w0.size(); ++i) {
    const double v1 = a[i];
    const double v2 = mu * v1 + b[i];
    CHECK(w2[i] == doctest::Approx(w0[i] - lr * v1 - lr * v2).epsilon(1e-15));
  }
}

TEST_CASE("flatten and unflatten round trip") {
  std::mt19937_64 rng(4);
  const auto model = oracle::random_model(rng, 4, {3}, 2);
  const auto flat = model.flatten();
  CHECK(flat.size() == model.size());
  CHECK(model.size() == 4 * 3 + 3 + 3 * 2 + 2);
  CHECK(ParameterSet::unflatten(model, flat) == model);
  CHECK_THROWS_AS(ParameterSet::unflatten(model, std::vector<double>(3)), InputError);
}

TEST_CASE("make_model is deterministic in the seed") {
  Architecture arch;
  CHECK(make_model(arch, 9) == make_model(arch, 9));
  CHECK_FALSE(make_model(arch, 9) == make_model(arch, 10));
  CHECK(make_model(arch, 9).size() == 784 * 32 + 32 + 32 * 10 + 10);
}

TEST_CASE("contract violations") {
  std::mt19937_64 rng(6);
  const auto model = oracle::random_model(rng, 4, {3}, 2);
  CHECK_THROWS_AS(forward(model, Matrix(2, 5)), ConfigError);
  const auto batch = oracle::random_batch(rng, 2, 4, 2);
  auto cache = forward(model, batch);
  const auto other = oracle::random_model(rng, 4, {5}, 2);
  CHECK_THROWS_AS(backward(other, cache, batch.labels), InternalError);
  CHECK_THROWS_AS(one_hot(3, 2), InputError);
}

TEST_CASE("last-layer pseudo-gradient is global minus local on the output layer") {
  std::mt19937_64 rng(1);
  const auto global = oracle::random_model(rng, 4, {3}, 2);
  auto local = global;
  local.layers().back().bias[1] -= 0.5;
  local.layers().front().weights[0] += 1.0;  // hidden change is ignored
  const auto g = last_layer_pseudo_gradient(global, local);
  CHECK(g.size() == 3 * 2 + 2);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == (i == g.size() - 1 ? 0.5 : 0.0));
}

TEST_CASE("training on MNIST decreases the loss between epoch 1 and epoch 5") {
  const std::filesystem::path dir = std::filesystem::path(FSL_SOURCE_DIR) / "data" / "mnist";
  const auto data = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  std::vector<std::size_t> first(1000);
  std::iota(first.begin(), first.end(), 0);
  const auto train = data.subset(first);
  const auto all = train.as_batch();
  auto model = make_model(Architecture{}, 1);
  auto v = model.zeros_like();
  std::mt19937_64 rng(1);
  std::vector<double> losses;
  std::vector<std::size_t> order = first;
  for (int epoch = 0; epoch < 5; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += 64) {
      const std::span<const std::size_t> idx(order.data() + s, std::min<std::size_t>(64, order.size() - s));
      const auto batch = train.gather(idx);
      const auto cache = forward(model, batch);
      sgd_step(model, backward(model, cache, batch.labels), 0.01, 0.9, v);
    }
    losses.push_back(mean_loss(model, all));
  }
  CHECK(losses[4] < losses[0]);
}
