#include <doctest.h>

#include "helpers.hpp"
#include "rarity/common.hpp"
#include "rarity/neural.hpp"

using namespace rarity;
using testutil::make_dataset;

namespace {

using Sizes = std::vector<std::size_t>;
using Acts = std::vector<Activation>;

Network single_linear(double w, double b) {
  Network net;
  DenseLayer layer;
  layer.weights = Eigen::MatrixXd::Constant(1, 1, w);
  layer.biases = Eigen::VectorXd::Constant(1, b);
  net.layers = {layer};
  net.dropout = {0.0};
  return net;
}

Dataset separable(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> a(n), b(n);
  LabelVector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    do {
      a[i] = rng.uniform(-2.0, 2.0);
      b[i] = rng.uniform(-2.0, 2.0);
    } while (std::abs(a[i] + b[i]) < 0.2);
    y[i] = a[i] + b[i] > 0.0;
  }
  return make_dataset({"a", "b"}, {a, b}, {{"y", y}});
}

}  // namespace

TEST_SUITE("neural") {

TEST_CASE("forward by hand") {
  Eigen::VectorXd x(1);
  x << 3.0;
  CHECK(forward(single_linear(2.0, 1.0), x)(0) == 7.0);
  auto relu = single_linear(1.0, 0.0);
  relu.layers[0].activation = Activation::relu;
  x << -5.0;
  CHECK(forward(relu, x)(0) == 0.0);
}

TEST_CASE("identity linear layers pass the input through") {
  Network net;
  for (int l = 0; l < 3; ++l) {
    DenseLayer layer;
    layer.weights = Eigen::MatrixXd::Identity(4, 4);
    layer.biases = Eigen::VectorXd::Zero(4);
    net.layers.push_back(layer);
    net.dropout.push_back(0.0);
  }
  Eigen::VectorXd x(4);
  x << 1.5, -2.0, 0.25, 8.0;
  CHECK(forward(net, x) == x);
}

TEST_CASE("forward rejects a wrong input width") {
  Eigen::VectorXd x(2);
  x << 1.0, 2.0;
  CHECK_THROWS_AS(forward(single_linear(1.0, 0.0), x), ValidationError);
}

TEST_CASE("parameter counts") {
  CHECK(param_count(Sizes{11, 9, 4, 4, 11}) == 223);
  CHECK(param_count(Sizes{11, 9}) == 108);
  CHECK(param_count(Sizes{9, 4}) == 40);
  CHECK(param_count(Sizes{4, 4}) == 20);
  CHECK(param_count(Sizes{4, 11}) == 55);
  CHECK(param_count(Sizes{2, 1}) == 3);
  CHECK_THROWS_AS(param_count(Sizes{5}), ValidationError);
  auto net = make_network(Sizes{11, 9, 4, 4, 11},
                          Acts{Activation::tanh, Activation::relu, Activation::tanh, Activation::relu},
                          1);
  CHECK(net.parameter_count() == 223);
}

TEST_CASE("losses by hand") {
  std::vector<double> y{0.2, -1.0, 3.0};
  CHECK(loss(LossKind::mse, y, y) == 0.0);
  std::vector<double> x{1.0, 2.0, -0.5}, x2{2.0, 4.0, -1.0};
  CHECK(loss(LossKind::cosine_proximity, x, x2) == doctest::Approx(-1.0));
  std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0}, zero{0.0, 0.0};
  CHECK(loss(LossKind::cosine_proximity, e1, e2) == 0.0);
  CHECK(loss(LossKind::cosine_proximity, zero, e2) == 0.0);
  std::vector<double> p{0.25}, t{1.0};
  CHECK(loss(LossKind::binary_cross_entropy, p, t) == doctest::Approx(std::log(4.0)));
  std::vector<double> bad{1.0};
  CHECK_THROWS_AS(loss(LossKind::binary_cross_entropy, bad, t), ValidationError);
  CHECK_THROWS_AS(loss(LossKind::mse, x, e1), ValidationError);
}

TEST_CASE("perfect linear fit has zero gradient") {
  auto net = make_network(Sizes{3, 2}, Acts{Activation::linear}, 4);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 6);
  Eigen::MatrixXd y = forward(net, x).output();
  for (double g : backprop(net, x, y, LossKind::mse).gradient) CHECK(g == 0.0);
}

TEST_CASE("gradients match finite differences over random shapes") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    auto check = testutil::gradient_check(seed);
    CAPTURE(check.description);
    CHECK(check.relative_error < 1e-4);
  }
}

TEST_CASE("reported batch loss matches the reference evaluation") {
  Sizes sizes{3, 4, 2};
  Acts acts{Activation::tanh, Activation::sigmoid};
  auto net = make_network(sizes, acts, 17);
  Eigen::MatrixXd x(3, 2), y(2, 2);
  x << 1, -1, 0.5, 2, -0.3, 0.1;
  y << 1, 0, 0, 1;
  std::vector<std::vector<double>> xs{{1, 0.5, -0.3}, {-1, 2, 0.1}}, ys{{1, 0}, {0, 1}};
  for (auto kind : {LossKind::mse, LossKind::binary_cross_entropy, LossKind::cosine_proximity}) {
    BackpropOptions opts;
    opts.activity_l2 = 0.05;
    CHECK(backprop(net, x, y, kind, opts).loss ==
          doctest::Approx(testutil::reference_loss(sizes, acts, net.parameters(), xs, ys, kind, 0.05))
              .epsilon(1e-12));
  }
}

TEST_CASE("doubling targets doubles the output bias gradient of a zero linear net") {
  auto net = make_network(Sizes{2, 3}, Acts{Activation::linear}, 1);
  net.set_parameters(std::vector<double>(net.parameter_count(), 0.0));
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 5);
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(3, 5);
  auto g1 = backprop(net, x, y, LossKind::mse).gradient;
  auto g2 = backprop(net, x, (2.0 * y).eval(), LossKind::mse).gradient;
  for (std::size_t i = 6; i < 9; ++i) CHECK(g2[i] == doctest::Approx(2.0 * g1[i]));
}

TEST_CASE("glorot initialization bounds and zero biases") {
  Sizes sizes{5, 7, 3};
  auto net = make_network(sizes, Acts{Activation::relu, Activation::linear}, 3);
  for (const auto& layer : net.layers) {
    double limit = std::sqrt(6.0 / (layer.inputs() + layer.outputs()));
    CHECK(layer.weights.cwiseAbs().maxCoeff() <= limit);
    CHECK(layer.biases.isZero());
  }
  auto again = make_network(sizes, Acts{Activation::relu, Activation::linear}, 3);
  CHECK(again.parameters() == net.parameters());
}

TEST_CASE("flat parameters round trip") {
  auto net = make_network(Sizes{3, 4, 2}, Acts{Activation::tanh, Activation::linear}, 8);
  auto p = net.parameters();
  CHECK(p.size() == 26);
  CHECK(p[0] == net.layers[0].weights(0, 0));
  CHECK(p[1] == net.layers[0].weights(1, 0));
  for (auto& v : p) v *= 2.0;
  net.set_parameters(p);
  CHECK(net.parameters() == p);
  CHECK_THROWS_AS(net.set_parameters(std::vector<double>(3)), ValidationError);
}

TEST_CASE("inference is dropout-free; training dropout keeps the expectation") {
  auto net = make_network(Sizes{1, 1, 1}, Acts{Activation::linear, Activation::linear}, 1,
                          std::vector<double>{0.3, 0.0});
  net.set_parameters(std::vector<double>{1.0, 0.0, 1.0, 0.0});
  const Eigen::Index n = 100000;
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, n, 2.0);
  CHECK(forward(net, x).output().isConstant(2.0));
  auto out = forward(net, x, Mode::training, 5).output();
  CHECK(out.mean() == doctest::Approx(2.0).epsilon(0.01));
  double zeros = (out.array() == 0.0).cast<double>().mean();
  CHECK(zeros == doctest::Approx(0.3).epsilon(0.02));
  CHECK(forward(net, x, Mode::training, 5).output() == out);
}

TEST_CASE("adam leaves parameters unchanged under zero gradient") {
  AdamState s(3, {});
  std::vector<double> p{1.0, -2.0, 0.5}, g(3, 0.0);
  auto before = p;
  adam_step(s, p, g);
  CHECK(p == before);
  CHECK(s.step == 1);
}

TEST_CASE("adam minimizes a quadratic") {
  AdamState s(1, {0.01});
  std::vector<double> w{1.0};
  int steps = 0;
  while (std::abs(w[0]) >= 1e-3 && steps < 2000) {
    std::vector<double> g{2.0 * w[0]};
    adam_step(s, w, g);
    ++steps;
  }
  CHECK(std::abs(w[0]) < 1e-3);
}

TEST_CASE("adam is deterministic and checks shapes") {
  AdamState a(2, {}), b(2, {});
  std::vector<double> pa{1.0, 2.0}, pb{1.0, 2.0}, g{0.3, -0.1};
  adam_step(a, pa, g);
  adam_step(b, pb, g);
  CHECK(pa == pb);
  CHECK(a.m == b.m);
  CHECK(a.v == b.v);
  std::vector<double> short_g{1.0};
  CHECK_THROWS_AS(adam_step(a, pa, short_g), ValidationError);
}

TEST_CASE("full-batch training loss is non-increasing at the start") {
  Rng rng(2);
  Eigen::MatrixXd x(3, 64), y(1, 64);
  for (Eigen::Index c = 0; c < 64; ++c) {
    for (Eigen::Index r = 0; r < 3; ++r) x(r, c) = rng.normal();
    y(0, c) = std::sin(x(0, c)) + 0.5 * x(1, c);
  }
  auto net = make_network(Sizes{3, 8, 1}, Acts{Activation::tanh, Activation::linear}, 6);
  AdamState state(net.parameter_count(), {});
  double prev = INFINITY;
  for (int step = 0; step < 10; ++step) {
    auto g = backprop(net, x, y, LossKind::mse);
    CHECK(g.loss <= prev);
    prev = g.loss;
    auto p = net.parameters();
    adam_step(state, p, g.gradient);
    net.set_parameters(p);
  }
}

TEST_CASE("default classifier architecture") {
  FfnArch arch;
  CHECK(arch.hidden == Sizes{22, 20, 15});
  CHECK(arch.dropout == std::vector<double>{0.3, 0.2, 0.0});
  TrainOptions opts;
  opts.epochs = 1;
  auto net = train_ffn(separable(1, 100), "y", arch, opts);
  REQUIRE(net.layers.size() == 4);
  CHECK(net.layers[0].outputs() == 22);
  CHECK(net.layers[1].outputs() == 20);
  CHECK(net.layers[2].outputs() == 15);
  CHECK(net.layers[3].outputs() == 1);
  CHECK(net.layers[3].activation == Activation::sigmoid);
  CHECK(net.dropout[0] == 0.3);
  CHECK(net.dropout[1] == 0.2);
}

TEST_CASE("classifier learns a separable problem") {
  auto ds = separable(3, 2000);
  TrainOptions opts;
  opts.epochs = 50;
  opts.batch = 32;
  opts.lr = 0.01;
  opts.seed = 4;
  auto net = train_ffn(ds, "y", {}, opts);
  auto p = predict_network(net, ds);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) ok += (p[i] > 0.5) == static_cast<bool>(ds.label("y")[i]);
  CHECK(ok / static_cast<double>(p.size()) >= 0.99);
}

TEST_CASE("classifier training is deterministic") {
  auto ds = separable(5, 300);
  TrainOptions opts;
  opts.epochs = 3;
  opts.batch = 64;
  opts.seed = 12;
  CHECK(train_ffn(ds, "y", {}, opts).parameters() == train_ffn(ds, "y", {}, opts).parameters());
  auto other = opts;
  other.seed = 13;
  CHECK(train_ffn(ds, "y", {}, opts).parameters() != train_ffn(ds, "y", {}, other).parameters());
}

TEST_CASE("fit_network reports one loss per epoch") {
  auto net = make_network(Sizes{2, 4, 2}, Acts{Activation::tanh, Activation::linear}, 1);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 50);
  FitOptions fo;
  fo.epochs = 7;
  fo.batch = 8;
  CHECK(fit_network(net, x, x, LossKind::mse, fo).size() == 7);
}

TEST_CASE("feature matrix follows the requested names") {
  auto ds = make_dataset({"a", "b"}, {{1, 2}, {3, 4}});
  auto m = feature_matrix(ds, {"b", "a"});
  CHECK(m(0, 0) == 3.0);
  CHECK(m(1, 1) == 2.0);
  CHECK_THROWS_AS(feature_matrix(ds, {"c"}), ValidationError);
}

}
