#include "rarity/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "rarity/common.hpp"
#include "rarity/linear.hpp"
#include "rarity/random.hpp"

namespace rarity {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
  }
  return "linear";
}

Activation parse_activation(std::string_view text) {
  if (text == "sigmoid") return Activation::sigmoid;
  if (text == "tanh") return Activation::tanh;
  if (text == "relu") return Activation::relu;
  if (text == "linear") return Activation::linear;
  throw ValidationError("unknown activation '" + std::string(text) + "'");
}

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::binary_cross_entropy: return "binary_cross_entropy";
    case LossKind::cosine_proximity: return "cosine_proximity";
  }
  return "mse";
}

LossKind parse_loss_kind(std::string_view text) {
  if (text == "mse") return LossKind::mse;
  if (text == "binary_cross_entropy" || text == "bce") return LossKind::binary_cross_entropy;
  if (text == "cosine_proximity" || text == "cosine") return LossKind::cosine_proximity;
  throw ValidationError("unknown loss '" + std::string(text) + "'");
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& l : layers) total += static_cast<std::size_t>(l.weights.size() + l.biases.size());
  return total;
}

std::vector<double> Network::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weights.data(), l.weights.data() + l.weights.size());
    flat.insert(flat.end(), l.biases.data(), l.biases.data() + l.biases.size());
  }
  return flat;
}

void Network::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ValidationError("parameter vector has wrong size");
  std::size_t pos = 0;
  for (auto& l : layers) {
    std::copy_n(flat.data() + pos, l.weights.size(), l.weights.data());
    pos += static_cast<std::size_t>(l.weights.size());
    std::copy_n(flat.data() + pos, l.biases.size(), l.biases.data());
    pos += static_cast<std::size_t>(l.biases.size());
  }
}

std::size_t param_count(std::span<const std::size_t> sizes) {
  if (sizes.size() < 2) throw ValidationError("param_count: need at least two layer sizes");
  std::size_t total = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) total += (sizes[i] + 1) * sizes[i + 1];
  return total;
}

Network make_network(std::span<const std::size_t> sizes, std::span<const Activation> activations,
                     std::uint64_t seed, std::span<const double> dropout) {
  if (sizes.size() < 2) throw ValidationError("network needs at least two layer sizes");
  if (activations.size() != sizes.size() - 1) {
    throw ValidationError("network needs one activation per layer");
  }
  if (!dropout.empty() && dropout.size() != sizes.size() - 1) {
    throw ValidationError("network needs one dropout rate per layer");
  }
  Network net;
  net.seed = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (sizes[l] == 0 || sizes[l + 1] == 0) throw ValidationError("layer sizes must be positive");
    DenseLayer layer;
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    layer.weights.resize(out, in);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      layer.weights.data()[i] = rng.uniform(-limit, limit);
    }
    layer.biases = Eigen::VectorXd::Zero(out);
    layer.activation = activations[l];
    net.layers.push_back(std::move(layer));
    const double rate = dropout.empty() ? 0.0 : dropout[l];
    if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must lie in [0, 1)");
    net.dropout.push_back(rate);
  }
  return net;
}

namespace {

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::sigmoid: return z.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::linear: return z;
  }
  return z;
}

// Derivative of the activation given pre-activation z and output h.
Eigen::MatrixXd activation_derivative(Activation a, const Eigen::MatrixXd& z,
                                      const Eigen::MatrixXd& h) {
  switch (a) {
    case Activation::sigmoid: return (h.array() * (1.0 - h.array())).matrix();
    case Activation::tanh: return (1.0 - h.array().square()).matrix();
    case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::linear: return Eigen::MatrixXd::Ones(z.rows(), z.cols());
  }
  return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

double dropout_rate(const Network& net, std::size_t l) {
  // The output layer is never dropped.
  if (l + 1 == net.layers.size() || l >= net.dropout.size()) return 0.0;
  return net.dropout[l];
}

void check_network(const Network& net) {
  if (net.layers.empty()) throw ValidationError("network has no layers");
  for (std::size_t l = 1; l < net.layers.size(); ++l) {
    if (net.layers[l].inputs() != net.layers[l - 1].outputs()) {
      throw ValidationError("layer dimensions do not chain");
    }
  }
}

constexpr double kNormFloor = 1e-12;

}  // namespace

ForwardPass forward(const Network& net, const Eigen::MatrixXd& inputs, Mode mode,
                    std::uint64_t dropout_seed) {
  check_network(net);
  if (inputs.rows() != net.input_dim()) {
    throw ValidationError("forward: input has " + std::to_string(inputs.rows()) +
                          " features, network expects " + std::to_string(net.input_dim()));
  }
  ForwardPass pass;
  pass.activations.push_back(inputs);
  Rng rng(dropout_seed);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    Eigen::MatrixXd z = layer.weights * pass.activations.back();
    z.colwise() += layer.biases;
    Eigen::MatrixXd h = activate(layer.activation, z);
    const double rate = dropout_rate(net, l);
    Eigen::MatrixXd mask;
    if (mode == Mode::training && rate > 0.0) {
      mask.resize(h.rows(), h.cols());
      const double keep_scale = 1.0 / (1.0 - rate);
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
      }
      h = h.cwiseProduct(mask);
    }
    pass.pre_activations.push_back(std::move(z));
    pass.activations.push_back(std::move(h));
    pass.masks.push_back(std::move(mask));
  }
  return pass;
}

Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x) {
  Eigen::MatrixXd in = x;
  return forward(net, in, Mode::inference).activations.back().col(0);
}

double loss(LossKind kind, std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw ValidationError("loss: length mismatch");
  if (predicted.empty()) throw ValidationError("loss: empty vectors");
  const double k = static_cast<double>(predicted.size());
  switch (kind) {
    case LossKind::mse: {
      double s = 0.0;
      for (std::size_t i = 0; i < predicted.size(); ++i) {
        s += (predicted[i] - target[i]) * (predicted[i] - target[i]);
      }
      return s / k;
    }
    case LossKind::binary_cross_entropy: {
      double s = 0.0;
      for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double p = predicted[i];
        if (!(p > 0.0 && p < 1.0)) {
          throw ValidationError("binary cross-entropy needs predictions in (0, 1)");
        }
        s += target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
      }
      return -s / k;
    }
    case LossKind::cosine_proximity: {
      double dot = 0.0, np = 0.0, nt = 0.0;
      for (std::size_t i = 0; i < predicted.size(); ++i) {
        dot += predicted[i] * target[i];
        np += predicted[i] * predicted[i];
        nt += target[i] * target[i];
      }
      np = std::sqrt(np);
      nt = std::sqrt(nt);
      if (np < kNormFloor || nt < kNormFloor) return 0.0;
      return -dot / (np * nt);
    }
  }
  return 0.0;
}

GradientResult backprop(const Network& net, const Eigen::MatrixXd& inputs,
                        const Eigen::MatrixXd& targets, LossKind kind, const BackpropOptions& opts) {
  const auto pass = forward(net, inputs, opts.mode, opts.dropout_seed);
  const Eigen::MatrixXd& out = pass.activations.back();
  if (targets.rows() != out.rows() || targets.cols() != out.cols()) {
    throw ValidationError("backprop: target shape does not match network output");
  }
  const auto batch = static_cast<double>(inputs.cols());
  const auto k = static_cast<double>(out.rows());
  const std::size_t nl = net.layers.size();
  const auto& last = net.layers.back();

  GradientResult result;
  // delta = dL/dz for the current layer, columns are samples.
  Eigen::MatrixXd delta(out.rows(), out.cols());
  const bool fused = kind == LossKind::binary_cross_entropy && last.activation == Activation::sigmoid;
  double total = 0.0;
  if (fused) {
    // Cross-entropy on logits: stable and its gradient is (p - y).
    const auto& z = pass.pre_activations.back();
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      for (Eigen::Index r = 0; r < out.rows(); ++r) {
        total += softplus(z(r, c)) - targets(r, c) * z(r, c);
        delta(r, c) = (out(r, c) - targets(r, c)) / (k * batch);
      }
    }
    total /= k;
  } else {
    Eigen::MatrixXd grad_out(out.rows(), out.cols());
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      std::span<const double> yhat(out.col(c).data(), static_cast<std::size_t>(out.rows()));
      std::span<const double> y(targets.col(c).data(), static_cast<std::size_t>(out.rows()));
      total += loss(kind, yhat, y);
      switch (kind) {
        case LossKind::mse:
          grad_out.col(c) = 2.0 * (out.col(c) - targets.col(c)) / k;
          break;
        case LossKind::binary_cross_entropy:
          grad_out.col(c) = ((out.col(c) - targets.col(c)).array() /
                             (out.col(c).array() * (1.0 - out.col(c).array())))
                                .matrix() /
                            k;
          break;
        case LossKind::cosine_proximity: {
          const double np = out.col(c).norm();
          const double nt = targets.col(c).norm();
          if (np < kNormFloor || nt < kNormFloor) {
            grad_out.col(c).setZero();
          } else {
            const double dot = out.col(c).dot(targets.col(c));
            grad_out.col(c) =
                -(targets.col(c) / (np * nt) - dot * out.col(c) / (np * np * np * nt));
          }
          break;
        }
      }
    }
    delta = (grad_out / batch)
                .cwiseProduct(activation_derivative(last.activation, pass.pre_activations.back(),
                                                    out));
  }
  total /= batch;

  // Activity penalty on the first layer output (before any dropout).
  Eigen::MatrixXd first_output;
  if (opts.activity_l2 > 0.0) {
    first_output = activate(net.layers[0].activation, pass.pre_activations[0]);
    total += opts.activity_l2 * first_output.squaredNorm() / batch;
  }
  result.loss = total;

  std::vector<Eigen::MatrixXd> dw(nl);
  std::vector<Eigen::VectorXd> db(nl);
  for (std::size_t l = nl; l-- > 0;) {
    if (l == 0 && opts.activity_l2 > 0.0) {
      const auto& z = pass.pre_activations[0];
      delta += ((2.0 * opts.activity_l2 / batch) * first_output)
                   .cwiseProduct(activation_derivative(net.layers[0].activation, z, first_output));
    }
    dw[l] = delta * pass.activations[l].transpose();
    db[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd d_act = net.layers[l].weights.transpose() * delta;
    const auto& mask = pass.masks[l - 1];
    if (mask.size() > 0) d_act = d_act.cwiseProduct(mask);
    const auto& z = pass.pre_activations[l - 1];
    const Eigen::MatrixXd h = activate(net.layers[l - 1].activation, z);
    delta = d_act.cwiseProduct(activation_derivative(net.layers[l - 1].activation, z, h));
  }

  result.gradient.reserve(net.parameter_count());
  for (std::size_t l = 0; l < nl; ++l) {
    result.gradient.insert(result.gradient.end(), dw[l].data(), dw[l].data() + dw[l].size());
    result.gradient.insert(result.gradient.end(), db[l].data(), db[l].data() + db[l].size());
  }
  return result;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ValidationError("adam_step: shape mismatch");
  }
  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grads[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
}

std::vector<double> fit_network(Network& net, const Eigen::MatrixXd& inputs,
                                const Eigen::MatrixXd& targets, LossKind kind,
                                const FitOptions& opts) {
  if (inputs.cols() != targets.cols()) throw ValidationError("fit_network: row count mismatch");
  if (opts.batch == 0 || opts.epochs < 0) throw ValidationError("fit_network: invalid options");
  const auto n = static_cast<std::size_t>(inputs.cols());
  Rng rng(opts.shuffle_seed);
  AdamState adam(net.parameter_count(), AdamHyper{opts.lr});
  std::vector<double> params = net.parameters();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_loss;
  BackpropOptions bo;
  bo.mode = Mode::training;
  bo.activity_l2 = opts.activity_l2;
  Eigen::MatrixXd xb, yb;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += opts.batch) {
      const std::size_t end = std::min(n, start + opts.batch);
      const auto b = static_cast<Eigen::Index>(end - start);
      xb.resize(inputs.rows(), b);
      yb.resize(targets.rows(), b);
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto r = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]);
        xb.col(i) = inputs.col(r);
        yb.col(i) = targets.col(r);
      }
      bo.dropout_seed = rng.next();
      auto g = backprop(net, xb, yb, kind, bo);
      adam_step(adam, params, g.gradient);
      net.set_parameters(params);
      total += g.loss;
      ++batches;
    }
    epoch_loss.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  return epoch_loss;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd feature_matrix(const Dataset& ds, const std::vector<std::string>& names) {
  const auto cols = map_features(ds, names);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(ds.rows()));
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r)) = ds.at(r, cols[j]);
    }
  }
  return x;
}

Network train_ffn(const Dataset& train, std::string_view label, const FfnArch& arch,
                  const TrainOptions& opts) {
  const auto& y = train.label(label);
  if (train.rows() == 0) throw ValidationError("train_ffn: empty dataset");
  if (opts.batch == 0 || opts.epochs < 0) throw ValidationError("train_ffn: invalid options");
  for (const auto& f : train.features()) {
    if (f.kind == FeatureKind::categorical) {
      throw ValidationError("feature '" + f.name + "' is categorical; one-hot encode it first");
    }
  }
  if (!arch.dropout.empty() && arch.dropout.size() != arch.hidden.size()) {
    throw ValidationError("train_ffn: one dropout rate per hidden layer");
  }
  std::vector<std::size_t> sizes{train.cols()};
  sizes.insert(sizes.end(), arch.hidden.begin(), arch.hidden.end());
  sizes.push_back(1);
  std::vector<Activation> acts(arch.hidden.size(), arch.hidden_activation);
  acts.push_back(Activation::sigmoid);
  std::vector<double> dropout = arch.dropout;
  dropout.resize(arch.hidden.size(), 0.0);
  dropout.push_back(0.0);

  Network net = make_network(sizes, acts, mix_seed(opts.seed, 0), dropout);
  net.feature_names = train.feature_names();
  net.seed = opts.seed;

  const Eigen::MatrixXd x = feature_matrix(train, net.feature_names);
  Eigen::MatrixXd targets(1, x.cols());
  for (std::size_t r = 0; r < train.rows(); ++r) targets(0, static_cast<Eigen::Index>(r)) = y[r];
  FitOptions fo;
  fo.epochs = opts.epochs;
  fo.batch = opts.batch;
  fo.lr = opts.lr;
  fo.shuffle_seed = mix_seed(opts.seed, 1);
  fit_network(net, x, targets, LossKind::binary_cross_entropy, fo);
  return net;
}

std::vector<double> predict_network(const Network& net, const Dataset& ds) {
  const Eigen::MatrixXd x = feature_matrix(ds, net.feature_names);
  const auto pass = forward(net, x, Mode::inference);
  const auto& out = pass.activations.back();
  std::vector<double> scores(ds.rows());
  for (std::size_t r = 0; r < ds.rows(); ++r) scores[r] = out(0, static_cast<Eigen::Index>(r));
  return scores;
}

}  // namespace rarity
