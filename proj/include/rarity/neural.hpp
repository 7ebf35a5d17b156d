#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rarity/dataset.hpp"

namespace rarity {

enum class Activation { sigmoid, tanh, relu, linear };
enum class LossKind { mse, binary_cross_entropy, cosine_proximity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view text);
std::string_view to_string(LossKind k);
LossKind parse_loss_kind(std::string_view text);

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd biases;   // out
  Activation activation = Activation::linear;

  Eigen::Index inputs() const { return weights.cols(); }
  Eigen::Index outputs() const { return weights.rows(); }
};

enum class Mode { training, inference };

struct Network {
  std::vector<DenseLayer> layers;
  // Dropout applied to each layer's output in training mode (0 = none).
  std::vector<double> dropout;
  // Input feature names when trained on a Dataset (empty for raw use).
  std::vector<std::string> feature_names;
  std::uint64_t seed = 0;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().inputs(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().outputs(); }

  // Flat parameter vector: per layer, weights in column-major order then biases.
  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);
};

// sum over consecutive pairs of (in + 1) * out.
std::size_t param_count(std::span<const std::size_t> sizes);

// Builds a network with glorot-uniform weights and zero biases.
// `sizes` = {input, hidden..., output}; one activation per layer.
Network make_network(std::span<const std::size_t> sizes, std::span<const Activation> activations,
                     std::uint64_t seed, std::span<const double> dropout = {});

struct ForwardPass {
  // activations[0] is the input; activations[l + 1] is layer l's output
  // (after dropout when training). Columns are samples.
  std::vector<Eigen::MatrixXd> activations;
  std::vector<Eigen::MatrixXd> pre_activations;
  std::vector<Eigen::MatrixXd> masks;  // scaled dropout masks; empty when unused
  Eigen::MatrixXd output() const { return activations.back(); }
};

// Batch forward pass over the columns of `inputs`. Training mode applies
// inverted dropout with masks drawn from `dropout_seed`.
ForwardPass forward(const Network& net, const Eigen::MatrixXd& inputs, Mode mode = Mode::inference,
                    std::uint64_t dropout_seed = 0);
Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x);

// Per-sample loss. mse is the mean over output components.
double loss(LossKind kind, std::span<const double> predicted, std::span<const double> target);

struct BackpropOptions {
  Mode mode = Mode::inference;
  std::uint64_t dropout_seed = 0;
  // L2 activity penalty on the first layer's output: l2 * mean_i ||h1_i||^2.
  double activity_l2 = 0.0;
};

struct GradientResult {
  double loss = 0.0;            // mean batch loss including the activity term
  std::vector<double> gradient;  // same layout as Network::parameters()
};

// Exact gradient of the mean batch loss. Columns of `inputs`/`targets` are samples.
GradientResult backprop(const Network& net, const Eigen::MatrixXd& inputs,
                        const Eigen::MatrixXd& targets, LossKind kind,
                        const BackpropOptions& opts = {});

struct AdamHyper {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t parameters, AdamHyper h)
      : hyper(h), m(parameters, 0.0), v(parameters, 0.0) {}
};

// Bias-corrected Adam update of `params` in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

struct FitOptions {
  int epochs = 30;
  std::size_t batch = 512;
  double lr = 0.001;
  std::uint64_t shuffle_seed = 0;
  double activity_l2 = 0.0;
};

// Mini-batch Adam on the columns of `inputs`/`targets`, reshuffled every
// epoch; dropout is active. Returns the mean batch loss of each epoch.
std::vector<double> fit_network(Network& net, const Eigen::MatrixXd& inputs,
                                const Eigen::MatrixXd& targets, LossKind kind,
                                const FitOptions& opts);

// ---------------------------------------------------------------------------
// Feed-forward classifier

struct FfnArch {
  std::vector<std::size_t> hidden{22, 20, 15};
  std::vector<double> dropout{0.3, 0.2, 0.0};
  Activation hidden_activation = Activation::relu;
};

struct TrainOptions {
  int epochs = 30;
  std::size_t batch = 512;
  double lr = 0.001;
  std::uint64_t seed = 0;
};

// Sigmoid-output network trained with binary cross-entropy and Adam;
// mini-batches are reshuffled every epoch.
Network train_ffn(const Dataset& train, std::string_view label, const FfnArch& arch = {},
                  const TrainOptions& opts = {});

// Output-unit scores for every row; features matched by name.
std::vector<double> predict_network(const Network& net, const Dataset& ds);

// Feature matrix (features x rows) in the network's feature order.
Eigen::MatrixXd feature_matrix(const Dataset& ds, const std::vector<std::string>& names);

}  // namespace rarity
