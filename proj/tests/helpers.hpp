#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rarity/dataset.hpp"
#include "rarity/neural.hpp"
#include "rarity/random.hpp"

namespace testutil {

using rarity::Dataset;
using rarity::Feature;
using rarity::FeatureKind;
using rarity::LabelVector;

// Continuous columns given column-wise.
inline Dataset make_dataset(const std::vector<std::string>& names,
                            const std::vector<std::vector<double>>& columns,
                            std::map<std::string, LabelVector> labels = {}) {
  std::size_t rows = columns.empty() ? 0 : columns[0].size();
  std::vector<Feature> features;
  for (const auto& n : names) features.push_back({n, FeatureKind::continuous, {}});
  std::vector<double> values(rows * names.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < names.size(); ++c) values[r * names.size() + c] = columns[c][r];
  }
  return Dataset(rows, std::move(features), std::move(values), std::move(labels));
}

// XOR truth table repeated `copies` times, label "y".
inline Dataset xor_dataset(std::size_t copies) {
  std::vector<double> a, b;
  LabelVector y;
  for (std::size_t c = 0; c < copies; ++c) {
    for (int i = 0; i < 4; ++i) {
      a.push_back(i >> 1);
      b.push_back(i & 1);
      y.push_back(static_cast<std::uint8_t>((i >> 1) ^ (i & 1)));
    }
  }
  return make_dataset({"a", "b"}, {a, b}, {{"y", y}});
}

// Mann-Whitney pair statistic by brute force: ties count one half.
inline double pair_auc(const std::vector<double>& s, const LabelVector& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
inline double ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    double fa = static_cast<double>(i) / a.size();
    double fb = static_cast<double>(j) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-12) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rarity_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Mean batch loss of a dense network evaluated with scalar loops over the flat
// parameter layout (per layer: weights column-major, then biases).
inline double reference_loss(const std::vector<std::size_t>& sizes,
                             const std::vector<rarity::Activation>& acts,
                             const std::vector<double>& params,
                             const std::vector<std::vector<double>>& inputs,
                             const std::vector<std::vector<double>>& targets, rarity::LossKind kind,
                             double activity_l2 = 0.0) {
  using rarity::Activation;
  double total = 0.0;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    std::vector<double> h = inputs[s];
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      std::size_t in = sizes[l], out = sizes[l + 1];
      std::vector<double> z(out, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < in; ++i) z[o] += params[offset + i * out + o] * h[i];
        z[o] += params[offset + in * out + o];
      }
      offset += (in + 1) * out;
      for (auto& v : z) {
        switch (acts[l]) {
          case Activation::sigmoid: v = 1.0 / (1.0 + std::exp(-v)); break;
          case Activation::tanh: v = std::tanh(v); break;
          case Activation::relu: v = v > 0.0 ? v : 0.0; break;
          case Activation::linear: break;
        }
      }
      h = z;
      if (l == 0) {
        for (double v : h) total += activity_l2 * v * v;
      }
    }
    const auto& y = targets[s];
    double k = static_cast<double>(y.size());
    switch (kind) {
      case rarity::LossKind::mse:
        for (std::size_t i = 0; i < y.size(); ++i) total += (h[i] - y[i]) * (h[i] - y[i]) / k;
        break;
      case rarity::LossKind::binary_cross_entropy:
        for (std::size_t i = 0; i < y.size(); ++i) {
          total -= (y[i] * std::log(h[i]) + (1.0 - y[i]) * std::log(1.0 - h[i])) / k;
        }
        break;
      case rarity::LossKind::cosine_proximity: {
        double dot = 0.0, nh = 0.0, ny = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
          dot += h[i] * y[i];
          nh += h[i] * h[i];
          ny += y[i] * y[i];
        }
        if (std::sqrt(nh) >= 1e-12 && std::sqrt(ny) >= 1e-12) total -= dot / std::sqrt(nh * ny);
        break;
      }
    }
  }
  return total / static_cast<double>(inputs.size());
}

struct GradientCheck {
  double relative_error = 0.0;  // ||a - n|| / max(||a|| + ||n||, 1e-6)
  std::string description;
};

// Random network, batch, loss and activity weight; analytic gradient from
// backprop against central differences of reference_loss with h = 1e-5.
inline GradientCheck gradient_check(std::uint64_t seed) {
  using rarity::Activation;
  using rarity::LossKind;
  rarity::Rng rng(seed);
  const Activation all[] = {Activation::sigmoid, Activation::tanh, Activation::relu,
                            Activation::linear};
  const LossKind kinds[] = {LossKind::mse, LossKind::binary_cross_entropy,
                            LossKind::cosine_proximity};
  std::size_t nlayers = 1 + rng.index(3);
  std::vector<std::size_t> sizes{1 + rng.index(8)};
  std::vector<Activation> acts;
  for (std::size_t l = 0; l < nlayers; ++l) {
    sizes.push_back(1 + rng.index(8));
    acts.push_back(all[rng.index(4)]);
  }
  LossKind kind = kinds[rng.index(3)];
  if (kind == LossKind::binary_cross_entropy) acts.back() = Activation::sigmoid;
  if (kind == LossKind::cosine_proximity && sizes.back() < 2) sizes.back() = 2;
  double activity = rng.bernoulli(0.3) ? rng.uniform(0.01, 0.5) : 0.0;
  auto net = rarity::make_network(sizes, acts, rng.next());
  auto params = net.parameters();
  for (auto& p : params) p += 0.1 * rng.normal();  // nonzero biases
  net.set_parameters(params);

  std::size_t batch = 1 + rng.index(5);
  Eigen::MatrixXd x(sizes.front(), batch), y(sizes.back(), batch);
  std::vector<std::vector<double>> xs(batch), ys(batch);
  for (std::size_t c = 0; c < batch; ++c) {
    for (std::size_t r = 0; r < sizes.front(); ++r) xs[c].push_back(x(r, c) = rng.normal());
    for (std::size_t r = 0; r < sizes.back(); ++r) {
      double t = kind == LossKind::binary_cross_entropy ? static_cast<double>(rng.bernoulli(0.5))
                                                        : rng.normal();
      ys[c].push_back(y(r, c) = t);
    }
  }
  rarity::BackpropOptions opts;
  opts.activity_l2 = activity;
  auto analytic = rarity::backprop(net, x, y, kind, opts).gradient;
  const double h = 1e-5;
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto plus = params, minus = params;
    plus[i] += h;
    minus[i] -= h;
    double numeric = (reference_loss(sizes, acts, plus, xs, ys, kind, activity) -
                      reference_loss(sizes, acts, minus, xs, ys, kind, activity)) /
                     (2.0 * h);
    diff += (analytic[i] - numeric) * (analytic[i] - numeric);
    na += analytic[i] * analytic[i];
    nn += numeric * numeric;
  }
  GradientCheck out;
  // Floor for vanishing gradients, well above finite-difference round-off.
  double denom = std::max(std::sqrt(na) + std::sqrt(nn), 1e-6);
  out.relative_error = std::sqrt(diff) / denom;
  std::string shape;
  for (auto s : sizes) shape += (shape.empty() ? "" : "-") + std::to_string(s);
  std::string act_names;
  for (auto a : acts) act_names += (act_names.empty() ? "" : ",") + std::string(rarity::to_string(a));
  out.description = shape + " [" + act_names + "] " + std::string(rarity::to_string(kind)) +
                    " batch=" + std::to_string(batch);
  return out;
}

inline std::vector<rarity::Marginal> base_marginals() {
  std::vector<rarity::Marginal> out;
  auto all = rarity::patent_marginals();
  for (const auto& name : rarity::patent_base_features()) {
    for (const auto& m : all) {
      if (m.name == name) out.push_back(m);
    }
  }
  return out;
}

}  // namespace testutil
