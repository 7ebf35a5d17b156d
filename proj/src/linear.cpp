#include "rarity/linear.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "rarity/common.hpp"

namespace rarity {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

std::vector<std::size_t> map_features(const Dataset& ds, const std::vector<std::string>& names) {
  std::vector<std::size_t> cols;
  cols.reserve(names.size());
  for (const auto& name : names) {
    auto idx = ds.find_feature(name);
    if (!idx) throw ValidationError("feature mismatch: dataset lacks '" + name + "'");
    cols.push_back(*idx);
  }
  return cols;
}

double penalty(std::span<const double> coefficients, double lambda, double alpha) {
  if (!(lambda >= 0.0)) throw ValidationError("penalty: lambda must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("penalty: alpha must lie in [0, 1]");
  double total = 0.0;
  for (double b : coefficients) total += (1.0 - alpha) * std::abs(b) + alpha * b * b;
  return lambda * total;
}

namespace {

const LabelVector& binary_label(const Dataset& train, std::string_view label) {
  const auto& y = train.label(label);  // Dataset guarantees values in {0, 1}
  if (train.rows() == 0) throw ValidationError("cannot fit on an empty dataset");
  return y;
}

void require_numeric(const Dataset& ds) {
  for (const auto& f : ds.features()) {
    if (f.kind == FeatureKind::categorical) {
      throw ValidationError("feature '" + f.name + "' is categorical; one-hot encode it first");
    }
  }
}

std::vector<double> sample_sd(const Dataset& ds) {
  std::vector<double> sd(ds.cols(), 0.0);
  if (ds.rows() < 2) return sd;
  for (std::size_t j = 0; j < ds.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < ds.rows(); ++r) mean += ds.at(r, j);
    mean /= static_cast<double>(ds.rows());
    double ss = 0.0;
    for (std::size_t r = 0; r < ds.rows(); ++r) ss += (ds.at(r, j) - mean) * (ds.at(r, j) - mean);
    sd[j] = std::sqrt(ss / static_cast<double>(ds.rows() - 1));
  }
  return sd;
}

double log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y[i] * eta[i] - softplus(eta[i]);
  return ll;
}

// Fitted probabilities are numerically 0 or 1 beyond this linear predictor.
constexpr double kSeparationEta = 34.0;

}  // namespace

LogitModel fit_logit(const Dataset& train, std::string_view label, const LogitOptions& opts) {
  const auto& labels = binary_label(train, label);
  require_numeric(train);
  const auto n = static_cast<Eigen::Index>(train.rows());
  const auto p = static_cast<Eigen::Index>(train.cols());

  Eigen::MatrixXd x(n, p + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) x(i, j + 1) = train.at(i, j);
    y[i] = labels[i];
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  Eigen::VectorXd eta = x * beta;
  double ll = log_likelihood(eta, y);

  LogitModel model;
  model.feature_names = train.feature_names();
  model.feature_sd = sample_sd(train);

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    model.iterations = iter;
    Eigen::VectorXd prob(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = sigmoid(eta[i]);
      w[i] = prob[i] * (1.0 - prob[i]);
    }
    const Eigen::VectorXd grad = x.transpose() * (y - prob);
    const Eigen::MatrixXd hess = x.transpose() * w.asDiagonal() * x;
    const Eigen::VectorXd step = hess.completeOrthogonalDecomposition().solve(grad);

    // Step halving keeps the log-likelihood non-decreasing.
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    Eigen::VectorXd next_eta = x * next;
    double next_ll = log_likelihood(next_eta, y);
    while (next_ll < ll && scale > 1e-10) {
      scale *= 0.5;
      next = beta + scale * step;
      next_eta = x * next;
      next_ll = log_likelihood(next_eta, y);
    }
    if (next_ll < ll) {
      // No ascent direction left; current point is as good as it gets.
      model.converged = true;
      break;
    }
    const double change = std::abs(next_ll - ll);
    beta = next;
    eta = next_eta;
    ll = next_ll;
    if (change < opts.tol) {
      model.converged = true;
      break;
    }
  }
  if (n > 0 && eta.cwiseAbs().maxCoeff() > kSeparationEta) model.converged = false;

  model.intercept = beta[0];
  model.coefficients.assign(beta.data() + 1, beta.data() + beta.size());
  model.log_likelihood = ll;
  return model;
}

ElasticNetModel fit_elastic_net(const Dataset& train, std::string_view label, double lambda,
                                double alpha, const ElasticNetOptions& opts) {
  if (!(lambda >= 0.0)) throw ValidationError("elastic net: lambda must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("elastic net: alpha must lie in [0, 1]");
  const auto& labels = binary_label(train, label);
  require_numeric(train);
  const std::size_t n = train.rows();
  const std::size_t p = train.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  // Internal standardization (population sd); constant columns stay at 0.
  std::vector<double> mean(p, 0.0), scale(p, 0.0);
  std::vector<std::vector<double>> xs(p, std::vector<double>(n));
  std::vector<bool> active(p, false);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < n; ++i) mean[j] += train.at(i, j);
    mean[j] *= inv_n;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (train.at(i, j) - mean[j]) * (train.at(i, j) - mean[j]);
    scale[j] = std::sqrt(ss * inv_n);
    active[j] = scale[j] > 0.0;
    if (!active[j]) continue;
    for (std::size_t i = 0; i < n; ++i) xs[j][i] = (train.at(i, j) - mean[j]) / scale[j];
  }
  std::vector<double> y(n);
  double ybar = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = labels[i];
    ybar += y[i];
  }
  ybar = std::clamp(ybar * inv_n, 1e-9, 1.0 - 1e-9);

  std::vector<double> beta(p, 0.0);
  double b0 = std::log(ybar / (1.0 - ybar));
  std::vector<double> eta(n, b0), prob(n, sigmoid(b0));
  std::vector<double> cand_eta(n), cand_prob(n);

  auto pen_term = [&](double b) { return lambda * ((1.0 - alpha) * std::abs(b) + alpha * b * b); };
  // Mean loss at eta + delta * x (x == nullptr means the intercept column);
  // fills cand_eta / cand_prob as a side effect.
  auto trial_loss = [&](double delta, const std::vector<double>* x) {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = eta[i] + delta * (x ? (*x)[i] : 1.0);
      const double e = std::exp(-std::abs(z));
      loss += std::max(z, 0.0) + std::log1p(e) - y[i] * z;
      cand_eta[i] = z;
      cand_prob[i] = z >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
    }
    return loss * inv_n;
  };

  double pen_total = 0.0;
  double objective = trial_loss(0.0, nullptr);

  ElasticNetModel model;
  model.lambda = lambda;
  model.alpha = alpha;
  model.feature_names = train.feature_names();
  model.feature_sd = sample_sd(train);

  // One proximal Newton step on a single coordinate with backtracking so the
  // objective never increases. Returns the accepted change.
  auto update = [&](double& coef, const std::vector<double>* x, bool penalized) {
    double g = 0.0, h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = x ? (*x)[i] : 1.0;
      g += (prob[i] - y[i]) * xi;
      h += prob[i] * (1.0 - prob[i]) * xi * xi;
    }
    g *= inv_n;
    h *= inv_n;
    double target;
    if (penalized) {
      const double denom = std::max(h + 2.0 * lambda * alpha, 1e-12);
      const double z = h * coef - g;
      const double thresh = lambda * (1.0 - alpha);
      const double soft = z > thresh ? z - thresh : (z < -thresh ? z + thresh : 0.0);
      target = soft / denom;
    } else {
      target = coef - g / std::max(h, 1e-12);
    }
    double delta = target - coef;
    if (delta == 0.0) return 0.0;
    const double old_pen = penalized ? pen_term(coef) : 0.0;
    for (int halving = 0; halving < 40; ++halving, delta *= 0.5) {
      const double new_pen = penalized ? pen_term(coef + delta) : 0.0;
      const double cand = trial_loss(delta, x) + pen_total - old_pen + new_pen;
      if (cand <= objective) {
        coef += delta;
        pen_total += new_pen - old_pen;
        objective = cand;
        eta.swap(cand_eta);
        prob.swap(cand_prob);
        return std::abs(delta);
      }
    }
    return 0.0;
  };

  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    model.sweeps = sweep;
    double max_change = update(b0, nullptr, false);
    for (std::size_t j = 0; j < p; ++j) {
      if (!active[j]) continue;
      max_change = std::max(max_change, update(beta[j], &xs[j], true));
    }
    model.objective_path.push_back(objective);
    if (max_change < opts.tol) {
      model.converged = true;
      break;
    }
  }

  model.coefficients.assign(p, 0.0);
  model.intercept = b0;
  for (std::size_t j = 0; j < p; ++j) {
    if (!active[j]) continue;
    model.coefficients[j] = beta[j] / scale[j];
    model.intercept -= beta[j] * mean[j] / scale[j];
  }
  return model;
}

namespace {

std::vector<double> linear_scores(const std::vector<std::string>& names, double intercept,
                                  const std::vector<double>& coefficients, const Dataset& ds) {
  const auto cols = map_features(ds, names);
  std::vector<double> out(ds.rows());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    double z = intercept;
    for (std::size_t j = 0; j < cols.size(); ++j) z += coefficients[j] * ds.at(r, cols[j]);
    out[r] = sigmoid(z);
  }
  return out;
}

}  // namespace

std::vector<double> predict_proba(const LogitModel& model, const Dataset& ds) {
  return linear_scores(model.feature_names, model.intercept, model.coefficients, ds);
}

std::vector<double> predict_proba(const ElasticNetModel& model, const Dataset& ds) {
  return linear_scores(model.feature_names, model.intercept, model.coefficients, ds);
}

namespace {

std::vector<double> standardized_weights(const std::vector<double>& coefficients,
                                         const std::vector<double>& sd) {
  if (coefficients.empty() && sd.empty()) return {};
  if (coefficients.size() != sd.size()) {
    throw ValidationError("variable_importance: unfitted model");
  }
  std::vector<double> w(coefficients.size());
  double total = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = std::abs(coefficients[j] * sd[j]);
    total += w[j];
  }
  for (double& v : w) v = total > 0.0 ? v / total : 1.0 / static_cast<double>(w.size());
  return w;
}

}  // namespace

std::vector<double> variable_importance(const LogitModel& model) {
  return standardized_weights(model.coefficients, model.feature_sd);
}

std::vector<double> variable_importance(const ElasticNetModel& model) {
  return standardized_weights(model.coefficients, model.feature_sd);
}

}  // namespace rarity
