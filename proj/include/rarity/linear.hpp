#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rarity/dataset.hpp"

namespace rarity {

// Elastic-net penalty lambda * sum[(1 - alpha)|b| + alpha * b^2].
//
// Note the mixing convention: alpha = 0 is the pure absolute-value (lasso)
// penalty and alpha = 1 the pure quadratic (ridge) penalty. This is the
// reverse of the glmnet/scikit-learn convention.
double penalty(std::span<const double> coefficients, double lambda, double alpha);

struct LogitModel {
  std::vector<std::string> feature_names;
  double intercept = 0.0;
  std::vector<double> coefficients;
  // Training-set standard deviation per feature, for importance on the
  // standardized scale.
  std::vector<double> feature_sd;
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
};

struct ElasticNetModel {
  std::vector<std::string> feature_names;
  double intercept = 0.0;
  std::vector<double> coefficients;  // input scale
  std::vector<double> feature_sd;
  double lambda = 0.0;
  double alpha = 0.0;
  bool converged = false;
  int sweeps = 0;
  // Objective value after each full sweep; non-increasing.
  std::vector<double> objective_path;
};

struct LogitOptions {
  double tol = 1e-8;  // on |change in log-likelihood|
  int max_iter = 100;
};

struct ElasticNetOptions {
  double tol = 1e-6;  // on max coefficient change per sweep (standardized scale)
  int max_sweeps = 10000;
};

// Unpenalized logistic regression by iteratively reweighted least squares.
// Quasi-separation (fitted probabilities numerically 0 or 1) and hitting
// max_iter both leave converged = false; the model is still returned.
LogitModel fit_logit(const Dataset& train, std::string_view label, const LogitOptions& opts = {});

// Penalized logistic regression: minimizes mean negative log-likelihood plus
// penalty(beta, lambda, alpha) by cyclic coordinate descent with
// soft-thresholding. Features are standardized internally; the intercept is
// not penalized; coefficients are reported on the input scale.
ElasticNetModel fit_elastic_net(const Dataset& train, std::string_view label, double lambda,
                                double alpha, const ElasticNetOptions& opts = {});

// sigmoid(intercept + x . beta) for every row. Features are matched by name.
std::vector<double> predict_proba(const LogitModel& model, const Dataset& ds);
std::vector<double> predict_proba(const ElasticNetModel& model, const Dataset& ds);

// |coefficient| on the standardized scale (coefficient * training sd),
// normalized to sum to 1; uniform when every coefficient is zero.
std::vector<double> variable_importance(const LogitModel& model);
std::vector<double> variable_importance(const ElasticNetModel& model);

// Shared helpers.
double sigmoid(double z);
// log(1 + exp(z)) without overflow.
double softplus(double z);
// Column indices of `names` in `ds`; throws on any missing feature.
std::vector<std::size_t> map_features(const Dataset& ds, const std::vector<std::string>& names);

}  // namespace rarity
