#include "rarity/anomaly.hpp"

#include <algorithm>
#include <cmath>

#include "rarity/common.hpp"
#include "rarity/linear.hpp"
#include "rarity/preprocess.hpp"
#include "rarity/random.hpp"

namespace rarity {

std::size_t Autoencoder::latent_dim() const {
  std::size_t latent = input_dim();
  for (const auto& l : net.layers) latent = std::min(latent, static_cast<std::size_t>(l.outputs()));
  return latent;
}

std::vector<std::string> default_ae_features() {
  auto names = patent_base_features();
  names.erase(std::remove(names.begin(), names.end(), "many_field"), names.end());
  return names;
}

namespace {

void check_normals(const Dataset& ds, const std::optional<std::string>& label) {
  auto check = [&](const std::string& name, const LabelVector& y) {
    for (std::size_t r = 0; r < y.size(); ++r) {
      if (y[r]) {
        throw ValidationError("autoencoder training rows must be normals: row " +
                              std::to_string(r + 1) + " is positive for '" + name + "'");
      }
    }
  };
  if (label) {
    if (ds.has_label(*label)) check(*label, ds.label(*label));
    return;
  }
  for (const auto& [name, y] : ds.labels()) check(name, y);
}

}  // namespace

Autoencoder train_autoencoder(const Dataset& normals, const AeArch& arch, const AeOptions& opts,
                              std::optional<std::string> label) {
  check_normals(normals, label);
  if (normals.rows() == 0) throw ValidationError("autoencoder: no training rows");
  for (const auto& f : normals.features()) {
    if (f.kind == FeatureKind::categorical) {
      throw ValidationError("autoencoder: feature '" + f.name + "' is categorical");
    }
  }
  const std::size_t in = normals.cols();
  std::vector<std::size_t> sizes{in};
  if (arch.layers.empty()) {
    sizes.insert(sizes.end(), {9, 4, 4, in});
  } else {
    sizes.insert(sizes.end(), arch.layers.begin(), arch.layers.end());
  }
  if (sizes.back() != in) {
    throw ValidationError("autoencoder: output width " + std::to_string(sizes.back()) +
                          " must equal input width " + std::to_string(in));
  }
  if (arch.activations.size() != sizes.size() - 1) {
    throw ValidationError("autoencoder: need " + std::to_string(sizes.size() - 1) +
                          " activations, got " + std::to_string(arch.activations.size()));
  }
  if (sizes.size() < 3 ||
      *std::min_element(sizes.begin() + 1, sizes.end() - 1) >= in) {
    throw ValidationError("autoencoder: latent width must be smaller than the input width");
  }

  Autoencoder ae;
  ae.net = make_network(sizes, arch.activations, mix_seed(opts.seed, 0));
  ae.net.seed = opts.seed;
  ae.feature_names = normals.feature_names();
  ae.net.feature_names = ae.feature_names;
  ae.activity_l2 = opts.activity_l2;
  ae.loss = opts.loss;

  const Eigen::MatrixXd x = feature_matrix(normals, ae.feature_names);
  FitOptions fo;
  fo.epochs = opts.epochs;
  fo.batch = opts.batch;
  fo.lr = opts.lr;
  fo.shuffle_seed = mix_seed(opts.seed, 1);
  fo.activity_l2 = opts.activity_l2;
  fit_network(ae.net, x, x, opts.loss, fo);
  return ae;
}

std::string_view to_string(ErrorMetric m) {
  return m == ErrorMetric::l2 ? "l2" : "squared_l2";
}

ErrorMetric parse_error_metric(std::string_view text) {
  if (text == "squared_l2") return ErrorMetric::squared_l2;
  if (text == "l2") return ErrorMetric::l2;
  throw ValidationError("unknown reconstruction metric '" + std::string(text) + "'");
}

double reconstruction_error(std::span<const double> x, std::span<const double> reconstructed,
                            ErrorMetric metric) {
  if (x.size() != reconstructed.size()) {
    throw ValidationError("reconstruction_error: dimension mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - reconstructed[i]) * (x[i] - reconstructed[i]);
  return metric == ErrorMetric::l2 ? std::sqrt(s) : s;
}

double reconstruction_error(const Autoencoder& ae, std::span<const double> x, ErrorMetric metric) {
  if (x.size() != ae.input_dim()) {
    throw ValidationError("reconstruction_error: input has " + std::to_string(x.size()) +
                          " values, autoencoder expects " + std::to_string(ae.input_dim()));
  }
  const Eigen::VectorXd in = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd out = forward(ae.net, in);
  return reconstruction_error(x, std::span<const double>(out.data(), x.size()), metric);
}

std::vector<double> score_dataset(const Autoencoder& ae, const Dataset& ds, ErrorMetric metric) {
  const Eigen::MatrixXd x = feature_matrix(ds, ae.feature_names);
  std::vector<double> scores(ds.rows());
  constexpr Eigen::Index kChunk = 4096;
  for (Eigen::Index start = 0; start < x.cols(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, x.cols() - start);
    const Eigen::MatrixXd block = x.middleCols(start, len);
    const auto pass = forward(ae.net, block, Mode::inference);
    const Eigen::MatrixXd diff = pass.activations.back() - block;
    for (Eigen::Index c = 0; c < len; ++c) {
      const double s = diff.col(c).squaredNorm();
      scores[static_cast<std::size_t>(start + c)] = metric == ErrorMetric::l2 ? std::sqrt(s) : s;
    }
  }
  return scores;
}

LabelVector classify_band(std::span<const double> scores, const ThresholdBand& band) {
  if (!(band.lo <= band.hi)) throw ValidationError("invalid band: lo must not exceed hi");
  LabelVector out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = scores[i] >= band.lo && scores[i] <= band.hi ? 1 : 0;
  }
  return out;
}

std::string_view to_string(BandObjective o) { return o == BandObjective::f1 ? "f1" : "youden"; }

BandObjective parse_band_objective(std::string_view text) {
  if (text == "youden") return BandObjective::youden;
  if (text == "f1") return BandObjective::f1;
  throw ValidationError("unknown band objective '" + std::string(text) + "'");
}

namespace {

struct Scored {
  double score;
  std::uint8_t label;
};

double objective_value(BandObjective obj, double tp, double fp, double pos, double neg) {
  const double fn = pos - tp;
  if (obj == BandObjective::f1) return tp > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  return tp / pos + (neg - fp) / neg - 1.0;
}

}  // namespace

BandCalibration calibrate_band(std::span<const double> scores, std::span<const std::uint8_t> labels,
                               BandObjective objective, bool search_upper) {
  if (scores.size() != labels.size()) throw ValidationError("calibrate_band: length mismatch");
  std::vector<Scored> rows;
  rows.reserve(scores.size());
  double pos = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw ValidationError("calibrate_band: NaN score");
    rows.push_back({scores[i], labels[i]});
    pos += labels[i] ? 1.0 : 0.0;
  }
  const double neg = static_cast<double>(rows.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw ValidationError("calibrate_band: labels must contain both classes");
  std::sort(rows.begin(), rows.end(), [](const Scored& a, const Scored& b) { return a.score < b.score; });

  // Suffix sweep: at the first row of each distinct score, tp/fp count rows >= it.
  BandCalibration best;
  bool have = false;
  double tp = pos, fp = neg;
  for (std::size_t i = 0; i < rows.size();) {
    const double value = objective_value(objective, tp, fp, pos, neg);
    if (!have || value > best.objective) {
      best = {{rows[i].score, INFINITY}, value, tp / pos, (neg - fp) / neg};
      have = true;
    }
    const double s = rows[i].score;
    for (; i < rows.size() && rows[i].score == s; ++i) {
      if (rows[i].label) tp -= 1.0; else fp -= 1.0;
    }
  }

  if (search_upper) {
    std::vector<double> sorted(rows.size());
    std::vector<double> cum_pos(rows.size() + 1, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sorted[i] = rows[i].score;
      cum_pos[i + 1] = cum_pos[i] + rows[i].label;
    }
    std::vector<double> grid;
    for (int p = 0; p <= 100; ++p) grid.push_back(quantile_sorted(sorted, p / 100.0));
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (std::size_t a = 0; a < grid.size(); ++a) {
      const auto lo_it = std::lower_bound(sorted.begin(), sorted.end(), grid[a]);
      for (std::size_t b = a; b < grid.size(); ++b) {
        const auto hi_it = std::upper_bound(sorted.begin(), sorted.end(), grid[b]);
        const auto lo_i = static_cast<std::size_t>(lo_it - sorted.begin());
        const auto hi_i = static_cast<std::size_t>(hi_it - sorted.begin());
        const double btp = cum_pos[hi_i] - cum_pos[lo_i];
        const double bfp = static_cast<double>(hi_i - lo_i) - btp;
        const double value = objective_value(objective, btp, bfp, pos, neg);
        if (value > best.objective) best = {{grid[a], grid[b]}, value, btp / pos, (neg - bfp) / neg};
      }
    }
  }
  return best;
}

std::string score_csv(std::span<const double> scores, const LabelVector* labels) {
  if (labels && labels->size() != scores.size()) throw ValidationError("score_csv: length mismatch");
  std::string out = labels ? "row_id,score,label\n" : "row_id,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out += std::to_string(i + 1);
    out += ',';
    out += format_double(scores[i]);
    if (labels) {
      out += ',';
      out += (*labels)[i] ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

}  // namespace rarity
