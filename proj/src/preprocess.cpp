#include "rarity/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "rarity/common.hpp"

namespace rarity {

std::string_view to_string(ScalerMethod method) {
  switch (method) {
    case ScalerMethod::standardize: return "standardize";
    case ScalerMethod::minmax: return "minmax";
    case ScalerMethod::meannorm: return "meannorm";
  }
  return "standardize";
}

ScalerMethod parse_scaler_method(std::string_view text) {
  if (text == "standardize") return ScalerMethod::standardize;
  if (text == "minmax") return ScalerMethod::minmax;
  if (text == "meannorm") return ScalerMethod::meannorm;
  throw ValidationError("unknown scaler method '" + std::string(text) + "'");
}

ScalerParams fit_scaler(const Dataset& train, ScalerMethod method) {
  if (train.rows() == 0) throw ValidationError("fit_scaler: empty training data");
  ScalerParams params;
  params.method = method;
  params.fitted_features = train.feature_names();
  params.fitted_rows = train.rows();
  const double n = static_cast<double>(train.rows());
  for (std::size_t j = 0; j < train.cols(); ++j) {
    if (train.feature(j).kind != FeatureKind::continuous) continue;
    ColumnStats s;
    s.name = train.feature(j).name;
    s.min = INFINITY;
    s.max = -INFINITY;
    double sum = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) {
      const double v = train.at(r, j);
      sum += v;
      s.min = std::min(s.min, v);
      s.max = std::max(s.max, v);
    }
    s.mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < train.rows(); ++r) {
      const double d = train.at(r, j) - s.mean;
      ss += d * d;
    }
    s.constant = s.max == s.min;
    s.sd = (train.rows() > 1 && !s.constant) ? std::sqrt(ss / (n - 1.0)) : 0.0;
    params.columns.push_back(std::move(s));
  }
  return params;
}

namespace {

template <class Fn>
Dataset transform_columns(const Dataset& ds, const ScalerParams& params, Fn fn) {
  std::vector<double> values = ds.values();
  const std::size_t nc = ds.cols();
  for (const auto& s : params.columns) {
    auto col = ds.find_feature(s.name);
    if (!col) {
      throw ValidationError("scaler feature '" + s.name + "' missing from dataset");
    }
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      auto& v = values[r * nc + *col];
      v = s.constant ? 0.0 : fn(v, s);
    }
  }
  return Dataset(ds.rows(), ds.features(), std::move(values), ds.labels());
}

}  // namespace

Dataset apply_scaler(const Dataset& ds, const ScalerParams& params) {
  switch (params.method) {
    case ScalerMethod::standardize:
      return transform_columns(ds, params,
                               [](double v, const ColumnStats& s) { return (v - s.mean) / s.sd; });
    case ScalerMethod::minmax:
      return transform_columns(
          ds, params, [](double v, const ColumnStats& s) { return (v - s.min) / (s.max - s.min); });
    case ScalerMethod::meannorm:
      return transform_columns(ds, params, [](double v, const ColumnStats& s) {
        return (v - s.mean) / (s.max - s.min);
      });
  }
  return ds;
}

Dataset unscale(const Dataset& ds, const ScalerParams& params) {
  std::vector<double> values = ds.values();
  const std::size_t nc = ds.cols();
  for (const auto& s : params.columns) {
    if (s.constant) continue;
    auto col = ds.find_feature(s.name);
    if (!col) throw ValidationError("scaler feature '" + s.name + "' missing from dataset");
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      auto& v = values[r * nc + *col];
      switch (params.method) {
        case ScalerMethod::standardize: v = v * s.sd + s.mean; break;
        case ScalerMethod::minmax: v = v * (s.max - s.min) + s.min; break;
        case ScalerMethod::meannorm: v = v * (s.max - s.min) + s.mean; break;
      }
    }
  }
  return Dataset(ds.rows(), ds.features(), std::move(values), ds.labels());
}

Dataset one_hot(const Dataset& ds, std::string_view feature) {
  const auto& src = ds.feature(ds.feature_index(feature));
  return one_hot(ds, feature, src.levels);
}

Dataset one_hot(const Dataset& ds, std::string_view feature,
                const std::vector<std::string>& levels) {
  const std::size_t target = ds.feature_index(feature);
  const auto& src = ds.feature(target);
  if (src.kind != FeatureKind::categorical) {
    throw ValidationError("one_hot: feature '" + src.name + "' is not categorical");
  }
  if (levels.size() < 2) {
    throw ValidationError("one_hot: feature '" + src.name + "' has fewer than 2 levels");
  }
  // Source level index -> output level index (or npos when unseen).
  std::vector<std::size_t> remap(src.levels.size(), std::string::npos);
  for (std::size_t i = 0; i < src.levels.size(); ++i) {
    auto it = std::find(levels.begin(), levels.end(), src.levels[i]);
    if (it != levels.end()) remap[i] = static_cast<std::size_t>(it - levels.begin());
  }
  std::vector<Feature> features;
  for (std::size_t j = 0; j < ds.cols(); ++j) {
    if (j != target) {
      features.push_back(ds.feature(j));
      continue;
    }
    for (const auto& level : levels) {
      features.push_back({src.name + "=" + level, FeatureKind::binary, {}});
    }
  }
  const std::size_t nc = features.size();
  std::vector<double> values;
  values.reserve(ds.rows() * nc);
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t j = 0; j < ds.cols(); ++j) {
      const double v = ds.at(r, j);
      if (j != target) {
        values.push_back(v);
        continue;
      }
      const std::size_t level = remap.at(static_cast<std::size_t>(v));
      for (std::size_t l = 0; l < levels.size(); ++l) values.push_back(l == level ? 1.0 : 0.0);
    }
  }
  return Dataset(ds.rows(), std::move(features), std::move(values), ds.labels());
}

Preprocessor fit_preprocessor(const Dataset& train, std::optional<ScalerMethod> method,
                              bool expand_categoricals) {
  Preprocessor prep;
  if (method) prep.scaler = fit_scaler(train, *method);
  if (expand_categoricals) {
    for (const auto& f : train.features()) {
      if (f.kind == FeatureKind::categorical) prep.one_hot_features.push_back(f);
    }
  }
  return prep;
}

Dataset apply_preprocessor(const Dataset& ds, const Preprocessor& prep) {
  Dataset out = prep.scaler ? apply_scaler(ds, *prep.scaler) : ds;
  for (const auto& f : prep.one_hot_features) out = one_hot(out, f.name, f.levels);
  return out;
}

// ---------------------------------------------------------------------------

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return NAN;
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<SummaryRow> conditional_summary(const Dataset& ds, std::string_view label) {
  const auto& y = ds.label(label);
  std::vector<SummaryRow> out;
  for (std::size_t j = 0; j < ds.cols(); ++j) {
    for (int cls = 0; cls <= 1; ++cls) {
      std::vector<double> vals;
      for (std::size_t r = 0; r < ds.rows(); ++r) {
        if (y[r] == cls) vals.push_back(ds.at(r, j));
      }
      if (vals.empty()) continue;
      SummaryRow row;
      row.feature = ds.feature(j).name;
      row.cls = cls;
      row.count = vals.size();
      double sum = 0.0;
      for (double v : vals) sum += v;
      row.mean = sum / static_cast<double>(vals.size());
      double ss = 0.0;
      for (double v : vals) ss += (v - row.mean) * (v - row.mean);
      row.sd = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
      std::sort(vals.begin(), vals.end());
      for (int d = 0; d < 9; ++d) row.deciles[d] = quantile_sorted(vals, (d + 1) / 10.0);
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "feature,class,mean,sd";
  for (int d = 1; d <= 9; ++d) out += ",d" + std::to_string(d * 10);
  out += '\n';
  for (const auto& row : rows) {
    out += row.feature + ',' + std::to_string(row.cls) + ',' + format_double(row.mean) + ',' +
           format_double(row.sd);
    for (double q : row.deciles) out += ',' + format_double(q);
    out += '\n';
  }
  return out;
}

}  // namespace rarity
