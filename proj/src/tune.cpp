#include "rarity/tune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "rarity/common.hpp"
#include "rarity/random.hpp"

namespace rarity {

std::vector<std::size_t> FoldPlan::fold_rows(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == fold) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::training_rows(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] != fold) rows.push_back(i);
  }
  return rows;
}

FoldPlan kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed,
                         std::optional<std::span<const std::uint8_t>> stratify) {
  if (k < 2) throw ValidationError("kfold: k must be at least 2");
  if (k > n) {
    throw ValidationError("kfold: k = " + std::to_string(k) + " exceeds the row count " +
                          std::to_string(n));
  }
  if (stratify && stratify->size() != n) throw ValidationError("kfold: label length mismatch");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.stratified = stratify.has_value();
  plan.assignments.assign(n, 0);
  std::size_t counter = 0;
  if (stratify) {
    for (std::uint8_t cls : {0, 1}) {
      for (auto r : perm) {
        if (((*stratify)[r] ? 1 : 0) == cls) plan.assignments[r] = counter++ % k;
      }
    }
  } else {
    for (auto r : perm) plan.assignments[r] = counter++ % k;
  }
  return plan;
}

// ---------------------------------------------------------------------------

std::string format_hyper(const HyperValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return format_double(*d);
  return std::get<std::string>(v);
}

std::string format_point(const HyperPoint& p) {
  std::string out;
  for (const auto& [name, value] : p) {
    if (!out.empty()) out += ';';
    out += name + "=" + format_hyper(value);
  }
  return out;
}

std::vector<HyperPoint> grid_expand(const HyperGrid& grid) {
  for (const auto& [name, values] : grid) {
    if (values.empty()) throw ValidationError("grid: hyperparameter '" + name + "' has no values");
  }
  std::vector<HyperPoint> points{HyperPoint{}};
  // Build from the last name backwards so the first name varies slowest.
  for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
    std::vector<HyperPoint> next;
    next.reserve(points.size() * it->second.size());
    for (const auto& value : it->second) {
      for (const auto& p : points) {
        HyperPoint q = p;
        q[it->first] = value;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::majority: return "majority";
    case ModelKind::logit: return "logit";
    case ModelKind::elastic_net: return "elastic_net";
    case ModelKind::cart: return "cart";
    case ModelKind::forest: return "forest";
    case ModelKind::ffn: return "ffn";
  }
  return "logit";
}

ModelKind parse_model_kind(std::string_view text) {
  for (auto k : {ModelKind::majority, ModelKind::logit, ModelKind::elastic_net, ModelKind::cart,
                 ModelKind::forest, ModelKind::ffn}) {
    if (to_string(k) == text) return k;
  }
  throw ValidationError("unknown model kind '" + std::string(text) + "'");
}

namespace {

class Hypers {
 public:
  Hypers(const HyperPoint& point, std::string model) : point_(point), model_(std::move(model)) {}

  double number(const std::string& name, double fallback) {
    used_.insert(name);
    auto it = point_.find(name);
    if (it == point_.end()) return fallback;
    if (const auto* d = std::get_if<double>(&it->second)) return *d;
    return parse_double(std::get<std::string>(it->second), "hyperparameter " + name);
  }

  std::size_t count(const std::string& name, std::size_t fallback) {
    const double v = number(name, static_cast<double>(fallback));
    if (!(v >= 0.0) || v != std::floor(v)) {
      throw ValidationError(model_ + ": hyperparameter " + name + " must be a nonnegative integer");
    }
    return static_cast<std::size_t>(v);
  }

  std::optional<std::string> text(const std::string& name) {
    used_.insert(name);
    auto it = point_.find(name);
    if (it == point_.end()) return std::nullopt;
    return format_hyper(it->second);
  }

  void check_all_used() const {
    for (const auto& [name, value] : point_) {
      if (!used_.count(name)) {
        throw ValidationError(model_ + ": unknown hyperparameter '" + name + "'");
      }
    }
  }

 private:
  const HyperPoint& point_;
  std::string model_;
  std::set<std::string> used_;
};

std::vector<std::string> split_list(const std::string& text, std::string_view seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (seps.find(c) != std::string_view::npos) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

Dataset prepare(const FittedModel& m, const Dataset& raw) {
  return apply_preprocessor(raw.drop_features(m.excluded), m.prep);
}

}  // namespace

FittedModel fit_model(const ModelSpec& spec, const HyperPoint& point, const Dataset& train,
                      std::string_view label, std::uint64_t seed) {
  FittedModel fm;
  fm.name = spec.name;
  fm.kind = spec.kind;
  fm.label = std::string(label);
  fm.point = spec.fixed;
  for (const auto& [k, v] : point) fm.point[k] = v;
  Hypers h(fm.point, spec.name.empty() ? std::string(to_string(spec.kind)) : spec.name);
  if (auto ex = h.text("exclude")) fm.excluded = split_list(*ex, " ,");
  const auto& y = train.label(label);

  const Dataset base = train.drop_features(fm.excluded);
  fm.prep = fit_preprocessor(base, spec.scaler, spec.one_hot);
  const Dataset x = apply_preprocessor(base, fm.prep);

  switch (spec.kind) {
    case ModelKind::majority: {
      h.check_all_used();
      const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
      fm.model = MajorityModel{y.empty() ? 0.0 : pos / static_cast<double>(y.size())};
      break;
    }
    case ModelKind::logit: {
      h.check_all_used();
      fm.model = fit_logit(x, label);
      break;
    }
    case ModelKind::elastic_net: {
      const double lambda = h.number("lambda", 0.01);
      const double alpha = h.number("alpha", 0.0);
      h.check_all_used();
      fm.model = fit_elastic_net(x, label, lambda, alpha);
      break;
    }
    case ModelKind::cart: {
      const double cp = h.number("cp", 0.01);
      CartConstraints c;
      c.min_split_obs = h.count("min_split_obs", c.min_split_obs);
      if (auto d = h.text("max_depth")) {
        if (*d != "none") c.max_depth = static_cast<int>(h.count("max_depth", 0));
      }
      h.check_all_used();
      fm.model = fit_cart(x, label, cp, c);
      break;
    }
    case ModelKind::forest: {
      ForestHyper fh;
      fh.n_trees = h.count("n_trees", fh.n_trees);
      fh.mtry = h.count("mtry", fh.mtry);
      fh.min_node = h.count("min_node", fh.min_node);
      if (auto r = h.text("splitrule")) fh.splitrule = parse_split_rule(*r);
      fh.threads = static_cast<unsigned>(h.count("threads", 0));
      fh.seed = seed;
      h.check_all_used();
      fm.model = fit_forest(x, label, fh);
      break;
    }
    case ModelKind::ffn: {
      FfnArch arch;
      if (auto hidden = h.text("hidden")) {
        arch.hidden.clear();
        for (const auto& part : split_list(*hidden, "- ,")) {
          arch.hidden.push_back(static_cast<std::size_t>(parse_double(part, "ffn hidden")));
        }
        arch.dropout.assign(arch.hidden.size(), 0.0);
      }
      if (auto drop = h.text("dropout")) {
        arch.dropout.clear();
        for (const auto& part : split_list(*drop, "- ,")) {
          arch.dropout.push_back(parse_double(part, "ffn dropout"));
        }
      }
      if (auto act = h.text("activation")) arch.hidden_activation = parse_activation(*act);
      TrainOptions to;
      to.epochs = static_cast<int>(h.count("epochs", static_cast<std::size_t>(to.epochs)));
      to.batch = h.count("batch", to.batch);
      to.lr = h.number("lr", to.lr);
      to.seed = seed;
      h.check_all_used();
      fm.model = train_ffn(x, label, arch, to);
      break;
    }
  }
  return fm;
}

std::vector<double> predict_scores(const FittedModel& model, const Dataset& raw) {
  const Dataset x = prepare(model, raw);
  return std::visit(
      [&](const auto& m) -> std::vector<double> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MajorityModel>) {
          return std::vector<double>(x.rows(), m.positive_share);
        } else if constexpr (std::is_same_v<T, LogitModel> || std::is_same_v<T, ElasticNetModel>) {
          return predict_proba(m, x);
        } else if constexpr (std::is_same_v<T, DecisionTree>) {
          std::vector<double> out;
          for (const auto& p : predict_tree(m, x)) out.push_back(p.probability);
          return out;
        } else if constexpr (std::is_same_v<T, Forest>) {
          std::vector<double> out;
          for (const auto& p : predict_forest(m, x)) out.push_back(p.score);
          return out;
        } else {
          return predict_network(m, x);
        }
      },
      model.model);
}

std::optional<Importance> model_importance(const FittedModel& model) {
  return std::visit(
      [&](const auto& m) -> std::optional<Importance> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MajorityModel> || std::is_same_v<T, Network>) {
          return std::nullopt;
        } else {
          return Importance{m.feature_names, variable_importance(m)};
        }
      },
      model.model);
}

// ---------------------------------------------------------------------------

std::optional<double> score_metric(std::string_view metric, std::span<const double> scores,
                                   std::span<const std::uint8_t> labels, double threshold) {
  if (metric == "auc") {
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) return std::nullopt;
    return auc(scores, labels);
  }
  const auto preds = threshold_predictions(scores, threshold);
  const auto m = metrics(confusion(labels, preds));
  if (metric == "accuracy") return m.accuracy;
  if (metric == "kappa") return m.kappa;
  if (metric == "sensitivity") return m.sensitivity;
  if (metric == "specificity") return m.specificity;
  throw ValidationError("unknown metric '" + std::string(metric) + "'");
}

CvCell cross_validate(const ModelSpec& spec, const HyperPoint& point, const Dataset& ds,
                      std::string_view label, const FoldPlan& plan, std::string_view metric,
                      std::uint64_t seed, std::size_t repeat, double threshold) {
  if (plan.assignments.size() != ds.rows()) {
    throw ValidationError("cross_validate: fold plan covers " +
                          std::to_string(plan.assignments.size()) + " rows, dataset has " +
                          std::to_string(ds.rows()));
  }
  if (metric != "auc" && metric != "accuracy" && metric != "kappa" && metric != "sensitivity" &&
      metric != "specificity") {
    throw ValidationError("unknown metric '" + std::string(metric) + "'");
  }
  CvCell cell;
  cell.point = point;
  double sum = 0.0;
  std::size_t ok = 0;
  for (std::size_t fold = 0; fold < plan.k; ++fold) {
    FoldOutcome out;
    out.repeat = repeat;
    out.fold = fold;
    const auto start = std::chrono::steady_clock::now();
    try {
      const auto train_rows = plan.training_rows(fold);
      const auto test_rows = plan.fold_rows(fold);
      const Dataset fit_part = ds.select_rows(train_rows);
      const Dataset held_out = ds.select_rows(test_rows);
      const auto model = fit_model(spec, point, fit_part, label, mix_seed(seed, fold));
      const auto scores = predict_scores(model, held_out);
      out.value = score_metric(metric, scores, held_out.label(label), threshold);
      if (!out.value) out.error = "metric undefined on fold " + std::to_string(fold);
    } catch (const Error& e) {
      out.error = "fold " + std::to_string(fold) + ": " + e.what();
    }
    out.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (out.value) {
      sum += *out.value;
      ++ok;
    }
    cell.folds.push_back(std::move(out));
  }
  if (ok > 0) cell.mean = sum / static_cast<double>(ok);
  return cell;
}

std::uint64_t subset_seed(std::uint64_t seed) { return mix_seed(seed, 0x5u); }
std::uint64_t fold_plan_seed(std::uint64_t seed, std::size_t repeat) {
  return mix_seed(mix_seed(seed, 0xf), repeat);
}
std::uint64_t model_seed(std::uint64_t seed) { return mix_seed(seed, 0x3); }

GridResult grid_search(const ModelSpec& spec, const HyperGrid& grid, const Dataset& train,
                       std::string_view label, const GridOptions& opts) {
  if (!(opts.subset_frac > 0.0 && opts.subset_frac <= 1.0)) {
    throw ValidationError("grid_search: subset_frac must lie in (0, 1]");
  }
  if (opts.repeats < 1) throw ValidationError("grid_search: repeats must be at least 1");
  const auto points = grid_expand(grid);
  GridResult result;
  result.metric = opts.metric;

  const Dataset subset = opts.subset_frac >= 1.0
                             ? train
                             : stratified_split(train, opts.subset_frac, label,
                                                subset_seed(opts.seed))
                                   .train;
  result.subset_rows = subset.rows();
  const auto& y = subset.label(label);
  std::vector<FoldPlan> plans;
  for (std::size_t r = 0; r < opts.repeats; ++r) {
    plans.push_back(kfold_partition(subset.rows(), opts.k, fold_plan_seed(opts.seed, r),
                                    std::span<const std::uint8_t>(y)));
  }

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < points.size(); ++i) {
    CvCell cell;
    cell.point = points[i];
    double sum = 0.0;
    std::size_t ok = 0;
    for (std::size_t r = 0; r < plans.size(); ++r) {
      auto part = cross_validate(spec, points[i], subset, label, plans[r], opts.metric,
                                 model_seed(opts.seed), r, opts.threshold);
      for (auto& f : part.folds) {
        if (f.value) {
          sum += *f.value;
          ++ok;
        }
        cell.folds.push_back(std::move(f));
      }
    }
    if (ok > 0) cell.mean = sum / static_cast<double>(ok);
    if (!cell.mean) {
      std::string why = cell.folds.empty() ? "" : cell.folds.front().error;
      result.warnings.push_back("grid point {" + format_point(points[i]) +
                                "} failed on every fold and is excluded: " + why);
    } else if (!best || *cell.mean > *result.cells[*best].mean) {
      best = i;
    }
    result.cells.push_back(std::move(cell));
  }
  if (!best) throw ValidationError("grid_search: every grid point failed for model '" + spec.name + "'");
  result.best = *best;
  result.final_model = fit_model(spec, points[*best], train, label, model_seed(opts.seed));
  return result;
}

std::string tuning_folds_csv(const GridResult& r) {
  std::string out = "point_index,point,repeat,fold," + r.metric + ",status\n";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    for (const auto& f : r.cells[i].folds) {
      out += std::to_string(i) + ",\"" + format_point(r.cells[i].point) + "\"," +
             std::to_string(f.repeat) + "," + std::to_string(f.fold) + "," +
             (f.value ? format_double(*f.value) : "NA") + "," + (f.value ? "ok" : "failed") + "\n";
    }
  }
  return out;
}

std::string tuning_summary_csv(const GridResult& r) {
  std::string out = "point_index,point,mean_" + r.metric + ",folds_ok,selected\n";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    const auto ok = std::count_if(c.folds.begin(), c.folds.end(),
                                  [](const FoldOutcome& f) { return f.value.has_value(); });
    out += std::to_string(i) + ",\"" + format_point(c.point) + "\"," +
           (c.mean ? format_double(*c.mean) : "NA") + "," + std::to_string(ok) + "," +
           (i == r.best ? "1" : "0") + "\n";
  }
  return out;
}

std::string tuning_timings_csv(const GridResult& r) {
  std::string out = "point_index,repeat,fold,seconds\n";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    for (const auto& f : r.cells[i].folds) {
      out += std::to_string(i) + "," + std::to_string(f.repeat) + "," + std::to_string(f.fold) +
             "," + format_double(f.seconds) + "\n";
    }
  }
  return out;
}

}  // namespace rarity
