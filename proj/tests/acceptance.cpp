#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "rarity/anomaly.hpp"
#include "rarity/common.hpp"
#include "rarity/eval.hpp"
#include "rarity/linear.hpp"
#include "rarity/model_io.hpp"
#include "rarity/pipeline.hpp"
#include "rarity/preprocess.hpp"
#include "rarity/tune.hpp"

using namespace rarity;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::string> split_on(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);) out.push_back(item);
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::vector<Marginal> marginals_for(const std::vector<std::string>& names) {
  auto all = patent_marginals();
  std::vector<Marginal> out;
  for (const auto& name : names) {
    auto it = std::find_if(all.begin(), all.end(), [&](const Marginal& m) { return m.name == name; });
    if (it == all.end()) throw Error("unknown marginal " + name);
    out.push_back(*it);
  }
  return out;
}

double test_auc(const FittedModel& m, const Dataset& test, const std::string& label) {
  return auc(predict_scores(m, test), test.label(label));
}

Outcome architecture() {
  const std::vector<std::size_t> sizes{11, 9, 4, 4, 11};
  const std::size_t total = param_count(sizes);
  std::vector<std::size_t> per;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    per.push_back(param_count(std::vector<std::size_t>{sizes[l], sizes[l + 1]}));
  }
  const bool ok = total == 223 && per == std::vector<std::size_t>{108, 40, 20, 55};
  return {ok, "total=" + std::to_string(total) + " layers=" + std::to_string(per[0]) + "/" +
                  std::to_string(per[1]) + "/" + std::to_string(per[2]) + "/" + std::to_string(per[3])};
}

Outcome rare_event_failure() {
  SynthSpec spec;
  spec.n = 100000;
  spec.positive_rate = 0.006;
  spec.label = "y";
  spec.seed = 77;
  spec.features = marginals_for(patent_base_features());
  spec.signal = {{{"sim.present"}, 0.3}, {{"family_size"}, 0.3}, {{"originality"}, 0.3},
                 {{"npl_cits"}, 0.3}, {{"sim.past", "radicalness"}, 0.0}};
  const auto split = stratified_split(synth_generate(spec), 0.75, "y", 5);
  const auto& y = split.test.label("y");
  GridOptions go;
  go.seed = 9;
  struct Case {
    ModelSpec spec;
    HyperGrid grid;
  };
  const std::vector<Case> cases{
      {{"logit", ModelKind::logit}, {}},
      {{"elastic_net", ModelKind::elastic_net},
       {{"lambda", {0.0001, 0.001, 0.01, 0.1, 1.0}}, {"alpha", {0.0, 0.5, 1.0}}}},
      {{"cart", ModelKind::cart}, {{"cp", {0.0, 0.001, 0.005, 0.01}}}}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    const auto r = grid_search(c.spec, c.grid, split.train, "y", go);
    const auto m = metrics(confusion(y, threshold_predictions(predict_scores(r.final_model, split.test), 0.5)));
    const bool flagged = !m.flags.empty();
    const bool sens_ok = m.sensitivity && *m.sensitivity <= 0.02;
    ok = ok && sens_ok && flagged;
    detail += c.spec.name + " sens=" + (m.sensitivity ? num(*m.sensitivity) : "NA") +
              (flagged ? " flagged" : " unflagged") + "; ";
  }
  return {ok, detail};
}

Outcome anomaly_lift() {
  int above = 0;
  bool separated = true;
  std::string detail = "auc=";
  for (std::uint64_t s = 0; s < 5; ++s) {
    SynthSpec spec;
    spec.n = 100000;
    spec.positive_rate = 0.006;
    spec.label = "y";
    spec.seed = 500 + s;
    spec.features = marginals_for(default_ae_features());
    spec.signal = {{{"sim.past", "sim.present"}, 0.0}};
    for (const auto& m : spec.features) {
      if (m.name == "sim.present" || m.name == "family_size" || m.name == "npl_cits" ||
          m.name == "radicalness") {
        spec.anomaly_shift[m.name] = 1.25 * m.sd;
      }
    }
    const auto split = stratified_split(synth_generate(spec), 0.8, "y", 11 + s);
    const auto scaler = fit_scaler(split.train, ScalerMethod::standardize);
    const auto train = apply_scaler(split.train, scaler);
    const auto test = apply_scaler(split.test, scaler);
    std::vector<std::size_t> normal_rows;
    const auto& ytrain = train.label("y");
    for (std::size_t r = 0; r < ytrain.size(); ++r) {
      if (!ytrain[r]) normal_rows.push_back(r);
    }
    AeOptions opts;
    opts.seed = 900 + s;
    const auto ae = train_autoencoder(train.select_rows(normal_rows), {}, opts, std::string("y"));
    const auto scores = score_dataset(ae, test, ErrorMetric::l2);
    const auto& y = test.label("y");
    double pos = 0.0, neg = 0.0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      (y[i] ? pos : neg) += scores[i];
      ++(y[i] ? np : nn);
    }
    const double a = auc(scores, y);
    above += a >= 0.75;
    separated = separated && pos / np > neg / nn;
    detail += num(a) + (s < 4 ? "," : "");
  }
  detail += " (>=0.75 on " + std::to_string(above) + "/5)" +
            (separated ? " anomaly mean > normal mean on all seeds" : " separation failed");
  return {above >= 4 && separated, detail};
}

Outcome nonlinearity_ordering() {
  double sum_logit = 0.0, sum_cart = 0.0, sum_rf = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    SynthSpec spec;
    spec.n = 50000;
    spec.positive_rate = 0.175;
    spec.label = "y";
    spec.seed = 100 + s;
    spec.features = marginals_for(patent_base_features());
    spec.signal = {{{"sim.present"}, 0.3},
                   {{"family_size"}, 0.3},
                   {{"originality", "radicalness"}, 1.0},
                   {{"sim.past", "patent_scope"}, 1.0},
                   {{"nb_inventors", "claims_bwd"}, 1.0},
                   {{"radicalness", "radicalness"}, -0.7},
                   {{"originality", "originality"}, -0.7}};
    const auto split = stratified_split(synth_generate(spec), 0.75, "y", 7 + s);
    const auto logit = fit_model({"logit", ModelKind::logit}, {}, split.train, "y", 1);
    GridOptions go;
    go.subset_frac = 0.25;
    go.seed = 3 + s;
    const auto cart = grid_search({"cart", ModelKind::cart},
                                  {{"cp", {0.0005, 0.001, 0.002, 0.004, 0.008}}}, split.train, "y", go)
                          .final_model;
    ModelSpec rf_spec{"forest", ModelKind::forest, std::nullopt};
    const auto rf = fit_model(rf_spec, {{"n_trees", 150.0}, {"mtry", 3.0}, {"min_node", 20.0}},
                              split.train, "y", 1);
    sum_logit += test_auc(logit, split.test, "y");
    sum_cart += test_auc(cart, split.test, "y");
    sum_rf += test_auc(rf, split.test, "y");
  }
  const double l = sum_logit / 5, c = sum_cart / 5, r = sum_rf / 5;
  const bool ok = r >= c && c >= l - 0.02 && r > l + 0.03;
  return {ok, "mean auc rf=" + num(r) + " cart=" + num(c) + " logit=" + num(l)};
}

Outcome gradients() {
  const std::size_t count = 300;
  double worst = 0.0;
  std::string worst_case;
  std::set<std::string> activations, losses;
  for (std::uint64_t seed = 0; seed < count; ++seed) {
    const auto g = testutil::gradient_check(seed);
    const auto open = g.description.find('['), close = g.description.find(']');
    for (const auto& a : split_on(g.description.substr(open + 1, close - open - 1), ',')) activations.insert(a);
    losses.insert(g.description.substr(close + 2, g.description.find(' ', close + 2) - close - 2));
    if (g.relative_error > worst) {
      worst = g.relative_error;
      worst_case = g.description;
    }
  }
  auto join = [](const std::set<std::string>& s) {
    std::string out;
    for (const auto& x : s) out += (out.empty() ? "" : "/") + x;
    return out;
  };
  return {worst < 1e-4, std::to_string(count) + " random networks, activations " + join(activations) +
                            ", losses " + join(losses) + ", max relative error " + num(worst) +
                            (worst_case.empty() ? "" : " (" + worst_case + ")")};
}

Outcome auc_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.index(199);
    const std::size_t levels = 2 + rng.index(20);
    std::vector<double> s(n);
    LabelVector y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.index(levels));
      y[i] = rng.bernoulli(0.05 + 0.9 * rng.uniform());
    }
    y[0] = 1;
    y[1] = 0;
    worst = std::max(worst, std::abs(auc(s, y) - testutil::pair_auc(s, y)));
  }
  return {worst <= 1e-10, "1000 instances, max |trapezoid - pair| = " + num(worst)};
}

Dataset regression_toy(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> a(n), b(n), c(n), d(n);
  LabelVector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng.normal();
    b[i] = 0.5 * a[i] + rng.normal();
    c[i] = 10.0 + 3.0 * rng.normal();
    d[i] = rng.normal();
    const double eta = -0.3 + 1.5 * a[i] - 0.4 * b[i] + 0.05 * (c[i] - 10.0);
    y[i] = rng.uniform() < sigmoid(eta);
  }
  return testutil::make_dataset({"a", "b", "c", "d"}, {a, b, c, d}, {{"y", y}});
}

Outcome elastic_net_limits() {
  const auto ds = regression_toy(1, 500);
  const auto logit = fit_logit(ds, "y");
  const auto free = fit_elastic_net(ds, "y", 0.0, 0.5);
  double gap = std::abs(free.intercept - logit.intercept);
  for (std::size_t j = 0; j < logit.coefficients.size(); ++j) {
    gap = std::max(gap, std::abs(free.coefficients[j] - logit.coefficients[j]));
  }
  const bool limit_ok = gap < 1e-4;

  const std::vector<double> lambdas{0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
  const std::size_t p = logit.coefficients.size();
  std::vector<bool> zero(p, false);
  bool lasso_nested = true, lasso_zero = false;
  std::size_t zeros_at_end = 0;
  for (double lambda : lambdas) {
    const auto e = fit_elastic_net(ds, "y", lambda, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
      if (zero[j] && e.coefficients[j] != 0.0) lasso_nested = false;
      zero[j] = zero[j] || e.coefficients[j] == 0.0;
      lasso_zero = lasso_zero || e.coefficients[j] == 0.0;
    }
  }
  zeros_at_end = static_cast<std::size_t>(std::count(zero.begin(), zero.end(), true));

  bool ridge_nonzero = true, ridge_shrinks = true;
  double previous = INFINITY;
  for (double lambda : lambdas) {
    const auto e = fit_elastic_net(ds, "y", lambda, 1.0);
    double norm = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      ridge_nonzero = ridge_nonzero && e.coefficients[j] != 0.0;
      norm += std::pow(e.coefficients[j] * e.feature_sd[j], 2);
    }
    ridge_shrinks = ridge_shrinks && norm < previous;
    previous = norm;
  }
  const bool ok = limit_ok && lasso_zero && lasso_nested && ridge_nonzero && ridge_shrinks;
  return {ok, "lambda=0 gap " + num(gap) + "; alpha=0 zeros " + std::to_string(zeros_at_end) + "/" +
                  std::to_string(p) + (lasso_nested ? " nested" : " not nested") + "; alpha=1 " +
                  (ridge_nonzero ? "no zeros" : "has zeros") + (ridge_shrinks ? ", shrinking" : ", not shrinking")};
}

Dataset signal_data(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> s(n), z(n);
  LabelVector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.normal();
    z[i] = rng.normal();
    y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-(2.0 * s[i] - 0.5)));
  }
  return testutil::make_dataset({"s", "n"}, {s, z}, {{"y", y}});
}

Outcome cv_mechanics() {
  Rng rng(8);
  bool partitions = true;
  for (int t = 0; t < 500; ++t) {
    const std::size_t k = 2 + rng.index(9);
    const std::size_t n = k + rng.index(300);
    LabelVector y(n);
    for (auto& v : y) v = rng.bernoulli(0.15);
    const auto plan = rng.bernoulli(0.5) ? kfold_partition(n, k, rng.next(), std::span<const std::uint8_t>(y))
                                         : kfold_partition(n, k, rng.next());
    std::vector<int> seen(n, 0);
    for (std::size_t f = 0; f < k; ++f) {
      for (auto r : plan.fold_rows(f)) ++seen[r];
    }
    partitions = partitions && std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
  }

  const auto small = signal_data(7, 20);
  const auto plan = kfold_partition(20, 4, 11, std::span<const std::uint8_t>(small.label("y")));
  const ModelSpec logit{"logit", ModelKind::logit};
  const auto cell = cross_validate(logit, {}, small, "y", plan, "auc", 5);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t f = 0; f < 4; ++f) {
    const auto model = fit_model(logit, {}, small.select_rows(plan.training_rows(f)), "y", mix_seed(5, f));
    const auto held = small.select_rows(plan.fold_rows(f));
    const auto& y = held.label("y");
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0) continue;
    sum += testutil::pair_auc(predict_scores(model, held), y);
    ++used;
  }
  const double hand = sum / static_cast<double>(used);
  const bool average_ok = cell.mean && std::abs(*cell.mean - hand) < 1e-12;

  const auto train = signal_data(9, 200);
  const ModelSpec en{"en", ModelKind::elastic_net};
  const HyperGrid grid{{"lambda", {0.001, 0.05}}, {"alpha", {0.0, 1.0}}};
  GridOptions opts;
  opts.subset_frac = 1.0;
  opts.repeats = 1;
  opts.seed = 77;
  const auto r = grid_search(en, grid, train, "y", opts);
  const auto direct_plan = kfold_partition(train.rows(), opts.k, fold_plan_seed(opts.seed, 0),
                                           std::span<const std::uint8_t>(train.label("y")));
  const auto points = grid_expand(grid);
  bool identical = r.cells.size() == points.size();
  std::size_t best = 0;
  std::vector<CvCell> cells;
  for (std::size_t i = 0; identical && i < points.size(); ++i) {
    cells.push_back(cross_validate(en, points[i], train, "y", direct_plan, "auc", model_seed(opts.seed)));
    identical = identical && cells[i].mean && r.cells[i].mean && *cells[i].mean == *r.cells[i].mean;
    for (std::size_t f = 0; identical && f < cells[i].folds.size(); ++f) {
      identical = cells[i].folds[f].value == r.cells[i].folds[f].value;
    }
    if (identical && *cells[i].mean > *cells[best].mean) best = i;
  }
  identical = identical && r.best == best &&
              serialize(r.final_model) == serialize(fit_model(en, points[best], train, "y", model_seed(opts.seed)));
  return {partitions && average_ok && identical,
          std::string(partitions ? "500 plans are partitions" : "partition violated") + "; 20-row mean " +
              (cell.mean ? num(*cell.mean) : "NA") + " vs hand " + num(hand) + "; grid reduction " +
              (identical ? "bit-identical" : "differs")};
}

Outcome xor_separation() {
  const auto ds = testutil::xor_dataset(25);
  const auto& y = ds.label("y");
  auto accuracy_of = [&](const FittedModel& m) {
    return *metrics(confusion(y, threshold_predictions(predict_scores(m, ds), 0.5))).accuracy;
  };
  const double cart = accuracy_of(fit_model({"cart", ModelKind::cart}, {{"cp", 0.0}}, ds, "y", 1));
  const double logit = accuracy_of(fit_model({"logit", ModelKind::logit}, {}, ds, "y", 1));
  return {cart == 1.0 && logit <= 0.6, "cart accuracy " + num(cart) + ", logit accuracy " + num(logit)};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(RARITY_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// Column means and sample standard deviations read straight from a CSV file.
std::map<std::string, std::pair<double, double>> csv_column_stats(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  const auto header = split_on(line, ',');
  std::vector<std::vector<double>> cols(header.size());
  while (std::getline(in, line)) {
    const auto cells = split_on(line, ',');
    for (std::size_t c = 0; c < header.size() && c < cells.size(); ++c) {
      cols[c].push_back(std::strtod(cells[c].c_str(), nullptr));
    }
  }
  std::map<std::string, std::pair<double, double>> out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    out[header[c]] = {testutil::mean_of(cols[c]), testutil::sample_sd(cols[c])};
  }
  return out;
}

struct DemoRuns {
  int status_a = -1, status_b = -1;
  fs::path a, b;
};

DemoRuns run_demo_twice() {
  DemoRuns runs;
  const fs::path base = fs::current_path() / "acceptance_runs";
  fs::remove_all(base);
  fs::create_directories(base);
  runs.a = base / "a";
  runs.b = base / "b";
  const std::string config = (fs::path(RARITY_CONFIG_DIR) / "demo.yaml").string();
  runs.status_a = run_cli("all --config " + config + " --out " + runs.a.string(), base / "a.log");
  runs.status_b = run_cli("all --config " + config + " --out " + runs.b.string(), base / "b.log");
  return runs;
}

Outcome leakage_guard(const DemoRuns& runs) {
  if (runs.status_a != 0) return {false, "demo run exited with " + std::to_string(runs.status_a)};
  const auto manifest = read_manifest(runs.a);
  const auto sequence = split_on(manifest.at("sequence"), ',');
  bool untouched = true;
  std::size_t checked_steps = 0;
  for (const auto& step : sequence) {
    if (step == "evaluate") break;
    const auto it = manifest.find("step." + step + ".reads");
    if (it == manifest.end()) continue;
    ++checked_steps;
    for (const auto& rel : split_on(it->second, ',')) untouched = untouched && rel != "test.csv";
  }
  const bool evaluated = std::find(sequence.begin(), sequence.end(), "evaluate") != sequence.end();

  const auto train = csv_column_stats(runs.a / "train.csv");
  const auto full = csv_column_stats(runs.a / "data.csv");
  std::size_t scaled = 0;
  double worst = 0.0;
  bool differs_from_full = false;
  for (const auto& [key, value] : manifest) {
    const std::string prefix = "scaler.", suffix = ".mean";
    if (key.rfind(prefix, 0) != 0 || key.size() <= suffix.size() ||
        key.compare(key.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    const auto name = key.substr(prefix.size(), key.size() - prefix.size() - suffix.size());
    const double mean = std::strtod(value.c_str(), nullptr);
    const double sd = std::strtod(manifest.at(prefix + name + ".sd").c_str(), nullptr);
    const auto& [oracle_mean, oracle_sd] = train.at(name);
    worst = std::max({worst, std::abs(mean - oracle_mean) / std::max(1.0, std::abs(oracle_mean)),
                      std::abs(sd - oracle_sd) / std::max(1.0, oracle_sd)});
    differs_from_full = differs_from_full || mean != full.at(name).first;
    ++scaled;
  }
  const bool stats_ok = scaled > 0 && worst < 1e-12 && differs_from_full;
  return {untouched && evaluated && checked_steps >= 4 && stats_ok,
          std::to_string(checked_steps) + " steps before evaluate, test.csv " +
              (untouched ? "never read" : "READ") + "; " + std::to_string(scaled) +
              " scaler columns match train-only stats (max rel dev " + num(worst) + ")"};
}

Outcome determinism(const DemoRuns& runs) {
  if (runs.status_a != 0 || runs.status_b != 0) return {false, "demo runs did not both succeed"};
  auto artifacts = [](const std::map<std::string, std::string>& m) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : m) {
      if (k.rfind("artifact.", 0) == 0) out[k] = v;
    }
    return out;
  };
  const auto a = artifacts(read_manifest(runs.a));
  const auto b = artifacts(read_manifest(runs.b));
  std::size_t mismatched = 0;
  for (const auto& [k, v] : a) mismatched += !b.count(k) || b.at(k) != v;
  const bool ok = !a.empty() && a.size() == b.size() && mismatched == 0;
  return {ok, std::to_string(a.size()) + " artifact hashes, " + std::to_string(mismatched) + " mismatched"};
}

template <class F>
bool report(const std::string& id, F&& check) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << id << (o.pass ? " PASS " : " FAIL ") << o.detail << " [" << num(secs) << " s]" << std::endl;
  return o.pass;
}

}  // namespace

int main() {
  bool ok = true;
  ok &= report("AC1", architecture);
  ok &= report("AC2", rare_event_failure);
  ok &= report("AC3", anomaly_lift);
  ok &= report("AC4", nonlinearity_ordering);
  ok &= report("AC5", gradients);
  ok &= report("AC6", auc_oracle);
  ok &= report("AC7", elastic_net_limits);
  ok &= report("AC8", cv_mechanics);
  ok &= report("AC9", xor_separation);
  DemoRuns runs;
  try {
    runs = run_demo_twice();
  } catch (const std::exception& e) {
    std::cout << "demo runs failed: " << e.what() << std::endl;
  }
  ok &= report("AC10", [&] { return leakage_guard(runs); });
  ok &= report("AC11", [&] { return determinism(runs); });
  return ok ? 0 : 1;
}
