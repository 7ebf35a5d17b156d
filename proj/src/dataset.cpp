#include "rarity/dataset.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "rarity/common.hpp"
#include "rarity/random.hpp"

namespace rarity {

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::continuous: return "continuous";
    case FeatureKind::categorical: return "categorical";
    case FeatureKind::binary: return "binary";
  }
  return "continuous";
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "continuous") return FeatureKind::continuous;
  if (text == "categorical") return FeatureKind::categorical;
  if (text == "binary") return FeatureKind::binary;
  throw ValidationError("unknown feature kind '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::size_t rows, std::vector<Feature> features, std::vector<double> values,
                 std::map<std::string, LabelVector> labels)
    : rows_(rows), features_(std::move(features)), values_(std::move(values)),
      labels_(std::move(labels)) {
  if (values_.size() != rows_ * features_.size()) {
    throw ValidationError("dataset value count does not match rows x features");
  }
  std::set<std::string> seen;
  for (const auto& f : features_) {
    if (!seen.insert(f.name).second) {
      throw ValidationError("duplicate feature name '" + f.name + "'");
    }
  }
  for (const auto& [name, vec] : labels_) {
    if (vec.size() != rows_) {
      throw ValidationError("label '" + name + "' has wrong length");
    }
    for (auto v : vec) {
      if (v > 1) throw ValidationError("label '" + name + "' is not binary");
    }
  }
}

std::vector<std::string> Dataset::feature_names() const {
  std::vector<std::string> names;
  names.reserve(features_.size());
  for (const auto& f : features_) names.push_back(f.name);
  return names;
}

std::vector<double> Dataset::column(std::size_t col) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = at(r, col);
  return out;
}

std::optional<std::size_t> Dataset::find_feature(std::string_view name) const {
  for (std::size_t j = 0; j < features_.size(); ++j) {
    if (features_[j].name == name) return j;
  }
  return std::nullopt;
}

std::size_t Dataset::feature_index(std::string_view name) const {
  auto idx = find_feature(name);
  if (!idx) throw ValidationError("unknown feature '" + std::string(name) + "'");
  return *idx;
}

bool Dataset::has_label(std::string_view name) const {
  return labels_.find(std::string(name)) != labels_.end();
}

const LabelVector& Dataset::label(std::string_view name) const {
  auto it = labels_.find(std::string(name));
  if (it == labels_.end()) throw ValidationError("unknown label '" + std::string(name) + "'");
  return it->second;
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
  std::vector<double> values;
  values.reserve(rows.size() * cols());
  for (auto r : rows) {
    if (r >= rows_) throw ValidationError("row index out of range");
    auto src = row(r);
    values.insert(values.end(), src.begin(), src.end());
  }
  std::map<std::string, LabelVector> labels;
  for (const auto& [name, vec] : labels_) {
    LabelVector sub;
    sub.reserve(rows.size());
    for (auto r : rows) sub.push_back(vec[r]);
    labels.emplace(name, std::move(sub));
  }
  return Dataset(rows.size(), features_, std::move(values), std::move(labels));
}

Dataset Dataset::select_features(std::span<const std::size_t> cols) const {
  std::vector<Feature> features;
  for (auto c : cols) features.push_back(features_.at(c));
  std::vector<double> values;
  values.reserve(rows_ * cols.size());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (auto c : cols) values.push_back(at(r, c));
  }
  return Dataset(rows_, std::move(features), std::move(values), labels_);
}

Dataset Dataset::select_features(const std::vector<std::string>& names) const {
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(feature_index(n));
  return select_features(cols);
}

Dataset Dataset::drop_features(const std::vector<std::string>& names) const {
  for (const auto& n : names) feature_index(n);
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < features_.size(); ++j) {
    if (std::find(names.begin(), names.end(), features_[j].name) == names.end()) {
      keep.push_back(j);
    }
  }
  return select_features(keep);
}

Dataset Dataset::with_label(std::string name, LabelVector values) const {
  auto labels = labels_;
  labels[std::move(name)] = std::move(values);
  return Dataset(rows_, features_, values_, std::move(labels));
}

Dataset Dataset::without_labels() const { return Dataset(rows_, features_, values_, {}); }

// ---------------------------------------------------------------------------
// Schema

Schema load_schema(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw IoError("cannot read schema " + path.string() + ": " + e.what());
  }
  if (!root.IsMap()) throw ValidationError("schema " + path.string() + " must be a mapping");
  Schema schema;
  for (const auto& kv : root) {
    auto name = kv.first.as<std::string>();
    auto kind = kv.second.as<std::string>();
    if (kind == "label") {
      schema.labels.push_back(name);
    } else {
      schema.features[name] = parse_feature_kind(kind);
    }
  }
  return schema;
}

void save_schema(const Schema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# column -> kind (continuous | categorical | binary | label)\n";
  for (const auto& [name, kind] : schema.features) {
    out << '"' << name << "\": " << to_string(kind) << '\n';
  }
  for (const auto& name : schema.labels) out << '"' << name << "\": label\n";
}

Schema schema_of(const Dataset& ds) {
  Schema schema;
  for (const auto& f : ds.features()) schema.features[f.name] = f.kind;
  for (const auto& [name, _] : ds.labels()) schema.labels.push_back(name);
  return schema;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string cell_where(std::size_t row, const std::string& column) {
  return "row " + std::to_string(row + 1) + ", column '" + column + "'";
}

}  // namespace

Dataset parse_csv(std::string_view text, const Schema& schema, MissingPolicy policy,
                  std::string_view source) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw IoError(std::string(source) + ": missing header row");

  auto header = split_csv_line(lines[0]);
  for (auto& h : header) h = trim(h);
  const std::size_t ncols = header.size();

  // Header must match the schema exactly (as a set).
  std::set<std::string> header_set(header.begin(), header.end());
  if (header_set.size() != header.size()) {
    throw ValidationError(std::string(source) + ": duplicate column in header");
  }
  std::set<std::string> label_set(schema.labels.begin(), schema.labels.end());
  for (const auto& h : header) {
    if (!schema.features.count(h) && !label_set.count(h)) {
      throw ValidationError(std::string(source) + ": column '" + h + "' not in schema");
    }
  }
  for (const auto& [name, _] : schema.features) {
    if (!header_set.count(name)) {
      throw ValidationError(std::string(source) + ": schema column '" + name +
                            "' missing from header");
    }
  }
  for (const auto& name : schema.labels) {
    if (!header_set.count(name)) {
      throw ValidationError(std::string(source) + ": label column '" + name +
                            "' missing from header");
    }
  }

  std::vector<Feature> features;
  std::vector<std::size_t> feature_cols;
  std::vector<std::size_t> label_cols;
  for (std::size_t c = 0; c < ncols; ++c) {
    if (label_set.count(header[c])) {
      label_cols.push_back(c);
    } else {
      features.push_back({header[c], schema.features.at(header[c]), {}});
      feature_cols.push_back(c);
    }
  }

  const std::size_t rows = lines.size() - 1;
  const std::size_t nf = features.size();
  std::vector<double> values(rows * nf, NAN);
  std::vector<LabelVector> label_values(label_cols.size(), LabelVector(rows));
  std::vector<std::map<std::string, std::size_t>> level_index(nf);

  for (std::size_t r = 0; r < rows; ++r) {
    auto cells = split_csv_line(lines[r + 1]);
    if (cells.size() != ncols) {
      throw ValidationError(std::string(source) + ": row " + std::to_string(r + 1) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(ncols));
    }
    for (std::size_t j = 0; j < nf; ++j) {
      auto cell = trim(cells[feature_cols[j]]);
      auto& f = features[j];
      if (cell.empty()) {
        if (policy == MissingPolicy::error) {
          throw ValidationError(std::string(source) + ": missing value at " +
                                cell_where(r, f.name));
        }
        continue;  // stays NaN until imputation
      }
      if (f.kind == FeatureKind::categorical) {
        auto [it, inserted] = level_index[j].emplace(cell, f.levels.size());
        if (inserted) f.levels.push_back(cell);
        values[r * nf + j] = static_cast<double>(it->second);
      } else {
        double v = parse_double(cell, std::string(source) + " " + cell_where(r, f.name));
        if (f.kind == FeatureKind::binary && v != 0.0 && v != 1.0) {
          throw ValidationError(std::string(source) + ": non-binary value at " +
                                cell_where(r, f.name));
        }
        values[r * nf + j] = v;
      }
    }
    for (std::size_t l = 0; l < label_cols.size(); ++l) {
      auto cell = trim(cells[label_cols[l]]);
      const auto& name = header[label_cols[l]];
      if (cell.empty()) {
        throw ValidationError(std::string(source) + ": missing label at " + cell_where(r, name));
      }
      double v = parse_double(cell, std::string(source) + " " + cell_where(r, name));
      if (v != 0.0 && v != 1.0) {
        throw ValidationError(std::string(source) + ": non-binary label at " +
                              cell_where(r, name));
      }
      label_values[l][r] = static_cast<std::uint8_t>(v);
    }
  }

  if (policy == MissingPolicy::impute) {
    for (std::size_t j = 0; j < nf; ++j) {
      const auto& f = features[j];
      double fill = 0.0;
      if (f.kind == FeatureKind::continuous) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          double v = values[r * nf + j];
          if (!std::isnan(v)) {
            sum += v;
            ++count;
          }
        }
        if (count == 0 && rows > 0) {
          throw ValidationError(std::string(source) + ": column '" + f.name +
                                "' has no values to impute from");
        }
        fill = count ? sum / static_cast<double>(count) : 0.0;
      } else {
        // Mode; ties go to the lowest level index (or value 0 for binary).
        std::map<double, std::size_t> counts;
        for (std::size_t r = 0; r < rows; ++r) {
          double v = values[r * nf + j];
          if (!std::isnan(v)) ++counts[v];
        }
        std::size_t best = 0;
        for (const auto& [v, c] : counts) {
          if (c > best) {
            best = c;
            fill = v;
          }
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        if (std::isnan(values[r * nf + j])) values[r * nf + j] = fill;
      }
    }
  }

  std::map<std::string, LabelVector> labels;
  for (std::size_t l = 0; l < label_cols.size(); ++l) {
    labels.emplace(header[label_cols[l]], std::move(label_values[l]));
  }
  return Dataset(rows, std::move(features), std::move(values), std::move(labels));
}

Dataset load_csv(const std::filesystem::path& path, const Schema& schema, MissingPolicy policy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), schema, policy, path.string());
}

std::string to_csv(const Dataset& ds) {
  std::string out;
  bool first = true;
  for (const auto& f : ds.features()) {
    if (!first) out += ',';
    out += quote_if_needed(f.name);
    first = false;
  }
  for (const auto& [name, _] : ds.labels()) {
    if (!first) out += ',';
    out += quote_if_needed(name);
    first = false;
  }
  out += '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    first = true;
    for (std::size_t j = 0; j < ds.cols(); ++j) {
      if (!first) out += ',';
      first = false;
      const auto& f = ds.feature(j);
      double v = ds.at(r, j);
      if (f.kind == FeatureKind::categorical) {
        out += quote_if_needed(f.levels.at(static_cast<std::size_t>(v)));
      } else {
        out += format_double(v);
      }
    }
    for (const auto& [_, vec] : ds.labels()) {
      if (!first) out += ',';
      first = false;
      out += vec[r] ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_csv(ds);
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic generation

std::vector<Marginal> patent_marginals() {
  using K = FeatureKind;
  return {
      {"sim.past", K::continuous, 0.088, 0.185, 0, 1},
      {"sim.present", K::continuous, 0.153, 0.262, 0, 1},
      {"many_field", K::binary, 0.398, 0.489, 0, 1},
      {"patent_scope", K::continuous, 1.854, 1.162, 1, 31},
      {"family_size", K::continuous, 4.251, 3.906, 1, 57},
      {"bwd_cits", K::continuous, 15.150, 25.640, 0, 4756},
      {"npl_cits", K::continuous, 3.328, 12.690, 0, 1592},
      {"claims_bwd", K::continuous, 1.673, 3.378, 0, 405},
      {"originality", K::continuous, 0.707, 0.248, 0, 1},
      {"radicalness", K::continuous, 0.382, 0.288, 0, 1},
      {"nb_applicants", K::continuous, 1.849, 1.705, 0, 77},
      {"nb_inventors", K::continuous, 2.666, 1.925, 0, 99},
      {"patent_scope.diff", K::continuous, 0.008, 1.091, -2.806, 29.130},
      {"bwd_cits.diff", K::continuous, 0.222, 24.560, -42.050, 4732.000},
      {"npl_cits.diff", K::continuous, 0.112, 12.100, -30.510, 1579.000},
      {"family_size.diff", K::continuous, 0.031, 3.536, -11.090, 50.090},
      {"originality.diff", K::continuous, -0.029, 0.242, -0.911, 0.431},
      {"radicalness.diff", K::continuous, -0.018, 0.277, -0.751, 0.808},
      {"sim.past.diff", K::continuous, -0.000, 0.180, -0.247, 0.990},
      {"sim.present.diff", K::continuous, 0.000, 0.260, -0.315, 0.942},
  };
}

std::vector<std::string> patent_base_features() {
  return {"sim.past",     "sim.present", "many_field",  "patent_scope",
          "family_size",  "bwd_cits",    "npl_cits",    "claims_bwd",
          "originality",  "radicalness", "nb_applicants", "nb_inventors"};
}

namespace {

struct CompiledTerm {
  std::vector<std::size_t> cols;
  double weight;
};

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

Dataset synth_generate(const SynthSpec& spec) {
  if (spec.n < 1) throw ValidationError("synth: n must be at least 1");
  if (!(spec.positive_rate > 0.0 && spec.positive_rate < 1.0)) {
    throw ValidationError("synth: positive_rate must lie in (0, 1)");
  }
  if (spec.features.empty()) throw ValidationError("synth: no features");

  std::vector<Feature> features;
  std::map<std::string, std::size_t> index;
  for (const auto& m : spec.features) {
    if (m.sd < 0 || std::isnan(m.sd)) {
      throw ValidationError("synth: degenerate marginal for '" + m.name + "' (sd < 0)");
    }
    if (m.min > m.max) {
      throw ValidationError("synth: degenerate marginal for '" + m.name + "' (min > max)");
    }
    Feature f{m.name, m.kind, {}};
    if (m.kind == FeatureKind::categorical) {
      if (m.levels < 2) {
        throw ValidationError("synth: categorical '" + m.name + "' needs at least 2 levels");
      }
      for (std::size_t l = 0; l < m.levels; ++l) f.levels.push_back("L" + std::to_string(l));
    }
    if (m.kind == FeatureKind::binary && !(m.mean >= 0 && m.mean <= 1)) {
      throw ValidationError("synth: binary '" + m.name + "' needs mean in [0, 1]");
    }
    index[m.name] = features.size();
    features.push_back(std::move(f));
  }
  if (index.size() != features.size()) throw ValidationError("synth: duplicate feature names");

  bool has_interaction = false;
  std::vector<CompiledTerm> terms;
  for (const auto& t : spec.signal) {
    if (t.features.empty() || t.features.size() > 2) {
      throw ValidationError("synth: signal terms take one or two features");
    }
    CompiledTerm ct{{}, t.weight};
    for (const auto& name : t.features) {
      auto it = index.find(name);
      if (it == index.end()) throw ValidationError("synth: unknown signal feature '" + name + "'");
      if (spec.features[it->second].kind == FeatureKind::categorical) {
        throw ValidationError("synth: categorical feature '" + name + "' cannot carry signal");
      }
      ct.cols.push_back(it->second);
    }
    has_interaction = has_interaction || t.features.size() == 2;
    terms.push_back(std::move(ct));
  }
  if (!has_interaction) {
    throw ValidationError("synth: signal must include at least one pairwise interaction term");
  }
  std::vector<double> shift(features.size(), 0.0);
  for (const auto& [name, value] : spec.anomaly_shift) {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("synth: unknown anomaly_shift feature '" + name + "'");
    shift[it->second] = value;
  }

  const std::size_t nf = features.size();
  Rng rng(spec.seed);
  std::vector<double> values(spec.n * nf);
  LabelVector labels(spec.n);
  std::vector<double> x(nf);
  constexpr int kMaxAttempts = 1'000'000;

  for (std::size_t r = 0; r < spec.n; ++r) {
    const bool positive = rng.bernoulli(spec.positive_rate);
    labels[r] = positive ? 1 : 0;
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt >= kMaxAttempts) {
        throw ValidationError("synth: signal too extreme, rejection sampler did not accept a row");
      }
      for (std::size_t j = 0; j < nf; ++j) {
        const auto& m = spec.features[j];
        switch (m.kind) {
          case FeatureKind::continuous:
            x[j] = std::clamp(m.mean + m.sd * rng.normal(), m.min, m.max);
            break;
          case FeatureKind::binary:
            x[j] = rng.bernoulli(m.mean) ? 1.0 : 0.0;
            break;
          case FeatureKind::categorical:
            x[j] = static_cast<double>(rng.index(m.levels));
            break;
        }
      }
      double score = 0.0;
      for (const auto& t : terms) {
        double prod = t.weight;
        for (auto c : t.cols) {
          const auto& m = spec.features[c];
          prod *= m.sd > 0 ? (x[c] - m.mean) / m.sd : 0.0;
        }
        score += prod;
      }
      const double p = sigmoid(score);
      if (rng.bernoulli(positive ? p : 1.0 - p)) break;
    }
    for (std::size_t j = 0; j < nf; ++j) {
      double v = x[j];
      if (positive && shift[j] != 0.0) {
        const auto& m = spec.features[j];
        v += shift[j];
        if (m.kind == FeatureKind::continuous) v = std::clamp(v, m.min, m.max);
      }
      values[r * nf + j] = v;
    }
  }
  std::map<std::string, LabelVector> label_map;
  label_map.emplace(spec.label, std::move(labels));
  return Dataset(spec.n, std::move(features), std::move(values), std::move(label_map));
}

// ---------------------------------------------------------------------------
// Splitting

SplitPair stratified_split(const Dataset& ds, double fraction, std::string_view label,
                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("split fraction must lie in (0, 1), got " + format_double(fraction));
  }
  const auto& y = ds.label(label);
  SplitPair out;
  out.fraction = fraction;
  out.stratify_on = std::string(label);
  for (std::uint8_t cls = 0; cls <= 1; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      if (y[r] == cls) members.push_back(r);
    }
    if (members.empty()) {
      throw ValidationError("split: class " + std::to_string(cls) + " of label '" +
                            std::string(label) + "' has no rows");
    }
    Rng rng(mix_seed(seed, cls));
    rng.shuffle(members);
    const auto n_train = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(members.size()) + 1e-9));
    out.train_rows.insert(out.train_rows.end(), members.begin(), members.begin() + n_train);
    out.test_rows.insert(out.test_rows.end(), members.begin() + n_train, members.end());
  }
  std::sort(out.train_rows.begin(), out.train_rows.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  out.train = ds.select_rows(out.train_rows);
  out.test = ds.select_rows(out.test_rows);
  return out;
}

}  // namespace rarity
