#include "rarity/model_io.hpp"

#include <cmath>
#include <sstream>

#include "rarity/common.hpp"

namespace rarity {

namespace {

constexpr const char* kMagic = "rarity-model";
constexpr int kVersion = 1;

// Strings are written as single tokens: whitespace, '%' and '~' are
// percent-encoded and the empty string is "~".
std::string encode(std::string_view s) {
  if (s.empty()) return "~";
  std::string out;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (u <= 0x20 || c == '%' || c == '~' || u == 0x7f) {
      static constexpr char hex[] = "0123456789ABCDEF";
      out += '%';
      out += hex[u >> 4];
      out += hex[u & 0xf];
    } else {
      out += c;
    }
  }
  return out;
}

std::string decode(const std::string& token) {
  if (token == "~") return {};
  std::string out;
  for (std::size_t i = 0; i < token.size(); ++i) {
    if (token[i] != '%') {
      out += token[i];
      continue;
    }
    if (i + 2 >= token.size()) throw IoError("model file: bad escape in '" + token + "'");
    out += static_cast<char>(std::stoi(token.substr(i + 1, 2), nullptr, 16));
    i += 2;
  }
  return out;
}

class Writer {
 public:
  Writer& key(const char* k) {
    if (!out_.empty()) out_ += '\n';
    out_ += k;
    return *this;
  }
  Writer& str(std::string_view s) { return raw(encode(s)); }
  Writer& num(double v) { return raw(format_double(v)); }
  Writer& uint(std::uint64_t v) { return raw(std::to_string(v)); }
  Writer& integer(std::int64_t v) { return raw(std::to_string(v)); }
  Writer& strings(const std::vector<std::string>& v) {
    uint(v.size());
    for (const auto& s : v) str(s);
    return *this;
  }
  Writer& nums(const double* data, std::size_t n) {
    uint(n);
    for (std::size_t i = 0; i < n; ++i) num(data[i]);
    return *this;
  }
  Writer& nums(const std::vector<double>& v) { return nums(v.data(), v.size()); }
  std::string finish() { return out_ + "\n"; }

 private:
  Writer& raw(const std::string& token) {
    out_ += ' ';
    out_ += token;
    return *this;
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& text) : in_(text) {}

  std::string token() {
    std::string t;
    if (!(in_ >> t)) throw IoError("model file: unexpected end of input");
    return t;
  }
  void expect(std::string_view k) {
    const auto t = token();
    if (t != k) throw IoError("model file: expected '" + std::string(k) + "', found '" + t + "'");
  }
  std::string str() { return decode(token()); }
  double num() {
    const auto t = token();
    if (t == "nan") return NAN;
    try {
      return parse_double(t, "model file");
    } catch (const ValidationError& e) {
      throw IoError(e.what());
    }
  }
  std::uint64_t uint() {
    const auto t = token();
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(t, &pos);
      if (pos != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw IoError("model file: expected a count, found '" + t + "'");
    }
  }
  std::int64_t integer() {
    const auto t = token();
    try {
      std::size_t pos = 0;
      const auto v = std::stoll(t, &pos);
      if (pos != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw IoError("model file: expected an integer, found '" + t + "'");
    }
  }
  std::vector<std::string> strings() {
    std::vector<std::string> v(checked_count());
    for (auto& s : v) s = str();
    return v;
  }
  std::vector<double> nums() {
    std::vector<double> v(checked_count());
    for (auto& x : v) x = num();
    return v;
  }
  void header(std::string_view type) {
    expect(kMagic);
    const auto version = integer();
    if (version != kVersion) {
      throw IoError("model file: unsupported version " + std::to_string(version));
    }
    expect(type);
  }
  void end() {
    std::string t;
    if (in_ >> t) throw IoError("model file: trailing content '" + t + "'");
  }

 private:
  std::size_t checked_count() {
    const auto n = uint();
    if (n > 100'000'000) throw IoError("model file: implausible length");
    return static_cast<std::size_t>(n);
  }
  std::istringstream in_;
};

void start(Writer& w, const char* type) {
  w.key(kMagic).integer(kVersion).str(type);
}

// ---------------------------------------------------------------------------

void write_prep(Writer& w, const Preprocessor& p) {
  w.key("scaler").uint(p.scaler ? 1 : 0);
  if (p.scaler) {
    const auto& s = *p.scaler;
    w.key("method").str(to_string(s.method));
    w.key("columns").uint(s.columns.size());
    for (const auto& c : s.columns) {
      w.key("column").str(c.name).num(c.mean).num(c.sd).num(c.min).num(c.max).uint(c.constant);
    }
    w.key("fitted_features").strings(s.fitted_features);
    w.key("fitted_rows").uint(s.fitted_rows);
  }
  w.key("one_hot").uint(p.one_hot_features.size());
  for (const auto& f : p.one_hot_features) w.key("levels").str(f.name).strings(f.levels);
}

Preprocessor read_prep(Reader& r) {
  Preprocessor p;
  r.expect("scaler");
  if (r.uint()) {
    ScalerParams s;
    r.expect("method");
    s.method = parse_scaler_method(r.str());
    r.expect("columns");
    const auto n = r.uint();
    for (std::uint64_t i = 0; i < n; ++i) {
      r.expect("column");
      ColumnStats c;
      c.name = r.str();
      c.mean = r.num();
      c.sd = r.num();
      c.min = r.num();
      c.max = r.num();
      c.constant = r.uint() != 0;
      s.columns.push_back(c);
    }
    r.expect("fitted_features");
    s.fitted_features = r.strings();
    r.expect("fitted_rows");
    s.fitted_rows = r.uint();
    p.scaler = s;
  }
  r.expect("one_hot");
  const auto n = r.uint();
  for (std::uint64_t i = 0; i < n; ++i) {
    r.expect("levels");
    Feature f;
    f.kind = FeatureKind::categorical;
    f.name = r.str();
    f.levels = r.strings();
    p.one_hot_features.push_back(std::move(f));
  }
  return p;
}

void write_tree(Writer& w, const DecisionTree& t) {
  w.key("features").strings(t.feature_names);
  w.key("cp").num(t.cp);
  w.key("min_split_obs").uint(t.constraints.min_split_obs);
  w.key("max_depth").integer(t.constraints.max_depth ? *t.constraints.max_depth : -1);
  w.key("nodes").uint(t.nodes.size());
  for (const auto& n : t.nodes) {
    w.key("node").integer(n.feature).num(n.threshold).integer(n.left).integer(n.right)
        .uint(n.counts[0]).uint(n.counts[1]).num(n.gain);
  }
}

DecisionTree read_tree(Reader& r) {
  DecisionTree t;
  r.expect("features");
  t.feature_names = r.strings();
  r.expect("cp");
  t.cp = r.num();
  r.expect("min_split_obs");
  t.constraints.min_split_obs = r.uint();
  r.expect("max_depth");
  const auto depth = r.integer();
  if (depth >= 0) t.constraints.max_depth = static_cast<int>(depth);
  r.expect("nodes");
  const auto n = r.uint();
  const auto nf = static_cast<std::int64_t>(t.feature_names.size());
  for (std::uint64_t i = 0; i < n; ++i) {
    r.expect("node");
    TreeNode node;
    node.feature = static_cast<int>(r.integer());
    node.threshold = r.num();
    node.left = static_cast<int>(r.integer());
    node.right = static_cast<int>(r.integer());
    node.counts[0] = static_cast<std::uint32_t>(r.uint());
    node.counts[1] = static_cast<std::uint32_t>(r.uint());
    node.gain = r.num();
    const auto nn = static_cast<std::int64_t>(n);
    if (node.feature >= nf ||
        (!node.is_leaf() && (node.left <= static_cast<int>(i) || node.right <= static_cast<int>(i) ||
                             node.left >= nn || node.right >= nn))) {
      throw IoError("model file: corrupt tree node " + std::to_string(i));
    }
    t.nodes.push_back(node);
  }
  if (t.nodes.empty()) throw IoError("model file: tree without nodes");
  return t;
}

void write_network(Writer& w, const Network& net) {
  w.key("features").strings(net.feature_names);
  w.key("seed").uint(net.seed);
  w.key("dropout").nums(net.dropout);
  w.key("layers").uint(net.layers.size());
  for (const auto& l : net.layers) {
    w.key("layer").uint(static_cast<std::uint64_t>(l.outputs())).uint(static_cast<std::uint64_t>(l.inputs()))
        .str(to_string(l.activation));
    w.key("weights").nums(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    w.key("biases").nums(l.biases.data(), static_cast<std::size_t>(l.biases.size()));
  }
}

Network read_network(Reader& r) {
  Network net;
  r.expect("features");
  net.feature_names = r.strings();
  r.expect("seed");
  net.seed = r.uint();
  r.expect("dropout");
  net.dropout = r.nums();
  r.expect("layers");
  const auto n = r.uint();
  for (std::uint64_t i = 0; i < n; ++i) {
    r.expect("layer");
    DenseLayer l;
    const auto rows = static_cast<Eigen::Index>(r.uint());
    const auto cols = static_cast<Eigen::Index>(r.uint());
    l.activation = parse_activation(r.str());
    r.expect("weights");
    auto w = r.nums();
    r.expect("biases");
    auto b = r.nums();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
      throw IoError("model file: layer " + std::to_string(i) + " has inconsistent shape");
    }
    l.weights = Eigen::Map<Eigen::MatrixXd>(w.data(), rows, cols);
    l.biases = Eigen::Map<Eigen::VectorXd>(b.data(), rows);
    if (!net.layers.empty() && net.layers.back().outputs() != cols) {
      throw IoError("model file: layer " + std::to_string(i) + " does not chain");
    }
    net.layers.push_back(std::move(l));
  }
  if (net.layers.empty()) throw IoError("model file: network without layers");
  return net;
}

struct ModelWriter {
  Writer& w;
  void operator()(const MajorityModel& m) const { w.key("positive_share").num(m.positive_share); }
  void operator()(const LogitModel& m) const {
    w.key("features").strings(m.feature_names);
    w.key("intercept").num(m.intercept);
    w.key("coefficients").nums(m.coefficients);
    w.key("feature_sd").nums(m.feature_sd);
    w.key("converged").uint(m.converged);
    w.key("iterations").integer(m.iterations);
    w.key("log_likelihood").num(m.log_likelihood);
  }
  void operator()(const ElasticNetModel& m) const {
    w.key("features").strings(m.feature_names);
    w.key("intercept").num(m.intercept);
    w.key("coefficients").nums(m.coefficients);
    w.key("feature_sd").nums(m.feature_sd);
    w.key("lambda").num(m.lambda);
    w.key("alpha").num(m.alpha);
    w.key("converged").uint(m.converged);
    w.key("sweeps").integer(m.sweeps);
    w.key("objective_path").nums(m.objective_path);
  }
  void operator()(const DecisionTree& t) const { write_tree(w, t); }
  void operator()(const Forest& f) const {
    w.key("features").strings(f.feature_names);
    w.key("hyper").uint(f.hyper.n_trees).uint(f.hyper.mtry).uint(f.hyper.min_node)
        .str(to_string(f.hyper.splitrule)).uint(f.hyper.seed).uint(f.hyper.bootstrap);
    w.key("trees").uint(f.trees.size());
    for (std::size_t i = 0; i < f.trees.size(); ++i) {
      w.key("tree").uint(f.tree_seeds.at(i));
      write_tree(w, f.trees[i]);
    }
  }
  void operator()(const Network& n) const { write_network(w, n); }
};

ModelVariant read_model_body(Reader& r, ModelKind kind) {
  switch (kind) {
    case ModelKind::majority: {
      r.expect("positive_share");
      return MajorityModel{r.num()};
    }
    case ModelKind::logit: {
      LogitModel m;
      r.expect("features");
      m.feature_names = r.strings();
      r.expect("intercept");
      m.intercept = r.num();
      r.expect("coefficients");
      m.coefficients = r.nums();
      r.expect("feature_sd");
      m.feature_sd = r.nums();
      r.expect("converged");
      m.converged = r.uint() != 0;
      r.expect("iterations");
      m.iterations = static_cast<int>(r.integer());
      r.expect("log_likelihood");
      m.log_likelihood = r.num();
      if (m.coefficients.size() != m.feature_names.size()) throw IoError("model file: coefficient count");
      return m;
    }
    case ModelKind::elastic_net: {
      ElasticNetModel m;
      r.expect("features");
      m.feature_names = r.strings();
      r.expect("intercept");
      m.intercept = r.num();
      r.expect("coefficients");
      m.coefficients = r.nums();
      r.expect("feature_sd");
      m.feature_sd = r.nums();
      r.expect("lambda");
      m.lambda = r.num();
      r.expect("alpha");
      m.alpha = r.num();
      r.expect("converged");
      m.converged = r.uint() != 0;
      r.expect("sweeps");
      m.sweeps = static_cast<int>(r.integer());
      r.expect("objective_path");
      m.objective_path = r.nums();
      if (m.coefficients.size() != m.feature_names.size()) throw IoError("model file: coefficient count");
      return m;
    }
    case ModelKind::cart:
      return read_tree(r);
    case ModelKind::forest: {
      Forest f;
      r.expect("features");
      f.feature_names = r.strings();
      r.expect("hyper");
      f.hyper.n_trees = r.uint();
      f.hyper.mtry = r.uint();
      f.hyper.min_node = r.uint();
      f.hyper.splitrule = parse_split_rule(r.str());
      f.hyper.seed = r.uint();
      f.hyper.bootstrap = r.uint() != 0;
      r.expect("trees");
      const auto n = r.uint();
      for (std::uint64_t i = 0; i < n; ++i) {
        r.expect("tree");
        f.tree_seeds.push_back(r.uint());
        f.trees.push_back(read_tree(r));
      }
      return f;
    }
    case ModelKind::ffn:
      return read_network(r);
  }
  throw IoError("model file: unknown model kind");
}

}  // namespace

std::string serialize(const FittedModel& model) {
  Writer w;
  start(w, "fitted");
  w.key("name").str(model.name);
  w.key("kind").str(to_string(model.kind));
  w.key("label").str(model.label);
  w.key("point").uint(model.point.size());
  for (const auto& [name, value] : model.point) {
    if (const auto* d = std::get_if<double>(&value)) {
      w.key("hyper").str(name).str("number").num(*d);
    } else {
      w.key("hyper").str(name).str("text").str(std::get<std::string>(value));
    }
  }
  w.key("excluded").strings(model.excluded);
  write_prep(w, model.prep);
  std::visit(ModelWriter{w}, model.model);
  return w.finish();
}

FittedModel deserialize_model(const std::string& text) {
  Reader r(text);
  r.header("fitted");
  FittedModel m;
  r.expect("name");
  m.name = r.str();
  r.expect("kind");
  try {
    m.kind = parse_model_kind(r.str());
  } catch (const ValidationError& e) {
    throw IoError(std::string("model file: ") + e.what());
  }
  r.expect("label");
  m.label = r.str();
  r.expect("point");
  const auto n = r.uint();
  for (std::uint64_t i = 0; i < n; ++i) {
    r.expect("hyper");
    auto name = r.str();
    const auto type = r.str();
    if (type == "number") {
      m.point[name] = r.num();
    } else if (type == "text") {
      m.point[name] = r.str();
    } else {
      throw IoError("model file: bad hyperparameter type '" + type + "'");
    }
  }
  r.expect("excluded");
  m.excluded = r.strings();
  m.prep = read_prep(r);
  m.model = read_model_body(r, m.kind);
  r.end();
  return m;
}

std::string serialize(const Preprocessor& prep) {
  Writer w;
  start(w, "preprocessor");
  write_prep(w, prep);
  return w.finish();
}

Preprocessor deserialize_preprocessor(const std::string& text) {
  Reader r(text);
  r.header("preprocessor");
  auto p = read_prep(r);
  r.end();
  return p;
}

std::string serialize(const Autoencoder& ae) {
  Writer w;
  start(w, "autoencoder");
  w.key("activity_l2").num(ae.activity_l2);
  w.key("loss").str(to_string(ae.loss));
  w.key("inputs").strings(ae.feature_names);
  write_network(w, ae.net);
  return w.finish();
}

Autoencoder deserialize_autoencoder(const std::string& text) {
  Reader r(text);
  r.header("autoencoder");
  Autoencoder ae;
  r.expect("activity_l2");
  ae.activity_l2 = r.num();
  r.expect("loss");
  ae.loss = parse_loss_kind(r.str());
  r.expect("inputs");
  ae.feature_names = r.strings();
  ae.net = read_network(r);
  r.end();
  return ae;
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
  write_text_file(path, serialize(model));
}
FittedModel load_model(const std::filesystem::path& path) {
  return deserialize_model(read_text_file(path));
}
void save_preprocessor(const Preprocessor& prep, const std::filesystem::path& path) {
  write_text_file(path, serialize(prep));
}
Preprocessor load_preprocessor(const std::filesystem::path& path) {
  return deserialize_preprocessor(read_text_file(path));
}
void save_autoencoder(const Autoencoder& ae, const std::filesystem::path& path) {
  write_text_file(path, serialize(ae));
}
Autoencoder load_autoencoder(const std::filesystem::path& path) {
  return deserialize_autoencoder(read_text_file(path));
}

}  // namespace rarity
