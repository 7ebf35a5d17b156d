#include "rarity/pipeline.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "rarity/common.hpp"
#include "rarity/eval.hpp"
#include "rarity/model_io.hpp"
#include "rarity/random.hpp"

namespace rarity {

namespace fs = std::filesystem;

constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Hashing

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text_file(path)); }

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

[[noreturn]] void field_error(const std::string& field, const std::string& message) {
  throw ValidationError("config field '" + field + "': " + message);
}

void check_keys(const YAML::Node& node, const std::string& path,
                std::initializer_list<std::string_view> allowed) {
  if (!node.IsMap()) field_error(path, "expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      field_error(path.empty() ? key : path + "." + key, "unknown key");
    }
  }
}

std::string scalar(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) field_error(path, "expected a scalar value");
  return n.Scalar();
}

double number(const YAML::Node& n, const std::string& path) {
  const auto text = scalar(n, path);
  try {
    if (text == ".inf" || text == "+.inf") return INFINITY;
    if (text == "-.inf") return -INFINITY;
    return parse_double(text, path);
  } catch (const ValidationError&) {
    field_error(path, "expected a number, found '" + text + "'");
  }
}

std::uint64_t unsigned_int(const YAML::Node& n, const std::string& path) {
  const auto text = scalar(n, path);
  try {
    std::size_t pos = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
    const auto v = std::stoull(text, &pos, 0);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    field_error(path, "expected a nonnegative integer, found '" + text + "'");
  }
}

bool boolean(const YAML::Node& n, const std::string& path) {
  const auto text = scalar(n, path);
  if (text == "true" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "no" || text == "off") return false;
  field_error(path, "expected true or false, found '" + text + "'");
}

std::vector<std::string> string_list(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence()) field_error(path, "expected a list");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    out.push_back(scalar(n[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

template <class F>
auto wrap(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    field_error(path, e.what());
  }
}

HyperValue hyper_value(const YAML::Node& n, const std::string& path) {
  const auto text = scalar(n, path);
  try {
    return parse_double(text, path);
  } catch (const ValidationError&) {
    return text;
  }
}

Marginal marginal_from(const YAML::Node& n, const std::string& path) {
  check_keys(n, path, {"name", "kind", "mean", "sd", "min", "max", "levels"});
  Marginal m;
  if (!n["name"]) field_error(path + ".name", "required");
  m.name = scalar(n["name"], path + ".name");
  if (n["kind"]) m.kind = wrap(path + ".kind", [&] { return parse_feature_kind(scalar(n["kind"], path + ".kind")); });
  if (n["mean"]) m.mean = number(n["mean"], path + ".mean");
  if (n["sd"]) m.sd = number(n["sd"], path + ".sd");
  if (n["min"]) m.min = number(n["min"], path + ".min");
  if (n["max"]) m.max = number(n["max"], path + ".max");
  if (n["levels"]) m.levels = unsigned_int(n["levels"], path + ".levels");
  return m;
}

SynthSpec synth_from(const YAML::Node& n, const std::string& path, const std::string& label) {
  check_keys(n, path, {"preset", "n", "positive_rate", "label", "features", "signal", "anomaly_shift"});
  SynthSpec spec;
  spec.label = n["label"] ? scalar(n["label"], path + ".label") : label;
  if (!n["n"]) field_error(path + ".n", "required");
  spec.n = unsigned_int(n["n"], path + ".n");
  if (!n["positive_rate"]) field_error(path + ".positive_rate", "required");
  spec.positive_rate = number(n["positive_rate"], path + ".positive_rate");
  std::vector<Marginal> preset;
  if (n["preset"]) {
    const auto name = scalar(n["preset"], path + ".preset");
    if (name != "patent") field_error(path + ".preset", "unknown preset '" + name + "'");
    preset = patent_marginals();
  }
  if (n["features"]) {
    const auto& fl = n["features"];
    if (!fl.IsSequence()) field_error(path + ".features", "expected a list");
    for (std::size_t i = 0; i < fl.size(); ++i) {
      const auto p = path + ".features[" + std::to_string(i) + "]";
      if (fl[i].IsScalar()) {
        const auto name = fl[i].Scalar();
        auto it = std::find_if(preset.begin(), preset.end(),
                               [&](const Marginal& m) { return m.name == name; });
        if (it == preset.end()) field_error(p, "'" + name + "' is not a preset feature");
        spec.features.push_back(*it);
      } else {
        spec.features.push_back(marginal_from(fl[i], p));
      }
    }
  } else {
    spec.features = preset;
  }
  if (spec.features.empty()) field_error(path + ".features", "no features (give a preset or a list)");
  if (n["signal"]) {
    const auto& sl = n["signal"];
    if (!sl.IsSequence()) field_error(path + ".signal", "expected a list");
    for (std::size_t i = 0; i < sl.size(); ++i) {
      const auto p = path + ".signal[" + std::to_string(i) + "]";
      check_keys(sl[i], p, {"features", "weight"});
      SignalTerm t;
      if (!sl[i]["features"]) field_error(p + ".features", "required");
      t.features = string_list(sl[i]["features"], p + ".features");
      if (!sl[i]["weight"]) field_error(p + ".weight", "required");
      t.weight = number(sl[i]["weight"], p + ".weight");
      spec.signal.push_back(std::move(t));
    }
  }
  if (n["anomaly_shift"]) {
    const auto& sh = n["anomaly_shift"];
    if (!sh.IsMap()) field_error(path + ".anomaly_shift", "expected a mapping");
    for (const auto& kv : sh) {
      const auto name = kv.first.as<std::string>();
      spec.anomaly_shift[name] = number(kv.second, path + ".anomaly_shift." + name);
    }
  }
  return spec;
}

std::optional<ScalerMethod> scaler_from(const YAML::Node& n, const std::string& path) {
  const auto text = scalar(n, path);
  if (text == "none") return std::nullopt;
  return wrap(path, [&] { return parse_scaler_method(text); });
}

ModelConfig model_from(const YAML::Node& n, const std::string& path,
                       std::optional<ScalerMethod> default_scaler) {
  check_keys(n, path, {"name", "kind", "scaler", "one_hot", "grid", "fixed"});
  ModelConfig mc;
  if (!n["kind"]) field_error(path + ".kind", "required");
  mc.spec.kind = wrap(path + ".kind", [&] { return parse_model_kind(scalar(n["kind"], path + ".kind")); });
  mc.spec.name = n["name"] ? scalar(n["name"], path + ".name") : std::string(to_string(mc.spec.kind));
  mc.spec.scaler = n["scaler"] ? scaler_from(n["scaler"], path + ".scaler") : default_scaler;
  if (n["one_hot"]) mc.spec.one_hot = boolean(n["one_hot"], path + ".one_hot");
  if (n["fixed"]) {
    if (!n["fixed"].IsMap()) field_error(path + ".fixed", "expected a mapping");
    for (const auto& kv : n["fixed"]) {
      const auto name = kv.first.as<std::string>();
      mc.spec.fixed[name] = hyper_value(kv.second, path + ".fixed." + name);
    }
  }
  if (n["grid"]) {
    if (!n["grid"].IsMap()) field_error(path + ".grid", "expected a mapping");
    for (const auto& kv : n["grid"]) {
      const auto name = kv.first.as<std::string>();
      const auto p = path + ".grid." + name;
      auto& values = mc.grid[name];
      if (kv.second.IsSequence()) {
        if (kv.second.size() == 0) field_error(p, "empty value list");
        for (std::size_t i = 0; i < kv.second.size(); ++i) {
          values.push_back(hyper_value(kv.second[i], p + "[" + std::to_string(i) + "]"));
        }
      } else {
        values.push_back(hyper_value(kv.second, p));
      }
    }
  }
  return mc;
}

AutoencoderConfig autoencoder_from(const YAML::Node& n, const std::string& path) {
  check_keys(n, path, {"features", "layers", "activations", "epochs", "batch", "lr", "loss",
                       "activity_l2", "metric", "band", "calibrate"});
  AutoencoderConfig ac;
  ac.features = n["features"] ? string_list(n["features"], path + ".features") : default_ae_features();
  if (n["layers"]) {
    if (!n["layers"].IsSequence()) field_error(path + ".layers", "expected a list");
    for (std::size_t i = 0; i < n["layers"].size(); ++i) {
      ac.arch.layers.push_back(unsigned_int(n["layers"][i], path + ".layers[" + std::to_string(i) + "]"));
    }
  }
  if (n["activations"]) {
    ac.arch.activations.clear();
    for (const auto& a : string_list(n["activations"], path + ".activations")) {
      ac.arch.activations.push_back(wrap(path + ".activations", [&] { return parse_activation(a); }));
    }
  }
  if (n["epochs"]) ac.options.epochs = static_cast<int>(unsigned_int(n["epochs"], path + ".epochs"));
  if (n["batch"]) ac.options.batch = unsigned_int(n["batch"], path + ".batch");
  if (n["lr"]) ac.options.lr = number(n["lr"], path + ".lr");
  if (n["loss"]) ac.options.loss = wrap(path + ".loss", [&] { return parse_loss_kind(scalar(n["loss"], path + ".loss")); });
  if (n["activity_l2"]) ac.options.activity_l2 = number(n["activity_l2"], path + ".activity_l2");
  if (n["metric"]) ac.metric = wrap(path + ".metric", [&] { return parse_error_metric(scalar(n["metric"], path + ".metric")); });
  if (n["band"] && n["calibrate"]) field_error(path, "give either band or calibrate, not both");
  if (n["band"]) {
    const auto p = path + ".band";
    check_keys(n["band"], p, {"lo", "hi"});
    ThresholdBand b;
    if (!n["band"]["lo"]) field_error(p + ".lo", "required");
    b.lo = number(n["band"]["lo"], p + ".lo");
    if (n["band"]["hi"]) b.hi = number(n["band"]["hi"], p + ".hi");
    if (!(b.lo <= b.hi)) field_error(p, "lo must not exceed hi");
    ac.band = b;
  }
  if (n["calibrate"]) {
    const auto p = path + ".calibrate";
    check_keys(n["calibrate"], p, {"objective", "search_upper"});
    if (n["calibrate"]["objective"]) {
      ac.objective = wrap(p + ".objective", [&] {
        return parse_band_objective(scalar(n["calibrate"]["objective"], p + ".objective"));
      });
    }
    if (n["calibrate"]["search_upper"]) {
      ac.search_upper = boolean(n["calibrate"]["search_upper"], p + ".search_upper");
    }
  }
  return ac;
}

}  // namespace

RunConfig parse_config(const std::string& yaml_text, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ValidationError("config must be a mapping");
  check_keys(root, "", {"seed", "output_dir", "data", "label", "split", "preprocess", "models",
                        "tuning", "evaluation", "autoencoder"});
  RunConfig cfg;
  cfg.config_sha256 = sha256_hex(yaml_text);
  if (root["seed"]) cfg.seed = unsigned_int(root["seed"], "seed");
  if (root["output_dir"]) cfg.output_dir = scalar(root["output_dir"], "output_dir");
  if (!root["label"]) field_error("label", "required");
  cfg.label = scalar(root["label"], "label");

  if (!root["data"]) field_error("data", "required");
  const auto& data = root["data"];
  check_keys(data, "data", {"synth", "csv"});
  if (static_cast<bool>(data["synth"]) == static_cast<bool>(data["csv"])) {
    field_error("data", "exactly one of synth or csv is required");
  }
  if (data["synth"]) {
    cfg.synth = synth_from(data["synth"], "data.synth", cfg.label);
  } else {
    const auto& c = data["csv"];
    check_keys(c, "data.csv", {"path", "schema", "missing"});
    CsvSource src;
    if (!c["path"]) field_error("data.csv.path", "required");
    if (!c["schema"]) field_error("data.csv.schema", "required");
    src.path = base_dir / scalar(c["path"], "data.csv.path");
    src.schema = base_dir / scalar(c["schema"], "data.csv.schema");
    if (c["missing"]) {
      const auto m = scalar(c["missing"], "data.csv.missing");
      if (m == "error") {
        src.missing = MissingPolicy::error;
      } else if (m == "impute") {
        src.missing = MissingPolicy::impute;
      } else {
        field_error("data.csv.missing", "expected error or impute");
      }
    }
    cfg.csv = src;
  }

  if (root["split"]) {
    check_keys(root["split"], "split", {"fraction"});
    if (root["split"]["fraction"]) cfg.split_fraction = number(root["split"]["fraction"], "split.fraction");
  }
  if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0)) {
    field_error("split.fraction", "must lie in (0, 1)");
  }
  if (root["preprocess"]) {
    check_keys(root["preprocess"], "preprocess", {"scaler"});
    if (root["preprocess"]["scaler"]) cfg.scaler = scaler_from(root["preprocess"]["scaler"], "preprocess.scaler");
  }
  if (root["models"]) {
    const auto& ml = root["models"];
    if (!ml.IsSequence()) field_error("models", "expected a list");
    std::set<std::string> names;
    for (std::size_t i = 0; i < ml.size(); ++i) {
      const auto p = "models[" + std::to_string(i) + "]";
      cfg.models.push_back(model_from(ml[i], p, cfg.scaler));
      if (!names.insert(cfg.models.back().spec.name).second) {
        field_error(p + ".name", "duplicate model name '" + cfg.models.back().spec.name + "'");
      }
    }
  }
  if (root["tuning"]) {
    const auto& t = root["tuning"];
    check_keys(t, "tuning", {"k", "repeats", "subset_frac", "metric"});
    if (t["k"]) cfg.tuning.k = unsigned_int(t["k"], "tuning.k");
    if (t["repeats"]) cfg.tuning.repeats = unsigned_int(t["repeats"], "tuning.repeats");
    if (t["subset_frac"]) cfg.tuning.subset_frac = number(t["subset_frac"], "tuning.subset_frac");
    if (t["metric"]) cfg.tuning.metric = scalar(t["metric"], "tuning.metric");
  }
  if (cfg.tuning.k < 2) field_error("tuning.k", "must be at least 2");
  if (cfg.tuning.repeats < 1) field_error("tuning.repeats", "must be at least 1");
  if (!(cfg.tuning.subset_frac > 0.0 && cfg.tuning.subset_frac <= 1.0)) {
    field_error("tuning.subset_frac", "must lie in (0, 1]");
  }
  {
    const auto& m = cfg.tuning.metric;
    if (m != "auc" && m != "accuracy" && m != "kappa" && m != "sensitivity" && m != "specificity") {
      field_error("tuning.metric", "unknown metric '" + m + "'");
    }
  }
  if (root["evaluation"]) {
    check_keys(root["evaluation"], "evaluation", {"threshold"});
    if (root["evaluation"]["threshold"]) cfg.threshold = number(root["evaluation"]["threshold"], "evaluation.threshold");
  }
  cfg.tuning.threshold = cfg.threshold;
  if (root["autoencoder"]) cfg.autoencoder = autoencoder_from(root["autoencoder"], "autoencoder");
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return parse_config(text, path.parent_path());
}

void validate_config(const RunConfig& cfg) {
  std::map<std::string, FeatureKind> columns;
  std::vector<std::string> labels;
  if (cfg.synth) {
    for (const auto& m : cfg.synth->features) columns[m.name] = m.kind;
    labels.push_back(cfg.synth->label);
  } else {
    Schema schema;
    try {
      schema = load_schema(cfg.csv->schema);
    } catch (const Error& e) {
      field_error("data.csv.schema", e.what());
    }
    columns = schema.features;
    labels = schema.labels;
  }
  if (std::find(labels.begin(), labels.end(), cfg.label) == labels.end()) {
    field_error("label", "unknown label '" + cfg.label + "'; the data provides: " + join(labels, ", "));
  }
  for (std::size_t i = 0; i < cfg.models.size(); ++i) {
    const auto& mc = cfg.models[i];
    std::vector<HyperValue> excludes;
    if (auto it = mc.spec.fixed.find("exclude"); it != mc.spec.fixed.end()) excludes.push_back(it->second);
    if (auto it = mc.grid.find("exclude"); it != mc.grid.end()) {
      excludes.insert(excludes.end(), it->second.begin(), it->second.end());
    }
    for (const auto& ex : excludes) {
      std::string list = format_hyper(ex);
      std::replace(list.begin(), list.end(), ',', ' ');
      std::istringstream in(list);
      for (std::string name; in >> name;) {
        if (!columns.count(name)) {
          field_error("models[" + std::to_string(i) + "].exclude", "unknown feature '" + name + "'");
        }
      }
    }
  }
  if (cfg.autoencoder) {
    for (const auto& f : cfg.autoencoder->features) {
      auto it = columns.find(f);
      if (it == columns.end()) field_error("autoencoder.features", "unknown feature '" + f + "'");
      if (it->second == FeatureKind::categorical) {
        field_error("autoencoder.features", "feature '" + f + "' is categorical");
      }
    }
    if (cfg.autoencoder->features.size() < 2) field_error("autoencoder.features", "need at least two features");
  }
}

std::string_view to_string(Command c) {
  switch (c) {
    case Command::generate: return "generate";
    case Command::split: return "split";
    case Command::preprocess: return "preprocess";
    case Command::tune: return "tune";
    case Command::train: return "train";
    case Command::evaluate: return "evaluate";
    case Command::detect: return "detect";
    case Command::report: return "report";
    case Command::all: return "all";
  }
  return "all";
}

Command parse_command(std::string_view text) {
  for (auto c : {Command::generate, Command::split, Command::preprocess, Command::tune, Command::train,
                 Command::evaluate, Command::detect, Command::report, Command::all}) {
    if (to_string(c) == text) return c;
  }
  throw ValidationError("unknown command '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Manifest

std::map<std::string, std::string> read_manifest(const fs::path& out_dir) {
  std::map<std::string, std::string> kv;
  const auto path = out_dir / "manifest.txt";
  if (!fs::exists(path)) return kv;
  std::istringstream in(read_text_file(path));
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

namespace {

bool volatile_artifact(const std::string& rel) {
  return rel == "manifest.txt" || rel == "timestamps.txt" ||
         (rel.rfind("tuning/timings_", 0) == 0);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string stem_of(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

class Run {
 public:
  Run(const RunConfig& cfg, std::ostream& log) : cfg_(cfg), out_(cfg.output_dir), log_(log) {}

  void execute(Command c) {
    switch (c) {
      case Command::generate: generate(); break;
      case Command::split: split(); break;
      case Command::preprocess: preprocess(); break;
      case Command::tune: tune(); break;
      case Command::train: train(); break;
      case Command::evaluate: evaluate(); break;
      case Command::detect: detect(); break;
      case Command::report: report_step(); break;
      case Command::all:
        for (auto s : {Command::generate, Command::split, Command::preprocess, Command::tune,
                       Command::train, Command::evaluate, Command::detect, Command::report}) {
          execute(s);
        }
        break;
    }
  }

 private:
  // --- step bookkeeping ----------------------------------------------------

  void begin(const char* step) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create output directory " + out_.string() + ": " + ec.message());
    step_ = step;
    reads_.clear();
    writes_.clear();
    manifest_ = read_manifest(out_);
    log_ << "[" << step << "]\n";
  }

  fs::path read(const std::string& rel, const char* producer) {
    const auto path = out_ / rel;
    if (!fs::exists(path)) {
      throw IoError("missing prerequisite " + path.string() + "; run '" + producer + "' first");
    }
    reads_.push_back(rel);
    return path;
  }

  fs::path write(const std::string& rel) {
    const auto path = out_ / rel;
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    writes_.push_back(rel);
    return path;
  }

  void finish() {
    auto list = [](std::vector<std::string> v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      return join(v, ",");
    };
    manifest_["tool.version"] = kToolVersion;
    manifest_["config.sha256"] = cfg_.config_sha256;
    manifest_["config.label"] = cfg_.label;
    manifest_["seed.run"] = std::to_string(cfg_.seed);
    manifest_["step." + step_ + ".reads"] = list(reads_);
    manifest_["step." + step_ + ".writes"] = list(writes_);
    auto& seq = manifest_["sequence"];
    seq = seq.empty() ? step_ : seq + "," + step_;

    for (auto it = manifest_.begin(); it != manifest_.end();) {
      it = it->first.rfind("artifact.", 0) == 0 ? manifest_.erase(it) : std::next(it);
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(out_)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    for (const auto& f : files) {
      const auto rel = fs::relative(f, out_).generic_string();
      if (volatile_artifact(rel)) continue;
      manifest_["artifact." + rel + ".sha256"] = sha256_file(f);
    }
    std::string text;
    for (const auto& [k, v] : manifest_) text += k + "=" + v + "\n";
    write_text_file(out_ / "manifest.txt", text);

    std::ofstream ts(out_ / "timestamps.txt", std::ios::app);
    ts << step_ << "=" << utc_now() << "\n";
  }

  Schema schema() { return load_schema(read("schema.yaml", "generate")); }

  Dataset load(const std::string& rel, const char* producer, const Schema& s) {
    return load_csv(read(rel, producer), s, MissingPolicy::error);
  }

  std::uint64_t tune_seed(std::size_t i) const { return mix_seed(cfg_.seed, 1000 + i); }

  // --- steps ---------------------------------------------------------------

  void generate() {
    begin("generate");
    validate_config(cfg_);
    Dataset data;
    if (cfg_.synth) {
      auto spec = *cfg_.synth;
      spec.seed = mix_seed(cfg_.seed, 0x6e);
      data = synth_generate(spec);
      manifest_["data.source"] = "synth";
      manifest_["seed.synth"] = std::to_string(spec.seed);
    } else {
      const auto schema = load_schema(cfg_.csv->schema);
      data = load_csv(cfg_.csv->path, schema, cfg_.csv->missing);
      manifest_["data.source"] = "csv";
      manifest_["data.source.sha256"] = sha256_file(cfg_.csv->path);
    }
    if (!data.has_label(cfg_.label)) field_error("label", "unknown label '" + cfg_.label + "'");
    save_csv(data, write("data.csv"));
    save_schema(schema_of(data), write("schema.yaml"));
    const auto& y = data.label(cfg_.label);
    manifest_["data.rows"] = std::to_string(data.rows());
    manifest_["data.positives"] = std::to_string(std::count(y.begin(), y.end(), 1));
    log_ << "  " << data.rows() << " rows, " << data.cols() << " features\n";
    finish();
  }

  void split() {
    begin("split");
    const auto s = schema();
    const auto data = load("data.csv", "generate", s);
    const auto seed = mix_seed(cfg_.seed, 0x51);
    const auto pair = stratified_split(data, cfg_.split_fraction, cfg_.label, seed);
    save_csv(pair.train, write("train.csv"));
    save_csv(pair.test, write("test.csv"));
    manifest_["seed.split"] = std::to_string(seed);
    manifest_["split.fraction"] = format_double(cfg_.split_fraction);
    manifest_["split.train_rows"] = std::to_string(pair.train.rows());
    manifest_["split.test_rows"] = std::to_string(pair.test.rows());
    log_ << "  train " << pair.train.rows() << " rows, test " << pair.test.rows() << " rows\n";
    finish();
  }

  void preprocess() {
    begin("preprocess");
    const auto s = schema();
    const auto train = load("train.csv", "split", s);
    const auto prep = fit_preprocessor(train, cfg_.scaler, true);
    save_preprocessor(prep, write("preprocessor.model"));
    write_text_file(write("summary.csv"), summary_csv(conditional_summary(train, cfg_.label)));
    for (auto it = manifest_.begin(); it != manifest_.end();) {
      it = it->first.rfind("scaler.", 0) == 0 ? manifest_.erase(it) : std::next(it);
    }
    if (prep.scaler) {
      manifest_["scaler.method"] = std::string(to_string(prep.scaler->method));
      manifest_["scaler.fitted_rows"] = std::to_string(prep.scaler->fitted_rows);
      for (const auto& c : prep.scaler->columns) {
        manifest_["scaler." + c.name + ".mean"] = format_double(c.mean);
        manifest_["scaler." + c.name + ".sd"] = format_double(c.sd);
        manifest_["scaler." + c.name + ".min"] = format_double(c.min);
        manifest_["scaler." + c.name + ".max"] = format_double(c.max);
      }
    } else {
      manifest_["scaler.method"] = "none";
    }
    finish();
  }

  void tune() {
    begin("tune");
    const auto s = schema();
    const auto train = load("train.csv", "split", s);
    std::string best = "model,point_index,point\n";
    for (std::size_t i = 0; i < cfg_.models.size(); ++i) {
      const auto& mc = cfg_.models[i];
      auto opts = cfg_.tuning;
      opts.seed = tune_seed(i);
      const auto stem = stem_of(mc.spec.name);
      log_ << "  " << mc.spec.name << ": " << grid_expand(mc.grid).size() << " grid point(s)\n";
      const auto result = grid_search(mc.spec, mc.grid, train, cfg_.label, opts);
      for (const auto& w : result.warnings) log_ << "  warning: " << w << "\n";
      write_text_file(write("tuning/" + stem + "_folds.csv"), tuning_folds_csv(result));
      write_text_file(write("tuning/" + stem + "_summary.csv"), tuning_summary_csv(result));
      write_text_file(write("tuning/timings_" + stem + ".csv"), tuning_timings_csv(result));
      const auto& cell = result.cells[result.best];
      best += mc.spec.name + "," + std::to_string(result.best) + ",\"" + format_point(cell.point) + "\"\n";
      manifest_["seed.tune." + stem] = std::to_string(opts.seed);
      log_ << "    best {" << format_point(cell.point) << "} mean " << opts.metric << " "
           << format_double(*cell.mean) << "\n";
    }
    write_text_file(write("tuning/best_points.csv"), best);
    finish();
  }

  std::map<std::string, std::size_t> best_points() {
    const auto text = read_text_file(read("tuning/best_points.csv", "tune"));
    std::map<std::string, std::size_t> out;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto a = line.find(',');
      const auto b = line.find(',', a + 1);
      if (a == std::string::npos || b == std::string::npos) throw IoError("malformed best_points.csv");
      out[line.substr(0, a)] = std::stoul(line.substr(a + 1, b - a - 1));
    }
    return out;
  }

  void train() {
    begin("train");
    const auto s = schema();
    const auto train = load("train.csv", "split", s);
    const auto best = best_points();
    for (std::size_t i = 0; i < cfg_.models.size(); ++i) {
      const auto& mc = cfg_.models[i];
      auto it = best.find(mc.spec.name);
      if (it == best.end()) {
        throw IoError("model '" + mc.spec.name + "' has no tuning result; run 'tune' first");
      }
      const auto points = grid_expand(mc.grid);
      if (it->second >= points.size()) {
        throw IoError("tuning result for '" + mc.spec.name + "' does not match the configured grid");
      }
      const auto seed = model_seed(tune_seed(i));
      const auto model = fit_model(mc.spec, points[it->second], train, cfg_.label, seed);
      save_model(model, write("models/" + stem_of(mc.spec.name) + ".model"));
      manifest_["seed.train." + stem_of(mc.spec.name)] = std::to_string(seed);
      log_ << "  " << mc.spec.name << " fitted on " << train.rows() << " rows\n";
    }
    finish();
  }

  void evaluate() {
    begin("evaluate");
    if (manifest_.count("step.evaluate.writes")) {
      log_ << "warning: the test split has already been evaluated; repeated test-set evaluation "
              "invites indirect overfitting and the result should not drive further tuning\n";
    }
    const auto s = schema();
    std::vector<FittedModel> models;
    for (const auto& mc : cfg_.models) {
      models.push_back(load_model(read("models/" + stem_of(mc.spec.name) + ".model", "train")));
    }
    const auto test = load("test.csv", "split", s);
    const auto& y = test.label(cfg_.label);
    std::vector<ModelOutput> outputs;
    for (const auto& m : models) {
      ModelOutput o;
      o.name = m.name;
      o.scores = predict_scores(m, test);
      o.preds = threshold_predictions(o.scores, cfg_.threshold);
      o.importance = model_importance(m);
      const auto flags = metrics(confusion(y, o.preds)).flags;
      for (const auto& f : flags) log_ << "  " << m.name << ": " << f << "\n";
      outputs.push_back(std::move(o));
    }
    report(outputs, y, out_ / "report");
    for (const auto& entry : fs::directory_iterator(out_ / "report")) {
      const auto name = entry.path().filename().string();
      if (name != "summary.md") writes_.push_back("report/" + name);
    }
    manifest_["evaluation.threshold"] = format_double(cfg_.threshold);
    log_ << "  " << test.rows() << " test rows scored by " << models.size() << " model(s)\n";
    finish();
  }

  void detect() {
    begin("detect");
    if (!cfg_.autoencoder) {
      log_ << "  no autoencoder configured; nothing to do\n";
      finish();
      return;
    }
    const auto& ac = *cfg_.autoencoder;
    const auto s = schema();
    const auto prep = load_preprocessor(read("preprocessor.model", "preprocess"));
    const auto train = apply_preprocessor(load("train.csv", "split", s), prep).select_features(ac.features);
    const auto test = apply_preprocessor(load("test.csv", "split", s), prep).select_features(ac.features);
    const auto& ytrain = train.label(cfg_.label);
    std::vector<std::size_t> normal_rows;
    for (std::size_t r = 0; r < train.rows(); ++r) {
      if (!ytrain[r]) normal_rows.push_back(r);
    }
    auto opts = ac.options;
    opts.seed = mix_seed(cfg_.seed, 0xae);
    const auto ae = train_autoencoder(train.select_rows(normal_rows), ac.arch, opts, cfg_.label);
    save_autoencoder(ae, write("detect/autoencoder.model"));
    manifest_["seed.autoencoder"] = std::to_string(opts.seed);

    const auto train_scores = score_dataset(ae, train, ac.metric);
    const auto test_scores = score_dataset(ae, test, ac.metric);
    ThresholdBand band;
    std::string source;
    if (ac.band) {
      band = *ac.band;
      source = "fixed";
    } else {
      band = calibrate_band(train_scores, ytrain, ac.objective, ac.search_upper).band;
      source = "calibrated:" + std::string(to_string(ac.objective));
    }
    const auto& ytest = test.label(cfg_.label);
    write_text_file(write("detect/scores_train.csv"), score_csv(train_scores, &ytrain));
    write_text_file(write("detect/scores_test.csv"), score_csv(test_scores, &ytest));
    write_text_file(write("detect/band.csv"), "lo,hi,source,metric\n" + format_double(band.lo) + "," +
                                                  format_double(band.hi) + "," + source + "," +
                                                  std::string(to_string(ac.metric)) + "\n");
    ModelOutput o;
    o.name = "Autoencoder";
    o.scores = test_scores;
    o.preds = classify_band(test_scores, band);
    report({o}, ytest, out_ / "detect");
    for (const auto* f : {"metrics.csv", "roc_Autoencoder.csv", "confusion_Autoencoder.csv"}) {
      if (fs::exists(out_ / "detect" / f)) writes_.push_back(std::string("detect/") + f);
    }
    double pos_mean = 0, neg_mean = 0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t r = 0; r < test_scores.size(); ++r) {
      (ytest[r] ? pos_mean : neg_mean) += test_scores[r];
      ++(ytest[r] ? pos : neg);
    }
    log_ << "  band [" << format_double(band.lo) << ", " << format_double(band.hi) << "] (" << source
         << ")\n";
    if (pos && neg) {
      log_ << "  mean test score: anomalies " << format_double(pos_mean / pos) << ", normals "
           << format_double(neg_mean / neg) << "\n";
    }
    finish();
  }

  static std::string csv_as_table(const std::string& csv) {
    std::istringstream in(csv);
    std::string out, line;
    bool header = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::string row = "|";
      std::string cell;
      bool quoted = false;
      for (char c : line) {
        if (c == '"') {
          quoted = !quoted;
        } else if (c == ',' && !quoted) {
          row += " " + cell + " |";
          cell.clear();
        } else {
          cell += c;
        }
      }
      row += " " + cell + " |";
      out += row + "\n";
      if (header) {
        const auto cols = std::count(row.begin(), row.end(), '|') - 1;
        out += "|";
        for (long i = 0; i < cols; ++i) out += "---|";
        out += "\n";
        header = false;
      }
    }
    return out;
  }

  void report_step() {
    begin("report");
    std::string md = "# Run summary\n\n";
    md += "Label: `" + cfg_.label + "`, seed " + std::to_string(cfg_.seed) + ", classification threshold " +
          format_double(cfg_.threshold) + ".\n\n";
    if (!cfg_.models.empty()) {
      md += "## Test-set evaluation\n\n" + csv_as_table(read_text_file(read("report/metrics.csv", "evaluate")));
      md += "\n## Selected hyperparameters\n\n" +
            csv_as_table(read_text_file(read("tuning/best_points.csv", "tune")));
    }
    if (cfg_.autoencoder) {
      md += "\n## Anomaly detection\n\n" + csv_as_table(read_text_file(read("detect/band.csv", "detect")));
      md += "\n" + csv_as_table(read_text_file(read("detect/metrics.csv", "detect")));
    }
    write_text_file(write("report/summary.md"), md);
    finish();
  }

  const RunConfig& cfg_;
  fs::path out_;
  std::ostream& log_;
  std::string step_;
  std::vector<std::string> reads_;
  std::vector<std::string> writes_;
  std::map<std::string, std::string> manifest_;
};

}  // namespace

void run_command(const RunConfig& cfg, Command command, std::ostream& log) {
  Run run(cfg, log);
  run.execute(command);
}

}  // namespace rarity
