#include "rarity/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "rarity/common.hpp"

namespace rarity {

ConfusionMatrix confusion(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> preds) {
  if (labels.size() != preds.size()) {
    throw ValidationError("confusion: " + std::to_string(labels.size()) + " labels but " +
                          std::to_string(preds.size()) + " predictions");
  }
  if (labels.empty()) throw ValidationError("confusion: no observations");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      preds[i] ? ++cm.tp : ++cm.fn;
    } else {
      preds[i] ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  Metrics m;
  const auto n = static_cast<double>(cm.total());
  const auto tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
  const auto tn = static_cast<double>(cm.tn), fn = static_cast<double>(cm.fn);
  if (n == 0) {
    m.flags.push_back("accuracy undefined: empty confusion matrix");
    m.flags.push_back("kappa undefined: empty confusion matrix");
  } else {
    m.accuracy = (tp + tn) / n;
    const double pe = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n);
    if (pe >= 1.0) {
      m.flags.push_back("kappa undefined: chance agreement is 1");
    } else {
      m.kappa = (*m.accuracy - pe) / (1.0 - pe);
    }
  }
  if (tp + fn > 0) {
    m.sensitivity = tp / (tp + fn);
  } else {
    m.flags.push_back("sensitivity undefined: no positive observations");
  }
  if (tn + fp > 0) {
    m.specificity = tn / (tn + fp);
  } else {
    m.flags.push_back("specificity undefined: no negative observations");
  }
  if (n > 0 && tp + fp == 0) m.flags.push_back("precision undefined: no positive predictions");
  if (n > 0 && tn + fn == 0) m.flags.push_back("negative predictive value undefined: no negative predictions");
  return m;
}

RocCurve roc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ValidationError("roc: length mismatch");
  std::uint64_t pos = 0;
  for (auto y : labels) pos += y ? 1 : 0;
  const std::uint64_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ValidationError("roc: labels must contain both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  for (double s : scores) {
    if (std::isnan(s)) throw ValidationError("roc: NaN score");
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve curve;
  curve.thresholds.push_back(INFINITY);
  curve.fpr.push_back(0.0);
  curve.tpr.push_back(0.0);
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      labels[order[i]] ? ++tp : ++fp;
    }
    curve.thresholds.push_back(s);
    curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
  }
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.fpr.size(); ++i) {
    area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2.0;
  }
  return area;
}

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return auc(roc(scores, labels));
}

std::vector<std::uint8_t> threshold_predictions(std::span<const double> scores, double threshold) {
  std::vector<std::uint8_t> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] > threshold ? 1 : 0;
  return out;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

bool both_classes(std::span<const std::uint8_t> labels) {
  bool pos = false, neg = false;
  for (auto y : labels) (y ? pos : neg) = true;
  return pos && neg;
}

std::string file_stem(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

}  // namespace

std::string roc_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr\n";
  for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
    out += format_double(curve.thresholds[i]) + "," + format_double(curve.fpr[i]) + "," +
           format_double(curve.tpr[i]) + "\n";
  }
  return out;
}

std::string metrics_csv(const std::vector<ModelOutput>& models, std::span<const std::uint8_t> labels) {
  std::vector<Metrics> ms;
  std::vector<std::optional<double>> aucs;
  const bool rankable = both_classes(labels);
  for (const auto& m : models) {
    if (m.scores.size() != labels.size() || m.preds.size() != labels.size()) {
      throw ValidationError("report: model '" + m.name + "' has inconsistent lengths");
    }
    ms.push_back(metrics(confusion(labels, m.preds)));
    aucs.push_back(rankable ? std::optional<double>(auc(m.scores, labels)) : std::nullopt);
  }
  std::string out = "metric";
  for (const auto& m : models) out += "," + m.name;
  out += "\n";
  auto row = [&](const char* label, auto get) {
    out += label;
    for (std::size_t i = 0; i < models.size(); ++i) out += "," + cell(get(i));
    out += "\n";
  };
  row("Accuracy", [&](std::size_t i) { return ms[i].accuracy; });
  row("Kappa", [&](std::size_t i) { return ms[i].kappa; });
  row("Sensitivity", [&](std::size_t i) { return ms[i].sensitivity; });
  row("Specificity", [&](std::size_t i) { return ms[i].specificity; });
  row("AUC", [&](std::size_t i) { return aucs[i]; });
  return out;
}

void report(const std::vector<ModelOutput>& models, std::span<const std::uint8_t> labels,
            const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  write_text_file(out_dir / "metrics.csv", metrics_csv(models, labels));
  const bool rankable = both_classes(labels);
  for (const auto& m : models) {
    const std::string stem = file_stem(m.name);
    if (rankable) write_text_file(out_dir / ("roc_" + stem + ".csv"), roc_csv(roc(m.scores, labels)));
    const auto cm = confusion(labels, m.preds);
    write_text_file(out_dir / ("confusion_" + stem + ".csv"),
                    "actual,predicted,count\n1,1," + std::to_string(cm.tp) + "\n1,0," +
                        std::to_string(cm.fn) + "\n0,1," + std::to_string(cm.fp) + "\n0,0," +
                        std::to_string(cm.tn) + "\n");
    if (m.importance) {
      std::string text = "feature,importance\n";
      for (std::size_t j = 0; j < m.importance->features.size(); ++j) {
        text += m.importance->features[j] + "," + format_double(m.importance->values.at(j)) + "\n";
      }
      write_text_file(out_dir / ("importance_" + stem + ".csv"), text);
    }
  }
}

}  // namespace rarity
