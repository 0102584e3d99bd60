#pragma once

// Rendering of per-model metric files and the cross-model comparison:
// the metric table, the time-to-best table, and plot data for the metric
// bars, ROC curves and loss curves.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdetect/evaluator.hpp"
#include "mdetect/trace_io.hpp"
#include "mdetect/trainer.hpp"

namespace mdetect {

inline std::string display_name(const std::string& model) {
  if (model == "lenet5") return "LeNet-5";
  if (model.rfind("resnet", 0) == 0) return "ResNet-" + model.substr(6);
  if (model.rfind("densenet", 0) == 0) return "DenseNet-" + model.substr(8);
  return model;
}

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string num(double v) {
  std::string s;
  append_number(s, v);
  return s;
}

inline nlohmann::json metrics_json(const MetricReport& r, const std::string& split, std::size_t samples) {
  return {{"model", r.model},
          {"split", split},
          {"samples", samples},
          {"counts", {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp}, {"fn", r.counts.fn}}},
          {"accuracy", r.values.accuracy},
          {"precision", r.values.precision},
          {"recall", r.values.recall},
          {"f1", r.values.f1},
          {"precision_undefined", r.values.precision_undefined},
          {"recall_undefined", r.values.recall_undefined},
          {"f1_undefined", r.values.f1_undefined},
          {"auc", r.auc},
          {"auc_undefined", r.auc_undefined},
          {"threshold", 0.5},
          {"detection_time_ms", r.latency.median_ms},
          {"detection_time_mean_ms", r.latency.mean_ms},
          {"latency_protocol", {{"batch_size", 1}, {"warmup", r.latency.warmup}, {"repetitions", r.latency.repetitions}}}};
}

inline std::string render_roc(const std::vector<std::pair<std::string, RocCurve>>& curves) {
  std::string out = "model,fpr,tpr\n";
  for (const auto& [model, curve] : curves) {
    for (const auto& p : curve.points) out += model + ',' + num(p.fpr) + ',' + num(p.tpr) + '\n';
  }
  return out;
}

inline std::string render_scores(const MetricReport& r, const EncodedSet& set) {
  std::string out = "row,experiment,timestamp_s,label,score\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    out += std::to_string(i) + ',' + std::to_string(set.experiment[i]) + ',' + std::to_string(set.timestamp_s[i]) + ',' +
           std::to_string(set.labels[i]) + ',' + num(r.scores[i]) + '\n';
  }
  return out;
}

struct ModelResult {
  MetricReport report;
  std::optional<TrainHistory> history;
};

struct ComparisonReport {
  std::string table1_csv;
  std::string table2_csv;
  std::string metric_bars_csv;
  std::string roc_csv;
  std::string loss_curves_csv;
  std::string markdown;
  std::vector<std::string> warnings;
};

inline constexpr const char* kTable1Header = "Model,Accuracy,Precision,Recall,F1,Detection Time (ms)";
inline constexpr const char* kTable2Header = "Model,Validation Accuracy,Epoch Reached,Time Elapsed (s)";

// Percentages with one decimal, latency in milliseconds with one decimal.
inline ComparisonReport build_comparison(const std::vector<ModelResult>& results) {
  ComparisonReport rep;
  std::string t1 = std::string(kTable1Header) + "\n";
  std::string t2 = std::string(kTable2Header) + "\n";
  std::string bars = "model,metric,value\n";
  std::string loss = "model,epoch,train_loss,val_loss\n";
  std::string md1 = "| Model | Accuracy | Precision | Recall | F1 | Detection Time (ms) |\n|---|---|---|---|---|---|\n";
  std::string md2 = "| Model | Validation Accuracy | Epoch Reached | Time Elapsed (s) |\n|---|---|---|---|\n";
  std::vector<std::pair<std::string, RocCurve>> curves;

  for (const auto& r : results) {
    const auto& v = r.report.values;
    const std::string name = display_name(r.report.model);
    const std::array<std::string, 5> cells = {fixed(100 * v.accuracy, 1), fixed(100 * v.precision, 1),
                                              fixed(100 * v.recall, 1), fixed(100 * v.f1, 1),
                                              fixed(r.report.latency.median_ms, 1)};
    t1 += name;
    md1 += "| " + name;
    for (const auto& c : cells) {
      t1 += ',' + c;
      md1 += " | " + c;
    }
    t1 += '\n';
    md1 += " |\n";
    for (auto [metric, value] : {std::pair{"accuracy", v.accuracy}, std::pair{"precision", v.precision},
                                 std::pair{"recall", v.recall}, std::pair{"f1", v.f1}}) {
      bars += r.report.model + ',' + metric + ',' + num(value) + '\n';
    }
    if (v.precision_undefined) rep.warnings.push_back(name + ": precision undefined (no positive predictions), reported as 0");
    if (v.recall_undefined) rep.warnings.push_back(name + ": recall undefined (no malicious samples), reported as 0");
    if (r.report.auc_undefined) rep.warnings.push_back(name + ": AUC undefined (single-class test split)");
    else curves.emplace_back(r.report.model, r.report.roc);

    if (r.history && !r.history->epochs.empty()) {
      const auto best = record_time_to_best(*r.history);
      const std::array<std::string, 3> c2 = {fixed(100 * best.best_validation_accuracy, 1),
                                             std::to_string(best.best_epoch), fixed(best.elapsed_s, 1)};
      t2 += name + ',' + c2[0] + ',' + c2[1] + ',' + c2[2] + '\n';
      md2 += "| " + name + " | " + c2[0] + " | " + c2[1] + " | " + c2[2] + " |\n";
      for (const auto& e : r.history->epochs) {
        loss += r.report.model + ',' + std::to_string(e.epoch) + ',' + num(e.train_loss) + ',' + num(e.validation_loss) + '\n';
      }
    } else {
      rep.warnings.push_back(name + ": no training history; omitted from the time-to-best table and loss curves");
    }
  }
  rep.table1_csv = t1;
  rep.table2_csv = t2;
  rep.metric_bars_csv = bars;
  rep.roc_csv = render_roc(curves);
  rep.loss_curves_csv = loss;
  rep.markdown = "# Model comparison\n\nTest split metrics (%), single-sample detection latency (median).\n\n" + md1 +
                 "\nHighest validation accuracy (%) and when it was reached.\n\n" + md2;
  if (!rep.warnings.empty()) {
    rep.markdown += "\nWarnings:\n\n";
    for (const auto& w : rep.warnings) rep.markdown += "- " + w + "\n";
  }
  return rep;
}

// Writes the report files into dir; returns their names.
inline std::vector<std::string> write_comparison(const std::filesystem::path& dir, const ComparisonReport& r) {
  std::filesystem::create_directories(dir);
  const std::vector<std::pair<std::string, const std::string*>> files = {
      {"table1.csv", &r.table1_csv},           {"table2.csv", &r.table2_csv},
      {"metric_bars.csv", &r.metric_bars_csv}, {"roc_curves.csv", &r.roc_csv},
      {"loss_curves.csv", &r.loss_curves_csv}, {"report.md", &r.markdown}};
  std::vector<std::string> names;
  for (const auto& [name, text] : files) {
    write_text_file(dir / name, *text);
    names.push_back(name);
  }
  return names;
}

}  // namespace mdetect
