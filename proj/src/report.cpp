#include "turncal/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

#include "turncal/util.hpp"

namespace turncal {

namespace {
using json = nlohmann::ordered_json;
}

std::string format_percent(double fraction) {
  // scale to hundredths of a percent; llrint honors the default FE_TONEAREST
  // mode, which is ties-to-even
  long long scaled = std::llrint(fraction * 10000.0);
  bool negative = scaled < 0;
  unsigned long long magnitude =
      negative ? 0ull - static_cast<unsigned long long>(scaled)
               : static_cast<unsigned long long>(scaled);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%llu.%02llu", negative ? "-" : "", magnitude / 100,
                magnitude % 100);
  return buf;
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

namespace {

std::string model_of(const std::vector<EvalRecord>& records) {
  for (const EvalRecord& r : records) {
    if (r.raw.is_object() && r.raw.contains("model_id") && r.raw["model_id"].is_string())
      return r.raw["model_id"].get<std::string>();
  }
  return "unknown";
}

std::string p_value_cell(double p) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", p);
  return buf;
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string quoted = "\"";
  for (char c : value) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

}  // namespace

ReportBundle build_report(const std::vector<RecordSet>& inputs, int bins, BinScheme scheme) {
  ReportBundle bundle;
  bundle.bins = bins;
  bundle.scheme = scheme;

  using GroupKey = std::tuple<std::string, std::string, std::string, Condition>;
  std::map<GroupKey, std::map<Target, std::vector<EvalRecord>>> groups;
  for (const RecordSet& input : inputs) {
    for (const EvalRecord& r : input.records) {
      std::string model = "unknown";
      if (r.raw.is_object() && r.raw.contains("model_id") && r.raw["model_id"].is_string())
        model = r.raw["model_id"].get<std::string>();
      groups[{model, input.dataset, r.method, r.condition}][r.target].push_back(r);
    }
  }

  for (auto& [key, by_target] : groups) {
    const auto& [model, dataset, method, condition] = key;
    MetricsRow row;
    row.model = model;
    row.dataset = dataset;
    row.method = method;
    row.condition = condition;

    auto model_it = by_target.find(Target::MODEL_ANSWER);
    if (model_it != by_target.end()) {
      const std::vector<EvalRecord>& records = model_it->second;
      row.record_count = records.size();
      row.accuracy = accuracy(records);
      row.info_ece = info_ece(records, bins, scheme);
      row.tau_model = mean_kendall_tau(records);

      CurveSeries series;
      series.model = model;
      series.dataset = dataset;
      series.method = method;
      series.condition = condition;
      for (const Bin& bin : bin_records(records, bins, scheme)) {
        CurvePoint point;
        point.bin = bin.index;
        point.lower = bin.lower;
        point.upper = bin.upper;
        point.midpoint = (bin.lower + bin.upper) / 2.0;
        point.count = bin.count;
        point.mean_confidence = bin.mean_confidence;
        point.mean_accuracy = bin.mean_accuracy;
        series.points.push_back(point);
      }
      bundle.curves.push_back(std::move(series));
    }
    auto gold_it = by_target.find(Target::GOLD_ANSWER);
    if (gold_it != by_target.end()) {
      row.has_gold = true;
      row.tau_gold = mean_kendall_tau(gold_it->second);
      if (model_it == by_target.end()) row.record_count = gold_it->second.size();
    }
    bundle.rows.push_back(std::move(row));
  }

  json manifest = json::object();
  manifest["bins"] = bins;
  manifest["scheme"] = to_string(scheme);
  json sources = json::array();
  for (const RecordSet& input : inputs) {
    std::string payload;
    for (const EvalRecord& r : input.records) {
      payload += record_to_json(r).dump();
      payload += '\n';
    }
    sources.push_back(json{{"dataset", input.dataset},
                           {"records", input.records.size()},
                           {"sha256", sha256_hex(payload)}});
  }
  manifest["sources"] = std::move(sources);
  bundle.manifest = std::move(manifest);
  return bundle;
}

std::string render_metrics_csv(const ReportBundle& bundle) {
  std::string out = "# values are percents, rounded half-even to 2 decimals; scheme=" +
                    to_string(bundle.scheme) + " bins=" + std::to_string(bundle.bins) + "\n";
  out +=
      "model,dataset,method,condition,records,accuracy,info_ece,empty_bins,tau_model_answer,"
      "tau_model_skipped,tau_gold_answer,tau_gold_skipped\n";
  for (const MetricsRow& row : bundle.rows) {
    out += csv_field(row.model) + ',' + csv_field(row.dataset) + ',' + csv_field(row.method) +
           ',' + to_string(row.condition) + ',' + std::to_string(row.record_count) + ',' +
           format_percent(row.accuracy) + ',' + format_percent(row.info_ece.value) + ',' +
           std::to_string(row.info_ece.empty_bins) + ',' + format_percent(row.tau_model.value) +
           ',' + std::to_string(row.tau_model.skipped.size()) + ',';
    if (row.has_gold) {
      out += format_percent(row.tau_gold.value) + ',' +
             std::to_string(row.tau_gold.skipped.size());
    } else {
      out += ",";
    }
    out += '\n';
  }
  return out;
}

std::string render_curves_csv(const ReportBundle& bundle) {
  std::string out = "# midpoints are normalized information levels; conf/acc are percents; "
                    "scheme=" +
                    to_string(bundle.scheme) + " bins=" + std::to_string(bundle.bins) + "\n";
  out += "model,dataset,method,condition,bin,lower,upper,midpoint,count,mean_confidence,"
         "mean_accuracy\n";
  for (const CurveSeries& series : bundle.curves) {
    for (const CurvePoint& point : series.points) {
      out += csv_field(series.model) + ',' + csv_field(series.dataset) + ',' +
             csv_field(series.method) + ',' + to_string(series.condition) + ',' +
             std::to_string(point.bin) + ',' + format_fixed(point.lower, 6) + ',' +
             format_fixed(point.upper, 6) + ',' + format_fixed(point.midpoint, 6) + ',' +
             std::to_string(point.count) + ',' + format_percent(point.mean_confidence) + ',' +
             format_percent(point.mean_accuracy) + '\n';
    }
  }
  return out;
}

std::string render_placebo_csv(const PlaceboReport& report, const std::string& model,
                               const std::string& dataset, const std::string& method) {
  std::string test_name =
      report.test == SignificanceTest::PAIRED_T ? "paired_t" : "wilcoxon";
  std::string out =
      "# confidences are percents; significant = p < 0.05 against the turn i-1 baseline; test=" +
      test_name + "\n";
  out += "model,dataset,method,triples,mean_baseline,mean_placebo,mean_original,"
         "stat_placebo,p_placebo,significant_placebo,stat_original,p_original,"
         "significant_original\n";
  out += csv_field(model) + ',' + csv_field(dataset) + ',' + csv_field(method) + ',' +
         std::to_string(report.triples.size()) + ',' + format_percent(report.mean_baseline) +
         ',' + format_percent(report.mean_placebo) + ',' + format_percent(report.mean_original) +
         ',' + format_fixed(report.placebo_vs_baseline.statistic, 6) + ',' +
         p_value_cell(report.placebo_vs_baseline.p_value) + ',' +
         (report.placebo_vs_baseline.p_value < 0.05 ? "yes" : "no") + ',' +
         format_fixed(report.original_vs_baseline.statistic, 6) + ',' +
         p_value_cell(report.original_vs_baseline.p_value) + ',' +
         (report.original_vs_baseline.p_value < 0.05 ? "yes" : "no") + '\n';
  return out;
}

std::string render_compare_format_csv(const FormatComparison& cmp, const std::string& model,
                                      const std::string& dataset, const std::string& method) {
  std::string out = "# values are percents; one row per prompt format over the same turns\n";
  out += "model,dataset,method,condition,records,accuracy,mean_confidence,info_ece,empty_bins\n";
  auto row = [&](const char* condition, const std::vector<EvalRecord>& records, double acc,
                 double conf, const InfoEceResult& ece) {
    out += csv_field(model) + ',' + csv_field(dataset) + ',' + csv_field(method) + ',' +
           condition + ',' + std::to_string(records.size()) + ',' + format_percent(acc) + ',' +
           format_percent(conf) + ',' + format_percent(ece.value) + ',' +
           std::to_string(ece.empty_bins) + '\n';
  };
  row("MULTITURN", cmp.multiturn_records, cmp.acc_multiturn, cmp.conf_multiturn,
      cmp.ece_multiturn);
  row("SUMMARY", cmp.summary_records, cmp.acc_summary, cmp.conf_summary, cmp.ece_summary);
  return out;
}

void write_report(const std::filesystem::path& dir, const ReportBundle& bundle) {
  std::filesystem::create_directories(dir);
  write_text_file_atomic(dir / "metrics.csv", render_metrics_csv(bundle));
  write_text_file_atomic(dir / "curves.csv", render_curves_csv(bundle));
  write_text_file_atomic(dir / "manifest.json", bundle.manifest.dump(2) + "\n");
}

}  // namespace turncal
