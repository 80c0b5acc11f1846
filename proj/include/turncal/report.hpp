#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "turncal/dialogue.hpp"
#include "turncal/experiments.hpp"
#include "turncal/metrics.hpp"

namespace turncal {

// Fraction rendered as a percent with two decimals, ties rounded half-even:
// 0.5 -> "50.00", 1.0 -> "100.00", -1.0 -> "-100.00".
std::string format_percent(double fraction);

// Plain fixed-point with `digits` decimals, for non-percent columns.
std::string format_fixed(double value, int digits);

struct RecordSet {
  std::string dataset;
  std::vector<EvalRecord> records;
};

struct MetricsRow {
  std::string model;
  std::string dataset;
  std::string method;
  Condition condition = Condition::MULTITURN;
  size_t record_count = 0;
  double accuracy = 0.0;
  InfoEceResult info_ece;
  MeanTauResult tau_model;
  bool has_gold = false;
  MeanTauResult tau_gold;
};

struct CurvePoint {
  int bin = 0;
  double lower = 0.0;
  double upper = 0.0;
  double midpoint = 0.0;
  size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

struct CurveSeries {
  std::string model;
  std::string dataset;
  std::string method;
  Condition condition = Condition::MULTITURN;
  std::vector<CurvePoint> points;
};

struct ReportBundle {
  std::vector<MetricsRow> rows;
  std::vector<CurveSeries> curves;
  int bins = 10;
  BinScheme scheme = BinScheme::EQUAL_WIDTH;
  nlohmann::ordered_json manifest;
};

// Aggregates stored records into table rows and per-bin curve series, grouped
// by (model, dataset, method, condition). Model-answer records carry the
// calibration columns; gold-answer records fill the gold tau column of the
// matching row. Pure function of its inputs.
ReportBundle build_report(const std::vector<RecordSet>& inputs, int bins, BinScheme scheme);

std::string render_metrics_csv(const ReportBundle& bundle);
std::string render_curves_csv(const ReportBundle& bundle);
std::string render_placebo_csv(const PlaceboReport& report, const std::string& model,
                               const std::string& dataset, const std::string& method);
std::string render_compare_format_csv(const FormatComparison& cmp, const std::string& model,
                                      const std::string& dataset, const std::string& method);

// metrics.csv, curves.csv, manifest.json under `dir`.
void write_report(const std::filesystem::path& dir, const ReportBundle& bundle);

}  // namespace turncal
