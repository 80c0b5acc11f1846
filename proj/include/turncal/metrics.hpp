#pragma once

#include <map>
#include <string>
#include <vector>

#include "turncal/dialogue.hpp"

namespace turncal {

enum class BinScheme { EQUAL_WIDTH, EQUAL_MASS };

std::string to_string(BinScheme s);
BinScheme bin_scheme_from_string(const std::string& s);

// Fraction of the dialogue's hints revealed after turn i of L.
double normalized_level(int i, int L);

struct Bin {
  int index = 0;       // 1-based
  double lower = 0.0;  // exclusive
  double upper = 0.0;  // inclusive
  int count = 0;
  double mean_confidence = 0.0;  // 0 when empty
  double mean_accuracy = 0.0;    // 0 when empty
};

struct InfoEceResult {
  double value = 0.0;  // mean |acc - conf| over non-empty bins
  std::vector<Bin> bins;
  int empty_bins = 0;
};

// Bins records by normalized information level. EQUAL_WIDTH bin b covers
// ((b-1)/B, b/B]; EQUAL_MASS sorts by (level, dialogue_id, turn_index) and
// splits into B contiguous runs whose sizes differ by at most one, earlier
// runs taking the remainder.
std::vector<Bin> bin_records(const std::vector<EvalRecord>& records, int num_bins,
                             BinScheme scheme);

InfoEceResult info_ece(const std::vector<EvalRecord>& records, int num_bins, BinScheme scheme);

// Kendall's tau-a over one dialogue's confidence sequence in turn order:
// (concordant - discordant) / C(L,2). Tied pairs count toward neither.
// Requires at least 2 values.
double kendall_tau(const std::vector<double>& confidences);

struct MeanTauResult {
  double value = 0.0;                              // mean of per-dialogue taus
  std::map<std::string, double> per_dialogue;
  std::vector<std::string> skipped;                // dialogues with fewer than 2 turns
};

// Groups records by dialogue_id, orders each group by turn_index, averages
// per-dialogue tau. Single-turn dialogues are excluded and reported.
MeanTauResult mean_kendall_tau(const std::vector<EvalRecord>& records);

// Mean of the correctness flags.
double accuracy(const std::vector<EvalRecord>& records);

enum class SignificanceTest { PAIRED_T, WILCOXON };

struct SignificanceResult {
  double statistic = 0.0;  // t for PAIRED_T, W+ (sum of positive ranks) for WILCOXON
  double p_value = 1.0;    // two-sided
  int n = 0;               // pairs used (zero differences dropped for WILCOXON)
  double mean_difference = 0.0;  // mean of after - before over all pairs
};

// Two-sided paired test on per-pair differences (after - before).
// PAIRED_T: Student's t with n-1 df; all-zero differences give p = 1;
// zero-variance nonzero differences give an infinite statistic and p = 0.
// WILCOXON: signed-rank with average ranks for ties; exact null distribution
// when n <= 25 and ranks are untied, normal approximation otherwise.
SignificanceResult paired_significance(const std::vector<double>& before,
                                       const std::vector<double>& after,
                                       SignificanceTest test = SignificanceTest::PAIRED_T);

}  // namespace turncal
