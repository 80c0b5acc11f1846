#include "turncal/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace turncal {

std::string to_string(BinScheme s) {
  return s == BinScheme::EQUAL_WIDTH ? "EQUAL_WIDTH" : "EQUAL_MASS";
}

BinScheme bin_scheme_from_string(const std::string& s) {
  std::string upper;
  for (char c : s) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (upper == "EQUAL_WIDTH") return BinScheme::EQUAL_WIDTH;
  if (upper == "EQUAL_MASS") return BinScheme::EQUAL_MASS;
  throw std::invalid_argument("unknown bin scheme '" + s +
                              "' (expected EQUAL_WIDTH or EQUAL_MASS)");
}

double normalized_level(int i, int L) {
  if (L < 1 || i < 1 || i > L)
    throw std::invalid_argument("turn index " + std::to_string(i) + " out of range for length " +
                                std::to_string(L));
  return static_cast<double>(i) / static_cast<double>(L);
}

namespace {

void check_levels(const std::vector<EvalRecord>& records) {
  for (const EvalRecord& r : records) {
    if (!(r.normalized_level > 0.0) || r.normalized_level > 1.0)
      throw std::invalid_argument("normalized_level out of (0,1] for dialogue '" + r.dialogue_id +
                                  "' turn " + std::to_string(r.turn_index));
  }
}

void finalize_bin(Bin& bin, double conf_sum, double acc_sum) {
  if (bin.count > 0) {
    bin.mean_confidence = conf_sum / bin.count;
    bin.mean_accuracy = acc_sum / bin.count;
  }
}

std::vector<Bin> bin_equal_width(const std::vector<EvalRecord>& records, int num_bins) {
  std::vector<Bin> bins(num_bins);
  std::vector<double> conf_sum(num_bins, 0.0), acc_sum(num_bins, 0.0);
  for (int b = 0; b < num_bins; ++b) {
    bins[b].index = b + 1;
    bins[b].lower = static_cast<double>(b) / num_bins;
    bins[b].upper = static_cast<double>(b + 1) / num_bins;
  }
  for (const EvalRecord& r : records) {
    // Right-closed bins: first bin whose upper edge reaches the level. Edge
    // comparison keeps i/L == b/B boundary cases in the lower bin.
    int b = 0;
    while (b < num_bins - 1 && r.normalized_level > bins[b].upper) ++b;
    bins[b].count++;
    conf_sum[b] += r.confidence;
    acc_sum[b] += r.correct ? 1.0 : 0.0;
  }
  for (int b = 0; b < num_bins; ++b) finalize_bin(bins[b], conf_sum[b], acc_sum[b]);
  return bins;
}

std::vector<Bin> bin_equal_mass(const std::vector<EvalRecord>& records, int num_bins) {
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const EvalRecord& ra = records[a];
    const EvalRecord& rb = records[b];
    if (ra.normalized_level != rb.normalized_level)
      return ra.normalized_level < rb.normalized_level;
    if (ra.dialogue_id != rb.dialogue_id) return ra.dialogue_id < rb.dialogue_id;
    return ra.turn_index < rb.turn_index;
  });

  size_t n = records.size();
  size_t base = n / num_bins;
  size_t remainder = n % num_bins;
  std::vector<Bin> bins(num_bins);
  size_t pos = 0;
  double prev_max = 0.0;
  for (int b = 0; b < num_bins; ++b) {
    size_t size = base + (static_cast<size_t>(b) < remainder ? 1 : 0);
    Bin& bin = bins[b];
    bin.index = b + 1;
    bin.lower = prev_max;
    double conf_sum = 0.0, acc_sum = 0.0;
    for (size_t k = 0; k < size; ++k) {
      const EvalRecord& r = records[order[pos++]];
      bin.count++;
      conf_sum += r.confidence;
      acc_sum += r.correct ? 1.0 : 0.0;
      prev_max = r.normalized_level;
    }
    bin.upper = prev_max;
    finalize_bin(bin, conf_sum, acc_sum);
  }
  bins.back().upper = 1.0;
  return bins;
}

}  // namespace

std::vector<Bin> bin_records(const std::vector<EvalRecord>& records, int num_bins,
                             BinScheme scheme) {
  if (num_bins < 1) throw std::invalid_argument("num_bins must be at least 1");
  check_levels(records);
  return scheme == BinScheme::EQUAL_WIDTH ? bin_equal_width(records, num_bins)
                                          : bin_equal_mass(records, num_bins);
}

InfoEceResult info_ece(const std::vector<EvalRecord>& records, int num_bins, BinScheme scheme) {
  InfoEceResult result;
  result.bins = bin_records(records, num_bins, scheme);
  double gap_sum = 0.0;
  int populated = 0;
  for (const Bin& bin : result.bins) {
    if (bin.count == 0) {
      result.empty_bins++;
      continue;
    }
    populated++;
    gap_sum += std::abs(bin.mean_accuracy - bin.mean_confidence);
  }
  result.value = populated > 0 ? gap_sum / populated : 0.0;
  return result;
}

double kendall_tau(const std::vector<double>& confidences) {
  size_t n = confidences.size();
  if (n < 2) throw std::invalid_argument("kendall_tau needs at least 2 values");
  long long concordant = 0, discordant = 0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      if (confidences[j] > confidences[i])
        ++concordant;
      else if (confidences[j] < confidences[i])
        ++discordant;
      // ties fall through: they count toward neither, the denominator keeps
      // every pair
    }
  }
  double pairs = static_cast<double>(n) * (n - 1) / 2.0;
  return static_cast<double>(concordant - discordant) / pairs;
}

MeanTauResult mean_kendall_tau(const std::vector<EvalRecord>& records) {
  std::map<std::string, std::vector<std::pair<int, double>>> by_dialogue;
  for (const EvalRecord& r : records)
    by_dialogue[r.dialogue_id].emplace_back(r.turn_index, r.confidence);

  MeanTauResult result;
  double tau_sum = 0.0;
  for (auto& [id, turns] : by_dialogue) {
    if (turns.size() < 2) {
      result.skipped.push_back(id);
      continue;
    }
    std::stable_sort(turns.begin(), turns.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<double> confs;
    confs.reserve(turns.size());
    for (const auto& [index, conf] : turns) confs.push_back(conf);
    double tau = kendall_tau(confs);
    result.per_dialogue[id] = tau;
    tau_sum += tau;
  }
  result.value =
      result.per_dialogue.empty() ? 0.0 : tau_sum / static_cast<double>(result.per_dialogue.size());
  return result;
}

double accuracy(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("accuracy of empty record set");
  double sum = 0.0;
  for (const EvalRecord& r : records) sum += r.correct ? 1.0 : 0.0;
  return sum / static_cast<double>(records.size());
}

namespace {

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

SignificanceResult wilcoxon_signed_rank(const std::vector<double>& diffs) {
  SignificanceResult result;
  std::vector<double> nonzero;
  for (double d : diffs)
    if (d != 0.0) nonzero.push_back(d);
  result.n = static_cast<int>(nonzero.size());
  if (nonzero.empty()) {
    result.p_value = 1.0;
    return result;
  }

  size_t n = nonzero.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::abs(nonzero[a]) < std::abs(nonzero[b]);
  });

  // average ranks within groups of equal magnitude
  std::vector<double> rank(n, 0.0);
  bool tied = false;
  double tie_correction = 0.0;  // sum of t^3 - t over tie groups
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && std::abs(nonzero[order[j]]) == std::abs(nonzero[order[i]])) ++j;
    double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k) rank[order[k]] = avg;
    double t = static_cast<double>(j - i);
    if (t > 1) {
      tied = true;
      tie_correction += t * t * t - t;
    }
    i = j;
  }

  double w_plus = 0.0;
  for (size_t i = 0; i < n; ++i)
    if (nonzero[i] > 0.0) w_plus += rank[i];
  result.statistic = w_plus;

  if (!tied && n <= 25) {
    // exact null distribution of W+ by subset-sum counting
    int max_sum = static_cast<int>(n * (n + 1) / 2);
    std::vector<double> count(max_sum + 1, 0.0);
    count[0] = 1.0;
    for (int r = 1; r <= static_cast<int>(n); ++r)
      for (int w = max_sum; w >= r; --w) count[w] += count[w - r];
    double total = std::pow(2.0, static_cast<double>(n));
    int w_obs = static_cast<int>(std::llround(w_plus));
    double below = 0.0, above = 0.0;
    for (int w = 0; w <= max_sum; ++w) {
      if (w <= w_obs) below += count[w];
      if (w >= w_obs) above += count[w];
    }
    result.p_value = std::min(1.0, 2.0 * std::min(below, above) / total);
  } else {
    double mu = static_cast<double>(n) * (n + 1) / 4.0;
    double sigma_sq =
        static_cast<double>(n) * (n + 1) * (2 * n + 1) / 24.0 - tie_correction / 48.0;
    double z = (w_plus - mu) / std::sqrt(sigma_sq);
    result.p_value = normal_two_sided_p(z);
  }
  return result;
}

}  // namespace

SignificanceResult paired_significance(const std::vector<double>& before,
                                       const std::vector<double>& after,
                                       SignificanceTest test) {
  if (before.size() != after.size())
    throw std::invalid_argument("paired_significance: size mismatch");
  if (before.size() < 2) throw std::invalid_argument("paired_significance: need at least 2 pairs");

  size_t n = before.size();
  std::vector<double> diffs(n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    diffs[i] = after[i] - before[i];
    sum += diffs[i];
  }
  double mean = sum / static_cast<double>(n);

  if (test == SignificanceTest::WILCOXON) {
    SignificanceResult result = wilcoxon_signed_rank(diffs);
    result.mean_difference = mean;
    return result;
  }

  SignificanceResult result;
  result.n = static_cast<int>(n);
  result.mean_difference = mean;
  bool all_zero = std::all_of(diffs.begin(), diffs.end(), [](double d) { return d == 0.0; });
  if (all_zero) {
    result.statistic = 0.0;
    result.p_value = 1.0;
    return result;
  }
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    // identical nonzero shifts: the effect is unambiguous
    result.statistic = std::copysign(std::numeric_limits<double>::infinity(), mean);
    result.p_value = 0.0;
    return result;
  }
  double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  result.statistic = t;
  boost::math::students_t_distribution<double> dist(static_cast<double>(n - 1));
  result.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return result;
}

}  // namespace turncal
