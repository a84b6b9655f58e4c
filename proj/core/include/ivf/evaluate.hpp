#pragma once

#include "ivf/stats.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ivf {

// sqrt(mean squared error). Throws Error on empty or mismatched input.
double rmse(std::span<const double> predicted, std::span<const double> observed);

// Concordance probability with ties counted 1/2. Throws Error unless both
// classes are present. Labels are 0 or 1.
double auc(std::span<const double> scores, std::span<const int> labels);

struct AucResult {
  double auc = 0.5;
  double lo = 0.0;
  double hi = 1.0;
};

inline constexpr std::size_t kBootstrapResamples = 2000;

// Percentile interval from a bootstrap that resamples positives and negatives
// separately; resample b uses substream ("bootstrap", b) of `seed`. The
// interval is widened to contain the point estimate.
AucResult auc_with_interval(std::span<const double> scores, std::span<const int> labels, std::uint64_t seed,
                            std::size_t resamples = kBootstrapResamples);

// Per-draw cohort proportions -> median with 2.5 / 97.5 percentiles.
// indicators[d][j] is the event for posterior draw d and patient j.
stats::Interval prevalence_interval(const std::vector<std::vector<int>>& indicators);

struct MetricRow {
  std::string outcome;
  std::string metric;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 0;
  std::string method;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  // Columns outcome,metric,value,lo,hi,n,method.
  void write(const std::filesystem::path& path) const;
};

}  // namespace ivf
