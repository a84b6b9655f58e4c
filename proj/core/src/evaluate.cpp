#include "ivf/evaluate.hpp"

#include "ivf/csv.hpp"
#include "ivf/error.hpp"
#include "ivf/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ivf {

double rmse(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.empty()) throw Error("rmse of an empty sample");
  if (predicted.size() != observed.size()) throw Error("rmse inputs differ in length");
  double ss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - observed[i];
    ss += e * e;
  }
  return std::sqrt(ss / static_cast<double>(predicted.size()));
}

namespace {

// Mann-Whitney statistic through midranks: O(n log n), exact for ties.
double auc_split(std::vector<double> pos, std::vector<double> neg) {
  const std::size_t np = pos.size(), nn = neg.size();
  std::vector<std::pair<double, int>> all;
  all.reserve(np + nn);
  for (double s : pos) all.emplace_back(s, 1);
  for (double s : neg) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the rank sum keeps midranks integral.
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t k = i;
    while (k < all.size() && all[k].first == all[i].first) ++k;
    const std::uint64_t mid2 = i + k + 1;  // 2 * mean of ranks i+1..k
    for (std::size_t t = i; t < k; ++t) {
      if (all[t].second == 1) rank_sum2 += mid2;
    }
    i = k;
  }
  const double u2 = static_cast<double>(rank_sum2) - static_cast<double>(np) * static_cast<double>(np + 1);
  return u2 / (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

void split_classes(std::span<const double> scores, std::span<const int> labels, std::vector<double>& pos,
                   std::vector<double>& neg) {
  if (scores.size() != labels.size()) throw Error("auc inputs differ in length");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) {
      pos.push_back(scores[i]);
    } else if (labels[i] == 0) {
      neg.push_back(scores[i]);
    } else {
      throw Error("auc labels must be 0 or 1");
    }
  }
  if (pos.empty() || neg.empty()) throw Error("auc requires both classes");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> pos, neg;
  split_classes(scores, labels, pos, neg);
  return auc_split(std::move(pos), std::move(neg));
}

AucResult auc_with_interval(std::span<const double> scores, std::span<const int> labels, std::uint64_t seed,
                            std::size_t resamples) {
  std::vector<double> pos, neg;
  split_classes(scores, labels, pos, neg);
  AucResult r;
  r.auc = auc_split(pos, neg);
  if (resamples == 0) {
    r.lo = r.hi = r.auc;
    return r;
  }
  std::vector<double> boot(resamples);
  std::vector<double> bp(pos.size()), bn(neg.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    Rng rng(seed, "bootstrap", b);
    for (auto& v : bp) v = pos[rng.below(pos.size())];
    for (auto& v : bn) v = neg[rng.below(neg.size())];
    boot[b] = auc_split(bp, bn);
  }
  std::sort(boot.begin(), boot.end());
  r.lo = std::min(stats::quantile_sorted(boot, 0.025), r.auc);
  r.hi = std::max(stats::quantile_sorted(boot, 0.975), r.auc);
  return r;
}

stats::Interval prevalence_interval(const std::vector<std::vector<int>>& indicators) {
  if (indicators.empty()) throw Error("prevalence requires at least one posterior draw");
  std::vector<double> props;
  props.reserve(indicators.size());
  for (const auto& row : indicators) {
    if (row.empty()) throw Error("prevalence requires at least one patient");
    const double hits = std::accumulate(row.begin(), row.end(), 0.0);
    props.push_back(hits / static_cast<double>(row.size()));
  }
  return stats::central_interval(std::move(props));
}

void MetricReport::write(const std::filesystem::path& path) const {
  auto out = csv::open_output(path);
  out << "outcome,metric,value,lo,hi,n,method\n";
  for (const auto& r : rows) {
    out << r.outcome << ',' << r.metric << ',' << csv::format_shortest(r.value) << ','
        << csv::format_shortest(r.lo) << ',' << csv::format_shortest(r.hi) << ',' << r.n << ',' << r.method
        << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace ivf
