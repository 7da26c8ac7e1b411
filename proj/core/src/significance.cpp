#include "advx/significance.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "advx/errors.hpp"

namespace advx::eval {

namespace {

void require_paired(std::size_t a, std::size_t b, const char* test) {
  if (a != b) {
    throw DimensionError(std::string(test) + ": paired samples differ in length (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

// Average ranks of |d| (1-based), doubled so that they are integers.
std::vector<long> doubled_ranks(const std::vector<double>& abs_diffs) {
  const std::size_t n = abs_diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return abs_diffs[x] < abs_diffs[y]; });
  std::vector<long> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && abs_diffs[order[j + 1]] == abs_diffs[order[i]]) ++j;
    // positions i..j share rank ((i+1) + (j+1)) / 2
    const long doubled = static_cast<long>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = doubled;
    i = j + 1;
  }
  return ranks;
}

// P(|T - mean| >= |t_obs - mean|) under random signs, T = sum of doubled
// ranks carrying a positive sign.
double exact_signed_rank_p(const std::vector<long>& ranks, long observed) {
  const long total = std::accumulate(ranks.begin(), ranks.end(), 0L);
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : ranks) {
    for (long s = reach; s >= 0; --s) {
      if (counts[static_cast<std::size_t>(s)] != 0.0) {
        counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
      }
    }
    reach += r;
  }
  // Sums are compared after doubling once more so the mean total/2 is integral.
  const long observed_dev = std::labs(2 * observed - total);
  double extreme = 0.0;
  for (long s = 0; s <= total; ++s) {
    if (std::labs(2 * s - total) >= observed_dev) extreme += counts[static_cast<std::size_t>(s)];
  }
  return std::min(1.0, extreme / std::ldexp(1.0, static_cast<int>(ranks.size())));
}

}  // namespace

TestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                double alpha, WilcoxonMethod method) {
  require_paired(a.size(), b.size(), "wilcoxon_signed_rank");
  std::vector<double> abs_diffs;
  std::vector<bool> positive;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;
    abs_diffs.push_back(std::abs(d));
    positive.push_back(d > 0.0);
  }
  TestResult result;
  result.n = abs_diffs.size();
  if (abs_diffs.empty()) {
    result.degenerate = true;
    return result;
  }
  if (abs_diffs.size() < 10) {
    throw ContractError("wilcoxon_signed_rank needs at least 10 nonzero differences, got " +
                        std::to_string(abs_diffs.size()));
  }

  const std::vector<long> ranks = doubled_ranks(abs_diffs);
  long w_plus2 = 0;
  long total2 = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    total2 += ranks[i];
    if (positive[i]) w_plus2 += ranks[i];
  }
  const double w_plus = 0.5 * static_cast<double>(w_plus2);
  const double w_minus = 0.5 * static_cast<double>(total2 - w_plus2);
  result.statistic = std::min(w_plus, w_minus);

  const bool exact = method == WilcoxonMethod::kExact ||
                     (method == WilcoxonMethod::kAuto && result.n <= kWilcoxonExactLimit);
  if (exact) {
    if (result.n > 60) throw ContractError("exact Wilcoxon limited to 60 pairs");
    result.p_value = exact_signed_rank_p(ranks, w_plus2);
  } else {
    const auto n = static_cast<double>(result.n);
    std::map<double, std::size_t> tie_sizes;
    for (double v : abs_diffs) ++tie_sizes[v];
    double tie_term = 0.0;
    for (const auto& [value, t] : tie_sizes) {
      const auto tt = static_cast<double>(t);
      tie_term += tt * tt * tt - tt;
    }
    const double mean = n * (n + 1.0) / 4.0;
    const double variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = (std::abs(result.statistic - mean) - 0.5) / std::sqrt(variance);
    if (z <= 0.0) {
      result.p_value = 1.0;
    } else {
      boost::math::normal_distribution<double> normal;
      result.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(normal, z)));
    }
  }
  result.significant = result.p_value <= alpha;
  return result;
}

TestResult mcnemar_test(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b,
                        double alpha) {
  require_paired(correct_a.size(), correct_b.size(), "mcnemar_test");
  std::size_t b = 0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < correct_a.size(); ++i) {
    if (correct_a[i] && !correct_b[i]) ++b;
    if (!correct_a[i] && correct_b[i]) ++c;
  }
  TestResult result;
  result.n = b + c;
  if (b + c == 0) {
    result.degenerate = true;
    return result;
  }
  const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
  result.statistic = diff * diff / static_cast<double>(b + c);
  boost::math::chi_squared_distribution<double> chi2(1.0);
  result.p_value = boost::math::cdf(boost::math::complement(chi2, result.statistic));
  result.significant = result.p_value <= alpha;
  return result;
}

TestResult paired_t_test(std::span<const double> a, std::span<const double> b, double alpha) {
  require_paired(a.size(), b.size(), "paired_t_test");
  if (a.size() < 2) throw ContractError("paired_t_test needs at least 2 pairs");
  const auto n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : d) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / (n - 1.0));

  TestResult result;
  result.n = a.size();
  if (sd == 0.0) {
    result.degenerate = true;
    if (mean == 0.0) return result;
    result.statistic = std::copysign(std::numeric_limits<double>::infinity(), mean);
    result.p_value = 0.0;
    result.significant = true;
    return result;
  }
  result.statistic = mean / (sd / std::sqrt(n));
  boost::math::students_t_distribution<double> student(n - 1.0);
  result.p_value =
      std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(student, std::abs(result.statistic))));
  result.significant = result.p_value <= alpha;
  return result;
}

}  // namespace advx::eval
