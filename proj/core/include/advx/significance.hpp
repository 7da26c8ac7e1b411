#pragma once

// Paired significance tests used to compare runs on per-user scores.

#include <cstddef>
#include <span>
#include <vector>

namespace advx::eval {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool significant = false;
  bool degenerate = false;  // no information (all differences zero, ...)
  std::size_t n = 0;        // effective sample size
};

enum class WilcoxonMethod {
  kAuto,    // exact null distribution up to kWilcoxonExactLimit pairs, normal above
  kExact,
  kNormal,  // tie-corrected variance, continuity correction
};

inline constexpr std::size_t kWilcoxonExactLimit = 25;

/// Two-sided Wilcoxon signed-rank test on paired scores. Zero differences
/// are dropped; |d| ties get average ranks. The statistic is min(W+, W-).
/// Requires at least 10 nonzero differences unless all are zero
/// (then p = 1 and the result is flagged degenerate).
TestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                double alpha = 0.05,
                                WilcoxonMethod method = WilcoxonMethod::kAuto);

/// McNemar's chi-square with continuity correction over discordant pairs:
/// (|b - c| - 1)^2 / (b + c), one degree of freedom.
TestResult mcnemar_test(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b,
                        double alpha = 0.05);

/// Two-sided paired Student t-test on a - b.
TestResult paired_t_test(std::span<const double> a, std::span<const double> b,
                         double alpha = 0.05);

}  // namespace advx::eval
