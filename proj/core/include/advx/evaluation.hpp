#pragma once

// Ranking and debiasing metrics plus the fold-level report.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advx/data.hpp"

namespace advx::eval {

using data::ItemIndex;

/// Indices of the k highest scores, skipping `exclude` (sorted). Ties go to
/// the lower index.
std::vector<ItemIndex> top_k(std::span<const double> scores, std::span<const ItemIndex> exclude,
                             std::size_t k);

/// Binary-relevance NDCG@k. IDCG places min(k, |holdout|) hits at the top.
/// std::nullopt for an empty holdout. `holdout` and `fold_in` must be sorted;
/// a ranked item that belongs to `fold_in` is a ContractError.
std::optional<double> ndcg_at_k(std::span<const ItemIndex> ranked,
                                std::span<const ItemIndex> holdout, std::size_t k = 10,
                                std::span<const ItemIndex> fold_in = {});

/// |top-k ∩ holdout| / min(k, |holdout|); same conventions as ndcg_at_k.
std::optional<double> recall_at_k(std::span<const ItemIndex> ranked,
                                  std::span<const ItemIndex> holdout, std::size_t k = 10,
                                  std::span<const ItemIndex> fold_in = {});

/// Mean over classes of per-class recall. Every class must occur in labels.
double balanced_accuracy(std::span<const int> predictions, std::span<const int> labels,
                         std::size_t n_classes);

/// Mean absolute error.
double mae(std::span<const double> predictions, std::span<const double> targets);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

/// Raw [0, 1] metrics of one fold (MAE in target units).
struct FoldMetrics {
  std::size_t fold = 0;
  double ndcg = 0.0;
  double recall = 0.0;
  std::map<std::string, double> bacc;  // categorical attributes
  std::map<std::string, double> mae;   // continuous attributes
};

/// Percentages (x100) per fold and their mean/std across folds.
struct MetricsReport {
  std::vector<FoldMetrics> folds_percent;
  std::size_t fold_count = 0;
  MeanStd ndcg;
  MeanStd recall;
  std::map<std::string, MeanStd> bacc;
  std::map<std::string, MeanStd> mae;
};

inline double to_percent(double value) { return 100.0 * value; }

MetricsReport make_report(std::span<const FoldMetrics> folds);

}  // namespace advx::eval
