#include "advx/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advx/errors.hpp"

namespace advx::eval {

namespace {

bool contains(std::span<const ItemIndex> sorted, ItemIndex item) {
  return std::binary_search(sorted.begin(), sorted.end(), item);
}

void check_ranking(std::span<const ItemIndex> ranked, std::span<const ItemIndex> fold_in,
                   std::size_t k) {
  if (k == 0) throw ConfigError("cutoff k must be >= 1");
  for (ItemIndex item : ranked) {
    if (contains(fold_in, item)) {
      throw ContractError("ranking contains fold-in item " + std::to_string(item));
    }
  }
}

}  // namespace

std::vector<ItemIndex> top_k(std::span<const double> scores, std::span<const ItemIndex> exclude,
                             std::size_t k) {
  std::vector<ItemIndex> candidates;
  candidates.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!contains(exclude, static_cast<ItemIndex>(i))) candidates.push_back(static_cast<ItemIndex>(i));
  }
  const std::size_t n = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                    candidates.end(), [&](ItemIndex a, ItemIndex b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  candidates.resize(n);
  return candidates;
}

std::optional<double> ndcg_at_k(std::span<const ItemIndex> ranked,
                                std::span<const ItemIndex> holdout, std::size_t k,
                                std::span<const ItemIndex> fold_in) {
  check_ranking(ranked, fold_in, k);
  if (holdout.empty()) return std::nullopt;
  double dcg = 0.0;
  const std::size_t depth = std::min(k, ranked.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (contains(holdout, ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, holdout.size());
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

std::optional<double> recall_at_k(std::span<const ItemIndex> ranked,
                                  std::span<const ItemIndex> holdout, std::size_t k,
                                  std::span<const ItemIndex> fold_in) {
  check_ranking(ranked, fold_in, k);
  if (holdout.empty()) return std::nullopt;
  std::size_t hits = 0;
  const std::size_t depth = std::min(k, ranked.size());
  for (std::size_t i = 0; i < depth; ++i) hits += contains(holdout, ranked[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(std::min(k, holdout.size()));
}

double balanced_accuracy(std::span<const int> predictions, std::span<const int> labels,
                         std::size_t n_classes) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("balanced_accuracy: " + std::to_string(predictions.size()) +
                         " predictions for " + std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> total(n_classes, 0), correct(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw DataError("balanced_accuracy: label " + std::to_string(y) + " out of range");
    }
    ++total[static_cast<std::size_t>(y)];
    if (predictions[i] == y) ++correct[static_cast<std::size_t>(y)];
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (total[c] == 0) {
      throw DataError("balanced_accuracy undefined: class " + std::to_string(c) +
                      " absent from labels");
    }
    sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
  }
  return sum / static_cast<double>(n_classes);
}

double mae(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    throw DimensionError("mae: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) total += std::abs(predictions[i] - targets[i]);
  return total / static_cast<double>(targets.size());
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  const auto n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(sq / (n - 1.0));
  }
  return out;
}

MetricsReport make_report(std::span<const FoldMetrics> folds) {
  MetricsReport report;
  report.fold_count = folds.size();
  std::vector<double> ndcg, recall;
  std::map<std::string, std::vector<double>> bacc, mae_values;
  for (const auto& f : folds) {
    FoldMetrics p;
    p.fold = f.fold;
    p.ndcg = to_percent(f.ndcg);
    p.recall = to_percent(f.recall);
    for (const auto& [name, v] : f.bacc) p.bacc[name] = to_percent(v);
    for (const auto& [name, v] : f.mae) p.mae[name] = to_percent(v);
    ndcg.push_back(p.ndcg);
    recall.push_back(p.recall);
    for (const auto& [name, v] : p.bacc) bacc[name].push_back(v);
    for (const auto& [name, v] : p.mae) mae_values[name].push_back(v);
    report.folds_percent.push_back(std::move(p));
  }
  report.ndcg = mean_std(ndcg);
  report.recall = mean_std(recall);
  for (const auto& [name, v] : bacc) report.bacc[name] = mean_std(v);
  for (const auto& [name, v] : mae_values) report.mae[name] = mean_std(v);
  return report;
}

}  // namespace advx::eval
