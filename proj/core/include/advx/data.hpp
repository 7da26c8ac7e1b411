#pragma once

// Interaction/demographics ingestion, k-core filtering, age normalization,
// user folds, per-user holdout splits and class weights.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advx/adversarial.hpp"
#include "advx/autodiff.hpp"
#include "advx/rng.hpp"

namespace advx::data {

using ItemIndex = std::uint32_t;

/// Binary user x item matrix stored as sorted per-user item lists.
struct InteractionDataset {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<std::vector<ItemIndex>> rows;
  std::vector<std::string> user_ids;  // dense index -> external id
  std::vector<std::string> item_ids;

  std::size_t interactions() const noexcept;
  double density() const noexcept;

  /// Dense binary matrix [users.size() x n_items] of the selected users.
  ad::RealArray dense_rows(std::span<const std::size_t> users) const;

  /// Throws DataError when rows are unsorted, duplicated or out of range.
  void validate() const;
};

/// Dense binary matrix of arbitrary item lists over `n_items` columns.
ad::RealArray to_dense(std::span<const std::vector<ItemIndex>> rows, std::size_t n_items);

struct UserAttributes {
  std::vector<std::optional<int>> gender;  // class index
  std::vector<std::optional<double>> age_raw;
  std::vector<std::optional<double>> age_normalized;
  std::vector<std::string> gender_tokens;  // class index -> token, first-appearance order
  double age_cap = 60.0;

  std::size_t size() const noexcept { return gender.size(); }
};

/// raw_age / cap. Throws DataError naming `user` when raw_age is outside [0, cap].
double normalize_age(double raw_age, double cap, const std::string& user = {});

struct LoadReport {
  std::size_t interaction_rows = 0;
  std::size_t unknown_user_rows = 0;  // users without complete demographics
  std::size_t duplicate_rows = 0;
  std::size_t users_missing_attributes = 0;
};

struct LoadedData {
  InteractionDataset dataset;
  UserAttributes attributes;
  LoadReport report;
};

/// Reads tab-separated files with a header line. interactions: user_id,
/// item_id (extra columns ignored). demographics: user_id, gender, age.
/// Users lacking gender or age are dropped; ids are densified in order of
/// first appearance in the interactions file; duplicate pairs collapse.
LoadedData load_interactions(const std::filesystem::path& interactions,
                             const std::filesystem::path& demographics, double age_cap);

/// Rewrites the "::"-separated MovieLens release files (ratings.dat:
/// UserID::MovieID::Rating::Timestamp, users.dat: UserID::Gender::Age::...)
/// as the tab-separated interactions/demographics files read above.
void convert_movielens(const std::filesystem::path& ratings, const std::filesystem::path& users,
                       const std::filesystem::path& interactions_out,
                       const std::filesystem::path& demographics_out);

struct SubsetResult {
  InteractionDataset dataset;
  std::vector<std::size_t> kept_users;  // indices into the input dataset
  std::vector<std::size_t> kept_items;
  bool empty() const noexcept { return dataset.n_users == 0 && dataset.n_items == 0; }
};

/// Iteratively drops users and items with fewer than k interactions until
/// every survivor has at least k. An empty fixpoint yields an empty result.
SubsetResult k_core_filter(const InteractionDataset& dataset, std::size_t k);

/// Keeps `item_count` items drawn uniformly without replacement, then drops
/// users left without interactions.
SubsetResult subsample_items(const InteractionDataset& dataset, std::size_t item_count, Rng& rng);

UserAttributes select_users(const UserAttributes& attributes, std::span<const std::size_t> users);

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

inline constexpr std::size_t kFoldCount = 5;

/// Five independent user splits: 20% test, 20% of the rest validation, the
/// remainder train. Fold f draws from its own stream of `seed`.
std::vector<FoldSplit> make_folds(std::size_t user_count, std::uint64_t seed);

struct HoldoutSplit {
  std::vector<ItemIndex> fold_in;
  std::vector<ItemIndex> holdout;
};

/// Random partition of one user's items: round((1 - ratio) * n) fold-in
/// items, the rest held out. Both outputs are sorted.
HoldoutSplit holdout_split(std::span<const ItemIndex> row, double ratio, Rng& rng);

/// Inverse-frequency weights N / (C * N_c).
std::vector<double> class_weights(std::span<const int> labels, std::size_t n_classes);

/// Target table for the named attributes ("gender" categorical, "age"
/// continuous) over all users. Throws DataError on missing values.
adv::TargetTable make_targets(const UserAttributes& attributes,
                              std::span<const std::string> names);

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double density = 0.0;
  std::vector<std::pair<std::string, std::size_t>> gender_counts;
  double age_mean = 0.0;
  double age_std = 0.0;  // sample standard deviation
  double age_median = 0.0;
};

DatasetStats compute_stats(const InteractionDataset& dataset, const UserAttributes& attributes);

/// Versioned text cache. Values are written as hex floats so a load
/// reproduces every double bit for bit.
void save_cache(const std::filesystem::path& path, const InteractionDataset& dataset,
                const UserAttributes& attributes);
std::pair<InteractionDataset, UserAttributes> load_cache(const std::filesystem::path& path);

/// FNV-1a over the cache serialization.
std::uint64_t dataset_checksum(const InteractionDataset& dataset, const UserAttributes& attributes);

}  // namespace advx::data
