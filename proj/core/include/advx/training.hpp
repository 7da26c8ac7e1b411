#pragma once

// The adversarial removal phase, the attack phase on a frozen encoder, fold
// evaluation and the lambda grid driver.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advx/adversarial.hpp"
#include "advx/data.hpp"
#include "advx/evaluation.hpp"
#include "advx/multvae.hpp"
#include "advx/optim.hpp"

namespace advx::train {

struct Seeds {
  std::uint64_t model = 1;
  std::uint64_t data = 2;
  std::uint64_t adversary = 3;
};

struct TrainConfig {
  std::size_t epochs_adversarial = 200;
  std::size_t epochs_attack = 50;
  std::size_t batch_size = 64;
  double beta_max = 0.4;
  std::size_t anneal_steps = 10000;  // updates until beta reaches beta_max
  double dropout_keep = 0.5;
  std::size_t hidden = 600;
  std::size_t latent = 200;
  ad::Activation activation = ad::Activation::kTanh;
  std::size_t adv_hidden = 128;
  adv::AdversaryInput adversary_input = adv::AdversaryInput::kSampled;
  AdamHyper adam;
  std::optional<AdamHyper> adversary_adam;  // heads during joint training; defaults to adam
  double grad_clip = 0.0;  // global-norm clip per optimizer, 0 disables
  double holdout_ratio = 0.2;
  std::size_t top_k = 10;
  bool select_best = true;  // keep the epoch with the best validation NDCG
  std::vector<std::string> attributes = {"gender", "age"};
  adv::LambdaConfig lambdas;  // missing attributes default to 0
  Seeds seeds;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// "MultVAE", "AdvMultVAE-G", "AdvMultVAE-A" or "AdvXMultVAE" depending on
/// which lambdas are positive.
std::string model_label(const adv::LambdaConfig& lambdas);

/// Everything one (configuration, fold) run consumes.
struct FoldData {
  const data::InteractionDataset* dataset = nullptr;
  data::FoldSplit split;
  adv::TargetTable targets;                 // all users
  std::vector<adv::AttributeSpec> specs;    // class weights from training users
  std::vector<data::HoldoutSplit> validation_holdout;  // aligned with split.validation
  std::vector<data::HoldoutSplit> test_holdout;        // aligned with split.test
};

/// Builds targets, attribute specs (lambdas applied) and fold-in/holdout
/// splits. Holdouts depend only on the data seed and the fold.
FoldData prepare_fold(const data::InteractionDataset& dataset,
                      const data::UserAttributes& attributes, const data::FoldSplit& split,
                      const TrainConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  double beta = 0.0;
  double mult_loss = 0.0;  // mean over batches of nll + beta * kl
  double nll = 0.0;
  double kl = 0.0;
  std::map<std::string, double> adv_loss;  // mean over batches per attribute
  double validation_ndcg = 0.0;
};

struct AdversarialResult {
  model::MultVaeParams params;  // selected model (best validation or final)
  model::MultVaeParams final_params;
  std::vector<adv::AdvHeadParams> heads;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_validation_ndcg = 0.0;
  std::uint64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minimizes the joint objective over shuffled training-user batches.
/// Non-finite values abort with a TrainingError naming epoch and batch.
AdversarialResult train_adversarial_phase(const FoldData& fold, const TrainConfig& config,
                                          const EpochCallback& on_epoch = {});

/// Per-user ranking quality on users with a non-empty holdout.
struct RankingScores {
  std::vector<std::size_t> users;
  std::vector<double> ndcg;
  std::vector<double> recall;
  double mean_ndcg() const;
  double mean_recall() const;
};

RankingScores evaluate_ranking(const model::MultVaeParams& params, ad::Activation activation,
                               const data::InteractionDataset& dataset,
                               std::span<const std::size_t> users,
                               std::span<const data::HoldoutSplit> holdouts, std::size_t k);

/// Latent means of the given users computed from their full rows.
ad::RealArray user_latents(const model::EncoderParams& encoder, ad::Activation activation,
                           const data::InteractionDataset& dataset,
                           std::span<const std::size_t> users);

struct AttributeAttack {
  std::vector<double> predictions;  // one per test user
  std::vector<double> targets;
  double bacc = 0.0;  // categorical
  double mae = 0.0;   // continuous
  std::vector<bool> correct;          // categorical, per user
  std::vector<double> abs_error;      // continuous, per user
};

struct AttackResult {
  adv::AttackerSet attackers;
  std::map<std::string, AttributeAttack> attributes;
  std::vector<std::size_t> test_users;
  std::vector<std::vector<double>> epoch_losses;  // [epoch][attribute]
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;
};

/// Trains fresh attackers on training users' latents of the frozen encoder
/// and scores them on test users. Throws ContractError if the encoder
/// checksum changes.
AttackResult train_attack_phase(adv::FrozenEncoder& encoder, const FoldData& fold,
                                const TrainConfig& config);

struct FoldRun {
  AdversarialResult adversarial;
  AttackResult attack;
  RankingScores ranking;
  eval::FoldMetrics metrics;
};

FoldRun run_fold(const FoldData& fold, const TrainConfig& config,
                 const EpochCallback& on_epoch = {});

/// Cartesian product in the given attribute order (last attribute varies fastest).
std::vector<adv::LambdaConfig> expand_grid(
    const std::vector<std::pair<std::string, std::vector<double>>>& values);

struct GridRow {
  std::size_t combination = 0;
  adv::LambdaConfig lambdas;
  std::string model;
  std::size_t fold = 0;
  bool ok = false;
  std::string error;
  eval::FoldMetrics metrics;
  RankingScores ranking;
  std::map<std::string, std::vector<bool>> attack_correct;
  std::map<std::string, std::vector<double>> attack_abs_error;
};

using RowCallback = std::function<void(const GridRow&, const FoldRun*)>;

/// Runs every (combination, fold) unit on up to `workers` threads. Rows come
/// back ordered by (combination, fold) whatever the execution order. A
/// failing unit is recorded with ok = false and the grid continues.
/// `on_row` is called under a mutex as units finish.
std::vector<GridRow> grid_search(const data::InteractionDataset& dataset,
                                 const data::UserAttributes& attributes,
                                 std::span<const data::FoldSplit> folds,
                                 std::span<const adv::LambdaConfig> combinations,
                                 const TrainConfig& config, std::size_t workers,
                                 const RowCallback& on_row = {});

}  // namespace advx::train
