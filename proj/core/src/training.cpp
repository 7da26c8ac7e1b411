#include "advx/training.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "advx/errors.hpp"

namespace advx::train {

namespace {

constexpr std::size_t kEvalChunk = 128;

double lambda_of(const adv::LambdaConfig& lambdas, const std::string& name) {
  auto it = lambdas.find(name);
  return it == lambdas.end() ? 0.0 : it->second;
}

ad::RealArray gather_rows(const ad::RealArray& source, std::span<const std::size_t> rows) {
  ad::RealArray out(rows.size(), source.cols());
  const std::size_t cols = source.cols();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(source.data() + rows[r] * cols, cols, out.data() + r * cols);
  }
  return out;
}

std::vector<ad::RealArray> collect(const ad::Gradients& grads, const model::DenseVars& v,
                                   std::vector<ad::RealArray> out = {}) {
  out.push_back(grads[v.weights]);
  out.push_back(grads[v.bias]);
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs_adversarial == 0 || epochs_attack == 0) throw ConfigError("epoch counts must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(beta_max >= 0.0) || !std::isfinite(beta_max)) throw ConfigError("beta_max must be >= 0");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ConfigError("dropout_keep must lie in (0, 1]");
  }
  if (hidden == 0 || latent == 0 || adv_hidden == 0) throw ConfigError("layer widths must be positive");
  for (const AdamHyper& h : {adam, adversary_adam.value_or(adam)}) {
    if (!(h.lr > 0.0) || !(h.beta1 >= 0.0 && h.beta1 < 1.0) || !(h.beta2 >= 0.0 && h.beta2 < 1.0) ||
        !(h.epsilon > 0.0)) {
      throw ConfigError("invalid Adam hyperparameters");
    }
  }
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (!(holdout_ratio > 0.0 && holdout_ratio < 1.0)) {
    throw ConfigError("holdout_ratio must lie in (0, 1)");
  }
  if (top_k == 0) throw ConfigError("top_k must be at least 1");
  std::set<std::string> names(attributes.begin(), attributes.end());
  if (names.size() != attributes.size()) throw ConfigError("duplicate attribute names");
  for (const auto& [name, value] : lambdas) {
    if (!names.count(name)) throw ConfigError("lambda given for untrained attribute '" + name + "'");
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw ConfigError("lambda for '" + name + "' must be finite and >= 0");
    }
  }
}

std::string model_label(const adv::LambdaConfig& lambdas) {
  std::vector<std::string> active;
  for (const auto& [name, value] : lambdas) {
    if (value > 0.0) active.push_back(name);
  }
  if (active.empty()) return "MultVAE";
  if (active.size() > 1) return "AdvXMultVAE";
  const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(active[0].front())));
  return std::string("AdvMultVAE-") + letter;
}

FoldData prepare_fold(const data::InteractionDataset& dataset,
                      const data::UserAttributes& attributes, const data::FoldSplit& split,
                      const TrainConfig& config) {
  if (attributes.size() != dataset.n_users) {
    throw DimensionError("attribute table has " + std::to_string(attributes.size()) +
                         " users, dataset has " + std::to_string(dataset.n_users));
  }
  FoldData fold;
  fold.dataset = &dataset;
  fold.split = split;
  fold.targets = data::make_targets(attributes, config.attributes);
  for (const auto& name : config.attributes) {
    const adv::AttributeColumn& column = fold.targets.at(name);
    const double lambda = lambda_of(config.lambdas, name);
    if (column.labels.empty()) {
      fold.specs.push_back(adv::AttributeSpec::continuous(name, lambda));
      continue;
    }
    std::vector<int> train_labels;
    for (std::size_t u : split.train) train_labels.push_back(column.labels[u]);
    fold.specs.push_back(adv::AttributeSpec::categorical(
        name, data::class_weights(train_labels, attributes.gender_tokens.size()), lambda));
  }
  Rng validation_rng = make_stream(config.seeds.data, {kDataStream, 3000 + split.fold_index});
  for (std::size_t u : split.validation) {
    fold.validation_holdout.push_back(
        data::holdout_split(dataset.rows[u], config.holdout_ratio, validation_rng));
  }
  Rng test_rng = make_stream(config.seeds.data, {kDataStream, 4000 + split.fold_index});
  for (std::size_t u : split.test) {
    fold.test_holdout.push_back(data::holdout_split(dataset.rows[u], config.holdout_ratio, test_rng));
  }
  return fold;
}

double RankingScores::mean_ndcg() const { return mean(ndcg); }
double RankingScores::mean_recall() const { return mean(recall); }

RankingScores evaluate_ranking(const model::MultVaeParams& params, ad::Activation activation,
                               const data::InteractionDataset& dataset,
                               std::span<const std::size_t> users,
                               std::span<const data::HoldoutSplit> holdouts, std::size_t k) {
  if (users.size() != holdouts.size()) {
    throw DimensionError("evaluate_ranking: " + std::to_string(users.size()) + " users, " +
                         std::to_string(holdouts.size()) + " holdouts");
  }
  RankingScores out;
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (!holdouts[i].holdout.empty()) picked.push_back(i);
  }
  for (std::size_t start = 0; start < picked.size(); start += kEvalChunk) {
    const std::size_t end = std::min(picked.size(), start + kEvalChunk);
    std::vector<std::vector<data::ItemIndex>> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(holdouts[picked[i]].fold_in);
    const ad::RealArray scores =
        model::score_items(params, data::to_dense(rows, dataset.n_items), activation);
    for (std::size_t i = start; i < end; ++i) {
      const data::HoldoutSplit& h = holdouts[picked[i]];
      std::span<const double> row(scores.data() + (i - start) * dataset.n_items, dataset.n_items);
      const auto ranked = eval::top_k(row, h.fold_in, k);
      out.users.push_back(users[picked[i]]);
      out.ndcg.push_back(*eval::ndcg_at_k(ranked, h.holdout, k, h.fold_in));
      out.recall.push_back(*eval::recall_at_k(ranked, h.holdout, k, h.fold_in));
    }
  }
  return out;
}

ad::RealArray user_latents(const model::EncoderParams& encoder, ad::Activation activation,
                           const data::InteractionDataset& dataset,
                           std::span<const std::size_t> users) {
  const std::size_t latent = encoder.mu.bias.size();
  ad::RealArray out(users.size(), latent);
  for (std::size_t start = 0; start < users.size(); start += kEvalChunk) {
    const std::size_t end = std::min(users.size(), start + kEvalChunk);
    const ad::RealArray mu =
        model::encode_mean(encoder, dataset.dense_rows(users.subspan(start, end - start)), activation);
    std::copy_n(mu.data(), mu.size(), out.data() + start * latent);
  }
  return out;
}

AdversarialResult train_adversarial_phase(const FoldData& fold, const TrainConfig& config,
                                          const EpochCallback& on_epoch) {
  config.validate();
  if (fold.dataset == nullptr) throw ContractError("fold has no dataset");
  if (fold.split.train.empty()) throw ConfigError("fold has no training users");
  const data::InteractionDataset& ds = *fold.dataset;
  const std::size_t f = fold.split.fold_index;
  Rng model_rng = make_stream(config.seeds.model, {kModelStream, f});
  Rng data_rng = make_stream(config.seeds.data, {kDataStream, 2000 + f});
  Rng adv_rng = make_stream(config.seeds.adversary, {kAdversaryStream, f});

  AdversarialResult result;
  const model::ModelDims dims{ds.n_items, config.hidden, config.latent, config.activation};
  model::MultVaeParams params = model::init_multvae(dims, model_rng);
  for (const auto& spec : fold.specs) {
    result.heads.push_back(adv::init_head(config.latent, config.adv_hidden, spec, adv_rng));
  }

  ParamGroup model_group{model::named_arrays(params), false};
  AdamState model_state = make_adam_state(model_group, config.adam);
  std::vector<ParamGroup> head_groups;
  std::vector<AdamState> head_states;
  for (std::size_t k = 0; k < fold.specs.size(); ++k) {
    head_groups.push_back({adv::named_arrays(result.heads[k], "adversary." + fold.specs[k].name), false});
    head_states.push_back(make_adam_state(head_groups.back(), config.adversary_adam.value_or(config.adam)));
  }

  adv::ObjectiveOptions options;
  options.activation = config.activation;
  options.dropout_keep = config.dropout_keep;
  options.adversary_input = config.adversary_input;

  std::vector<std::size_t> order = fold.split.train;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= config.epochs_adversarial; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    EpochLog log;
    log.epoch = epoch;
    std::vector<double> mult, nll, kl;
    std::vector<std::vector<double>> adv_losses(fold.specs.size());
    std::size_t batch = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> users(order.data() + start, end - start);
      try {
        options.beta = config.anneal_steps == 0
                           ? config.beta_max
                           : config.beta_max * std::min(1.0, static_cast<double>(result.steps) /
                                                                 static_cast<double>(config.anneal_steps));
        const ad::RealArray x = ds.dense_rows(users);
        const adv::TargetTable targets = adv::select_rows(fold.targets, users);
        ad::Tape tape;
        const model::EncoderVars enc = model::bind(tape, params.encoder);
        const model::DecoderVars dec = model::bind(tape, params.decoder);
        std::vector<adv::HeadVars> head_vars;
        for (const auto& h : result.heads) head_vars.push_back(adv::bind(tape, h));
        const adv::ObjectiveForward obj = adv::total_objective(
            tape, x, targets, enc, dec, head_vars, fold.specs, options, model_rng);
        const ad::Gradients grads = tape.backward(obj.total);

        auto model_grads = collect(grads, enc.hidden);
        model_grads = collect(grads, enc.mu, std::move(model_grads));
        model_grads = collect(grads, enc.logsigma, std::move(model_grads));
        model_grads = collect(grads, dec.hidden, std::move(model_grads));
        model_grads = collect(grads, dec.output, std::move(model_grads));
        if (config.grad_clip > 0.0) clip_by_global_norm(model_grads, config.grad_clip);
        adam_step(model_group, model_grads, model_state, batch);
        for (std::size_t k = 0; k < head_vars.size(); ++k) {
          auto head_grads = collect(grads, head_vars[k].hidden);
          head_grads = collect(grads, head_vars[k].output, std::move(head_grads));
          if (config.grad_clip > 0.0) clip_by_global_norm(head_grads, config.grad_clip);
          adam_step(head_groups[k], head_grads, head_states[k], batch);
          adv_losses[k].push_back(obj.adv.per_attribute[k].value().item());
        }
        mult.push_back(obj.mult.loss.value().item());
        nll.push_back(obj.mult.nll.value().item());
        kl.push_back(obj.mult.kl.value().item());
        ++result.steps;
      } catch (const TrainingError& e) {
        throw TrainingError("diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch) + ": " + e.what());
      }
      log.beta = options.beta;
    }
    log.mult_loss = mean(mult);
    log.nll = mean(nll);
    log.kl = mean(kl);
    for (std::size_t k = 0; k < fold.specs.size(); ++k) {
      log.adv_loss[fold.specs[k].name] = mean(adv_losses[k]);
    }
    const RankingScores val = evaluate_ranking(params, config.activation, ds, fold.split.validation,
                                               fold.validation_holdout, config.top_k);
    log.validation_ndcg = val.mean_ndcg();
    if (!have_best || log.validation_ndcg > result.best_validation_ndcg) {
      have_best = true;
      result.best_epoch = epoch;
      result.best_validation_ndcg = log.validation_ndcg;
      if (config.select_best) result.params = params;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.final_params = params;
  if (!config.select_best) {
    result.params = std::move(params);
    result.best_epoch = config.epochs_adversarial;
    result.best_validation_ndcg = result.log.back().validation_ndcg;
  }
  return result;
}

AttackResult train_attack_phase(adv::FrozenEncoder& encoder, const FoldData& fold,
                                const TrainConfig& config) {
  config.validate();
  if (fold.dataset == nullptr) throw ContractError("fold has no dataset");
  const data::InteractionDataset& ds = *fold.dataset;
  AttackResult result;
  result.checksum_before = encoder.checksum();
  result.test_users = fold.split.test;

  const ad::RealArray train_latents =
      user_latents(encoder.params(), encoder.activation(), ds, fold.split.train);
  const ad::RealArray test_latents =
      user_latents(encoder.params(), encoder.activation(), ds, fold.split.test);
  const std::size_t latent = encoder.params().mu.bias.size();

  std::vector<adv::AttributeSpec> specs = fold.specs;
  for (auto& s : specs) s.lambda = 0.0;
  Rng rng = make_stream(config.seeds.adversary, {kAttackerStream, fold.split.fold_index});
  result.attackers = adv::make_attackers(specs, latent, config.adv_hidden, config.adam, rng);

  const adv::TargetTable train_targets = adv::select_rows(fold.targets, fold.split.train);
  std::vector<std::size_t> order(fold.split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= config.epochs_attack; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> sums(specs.size(), 0.0);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batches) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      const auto losses =
          adv::attacker_step_on_latents(gather_rows(train_latents, rows),
                                        adv::select_rows(train_targets, rows), result.attackers,
                                        batches);
      for (std::size_t k = 0; k < losses.size(); ++k) sums[k] += losses[k];
    }
    for (auto& s : sums) s /= static_cast<double>(std::max<std::size_t>(batches, 1));
    result.epoch_losses.push_back(std::move(sums));
  }

  const adv::TargetTable test_targets = adv::select_rows(fold.targets, fold.split.test);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const adv::AttributeSpec& spec = specs[k];
    const adv::AttributeColumn& column = test_targets.at(spec.name);
    AttributeAttack attack;
    attack.predictions =
        adv::predict(result.attackers.heads[k], spec, test_latents, result.attackers.activation);
    if (spec.is_categorical()) {
      std::vector<int> predicted;
      for (std::size_t i = 0; i < attack.predictions.size(); ++i) {
        predicted.push_back(static_cast<int>(attack.predictions[i]));
        attack.targets.push_back(column.labels[i]);
        attack.correct.push_back(predicted.back() == column.labels[i]);
      }
      attack.bacc = eval::balanced_accuracy(predicted, column.labels, spec.n_classes);
    } else {
      attack.targets = column.values;
      for (std::size_t i = 0; i < attack.predictions.size(); ++i) {
        attack.abs_error.push_back(std::abs(attack.predictions[i] - column.values[i]));
      }
      attack.mae = eval::mae(attack.predictions, column.values);
    }
    result.attributes.emplace(spec.name, std::move(attack));
  }

  result.checksum_after = encoder.checksum();
  if (result.checksum_after != result.checksum_before) {
    throw ContractError("frozen encoder changed during the attack phase");
  }
  return result;
}

FoldRun run_fold(const FoldData& fold, const TrainConfig& config, const EpochCallback& on_epoch) {
  FoldRun run;
  run.adversarial = train_adversarial_phase(fold, config, on_epoch);
  adv::FrozenEncoder encoder(run.adversarial.params.encoder, config.activation);
  run.attack = train_attack_phase(encoder, fold, config);
  run.ranking = evaluate_ranking(run.adversarial.params, config.activation, *fold.dataset,
                                 fold.split.test, fold.test_holdout, config.top_k);
  run.metrics.fold = fold.split.fold_index;
  run.metrics.ndcg = run.ranking.mean_ndcg();
  run.metrics.recall = run.ranking.mean_recall();
  for (const auto& spec : fold.specs) {
    const AttributeAttack& a = run.attack.attributes.at(spec.name);
    if (spec.is_categorical()) {
      run.metrics.bacc[spec.name] = a.bacc;
    } else {
      run.metrics.mae[spec.name] = a.mae;
    }
  }
  return run;
}

std::vector<adv::LambdaConfig> expand_grid(
    const std::vector<std::pair<std::string, std::vector<double>>>& values) {
  std::vector<adv::LambdaConfig> out{adv::LambdaConfig{}};
  for (const auto& [name, options] : values) {
    if (options.empty()) throw ConfigError("no lambda values for attribute '" + name + "'");
    std::vector<adv::LambdaConfig> next;
    for (const auto& partial : out) {
      for (double v : options) {
        adv::LambdaConfig c = partial;
        c[name] = v;
        next.push_back(std::move(c));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::vector<GridRow> grid_search(const data::InteractionDataset& dataset,
                                 const data::UserAttributes& attributes,
                                 std::span<const data::FoldSplit> folds,
                                 std::span<const adv::LambdaConfig> combinations,
                                 const TrainConfig& config, std::size_t workers,
                                 const RowCallback& on_row) {
  if (combinations.empty()) throw ConfigError("grid has no combinations");
  if (folds.empty()) throw ConfigError("grid has no folds");
  const std::size_t units = combinations.size() * folds.size();
  std::vector<GridRow> rows(units);
  std::atomic<std::size_t> next{0};
  std::mutex mutex;

  auto work = [&] {
    for (std::size_t unit = next++; unit < units; unit = next++) {
      GridRow& row = rows[unit];
      row.combination = unit / folds.size();
      const data::FoldSplit& split = folds[unit % folds.size()];
      row.lambdas = combinations[row.combination];
      row.model = model_label(row.lambdas);
      row.fold = split.fold_index;
      std::optional<FoldRun> run;
      try {
        TrainConfig cfg = config;
        cfg.lambdas = row.lambdas;
        const FoldData fold = prepare_fold(dataset, attributes, split, cfg);
        run = run_fold(fold, cfg);
        row.metrics = run->metrics;
        row.ranking = run->ranking;
        for (const auto& [name, a] : run->attack.attributes) {
          if (!a.correct.empty()) row.attack_correct[name] = a.correct;
          if (!a.abs_error.empty()) row.attack_abs_error[name] = a.abs_error;
        }
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
        run.reset();
      }
      if (on_row) {
        std::lock_guard lock(mutex);
        on_row(row, run ? &*run : nullptr);
      }
    }
  };

  workers = std::clamp<std::size_t>(workers, 1, units);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return rows;
}

}  // namespace advx::train
