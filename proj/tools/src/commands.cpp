#include "advx/cli/commands.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "advx/checkpoint.hpp"
#include "advx/errors.hpp"
#include "advx/evaluation.hpp"
#include "advx/io.hpp"
#include "advx/significance.hpp"

namespace advx::cli {

namespace fs = std::filesystem;

namespace {

std::ostream& log(const CommandContext& ctx) {
  static std::ostringstream sink;
  if (ctx.log) return *ctx.log;
  sink.str({});
  return sink;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

fs::path cache_path(const CommandContext& ctx) {
  const std::string configured = ctx.config.get("data.cache");
  return configured.empty() ? ctx.out / "dataset.cache" : fs::path(configured);
}

fs::path fold_dir(const fs::path& out, std::size_t fold) {
  return out / ("fold_" + std::to_string(fold));
}

struct Loaded {
  data::InteractionDataset dataset;
  data::UserAttributes attributes;
  std::uint64_t checksum = 0;
  std::vector<data::FoldSplit> folds;
};

Loaded load_dataset(const CommandContext& ctx) {
  const fs::path path = cache_path(ctx);
  if (!fs::exists(path)) {
    throw DataError("dataset cache not found: " + path.string() + " (run preprocess first)");
  }
  Loaded l;
  std::tie(l.dataset, l.attributes) = data::load_cache(path);
  l.checksum = data::dataset_checksum(l.dataset, l.attributes);
  l.folds = data::make_folds(l.dataset.n_users,
                             static_cast<std::uint64_t>(ctx.config.integer("seed.data")));
  return l;
}

std::vector<std::size_t> selected_folds(const RunConfig& config) {
  std::vector<std::size_t> out;
  for (auto f : config.integers("eval.folds")) out.push_back(static_cast<std::size_t>(f));
  return out;
}

void write_manifest(const CommandContext& ctx, const fs::path& path, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& facts) {
  std::string text = "# advx " + std::string(kVersion) + " " + command + "\n";
  if (!ctx.command_line.empty()) text += "# command line: " + ctx.command_line + "\n";
  for (const auto& [k, v] : facts) text += "# " + k + ": " + v + "\n";
  text += ctx.config.render();
  io::write_file_atomic(path, text);
}

// Keys whose values determine the fold data a checkpoint was trained on.
const std::vector<std::string> kCompatKeys = {"seed.data", "eval.holdout_ratio",
                                              "attributes.names", "model.activation"};

ckpt::Checkpoint make_checkpoint(const RunConfig& config, std::uint64_t dataset_checksum,
                                 std::size_t fold) {
  ckpt::Checkpoint c;
  std::istringstream lines(config.render());
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    c.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  c.config["meta.dataset_checksum"] = hex64(dataset_checksum);
  c.config["meta.fold"] = std::to_string(fold);
  c.config["meta.version"] = kVersion;
  return c;
}

void check_compatible(const ckpt::Checkpoint& c, const RunConfig& config,
                      std::uint64_t dataset_checksum, const fs::path& path) {
  auto it = c.config.find("meta.dataset_checksum");
  if (it == c.config.end() || it->second != hex64(dataset_checksum)) {
    throw DataError(path.string() + ": checkpoint was produced from a different dataset");
  }
  for (const auto& key : kCompatKeys) {
    auto kv = c.config.find(key);
    if (kv == c.config.end() || kv->second != config.get(key)) {
      throw ConfigError(path.string() + ": checkpoint has " + key + "=" +
                        (kv == c.config.end() ? "<missing>" : kv->second) + " but config has " +
                        config.get(key));
    }
  }
}

/// Config for work on an existing checkpoint: lambdas come from the checkpoint.
RunConfig config_from_checkpoint(const RunConfig& config, const ckpt::Checkpoint& c) {
  RunConfig out = config;
  for (const auto& name : config.attribute_names()) {
    const std::string key = kLambdaPrefix + name;
    if (auto it = c.config.find(key); it != c.config.end()) out.set(key, it->second, "checkpoint");
  }
  return out;
}

ckpt::Checkpoint load_checkpoint(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string() + " (" + hint + ")");
  return ckpt::load(path);
}

model::MultVaeParams model_from(const ckpt::Checkpoint& c, const data::InteractionDataset& ds,
                                const fs::path& path) {
  model::MultVaeParams p = ckpt::get_model(c);
  const std::size_t items = p.encoder.hidden.weights.rows();
  if (items != ds.n_items || p.decoder.output.weights.cols() != ds.n_items) {
    throw DimensionError(path.string() + ": checkpoint expects " + std::to_string(items) +
                         " items, dataset has " + std::to_string(ds.n_items));
  }
  return p;
}

std::string attribute_columns_header(const std::vector<adv::AttributeSpec>& specs) {
  std::string h;
  for (const auto& s : specs) h += (s.is_categorical() ? ",bacc_" : ",mae_") + s.name;
  return h;
}

std::string metrics_header(const RunConfig& config, const std::vector<adv::AttributeSpec>& specs) {
  std::string h = "dataset,model";
  for (const auto& name : config.attribute_names()) h += ",lambda_" + name;
  const std::string k = std::to_string(config.count("eval.top_k"));
  h += ",fold,ndcg@" + k + ",recall@" + k + attribute_columns_header(specs);
  return h;
}

std::string metrics_row(const RunConfig& config, const adv::LambdaConfig& lambdas,
                        const std::vector<adv::AttributeSpec>& specs, const eval::FoldMetrics& m) {
  std::string r = config.get("data.name") + "," + train::model_label(lambdas);
  for (const auto& name : config.attribute_names()) {
    auto it = lambdas.find(name);
    r += "," + format_number(it == lambdas.end() ? 0.0 : it->second);
  }
  r += "," + std::to_string(m.fold) + "," + fixed(eval::to_percent(m.ndcg), 4) + "," +
       fixed(eval::to_percent(m.recall), 4);
  for (const auto& s : specs) {
    const double v = s.is_categorical() ? m.bacc.at(s.name) : m.mae.at(s.name);
    r += "," + fixed(eval::to_percent(v), 4);
  }
  return r;
}

std::string summary_rows(const eval::MetricsReport& report) {
  std::string out = "metric,mean,std\n";
  out += "ndcg," + fixed(report.ndcg.mean, 4) + "," + fixed(report.ndcg.std, 4) + "\n";
  out += "recall," + fixed(report.recall.mean, 4) + "," + fixed(report.recall.std, 4) + "\n";
  for (const auto& [name, ms] : report.bacc) {
    out += "bacc_" + name + "," + fixed(ms.mean, 4) + "," + fixed(ms.std, 4) + "\n";
  }
  for (const auto& [name, ms] : report.mae) {
    out += "mae_" + name + "," + fixed(ms.mean, 4) + "," + fixed(ms.std, 4) + "\n";
  }
  return out;
}

std::string epochs_csv(const train::AdversarialResult& r, const std::vector<adv::AttributeSpec>& specs,
                       std::size_t top_k) {
  std::string out = "epoch,beta,mult_loss,nll,kl";
  for (const auto& s : specs) out += ",adv_loss_" + s.name;
  out += ",val_ndcg@" + std::to_string(top_k) + "\n";
  for (const auto& e : r.log) {
    out += std::to_string(e.epoch) + "," + format_number(e.beta) + "," + format_number(e.mult_loss) +
           "," + format_number(e.nll) + "," + format_number(e.kl);
    for (const auto& s : specs) out += "," + format_number(e.adv_loss.at(s.name));
    out += "," + format_number(e.validation_ndcg) + "\n";
  }
  return out;
}

std::string tsv_stats(const data::DatasetStats& s) {
  std::string out = "statistic\tvalue\n";
  out += "users\t" + std::to_string(s.users) + "\n";
  out += "items\t" + std::to_string(s.items) + "\n";
  out += "interactions\t" + std::to_string(s.interactions) + "\n";
  out += "density\t" + fixed(s.density, 6) + "\n";
  for (const auto& [token, n] : s.gender_counts) {
    out += "gender_" + token + "\t" + std::to_string(n) + "\n";
  }
  out += "age_mean\t" + fixed(s.age_mean, 4) + "\n";
  out += "age_std\t" + fixed(s.age_std, 4) + "\n";
  out += "age_median\t" + fixed(s.age_median, 4) + "\n";
  return out;
}

void attach_attack(ckpt::Checkpoint& c, const train::AttackResult& attack) {
  for (std::size_t k = 0; k < attack.attackers.specs.size(); ++k) {
    ckpt::put_head(c, "attacker." + attack.attackers.specs[k].name, attack.attackers.heads[k]);
  }
}

struct AttackScores {
  std::map<std::string, std::vector<double>> predictions;  // per attribute, per test user
  eval::FoldMetrics metrics;
};

AttackScores score_attackers(const ckpt::Checkpoint& attackers, const train::FoldData& fold,
                             const model::EncoderParams& encoder, ad::Activation activation) {
  AttackScores out;
  const ad::RealArray latents =
      train::user_latents(encoder, activation, *fold.dataset, fold.split.test);
  const adv::TargetTable targets = adv::select_rows(fold.targets, fold.split.test);
  for (const auto& spec : fold.specs) {
    const adv::AdvHeadParams head = ckpt::get_head(attackers, "attacker." + spec.name);
    if (head.hidden.weights.rows() != latents.cols()) {
      throw DimensionError("attacker for '" + spec.name + "' expects latent width " +
                           std::to_string(head.hidden.weights.rows()));
    }
    auto pred = adv::predict(head, spec, latents);
    const adv::AttributeColumn& column = targets.at(spec.name);
    if (spec.is_categorical()) {
      std::vector<int> classes(pred.begin(), pred.end());
      out.metrics.bacc[spec.name] = eval::balanced_accuracy(classes, column.labels, spec.n_classes);
    } else {
      out.metrics.mae[spec.name] = eval::mae(pred, column.values);
    }
    out.predictions[spec.name] = std::move(pred);
  }
  return out;
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, result.ptr);
}

std::string combination_dir(const adv::LambdaConfig& lambdas, const std::vector<std::string>& order) {
  std::string out;
  for (const auto& name : order) {
    auto it = lambdas.find(name);
    if (!out.empty()) out += "_";
    out += name + "=" + format_number(it == lambdas.end() ? 0.0 : it->second);
  }
  return out.empty() ? "baseline" : out;
}

int cmd_preprocess(const CommandContext& ctx) {
  const RunConfig& config = ctx.config;
  const std::string format = config.get("data.format");
  const double age_cap = config.real("data.age_cap");
  data::InteractionDataset dataset;
  data::UserAttributes attributes;
  if (format == "synthetic") {
    auto syn = data::make_synthetic(config.synthetic_config(),
                                    static_cast<std::uint64_t>(config.integer("seed.data")));
    dataset = std::move(syn.dataset);
    attributes = std::move(syn.attributes);
    log(ctx) << "generated synthetic dataset\n";
  } else {
    fs::path interactions = config.get("data.interactions");
    fs::path demographics = config.get("data.demographics");
    if (interactions.empty() || demographics.empty()) {
      throw ConfigError("preprocess needs data.interactions and data.demographics");
    }
    if (!fs::exists(demographics)) {
      throw DataError("demographics file not found: " + demographics.string());
    }
    if (!fs::exists(interactions)) {
      throw DataError("interactions file not found: " + interactions.string());
    }
    if (format == "movielens") {
      const fs::path converted = ctx.out / "converted";
      fs::create_directories(converted);
      data::convert_movielens(interactions, demographics, converted / "interactions.tsv",
                              converted / "demographics.tsv");
      interactions = converted / "interactions.tsv";
      demographics = converted / "demographics.tsv";
    }
    data::LoadedData loaded = data::load_interactions(interactions, demographics, age_cap);
    log(ctx) << "read " << loaded.report.interaction_rows << " interaction rows; dropped "
             << loaded.report.unknown_user_rows << " rows of users without demographics, "
             << loaded.report.duplicate_rows << " duplicates; "
             << loaded.report.users_missing_attributes << " users lack gender or age\n";
    dataset = std::move(loaded.dataset);
    attributes = std::move(loaded.attributes);
  }

  if (const std::size_t n = config.count("data.subsample_items"); n > 0) {
    Rng rng = make_stream(static_cast<std::uint64_t>(config.integer("seed.data")), {kDataStream, 7});
    data::SubsetResult sub = data::subsample_items(dataset, n, rng);
    attributes = data::select_users(attributes, sub.kept_users);
    dataset = std::move(sub.dataset);
  }
  if (const std::size_t k = config.count("data.k_core"); k > 0) {
    data::SubsetResult sub = data::k_core_filter(dataset, k);
    if (sub.empty()) throw DataError(std::to_string(k) + "-core filtering left an empty dataset");
    attributes = data::select_users(attributes, sub.kept_users);
    dataset = std::move(sub.dataset);
  }

  fs::create_directories(ctx.out);
  const fs::path cache = cache_path(ctx);
  if (cache.has_parent_path()) fs::create_directories(cache.parent_path());
  data::save_cache(cache, dataset, attributes);
  const data::DatasetStats stats = data::compute_stats(dataset, attributes);
  io::write_file_atomic(ctx.out / "stats.tsv", tsv_stats(stats));
  const std::uint64_t checksum = data::dataset_checksum(dataset, attributes);
  std::string tokens;
  for (std::size_t c = 0; c < attributes.gender_tokens.size(); ++c) {
    tokens += (c ? "," : "") + attributes.gender_tokens[c] + "=" + std::to_string(c);
  }
  write_manifest(ctx, ctx.out / "preprocess_manifest.cfg", "preprocess",
                 {{"dataset_checksum", hex64(checksum)}, {"gender_classes", tokens}});
  log(ctx) << "users " << stats.users << ", items " << stats.items << ", interactions "
           << stats.interactions << ", density " << fixed(stats.density, 4) << "\n";
  for (const auto& [token, n] : stats.gender_counts) log(ctx) << "gender " << token << ": " << n << "\n";
  log(ctx) << "age mean/std/median " << fixed(stats.age_mean, 1) << "/" << fixed(stats.age_std, 1)
           << "/" << fixed(stats.age_median, 1) << "\n";
  log(ctx) << "cache " << cache.string() << " checksum " << hex64(checksum) << "\n";
  return 0;
}

int cmd_train(const CommandContext& ctx) {
  const RunConfig& config = ctx.config;
  const Loaded data = load_dataset(ctx);
  const train::TrainConfig tc = config.train_config();
  const std::string label = train::model_label(tc.lambdas);
  fs::create_directories(ctx.out);
  for (std::size_t f : selected_folds(config)) {
    const train::FoldData fold = train::prepare_fold(data.dataset, data.attributes, data.folds[f], tc);
    log(ctx) << label << " fold " << f << ": training " << tc.epochs_adversarial << " epochs on "
             << fold.split.train.size() << " users\n";
    const train::AdversarialResult result =
        train::train_adversarial_phase(fold, tc, [&](const train::EpochLog& e) {
          if (e.epoch % 10 == 0 || e.epoch == tc.epochs_adversarial) {
            log(ctx) << "  epoch " << e.epoch << " loss " << fixed(e.mult_loss, 4);
            for (const auto& [name, v] : e.adv_loss) log(ctx) << " adv_" << name << " " << fixed(v, 4);
            log(ctx) << " val_ndcg " << fixed(e.validation_ndcg, 4) << "\n";
          }
        });
    const fs::path dir = fold_dir(ctx.out, f);
    fs::create_directories(dir);
    ckpt::Checkpoint c = make_checkpoint(config, data.checksum, f);
    c.config["meta.model"] = label;
    c.config["meta.best_epoch"] = std::to_string(result.best_epoch);
    ckpt::put_model(c, result.params);
    for (std::size_t k = 0; k < fold.specs.size(); ++k) {
      ckpt::put_head(c, "adversary." + fold.specs[k].name, result.heads[k]);
    }
    ckpt::save(dir / "model.ckpt", c);
    io::write_file_atomic(dir / "epochs.csv", epochs_csv(result, fold.specs, tc.top_k));
    log(ctx) << "  selected epoch " << result.best_epoch << " (validation NDCG "
             << fixed(result.best_validation_ndcg, 4) << ")\n";
  }
  write_manifest(ctx, ctx.out / "train_manifest.cfg", "train",
                 {{"dataset_checksum", hex64(data.checksum)}, {"model", label}});
  return 0;
}

int cmd_attack(const CommandContext& ctx) {
  const Loaded data = load_dataset(ctx);
  for (std::size_t f : selected_folds(ctx.config)) {
    const fs::path dir = fold_dir(ctx.out, f);
    const ckpt::Checkpoint model_ckpt = load_checkpoint(dir / "model.ckpt", "run train first");
    check_compatible(model_ckpt, ctx.config, data.checksum, dir / "model.ckpt");
    const RunConfig config = config_from_checkpoint(ctx.config, model_ckpt);
    const train::TrainConfig tc = config.train_config();
    const train::FoldData fold = train::prepare_fold(data.dataset, data.attributes, data.folds[f], tc);
    adv::FrozenEncoder encoder(model_from(model_ckpt, data.dataset, dir / "model.ckpt").encoder,
                               tc.activation);
    const train::AttackResult attack = train::train_attack_phase(encoder, fold, tc);
    ckpt::Checkpoint c = make_checkpoint(config, data.checksum, f);
    c.config["meta.encoder_checksum"] = hex64(attack.checksum_after);
    attach_attack(c, attack);
    ckpt::save(dir / "attacker.ckpt", c);
    std::string csv = "epoch";
    for (const auto& s : attack.attackers.specs) csv += ",loss_" + s.name;
    csv += "\n";
    for (std::size_t e = 0; e < attack.epoch_losses.size(); ++e) {
      csv += std::to_string(e + 1);
      for (double v : attack.epoch_losses[e]) csv += "," + format_number(v);
      csv += "\n";
    }
    io::write_file_atomic(dir / "attack.csv", csv);
    log(ctx) << "fold " << f << " attack:";
    for (const auto& [name, a] : attack.attributes) {
      if (!a.correct.empty()) log(ctx) << " bacc_" << name << " " << fixed(a.bacc, 4);
      if (!a.abs_error.empty()) log(ctx) << " mae_" << name << " " << fixed(a.mae, 4);
    }
    log(ctx) << "\n";
  }
  write_manifest(ctx, ctx.out / "attack_manifest.cfg", "attack",
                 {{"dataset_checksum", hex64(data.checksum)}});
  return 0;
}

int cmd_eval(const CommandContext& ctx) {
  const Loaded data = load_dataset(ctx);
  std::vector<eval::FoldMetrics> folds;
  std::string csv;
  std::string label;
  for (std::size_t f : selected_folds(ctx.config)) {
    const fs::path dir = fold_dir(ctx.out, f);
    const ckpt::Checkpoint model_ckpt = load_checkpoint(dir / "model.ckpt", "run train first");
    check_compatible(model_ckpt, ctx.config, data.checksum, dir / "model.ckpt");
    const ckpt::Checkpoint attack_ckpt = load_checkpoint(dir / "attacker.ckpt", "run attack first");
    check_compatible(attack_ckpt, ctx.config, data.checksum, dir / "attacker.ckpt");
    const RunConfig config = config_from_checkpoint(ctx.config, model_ckpt);
    const train::TrainConfig tc = config.train_config();
    const train::FoldData fold = train::prepare_fold(data.dataset, data.attributes, data.folds[f], tc);
    const model::MultVaeParams params = model_from(model_ckpt, data.dataset, dir / "model.ckpt");
    if (attack_ckpt.config.at("meta.encoder_checksum") != hex64(model::checksum(params.encoder))) {
      throw DataError(dir.string() + ": attacker was trained on a different encoder (rerun attack)");
    }
    const train::RankingScores ranking = train::evaluate_ranking(
        params, tc.activation, data.dataset, fold.split.test, fold.test_holdout, tc.top_k);
    AttackScores scores = score_attackers(attack_ckpt, fold, params.encoder, tc.activation);
    scores.metrics.fold = f;
    scores.metrics.ndcg = ranking.mean_ndcg();
    scores.metrics.recall = ranking.mean_recall();
    if (csv.empty()) csv = metrics_header(config, fold.specs) + "\n";
    csv += metrics_row(config, tc.lambdas, fold.specs, scores.metrics) + "\n";
    label = train::model_label(tc.lambdas);
    folds.push_back(scores.metrics);
    log(ctx) << label << " fold " << f << ": ndcg " << fixed(scores.metrics.ndcg, 4) << " recall "
             << fixed(scores.metrics.recall, 4);
    for (const auto& [n, v] : scores.metrics.bacc) log(ctx) << " bacc_" << n << " " << fixed(v, 4);
    for (const auto& [n, v] : scores.metrics.mae) log(ctx) << " mae_" << n << " " << fixed(v, 4);
    log(ctx) << "\n";
  }
  io::write_file_atomic(ctx.out / "metrics.csv", csv);
  io::write_file_atomic(ctx.out / "metrics_summary.csv", summary_rows(eval::make_report(folds)));
  write_manifest(ctx, ctx.out / "eval_manifest.cfg", "eval",
                 {{"dataset_checksum", hex64(data.checksum)}, {"model", label}});
  return 0;
}

int cmd_grid(const CommandContext& ctx) {
  const RunConfig& config = ctx.config;
  const Loaded data = load_dataset(ctx);
  const train::TrainConfig tc = config.train_config();
  const auto names = config.attribute_names();
  const std::vector<adv::LambdaConfig> combos = train::expand_grid(config.grid_values());
  std::vector<data::FoldSplit> folds;
  for (std::size_t f : selected_folds(config)) folds.push_back(data.folds[f]);
  fs::create_directories(ctx.out);
  for (const auto& c : combos) fs::create_directories(ctx.out / combination_dir(c, names));

  // Specs (class weights) do not depend on lambdas; take them from the first fold.
  const std::vector<adv::AttributeSpec> specs =
      train::prepare_fold(data.dataset, data.attributes, folds.front(), tc).specs;
  const std::size_t units = combos.size() * folds.size();
  std::size_t done = 0;
  const auto rows = train::grid_search(
      data.dataset, data.attributes, folds, combos, tc, config.count("run.workers"),
      [&](const train::GridRow& row, const train::FoldRun* run) {
        ++done;
        const fs::path dir = ctx.out / combination_dir(row.lambdas, names);
        log(ctx) << "[" << done << "/" << units << "] " << dir.filename().string() << " fold "
                 << row.fold << ": ";
        if (!row.ok) {
          log(ctx) << "FAILED " << row.error << "\n";
          return;
        }
        log(ctx) << "ndcg " << fixed(row.metrics.ndcg, 4);
        for (const auto& [n, v] : row.metrics.bacc) log(ctx) << " bacc_" << n << " " << fixed(v, 4);
        for (const auto& [n, v] : row.metrics.mae) log(ctx) << " mae_" << n << " " << fixed(v, 4);
        log(ctx) << "\n";
        io::write_file_atomic(dir / ("epochs_fold" + std::to_string(row.fold) + ".csv"),
                              epochs_csv(run->adversarial, specs, tc.top_k));
      });

  const std::string header = metrics_header(config, specs);
  std::string results = "combination," + header + ",status,error\n";
  bool any_failed = false;
  for (std::size_t ci = 0; ci < combos.size(); ++ci) {
    std::string combo_csv = header + "\n";
    for (std::size_t fi = 0; fi < folds.size(); ++fi) {
      const train::GridRow& row = rows[ci * folds.size() + fi];
      const std::string dir = combination_dir(row.lambdas, names);
      if (row.ok) {
        const std::string line = metrics_row(config, row.lambdas, specs, row.metrics);
        combo_csv += line + "\n";
        results += dir + "," + line + ",ok,\n";
      } else {
        any_failed = true;
        std::string error = row.error;
        for (char& ch : error) {
          if (ch == ',' || ch == '\n') ch = ';';
        }
        std::string blank = config.get("data.name") + "," + row.model;
        for (const auto& name : names) blank += "," + format_number(row.lambdas.at(name));
        blank += "," + std::to_string(row.fold) + ",,";
        for (std::size_t s = 0; s < specs.size(); ++s) blank += ",";
        results += dir + "," + blank + ",failed," + error + "\n";
      }
    }
    io::write_file_atomic(ctx.out / combination_dir(combos[ci], names) / "metrics.csv", combo_csv);
  }
  io::write_file_atomic(ctx.out / "results.csv", results);

  // Fold-averaged reports of the combinations that completed every fold.
  std::vector<std::optional<eval::MetricsReport>> reports(combos.size());
  for (std::size_t ci = 0; ci < combos.size(); ++ci) {
    std::vector<eval::FoldMetrics> m;
    for (std::size_t fi = 0; fi < folds.size(); ++fi) {
      const auto& row = rows[ci * folds.size() + fi];
      if (row.ok) m.push_back(row.metrics);
    }
    if (m.size() == folds.size()) reports[ci] = eval::make_report(m);
  }

  std::string summary = "selection,combination,model";
  for (const auto& name : names) summary += ",lambda_" + name;
  summary += ",ndcg_mean,ndcg_std,recall_mean,recall_std";
  for (const auto& s : specs) {
    const std::string col = (s.is_categorical() ? "bacc_" : "mae_") + s.name;
    summary += "," + col + "_mean," + col + "_std";
  }
  summary += "\n";
  auto summary_line = [&](const std::string& selection, std::size_t ci) {
    const eval::MetricsReport& r = *reports[ci];
    std::string line = selection + "," + combination_dir(combos[ci], names) + "," +
                       train::model_label(combos[ci]);
    for (const auto& name : names) line += "," + format_number(combos[ci].at(name));
    line += "," + fixed(r.ndcg.mean, 4) + "," + fixed(r.ndcg.std, 4) + "," + fixed(r.recall.mean, 4) +
            "," + fixed(r.recall.std, 4);
    for (const auto& s : specs) {
      const eval::MeanStd& ms = s.is_categorical() ? r.bacc.at(s.name) : r.mae.at(s.name);
      line += "," + fixed(ms.mean, 4) + "," + fixed(ms.std, 4);
    }
    return line + "\n";
  };
  for (const auto& s : specs) {
    std::optional<std::size_t> best;
    for (std::size_t ci = 0; ci < combos.size(); ++ci) {
      if (!reports[ci]) continue;
      const double v = s.is_categorical() ? reports[ci]->bacc.at(s.name).mean
                                          : reports[ci]->mae.at(s.name).mean;
      if (!best) {
        best = ci;
        continue;
      }
      const double b = s.is_categorical() ? reports[*best]->bacc.at(s.name).mean
                                          : reports[*best]->mae.at(s.name).mean;
      if (s.is_categorical() ? v < b : v > b) best = ci;
    }
    if (best) {
      summary += summary_line((s.is_categorical() ? "min_bacc_" : "max_mae_") + s.name, *best);
    }
  }
  std::optional<std::size_t> baseline;
  for (std::size_t ci = 0; ci < combos.size(); ++ci) {
    if (train::model_label(combos[ci]) == "MultVAE") baseline = ci;
  }
  if (baseline && reports[*baseline]) summary += summary_line("baseline", *baseline);
  io::write_file_atomic(ctx.out / "summary.csv", summary);

  // Paired tests of every combination against the all-zero baseline,
  // pooling users over folds.
  const double alpha = config.real("eval.alpha");
  std::string sig = "combination,metric,test,statistic,p_value,significant,n,note\n";
  if (baseline && reports[*baseline]) {
    auto pooled = [&](std::size_t ci, auto getter) {
      using T = std::decay_t<decltype(getter(rows[0]))>;
      T out;
      for (std::size_t fi = 0; fi < folds.size(); ++fi) {
        const auto& part = getter(rows[ci * folds.size() + fi]);
        out.insert(out.end(), part.begin(), part.end());
      }
      return out;
    };
    for (std::size_t ci = 0; ci < combos.size(); ++ci) {
      if (ci == *baseline || !reports[ci]) continue;
      const std::string dir = combination_dir(combos[ci], names);
      auto emit = [&](const std::string& metric, const std::string& test, auto&& run_test) {
        try {
          const eval::TestResult t = run_test();
          sig += dir + "," + metric + "," + test + "," + format_number(t.statistic) + "," +
                 format_number(t.p_value) + "," + (t.significant ? "true" : "false") + "," +
                 std::to_string(t.n) + "," + (t.degenerate ? "degenerate" : "") + "\n";
        } catch (const std::exception& e) {
          std::string msg = e.what();
          for (char& ch : msg) {
            if (ch == ',') ch = ';';
          }
          sig += dir + "," + metric + "," + test + ",,,,," + msg + "\n";
        }
      };
      auto ndcg_of = [](const train::GridRow& r) -> const std::vector<double>& { return r.ranking.ndcg; };
      auto recall_of = [](const train::GridRow& r) -> const std::vector<double>& { return r.ranking.recall; };
      const auto base_ndcg = pooled(*baseline, ndcg_of);
      const auto base_recall = pooled(*baseline, recall_of);
      const auto ndcg = pooled(ci, ndcg_of);
      const auto recall = pooled(ci, recall_of);
      emit("ndcg", "wilcoxon", [&] { return eval::wilcoxon_signed_rank(ndcg, base_ndcg, alpha); });
      emit("recall", "wilcoxon", [&] { return eval::wilcoxon_signed_rank(recall, base_recall, alpha); });
      for (const auto& s : specs) {
        if (s.is_categorical()) {
          auto correct_of = [&](const train::GridRow& r) -> const std::vector<bool>& {
            return r.attack_correct.at(s.name);
          };
          const auto a = pooled(ci, correct_of);
          const auto b = pooled(*baseline, correct_of);
          emit("bacc_" + s.name, "mcnemar", [&] { return eval::mcnemar_test(a, b, alpha); });
        } else {
          auto err_of = [&](const train::GridRow& r) -> const std::vector<double>& {
            return r.attack_abs_error.at(s.name);
          };
          const auto a = pooled(ci, err_of);
          const auto b = pooled(*baseline, err_of);
          emit("mae_" + s.name, "paired_t", [&] { return eval::paired_t_test(a, b, alpha); });
        }
      }
    }
  }
  io::write_file_atomic(ctx.out / "significance.csv", sig);
  write_manifest(ctx, ctx.out / "grid_manifest.cfg", "grid",
                 {{"dataset_checksum", hex64(data.checksum)},
                  {"combinations", std::to_string(combos.size())}});
  log(ctx) << combos.size() << " combinations x " << folds.size() << " folds"
           << (any_failed ? ", with failures (see results.csv)" : "") << "\n";
  return any_failed ? 1 : 0;
}

int cmd_export_embeddings(const CommandContext& ctx) {
  const Loaded data = load_dataset(ctx);
  const auto f = static_cast<std::size_t>(ctx.config.integer("export.fold"));
  if (f >= data.folds.size()) throw ConfigError("export.fold must lie in 0..4");
  const fs::path dir = fold_dir(ctx.out, f);
  const ckpt::Checkpoint model_ckpt = load_checkpoint(dir / "model.ckpt", "run train first");
  check_compatible(model_ckpt, ctx.config, data.checksum, dir / "model.ckpt");
  const ckpt::Checkpoint attack_ckpt = load_checkpoint(dir / "attacker.ckpt", "run attack first");
  check_compatible(attack_ckpt, ctx.config, data.checksum, dir / "attacker.ckpt");
  const RunConfig config = config_from_checkpoint(ctx.config, model_ckpt);
  const train::TrainConfig tc = config.train_config();
  const train::FoldData fold = train::prepare_fold(data.dataset, data.attributes, data.folds[f], tc);
  const model::MultVaeParams params = model_from(model_ckpt, data.dataset, dir / "model.ckpt");
  const ad::RealArray latents =
      train::user_latents(params.encoder, tc.activation, data.dataset, fold.split.test);
  const AttackScores scores = score_attackers(attack_ckpt, fold, params.encoder, tc.activation);

  const double cap = data.attributes.age_cap;
  std::string out = "user_id";
  for (std::size_t d = 0; d < latents.cols(); ++d) out += "\tmu_" + std::to_string(d);
  out += "\tpred_gender\tpred_age\ttrue_gender\ttrue_age\n";
  for (std::size_t i = 0; i < fold.split.test.size(); ++i) {
    const std::size_t u = fold.split.test[i];
    out += data.dataset.user_ids[u];
    for (std::size_t d = 0; d < latents.cols(); ++d) out += "\t" + format_number(latents(i, d));
    if (auto it = scores.predictions.find("gender"); it != scores.predictions.end()) {
      out += "\t" + data.attributes.gender_tokens.at(static_cast<std::size_t>(it->second[i]));
    } else {
      out += "\tNA";
    }
    if (auto it = scores.predictions.find("age"); it != scores.predictions.end()) {
      out += "\t" + format_number(it->second[i] * cap);
    } else {
      out += "\tNA";
    }
    const auto& g = data.attributes.gender[u];
    out += "\t" + (g ? data.attributes.gender_tokens.at(static_cast<std::size_t>(*g)) : std::string("NA"));
    const auto& a = data.attributes.age_raw[u];
    out += "\t" + (a ? format_number(*a) : std::string("NA")) + "\n";
  }
  io::write_file_atomic(dir / "embeddings.tsv", out);
  log(ctx) << "wrote " << fold.split.test.size() << " test users to " << (dir / "embeddings.tsv").string()
           << "\n";
  return 0;
}

}  // namespace advx::cli
