#include "advx/cli/run_config.hpp"

#include <algorithm>
#include <cmath>

#include "advx/errors.hpp"
#include "advx/io.hpp"

namespace advx::cli {

namespace {

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : schema()) {
    if (s.key == key) return &s;
  }
  return nullptr;
}

bool starts_with(const std::string& s, const char* prefix) {
  return s.rfind(prefix, 0) == 0;
}

bool valid_attribute_name(std::string_view name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

ValueType type_of(const std::string& key) {
  if (const KeySpec* s = find_spec(key)) return s->type;
  if (starts_with(key, kLambdaPrefix) && valid_attribute_name(key.substr(7))) return ValueType::kReal;
  if (starts_with(key, kGridPrefix) && valid_attribute_name(key.substr(5))) return ValueType::kRealList;
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (io::trim(value).empty()) return out;
  for (auto part : io::split(value, ',')) out.emplace_back(io::trim(part));
  return out;
}

void check_value(const std::string& key, const std::string& value) {
  const ValueType type = type_of(key);
  try {
    switch (type) {
      case ValueType::kInt:
        io::parse_int(value);
        break;
      case ValueType::kReal:
        if (!std::isfinite(io::parse_double(value))) throw DataError("not finite");
        break;
      case ValueType::kOptionalReal:
        if (!value.empty() && !std::isfinite(io::parse_double(value))) throw DataError("not finite");
        break;
      case ValueType::kBool:
        if (value != "true" && value != "false") throw DataError("expected true or false");
        break;
      case ValueType::kString:
        break;
      case ValueType::kRealList:
        for (const auto& v : split_list(value)) {
          if (!std::isfinite(io::parse_double(v))) throw DataError("not finite");
        }
        break;
      case ValueType::kIntList:
        for (const auto& v : split_list(value)) io::parse_int(v);
        break;
      case ValueType::kStringList:
        for (const auto& v : split_list(value)) {
          if (v.empty()) throw DataError("empty list element");
        }
        break;
    }
  } catch (const DataError& e) {
    throw ConfigError("invalid value '" + value + "' for " + key + ": " + e.what());
  }
  if (const KeySpec* s = find_spec(key); s && !s->choices.empty()) {
    if (std::find(s->choices.begin(), s->choices.end(), value) == s->choices.end()) {
      std::string allowed;
      for (const auto& c : s->choices) allowed += (allowed.empty() ? "" : ", ") + c;
      throw ConfigError("invalid value '" + value + "' for " + key + " (allowed: " + allowed + ")");
    }
  }
}

ad::Activation activation_of(const std::string& name) { return ad::parse_activation(name); }

}  // namespace

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"data.name", ValueType::kString, "dataset", {}},
      {"data.format", ValueType::kString, "tsv", {"tsv", "movielens", "synthetic"}},
      {"data.interactions", ValueType::kString, "", {}},
      {"data.demographics", ValueType::kString, "", {}},
      {"data.cache", ValueType::kString, "", {}},
      {"data.k_core", ValueType::kInt, "5", {}},
      {"data.age_cap", ValueType::kReal, "60", {}},
      {"data.subsample_items", ValueType::kInt, "0", {}},
      {"synthetic.users", ValueType::kInt, "2000", {}},
      {"synthetic.items", ValueType::kInt, "500", {}},
      {"synthetic.tastes", ValueType::kInt, "10", {}},
      {"synthetic.taste_strength", ValueType::kReal, "2", {}},
      {"synthetic.gender_share", ValueType::kReal, "0.5", {}},
      {"synthetic.gender_strength", ValueType::kReal, "0.15", {}},
      {"synthetic.age_strength", ValueType::kReal, "1.5", {}},
      {"synthetic.min_interactions", ValueType::kInt, "80", {}},
      {"synthetic.max_interactions", ValueType::kInt, "160", {}},
      {"model.hidden", ValueType::kInt, "600", {}},
      {"model.latent", ValueType::kInt, "200", {}},
      {"model.activation", ValueType::kString, "tanh", {"tanh", "relu", "sigmoid"}},
      {"model.adv_hidden", ValueType::kInt, "128", {}},
      {"attributes.names", ValueType::kStringList, "gender,age", {}},
      {"train.epochs_adversarial", ValueType::kInt, "200", {}},
      {"train.epochs_attack", ValueType::kInt, "50", {}},
      {"train.batch_size", ValueType::kInt, "64", {}},
      {"train.beta_max", ValueType::kReal, "0.4", {}},
      {"train.anneal_steps", ValueType::kInt, "10000", {}},
      {"train.dropout_keep", ValueType::kReal, "0.5", {}},
      {"train.lr", ValueType::kReal, "0.001", {}},
      {"train.beta1", ValueType::kReal, "0.9", {}},
      {"train.beta2", ValueType::kReal, "0.999", {}},
      {"train.epsilon", ValueType::kReal, "1e-08", {}},
      {"train.adversary_lr", ValueType::kOptionalReal, "", {}},
      {"train.adversary_input", ValueType::kString, "sampled", {"sampled", "mean"}},
      {"train.grad_clip", ValueType::kReal, "0", {}},
      {"train.select_best", ValueType::kBool, "true", {}},
      {"seed.model", ValueType::kInt, "1", {}},
      {"seed.data", ValueType::kInt, "2", {}},
      {"seed.adversary", ValueType::kInt, "3", {}},
      {"eval.top_k", ValueType::kInt, "10", {}},
      {"eval.holdout_ratio", ValueType::kReal, "0.2", {}},
      {"eval.folds", ValueType::kIntList, "0,1,2,3,4", {}},
      {"eval.alpha", ValueType::kReal, "0.05", {}},
      {"export.fold", ValueType::kInt, "0", {}},
      {"run.workers", ValueType::kInt, "1", {}},
  };
  return keys;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::size_t line_no = 0;
  for (auto raw : io::split(text, '\n')) {
    ++line_no;
    const std::string_view line = io::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
    const std::string key(io::trim(line.substr(0, eq)));
    const std::string value(io::trim(line.substr(eq + 1)));
    try {
      set(key, value, origin);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  merge_text(io::read_file(path), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string&) {
  check_value(key, value);
  values_[key] = value;
}

std::string RunConfig::get(const std::string& key) const {
  if (auto it = values_.find(key); it != values_.end()) return it->second;
  if (const KeySpec* s = find_spec(key)) return s->default_value;
  if (starts_with(key, kGridPrefix)) return kDefaultGrid;
  if (starts_with(key, kLambdaPrefix)) return "0";
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::int64_t RunConfig::integer(const std::string& key) const { return io::parse_int(get(key)); }

std::size_t RunConfig::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw ConfigError(key + " must be >= 0, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

double RunConfig::real(const std::string& key) const { return io::parse_double(get(key)); }

bool RunConfig::boolean(const std::string& key) const { return get(key) == "true"; }

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& v : split_list(get(key))) out.push_back(io::parse_double(v));
  return out;
}

std::vector<std::int64_t> RunConfig::integers(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& v : split_list(get(key))) out.push_back(io::parse_int(v));
  return out;
}

std::vector<std::string> RunConfig::strings(const std::string& key) const {
  return split_list(get(key));
}

void RunConfig::validate() const {
  const auto names = attribute_names();
  for (const auto& name : names) {
    if (name != "gender" && name != "age") {
      throw ConfigError("attributes.names: unsupported attribute '" + name +
                        "' (supported: gender, age)");
    }
  }
  for (const auto& [key, value] : values_) {
    std::string attr;
    if (starts_with(key, kLambdaPrefix)) attr = key.substr(7);
    if (starts_with(key, kGridPrefix)) attr = key.substr(5);
    if (!attr.empty() && std::find(names.begin(), names.end(), attr) == names.end()) {
      throw ConfigError(key + " names an attribute missing from attributes.names");
    }
  }
  for (const auto& name : names) {
    if (reals(kGridPrefix + name).empty()) throw ConfigError(std::string(kGridPrefix) + name + " is empty");
  }
  for (const auto f : integers("eval.folds")) {
    if (f < 0 || f >= static_cast<std::int64_t>(data::kFoldCount)) {
      throw ConfigError("eval.folds: fold " + std::to_string(f) + " outside 0..4");
    }
  }
  if (integers("eval.folds").empty()) throw ConfigError("eval.folds is empty");
  if (integer("run.workers") < 1) throw ConfigError("run.workers must be at least 1");
  train_config().validate();
}

std::string RunConfig::render() const {
  std::map<std::string, std::string> all;
  for (const auto& s : schema()) all[s.key] = get(s.key);
  for (const auto& name : attribute_names()) {
    all[kLambdaPrefix + name] = get(kLambdaPrefix + name);
    all[kGridPrefix + name] = get(kGridPrefix + name);
  }
  for (const auto& [k, v] : values_) all[k] = v;
  std::string out;
  for (const auto& [k, v] : all) out += k + "=" + v + "\n";
  return out;
}

adv::LambdaConfig RunConfig::lambdas() const {
  adv::LambdaConfig out;
  for (const auto& name : attribute_names()) out[name] = real(kLambdaPrefix + name);
  return out;
}

std::vector<std::pair<std::string, std::vector<double>>> RunConfig::grid_values() const {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (const auto& name : attribute_names()) out.emplace_back(name, reals(kGridPrefix + name));
  return out;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig c;
  c.epochs_adversarial = count("train.epochs_adversarial");
  c.epochs_attack = count("train.epochs_attack");
  c.batch_size = count("train.batch_size");
  c.beta_max = real("train.beta_max");
  c.anneal_steps = count("train.anneal_steps");
  c.dropout_keep = real("train.dropout_keep");
  c.hidden = count("model.hidden");
  c.latent = count("model.latent");
  c.activation = activation_of(get("model.activation"));
  c.adv_hidden = count("model.adv_hidden");
  c.adam = {real("train.lr"), real("train.beta1"), real("train.beta2"), real("train.epsilon")};
  if (!get("train.adversary_lr").empty()) {
    c.adversary_adam = c.adam;
    c.adversary_adam->lr = real("train.adversary_lr");
  }
  c.adversary_input = get("train.adversary_input") == "mean" ? adv::AdversaryInput::kMean
                                                             : adv::AdversaryInput::kSampled;
  c.grad_clip = real("train.grad_clip");
  c.holdout_ratio = real("eval.holdout_ratio");
  c.top_k = count("eval.top_k");
  c.select_best = boolean("train.select_best");
  c.attributes = attribute_names();
  c.lambdas = lambdas();
  c.seeds = {static_cast<std::uint64_t>(integer("seed.model")),
             static_cast<std::uint64_t>(integer("seed.data")),
             static_cast<std::uint64_t>(integer("seed.adversary"))};
  return c;
}

data::SyntheticConfig RunConfig::synthetic_config() const {
  data::SyntheticConfig c;
  c.n_users = count("synthetic.users");
  c.n_items = count("synthetic.items");
  c.n_tastes = count("synthetic.tastes");
  c.taste_strength = real("synthetic.taste_strength");
  c.gender_share = real("synthetic.gender_share");
  c.gender_strength = real("synthetic.gender_strength");
  c.age_strength = real("synthetic.age_strength");
  c.min_interactions = count("synthetic.min_interactions");
  c.max_interactions = count("synthetic.max_interactions");
  c.age_cap = real("data.age_cap");
  return c;
}

}  // namespace advx::cli
