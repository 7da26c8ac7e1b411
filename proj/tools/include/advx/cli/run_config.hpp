#pragma once

// Plain-text key=value run configuration with section prefixes
// ("train.epochs_adversarial=200"). Every key is checked against a fixed
// schema; unknown keys and malformed values are errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "advx/synthetic.hpp"
#include "advx/training.hpp"

namespace advx::cli {

enum class ValueType { kInt, kReal, kOptionalReal, kBool, kString, kRealList, kIntList, kStringList };

struct KeySpec {
  std::string key;
  ValueType type;
  std::string default_value;
  std::vector<std::string> choices;  // empty = any value of the type
};

const std::vector<KeySpec>& schema();

/// Per-attribute keys: lambda.<attr> (real) and grid.<attr> (real list).
inline constexpr const char* kLambdaPrefix = "lambda.";
inline constexpr const char* kGridPrefix = "grid.";
inline constexpr const char* kDefaultGrid = "0,1,200,400,600,800";

class RunConfig {
 public:
  /// Parses key=value lines; '#' starts a comment line. Errors carry
  /// `origin:line`.
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);

  /// Validates the key and the value's type before storing it.
  void set(const std::string& key, const std::string& value, const std::string& origin = "flag");

  bool is_set(const std::string& key) const { return values_.contains(key); }
  std::string get(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // nonnegative integer
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::int64_t> integers(const std::string& key) const;
  std::vector<std::string> strings(const std::string& key) const;

  /// Cross-key checks (per-attribute keys name trained attributes, ...).
  void validate() const;

  /// Every schema key with its effective value plus explicit per-attribute
  /// keys, sorted; parsing the result reproduces this configuration.
  std::string render() const;

  std::vector<std::string> attribute_names() const { return strings("attributes.names"); }
  adv::LambdaConfig lambdas() const;
  std::vector<std::pair<std::string, std::vector<double>>> grid_values() const;
  train::TrainConfig train_config() const;
  data::SyntheticConfig synthetic_config() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace advx::cli
