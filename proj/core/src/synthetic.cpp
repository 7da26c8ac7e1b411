#include "advx/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "advx/errors.hpp"

namespace advx::data {

SyntheticData make_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.n_users == 0 || config.n_items == 0 || config.n_tastes == 0) {
    throw ConfigError("synthetic dataset dimensions must be positive");
  }
  if (config.min_interactions == 0 || config.min_interactions > config.max_interactions) {
    throw ConfigError("synthetic interaction range is empty");
  }
  if (config.max_interactions > config.n_items) {
    throw ConfigError("synthetic users may need more items than exist");
  }
  Rng rng = make_stream(seed, {0x5EED});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> loading_dist(-1.0, 1.0);

  std::vector<std::size_t> item_taste(config.n_items);
  std::vector<double> affinity(config.n_items);
  std::vector<double> loading(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    item_taste[i] = i % config.n_tastes;
    affinity[i] = (i / config.n_tastes) % 2 == 0 ? 1.0 : -1.0;
    loading[i] = loading_dist(rng);
  }

  SyntheticData out;
  InteractionDataset& ds = out.dataset;
  UserAttributes& attrs = out.attributes;
  ds.n_users = config.n_users;
  ds.n_items = config.n_items;
  for (std::size_t i = 0; i < config.n_items; ++i) ds.item_ids.push_back("i" + std::to_string(i));
  attrs.gender_tokens = {"g0", "g1"};
  attrs.age_cap = config.age_cap;

  std::uniform_int_distribution<std::size_t> taste_dist(0, config.n_tastes - 1);
  std::bernoulli_distribution gender_dist(config.gender_share);
  std::uniform_int_distribution<std::size_t> count_dist(config.min_interactions,
                                                        config.max_interactions);
  std::vector<double> keys(config.n_items);
  std::vector<ItemIndex> order(config.n_items);
  for (std::size_t u = 0; u < config.n_users; ++u) {
    const std::size_t taste = taste_dist(rng);
    const int gender = gender_dist(rng) ? 1 : 0;
    // Raw ages are whole years so the dataset looks like real demographics.
    const double raw_age = std::round(unit(rng) * config.age_cap);
    const double age = raw_age / config.age_cap;
    const double sign = gender == 1 ? 1.0 : -1.0;
    // Gumbel-top-k: distinct items sampled proportionally to exp(logit).
    for (std::size_t i = 0; i < config.n_items; ++i) {
      const double logit = config.taste_strength * (item_taste[i] == taste ? 1.0 : 0.0) +
                           config.gender_strength * affinity[i] * sign +
                           config.age_strength * loading[i] * (2.0 * age - 1.0);
      const double g = -std::log(-std::log(std::max(unit(rng), 1e-300)));
      keys[i] = logit + g;
    }
    const std::size_t count = count_dist(rng);
    std::iota(order.begin(), order.end(), ItemIndex{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                      [&](ItemIndex a, ItemIndex b) { return keys[a] > keys[b]; });
    std::vector<ItemIndex> row(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(row.begin(), row.end());
    ds.rows.push_back(std::move(row));
    ds.user_ids.push_back("u" + std::to_string(u));
    attrs.gender.push_back(gender);
    attrs.age_raw.push_back(raw_age);
    attrs.age_normalized.push_back(age);
  }
  return out;
}

}  // namespace advx::data
