#pragma once

// Generator for interaction data with planted protected attributes, used to
// exercise the debiasing pipeline without external datasets.

#include <cstddef>
#include <cstdint>

#include "advx/data.hpp"

namespace advx::data {

struct SyntheticConfig {
  std::size_t n_users = 2000;
  std::size_t n_items = 500;
  std::size_t n_tastes = 10;       // attribute-independent preference clusters
  double taste_strength = 2.0;     // logit bonus for items of the user's taste
  double gender_share = 0.5;       // P(class 1)
  double gender_strength = 0.15;   // logit shift toward the class's item half
  double age_strength = 1.5;       // logit slope along the item age loading
  std::size_t min_interactions = 80;  // per-user count is uniform in [min, max],
  std::size_t max_interactions = 160;  // independent of both attributes
  double age_cap = 60.0;
};

struct SyntheticData {
  InteractionDataset dataset;
  UserAttributes attributes;
};

/// Each user draws a taste cluster, a binary class and a normalized age in
/// [0, 1]. Items carry a class affinity (+-1) and an age loading in [-1, 1].
/// The user samples a uniform number of distinct items with probability
/// proportional to exp(logit), where
///   logit = taste_strength * [same taste]
///         + gender_strength * affinity * (class ? 1 : -1)
///         + age_strength * loading * (2 * age - 1).
SyntheticData make_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace advx::data
