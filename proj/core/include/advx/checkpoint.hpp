#pragma once

// Versioned text container of named arrays plus the producing config.
// Values are stored as hex floats; save followed by load is bit-exact.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "advx/adversarial.hpp"
#include "advx/autodiff.hpp"
#include "advx/multvae.hpp"

namespace advx::ckpt {

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, ad::RealArray>> arrays;

  const ad::RealArray& get(const std::string& name) const;
  bool has(const std::string& name) const;
  void put(std::string name, ad::RealArray value);
};

std::string serialize(const Checkpoint& checkpoint);
Checkpoint deserialize(const std::string& text);

void save(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load(const std::filesystem::path& path);

void put_model(Checkpoint& checkpoint, const model::MultVaeParams& params);
model::MultVaeParams get_model(const Checkpoint& checkpoint);

void put_head(Checkpoint& checkpoint, const std::string& prefix, const adv::AdvHeadParams& head);
adv::AdvHeadParams get_head(const Checkpoint& checkpoint, const std::string& prefix);

}  // namespace advx::ckpt
