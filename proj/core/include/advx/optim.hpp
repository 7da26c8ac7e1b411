#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advx/autodiff.hpp"
#include "advx/multvae.hpp"

namespace advx::train {

using ad::RealArray;

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// The arrays one optimizer updates. A frozen group rejects every update.
struct ParamGroup {
  std::vector<model::NamedArray> params;
  bool frozen = false;
};

struct AdamState {
  AdamHyper hyper;
  std::vector<RealArray> m;
  std::vector<RealArray> v;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const ParamGroup& group, AdamHyper hyper = {});

/// One bias-corrected Adam update. Gradients are checked for non-finite
/// values before anything is modified; the error names the parameter and
/// `batch_index`. Throws ContractError on a frozen group.
void adam_step(ParamGroup& group, std::span<const RealArray> grads, AdamState& state,
               std::size_t batch_index = 0);

/// Rescales grads in place so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_by_global_norm(std::span<RealArray> grads, double max_norm);

}  // namespace advx::train
