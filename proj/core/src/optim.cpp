#include "advx/optim.hpp"

#include <cmath>

#include "advx/errors.hpp"

namespace advx::train {

AdamState make_adam_state(const ParamGroup& group, AdamHyper hyper) {
  AdamState state;
  state.hyper = hyper;
  for (const auto& p : group.params) {
    state.m.push_back(RealArray::zeros_like(*p.value));
    state.v.push_back(RealArray::zeros_like(*p.value));
  }
  return state;
}

void adam_step(ParamGroup& group, std::span<const RealArray> grads, AdamState& state,
               std::size_t batch_index) {
  if (group.frozen) {
    throw ContractError("adam_step: attempt to update a frozen parameter group");
  }
  if (grads.size() != group.params.size() || state.m.size() != group.params.size()) {
    throw DimensionError("adam_step: " + std::to_string(group.params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " +
                         std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(*group.params[i].value)) {
      throw DimensionError("adam_step: gradient " + grads[i].shape_string() + " for " +
                           group.params[i].name + " " + group.params[i].value->shape_string());
    }
    if (!grads[i].all_finite()) {
      throw TrainingError("non-finite gradient for " + group.params[i].name + " at batch " +
                          std::to_string(batch_index));
    }
  }

  const AdamHyper& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    RealArray& p = *group.params[i].value;
    RealArray& m = state.m[i];
    RealArray& v = state.v[i];
    const RealArray& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
  }
}

double clip_by_global_norm(std::span<RealArray> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

}  // namespace advx::train
