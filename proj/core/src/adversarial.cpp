#include "advx/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advx/errors.hpp"

namespace advx::adv {

AttributeSpec AttributeSpec::categorical(std::string name, std::vector<double> class_weights,
                                         double lambda) {
  AttributeSpec spec;
  spec.name = std::move(name);
  spec.kind = AttributeKind::kCategorical;
  spec.n_classes = class_weights.size();
  spec.class_weights = std::move(class_weights);
  spec.lambda = lambda;
  return spec;
}

AttributeSpec AttributeSpec::continuous(std::string name, double lambda) {
  AttributeSpec spec;
  spec.name = std::move(name);
  spec.kind = AttributeKind::kContinuous;
  spec.lambda = lambda;
  return spec;
}

void validate(const AttributeSpec& spec) {
  if (spec.name.empty()) throw ConfigError("attribute name must not be empty");
  ad::validate(ad::GrlSpec{spec.lambda});
  if (spec.is_categorical()) {
    if (spec.n_classes < 2) {
      throw ConfigError("categorical attribute '" + spec.name + "' needs at least 2 classes");
    }
    if (spec.class_weights.size() != spec.n_classes) {
      throw ConfigError("attribute '" + spec.name + "' has " +
                        std::to_string(spec.class_weights.size()) + " class weights for " +
                        std::to_string(spec.n_classes) + " classes");
    }
    for (double w : spec.class_weights) {
      if (!(w > 0.0) || !std::isfinite(w)) {
        throw ConfigError("attribute '" + spec.name + "' has a non-positive class weight");
      }
    }
  }
}

void apply_lambdas(std::span<AttributeSpec> specs, const LambdaConfig& lambdas) {
  for (auto& spec : specs) {
    auto it = lambdas.find(spec.name);
    if (it == lambdas.end()) {
      throw ConfigError("no lambda configured for attribute '" + spec.name + "'");
    }
    ad::validate(ad::GrlSpec{it->second});
    spec.lambda = it->second;
  }
}

TargetTable select_rows(const TargetTable& table, std::span<const std::size_t> rows) {
  TargetTable out;
  for (const auto& [name, column] : table) {
    AttributeColumn& dst = out[name];
    if (!column.labels.empty()) {
      dst.labels.reserve(rows.size());
      for (std::size_t r : rows) dst.labels.push_back(column.labels.at(r));
    }
    if (!column.values.empty()) {
      dst.values.reserve(rows.size());
      for (std::size_t r : rows) dst.values.push_back(column.values.at(r));
    }
  }
  return out;
}

AdvHeadParams init_head(std::size_t latent, std::size_t hidden, const AttributeSpec& spec,
                        Rng& rng) {
  validate(spec);
  if (latent == 0 || hidden == 0) throw ConfigError("head dimensions must be positive");
  AdvHeadParams p;
  p.hidden = model::init_dense(latent, hidden, rng);
  p.output = model::init_dense(hidden, spec.output_width(), rng);
  return p;
}

HeadVars bind(Tape& tape, const AdvHeadParams& p, bool trainable) {
  return {model::bind(tape, p.hidden, trainable), model::bind(tape, p.output, trainable)};
}

std::vector<model::NamedArray> named_arrays(AdvHeadParams& p, const std::string& prefix) {
  std::vector<model::NamedArray> out;
  model::append_named(p.hidden, prefix + ".hidden", out);
  model::append_named(p.output, prefix + ".output", out);
  return out;
}

Var adv_forward(Var z, const HeadVars& head, const AttributeSpec& spec, bool reversed,
                ad::Activation activation) {
  const RealArray& w = head.hidden.weights.value();
  if (z.value().rank() != 2 || z.value().cols() != w.rows()) {
    throw DimensionError("adv_forward(" + spec.name + "): latent " + z.value().shape_string() +
                         " does not match head input " + std::to_string(w.rows()));
  }
  if (head.output.weights.value().cols() != spec.output_width()) {
    throw DimensionError("adv_forward(" + spec.name + "): head output width " +
                         std::to_string(head.output.weights.value().cols()) + " expected " +
                         std::to_string(spec.output_width()));
  }
  Var input = reversed ? ad::grl(z, ad::GrlSpec{spec.lambda}) : z;
  Var h = ad::activate(ad::dense(input, head.hidden.weights, head.hidden.bias), activation);
  Var out = ad::dense(h, head.output.weights, head.output.bias);
  return spec.is_categorical() ? out : ad::sigmoid(out);
}

Var weighted_ce(Var logits, std::span<const int> labels, std::span<const double> weights) {
  const RealArray& l = logits.value();
  const std::size_t batch = l.rows();
  const std::size_t classes = l.cols();
  if (labels.size() != batch) {
    throw DimensionError("weighted_ce: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
  }
  if (weights.size() != classes) {
    throw DimensionError("weighted_ce: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(classes) + " classes");
  }
  RealArray softmax = RealArray::zeros_like(l);
  double numerator = 0.0;
  double denominator = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DataError("weighted_ce: label " + std::to_string(y) + " out of range at row " +
                      std::to_string(r));
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) m = std::max(m, l(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      softmax(r, c) = std::exp(l(r, c) - m);
      s += softmax(r, c);
    }
    for (std::size_t c = 0; c < classes; ++c) softmax(r, c) /= s;
    const double log_p = l(r, static_cast<std::size_t>(y)) - m - std::log(s);
    numerator += weights[y] * -log_p;
    denominator += weights[y];
  }
  const double value = denominator > 0.0 ? numerator / denominator : 0.0;
  std::vector<int> saved_labels(labels.begin(), labels.end());
  std::vector<double> saved_weights(weights.begin(), weights.end());
  return logits.tape().record(
      RealArray::scalar(value), {logits},
      [softmax = std::move(softmax), saved_labels = std::move(saved_labels),
       saved_weights = std::move(saved_weights), denominator](const RealArray& g,
                                                                std::span<const bool>) {
        RealArray d = RealArray::zeros_like(softmax);
        if (denominator > 0.0) {
          for (std::size_t r = 0; r < d.rows(); ++r) {
            const auto y = static_cast<std::size_t>(saved_labels[r]);
            const double scale = g[0] * saved_weights[y] / denominator;
            for (std::size_t c = 0; c < d.cols(); ++c) {
              d(r, c) = scale * (softmax(r, c) - (c == y ? 1.0 : 0.0));
            }
          }
        }
        return std::vector<std::optional<RealArray>>{std::move(d)};
      },
      "weighted_ce");
}

Var mse(Var pred, std::span<const double> target) {
  const RealArray& p = pred.value();
  if (p.size() != target.size() || (p.rank() == 2 && p.cols() != 1)) {
    throw DimensionError("mse: prediction " + p.shape_string() + " vs " +
                         std::to_string(target.size()) + " targets");
  }
  const std::size_t n = target.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = p[i] - target[i];
    total += e * e;
  }
  const double inv_n = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
  std::vector<double> saved(target.begin(), target.end());
  return pred.tape().record(
      RealArray::scalar(total * inv_n), {pred},
      [pred, saved = std::move(saved), inv_n](const RealArray& g, std::span<const bool>) {
        const RealArray& p = pred.value();
        RealArray d = RealArray::zeros_like(p);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[0] * 2.0 * inv_n * (p[i] - saved[i]);
        return std::vector<std::optional<RealArray>>{std::move(d)};
      },
      "mse");
}

Var attribute_loss(Var prediction, const AttributeSpec& spec, const AttributeColumn& column) {
  if (spec.is_categorical()) return weighted_ce(prediction, column.labels, spec.class_weights);
  return mse(prediction, column.values);
}

AdvxLoss advx_loss(Var z, std::span<const HeadBinding> heads, const TargetTable& targets,
                   ad::Activation activation) {
  if (heads.empty()) throw ContractError("advx_loss needs at least one head");
  AdvxLoss out;
  for (const auto& binding : heads) {
    auto it = targets.find(binding.spec->name);
    if (it == targets.end()) {
      throw DataError("missing target column for attribute '" + binding.spec->name + "'");
    }
    Var pred = adv_forward(z, *binding.head, *binding.spec, true, activation);
    Var loss = attribute_loss(pred, *binding.spec, it->second);
    out.per_attribute.push_back(loss);
    out.total = out.total.valid() ? ad::add(out.total, loss) : loss;
  }
  return out;
}

ObjectiveForward total_objective(Tape& tape, const RealArray& x, const TargetTable& targets,
                                 const model::EncoderVars& encoder,
                                 const model::DecoderVars& decoder,
                                 std::span<const HeadVars> heads,
                                 std::span<const AttributeSpec> specs,
                                 const ObjectiveOptions& options, Rng& model_rng) {
  if (heads.size() != specs.size()) {
    throw ContractError("total_objective: " + std::to_string(heads.size()) + " heads for " +
                        std::to_string(specs.size()) + " attributes");
  }
  ObjectiveForward f;
  f.mult = model::multvae_loss(tape, x, encoder, decoder, options.activation, options.beta,
                               options.dropout_keep, model_rng, true);
  if (heads.empty()) {
    f.total = f.mult.loss;
    return f;
  }
  std::vector<HeadBinding> bindings;
  for (std::size_t k = 0; k < heads.size(); ++k) bindings.push_back({&heads[k], &specs[k]});
  const Var head_input = options.adversary_input == AdversaryInput::kMean ? f.mult.latent.mu
                                                                          : f.mult.latent.z;
  f.adv = advx_loss(head_input, bindings, targets, options.head_activation);
  f.total = ad::add(f.mult.loss, f.adv.total);
  return f;
}

FrozenEncoder::FrozenEncoder(model::EncoderParams params, ad::Activation activation)
    : params_(std::move(params)), activation_(activation) {}

RealArray FrozenEncoder::latents(const RealArray& x) const {
  return model::encode_mean(params_, x, activation_);
}

train::ParamGroup FrozenEncoder::param_group() {
  train::ParamGroup group;
  model::append_named(params_.hidden, "encoder.hidden", group.params);
  model::append_named(params_.mu, "encoder.mu", group.params);
  model::append_named(params_.logsigma, "encoder.logsigma", group.params);
  group.frozen = true;
  return group;
}

AttackerSet make_attackers(std::span<const AttributeSpec> specs, std::size_t latent,
                           std::size_t hidden, train::AdamHyper hyper, Rng& rng) {
  AttackerSet set;
  for (const auto& spec : specs) {
    set.specs.push_back(spec);
    set.heads.push_back(init_head(latent, hidden, spec, rng));
  }
  for (std::size_t k = 0; k < set.heads.size(); ++k) {
    train::ParamGroup group{named_arrays(set.heads[k], "attacker." + set.specs[k].name), false};
    set.optim.push_back(train::make_adam_state(group, hyper));
  }
  return set;
}

std::vector<double> attacker_step_on_latents(const RealArray& latents, const TargetTable& targets,
                                             AttackerSet& attackers, std::size_t batch_index) {
  std::vector<double> losses;
  for (std::size_t k = 0; k < attackers.heads.size(); ++k) {
    const AttributeSpec& spec = attackers.specs[k];
    auto it = targets.find(spec.name);
    if (it == targets.end()) {
      throw DataError("missing target column for attribute '" + spec.name + "'");
    }
    Tape tape;
    Var z = tape.constant(latents);
    HeadVars vars = bind(tape, attackers.heads[k], true);
    Var pred = adv_forward(z, vars, spec, false, attackers.activation);
    Var loss = attribute_loss(pred, spec, it->second);
    ad::Gradients grads = tape.backward(loss);
    std::vector<RealArray> g = {grads[vars.hidden.weights], grads[vars.hidden.bias],
                                grads[vars.output.weights], grads[vars.output.bias]};
    train::ParamGroup group{named_arrays(attackers.heads[k], "attacker." + spec.name), false};
    train::adam_step(group, g, attackers.optim[k], batch_index);
    losses.push_back(loss.value().item());
  }
  return losses;
}

std::vector<double> attacker_step(const FrozenEncoder& encoder, const RealArray& x,
                                  const TargetTable& targets, AttackerSet& attackers,
                                  std::size_t batch_index) {
  return attacker_step_on_latents(encoder.latents(x), targets, attackers, batch_index);
}

std::vector<double> predict(const AdvHeadParams& head, const AttributeSpec& spec,
                            const RealArray& latents, ad::Activation activation) {
  Tape tape;
  Var z = tape.constant(latents);
  HeadVars vars = bind(tape, head, false);
  const RealArray& out = adv_forward(z, vars, spec, false, activation).value();
  std::vector<double> result(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (spec.is_categorical()) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < out.cols(); ++c) {
        if (out(r, c) > out(r, best)) best = c;
      }
      result[r] = static_cast<double>(best);
    } else {
      result[r] = out(r, 0);
    }
  }
  return result;
}

}  // namespace advx::adv
