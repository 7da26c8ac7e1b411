#pragma once

// Adversarial heads attached to the latent vector behind gradient reversal,
// the summed multi-attribute loss, the joint training objective and the
// standalone attacker used once the recommender is frozen.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "advx/autodiff.hpp"
#include "advx/multvae.hpp"
#include "advx/optim.hpp"
#include "advx/rng.hpp"

namespace advx::adv {

using ad::RealArray;
using ad::Tape;
using ad::Var;

enum class AttributeKind { kCategorical, kContinuous };

struct AttributeSpec {
  std::string name;
  AttributeKind kind = AttributeKind::kCategorical;
  std::size_t n_classes = 0;          // categorical only
  std::vector<double> class_weights;  // categorical only, one per class
  double lambda = 0.0;

  static AttributeSpec categorical(std::string name, std::vector<double> class_weights,
                                   double lambda = 0.0);
  static AttributeSpec continuous(std::string name, double lambda = 0.0);

  bool is_categorical() const noexcept { return kind == AttributeKind::kCategorical; }
  std::size_t output_width() const noexcept { return is_categorical() ? n_classes : 1; }
};

/// Throws ConfigError unless the spec is internally consistent.
void validate(const AttributeSpec& spec);

/// attribute name -> gradient reversal factor.
using LambdaConfig = std::map<std::string, double>;

/// Copies lambdas into the specs. Every spec needs an entry; values must be >= 0.
void apply_lambdas(std::span<AttributeSpec> specs, const LambdaConfig& lambdas);

/// Per-user target values of one attribute. Categorical attributes fill
/// `labels`, continuous ones fill `values` (normalized to [0, 1]).
struct AttributeColumn {
  std::vector<int> labels;
  std::vector<double> values;
};
using TargetTable = std::map<std::string, AttributeColumn>;

/// Rows `rows` of every column, in that order.
TargetTable select_rows(const TargetTable& table, std::span<const std::size_t> rows);

struct AdvHeadParams {
  model::DenseParams hidden;  // d_latent -> d_adv_hidden
  model::DenseParams output;  // d_adv_hidden -> n_classes or 1
};

struct HeadVars {
  model::DenseVars hidden;
  model::DenseVars output;
};

AdvHeadParams init_head(std::size_t latent, std::size_t hidden, const AttributeSpec& spec,
                        Rng& rng);
HeadVars bind(Tape& tape, const AdvHeadParams& p, bool trainable = true);
std::vector<model::NamedArray> named_arrays(AdvHeadParams& p, const std::string& prefix);

/// One intermediate layer then a linear output. Categorical heads return
/// logits; continuous heads return sigmoid(output) so predictions live in
/// [0, 1]. With `reversed`, z first passes through grl(spec.lambda).
Var adv_forward(Var z, const HeadVars& head, const AttributeSpec& spec, bool reversed,
                ad::Activation activation = ad::Activation::kTanh);

/// Weighted mean of per-row cross-entropy:
/// sum_i w[y_i] * -log_softmax(logits_i)[y_i] / sum_i w[y_i].
Var weighted_ce(Var logits, std::span<const int> labels, std::span<const double> weights);

/// Mean of squared differences between pred[batch x 1] and target.
Var mse(Var pred, std::span<const double> target);

/// weighted_ce or mse depending on the attribute kind.
Var attribute_loss(Var prediction, const AttributeSpec& spec, const AttributeColumn& column);

struct HeadBinding {
  const HeadVars* head;
  const AttributeSpec* spec;
};

struct AdvxLoss {
  Var total;
  std::vector<Var> per_attribute;  // same order as the bindings
};

/// Sum over heads of each attribute's loss, each head behind its own GRL.
AdvxLoss advx_loss(Var z, std::span<const HeadBinding> heads, const TargetTable& targets,
                   ad::Activation activation = ad::Activation::kTanh);

/// Which latent the adversarial heads read during joint training.
enum class AdversaryInput { kSampled, kMean };

struct ObjectiveOptions {
  ad::Activation activation = ad::Activation::kTanh;  // encoder/decoder
  ad::Activation head_activation = ad::Activation::kTanh;
  double beta = 0.0;
  double dropout_keep = 1.0;
  AdversaryInput adversary_input = AdversaryInput::kSampled;
};

struct ObjectiveForward {
  model::MultVaeForward mult;
  AdvxLoss adv;
  Var total;
};

/// MultVAE loss plus the adversarial loss on the sampled z (or on mu). One
/// backward pass yields gradients for encoder, decoder and every head.
ObjectiveForward total_objective(Tape& tape, const RealArray& x, const TargetTable& targets,
                                 const model::EncoderVars& encoder,
                                 const model::DecoderVars& decoder,
                                 std::span<const HeadVars> heads,
                                 std::span<const AttributeSpec> specs,
                                 const ObjectiveOptions& options, Rng& model_rng);

/// Encoder snapshot that can be read but never updated.
class FrozenEncoder {
 public:
  FrozenEncoder(model::EncoderParams params, ad::Activation activation);

  const model::EncoderParams& params() const noexcept { return params_; }
  ad::Activation activation() const noexcept { return activation_; }
  std::uint64_t checksum() const { return model::checksum(params_); }

  /// Deterministic latents (mu) for a batch of users.
  RealArray latents(const RealArray& x) const;

  /// A parameter group over the frozen arrays; adam_step rejects it.
  train::ParamGroup param_group();

 private:
  model::EncoderParams params_;
  ad::Activation activation_;
};

struct AttackerSet {
  std::vector<AttributeSpec> specs;  // lambdas unused
  std::vector<AdvHeadParams> heads;
  std::vector<train::AdamState> optim;
  ad::Activation activation = ad::Activation::kTanh;
};

/// Fresh attackers, one per attribute, drawn from `rng`.
AttackerSet make_attackers(std::span<const AttributeSpec> specs, std::size_t latent,
                           std::size_t hidden, train::AdamHyper hyper, Rng& rng);

/// One optimization step of every attacker on precomputed latents
/// (no GRL). Returns the per-attribute losses before the update.
std::vector<double> attacker_step_on_latents(const RealArray& latents, const TargetTable& targets,
                                             AttackerSet& attackers, std::size_t batch_index = 0);

/// Same as above, computing the latents with the frozen encoder.
std::vector<double> attacker_step(const FrozenEncoder& encoder, const RealArray& x,
                                  const TargetTable& targets, AttackerSet& attackers,
                                  std::size_t batch_index = 0);

/// Forward pass without reversal; categorical -> argmax class as double,
/// continuous -> predicted value. One entry per row.
std::vector<double> predict(const AdvHeadParams& head, const AttributeSpec& spec,
                            const RealArray& latents,
                            ad::Activation activation = ad::Activation::kTanh);

}  // namespace advx::adv
