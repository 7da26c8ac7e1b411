#pragma once

// MultVAE: encoder to Gaussian latent parameters, reparameterized sampling,
// decoder to item logits, and the multinomial-likelihood / KL loss.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "advx/autodiff.hpp"
#include "advx/rng.hpp"

namespace advx::model {

using ad::RealArray;
using ad::Tape;
using ad::Var;

struct DenseParams {
  RealArray weights;  // [in x out]
  RealArray bias;     // [out]
};

struct EncoderParams {
  DenseParams hidden;    // n_items -> d_hidden
  DenseParams mu;        // d_hidden -> d_latent
  DenseParams logsigma;  // d_hidden -> d_latent
};

struct DecoderParams {
  DenseParams hidden;  // d_latent -> d_hidden
  DenseParams output;  // d_hidden -> n_items
};

struct MultVaeParams {
  EncoderParams encoder;
  DecoderParams decoder;
};

struct ModelDims {
  std::size_t n_items = 0;
  std::size_t hidden = 600;
  std::size_t latent = 200;
  ad::Activation activation = ad::Activation::kTanh;
};

/// Uniform in +-1/sqrt(fan_in), zero biases.
DenseParams init_dense(std::size_t in, std::size_t out, Rng& rng);
MultVaeParams init_multvae(const ModelDims& dims, Rng& rng);

/// Named references to every array of a parameter set, in a fixed order.
struct NamedArray {
  std::string name;
  RealArray* value;
};
struct ConstNamedArray {
  std::string name;
  const RealArray* value;
};
void append_named(DenseParams& p, const std::string& prefix, std::vector<NamedArray>& out);
std::vector<NamedArray> named_arrays(MultVaeParams& p);
std::vector<ConstNamedArray> named_arrays(const MultVaeParams& p);
std::vector<ConstNamedArray> named_arrays(const EncoderParams& p);

/// FNV-1a over the raw bytes of every parameter value.
std::uint64_t checksum(const MultVaeParams& p);
std::uint64_t checksum(const EncoderParams& p);
bool bit_equal(const EncoderParams& a, const EncoderParams& b);
bool bit_equal(const DecoderParams& a, const DecoderParams& b);

// Parameters bound to a tape. Trainable parameters become leaves, frozen
// ones constants.
struct DenseVars {
  Var weights;
  Var bias;
};
struct EncoderVars {
  DenseVars hidden, mu, logsigma;
};
struct DecoderVars {
  DenseVars hidden, output;
};

DenseVars bind(Tape& tape, const DenseParams& p, bool trainable = true);
EncoderVars bind(Tape& tape, const EncoderParams& p, bool trainable = true);
DecoderVars bind(Tape& tape, const DecoderParams& p, bool trainable = true);

struct LatentState {
  Var mu;
  Var logsigma;
  Var z;  // unset until reparameterize()
};

/// Checks that x is binary, L2-normalizes each nonzero row and applies
/// inverted input dropout when dropout_keep < 1 (one Bernoulli draw per entry).
RealArray prepare_input(const RealArray& x, double dropout_keep, Rng& rng);

/// Encoder forward pass: prepared input -> hidden activation -> (mu, logsigma).
LatentState encode(Tape& tape, const RealArray& x, const EncoderVars& params,
                   ad::Activation activation, double dropout_keep, Rng& rng);

/// training: z = mu + exp(logsigma) * eps with eps ~ N(0, I) drawn from rng.
/// Otherwise z is mu itself.
Var reparameterize(Tape& tape, LatentState& state, Rng& rng, bool training);

/// Decoder forward pass to unnormalized item logits.
Var decode(Var z, const DecoderVars& params, ad::Activation activation);

/// -(1/batch) * sum_u sum_i x_ui * log_softmax(logits)_ui.
Var multinomial_nll(Var logits, const RealArray& x);

/// (1/batch) * sum_u sum_d 0.5 * (exp(2 ls) + mu^2 - 1 - 2 ls).
Var kl_gaussian(Var mu, Var logsigma);

struct MultVaeForward {
  LatentState latent;
  Var logits;
  Var nll;
  Var kl;
  Var loss;  // nll + beta * kl
};

/// Full forward pass of the training objective on one batch.
MultVaeForward multvae_loss(Tape& tape, const RealArray& x, const EncoderVars& encoder,
                            const DecoderVars& decoder, ad::Activation activation, double beta,
                            double dropout_keep, Rng& rng, bool training = true);

/// Deterministic encoder output mu for a batch (no dropout, no sampling).
RealArray encode_mean(const EncoderParams& params, const RealArray& x, ad::Activation activation);

/// Item scores for a batch: decode(mu(x)).
RealArray score_items(const MultVaeParams& params, const RealArray& x, ad::Activation activation);

}  // namespace advx::model
