#include "advx/multvae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "advx/errors.hpp"

namespace advx::model {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const RealArray& a) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(a.data());
  for (std::size_t i = 0; i < a.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

void append_const(const DenseParams& p, const std::string& prefix,
                  std::vector<ConstNamedArray>& out) {
  out.push_back({prefix + ".weights", &p.weights});
  out.push_back({prefix + ".bias", &p.bias});
}

}  // namespace

DenseParams init_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  DenseParams p{RealArray(in, out), RealArray::vector(std::vector<double>(out, 0.0))};
  for (double& w : p.weights.values()) w = dist(rng);
  return p;
}

MultVaeParams init_multvae(const ModelDims& dims, Rng& rng) {
  if (dims.n_items == 0 || dims.hidden == 0 || dims.latent == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  MultVaeParams p;
  p.encoder.hidden = init_dense(dims.n_items, dims.hidden, rng);
  p.encoder.mu = init_dense(dims.hidden, dims.latent, rng);
  p.encoder.logsigma = init_dense(dims.hidden, dims.latent, rng);
  p.decoder.hidden = init_dense(dims.latent, dims.hidden, rng);
  p.decoder.output = init_dense(dims.hidden, dims.n_items, rng);
  return p;
}

void append_named(DenseParams& p, const std::string& prefix, std::vector<NamedArray>& out) {
  out.push_back({prefix + ".weights", &p.weights});
  out.push_back({prefix + ".bias", &p.bias});
}

std::vector<NamedArray> named_arrays(MultVaeParams& p) {
  std::vector<NamedArray> out;
  append_named(p.encoder.hidden, "encoder.hidden", out);
  append_named(p.encoder.mu, "encoder.mu", out);
  append_named(p.encoder.logsigma, "encoder.logsigma", out);
  append_named(p.decoder.hidden, "decoder.hidden", out);
  append_named(p.decoder.output, "decoder.output", out);
  return out;
}

std::vector<ConstNamedArray> named_arrays(const EncoderParams& p) {
  std::vector<ConstNamedArray> out;
  append_const(p.hidden, "encoder.hidden", out);
  append_const(p.mu, "encoder.mu", out);
  append_const(p.logsigma, "encoder.logsigma", out);
  return out;
}

std::vector<ConstNamedArray> named_arrays(const MultVaeParams& p) {
  auto out = named_arrays(p.encoder);
  append_const(p.decoder.hidden, "decoder.hidden", out);
  append_const(p.decoder.output, "decoder.output", out);
  return out;
}

std::uint64_t checksum(const MultVaeParams& p) {
  std::uint64_t h = kFnvOffset;
  for (const auto& a : named_arrays(p)) fnv_mix(h, *a.value);
  return h;
}

std::uint64_t checksum(const EncoderParams& p) {
  std::uint64_t h = kFnvOffset;
  for (const auto& a : named_arrays(p)) fnv_mix(h, *a.value);
  return h;
}

bool bit_equal(const EncoderParams& a, const EncoderParams& b) {
  return ad::bit_equal(a.hidden.weights, b.hidden.weights) &&
         ad::bit_equal(a.hidden.bias, b.hidden.bias) &&
         ad::bit_equal(a.mu.weights, b.mu.weights) && ad::bit_equal(a.mu.bias, b.mu.bias) &&
         ad::bit_equal(a.logsigma.weights, b.logsigma.weights) &&
         ad::bit_equal(a.logsigma.bias, b.logsigma.bias);
}

bool bit_equal(const DecoderParams& a, const DecoderParams& b) {
  return ad::bit_equal(a.hidden.weights, b.hidden.weights) &&
         ad::bit_equal(a.hidden.bias, b.hidden.bias) &&
         ad::bit_equal(a.output.weights, b.output.weights) &&
         ad::bit_equal(a.output.bias, b.output.bias);
}

DenseVars bind(Tape& tape, const DenseParams& p, bool trainable) {
  if (trainable) return {tape.leaf(p.weights), tape.leaf(p.bias)};
  return {tape.constant(p.weights), tape.constant(p.bias)};
}

EncoderVars bind(Tape& tape, const EncoderParams& p, bool trainable) {
  return {bind(tape, p.hidden, trainable), bind(tape, p.mu, trainable),
          bind(tape, p.logsigma, trainable)};
}

DecoderVars bind(Tape& tape, const DecoderParams& p, bool trainable) {
  return {bind(tape, p.hidden, trainable), bind(tape, p.output, trainable)};
}

RealArray prepare_input(const RealArray& x, double dropout_keep, Rng& rng) {
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ConfigError("dropout keep probability must be in (0, 1]");
  }
  if (x.rank() != 2) throw DimensionError("input must be [batch x n_items], got " + x.shape_string());
  RealArray out = x;
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double v = x(r, c);
      if (v != 0.0 && v != 1.0) {
        throw ContractError("input must be binary; row " + std::to_string(r) + " column " +
                            std::to_string(c) + " holds " + std::to_string(v));
      }
      sq += v;
    }
    if (sq > 0.0) {
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t c = 0; c < n; ++c) out(r, c) *= inv;
    }
  }
  if (dropout_keep < 1.0) {
    std::bernoulli_distribution keep(dropout_keep);
    const double rescale = 1.0 / dropout_keep;
    for (double& v : out.values()) v = keep(rng) ? v * rescale : 0.0;
  }
  return out;
}

LatentState encode(Tape& tape, const RealArray& x, const EncoderVars& params,
                   ad::Activation activation, double dropout_keep, Rng& rng) {
  const RealArray& w = params.hidden.weights.value();
  if (x.rank() != 2 || x.cols() != w.rows()) {
    throw DimensionError("encode: input " + x.shape_string() + " does not match encoder input " +
                         std::to_string(w.rows()));
  }
  Var input = tape.constant(prepare_input(x, dropout_keep, rng));
  Var h = ad::activate(ad::dense(input, params.hidden.weights, params.hidden.bias), activation);
  LatentState state;
  state.mu = ad::dense(h, params.mu.weights, params.mu.bias);
  state.logsigma = ad::dense(h, params.logsigma.weights, params.logsigma.bias);
  return state;
}

Var reparameterize(Tape& tape, LatentState& state, Rng& rng, bool training) {
  const RealArray& mu = state.mu.value();
  if (!mu.same_shape(state.logsigma.value())) {
    throw DimensionError("reparameterize: mu " + mu.shape_string() + " vs logsigma " +
                         state.logsigma.value().shape_string());
  }
  if (!training) {
    state.z = state.mu;
    return state.z;
  }
  RealArray eps = RealArray::zeros_like(mu);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& e : eps.values()) e = normal(rng);
  Var noise = tape.constant(std::move(eps));
  state.z = ad::add(state.mu, ad::mul(ad::exp(state.logsigma), noise));
  return state.z;
}

Var decode(Var z, const DecoderVars& params, ad::Activation activation) {
  const RealArray& w = params.hidden.weights.value();
  if (z.value().rank() != 2 || z.value().cols() != w.rows()) {
    throw DimensionError("decode: latent " + z.value().shape_string() +
                         " does not match decoder input " + std::to_string(w.rows()));
  }
  Var h = ad::activate(ad::dense(z, params.hidden.weights, params.hidden.bias), activation);
  return ad::dense(h, params.output.weights, params.output.bias);
}

Var multinomial_nll(Var logits, const RealArray& x) {
  const RealArray& l = logits.value();
  if (!l.same_shape(x)) {
    throw DimensionError("multinomial_nll: logits " + l.shape_string() + " vs x " +
                         x.shape_string());
  }
  const std::size_t batch = l.rows();
  const std::size_t n = l.cols();
  RealArray softmax = RealArray::zeros_like(l);
  std::vector<double> row_mass(batch, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) m = std::max(m, l(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double e = std::exp(l(r, c) - m);
      softmax(r, c) = e;
      s += e;
    }
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < n; ++c) {
      softmax(r, c) /= s;
      const double xv = x(r, c);
      if (xv != 0.0) {
        total -= xv * (l(r, c) - lse);
        row_mass[r] += xv;
      }
    }
  }
  const double inv_batch = batch == 0 ? 0.0 : 1.0 / static_cast<double>(batch);
  return logits.tape().record(
      RealArray::scalar(total * inv_batch), {logits},
      [softmax = std::move(softmax), row_mass = std::move(row_mass), x, inv_batch](
          const RealArray& g, std::span<const bool>) {
        RealArray d = RealArray::zeros_like(softmax);
        const double scale = g[0] * inv_batch;
        for (std::size_t r = 0; r < d.rows(); ++r) {
          for (std::size_t c = 0; c < d.cols(); ++c) {
            d(r, c) = scale * (softmax(r, c) * row_mass[r] - x(r, c));
          }
        }
        return std::vector<std::optional<RealArray>>{std::move(d)};
      },
      "multinomial_nll");
}

Var kl_gaussian(Var mu, Var logsigma) {
  const RealArray& m = mu.value();
  const RealArray& ls = logsigma.value();
  if (!m.same_shape(ls)) {
    throw DimensionError("kl_gaussian: mu " + m.shape_string() + " vs logsigma " +
                         ls.shape_string());
  }
  const std::size_t batch = m.rows();
  const double inv_batch = batch == 0 ? 0.0 : 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    total += 0.5 * (std::exp(2.0 * ls[i]) + m[i] * m[i] - 1.0 - 2.0 * ls[i]);
  }
  return mu.tape().record(
      RealArray::scalar(total * inv_batch), {mu, logsigma},
      [mu, logsigma, inv_batch](const RealArray& g, std::span<const bool> wants) {
        std::vector<std::optional<RealArray>> d(2);
        const double scale = g[0] * inv_batch;
        if (wants[0]) {
          RealArray dm = mu.value();
          dm *= scale;
          d[0] = std::move(dm);
        }
        if (wants[1]) {
          const RealArray& ls = logsigma.value();
          RealArray dl = RealArray::zeros_like(ls);
          for (std::size_t i = 0; i < dl.size(); ++i) dl[i] = scale * (std::exp(2.0 * ls[i]) - 1.0);
          d[1] = std::move(dl);
        }
        return d;
      },
      "kl_gaussian");
}

MultVaeForward multvae_loss(Tape& tape, const RealArray& x, const EncoderVars& encoder,
                            const DecoderVars& decoder, ad::Activation activation, double beta,
                            double dropout_keep, Rng& rng, bool training) {
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  MultVaeForward f;
  f.latent = encode(tape, x, encoder, activation, training ? dropout_keep : 1.0, rng);
  Var z = reparameterize(tape, f.latent, rng, training);
  f.logits = decode(z, decoder, activation);
  f.nll = multinomial_nll(f.logits, x);
  f.kl = kl_gaussian(f.latent.mu, f.latent.logsigma);
  f.loss = beta == 0.0 ? f.nll : ad::add(f.nll, ad::scale(f.kl, beta));
  return f;
}

RealArray encode_mean(const EncoderParams& params, const RealArray& x, ad::Activation activation) {
  Tape tape;
  Rng unused(0);
  EncoderVars vars = bind(tape, params, false);
  LatentState state = encode(tape, x, vars, activation, 1.0, unused);
  return state.mu.value();
}

RealArray score_items(const MultVaeParams& params, const RealArray& x, ad::Activation activation) {
  Tape tape;
  Rng unused(0);
  EncoderVars enc = bind(tape, params.encoder, false);
  DecoderVars dec = bind(tape, params.decoder, false);
  LatentState state = encode(tape, x, enc, activation, 1.0, unused);
  return decode(state.mu, dec, activation).value();
}

}  // namespace advx::model
