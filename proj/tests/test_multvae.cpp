#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "advx/errors.hpp"
#include "advx/multvae.hpp"
#include "advx/synthetic.hpp"
#include "advx/training.hpp"

using namespace advx;
using namespace advx::model;
using ad::RealArray;
using ad::Tape;
using ad::Var;

namespace {

RealArray random_binary(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(0.4);
  RealArray x(rows, cols);
  for (auto& v : x.values()) v = b(rng) ? 1.0 : 0.0;
  for (std::size_t r = 0; r < rows; ++r) x(r, r % cols) = 1.0;
  return x;
}

MultVaeParams small_params(std::size_t items, std::uint64_t seed) {
  Rng rng = make_stream(seed, {kModelStream});
  return init_multvae({items, 6, 3, ad::Activation::kTanh}, rng);
}

void zero(DenseParams& p) {
  for (auto& v : p.weights.values()) v = 0.0;
}

}  // namespace

TEST(Init, UniformWithinFanInBound) {
  Rng rng(1);
  DenseParams p = init_dense(16, 5, rng);
  for (double v : p.weights.values()) EXPECT_LE(std::abs(v), 0.25);
  for (double v : p.bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, DeterministicWithoutDropout) {
  const MultVaeParams p = small_params(8, 1);
  const RealArray x = random_binary(4, 8, 2);
  auto run = [&] {
    Tape t;
    Rng rng(7);
    LatentState s = encode(t, x, bind(t, p.encoder), ad::Activation::kTanh, 1.0, rng);
    return std::pair{RealArray(s.mu.value()), RealArray(s.logsigma.value())};
  };
  auto a = run();
  auto b = run();
  EXPECT_TRUE(ad::bit_equal(a.first, b.first));
  EXPECT_TRUE(ad::bit_equal(a.second, b.second));
}

TEST(Encode, ZeroWeightsGiveBiases) {
  MultVaeParams p = small_params(8, 1);
  zero(p.encoder.hidden);
  zero(p.encoder.mu);
  zero(p.encoder.logsigma);
  for (std::size_t i = 0; i < 3; ++i) {
    p.encoder.mu.bias[i] = 0.1 * static_cast<double>(i + 1);
    p.encoder.logsigma.bias[i] = -0.2 * static_cast<double>(i + 1);
  }
  Tape t;
  Rng rng(3);
  LatentState s = encode(t, random_binary(5, 8, 4), bind(t, p.encoder), ad::Activation::kTanh, 1.0, rng);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(s.mu.value()(r, c), p.encoder.mu.bias[c]);
      EXPECT_EQ(s.logsigma.value()(r, c), p.encoder.logsigma.bias[c]);
    }
  }
}

TEST(Encode, RowsAreIndependent) {
  const MultVaeParams p = small_params(8, 1);
  RealArray one(1, 8);
  one(0, 3) = 1.0;
  RealArray two(2, 8);
  two(0, 3) = 1.0;
  two(1, 3) = 1.0;
  Tape t;
  Rng rng(1);
  const EncoderVars ev = bind(t, p.encoder);
  LatentState a = encode(t, one, ev, ad::Activation::kTanh, 1.0, rng);
  LatentState b = encode(t, two, ev, ad::Activation::kTanh, 1.0, rng);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(a.mu.value()(0, c), b.mu.value()(0, c));
    EXPECT_EQ(b.mu.value()(0, c), b.mu.value()(1, c));
  }
}

TEST(Encode, ZeroRowAllowedNonBinaryRejected) {
  const MultVaeParams p = small_params(4, 1);
  Tape t;
  Rng rng(1);
  const EncoderVars ev = bind(t, p.encoder);
  EXPECT_NO_THROW(encode(t, RealArray(2, 4), ev, ad::Activation::kTanh, 1.0, rng));
  RealArray bad(1, 4);
  bad(0, 1) = 0.5;
  EXPECT_THROW(encode(t, bad, ev, ad::Activation::kTanh, 1.0, rng), ContractError);
}

TEST(PrepareInput, L2NormalizesRows) {
  RealArray x = RealArray::matrix({{1, 1, 0, 1}, {0, 0, 0, 0}});
  Rng rng(1);
  RealArray y = prepare_input(x, 1.0, rng);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0 / std::sqrt(3.0));
  EXPECT_EQ(y(0, 2), 0.0);
  EXPECT_EQ(y(1, 0), 0.0);
}

TEST(Reparameterize, EvaluationReturnsMuBitwise) {
  Tape t;
  LatentState s{t.leaf(RealArray::matrix({{0.3, -1.2}})), t.leaf(RealArray::matrix({{0.5, 0.1}})), {}};
  Rng rng(1);
  Var z = reparameterize(t, s, rng, false);
  EXPECT_TRUE(ad::bit_equal(z.value(), s.mu.value()));
}

TEST(Reparameterize, VanishingVariance) {
  Tape t;
  LatentState s{t.leaf(RealArray::matrix({{0.3, -1.2}})), t.leaf(RealArray::matrix({{-50.0, -50.0}})), {}};
  Rng rng(1);
  Var z = reparameterize(t, s, rng, true);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(z.value()[i], s.mu.value()[i], 1e-20);
}

TEST(Reparameterize, MonteCarloMean) {
  const std::size_t n = 100000;
  Tape t;
  LatentState s{t.leaf(RealArray(n, 1)), t.leaf(RealArray(n, 1)), {}};
  Rng rng(2024);
  Var z = reparameterize(t, s, rng, true);
  double mean = 0.0;
  for (double v : z.value().values()) mean += v;
  EXPECT_NEAR(mean / static_cast<double>(n), 0.0, 0.02);
}

TEST(Reparameterize, GradientReachesMuAndLogsigma) {
  Tape t;
  LatentState s{t.leaf(RealArray::matrix({{0.3}})), t.leaf(RealArray::matrix({{0.2}})), {}};
  Rng rng(9);
  Var z = reparameterize(t, s, rng, true);
  ad::Gradients g = t.backward(ad::sum(z));
  EXPECT_EQ(g[s.mu][0], 1.0);
  // dz/dls = exp(ls) * eps = z - mu
  EXPECT_NEAR(g[s.logsigma][0], z.value()[0] - 0.3, 1e-15);
}

TEST(Decode, ZeroWeightsGiveOutputBias) {
  MultVaeParams p = small_params(5, 2);
  zero(p.decoder.hidden);
  zero(p.decoder.output);
  for (std::size_t i = 0; i < 5; ++i) p.decoder.output.bias[i] = static_cast<double>(i);
  Tape t;
  Var logits = decode(t.constant(RealArray(3, 3, 0.7)), bind(t, p.decoder), ad::Activation::kTanh);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(logits.value()(r, c), static_cast<double>(c));
  }
}

TEST(Decode, EmptyBatchAndShapes) {
  const MultVaeParams p = small_params(5, 2);
  Tape t;
  Var logits = decode(t.constant(RealArray(0, 3)), bind(t, p.decoder), ad::Activation::kTanh);
  EXPECT_EQ(logits.value().rows(), 0u);
  EXPECT_EQ(logits.value().cols(), 5u);
  EXPECT_THROW(decode(t.constant(RealArray(2, 4)), bind(t, p.decoder), ad::Activation::kTanh),
               DimensionError);
  const RealArray x = random_binary(4, 5, 3);
  const RealArray scores = score_items(p, x, ad::Activation::kTanh);
  EXPECT_TRUE(scores.same_shape(x));
}

TEST(MultinomialNll, UniformLogitsOneInteraction) {
  Tape t;
  RealArray x(1, 4);
  x(0, 2) = 1.0;
  Var v = multinomial_nll(t.leaf(RealArray(1, 4, 0.25)), x);
  EXPECT_NEAR(v.value().item(), std::log(4.0), 1e-12);
}

TEST(MultinomialNll, ZeroInputIsZero) {
  Tape t;
  EXPECT_EQ(multinomial_nll(t.leaf(RealArray(2, 4, 1.5)), RealArray(2, 4)).value().item(), 0.0);
}

TEST(MultinomialNll, ShiftInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  RealArray logits(3, 6);
  for (auto& v : logits.values()) v = n(rng);
  RealArray shifted = logits;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 6; ++c) shifted(r, c) += 17.0 * static_cast<double>(r + 1);
  }
  const RealArray x = random_binary(3, 6, 8);
  Tape t;
  const double a = multinomial_nll(t.leaf(logits), x).value().item();
  const double b = multinomial_nll(t.leaf(shifted), x).value().item();
  EXPECT_NEAR(a, b, 1e-10);
}

TEST(MultinomialNll, LargeLogitsStayFinite) {
  Tape t;
  RealArray x(1, 3);
  x(0, 0) = 1.0;
  Var v = multinomial_nll(t.leaf(RealArray::matrix({{1000.0, -1000.0, 500.0}})), x);
  EXPECT_TRUE(std::isfinite(v.value().item()));
}

TEST(KlGaussian, ClosedForms) {
  Tape t;
  EXPECT_EQ(kl_gaussian(t.leaf(RealArray(2, 3)), t.leaf(RealArray(2, 3))).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(kl_gaussian(t.leaf(RealArray(1, 1, 1.0)), t.leaf(RealArray(1, 1))).value().item(), 0.5);
}

TEST(KlGaussian, NonNegative) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 1000; ++i) {
    Tape t;
    const double kl = kl_gaussian(t.leaf(RealArray(1, 1, n(rng))), t.leaf(RealArray(1, 1, n(rng)))).value().item();
    EXPECT_GE(kl, 0.0);
  }
}

TEST(MultVaeLoss, BetaZeroIsNll) {
  const MultVaeParams p = small_params(8, 5);
  const RealArray x = random_binary(5, 8, 6);
  Tape t;
  Rng rng(1);
  MultVaeForward f = multvae_loss(t, x, bind(t, p.encoder), bind(t, p.decoder), ad::Activation::kTanh,
                                  0.0, 0.5, rng);
  EXPECT_TRUE(ad::bit_equal(f.loss.value(), f.nll.value()));
}

TEST(MultVaeLoss, ZeroInformationEncoderHasNoKl) {
  MultVaeParams p = small_params(8, 5);
  zero(p.encoder.mu);
  zero(p.encoder.logsigma);
  const RealArray x = random_binary(5, 8, 6);
  Tape t;
  Rng rng(1);
  MultVaeForward f = multvae_loss(t, x, bind(t, p.encoder), bind(t, p.decoder), ad::Activation::kTanh,
                                  1.0, 1.0, rng);
  EXPECT_EQ(f.kl.value().item(), 0.0);
  EXPECT_EQ(f.loss.value().item(), f.nll.value().item());
}

TEST(MultVaeLoss, FiniteDifferenceOnFiveByEight) {
  const MultVaeParams p = small_params(8, 7);
  const RealArray x = random_binary(5, 8, 9);
  std::vector<RealArray> params;
  for (const auto& n : named_arrays(p)) params.push_back(*n.value);
  const double err = ad::finite_difference_check(
      [&](Tape& t, std::span<const Var> v) {
        EncoderVars enc{{v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}};
        DecoderVars dec{{v[6], v[7]}, {v[8], v[9]}};
        Rng rng(42);  // same noise on every evaluation
        return multvae_loss(t, x, enc, dec, ad::Activation::kTanh, 0.3, 1.0, rng).loss;
      },
      params);
  EXPECT_LT(err, 1e-4);
}

TEST(MultVaeLoss, DecreasesOverFirstEpochs) {
  // Running average (window 3) of the per-epoch loss, averaged over 5 seeds.
  data::SyntheticConfig sc;
  sc.n_users = 200;
  sc.n_items = 60;
  sc.n_tastes = 4;
  sc.taste_strength = 4.0;
  sc.min_interactions = 15;
  sc.max_interactions = 25;
  const auto syn = data::make_synthetic(sc, 3);
  std::vector<double> mean_loss(20, 0.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    train::TrainConfig cfg;
    cfg.epochs_adversarial = 20;
    cfg.hidden = 32;
    cfg.latent = 8;
    cfg.attributes = {};
    cfg.seeds = {seed, seed, seed};
    const auto folds = data::make_folds(sc.n_users, seed);
    const auto fold = train::prepare_fold(syn.dataset, syn.attributes, folds[0], cfg);
    const auto result = train::train_adversarial_phase(fold, cfg);
    for (std::size_t e = 0; e < 20; ++e) mean_loss[e] += result.log[e].mult_loss / 5.0;
  }
  double previous = 1e300;
  for (std::size_t e = 2; e < 20; ++e) {
    const double avg = (mean_loss[e] + mean_loss[e - 1] + mean_loss[e - 2]) / 3.0;
    EXPECT_LE(avg, previous) << "epoch " << e;
    previous = avg;
  }
}

TEST(Evaluation, RepeatedScoringIsIdentical) {
  const MultVaeParams p = small_params(8, 5);
  const RealArray x = random_binary(6, 8, 2);
  EXPECT_TRUE(ad::bit_equal(score_items(p, x, ad::Activation::kTanh),
                            score_items(p, x, ad::Activation::kTanh)));
}

TEST(Checksum, DetectsChanges) {
  MultVaeParams p = small_params(8, 5);
  const auto before = checksum(p);
  EXPECT_EQ(before, checksum(p));
  p.decoder.output.bias[0] += 1e-12;
  EXPECT_NE(before, checksum(p));
}
