#include <benchmark/benchmark.h>

#include <random>

#include "advx/adversarial.hpp"
#include "advx/data.hpp"
#include "advx/evaluation.hpp"
#include "advx/synthetic.hpp"

using namespace advx;

namespace {

ad::RealArray random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  ad::RealArray a(rows, cols);
  for (auto& v : a.values()) v = n(rng);
  return a;
}

void BM_DenseForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix(batch, 500, 1);
  const auto w = random_matrix(500, 100, 2);
  const auto b = random_matrix(1, 100, 3);
  const ad::RealArray bias(std::vector<std::size_t>{100}, std::vector<double>(b.values().begin(), b.values().end()));
  for (auto _ : state) {
    ad::Tape tape;
    ad::Var wv = tape.leaf(w);
    ad::Var bv = tape.leaf(bias);
    ad::Var y = ad::tanh(ad::dense(tape.constant(x), wv, bv));
    auto g = tape.backward(ad::sum(y));
    benchmark::DoNotOptimize(g[wv].values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_DenseForwardBackward)->Arg(64)->Arg(256);

void BM_JointObjectiveStep(benchmark::State& state) {
  const std::size_t items = 500, batch = 64;
  Rng rng(4);
  const auto params = model::init_multvae({items, 100, 32, ad::Activation::kTanh}, rng);
  const std::vector<adv::AttributeSpec> specs = {adv::AttributeSpec::categorical("gender", {1.0, 1.0}, 400),
                                                 adv::AttributeSpec::continuous("age", 400)};
  std::vector<adv::AdvHeadParams> heads;
  for (const auto& s : specs) heads.push_back(adv::init_head(32, 128, s, rng));
  ad::RealArray x(batch, items);
  std::bernoulli_distribution coin(0.2);
  for (auto& v : x.values()) v = coin(rng);
  adv::TargetTable targets;
  for (std::size_t u = 0; u < batch; ++u) {
    targets["gender"].labels.push_back(static_cast<int>(u % 2));
    targets["age"].values.push_back(0.5);
  }
  adv::ObjectiveOptions options;
  options.beta = 0.2;
  options.dropout_keep = 0.5;
  for (auto _ : state) {
    ad::Tape tape;
    std::vector<adv::HeadVars> hv;
    for (const auto& h : heads) hv.push_back(adv::bind(tape, h));
    auto f = adv::total_objective(tape, x, targets, model::bind(tape, params.encoder),
                                  model::bind(tape, params.decoder), hv, specs, options, rng);
    auto g = tape.backward(f.total);
    benchmark::DoNotOptimize(&g);
  }
}
BENCHMARK(BM_JointObjectiveStep);

void BM_TopKNdcg(benchmark::State& state) {
  const auto items = static_cast<std::size_t>(state.range(0));
  const auto scores = random_matrix(1, items, 5);
  std::vector<data::ItemIndex> fold_in, holdout;
  for (std::size_t i = 0; i < items; i += 7) fold_in.push_back(static_cast<data::ItemIndex>(i));
  for (std::size_t i = 3; i < items; i += 29) holdout.push_back(static_cast<data::ItemIndex>(i));
  for (auto _ : state) {
    const auto ranked = eval::top_k(scores.values(), fold_in, 10);
    benchmark::DoNotOptimize(eval::ndcg_at_k(ranked, holdout, 10, fold_in));
  }
}
BENCHMARK(BM_TopKNdcg)->Arg(500)->Arg(3416);

void BM_KCore(benchmark::State& state) {
  data::SyntheticConfig sc;
  sc.n_users = static_cast<std::size_t>(state.range(0));
  sc.n_items = 500;
  sc.min_interactions = 3;
  sc.max_interactions = 60;
  const auto syn = data::make_synthetic(sc, 6);
  for (auto _ : state) benchmark::DoNotOptimize(data::k_core_filter(syn.dataset, 5).kept_users.size());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(syn.dataset.interactions()));
}
BENCHMARK(BM_KCore)->Arg(2000)->Arg(6040);

}  // namespace
BENCHMARK_MAIN();
