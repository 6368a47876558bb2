#include <benchmark/benchmark.h>

#include <random>

#include "come/datakit.hpp"
#include "come/editengine.hpp"
#include "come/unlearning.hpp"

namespace {

using namespace come;
using numerics::Matrix;
using numerics::Vector;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (auto& x : m.values()) x = n(rng);
  return m;
}


// Untrained default-size model over a small synthetic vocabulary.
struct Fixture {
  std::vector<data::DatasetRecord> records;
  model::ModelState state;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    data::SynthSpec spec;
    spec.n_facts = 64;
    auto records = data::generate_synthetic(spec);
    auto state = model::ModelState::initialize(model::ModelConfig{}, data::build_tokenizer(records));
    return Fixture{std::move(records), std::move(state)};
  }();
  return f;
}

void BM_Matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(numerics::matmul(a, b));
  st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256)->Complexity(benchmark::oNCubed);

void BM_SolveSpd(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix k = random_matrix(n, 2 * n, 3);
  const Matrix m = numerics::matmul(k, k.transpose()) + Matrix::identity(n);
  const Matrix rhs = random_matrix(n, 8, 4);
  for (auto _ : st) benchmark::DoNotOptimize(numerics::solve_spd(m, rhs));
}
BENCHMARK(BM_SolveSpd)->RangeMultiplier(2)->Range(32, 256);

void BM_Forward(benchmark::State& st) {
  const auto& f = fixture();
  const auto tokens = encode_prompt(f.state.tokenizer(), "", data::to_request(f.records[0]).prompts.base);
  for (auto _ : st) benchmark::DoNotOptimize(model::forward(f.state, tokens));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMicrosecond);

void BM_BuildMask(benchmark::State& st) {
  const Vector u = random_matrix(static_cast<std::size_t>(st.range(0)), 1, 5).column(0);
  for (auto _ : st) benchmark::DoNotOptimize(unlearn::build_mask(u, 20.0));
}
BENCHMARK(BM_BuildMask)->Arg(64)->Arg(4096);

void BM_FitResidual(benchmark::State& st) {
  const auto& f = fixture();
  const auto req = data::to_request(f.records[0]);
  numerics::OptimizerConfig opt;
  for (auto _ : st)
    benchmark::DoNotOptimize(edit::fit_residual(f.state, req, req.triple.new_object, 3, opt));
}
BENCHMARK(BM_FitResidual)->Unit(benchmark::kMillisecond);

void BM_EditBatch(benchmark::State& st) {
  const auto& f = fixture();
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto reqs = data::to_requests({f.records.begin(), f.records.begin() + static_cast<long>(n)});
  edit::EditConfig ec;
  ec.target_layers = {1, 2, 3};
  ec.mode = st.range(1) ? edit::EditMode::kCome : edit::EditMode::kMemit;
  edit::CovarianceMap covs;
  for (auto l : ec.target_layers) covs[l] = Matrix::identity(f.state.config().d_mlp);
  for (auto _ : st) benchmark::DoNotOptimize(edit::edit_batch(f.state, reqs, ec, covs));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * n));
}
BENCHMARK(BM_EditBatch)->ArgNames({"N", "come"})->Args({8, 0})->Args({8, 1})->Args({32, 1})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
