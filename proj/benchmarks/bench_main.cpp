#include <random>

#include <benchmark/benchmark.h>

#include "strider/finetune.hpp"
#include "strider/ops.hpp"
#include "strider/ssm.hpp"
#include "strider/synth.hpp"

using namespace strider;

namespace {

Tensor<float> uniform(Shape shape, std::mt19937_64& rng, float lo, float hi) {
  Tensor<float> t(std::move(shape));
  std::uniform_real_distribution<float> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

struct ScanInputs {
  Tensor<float> a_bar, b_bar, c, x;
};

ScanInputs scan_inputs(std::int64_t L) {
  std::mt19937_64 rng(1);
  const std::int64_t B = 4, E = 128, N = 16;
  auto d = ssm::discretize(uniform({B, L, E}, rng, 0.001f, 0.1f), uniform({E, N}, rng, -4, -0.1f),
                           uniform({B, L, N}, rng, -1, 1));
  return {std::move(d.a_bar), std::move(d.b_bar), uniform({B, L, N}, rng, -1, 1),
          uniform({B, L, E}, rng, -1, 1)};
}

void BM_ScanSequential(benchmark::State& state) {
  auto in = scan_inputs(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ssm::scan_sequential(in.a_bar, in.b_bar, in.c, in.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ScanSequential)->Arg(64)->Arg(401)->Arg(1024);

void BM_ScanParallel(benchmark::State& state) {
  auto in = scan_inputs(state.range(0));
  const int threads = static_cast<int>(state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(ssm::scan_parallel(in.a_bar, in.b_bar, in.c, in.x, 32, threads));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ScanParallel)->Args({401, 1})->Args({401, 4})->Args({1024, 1})->Args({1024, 4});

void BM_Attention(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const std::int64_t L = state.range(0), D = 64;
  auto q = uniform({2, L, D}, rng, -1, 1), k = uniform({2, L, D}, rng, -1, 1), v = uniform({2, L, D}, rng, -1, 1);
  for (auto _ : state) {
    Graph<float> g(false);
    benchmark::DoNotOptimize(ops::attention(g.constant(q), g.constant(k), g.constant(v), 4, 64).value());
  }
}
BENCHMARK(BM_Attention)->Arg(128)->Arg(401)->Arg(1024);

void BM_Matmul(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const std::int64_t n = state.range(0);
  auto a = uniform({n, n}, rng, -1, 1), b = uniform({n, n}, rng, -1, 1);
  for (auto _ : state) {
    Graph<float> g(false);
    benchmark::DoNotOptimize(ops::matmul(g.constant(a), g.constant(b)).value());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_ExtractGolden(benchmark::State& state) {
  auto records = read_capture_file(std::filesystem::path(STRIDER_FIXTURE_DIR) / "golden.pcap");
  for (auto _ : state) benchmark::DoNotOptimize(extract_flow_samples(records, ReprConfig{}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(records.size()));
}
BENCHMARK(BM_ExtractGolden);

void BM_ClassifyBatch(benchmark::State& state) {
  ReprConfig repr;
  SynthConfig sc;
  sc.classes = {{32}, {32}};
  auto samples = synth_flow_samples(sc, repr);
  ModelConfig m;
  m.kind = state.range(0) ? BlockKind::trans : BlockKind::mamba;
  m.d_enc = 64, m.e_enc = 128, m.n_enc_blocks = 2, m.n_heads = 4;
  m.match(repr);
  Model<float> model(m, 1, ModelParts{.n_classes = 2});
  for (auto _ : state) benchmark::DoNotOptimize(predict_logits(model, samples, 64));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(samples.size()));
}
BENCHMARK(BM_ClassifyBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
