// Parallel kernels against their serial references on training- and
// evaluation-sized inputs.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "kgsp/kernels.hpp"
#include "kgsp/rng.hpp"

namespace {

using namespace kgsp;

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

// Batch 64 through the first two layers of a head: 64 x 32 * 32 x 768 and
// 64 x 768 * 768 x 1024.
template <bool kSerial>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_vector(m * k, 1), b = random_vector(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (kSerial)
      kernels::serial::gemm(a, b, c, m, k, n);
    else
      kernels::gemm(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(
      2.0 * static_cast<double>(m * k * n), benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm<true>)->Name("gemm/serial")->Args({64, 32, 768})->Args({64, 768, 1024});
BENCHMARK(BM_Gemm<false>)->Name("gemm/parallel")->Args({64, 32, 768})->Args({64, 768, 1024});

struct EvalInputs {
  std::size_t n = 0, ns = 0, no = 0;
  std::vector<double> p, q;
  std::vector<std::uint8_t> cells;
};

// n images over a 16 x 12 space (or larger), a third of the cells seen.
EvalInputs eval_inputs(std::size_t n, std::size_t ns, std::size_t no) {
  EvalInputs in{n, ns, no, random_vector(n * ns, 3), random_vector(n * no, 4), {}};
  in.cells.resize(ns * no);
  for (std::size_t i = 0; i < in.cells.size(); ++i)
    in.cells[i] = i % 3 == 0 ? kernels::kSeen : kernels::kUnseen;
  return in;
}

template <bool kSerial>
void BM_GroupTops(benchmark::State& state) {
  const auto in = eval_inputs(static_cast<std::size_t>(state.range(0)),
                              static_cast<std::size_t>(state.range(1)),
                              static_cast<std::size_t>(state.range(2)));
  std::vector<kernels::GroupTops> out(in.n);
  for (auto _ : state) {
    if constexpr (kSerial)
      kernels::serial::group_tops(in.p, in.q, in.n, in.ns, in.no, in.cells, out);
    else
      kernels::group_tops(in.p, in.q, in.n, in.ns, in.no, in.cells, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.n));
}
BENCHMARK(BM_GroupTops<true>)->Name("group_tops/serial")->Args({3000, 16, 12})->Args({3000, 115, 245});
BENCHMARK(BM_GroupTops<false>)->Name("group_tops/parallel")->Args({3000, 16, 12})->Args({3000, 115, 245});

template <bool kSerial>
void BM_ArgmaxBatch(benchmark::State& state) {
  auto in = eval_inputs(static_cast<std::size_t>(state.range(0)),
                        static_cast<std::size_t>(state.range(1)),
                        static_cast<std::size_t>(state.range(2)));
  for (auto& c : in.cells) c = c == kernels::kSeen ? 0 : 1;
  std::vector<std::int64_t> out(in.n);
  for (auto _ : state) {
    if constexpr (kSerial)
      kernels::serial::argmax_outer_batch(in.p, in.q, in.n, in.ns, in.no, in.cells, out);
    else
      kernels::argmax_outer_batch(in.p, in.q, in.n, in.ns, in.no, in.cells, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.n));
}
BENCHMARK(BM_ArgmaxBatch<true>)->Name("argmax_outer_batch/serial")->Args({3000, 16, 12})->Args({3000, 115, 245});
BENCHMARK(BM_ArgmaxBatch<false>)->Name("argmax_outer_batch/parallel")->Args({3000, 16, 12})->Args({3000, 115, 245});

template <bool kSerial>
void BM_Cosine(benchmark::State& state) {
  const auto na = static_cast<std::size_t>(state.range(0));
  const auto nb = static_cast<std::size_t>(state.range(1));
  const std::size_t dim = 300;
  const auto a = random_vector(na * dim, 5), b = random_vector(nb * dim, 6);
  std::vector<double> out(na * nb);
  for (auto _ : state) {
    if constexpr (kSerial)
      kernels::serial::cosine_matrix(a, na, b, nb, dim, out);
    else
      kernels::cosine_matrix(a, na, b, nb, dim, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Cosine<true>)->Name("cosine_matrix/serial")->Args({16, 12})->Args({115, 245});
BENCHMARK(BM_Cosine<false>)->Name("cosine_matrix/parallel")->Args({16, 12})->Args({115, 245});

}  // namespace

BENCHMARK_MAIN();
