#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include <kgsynth/postproc.hpp>

namespace {

std::vector<kgsynth::QuestionCodeTuple> make_tuples(std::size_t n) {
  std::mt19937_64 rng(3);
  const auto text = [&](std::size_t len) {
    std::string s(len, 'a');
    for (auto& c : s) c = static_cast<char>('a' + rng() % 26);
    return s;
  };
  std::vector<kgsynth::QuestionCodeTuple> out(n);
  for (auto& t : out) {
    t.question = text(150 + rng() % 150);
    t.code = text(300 + rng() % 300);
    t.api_nodes = {"A"};
  }
  return out;
}

void BM_Dedup(benchmark::State& state) {
  const auto tuples = make_tuples(static_cast<std::size_t>(state.range(0)));
  kgsynth::DedupOptions options;
  options.prefilter = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(kgsynth::dedup(tuples, {}, options));
}
BENCHMARK(BM_Dedup)
    ->Args({200, 1})
    ->Args({200, 0})
    ->Args({800, 1})
    ->Unit(benchmark::kMillisecond);

}  // namespace
