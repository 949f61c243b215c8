#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include <kgsynth/postproc.hpp>

namespace {

std::u32string random_text(std::mt19937_64& rng, std::size_t n) {
  std::u32string s(n, U'a');
  for (auto& c : s) c = U'a' + static_cast<char32_t>(rng() % 26);
  return s;
}

void BM_Levenshtein(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::u32string a = random_text(rng, n), b = random_text(rng, n);
  for (auto _ : state) benchmark::DoNotOptimize(kgsynth::levenshtein(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Levenshtein)->RangeMultiplier(4)->Range(16, 4096)->Complexity();

void BM_LevenshteinUtf8(benchmark::State& state) {
  const std::string a = "Implement a shopping cart helper that keeps the most recent entries.";
  const std::string b = "Implement a parking finder helper that rejects duplicate values.";
  for (auto _ : state) benchmark::DoNotOptimize(kgsynth::similarity(a, b));
}
BENCHMARK(BM_LevenshteinUtf8);

}  // namespace
