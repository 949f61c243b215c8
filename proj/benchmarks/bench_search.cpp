#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include <kgsynth/mcts.hpp>

namespace {

// Containers in a random forest with a few cross references.
kgsynth::ApiGraph make_graph(std::size_t containers) {
  std::mt19937_64 rng(7);
  std::vector<kgsynth::ApiNode> nodes;
  std::vector<kgsynth::ApiEdge> edges;
  for (std::size_t i = 0; i < containers; ++i) {
    kgsynth::ApiNode n;
    n.id = "N" + std::to_string(i);
    n.name = n.id;
    n.kind = kgsynth::EntityKind::class_;
    n.ue_score = static_cast<double>(rng() % 500) / 100.0;
    if (i > 0 && rng() % 4 != 0) {
      edges.push_back({"N" + std::to_string(rng() % i), n.id, kgsynth::Relation::contains});
    }
    nodes.push_back(n);
  }
  for (std::size_t r = 0; r < containers / 2; ++r) {
    const std::size_t a = rng() % containers, b = rng() % containers;
    if (a != b) {
      edges.push_back({"N" + std::to_string(a), "N" + std::to_string(b),
                       kgsynth::Relation::references});
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return kgsynth::ApiGraph::from_parts(std::move(nodes), std::move(edges));
}

void BM_SearchAll(benchmark::State& state) {
  const kgsynth::ApiGraph g = make_graph(static_cast<std::size_t>(state.range(0)));
  kgsynth::SearchConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(kgsynth::search_all(g, config));
}
BENCHMARK(BM_SearchAll)->Arg(12)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_Iterate(benchmark::State& state) {
  const kgsynth::ApiGraph g = make_graph(50);
  const kgsynth::SearchSpace space(g);
  kgsynth::MctsSearch search(space, "N0", kgsynth::SearchConfig{}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(search.iterate());
}
BENCHMARK(BM_Iterate);

}  // namespace
