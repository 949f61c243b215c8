#include "kgsynth/mcts.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "kgsynth/error.hpp"

namespace kgsynth {

using nlohmann::json;

void SearchConfig::validate() const {
  if (!(exploration_c > 0.0) || !std::isfinite(exploration_c)) {
    throw Error(ErrorKind::domain, "exploration_c must be a positive finite number");
  }
  if (iterations_per_root < 1) throw Error(ErrorKind::domain, "iterations_per_root must be >= 1");
  if (top_k < 1) throw Error(ErrorKind::domain, "top_k must be >= 1");
  if (min_path_len < 2) throw Error(ErrorKind::domain, "min_path_len must be >= 2");
}

double ucb1(const SearchNodeStats& stats, uint64_t n_total, double c) {
  if (n_total < 1) throw Error(ErrorKind::domain, "ucb1 needs n_total >= 1");
  if (stats.visits == 0) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(stats.visits);
  return stats.total_reward / n + c * std::sqrt(std::log(static_cast<double>(n_total)) / n);
}

void backup(std::span<const std::string> path, double reward, StatsTable& table) {
  for (const auto& key : path) {
    auto [it, inserted] = table.try_emplace(key);
    SearchNodeStats& stats = it->second;
    if (inserted) {
      const auto sep = key.rfind('>');
      stats.node = sep == std::string::npos ? key : key.substr(sep + 1);
    }
    stats.visits += 1;
    stats.total_reward += reward;
    stats.mean_reward = stats.total_reward / static_cast<double>(stats.visits);
  }
}

SearchSpace::SearchSpace(const ApiGraph& graph) : graph_(graph) {
  auto lift = [&](const std::string& id) -> const std::string* {
    const std::string* current = &id;
    while (current && !is_container(graph.node(*current).kind)) current = graph.parent(*current);
    return current;
  };
  std::map<std::string, std::set<std::string>> adjacency;
  for (const auto& id : non_leaf_nodes(graph)) {
    auto& out = adjacency[id];
    for (const auto& child : graph.children(id)) {
      if (is_container(graph.node(child).kind)) out.insert(child);
    }
  }
  for (const auto& edge : graph.edges()) {
    if (edge.relation != Relation::references) continue;
    const std::string* a = lift(edge.from);
    const std::string* b = lift(edge.to);
    if (!a || !b || *a == *b) continue;
    adjacency[*a].insert(*b);
    adjacency[*b].insert(*a);
  }
  for (auto& [id, out] : adjacency) {
    successors_.emplace(id, std::vector<std::string>(out.begin(), out.end()));
  }
}

std::span<const std::string> SearchSpace::successors(std::string_view id) const {
  auto it = successors_.find(id);
  if (it == successors_.end()) return {};
  return it->second;
}

double SearchSpace::reward(std::string_view id) const {
  return graph_.node(id).ue_score.value_or(0.0);
}

bool SearchSpace::scored(std::string_view id) const {
  return graph_.node(id).ue_score.has_value();
}

MctsSearch::MctsSearch(const SearchSpace& space, std::string root, const SearchConfig& config,
                       uint64_t seed)
    : space_(space), root_(std::move(root)), config_(config), rng_(seed) {
  config_.validate();
}

std::string MctsSearch::path_key(std::span<const std::string> path) {
  std::string key;
  for (const auto& id : path) {
    if (!key.empty()) key += '>';
    key += id;
  }
  return key;
}

std::vector<std::string> MctsSearch::open_successors(const std::vector<std::string>& path) const {
  std::vector<std::string> open;
  for (const auto& next : space_.successors(path.back())) {
    if (std::find(path.begin(), path.end(), next) == path.end()) open.push_back(next);
  }
  return open;
}

IterationTrace MctsSearch::iterate() {
  IterationTrace trace;
  std::vector<std::string>& path = trace.nodes;
  path.push_back(root_);
  trace.tree_path.push_back(root_);

  // Selection down fully expanded nodes; stop at the first expansion.
  while (true) {
    const auto open = open_successors(path);
    if (open.empty()) break;
    const std::string& here = trace.tree_path.back();
    std::vector<const std::string*> unexpanded;
    for (const auto& next : open) {
      if (!stats_.contains(here + '>' + next)) unexpanded.push_back(&next);
    }
    if (!unexpanded.empty()) {
      const std::string& pick = *unexpanded[uniform_index(rng_, unexpanded.size())];
      trace.tree_path.push_back(here + '>' + pick);
      path.push_back(pick);
      break;
    }
    const uint64_t parent_visits = stats_.at(here).visits;
    const std::string* best = nullptr;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const auto& next : open) {
      const double score = ucb1(stats_.at(here + '>' + next), parent_visits,
                                config_.exploration_c);
      if (!best || score > best_score) {
        best = &next;
        best_score = score;
      }
    }
    trace.tree_path.push_back(here + '>' + *best);
    path.push_back(*best);
  }

  // Rollout over successors not yet on the path.
  for (auto open = open_successors(path); !open.empty(); open = open_successors(path)) {
    path.push_back(open[uniform_index(rng_, open.size())]);
  }

  for (const auto& id : path) trace.reward += space_.reward(id);
  backup(trace.tree_path, trace.reward, stats_);
  return trace;
}

RootSearchResult run_mcts_from_root(const SearchSpace& space, std::string_view root,
                                    const SearchConfig& config, uint64_t seed) {
  const ApiNode& node = space.graph().node(root);
  if (!is_container(node.kind)) {
    throw Error(ErrorKind::precondition, "search root " + node.id + " is a leaf");
  }
  RootSearchResult result;
  if (space.successors(root).empty()) {
    result.diagnostics.push_back({node.id, 0, "root has no successors; skipped"});
    return result;
  }
  MctsSearch search(space, node.id, config, seed);
  std::set<std::string> unscored;
  for (std::size_t i = 0; i < config.iterations_per_root; ++i) {
    IterationTrace trace = search.iterate();
    for (const auto& id : trace.nodes) {
      if (!space.scored(id)) unscored.insert(id);
    }
    result.trajectories.push_back({std::move(trace.nodes), trace.reward, node.id});
  }
  for (const auto& id : unscored) {
    result.diagnostics.push_back({id, 0, "unscored node used with reward 0 (root " + node.id + ")"});
  }
  return result;
}

uint64_t derive_root_seed(uint64_t rng_seed, std::size_t root_index) noexcept {
  return splitmix64(rng_seed ^ splitmix64(static_cast<uint64_t>(root_index) + 1));
}

SearchOutcome search_all(const ApiGraph& graph, const SearchConfig& config, std::size_t jobs) {
  config.validate();
  const SearchSpace space(graph);
  const auto roots = non_leaf_nodes(graph);
  std::vector<RootSearchResult> per_root(roots.size());
  parallel_for(roots.size(), jobs, [&](std::size_t i) {
    per_root[i] = run_mcts_from_root(space, roots[i], config, derive_root_seed(config.rng_seed, i));
  });
  SearchOutcome outcome;
  for (auto& r : per_root) {
    std::move(r.trajectories.begin(), r.trajectories.end(), std::back_inserter(outcome.all));
    std::move(r.diagnostics.begin(), r.diagnostics.end(),
              std::back_inserter(outcome.diagnostics));
  }
  outcome.top = harvest_top_paths(outcome.all, config);
  return outcome;
}

namespace {

// Higher reward first, then the lexicographically smaller node sequence.
bool ranks_before(const Trajectory& a, const Trajectory& b) {
  if (a.cumulative_reward != b.cumulative_reward) return a.cumulative_reward > b.cumulative_reward;
  return a.nodes < b.nodes;
}

}  // namespace

std::vector<Trajectory> harvest_top_paths(std::span<const Trajectory> all,
                                          const SearchConfig& config) {
  std::map<std::vector<std::string>, const Trajectory*> by_set;
  for (const auto& t : all) {
    if (t.nodes.size() < config.min_path_len) continue;
    std::vector<std::string> key = t.nodes;
    std::sort(key.begin(), key.end());
    auto [it, inserted] = by_set.try_emplace(std::move(key), &t);
    if (!inserted && ranks_before(t, *it->second)) it->second = &t;
  }
  if (by_set.empty()) {
    throw Error(ErrorKind::empty_search, "no trajectory with at least " +
                                             std::to_string(config.min_path_len) + " nodes");
  }
  std::vector<Trajectory> ranked;
  ranked.reserve(by_set.size());
  for (const auto& [key, t] : by_set) ranked.push_back(*t);
  std::sort(ranked.begin(), ranked.end(), ranks_before);
  if (ranked.size() > config.top_k) ranked.resize(config.top_k);
  return ranked;
}

std::vector<std::string> sample_path_nodes(const Trajectory& trajectory, Rng& rng) {
  const std::size_t n = trajectory.nodes.size();
  if (n < 2) throw Error(ErrorKind::precondition, "cannot sample from a path shorter than 2");
  const std::size_t k = n == 2 ? 2 : 2 + uniform_index(rng, 2);
  // Partial Fisher-Yates over positions, then restore path order.
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(positions[i], positions[i + uniform_index(rng, n - i)]);
  }
  positions.resize(k);
  std::sort(positions.begin(), positions.end());
  std::vector<std::string> out;
  for (std::size_t p : positions) out.push_back(trajectory.nodes[p]);
  return out;
}

json to_json(const Trajectory& t) {
  return json{{"nodes", t.nodes}, {"cumulative_reward", t.cumulative_reward}, {"root", t.root}};
}

Trajectory trajectory_from_json(const json& j) {
  try {
    return Trajectory{j.at("nodes").get<std::vector<std::string>>(),
                      j.at("cumulative_reward").get<double>(), j.at("root").get<std::string>()};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("trajectory: ") + e.what());
  }
}

json trajectories_to_json(std::span<const Trajectory> trajectories) {
  json out = json::array();
  for (const auto& t : trajectories) out.push_back(to_json(t));
  return out;
}

std::vector<Trajectory> trajectories_from_json(const json& doc) {
  if (!doc.is_array()) throw Error(ErrorKind::schema, "trajectories.json must be an array");
  std::vector<Trajectory> out;
  for (const auto& j : doc) out.push_back(trajectory_from_json(j));
  return out;
}

}  // namespace kgsynth
