#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/diagnostics.hpp"
#include "kgsynth/graph.hpp"
#include "kgsynth/support.hpp"

namespace kgsynth {

/// Visit statistics of one search-tree node. `node` is the key the table
/// uses: a graph node id, or a '>'-joined path of ids for path-state trees.
struct SearchNodeStats {
  std::string node;
  uint64_t visits = 0;
  double total_reward = 0.0;
  double mean_reward = 0.0;
};

using StatsTable = std::unordered_map<std::string, SearchNodeStats>;

struct Trajectory {
  std::vector<std::string> nodes;
  double cumulative_reward = 0.0;
  std::string root;

  bool operator==(const Trajectory&) const = default;
};

struct SearchConfig {
  double exploration_c = std::sqrt(2.0);
  std::size_t iterations_per_root = 100;
  std::size_t top_k = 5;
  uint64_t rng_seed = 0;
  std::size_t min_path_len = 2;

  /// Throws Error(domain) when a field is out of range.
  void validate() const;
};

/// +inf for unvisited nodes, else Q + c * sqrt(ln(n_total) / N).
/// Throws Error(domain) when n_total < 1.
double ucb1(const SearchNodeStats& stats, uint64_t n_total, double c);

/// N += 1, W += reward, Q = W / N for every key on the path; missing keys
/// are inserted with zero statistics first.
void backup(std::span<const std::string> path, double reward, StatsTable& table);

/// Neighbor relation and rewards the search walks over. Only non-leaf nodes
/// take part: successors are non-leaf CONTAINS children plus REFERENCES
/// links in either direction, where a leaf endpoint is lifted to its nearest
/// non-leaf ancestor.
class SearchSpace {
 public:
  explicit SearchSpace(const ApiGraph& graph);

  const ApiGraph& graph() const noexcept { return graph_; }
  std::span<const std::string> successors(std::string_view id) const;
  /// ue_score, or 0 for unscored nodes.
  double reward(std::string_view id) const;
  bool scored(std::string_view id) const;

 private:
  const ApiGraph& graph_;
  std::map<std::string, std::vector<std::string>, std::less<>> successors_;
};

struct IterationTrace {
  std::vector<std::string> tree_path;  // stats keys updated by backup
  std::vector<std::string> nodes;      // selection prefix + rollout
  double reward = 0.0;
};

/// One root's UCB1 search. Tree nodes are simple paths from the root, so a
/// graph node reached along different routes has separate statistics.
class MctsSearch {
 public:
  MctsSearch(const SearchSpace& space, std::string root, const SearchConfig& config,
             uint64_t seed);

  /// Selection, expansion, random rollout over unvisited successors, backup.
  IterationTrace iterate();

  const StatsTable& stats() const noexcept { return stats_; }
  static std::string path_key(std::span<const std::string> path);

 private:
  std::vector<std::string> open_successors(const std::vector<std::string>& path) const;

  const SearchSpace& space_;
  std::string root_;
  SearchConfig config_;
  Rng rng_;
  StatsTable stats_;
};

struct RootSearchResult {
  std::vector<Trajectory> trajectories;
  std::vector<Diagnostic> diagnostics;
};

/// Every simulated full path from `root`. A root without successors yields
/// nothing and a diagnostic. Throws Error(precondition) for leaf roots.
RootSearchResult run_mcts_from_root(const SearchSpace& space, std::string_view root,
                                    const SearchConfig& config, uint64_t seed);

/// Seed for the search rooted at the root_index-th non-leaf node.
uint64_t derive_root_seed(uint64_t rng_seed, std::size_t root_index) noexcept;

struct SearchOutcome {
  std::vector<Trajectory> all;
  std::vector<Trajectory> top;
  std::vector<Diagnostic> diagnostics;
};

/// Searches from every non-leaf node (up to `jobs` roots at once), then
/// harvests the global top-k. Throws Error(empty_search) when no trajectory
/// is long enough.
SearchOutcome search_all(const ApiGraph& graph, const SearchConfig& config,
                         std::size_t jobs = 1);

/// Drops short paths, keeps one path per unordered node set, sorts by reward
/// (descending, then node sequence) and truncates to top_k.
std::vector<Trajectory> harvest_top_paths(std::span<const Trajectory> all,
                                          const SearchConfig& config);

/// Picks k in {2, 3} (k <= path length) uniformly, then k distinct nodes
/// uniformly; returned in trajectory order.
std::vector<std::string> sample_path_nodes(const Trajectory& trajectory, Rng& rng);

nlohmann::json to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const nlohmann::json& j);
nlohmann::json trajectories_to_json(std::span<const Trajectory> trajectories);
std::vector<Trajectory> trajectories_from_json(const nlohmann::json& doc);

}  // namespace kgsynth
