#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/diagnostics.hpp"
#include "kgsynth/graph.hpp"
#include "kgsynth/kinds.hpp"
#include "kgsynth/mcts.hpp"

namespace kgsynth {

struct SeedProvenance {
  std::size_t trajectory_index = 0;
  std::vector<std::string> trajectory_nodes;
  double cumulative_reward = 0.0;

  bool operator==(const SeedProvenance&) const = default;
};

/// Target nodes plus their verbatim code and semantic information; the unit
/// a prompt is rendered from.
struct SeedBundle {
  SeedType seed_type = SeedType::single;
  std::vector<std::string> target_nodes;
  std::vector<InfoBundle> entries;  // one per target, same order
  std::optional<SeedProvenance> provenance;

  bool operator==(const SeedBundle&) const = default;
};

/// One bundle per non-leaf node, in id order.
std::vector<SeedBundle> single_api_seeds(const ApiGraph& graph);

struct MultiSeedResult {
  std::vector<SeedBundle> bundles;
  std::vector<Diagnostic> diagnostics;
};

/// `per_path` bundles per trajectory, targets drawn with sample_path_nodes.
/// Throws Error(precondition) when `tops` is empty.
MultiSeedResult multi_api_seeds(const ApiGraph& graph, std::span<const Trajectory> tops,
                                std::size_t per_path, Rng& rng);

/// Keeps the first bundle of each (seed type, target set); later repeats are
/// reported as diagnostics. Repeated targets would render identical prompts.
std::vector<SeedBundle> drop_repeated_targets(std::vector<SeedBundle> bundles,
                                              std::vector<Diagnostic>& diagnostics);

/// ceil(multi_quota / paths); 0 when there are no paths.
std::size_t per_path_for_quota(std::size_t multi_quota, std::size_t paths) noexcept;

nlohmann::json to_json(const SeedBundle& bundle);
SeedBundle seed_bundle_from_json(const nlohmann::json& j);
nlohmann::json seeds_to_json(std::span<const SeedBundle> bundles);
std::vector<SeedBundle> seeds_from_json(const nlohmann::json& doc);

}  // namespace kgsynth
