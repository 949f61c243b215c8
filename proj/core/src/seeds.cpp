#include "kgsynth/seeds.hpp"

#include <algorithm>

#include "kgsynth/error.hpp"

namespace kgsynth {

using nlohmann::json;

namespace {

SeedBundle make_bundle(const ApiGraph& graph, SeedType type, std::vector<std::string> targets) {
  SeedBundle bundle;
  bundle.seed_type = type;
  for (const auto& id : targets) bundle.entries.push_back(subtree_info(graph, id));
  bundle.target_nodes = std::move(targets);
  return bundle;
}

}  // namespace

std::vector<SeedBundle> single_api_seeds(const ApiGraph& graph) {
  std::vector<SeedBundle> bundles;
  for (const auto& id : non_leaf_nodes(graph)) {
    bundles.push_back(make_bundle(graph, SeedType::single, {id}));
  }
  return bundles;
}

MultiSeedResult multi_api_seeds(const ApiGraph& graph, std::span<const Trajectory> tops,
                                std::size_t per_path, Rng& rng) {
  if (tops.empty()) throw Error(ErrorKind::precondition, "multi-API seeds need trajectories");
  MultiSeedResult result;
  for (std::size_t t = 0; t < tops.size(); ++t) {
    const Trajectory& path = tops[t];
    if (path.nodes.size() < 2) {
      result.diagnostics.push_back(
          {"trajectory " + std::to_string(t), 0, "shorter than 2 nodes; skipped"});
      continue;
    }
    for (std::size_t i = 0; i < per_path; ++i) {
      SeedBundle bundle = make_bundle(graph, SeedType::multi, sample_path_nodes(path, rng));
      bundle.provenance = SeedProvenance{t, path.nodes, path.cumulative_reward};
      result.bundles.push_back(std::move(bundle));
    }
  }
  return result;
}

std::vector<SeedBundle> drop_repeated_targets(std::vector<SeedBundle> bundles,
                                              std::vector<Diagnostic>& diagnostics) {
  std::set<std::pair<SeedType, std::vector<std::string>>> seen;
  std::vector<SeedBundle> out;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    auto key = bundles[i].target_nodes;
    std::sort(key.begin(), key.end());
    if (!seen.emplace(bundles[i].seed_type, std::move(key)).second) {
      diagnostics.push_back({"bundle " + std::to_string(i), 0,
                             "repeats an earlier target set; dropped"});
      continue;
    }
    out.push_back(std::move(bundles[i]));
  }
  return out;
}

std::size_t per_path_for_quota(std::size_t multi_quota, std::size_t paths) noexcept {
  if (paths == 0) return 0;
  return (multi_quota + paths - 1) / paths;
}

json to_json(const SeedBundle& bundle) {
  json entries = json::array();
  for (const auto& info : bundle.entries) {
    json children = json::array();
    for (const auto& child : info.children) children.push_back(to_json(child));
    entries.push_back({{"node", to_json(info.node)}, {"children", children}});
  }
  json j{{"seed_type", to_string(bundle.seed_type)},
         {"target_nodes", bundle.target_nodes},
         {"entries", entries}};
  if (bundle.provenance) {
    j["provenance"] = {{"trajectory_index", bundle.provenance->trajectory_index},
                       {"trajectory_nodes", bundle.provenance->trajectory_nodes},
                       {"cumulative_reward", bundle.provenance->cumulative_reward}};
  }
  return j;
}

SeedBundle seed_bundle_from_json(const json& j) {
  SeedBundle bundle;
  try {
    const auto type = parse_seed_type(j.at("seed_type").get<std::string>());
    if (!type) throw Error(ErrorKind::schema, "unknown seed_type");
    bundle.seed_type = *type;
    bundle.target_nodes = j.at("target_nodes").get<std::vector<std::string>>();
    for (const auto& e : j.at("entries")) {
      InfoBundle info;
      info.node = info_entry_from_json(e.at("node"));
      for (const auto& c : e.at("children")) info.children.push_back(info_entry_from_json(c));
      bundle.entries.push_back(std::move(info));
    }
    if (j.contains("provenance") && !j["provenance"].is_null()) {
      const auto& p = j["provenance"];
      bundle.provenance = SeedProvenance{p.at("trajectory_index").get<std::size_t>(),
                                         p.at("trajectory_nodes").get<std::vector<std::string>>(),
                                         p.at("cumulative_reward").get<double>()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("seed bundle: ") + e.what());
  }
  const std::size_t n = bundle.target_nodes.size();
  const bool sized = bundle.seed_type == SeedType::single ? n == 1 : (n == 2 || n == 3);
  if (!sized || bundle.entries.size() != n) {
    throw Error(ErrorKind::schema, "seed bundle has the wrong number of targets");
  }
  return bundle;
}

json seeds_to_json(std::span<const SeedBundle> bundles) {
  json out = json::array();
  for (const auto& b : bundles) out.push_back(to_json(b));
  return out;
}

std::vector<SeedBundle> seeds_from_json(const json& doc) {
  if (!doc.is_array()) throw Error(ErrorKind::schema, "seeds.json must be an array");
  std::vector<SeedBundle> out;
  for (const auto& j : doc) out.push_back(seed_bundle_from_json(j));
  return out;
}

}  // namespace kgsynth
