#pragma once

#include <compare>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/diagnostics.hpp"
#include "kgsynth/ingest.hpp"
#include "kgsynth/kinds.hpp"

namespace kgsynth {

struct ApiNode {
  std::string id;  // dot-joined qualified path, `#k` suffix on overloads
  std::string name;
  EntityKind kind = EntityKind::class_;
  std::string signature;
  std::string description;
  std::vector<Parameter> parameters;
  std::optional<ReturnInfo> returns;
  std::optional<std::string> since_version;
  bool deprecated = false;
  std::optional<double> ue_score;  // bits

  bool operator==(const ApiNode&) const = default;
};

enum class Relation { contains, references };

std::string_view to_string(Relation relation) noexcept;

struct ApiEdge {
  std::string from;
  std::string to;
  Relation relation = Relation::contains;

  auto operator<=>(const ApiEdge&) const = default;
  bool operator==(const ApiEdge&) const = default;
};

/// Immutable after construction except for `set_ue_score`, which the scoring
/// stage calls from a single thread once all estimates are in.
class ApiGraph {
 public:
  using NodeMap = std::map<std::string, ApiNode, std::less<>>;

  ApiGraph() = default;

  /// Validates endpoints, self-edges, single CONTAINS parent and acyclicity.
  static ApiGraph from_parts(std::vector<ApiNode> nodes, std::vector<ApiEdge> edges);

  const NodeMap& nodes() const noexcept { return nodes_; }
  const std::vector<ApiEdge>& edges() const noexcept { return edges_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  const ApiNode* find(std::string_view id) const;
  /// Throws Error(lookup) for unknown ids.
  const ApiNode& node(std::string_view id) const;

  /// CONTAINS children in id order.
  std::span<const std::string> children(std::string_view id) const;
  const std::string* parent(std::string_view id) const;
  std::span<const std::string> references_out(std::string_view id) const;
  std::span<const std::string> references_in(std::string_view id) const;
  std::vector<std::string> roots() const;

  std::size_t count(Relation relation) const;

  void set_ue_score(std::string_view id, std::optional<double> score);

 private:
  struct Adjacency {
    std::vector<std::string> children;
    std::optional<std::string> parent;
    std::vector<std::string> refs_out;
    std::vector<std::string> refs_in;
  };

  const Adjacency* adjacency(std::string_view id) const;

  NodeMap nodes_;
  std::vector<ApiEdge> edges_;
  std::map<std::string, Adjacency, std::less<>> adjacency_;
};

struct GraphBuildResult {
  ApiGraph graph;
  std::vector<Diagnostic> diagnostics;
};

GraphBuildResult build_graph(std::span<const CodeInfoRecord> code_info,
                             std::span<const TextInfoRecord> text_info);

/// Entity name from a declaration: modifiers and the kind keyword are
/// stripped, then the leading identifier is taken. Empty when none is found.
std::string declared_name(EntityKind kind, std::string_view declaration_text);

/// Orders version strings by their numeric components; absent sorts first.
int compare_versions(const std::optional<std::string>& a, const std::optional<std::string>& b);

std::vector<std::string> non_leaf_nodes(const ApiGraph& graph);

struct InfoEntry {
  std::string id;
  std::string name;
  EntityKind kind = EntityKind::class_;
  std::string signature;
  std::string description;
  std::vector<Parameter> parameters;
  std::optional<ReturnInfo> returns;
  std::optional<std::string> since_version;
  bool deprecated = false;

  bool operator==(const InfoEntry&) const = default;
};

struct InfoBundle {
  InfoEntry node;
  std::vector<InfoEntry> children;  // id order

  bool operator==(const InfoBundle&) const = default;
};

InfoEntry info_entry(const ApiNode& node);
InfoBundle subtree_info(const ApiGraph& graph, std::string_view id);

nlohmann::json to_json(const ApiNode& node);
ApiNode api_node_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InfoEntry& entry);
InfoEntry info_entry_from_json(const nlohmann::json& j);

/// `graph.json`: `{"nodes":[...],"edges":[...]}`.
nlohmann::json graph_to_json(const ApiGraph& graph);
ApiGraph graph_from_json(const nlohmann::json& doc);

}  // namespace kgsynth
