#include "kgsynth/graph.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>
#include <tuple>

#include "kgsynth/error.hpp"
#include "kgsynth/support.hpp"

namespace kgsynth {

using nlohmann::json;

std::string_view to_string(Relation relation) noexcept {
  return relation == Relation::contains ? "CONTAINS" : "REFERENCES";
}

ApiGraph ApiGraph::from_parts(std::vector<ApiNode> nodes, std::vector<ApiEdge> edges) {
  ApiGraph graph;
  for (auto& node : nodes) {
    if (node.kind == EntityKind::unknown) {
      throw Error(ErrorKind::schema, "node " + node.id + " has no kind");
    }
    if (node.ue_score && !(*node.ue_score >= 0.0)) {
      throw Error(ErrorKind::schema, "node " + node.id + " has a negative ue_score");
    }
    const std::string id = node.id;
    if (!graph.nodes_.emplace(id, std::move(node)).second) {
      throw Error(ErrorKind::id_collision, "duplicate node id " + id);
    }
    graph.adjacency_.emplace(id, Adjacency{});
  }

  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  for (const auto& edge : edges) {
    auto from = graph.adjacency_.find(edge.from);
    auto to = graph.adjacency_.find(edge.to);
    if (from == graph.adjacency_.end() || to == graph.adjacency_.end()) {
      throw Error(ErrorKind::schema, "edge " + edge.from + " -> " + edge.to +
                                         " has an unknown endpoint");
    }
    if (edge.from == edge.to) {
      throw Error(ErrorKind::schema, "self edge on " + edge.from);
    }
    if (edge.relation == Relation::contains) {
      if (to->second.parent) {
        throw Error(ErrorKind::schema, edge.to + " has more than one CONTAINS parent");
      }
      to->second.parent = edge.from;
      from->second.children.push_back(edge.to);
    } else {
      from->second.refs_out.push_back(edge.to);
      to->second.refs_in.push_back(edge.from);
    }
  }
  for (auto& [id, adjacency] : graph.adjacency_) {
    std::sort(adjacency.children.begin(), adjacency.children.end());
    std::sort(adjacency.refs_out.begin(), adjacency.refs_out.end());
    std::sort(adjacency.refs_in.begin(), adjacency.refs_in.end());
  }
  // Single parent per node means a cycle shows up as an over-long parent walk.
  for (const auto& [id, adjacency] : graph.adjacency_) {
    std::size_t steps = 0;
    for (const std::string* up = adjacency.parent ? &*adjacency.parent : nullptr; up;
         up = graph.parent(*up)) {
      if (++steps > graph.nodes_.size()) {
        throw Error(ErrorKind::schema, "CONTAINS cycle through " + id);
      }
    }
  }
  graph.edges_ = std::move(edges);
  return graph;
}

const ApiGraph::Adjacency* ApiGraph::adjacency(std::string_view id) const {
  auto it = adjacency_.find(id);
  return it == adjacency_.end() ? nullptr : &it->second;
}

const ApiNode* ApiGraph::find(std::string_view id) const {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : &it->second;
}

const ApiNode& ApiGraph::node(std::string_view id) const {
  const ApiNode* found = find(id);
  if (!found) throw Error(ErrorKind::lookup, "unknown node id " + std::string(id));
  return *found;
}

std::span<const std::string> ApiGraph::children(std::string_view id) const {
  const Adjacency* a = adjacency(id);
  if (!a) return {};
  return a->children;
}

const std::string* ApiGraph::parent(std::string_view id) const {
  const Adjacency* a = adjacency(id);
  return a && a->parent ? &*a->parent : nullptr;
}

std::span<const std::string> ApiGraph::references_out(std::string_view id) const {
  const Adjacency* a = adjacency(id);
  if (!a) return {};
  return a->refs_out;
}

std::span<const std::string> ApiGraph::references_in(std::string_view id) const {
  const Adjacency* a = adjacency(id);
  if (!a) return {};
  return a->refs_in;
}

std::vector<std::string> ApiGraph::roots() const {
  std::vector<std::string> out;
  for (const auto& [id, adjacency] : adjacency_) {
    if (!adjacency.parent) out.push_back(id);
  }
  return out;
}

std::size_t ApiGraph::count(Relation relation) const {
  return static_cast<std::size_t>(std::count_if(
      edges_.begin(), edges_.end(), [&](const ApiEdge& e) { return e.relation == relation; }));
}

void ApiGraph::set_ue_score(std::string_view id, std::optional<double> score) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorKind::lookup, "unknown node id " + std::string(id));
  if (score && !(*score >= 0.0)) {
    throw Error(ErrorKind::domain, "ue_score must be non-negative");
  }
  it->second.ue_score = score;
}

std::string declared_name(EntityKind kind, std::string_view declaration_text) {
  // Fenced signatures may open with doc comments or decorators.
  std::string_view text = declaration_text;
  std::string_view line;
  while (!text.empty()) {
    const auto end = text.find('\n');
    line = trim(text.substr(0, end));
    const bool skip = line.empty() || line.starts_with("//") || line.starts_with("/*") ||
                      line.starts_with("*") ||
                      (line.starts_with("@") && kind != EntityKind::module);
    if (!skip) break;
    line = {};
    if (end == std::string_view::npos) break;
    text.remove_prefix(end + 1);
  }

  static const std::regex kModifiers(
      R"(^(?:(?:export|declare|default|abstract|static|public|private|protected|readonly|async|function|const)\s+)*)");
  static const std::regex kKeyword(R"(^(?:class|interface|enum|namespace|module|type)\s+)");
  std::string rest(line);
  rest = std::regex_replace(rest, kModifiers, "", std::regex_constants::format_first_only);
  rest = std::regex_replace(rest, kKeyword, "", std::regex_constants::format_first_only);

  static const std::regex kModuleName(R"(^['"]?([@\w$][\w$.@/-]*))");
  static const std::regex kNamespaceName(R"(^([\w$][\w$.]*))");
  static const std::regex kIdentifier(R"(^([A-Za-z_$][\w$]*))");
  const std::regex* pattern = &kIdentifier;
  if (kind == EntityKind::module) pattern = &kModuleName;
  if (kind == EntityKind::namespace_) pattern = &kNamespaceName;
  std::smatch m;
  if (std::regex_search(rest, m, *pattern)) return m[1].str();
  return {};
}

namespace {

std::vector<long long> version_components(const std::string& text) {
  std::vector<long long> parts;
  long long current = -1;
  for (char c : text) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      current = (current < 0 ? 0 : current * 10) + (c - '0');
    } else if (current >= 0) {
      parts.push_back(current);
      current = -1;
    }
  }
  if (current >= 0) parts.push_back(current);
  return parts;
}

EntityKind infer_kind(std::string_view text) {
  return text.find('(') != std::string_view::npos ? EntityKind::method : EntityKind::property;
}

std::vector<std::string> type_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty() && !std::isdigit(static_cast<unsigned char>(current.front()))) {
      tokens.push_back(current);
    }
    current.clear();
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$') {
      current += c;
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

struct Placement {
  std::size_t record = 0;
  std::optional<std::size_t> parent;  // index into the file's placement list
  EntityKind kind = EntityKind::unknown;
  std::string name;
  std::string id;
};

}  // namespace

int compare_versions(const std::optional<std::string>& a, const std::optional<std::string>& b) {
  if (!a && !b) return 0;
  if (!a) return -1;
  if (!b) return 1;
  const auto pa = version_components(*a);
  const auto pb = version_components(*b);
  if (pa < pb) return -1;
  if (pb < pa) return 1;
  return 0;
}

GraphBuildResult build_graph(std::span<const CodeInfoRecord> code_info,
                             std::span<const TextInfoRecord> text_info) {
  GraphBuildResult result;
  auto diag = [&](const std::string& source, std::string message) {
    result.diagnostics.push_back({source, 0, std::move(message)});
  };

  std::map<std::string, std::vector<std::size_t>> by_file;
  for (std::size_t i = 0; i < code_info.size(); ++i) by_file[code_info[i].source_id].push_back(i);

  std::map<std::string, ApiNode, std::less<>> nodes;
  std::set<ApiEdge> edges;
  std::map<std::pair<std::string, std::size_t>, std::string> record_ids;

  for (auto& [source, indices] : by_file) {
    std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
      return code_info[a].ordinal < code_info[b].ordinal;
    });
    std::vector<Placement> placed;
    std::vector<std::size_t> stack;  // indices into `placed`
    for (std::size_t index : indices) {
      const CodeInfoRecord& record = code_info[index];
      Placement p;
      p.record = index;
      p.kind = record.kind_hint;
      if (p.kind == EntityKind::unknown) {
        p.kind = infer_kind(record.declaration_text);
        diag(source, "record " + std::to_string(record.ordinal) + " has no kind hint; inferred " +
                         std::string(to_string(p.kind)));
      }
      p.name = declared_name(p.kind, record.declaration_text);
      if (p.name.empty()) {
        diag(source, "record " + std::to_string(record.ordinal) +
                         " declares no recognizable name; skipped");
        continue;
      }
      while (!stack.empty() &&
             code_info[placed[stack.back()].record].nesting_depth >= record.nesting_depth) {
        stack.pop_back();
      }
      for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
        if (is_container(placed[*it].kind)) {
          p.parent = *it;
          break;
        }
      }
      if (!stack.empty() && (!p.parent || *p.parent != stack.back())) {
        diag(source, "record " + std::to_string(record.ordinal) + " nested under leaf " +
                         placed[stack.back()].name + "; attached to nearest container");
      }
      placed.push_back(std::move(p));
      stack.push_back(placed.size() - 1);
    }

    std::map<std::pair<std::optional<std::size_t>, std::string>, std::size_t> overloads;
    for (const auto& p : placed) {
      if (p.kind == EntityKind::method) ++overloads[{p.parent, p.name}];
    }
    std::map<std::pair<std::optional<std::size_t>, std::string>, std::size_t> seen;
    for (auto& p : placed) {
      p.id = p.parent ? placed[*p.parent].id + "." + p.name : p.name;
      if (p.kind == EntityKind::method && overloads[{p.parent, p.name}] > 1) {
        p.id += "#" + std::to_string(++seen[{p.parent, p.name}]);
      }
      const CodeInfoRecord& record = code_info[p.record];
      auto existing = nodes.find(p.id);
      if (existing != nodes.end()) {
        if (existing->second.signature != record.declaration_text ||
            existing->second.kind != p.kind) {
          throw Error(ErrorKind::id_collision,
                      "node id " + p.id + " declared with different signatures");
        }
        diag(source, "duplicate declaration of " + p.id + " merged");
      } else {
        ApiNode node;
        node.id = p.id;
        node.name = p.name;
        node.kind = p.kind;
        node.signature = record.declaration_text;
        nodes.emplace(p.id, std::move(node));
      }
      record_ids[{source, record.ordinal}] = p.id;
      if (p.parent) edges.insert({placed[*p.parent].id, p.id, Relation::contains});
    }
  }

  std::map<std::string, std::size_t> chosen_text;
  for (std::size_t i = 0; i < text_info.size(); ++i) {
    const auto& text = text_info[i];
    auto it = record_ids.find({text.source_id, text.attached_to});
    if (it == record_ids.end()) {
      diag(text.source_id, "text record attached to missing declaration " +
                               std::to_string(text.attached_to) + "; skipped");
      continue;
    }
    auto [slot, inserted] = chosen_text.try_emplace(it->second, i);
    if (!inserted &&
        compare_versions(text.since_version, text_info[slot->second].since_version) >= 0) {
      slot->second = i;
    }
  }
  for (const auto& [id, index] : chosen_text) {
    ApiNode& node = nodes.at(id);
    const auto& text = text_info[index];
    node.description = text.description;
    node.parameters = text.parameters;
    node.returns = text.returns;
    node.since_version = text.since_version;
    node.deprecated = text.deprecated;
  }

  std::map<std::string, std::vector<std::string>> type_names;
  for (const auto& [id, node] : nodes) {
    if (is_container(node.kind)) type_names[node.name].push_back(id);
  }
  for (const auto& [id, node] : nodes) {
    std::vector<std::string> mentions;
    for (const auto& p : node.parameters) {
      auto t = type_tokens(p.type);
      mentions.insert(mentions.end(), t.begin(), t.end());
    }
    if (node.returns) {
      auto t = type_tokens(node.returns->type);
      mentions.insert(mentions.end(), t.begin(), t.end());
    }
    for (const auto& token : mentions) {
      auto hit = type_names.find(token);
      if (hit == type_names.end()) continue;
      for (const auto& target : hit->second) {
        if (target != id) edges.insert({id, target, Relation::references});
      }
    }
  }

  std::vector<ApiNode> node_list;
  node_list.reserve(nodes.size());
  for (auto& [id, node] : nodes) node_list.push_back(std::move(node));
  result.graph = ApiGraph::from_parts(std::move(node_list),
                                      std::vector<ApiEdge>(edges.begin(), edges.end()));
  return result;
}

std::vector<std::string> non_leaf_nodes(const ApiGraph& graph) {
  std::vector<std::string> out;
  for (const auto& [id, node] : graph.nodes()) {
    if (is_container(node.kind)) out.push_back(id);
  }
  return out;
}

InfoEntry info_entry(const ApiNode& node) {
  return InfoEntry{node.id,         node.name,    node.kind,          node.signature,
                   node.description, node.parameters, node.returns, node.since_version,
                   node.deprecated};
}

InfoBundle subtree_info(const ApiGraph& graph, std::string_view id) {
  InfoBundle bundle;
  bundle.node = info_entry(graph.node(id));
  for (const auto& child : graph.children(id)) {
    bundle.children.push_back(info_entry(graph.node(child)));
  }
  return bundle;
}

namespace {

json parameters_json(const std::vector<Parameter>& parameters) {
  json out = json::array();
  for (const auto& p : parameters) {
    out.push_back({{"name", p.name}, {"type", p.type}, {"description", p.description}});
  }
  return out;
}

template <typename T>
void read_metadata(const json& j, T& out) {
  out.description = j.value("description", std::string{});
  out.parameters.clear();
  for (const auto& p : j.value("parameters", json::array())) {
    out.parameters.push_back({p.at("name").template get<std::string>(),
                              p.at("type").template get<std::string>(),
                              p.at("description").template get<std::string>()});
  }
  if (j.contains("returns") && !j["returns"].is_null()) {
    out.returns = ReturnInfo{j["returns"].at("type").template get<std::string>(),
                             j["returns"].at("description").template get<std::string>()};
  }
  if (j.contains("since_version") && !j["since_version"].is_null()) {
    out.since_version = j["since_version"].template get<std::string>();
  }
  out.deprecated = j.value("deprecated", false);
}

template <typename T>
void write_metadata(const T& in, json& j) {
  j["description"] = in.description;
  j["parameters"] = parameters_json(in.parameters);
  if (in.returns) j["returns"] = {{"type", in.returns->type}, {"description", in.returns->description}};
  if (in.since_version) j["since_version"] = *in.since_version;
  j["deprecated"] = in.deprecated;
}

EntityKind kind_from_json(const json& j) {
  const auto kind = parse_entity_kind(j.at("kind").get<std::string>());
  if (!kind || *kind == EntityKind::unknown) {
    throw Error(ErrorKind::schema, "invalid node kind " + j.at("kind").dump());
  }
  return *kind;
}

}  // namespace

json to_json(const ApiNode& node) {
  json j{{"id", node.id},
         {"name", node.name},
         {"kind", to_string(node.kind)},
         {"signature", node.signature}};
  write_metadata(node, j);
  if (node.ue_score) j["ue_score"] = *node.ue_score;
  return j;
}

ApiNode api_node_from_json(const json& j) {
  ApiNode node;
  node.id = j.at("id").get<std::string>();
  node.name = j.at("name").get<std::string>();
  node.kind = kind_from_json(j);
  node.signature = j.at("signature").get<std::string>();
  read_metadata(j, node);
  if (j.contains("ue_score") && !j["ue_score"].is_null()) node.ue_score = j["ue_score"].get<double>();
  return node;
}

json to_json(const InfoEntry& entry) {
  json j{{"id", entry.id},
         {"name", entry.name},
         {"kind", to_string(entry.kind)},
         {"signature", entry.signature}};
  write_metadata(entry, j);
  return j;
}

InfoEntry info_entry_from_json(const json& j) {
  InfoEntry entry;
  entry.id = j.at("id").get<std::string>();
  entry.name = j.at("name").get<std::string>();
  entry.kind = kind_from_json(j);
  entry.signature = j.at("signature").get<std::string>();
  read_metadata(j, entry);
  return entry;
}

json graph_to_json(const ApiGraph& graph) {
  json doc{{"nodes", json::array()}, {"edges", json::array()}};
  for (const auto& [id, node] : graph.nodes()) doc["nodes"].push_back(to_json(node));
  for (const auto& edge : graph.edges()) {
    doc["edges"].push_back(
        {{"from", edge.from}, {"to", edge.to}, {"relation", to_string(edge.relation)}});
  }
  return doc;
}

ApiGraph graph_from_json(const json& doc) {
  std::vector<ApiNode> nodes;
  std::vector<ApiEdge> edges;
  try {
    for (const auto& j : doc.at("nodes")) nodes.push_back(api_node_from_json(j));
    for (const auto& j : doc.at("edges")) {
      const auto relation = j.at("relation").get<std::string>();
      if (relation != "CONTAINS" && relation != "REFERENCES") {
        throw Error(ErrorKind::schema, "unknown relation " + relation);
      }
      edges.push_back({j.at("from").get<std::string>(), j.at("to").get<std::string>(),
                       relation == "CONTAINS" ? Relation::contains : Relation::references});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("graph.json: ") + e.what());
  }
  return ApiGraph::from_parts(std::move(nodes), std::move(edges));
}

}  // namespace kgsynth
