#include "kgsynth/ingest.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <set>
#include <system_error>

#include "kgsynth/defaults.hpp"
#include "kgsynth/error.hpp"
#include "kgsynth/support.hpp"

namespace kgsynth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<RuleRole> parse_role(std::string_view text) {
  static const std::pair<std::string_view, RuleRole> kRoles[] = {
      {"heading_declaration", RuleRole::heading_declaration},
      {"code_declaration", RuleRole::code_declaration},
      {"fence", RuleRole::fence},
      {"description", RuleRole::description},
      {"since", RuleRole::since},
      {"deprecated", RuleRole::deprecated},
      {"parameters_header", RuleRole::parameters_header},
      {"returns_header", RuleRole::returns_header},
      {"table_row", RuleRole::table_row},
      {"table_separator", RuleRole::table_separator},
      {"table_header", RuleRole::table_header},
      {"flag", RuleRole::flag},
  };
  for (const auto& [name, role] : kRoles) {
    if (name == text) return role;
  }
  return std::nullopt;
}

bool is_metadata_role(RuleRole role) {
  return role == RuleRole::description || role == RuleRole::since ||
         role == RuleRole::deprecated || role == RuleRole::parameters_header ||
         role == RuleRole::returns_header;
}

}  // namespace

RuleSet RuleSet::from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("rules") || !doc["rules"].is_array()) {
    throw Error(ErrorKind::rules, "rule file must be an object with a \"rules\" array");
  }
  RuleSet set;
  std::set<std::string> names;
  bool has_declaration = false;
  bool has_metadata = false;
  for (const auto& entry : doc["rules"]) {
    Rule rule;
    try {
      rule.name = entry.at("name").get<std::string>();
      rule.pattern = entry.at("pattern").get<std::string>();
      const auto role_text = entry.at("role").get<std::string>();
      const auto role = parse_role(role_text);
      if (!role) throw Error(ErrorKind::rules, "unknown rule role '" + role_text + "'");
      rule.role = *role;
      if (entry.contains("kind")) {
        const auto kind = parse_entity_kind(entry["kind"].get<std::string>());
        if (!kind) throw Error(ErrorKind::rules, "rule '" + rule.name + "' has unknown kind");
        rule.kind = *kind;
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::rules, std::string("malformed rule entry: ") + e.what());
    }
    if (!names.insert(rule.name).second) {
      throw Error(ErrorKind::rules, "duplicate rule name '" + rule.name + "'");
    }
    if (rule.role == RuleRole::code_declaration && !is_container(rule.kind) &&
        rule.kind != EntityKind::method && rule.kind != EntityKind::property) {
      throw Error(ErrorKind::rules, "code_declaration rule '" + rule.name + "' needs a kind");
    }
    try {
      rule.regex = std::regex(rule.pattern, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw Error(ErrorKind::rules, "rule '" + rule.name + "': " + e.what());
    }
    has_declaration |= rule.role == RuleRole::heading_declaration ||
                       rule.role == RuleRole::code_declaration;
    has_metadata |= is_metadata_role(rule.role);
    set.rules_.push_back(std::move(rule));
  }
  if (!has_declaration || !has_metadata) {
    throw Error(ErrorKind::rules,
                "rule set needs at least one declaration and one metadata pattern");
  }
  return set;
}

RuleSet RuleSet::load(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::rules, path.string() + ": " + e.what());
  }
  return from_json(doc);
}

const RuleSet& RuleSet::defaults() {
  static const RuleSet set = from_json(json::parse(default_rules_json()));
  return set;
}

std::vector<const Rule*> RuleSet::with_role(RuleRole role) const {
  std::vector<const Rule*> out;
  for (const auto& rule : rules_) {
    if (rule.role == role) out.push_back(&rule);
  }
  return out;
}

std::vector<RawDocFile> scan_corpus(const fs::path& root,
                                    std::span<const std::string> include_patterns) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw Error(ErrorKind::corpus_access, "corpus root is not a readable directory: " +
                                              root.string());
  }
  std::vector<RawDocFile> files;
  fs::recursive_directory_iterator it(root, ec), end;
  if (ec) throw Error(ErrorKind::corpus_access, root.string() + ": " + ec.message());
  for (; it != end; it.increment(ec)) {
    if (ec) throw Error(ErrorKind::corpus_access, root.string() + ": " + ec.message());
    if (!it->is_regular_file()) continue;
    const std::string relative = fs::relative(it->path(), root).generic_string();
    const std::string filename = it->path().filename().string();
    const bool matched = std::any_of(
        include_patterns.begin(), include_patterns.end(), [&](const std::string& glob) {
          const bool by_path = glob.find('/') != std::string::npos;
          const std::string& subject = by_path ? relative : filename;
          return fnmatch(glob.c_str(), subject.c_str(), by_path ? FNM_PATHNAME : 0) == 0;
        });
    if (!matched) continue;
    RawDocFile file;
    file.path = it->path();
    file.source_id = relative;
    files.push_back(std::move(file));
  }
  if (files.empty()) {
    throw Error(ErrorKind::empty_corpus, "no documentation files matched under " +
                                             root.string());
  }
  std::sort(files.begin(), files.end(),
            [](const RawDocFile& a, const RawDocFile& b) { return a.source_id < b.source_id; });
  for (auto& file : files) {
    std::string text;
    try {
      text = read_text_file(file.path);
    } catch (const Error& e) {
      throw Error(ErrorKind::corpus_access, e.what());
    }
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t stop = text.find('\n', start);
      if (stop == std::string::npos) stop = text.size();
      std::string line = text.substr(start, stop - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      file.lines.push_back(std::move(line));
      start = stop + 1;
    }
  }
  return files;
}

namespace {

enum class LineClass { ignored, consumed, flagged };
enum class TableMode { none, parameters, returns };

std::vector<std::string> split_cells(const std::string& inner) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t bar = inner.find('|', start);
    cells.emplace_back(trim(std::string_view(inner).substr(start, bar - start)));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return cells;
}

// Line-by-line state machine over one file.
class Extractor {
 public:
  Extractor(const RawDocFile& file, const RuleSet& rules)
      : file_(file),
        heading_rules_(rules.with_role(RuleRole::heading_declaration)),
        code_rules_(rules.with_role(RuleRole::code_declaration)),
        fence_rules_(rules.with_role(RuleRole::fence)),
        description_rules_(rules.with_role(RuleRole::description)),
        since_rules_(rules.with_role(RuleRole::since)),
        deprecated_rules_(rules.with_role(RuleRole::deprecated)),
        parameters_rules_(rules.with_role(RuleRole::parameters_header)),
        returns_rules_(rules.with_role(RuleRole::returns_header)),
        row_rules_(rules.with_role(RuleRole::table_row)),
        separator_rules_(rules.with_role(RuleRole::table_separator)),
        header_rules_(rules.with_role(RuleRole::table_header)),
        flag_rules_(rules.with_role(RuleRole::flag)) {}

  ExtractionResult run() {
    lines_.reserve(file_.lines.size());
    for (std::size_t i = 0; i < file_.lines.size(); ++i) {
      std::size_t replaced = 0;
      lines_.push_back(sanitize_utf8(file_.lines[i], replaced));
      if (replaced > 0) {
        note(i, "replaced " + std::to_string(replaced) + " undecodable byte(s)");
      }
    }
    classes_.assign(lines_.size(), LineClass::ignored);
    for (index_ = 0; index_ < lines_.size(); ++index_) step();
    finish();
    for (auto c : classes_) {
      switch (c) {
        case LineClass::consumed: ++out_.tally.consumed; break;
        case LineClass::flagged: ++out_.tally.flagged; break;
        case LineClass::ignored: ++out_.tally.ignored; break;
      }
    }
    out_.tally.lines = lines_.size();
    std::stable_sort(out_.diagnostics.begin(), out_.diagnostics.end(),
                     [](const Diagnostic& a, const Diagnostic& b) { return a.line < b.line; });
    return std::move(out_);
  }

 private:
  struct OpenFence {
    std::size_t start = 0;
    std::string marker;
    bool signature_of_heading = false;
  };

  static bool match(const std::vector<const Rule*>& rules, const std::string& line,
                    std::smatch* groups = nullptr, const Rule** which = nullptr) {
    std::smatch local;
    for (const Rule* rule : rules) {
      if (std::regex_search(line, groups ? *groups : local, rule->regex)) {
        if (which) *which = rule;
        return true;
      }
    }
    return false;
  }

  void note(std::size_t index, std::string message) {
    out_.diagnostics.push_back({file_.source_id, index + 1, std::move(message)});
  }

  void flag(std::size_t index, std::string message) {
    classes_[index] = LineClass::flagged;
    note(index, std::move(message));
  }

  void step() {
    const std::string& line = lines_[index_];
    std::smatch groups;

    if (fence_) {
      if (match(fence_rules_, line, &groups) && groups[1].str().front() == fence_->marker.front() &&
          groups[1].length() >= static_cast<long>(fence_->marker.size()) &&
          groups[2].length() == 0) {
        close_fence();
      }
      return;
    }

    if (match(fence_rules_, line, &groups)) {
      fence_ = OpenFence{index_, groups[1].str(),
                         after_heading_ && current_decl_.has_value()};
      after_heading_ = false;
      table_ = TableMode::none;
      return;
    }

    if (trim(line).empty()) {
      table_ = TableMode::none;
      return;
    }
    after_heading_ = false;

    if (match(heading_rules_, line, &groups)) {
      table_ = TableMode::none;
      const auto kind = parse_entity_kind(groups[2].str());
      std::size_t depth = static_cast<std::size_t>(groups[1].length()) - 1;
      const std::size_t limit = out_.code_info.empty() ? 0 : out_.code_info.back().nesting_depth + 1;
      if (depth > limit) {
        note(index_, "heading level skips a nesting level; depth clamped to " +
                         std::to_string(limit));
        depth = limit;
      }
      add_declaration(std::string(trim(groups[3].str())), kind.value_or(EntityKind::unknown),
                      depth, index_, index_);
      after_heading_ = true;
      return;
    }

    if (table_ != TableMode::none) {
      if (match(separator_rules_, line) || match(header_rules_, line)) return;
      if (match(row_rules_, line, &groups)) {
        table_row(split_cells(groups[1].str()));
        return;
      }
      table_ = TableMode::none;
    }

    if (match(description_rules_, line, &groups)) {
      TextInfoRecord& text = active_text(!text_has_description());
      text.description = trim(groups[1].str());
      consume_metadata();
      return;
    }
    if (match(since_rules_, line, &groups)) {
      TextInfoRecord& text = active_text(text_has_since());
      text.since_version = groups[1].str();
      consume_metadata();
      return;
    }
    if (match(deprecated_rules_, line)) {
      active_text(false).deprecated = true;
      consume_metadata();
      return;
    }
    if (match(parameters_rules_, line)) {
      TextInfoRecord& text = active_text(false);
      text.parameters.clear();
      table_ = TableMode::parameters;
      table_malformed_ = false;
      consume_metadata();
      return;
    }
    if (match(returns_rules_, line)) {
      TextInfoRecord& text = active_text(false);
      text.returns.reset();
      table_ = TableMode::returns;
      table_malformed_ = false;
      consume_metadata();
      return;
    }
    if (match(row_rules_, line) || match(separator_rules_, line)) {
      // Tables outside a parameters/returns section are prose.
      return;
    }
    const Rule* which = nullptr;
    if (match(flag_rules_, line, nullptr, &which)) {
      flag(index_, "line matched flag rule '" + which->name + "' but no extraction rule");
    }
  }

  void table_row(const std::vector<std::string>& cells) {
    TextInfoRecord& text = active_text(false);
    if (table_malformed_) {
      flag(index_, "row belongs to a malformed table");
      return;
    }
    if (table_ == TableMode::parameters) {
      const bool duplicate =
          cells.size() >= 3 &&
          std::any_of(text.parameters.begin(), text.parameters.end(),
                      [&](const Parameter& p) { return p.name == cells.front(); });
      if (cells.size() < 3 || cells.front().empty() || duplicate) {
        text.parameters.clear();
        table_malformed_ = true;
        flag(index_, duplicate ? "duplicate parameter name '" + cells.front() + "'"
                               : "malformed parameter row; parameters dropped");
        return;
      }
      text.parameters.push_back({cells[0], cells[1], cells.back()});
      consume_metadata();
      return;
    }
    if (text.returns) {
      flag(index_, "extra row in returns table");
      return;
    }
    if (cells.size() < 2 || cells.front().empty()) {
      table_malformed_ = true;
      flag(index_, "malformed returns row");
      return;
    }
    text.returns = ReturnInfo{cells.front(), cells.back()};
    consume_metadata();
  }

  bool text_has_description() const {
    const TextInfoRecord* text = peek_text();
    return text && !text->description.empty();
  }
  bool text_has_since() const {
    const TextInfoRecord* text = peek_text();
    return text && text->since_version.has_value();
  }
  const TextInfoRecord* peek_text() const {
    if (current_decl_) {
      return current_text_ ? &out_.text_info[*current_text_] : nullptr;
    }
    return pending_ ? &*pending_ : nullptr;
  }

  // The text record metadata on the current line belongs to. Before any
  // declaration, metadata buffers until the next declaration appears.
  // `fresh` starts a new record for the same declaration (a second version
  // block).
  TextInfoRecord& active_text(bool fresh_if_present) {
    if (!current_decl_) {
      if (!pending_) {
        pending_.emplace();
        pending_->source_id = file_.source_id;
      }
      return *pending_;
    }
    if (!current_text_ || fresh_if_present) {
      TextInfoRecord text;
      text.source_id = file_.source_id;
      text.attached_to = *current_decl_;
      out_.text_info.push_back(std::move(text));
      current_text_ = out_.text_info.size() - 1;
    }
    return out_.text_info[*current_text_];
  }

  void consume_metadata() {
    classes_[index_] = LineClass::consumed;
    if (!current_decl_) pending_lines_.push_back(index_);
  }

  void add_declaration(std::string text, EntityKind kind, std::size_t depth,
                       std::size_t first_line, std::size_t last_line) {
    CodeInfoRecord record;
    record.source_id = file_.source_id;
    record.declaration_text = std::move(text);
    record.kind_hint = kind;
    record.nesting_depth = depth;
    record.ordinal = out_.code_info.size();
    while (!stack_.empty() && stack_.back().nesting_depth >= depth) stack_.pop_back();
    stack_.push_back(record);
    out_.code_info.push_back(std::move(record));
    for (std::size_t i = first_line; i <= last_line; ++i) classes_[i] = LineClass::consumed;
    current_decl_ = out_.code_info.back().ordinal;
    current_text_.reset();
    if (pending_) {
      pending_->attached_to = *current_decl_;
      out_.text_info.push_back(std::move(*pending_));
      current_text_ = out_.text_info.size() - 1;
      pending_.reset();
      pending_lines_.clear();
    }
  }

  void close_fence() {
    const OpenFence fence = *fence_;
    fence_.reset();
    std::size_t first = fence.start + 1;
    std::size_t last = index_;  // exclusive
    while (first < last && trim(lines_[first]).empty()) ++first;
    while (last > first && trim(lines_[last - 1]).empty()) --last;
    if (first == last) return;
    std::string body;
    for (std::size_t i = first; i < last; ++i) {
      if (!body.empty()) body += '\n';
      body += lines_[i];
    }
    if (fence.signature_of_heading) {
      out_.code_info[*current_decl_].declaration_text = std::move(body);
      stack_.back().declaration_text = out_.code_info[*current_decl_].declaration_text;
      for (std::size_t i = fence.start; i <= index_; ++i) classes_[i] = LineClass::consumed;
      return;
    }
    const Rule* which = nullptr;
    if (!match(code_rules_, lines_[first], nullptr, &which)) return;  // example code
    std::size_t depth = 0;
    for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
      if (is_container(it->kind_hint)) {
        depth = it->nesting_depth + 1;
        break;
      }
    }
    add_declaration(std::move(body), which->kind, depth, fence.start, index_);
  }

  void finish() {
    if (fence_) {
      flag(fence_->start, "unterminated code fence");
      fence_.reset();
    }
    if (pending_) {
      for (std::size_t i : pending_lines_) {
        flag(i, "metadata with no following declaration");
      }
      pending_.reset();
    }
  }

  const RawDocFile& file_;
  std::vector<const Rule*> heading_rules_, code_rules_, fence_rules_, description_rules_,
      since_rules_, deprecated_rules_, parameters_rules_, returns_rules_, row_rules_,
      separator_rules_, header_rules_, flag_rules_;

  std::vector<std::string> lines_;
  std::vector<LineClass> classes_;
  std::size_t index_ = 0;
  ExtractionResult out_;

  std::vector<CodeInfoRecord> stack_;
  std::optional<std::size_t> current_decl_;
  std::optional<std::size_t> current_text_;
  std::optional<TextInfoRecord> pending_;
  std::vector<std::size_t> pending_lines_;
  std::optional<OpenFence> fence_;
  TableMode table_ = TableMode::none;
  bool table_malformed_ = false;
  bool after_heading_ = false;
};

}  // namespace

ExtractionResult extract_records(const RawDocFile& file, const RuleSet& rules) {
  return Extractor(file, rules).run();
}

IngestResult ingest_files(std::span<const RawDocFile> files, const RuleSet& rules,
                          std::size_t jobs) {
  std::vector<ExtractionResult> parts(files.size());
  parallel_for(files.size(), jobs,
               [&](std::size_t i) { parts[i] = extract_records(files[i], rules); });
  IngestResult merged;
  merged.files = files.size();
  for (auto& part : parts) {
    std::move(part.code_info.begin(), part.code_info.end(), std::back_inserter(merged.code_info));
    std::move(part.text_info.begin(), part.text_info.end(), std::back_inserter(merged.text_info));
    std::move(part.diagnostics.begin(), part.diagnostics.end(),
              std::back_inserter(merged.diagnostics));
  }
  return merged;
}

json to_json(const CodeInfoRecord& r) {
  return json{{"source_id", r.source_id},
              {"declaration_text", r.declaration_text},
              {"kind_hint", to_string(r.kind_hint)},
              {"nesting_depth", r.nesting_depth},
              {"ordinal", r.ordinal}};
}

namespace {

json parameters_to_json(const std::vector<Parameter>& parameters) {
  json out = json::array();
  for (const auto& p : parameters) {
    out.push_back({{"name", p.name}, {"type", p.type}, {"description", p.description}});
  }
  return out;
}

std::vector<Parameter> parameters_from_json(const json& j) {
  std::vector<Parameter> out;
  for (const auto& p : j) {
    out.push_back({p.at("name").get<std::string>(), p.at("type").get<std::string>(),
                   p.at("description").get<std::string>()});
  }
  return out;
}

}  // namespace

json to_json(const TextInfoRecord& r) {
  json j{{"source_id", r.source_id},
         {"attached_to", r.attached_to},
         {"description", r.description},
         {"parameters", parameters_to_json(r.parameters)},
         {"deprecated", r.deprecated}};
  if (r.returns) j["returns"] = {{"type", r.returns->type}, {"description", r.returns->description}};
  if (r.since_version) j["since_version"] = *r.since_version;
  return j;
}

CodeInfoRecord code_info_from_json(const json& j) {
  CodeInfoRecord r;
  r.source_id = j.at("source_id").get<std::string>();
  r.declaration_text = j.at("declaration_text").get<std::string>();
  const auto kind = parse_entity_kind(j.at("kind_hint").get<std::string>());
  if (!kind) throw Error(ErrorKind::schema, "unknown kind_hint in code_info");
  r.kind_hint = *kind;
  r.nesting_depth = j.at("nesting_depth").get<std::size_t>();
  r.ordinal = j.at("ordinal").get<std::size_t>();
  return r;
}

TextInfoRecord text_info_from_json(const json& j) {
  TextInfoRecord r;
  r.source_id = j.at("source_id").get<std::string>();
  r.attached_to = j.at("attached_to").get<std::size_t>();
  r.description = j.at("description").get<std::string>();
  r.parameters = parameters_from_json(j.at("parameters"));
  r.deprecated = j.at("deprecated").get<bool>();
  if (j.contains("returns") && !j["returns"].is_null()) {
    r.returns = ReturnInfo{j["returns"].at("type").get<std::string>(),
                           j["returns"].at("description").get<std::string>()};
  }
  if (j.contains("since_version") && !j["since_version"].is_null()) {
    r.since_version = j["since_version"].get<std::string>();
  }
  return r;
}

json extracted_to_json(std::span<const CodeInfoRecord> code_info,
                       std::span<const TextInfoRecord> text_info) {
  json doc{{"code_info", json::array()}, {"text_info", json::array()}};
  for (const auto& r : code_info) doc["code_info"].push_back(to_json(r));
  for (const auto& r : text_info) doc["text_info"].push_back(to_json(r));
  return doc;
}

IngestResult extracted_from_json(const json& doc) {
  IngestResult result;
  try {
    for (const auto& r : doc.at("code_info")) result.code_info.push_back(code_info_from_json(r));
    for (const auto& r : doc.at("text_info")) result.text_info.push_back(text_info_from_json(r));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("extracted.json: ") + e.what());
  }
  std::set<std::string> sources;
  for (const auto& r : result.code_info) sources.insert(r.source_id);
  result.files = sources.size();
  return result;
}

}  // namespace kgsynth
