#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/diagnostics.hpp"
#include "kgsynth/kinds.hpp"

namespace kgsynth {

struct RawDocFile {
  std::filesystem::path path;
  std::string source_id;  // root-relative path with '/' separators
  std::vector<std::string> lines;
};

struct CodeInfoRecord {
  std::string source_id;
  std::string declaration_text;
  EntityKind kind_hint = EntityKind::unknown;
  std::size_t nesting_depth = 0;
  std::size_t ordinal = 0;

  bool operator==(const CodeInfoRecord&) const = default;
};

struct Parameter {
  std::string name;
  std::string type;
  std::string description;

  bool operator==(const Parameter&) const = default;
};

struct ReturnInfo {
  std::string type;
  std::string description;

  bool operator==(const ReturnInfo&) const = default;
};

struct TextInfoRecord {
  std::string source_id;
  std::size_t attached_to = 0;
  std::string description;
  std::vector<Parameter> parameters;
  std::optional<ReturnInfo> returns;
  std::optional<std::string> since_version;
  bool deprecated = false;

  bool operator==(const TextInfoRecord&) const = default;
};

enum class RuleRole {
  heading_declaration,  // groups: 1 = heading marks, 2 = kind keyword, 3 = declaration
  code_declaration,     // matched against a fenced block's first line; carries a kind
  fence,                // groups: 1 = fence marker, 2 = info string
  description,          // group 1 = text
  since,                // group 1 = version
  deprecated,
  parameters_header,
  returns_header,
  table_row,
  table_separator,
  table_header,
  flag,                 // suspicious lines that no other rule consumed
};

struct Rule {
  std::string name;
  RuleRole role = RuleRole::flag;
  std::string pattern;
  EntityKind kind = EntityKind::unknown;
  std::regex regex;
};

/// Named line patterns driving extraction. Loaded from JSON:
/// `{"rules":[{"name":..,"role":..,"pattern":..,"kind":..}]}`.
class RuleSet {
 public:
  static RuleSet from_json(const nlohmann::json& doc);
  static RuleSet load(const std::filesystem::path& path);
  /// The rules shipped in config/rules.json.
  static const RuleSet& defaults();

  std::span<const Rule> rules() const noexcept { return rules_; }
  std::vector<const Rule*> with_role(RuleRole role) const;

 private:
  std::vector<Rule> rules_;
};

struct LineTally {
  std::size_t lines = 0;
  std::size_t consumed = 0;
  std::size_t flagged = 0;
  std::size_t ignored = 0;
};

struct ExtractionResult {
  std::vector<CodeInfoRecord> code_info;
  std::vector<TextInfoRecord> text_info;
  std::vector<Diagnostic> diagnostics;
  LineTally tally;
};

/// Enumerates files under `root` whose root-relative path (or file name, for
/// patterns without '/') matches any glob. Sorted by path.
std::vector<RawDocFile> scan_corpus(const std::filesystem::path& root,
                                    std::span<const std::string> include_patterns);

ExtractionResult extract_records(const RawDocFile& file, const RuleSet& rules);

struct IngestResult {
  std::vector<CodeInfoRecord> code_info;
  std::vector<TextInfoRecord> text_info;
  std::vector<Diagnostic> diagnostics;
  std::size_t files = 0;
};

/// Extracts every file (up to `jobs` in parallel) and merges by (path, ordinal).
IngestResult ingest_files(std::span<const RawDocFile> files, const RuleSet& rules,
                          std::size_t jobs = 1);

nlohmann::json to_json(const CodeInfoRecord& record);
nlohmann::json to_json(const TextInfoRecord& record);
CodeInfoRecord code_info_from_json(const nlohmann::json& j);
TextInfoRecord text_info_from_json(const nlohmann::json& j);

/// The `extracted.json` interchange document.
nlohmann::json extracted_to_json(std::span<const CodeInfoRecord> code_info,
                                 std::span<const TextInfoRecord> text_info);
IngestResult extracted_from_json(const nlohmann::json& doc);

}  // namespace kgsynth
