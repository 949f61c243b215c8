#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/error.hpp"
#include "kgsynth/mcts.hpp"
#include "kgsynth/synth.hpp"

namespace kgsynth {

enum class Stage { ingest, build_graph, score, search, seeds, synth, dedup, export_, stats, run_all };

std::string_view to_string(Stage stage) noexcept;
std::optional<Stage> parse_stage(std::string_view text) noexcept;

enum class ProviderKind { logprob, sampling, mock };
enum class GeneratorKind { live, mock };

std::string_view to_string(ProviderKind kind) noexcept;
std::string_view to_string(GeneratorKind kind) noexcept;

struct PipelineConfig {
  std::filesystem::path corpus_root = "corpus";
  std::vector<std::string> include_patterns{"*.md"};
  std::optional<std::filesystem::path> rules_file;
  std::optional<std::filesystem::path> question_template;
  std::optional<std::filesystem::path> code_template;
  std::string framework = "HarmonyOS";
  SearchConfig search;
  Quotas quotas{6400, 1600};
  double dedup_threshold = 0.85;
  std::optional<std::filesystem::path> benchmark;
  std::size_t max_rounds = 10;
  ProviderKind provider = ProviderKind::mock;
  GeneratorKind generator = GeneratorKind::mock;
  std::filesystem::path out_dir = "out";
  std::size_t jobs = 4;
  double p_min = 1e-6;
  int sampling_k = 10;
  std::string llm_endpoint;  // falls back to LLM_ENDPOINT
  std::string llm_model;     // falls back to LLM_MODEL

  /// Throws Error(usage) on out-of-range values.
  void validate() const;
};

/// Unknown keys and type mismatches are usage errors. Relative paths are
/// resolved against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const PipelineConfig& config);

/// Snapshot file names inside out_dir.
namespace snapshot {
inline constexpr const char* extracted = "extracted.json";
inline constexpr const char* graph = "graph.json";
inline constexpr const char* scored_graph = "graph.scored.json";
inline constexpr const char* ue_cache = "ue-cache.json";
inline constexpr const char* trajectories = "trajectories.json";
inline constexpr const char* seeds = "seeds.json";
inline constexpr const char* raw_dataset = "raw_dataset.json";
inline constexpr const char* gen_cache = "gen-cache.json";
inline constexpr const char* deduped = "deduped.json";
inline constexpr const char* postproc_report = "postproc-report.json";
inline constexpr const char* dataset = "dataset.json";
inline constexpr const char* rejects = "rejects.json";
}  // namespace snapshot

using LogSink = std::function<void(std::string_view)>;

struct StageOutcome {
  std::vector<std::string> warnings;
  bool shortfall = false;
  nlohmann::json stats;  // filled by the stats stage
};

/// Runs one stage (or all, in order), reading the previous stages' snapshots
/// from out_dir. Throws Error(dependency) naming the stage whose snapshot is
/// missing.
StageOutcome run_stage(Stage stage, const PipelineConfig& config, const LogSink& log = {});

/// Dataset counts, seed_type ratio and per-kind node counts.
nlohmann::json dataset_stats(const PipelineConfig& config);

/// 2 usage, 3 dependency, 4 stall, 5 I/O, 1 anything else.
int exit_code_for(ErrorKind kind) noexcept;

/// Machine-readable error line for stderr.
nlohmann::json error_record(const Error& error, std::optional<Stage> stage);

/// Pretty JSON with a trailing newline; the snapshot byte format.
std::string dump_snapshot(const nlohmann::json& doc);

}  // namespace kgsynth
