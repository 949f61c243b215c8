#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/kinds.hpp"
#include "kgsynth/synth.hpp"

namespace kgsynth {

/// Unit-cost edit distance over Unicode code points (bit-parallel).
std::size_t levenshtein(std::u32string_view a, std::u32string_view b);
/// UTF-8 convenience overload.
std::size_t levenshtein(std::string_view a, std::string_view b);

/// 1 - d / max(|a|, |b|) in code points; 1.0 when both are empty.
double similarity(std::u32string_view a, std::u32string_view b);
double similarity(std::string_view a, std::string_view b);

struct SimilarPair {
  std::size_t index_a = 0;  // earlier kept tuple
  std::size_t index_b = 0;  // removed tuple
  double question_similarity = 0.0;
  double code_similarity = 0.0;

  bool operator==(const SimilarPair&) const = default;
};

struct BenchmarkHit {
  std::size_t index = 0;  // removed tuple
  std::size_t benchmark_index = 0;
  double question_similarity = 0.0;
  double code_similarity = 0.0;

  bool operator==(const BenchmarkHit&) const = default;
};

struct SimilarityReport {
  double threshold = 0.85;
  std::vector<SimilarPair> pairs;
  std::vector<BenchmarkHit> benchmark_hits;

  bool operator==(const SimilarityReport&) const = default;
};

struct BenchmarkEntry {
  std::string question;
  std::string code;
};

/// `benchmark.json`: array of {question, code}.
std::vector<BenchmarkEntry> benchmark_from_json(const nlohmann::json& doc);
std::vector<BenchmarkEntry> load_benchmark(const std::filesystem::path& path);

struct DedupOptions {
  double threshold = 0.85;
  /// Skip pairs that provably cannot reach the threshold (length ratio and
  /// shared 3-gram count). Turning it off changes speed, never results.
  bool prefilter = true;
  std::size_t jobs = 4;

  /// Throws Error(domain) unless threshold is in (0, 1].
  void validate() const;
};

/// Incremental near-duplicate filter: each offered text pair is compared
/// against the benchmark and every pair accepted before it.
class Deduper {
 public:
  Deduper(std::span<const BenchmarkEntry> benchmark, DedupOptions options);
  ~Deduper();
  Deduper(Deduper&&) noexcept;
  Deduper& operator=(Deduper&&) noexcept;

  struct Match {
    bool benchmark = false;
    std::size_t index = 0;  // benchmark index, or position among accepted pairs
    double question_similarity = 0.0;
    double code_similarity = 0.0;
  };

  /// nullopt and the pair is accepted, or the first match (benchmark
  /// entries first, then accepted pairs in order) and nothing changes.
  std::optional<Match> offer(std::string_view question, std::string_view code);

  std::size_t accepted() const noexcept;
  const DedupOptions& options() const noexcept;

  /// Pair comparisons that reached the exact distance computation.
  std::uint64_t exact_comparisons() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct DedupResult {
  std::vector<QuestionCodeTuple> kept;
  std::vector<QuestionCodeTuple> removed;
  std::vector<std::size_t> kept_indices;
  SimilarityReport report;
};

/// A tuple is removed when its question or code is at least `threshold`
/// similar to a benchmark entry or to an earlier kept tuple.
DedupResult dedup(std::span<const QuestionCodeTuple> tuples,
                  std::span<const BenchmarkEntry> benchmark, const DedupOptions& options);
/// Same, continuing from a filter that may already hold accepted pairs.
DedupResult dedup(std::span<const QuestionCodeTuple> tuples, Deduper& filter);

struct RegenerateResult {
  std::vector<QuestionCodeTuple> tuples;
  std::size_t rounds = 0;
  std::size_t generated = 0;
  std::size_t rejected = 0;
  Quotas shortfall;
  SimilarityReport report;  // indices refer to the candidate stream: kept first, then batches

  bool complete() const noexcept { return shortfall.single == 0 && shortfall.multi == 0; }
};

/// Tops up each seed type to its quota with fresh tuples from `source`,
/// filtering every batch through the same dedup rule. Stops after
/// `max_rounds` rounds and reports what is still missing.
RegenerateResult regenerate_to_size(std::vector<QuestionCodeTuple> kept, Quotas quotas,
                                    TupleSource& source, std::span<const BenchmarkEntry> benchmark,
                                    const DedupOptions& options, std::size_t max_rounds = 10);
/// Same, with `kept` already accepted by `filter` (as after dedup()).
RegenerateResult regenerate_to_size(std::vector<QuestionCodeTuple> kept, Quotas quotas,
                                    TupleSource& source, Deduper& filter,
                                    std::size_t max_rounds = 10);

struct TrainingRecord {
  std::string instruction;
  std::string input;
  std::string output;
  std::vector<std::string> api_nodes;
  SeedType seed_type = SeedType::single;

  bool operator==(const TrainingRecord&) const = default;
};

struct Reject {
  std::size_t index = 0;
  std::string reason;
  QuestionCodeTuple tuple;
};

struct StandardizeResult {
  std::vector<TrainingRecord> records;  // single first, then multi; stable
  std::vector<Reject> rejects;
};

StandardizeResult standardize(std::span<const QuestionCodeTuple> tuples);

/// Empty when the record is valid, else the first violated rule.
std::string validate_record(const TrainingRecord& record);

nlohmann::json to_json(const TrainingRecord& record);
/// Throws Error(schema) on missing fields or a failed validate_record.
TrainingRecord training_record_from_json(const nlohmann::json& j);
nlohmann::json records_to_json(std::span<const TrainingRecord> records);
std::vector<TrainingRecord> records_from_json(const nlohmann::json& doc);
nlohmann::json rejects_to_json(std::span<const Reject> rejects);
nlohmann::json to_json(const SimilarityReport& report);

}  // namespace kgsynth
