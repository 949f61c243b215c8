#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgsynth/cache.hpp"
#include "kgsynth/diagnostics.hpp"
#include "kgsynth/graph.hpp"
#include "kgsynth/kinds.hpp"
#include "kgsynth/llm_client.hpp"
#include "kgsynth/seeds.hpp"

namespace kgsynth {

/// Prompt text with `{placeholder}` slots. Only lowercase identifiers in
/// braces are slots; any other brace is literal.
class PromptTemplate {
 public:
  PromptTemplate(std::string name, std::string body);

  static PromptTemplate load(std::string name, const std::filesystem::path& path);
  static PromptTemplate default_question();
  static PromptTemplate default_code();

  const std::string& name() const noexcept { return name_; }
  const std::set<std::string>& placeholders() const noexcept { return placeholders_; }

  /// Throws Error(template_error) if any slot in the body has no binding.
  std::string render(const std::map<std::string, std::string>& bindings) const;

 private:
  std::string name_;
  std::string body_;
  std::set<std::string> placeholders_;
};

class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(const std::string& prompt, double temperature, int max_tokens) = 0;
};

/// Offline stand-in: derives a question or a code answer from a hash of the
/// prompt and temperature, naming every target listed in the prompt.
class MockGenerator final : public GeneratorClient {
 public:
  std::string id() const override { return "mock-generator"; }
  std::string complete(const std::string& prompt, double temperature, int max_tokens) override;
};

class LiveGenerator final : public GeneratorClient {
 public:
  LiveGenerator(std::shared_ptr<const ChatClient> client, RetryPolicy retry);
  std::string id() const override;
  std::string complete(const std::string& prompt, double temperature, int max_tokens) override;

 private:
  std::shared_ptr<const ChatClient> client_;
  RetryPolicy retry_;
};

/// Answers from a ResponseCache keyed by prompt hash and temperature; only
/// misses reach the wrapped client.
class CachedGenerator final : public GeneratorClient {
 public:
  CachedGenerator(GeneratorClient& inner, ResponseCache& cache) : inner_(inner), cache_(cache) {}
  std::string id() const override { return inner_.id(); }
  std::string complete(const std::string& prompt, double temperature, int max_tokens) override;

  static std::string cache_key(std::string_view generator_id, std::string_view prompt,
                               double temperature);
  std::size_t upstream_calls() const noexcept { return upstream_calls_; }

 private:
  GeneratorClient& inner_;
  ResponseCache& cache_;
  std::atomic<std::size_t> upstream_calls_{0};
};

struct GenMeta {
  std::string model;
  double temperature = 0.0;
  std::string question_prompt_hash;
  std::string code_prompt_hash;
  std::size_t bundle_index = 0;
  std::size_t reuse_index = 0;

  bool operator==(const GenMeta&) const = default;
};

struct QuestionCodeTuple {
  std::string question;
  std::string code;
  std::vector<std::string> api_nodes;
  SeedType seed_type = SeedType::single;
  GenMeta gen_meta;

  bool operator==(const QuestionCodeTuple&) const = default;
};

struct Quotas {
  std::size_t single = 0;
  std::size_t multi = 0;

  std::size_t of(SeedType type) const noexcept {
    return type == SeedType::single ? single : multi;
  }
};

struct SynthOptions {
  std::string framework = "HarmonyOS";
  double base_temperature = 0.7;
  double temperature_step = 0.1;
  double max_temperature = 1.0;
  int question_max_tokens = 512;
  int code_max_tokens = 2048;
  int attempts = 3;
  std::size_t jobs = 4;
  std::size_t stall_window = 50;
  double stall_skip_rate = 0.9;
};

/// Source of replacement tuples for the post-processing stage.
class TupleSource {
 public:
  virtual ~TupleSource() = default;
  /// Up to `count` new validated tuples of `type`; never repeats a
  /// (bundle, reuse) slot already handed out.
  virtual std::vector<QuestionCodeTuple> generate(SeedType type, std::size_t count) = 0;
};

struct GeneratedText {
  std::string text;
  std::string prompt_hash;
};

/// Renders prompts from seed bundles and drives a GeneratorClient. Bundles
/// are reused round-robin, one temperature step per reuse cycle.
class SynthEngine final : public TupleSource {
 public:
  SynthEngine(const ApiGraph& graph, std::vector<SeedBundle> bundles, GeneratorClient& client,
              SynthOptions options = {},
              PromptTemplate question_template = PromptTemplate::default_question(),
              PromptTemplate code_template = PromptTemplate::default_code());

  std::string render_question_prompt(const SeedBundle& bundle, std::size_t reuse_index = 0,
                                     int attempt = 1) const;
  std::string render_code_prompt(std::string_view question, const SeedBundle& bundle,
                                 int attempt = 1) const;

  /// Trimmed answer mentioning at least one target name, or nullopt after
  /// options.attempts rejected answers (a diagnostic is recorded).
  std::optional<GeneratedText> generate_question(const SeedBundle& bundle, double temperature,
                                                 std::size_t reuse_index = 0);
  /// Trimmed code answer referencing every target name, or nullopt.
  std::optional<GeneratedText> generate_code(std::string_view question, const SeedBundle& bundle,
                                             double temperature);

  double temperature_for(std::size_t reuse_index) const noexcept;

  /// Round-robins the bundles of each type until the quota of validated
  /// tuples is met. Throws Error(stall) when more than stall_skip_rate of the
  /// last stall_window attempts were skipped.
  std::vector<QuestionCodeTuple> synthesize(Quotas quotas);

  std::vector<QuestionCodeTuple> generate(SeedType type, std::size_t count) override;

  /// Moves each type's cursor past the last slot used by `produced`, so later
  /// calls never repeat a (bundle, reuse) pair from an earlier run.
  void resume_after(std::span<const QuestionCodeTuple> produced);

  std::vector<Diagnostic> take_diagnostics();

 private:
  struct Slot {
    std::size_t bundle_index = 0;
    std::size_t reuse_index = 0;
  };

  struct Outcome {
    std::optional<QuestionCodeTuple> tuple;
    std::vector<Diagnostic> diagnostics;
  };

  std::optional<GeneratedText> question_for(const SeedBundle& bundle, double temperature,
                                            std::size_t reuse_index,
                                            std::vector<Diagnostic>& diagnostics);
  std::optional<GeneratedText> code_for(std::string_view question, const SeedBundle& bundle,
                                        double temperature, std::vector<Diagnostic>& diagnostics);
  Outcome produce(SeedType type, Slot slot);
  /// Waves of up to `count` parallel slots, consumed in slot order so the
  /// result does not depend on completion order.
  std::vector<QuestionCodeTuple> fill(SeedType type, std::size_t count, bool throw_on_stall);
  void add_diagnostic(Diagnostic d);

  const ApiGraph& graph_;
  std::map<SeedType, std::vector<SeedBundle>> bundles_;
  GeneratorClient& client_;
  SynthOptions options_;
  PromptTemplate question_template_;
  PromptTemplate code_template_;
  std::map<SeedType, std::size_t> cursor_;
  std::mutex diagnostics_mutex_;
  std::vector<Diagnostic> diagnostics_;
};

/// Convenience wrapper over SynthEngine::synthesize.
std::vector<QuestionCodeTuple> synthesize_dataset(const ApiGraph& graph,
                                                  std::span<const SeedBundle> bundles,
                                                  Quotas quotas, GeneratorClient& client,
                                                  const SynthOptions& options = {});

nlohmann::json to_json(const QuestionCodeTuple& tuple);
QuestionCodeTuple tuple_from_json(const nlohmann::json& j);
nlohmann::json tuples_to_json(std::span<const QuestionCodeTuple> tuples);
std::vector<QuestionCodeTuple> tuples_from_json(const nlohmann::json& doc);

}  // namespace kgsynth
