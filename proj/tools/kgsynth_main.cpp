// kgsynth: knowledge-graph guided instruction data synthesis, one stage at a time.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kgsynth/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> corpus;
  std::optional<std::string> out;
  std::optional<std::size_t> iterations;
  std::optional<double> exploration_c;
  std::optional<std::size_t> top_k;
  std::optional<uint64_t> seed;
  std::optional<double> threshold;
  std::optional<std::string> benchmark;
  std::optional<std::size_t> max_rounds;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> single;
  std::optional<std::size_t> multi;
  std::optional<std::string> provider;
  std::optional<std::string> generator;
  std::optional<std::string> framework;
  bool verbose = false;
};

void add_options(CLI::App& cmd, Overrides& o) {
  cmd.add_option("-c,--config", o.config, "JSON pipeline config");
  cmd.add_option("--corpus", o.corpus, "Documentation corpus root");
  cmd.add_option("-o,--out", o.out, "Snapshot directory");
  cmd.add_option("--iterations", o.iterations, "MCTS iterations per root");
  cmd.add_option("--exploration-c", o.exploration_c, "UCB1 exploration constant");
  cmd.add_option("--top-k", o.top_k, "Trajectories kept after search");
  cmd.add_option("--seed", o.seed, "RNG seed");
  cmd.add_option("--threshold", o.threshold, "Dedup similarity threshold in (0, 1]");
  cmd.add_option("--benchmark", o.benchmark, "Benchmark leakage file (JSON array of {question, code})");
  cmd.add_option("--max-rounds", o.max_rounds, "Regeneration rounds after dedup");
  cmd.add_option("-j,--jobs", o.jobs, "Parallelism bound for every stage");
  cmd.add_option("--single", o.single, "Single-API quota");
  cmd.add_option("--multi", o.multi, "Multi-API quota");
  cmd.add_option("--provider", o.provider, "Probability provider")
      ->check(CLI::IsMember({"logprob", "sampling", "mock"}));
  cmd.add_option("--generator", o.generator, "Text generator")
      ->check(CLI::IsMember({"live", "mock"}));
  cmd.add_option("--framework", o.framework, "Target framework name used in prompts");
  cmd.add_flag("-v,--verbose", o.verbose, "Debug logging");
}

kgsynth::PipelineConfig build_config(const Overrides& o) {
  namespace fs = std::filesystem;
  kgsynth::PipelineConfig c;
  if (!o.config.empty()) c = kgsynth::load_config(o.config);
  nlohmann::json patch = kgsynth::config_to_json(c);
  if (o.corpus) patch["corpus_root"] = fs::absolute(*o.corpus).string();
  if (o.out) patch["out_dir"] = fs::absolute(*o.out).string();
  if (o.iterations) patch["search"]["iterations_per_root"] = *o.iterations;
  if (o.exploration_c) patch["search"]["exploration_c"] = *o.exploration_c;
  if (o.top_k) patch["search"]["top_k"] = *o.top_k;
  if (o.seed) patch["search"]["rng_seed"] = *o.seed;
  if (o.threshold) patch["dedup_threshold"] = *o.threshold;
  if (o.benchmark) patch["benchmark"] = fs::absolute(*o.benchmark).string();
  if (o.max_rounds) patch["max_rounds"] = *o.max_rounds;
  if (o.jobs) patch["jobs"] = *o.jobs;
  if (o.single) patch["quotas"]["single"] = *o.single;
  if (o.multi) patch["quotas"]["multi"] = *o.multi;
  if (o.provider) patch["provider"] = *o.provider;
  if (o.generator) patch["generator"] = *o.generator;
  if (o.framework) patch["framework"] = *o.framework;
  return kgsynth::config_from_json(patch, fs::current_path());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthesize question/code training data from API documentation"};
  app.require_subcommand(1);
  Overrides overrides;
  std::optional<kgsynth::Stage> chosen;
  for (const char* name : {"ingest", "build-graph", "score", "search", "seeds", "synth", "dedup",
                           "export", "stats", "run-all"}) {
    CLI::App* sub = app.add_subcommand(name, std::string("Run the ") + name + " stage");
    add_options(*sub, overrides);
    sub->callback([&chosen, name] { chosen = kgsynth::parse_stage(name); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  auto logger = spdlog::stderr_color_mt("kgsynth");
  logger->set_pattern("%H:%M:%S %^%l%$ %v");
  logger->set_level(overrides.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    const kgsynth::PipelineConfig config = build_config(overrides);
    logger->debug("config: {}", kgsynth::config_to_json(config).dump());
    const auto outcome = kgsynth::run_stage(
        *chosen, config, [&](std::string_view line) { logger->info("{}", line); });
    if (!outcome.stats.is_null()) std::cout << outcome.stats.dump(2) << "\n";
    if (outcome.shortfall) {
      std::cerr << nlohmann::json{{"error", "shortfall"},
                                  {"message", "dataset is below quota"},
                                  {"exit_code", 4}}
                       .dump()
                << "\n";
      return 4;
    }
    return 0;
  } catch (const kgsynth::Error& e) {
    std::cerr << kgsynth::error_record(e, chosen).dump() << "\n";
    return kgsynth::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}, {"exit_code", 1}}
                     .dump()
              << "\n";
    return 1;
  }
}
