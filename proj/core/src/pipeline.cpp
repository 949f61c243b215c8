#include "kgsynth/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <map>

#include "kgsynth/cache.hpp"
#include "kgsynth/graph.hpp"
#include "kgsynth/ingest.hpp"
#include "kgsynth/llm_client.hpp"
#include "kgsynth/postproc.hpp"
#include "kgsynth/scoring.hpp"
#include "kgsynth/seeds.hpp"
#include "kgsynth/support.hpp"

namespace kgsynth {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::pair<Stage, std::string_view> kStageNames[] = {
    {Stage::ingest, "ingest"}, {Stage::build_graph, "build-graph"}, {Stage::score, "score"},
    {Stage::search, "search"}, {Stage::seeds, "seeds"},             {Stage::synth, "synth"},
    {Stage::dedup, "dedup"},   {Stage::export_, "export"},          {Stage::stats, "stats"},
    {Stage::run_all, "run-all"},
};

}  // namespace

std::string_view to_string(Stage stage) noexcept {
  for (const auto& [s, name] : kStageNames) {
    if (s == stage) return name;
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view text) noexcept {
  for (const auto& [s, name] : kStageNames) {
    if (name == text) return s;
  }
  return std::nullopt;
}

std::string_view to_string(ProviderKind kind) noexcept {
  switch (kind) {
    case ProviderKind::logprob: return "logprob";
    case ProviderKind::sampling: return "sampling";
    case ProviderKind::mock: return "mock";
  }
  return "?";
}

std::string_view to_string(GeneratorKind kind) noexcept {
  return kind == GeneratorKind::live ? "live" : "mock";
}

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw Error(ErrorKind::usage, msg); };
  if (!(dedup_threshold > 0.0 && dedup_threshold <= 1.0)) fail("dedup_threshold must be in (0, 1]");
  if (jobs < 1) fail("jobs must be >= 1");
  if (!(p_min > 0.0 && p_min < 1.0)) fail("p_min must be in (0, 1)");
  if (sampling_k < 1) fail("sampling_k must be >= 1");
  if (include_patterns.empty()) fail("include_patterns must not be empty");
  if (out_dir.empty()) fail("out_dir must be set");
  try {
    search.validate();
  } catch (const Error& e) {
    fail(std::string("search: ") + e.what());
  }
}

PipelineConfig config_from_json(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw Error(ErrorKind::usage, "config must be a JSON object");
  PipelineConfig c;
  const auto path_of = [&](const json& v) {
    fs::path p = v.get<std::string>();
    return p.is_relative() ? base_dir / p : p;
  };
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "corpus_root") {
        c.corpus_root = path_of(v);
      } else if (key == "include_patterns") {
        c.include_patterns = v.get<std::vector<std::string>>();
      } else if (key == "rules_file") {
        c.rules_file = path_of(v);
      } else if (key == "question_template") {
        c.question_template = path_of(v);
      } else if (key == "code_template") {
        c.code_template = path_of(v);
      } else if (key == "framework") {
        c.framework = v.get<std::string>();
      } else if (key == "search") {
        for (const auto& [skey, sv] : v.items()) {
          if (skey == "exploration_c") c.search.exploration_c = sv.get<double>();
          else if (skey == "iterations_per_root") c.search.iterations_per_root = sv.get<std::size_t>();
          else if (skey == "top_k") c.search.top_k = sv.get<std::size_t>();
          else if (skey == "rng_seed") c.search.rng_seed = sv.get<uint64_t>();
          else if (skey == "min_path_len") c.search.min_path_len = sv.get<std::size_t>();
          else throw Error(ErrorKind::usage, "unknown config key search." + skey);
        }
      } else if (key == "quotas") {
        for (const auto& [qkey, qv] : v.items()) {
          if (qkey == "single") c.quotas.single = qv.get<std::size_t>();
          else if (qkey == "multi") c.quotas.multi = qv.get<std::size_t>();
          else throw Error(ErrorKind::usage, "unknown config key quotas." + qkey);
        }
      } else if (key == "dedup_threshold") {
        c.dedup_threshold = v.get<double>();
      } else if (key == "benchmark") {
        if (!v.is_null()) c.benchmark = path_of(v);
      } else if (key == "max_rounds") {
        c.max_rounds = v.get<std::size_t>();
      } else if (key == "provider") {
        const auto s = v.get<std::string>();
        if (s == "logprob") c.provider = ProviderKind::logprob;
        else if (s == "sampling") c.provider = ProviderKind::sampling;
        else if (s == "mock") c.provider = ProviderKind::mock;
        else throw Error(ErrorKind::usage, "unknown provider " + s);
      } else if (key == "generator") {
        const auto s = v.get<std::string>();
        if (s == "live") c.generator = GeneratorKind::live;
        else if (s == "mock") c.generator = GeneratorKind::mock;
        else throw Error(ErrorKind::usage, "unknown generator " + s);
      } else if (key == "out_dir") {
        c.out_dir = path_of(v);
      } else if (key == "jobs") {
        c.jobs = v.get<std::size_t>();
      } else if (key == "p_min") {
        c.p_min = v.get<double>();
      } else if (key == "sampling_k") {
        c.sampling_k = v.get<int>();
      } else if (key == "llm_endpoint") {
        c.llm_endpoint = v.get<std::string>();
      } else if (key == "llm_model") {
        c.llm_model = v.get<std::string>();
      } else {
        throw Error(ErrorKind::usage, "unknown config key " + key);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::usage, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::usage, e.what());
  }
  try {
    return config_from_json(json::parse(text), path.parent_path());
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::usage, path.string() + ": " + e.what());
  }
}

json config_to_json(const PipelineConfig& c) {
  json j{{"corpus_root", c.corpus_root.string()},
         {"include_patterns", c.include_patterns},
         {"framework", c.framework},
         {"search",
          {{"exploration_c", c.search.exploration_c},
           {"iterations_per_root", c.search.iterations_per_root},
           {"top_k", c.search.top_k},
           {"rng_seed", c.search.rng_seed},
           {"min_path_len", c.search.min_path_len}}},
         {"quotas", {{"single", c.quotas.single}, {"multi", c.quotas.multi}}},
         {"dedup_threshold", c.dedup_threshold},
         {"max_rounds", c.max_rounds},
         {"provider", to_string(c.provider)},
         {"generator", to_string(c.generator)},
         {"out_dir", c.out_dir.string()},
         {"jobs", c.jobs},
         {"p_min", c.p_min},
         {"sampling_k", c.sampling_k}};
  if (c.rules_file) j["rules_file"] = c.rules_file->string();
  if (c.question_template) j["question_template"] = c.question_template->string();
  if (c.code_template) j["code_template"] = c.code_template->string();
  if (c.benchmark) j["benchmark"] = c.benchmark->string();
  if (!c.llm_endpoint.empty()) j["llm_endpoint"] = c.llm_endpoint;
  if (!c.llm_model.empty()) j["llm_model"] = c.llm_model;
  return j;
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::dependency: return 3;
    case ErrorKind::stall: return 4;
    case ErrorKind::io:
    case ErrorKind::corpus_access: return 5;
    default: return 1;
  }
}

json error_record(const Error& error, std::optional<Stage> stage) {
  json j{{"error", to_string(error.kind())},
         {"message", error.what()},
         {"exit_code", exit_code_for(error.kind())}};
  if (stage) j["stage"] = to_string(*stage);
  return j;
}

std::string dump_snapshot(const json& doc) { return doc.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Stages

namespace {

class StageRunner {
 public:
  StageRunner(const PipelineConfig& config, const LogSink& log, StageOutcome& outcome)
      : c_(config), log_(log), outcome_(outcome) {}

  void run(Stage stage) {
    switch (stage) {
      case Stage::ingest: return ingest();
      case Stage::build_graph: return build_graph_stage();
      case Stage::score: return score();
      case Stage::search: return search();
      case Stage::seeds: return seeds();
      case Stage::synth: return synth();
      case Stage::dedup: return dedup_stage();
      case Stage::export_: return export_stage();
      case Stage::stats: return stats();
      case Stage::run_all: break;
    }
  }

 private:
  fs::path out(const char* name) const { return c_.out_dir / name; }

  json require(const char* name, Stage producer) const {
    const fs::path path = out(name);
    if (!fs::exists(path)) {
      throw Error(ErrorKind::dependency, "missing snapshot " + path.string() + "; run stage '" +
                                             std::string(to_string(producer)) + "' first");
    }
    try {
      return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::schema, path.string() + ": " + e.what());
    }
  }

  void write(const char* name, const json& doc) const {
    fs::create_directories(c_.out_dir);
    write_file_atomic(out(name), dump_snapshot(doc));
  }

  void write_log(const std::string& name, std::span<const Diagnostic> diagnostics) const {
    fs::create_directories(c_.out_dir);
    write_file_atomic(c_.out_dir / name, format_diagnostics(diagnostics));
  }

  void warn(std::string message) const {
    if (log_) log_("warning: " + message);
    outcome_.warnings.push_back(std::move(message));
  }

  void info(const std::string& message) const {
    if (log_) log_(message);
  }

  std::shared_ptr<const ChatClient> chat_client() const {
    LlmEndpoint endpoint;
    const auto env = [](const char* name) {
      const char* v = std::getenv(name);
      return std::string(v ? v : "");
    };
    endpoint.url = c_.llm_endpoint.empty() ? env("LLM_ENDPOINT") : c_.llm_endpoint;
    endpoint.model = c_.llm_model.empty() ? env("LLM_MODEL") : c_.llm_model;
    endpoint.api_key = env("LLM_API_KEY");
    if (endpoint.url.empty() || endpoint.model.empty()) {
      throw Error(ErrorKind::usage,
                  "live LLM access needs llm_endpoint/llm_model (or LLM_ENDPOINT/LLM_MODEL)");
    }
    return std::make_shared<const ChatClient>(std::move(endpoint));
  }

  ApiGraph scored_graph() const {
    return graph_from_json(require(snapshot::scored_graph, Stage::score));
  }

  std::vector<SeedBundle> load_seeds() const {
    return seeds_from_json(require(snapshot::seeds, Stage::seeds));
  }

  Quotas effective_quotas(std::span<const SeedBundle> bundles) const {
    Quotas q = c_.quotas;
    const bool has_multi = std::any_of(bundles.begin(), bundles.end(), [](const SeedBundle& b) {
      return b.seed_type == SeedType::multi;
    });
    if (q.multi > 0 && !has_multi) {
      warn("no multi-API seeds available; producing a single-API dataset (multi quota 0)");
      q.multi = 0;
    }
    return q;
  }

  // Runs fn with a SynthEngine over the seeds, saving the generation cache.
  template <typename Fn>
  void with_engine(Fn&& fn) const {
    const ApiGraph graph = scored_graph();
    std::vector<SeedBundle> bundles = load_seeds();
    const Quotas quotas = effective_quotas(bundles);

    MockGenerator mock;
    std::unique_ptr<LiveGenerator> live;
    GeneratorClient* inner = &mock;
    if (c_.generator == GeneratorKind::live) {
      live = std::make_unique<LiveGenerator>(chat_client(), RetryPolicy{});
      inner = live.get();
    }
    fs::create_directories(c_.out_dir);
    ResponseCache cache(out(snapshot::gen_cache));
    CachedGenerator cached(*inner, cache);

    SynthOptions options;
    options.framework = c_.framework;
    options.jobs = c_.jobs;
    SynthEngine engine(
        graph, std::move(bundles), cached, options,
        c_.question_template ? PromptTemplate::load("question_gen", *c_.question_template)
                             : PromptTemplate::default_question(),
        c_.code_template ? PromptTemplate::load("code_gen", *c_.code_template)
                         : PromptTemplate::default_code());
    try {
      fn(engine, quotas);
    } catch (...) {
      cache.save();
      throw;
    }
    cache.save();
    info("generator calls: " + std::to_string(cached.upstream_calls()) + " uncached, " +
         std::to_string(cache.hits()) + " cache hits");
  }

  void ingest() const {
    const RuleSet rules = c_.rules_file ? RuleSet::load(*c_.rules_file) : RuleSet::defaults();
    const auto files = scan_corpus(c_.corpus_root, c_.include_patterns);
    const IngestResult result = ingest_files(files, rules, c_.jobs);
    write(snapshot::extracted, extracted_to_json(result.code_info, result.text_info));
    write_log("ingest-diagnostics.log", result.diagnostics);
    info("ingested " + std::to_string(result.files) + " files: " +
         std::to_string(result.code_info.size()) + " declarations, " +
         std::to_string(result.diagnostics.size()) + " diagnostics");
  }

  void build_graph_stage() const {
    const IngestResult extracted = extracted_from_json(require(snapshot::extracted, Stage::ingest));
    const GraphBuildResult result = build_graph(extracted.code_info, extracted.text_info);
    write(snapshot::graph, graph_to_json(result.graph));
    write_log("graph-diagnostics.log", result.diagnostics);
    info("graph: " + std::to_string(result.graph.size()) + " nodes, " +
         std::to_string(result.graph.count(Relation::contains)) + " CONTAINS, " +
         std::to_string(result.graph.count(Relation::references)) + " REFERENCES");
  }

  void score() const {
    ApiGraph graph = graph_from_json(require(snapshot::graph, Stage::build_graph));
    std::unique_ptr<ProbabilityProvider> provider;
    switch (c_.provider) {
      case ProviderKind::mock:
        provider = std::make_unique<MockProvider>(c_.search.rng_seed);
        break;
      case ProviderKind::logprob:
        provider = std::make_unique<LogprobProvider>(chat_client(), c_.framework);
        break;
      case ProviderKind::sampling:
        provider = std::make_unique<SamplingProvider>(chat_client(), c_.framework, c_.sampling_k);
        break;
    }
    fs::create_directories(c_.out_dir);
    ResponseCache cache(out(snapshot::ue_cache));
    CachedProvider cached(*provider, cache);
    ScoringOptions options;
    options.p_min = c_.p_min;
    options.jobs = c_.jobs;
    ScoreReport report;
    try {
      report = score_all(graph, cached, options);
    } catch (...) {
      cache.save();
      throw;
    }
    cache.save();
    write(snapshot::scored_graph, graph_to_json(graph));
    write_log("score-diagnostics.log", report.failures);
    info("scored " + std::to_string(report.scores.size() - report.unscored) + " of " +
         std::to_string(report.scores.size()) + " non-leaf nodes");
  }

  void search() const {
    const ApiGraph graph = scored_graph();
    SearchOutcome result;
    bool empty = false;
    try {
      result = search_all(graph, c_.search, c_.jobs);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::empty_search) throw;
      warn(std::string("search found no usable trajectory: ") + e.what());
      empty = true;
    }
    write(snapshot::trajectories, {{"top", trajectories_to_json(result.top)},
                                   {"simulated", result.all.size()},
                                   {"empty", empty}});
    write_log("search-diagnostics.log", result.diagnostics);
    info("search: " + std::to_string(result.all.size()) + " trajectories, kept " +
         std::to_string(result.top.size()));
  }

  void seeds() const {
    const ApiGraph graph = scored_graph();
    const json traj = require(snapshot::trajectories, Stage::search);
    const std::vector<Trajectory> tops = trajectories_from_json(traj.at("top"));
    std::vector<SeedBundle> bundles = single_api_seeds(graph);
    std::vector<Diagnostic> diagnostics;
    if (!tops.empty() && c_.quotas.multi > 0) {
      Rng rng(splitmix64(c_.search.rng_seed ^ 0x5eedULL));
      MultiSeedResult multi = multi_api_seeds(
          graph, tops, per_path_for_quota(c_.quotas.multi, tops.size()), rng);
      bundles.insert(bundles.end(), multi.bundles.begin(), multi.bundles.end());
      diagnostics = std::move(multi.diagnostics);
    }
    bundles = drop_repeated_targets(std::move(bundles), diagnostics);
    write(snapshot::seeds, seeds_to_json(bundles));
    write_log("seeds-diagnostics.log", diagnostics);
    info("seeds: " + std::to_string(bundles.size()) + " bundles");
  }

  void synth() const {
    with_engine([&](SynthEngine& engine, Quotas quotas) {
      std::vector<QuestionCodeTuple> tuples;
      try {
        tuples = engine.synthesize(quotas);
      } catch (...) {
        write_log("synth-diagnostics.log", engine.take_diagnostics());
        throw;
      }
      write(snapshot::raw_dataset, tuples_to_json(tuples));
      write_log("synth-diagnostics.log", engine.take_diagnostics());
      info("synthesized " + std::to_string(tuples.size()) + " tuples");
    });
  }

  void dedup_stage() const {
    const auto raw = tuples_from_json(require(snapshot::raw_dataset, Stage::synth));
    std::vector<BenchmarkEntry> benchmark;
    if (c_.benchmark) benchmark = load_benchmark(*c_.benchmark);
    with_engine([&](SynthEngine& engine, Quotas quotas) {
      engine.resume_after(raw);
      DedupOptions options;
      options.threshold = c_.dedup_threshold;
      options.jobs = c_.jobs;
      const RegenerateResult result =
          regenerate_to_size(raw, quotas, engine, benchmark, options, c_.max_rounds);
      std::size_t single = 0;
      for (const auto& t : result.tuples) single += t.seed_type == SeedType::single;
      write(snapshot::deduped, tuples_to_json(result.tuples));
      write(snapshot::postproc_report,
            {{"similarity", to_json(result.report)},
             {"input", raw.size()},
             {"removed", result.rejected},
             {"regenerated", result.generated},
             {"rounds", result.rounds},
             {"shortfall", {{"single", result.shortfall.single}, {"multi", result.shortfall.multi}}},
             {"final_counts", {{"single", single}, {"multi", result.tuples.size() - single}}}});
      write_log("dedup-diagnostics.log", engine.take_diagnostics());
      info("dedup: removed " + std::to_string(result.rejected) + ", regenerated " +
           std::to_string(result.generated) + " in " + std::to_string(result.rounds) +
           " rounds");
      if (!result.complete()) {
        outcome_.shortfall = true;
        warn("quota shortfall after " + std::to_string(result.rounds) + " rounds: single " +
             std::to_string(result.shortfall.single) + ", multi " +
             std::to_string(result.shortfall.multi));
      }
    });
  }

  void export_stage() const {
    const auto tuples = tuples_from_json(require(snapshot::deduped, Stage::dedup));
    const StandardizeResult result = standardize(tuples);
    write(snapshot::dataset, records_to_json(result.records));
    write(snapshot::rejects, rejects_to_json(result.rejects));
    info("exported " + std::to_string(result.records.size()) + " records, " +
         std::to_string(result.rejects.size()) + " rejects");
  }

  void stats() const {
    outcome_.stats = dataset_stats(c_);
    info(outcome_.stats.dump());
  }

  const PipelineConfig& c_;
  const LogSink& log_;
  StageOutcome& outcome_;
};

}  // namespace

json dataset_stats(const PipelineConfig& config) {
  const fs::path dataset = config.out_dir / snapshot::dataset;
  if (!fs::exists(dataset)) {
    throw Error(ErrorKind::dependency,
                "missing snapshot " + dataset.string() + "; run stage 'export' first");
  }
  const auto records = records_from_json(json::parse(read_text_file(dataset)));
  std::size_t single = 0;
  for (const auto& r : records) single += r.seed_type == SeedType::single;
  const std::size_t multi = records.size() - single;
  const auto share = [&](std::size_t n) {
    return records.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(records.size());
  };
  json stats{{"records", records.size()},
             {"single", single},
             {"multi", multi},
             {"single_share", share(single)},
             {"multi_share", share(multi)}};

  fs::path graph_file = config.out_dir / snapshot::scored_graph;
  if (!fs::exists(graph_file)) graph_file = config.out_dir / snapshot::graph;
  if (fs::exists(graph_file)) {
    const ApiGraph graph = graph_from_json(json::parse(read_text_file(graph_file)));
    std::map<std::string, std::size_t> kinds;
    for (const auto& [id, node] : graph.nodes()) ++kinds[std::string(to_string(node.kind))];
    stats["node_kinds"] = kinds;
    stats["nodes"] = graph.size();
  }
  return stats;
}

StageOutcome run_stage(Stage stage, const PipelineConfig& config, const LogSink& log) {
  config.validate();
  StageOutcome outcome;
  StageRunner runner(config, log, outcome);
  const auto timed = [&](Stage s) {
    const auto start = std::chrono::steady_clock::now();
    if (log) log(std::string("stage ") + std::string(to_string(s)) + " started");
    runner.run(s);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    if (log) {
      log(std::string("stage ") + std::string(to_string(s)) + " finished in " +
          std::to_string(ms) + " ms");
    }
  };
  if (stage != Stage::run_all) {
    timed(stage);
    return outcome;
  }
  for (const Stage s : {Stage::ingest, Stage::build_graph, Stage::score, Stage::search,
                        Stage::seeds, Stage::synth, Stage::dedup, Stage::export_, Stage::stats}) {
    timed(s);
  }
  return outcome;
}

}  // namespace kgsynth
