#include "kgsynth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <regex>
#include <sstream>

#include "kgsynth/defaults.hpp"
#include "kgsynth/error.hpp"
#include "kgsynth/support.hpp"

namespace kgsynth {

using nlohmann::json;

namespace {

const std::regex& placeholder_regex() {
  static const std::regex re(R"(\{([a-z_][a-z0-9_]*)\})");
  return re;
}

}  // namespace

PromptTemplate::PromptTemplate(std::string name, std::string body)
    : name_(std::move(name)), body_(std::move(body)) {
  for (std::sregex_iterator it(body_.begin(), body_.end(), placeholder_regex()), end; it != end;
       ++it) {
    placeholders_.insert((*it)[1].str());
  }
}

PromptTemplate PromptTemplate::load(std::string name, const std::filesystem::path& path) {
  return PromptTemplate(std::move(name), read_text_file(path));
}

PromptTemplate PromptTemplate::default_question() {
  return PromptTemplate("question_gen", std::string(default_question_template()));
}

PromptTemplate PromptTemplate::default_code() {
  return PromptTemplate("code_gen", std::string(default_code_template()));
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& bindings) const {
  std::string out;
  out.reserve(body_.size());
  auto last = body_.cbegin();
  for (std::sregex_iterator it(body_.begin(), body_.end(), placeholder_regex()), end; it != end;
       ++it) {
    const auto& m = *it;
    const auto value = bindings.find(m[1].str());
    if (value == bindings.end()) {
      throw Error(ErrorKind::template_error,
                  "template " + name_ + ": placeholder {" + m[1].str() + "} is not bound");
    }
    out.append(last, m[0].first);
    out += value->second;
    last = m[0].second;
  }
  out.append(last, body_.cend());
  return out;
}

// ---------------------------------------------------------------------------
// Mock generator

namespace {

struct MockTarget {
  std::string kind;
  std::string name;
};

std::vector<MockTarget> parse_markers(const std::string& prompt, std::string_view marker) {
  const std::regex line_re("^\\[" + std::string(marker) + "\\] (\\S+) (\\S+) \\(.*\\)\\s*$");
  std::vector<MockTarget> targets;
  std::istringstream in(prompt);
  std::string line;
  std::smatch m;
  while (std::getline(in, line)) {
    if (std::regex_match(line, m, line_re)) targets.push_back({m[1].str(), m[2].str()});
  }
  return targets;
}

const char* const kScenarios[] = {
    "shopping cart",    "fitness tracker",  "photo gallery",  "weather widget",
    "chat client",      "music player",     "news reader",    "expense ledger",
    "smart home panel", "parking finder",   "recipe planner", "flight tracker",
    "note taking tool", "language tutor",   "ride sharing",   "library catalog",
    "sensor dashboard", "ticket booking",   "habit tracker",  "file synchronizer",
};

const char* const kGoals[] = {
    "keeps the most recent {n} entries",
    "groups items by their {w} field",
    "rejects duplicate {w} values",
    "retries a failed {w} lookup up to {n} times",
    "reports progress every {n} milliseconds",
    "merges two {w} collections without losing order",
    "caches the last {n} {w} results",
    "sorts {w} records in descending order",
    "pages through {w} results {n} at a time",
    "exposes a read-only view of the {w} state",
    "persists {w} preferences across restarts",
    "validates {w} input before saving it",
};

const char* const kSentences[] = {
    "Build a {s} feature that {g}.",
    "A {s} screen needs a helper named {f} which {g}.",
    "Implement {f} for a {s}; it {g}.",
    "Your {s} module must provide {f}, a routine that {g}.",
    "Design the {w} handling of a {s} so that it {g}.",
    "Extend the {s} with {f} so that the app {g}.",
    "Explain how to write {f}, which {g} in a {s}.",
    "The {s} team asks for {f}: it {g}.",
};

const char* const kSyllables[] = {"ka", "lo", "mir", "ven", "to", "sa", "rin", "del", "pu",
                                  "qua", "zen", "bor", "li", "ne", "gar", "fo", "tis", "hu",
                                  "mel", "ox", "ra", "ju", "wen", "cy"};

template <typename T, std::size_t N>
const T& pick(const T (&items)[N], Rng& rng) {
  return items[uniform_index(rng, N)];
}

std::string word(Rng& rng, std::size_t syllables) {
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) w += pick(kSyllables, rng);
  return w;
}

std::string camel(Rng& rng) {
  std::string w = word(rng, 2 + uniform_index(rng, 2));
  std::string tail = word(rng, 2);
  tail[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(tail[0])));
  return w + tail;
}

std::string expand(std::string text, Rng& rng, const std::string& fn) {
  const auto replace = [&](const std::string& key, auto make) {
    for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos)) {
      const std::string value = make();
      text.replace(pos, key.size(), value);
      pos += value.size();
    }
  };
  replace("{g}", [&] { return std::string(pick(kGoals, rng)); });
  replace("{s}", [&] { return std::string(pick(kScenarios, rng)); });
  replace("{f}", [&] { return fn; });
  replace("{w}", [&] { return word(rng, 2); });
  replace("{n}", [&] { return std::to_string(2 + uniform_index(rng, 998)); });
  return text;
}

std::string join_names(const std::vector<MockTarget>& targets) {
  std::string out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (i > 0) out += i + 1 == targets.size() ? " and " : ", ";
    out += targets[i].name;
  }
  return out;
}

std::string mock_question(const std::vector<MockTarget>& targets, Rng& rng) {
  const std::string fn = camel(rng);
  std::string q = expand(pick(kSentences, rng), rng, fn);
  q += " Use " + join_names(targets) + (targets.size() > 1 ? " together" : "") + " to do it.";
  const std::size_t extra = 1 + uniform_index(rng, 3);
  for (std::size_t i = 0; i < extra; ++i) q += " " + expand(pick(kSentences, rng), rng, camel(rng));
  q += " Input sample: " + word(rng, 3) + "-" + std::to_string(uniform_index(rng, 100000)) + ".";
  return q;
}

std::string mock_code(const std::vector<MockTarget>& targets, Rng& rng) {
  std::ostringstream code;
  const std::string fn = camel(rng);
  const std::string arg = word(rng, 2);
  code << "```typescript\n";
  code << "function " << fn << "(" << arg << ": number): string {\n";
  std::vector<std::string> vars;
  for (const auto& t : targets) {
    const std::string var = camel(rng);
    vars.push_back(var);
    if (t.kind == "class") {
      code << "  const " << var << " = new " << t.name << "();\n";
    } else if (t.kind == "enum") {
      code << "  const " << var << " = " << t.name << "." << word(rng, 2) << ";\n";
    } else {
      code << "  const " << var << " = " << t.name << "." << camel(rng) << "(" << arg << " + "
           << uniform_index(rng, 1000) << ");\n";
    }
    const std::size_t filler = uniform_index(rng, 3);
    for (std::size_t i = 0; i < filler; ++i) {
      code << "  let " << word(rng, 3) << " = " << arg << " * " << 1 + uniform_index(rng, 97)
           << " - " << uniform_index(rng, 500) << ";\n";
    }
  }
  code << "  const " << word(rng, 2) << " = `" << word(rng, 4) << "`;\n";
  code << "  return [";
  for (std::size_t i = 0; i < vars.size(); ++i) code << (i ? ", " : "") << vars[i];
  code << "].map((" << word(rng, 1) << "x) => String(" << word(rng, 1) << "x)).join('"
       << pick(kSyllables, rng) << "');\n";
  code << "}\n```";
  return code.str();
}

uint64_t seed_from(std::string_view prompt, double temperature) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "@%.3f", temperature);
  const std::string digest = sha256_hex(std::string(prompt) + buf);
  return std::stoull(digest.substr(0, 16), nullptr, 16);
}

std::string temperature_text(double temperature) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", temperature);
  return buf;
}

}  // namespace

std::string MockGenerator::complete(const std::string& prompt, double temperature, int) {
  Rng rng(seed_from(prompt, temperature));
  if (const auto apis = parse_markers(prompt, "api"); !apis.empty()) return mock_code(apis, rng);
  if (const auto targets = parse_markers(prompt, "target"); !targets.empty()) {
    return mock_question(targets, rng);
  }
  return "I am not sure what is being asked.";
}

LiveGenerator::LiveGenerator(std::shared_ptr<const ChatClient> client, RetryPolicy retry)
    : client_(std::move(client)), retry_(std::move(retry)) {}

std::string LiveGenerator::id() const { return "live:" + client_->endpoint().model; }

std::string LiveGenerator::complete(const std::string& prompt, double temperature,
                                    int max_tokens) {
  ChatRequest request;
  request.messages = {{"user", prompt}};
  request.temperature = temperature;
  request.max_tokens = max_tokens;
  return with_retries(retry_, [&] { return client_->complete(request).text; });
}

std::string CachedGenerator::cache_key(std::string_view generator_id, std::string_view prompt,
                                       double temperature) {
  std::string material(generator_id);
  material.append("\x1f").append(prompt);
  return sha256_hex(material) + "@" + temperature_text(temperature);
}

std::string CachedGenerator::complete(const std::string& prompt, double temperature,
                                      int max_tokens) {
  const std::string key = cache_key(inner_.id(), prompt, temperature);
  if (auto hit = cache_.get(key); hit && hit->is_string()) return hit->get<std::string>();
  ++upstream_calls_;
  std::string text = inner_.complete(prompt, temperature, max_tokens);
  cache_.put(key, text);
  return text;
}

// ---------------------------------------------------------------------------
// Prompt rendering

namespace {

void append_entry(std::string& out, const InfoEntry& e, std::string_view marker,
                  std::string_view indent, bool full) {
  out.append(indent).append("[").append(marker).append("] ");
  out.append(to_string(e.kind)).append(" ").append(e.name).append(" (").append(e.id).append(")\n");
  out.append(indent).append("Signature: ").append(e.signature).append("\n");
  if (!e.description.empty()) out.append(indent).append("Description: ").append(e.description).append("\n");
  if (!full) return;
  if (e.since_version) out.append(indent).append("Since: ").append(*e.since_version).append("\n");
  if (e.deprecated) out.append(indent).append("Deprecated: yes\n");
  if (!e.parameters.empty()) {
    out.append(indent).append("Parameters:\n");
    for (const auto& p : e.parameters) {
      out.append(indent).append("  - ").append(p.name).append(": ").append(p.type);
      if (!p.description.empty()) out.append(" ").append(p.description);
      out.append("\n");
    }
  }
  if (e.returns) {
    out.append(indent).append("Returns: ").append(e.returns->type);
    if (!e.returns->description.empty()) out.append(" ").append(e.returns->description);
    out.append("\n");
  }
}

std::string names_of(const SeedBundle& bundle) {
  std::string out;
  for (std::size_t i = 0; i < bundle.entries.size(); ++i) {
    if (i > 0) out += ", ";
    out += bundle.entries[i].node.name;
  }
  return out;
}

double round_temperature(double t) { return std::round(t * 1000.0) / 1000.0; }

}  // namespace

SynthEngine::SynthEngine(const ApiGraph& graph, std::vector<SeedBundle> bundles,
                         GeneratorClient& client, SynthOptions options,
                         PromptTemplate question_template, PromptTemplate code_template)
    : graph_(graph),
      client_(client),
      options_(std::move(options)),
      question_template_(std::move(question_template)),
      code_template_(std::move(code_template)) {
  if (options_.attempts < 1) throw Error(ErrorKind::domain, "synth attempts must be >= 1");
  for (auto& bundle : bundles) {
    if (bundle.entries.size() != bundle.target_nodes.size() || bundle.target_nodes.empty()) {
      throw Error(ErrorKind::precondition, "seed bundle entries do not match its targets");
    }
    bundles_[bundle.seed_type].push_back(std::move(bundle));
  }
}

double SynthEngine::temperature_for(std::size_t reuse_index) const noexcept {
  const double t = options_.base_temperature +
                   options_.temperature_step * static_cast<double>(reuse_index);
  return round_temperature(std::min(t, options_.max_temperature));
}

std::string SynthEngine::render_question_prompt(const SeedBundle& bundle, std::size_t reuse_index,
                                                int attempt) const {
  std::string entries;
  for (const auto& info : bundle.entries) {
    if (!entries.empty()) entries += "\n";
    append_entry(entries, info.node, "target", "", false);
    if (!info.children.empty()) {
      entries += "Members:\n";
      for (const auto& child : info.children) entries += "  - " + child.signature + "\n";
    }
  }
  std::string constraints;
  if (bundle.seed_type == SeedType::multi) {
    constraints += "The question must require using all of these APIs jointly in one solution: " +
                   names_of(bundle) + ".\n";
  } else {
    constraints += "The question must centre on " + names_of(bundle) + ".\n";
  }
  if (reuse_index > 0) {
    constraints += "Variation " + std::to_string(reuse_index) +
                   ": pick a scenario different from earlier variations.\n";
  }
  if (attempt > 1) {
    constraints += "Attempt " + std::to_string(attempt) +
                   ": the previous answer did not name the target APIs; name them explicitly.\n";
  }
  return question_template_.render({{"framework", options_.framework},
                                    {"api_entries", entries},
                                    {"constraints", constraints}});
}

std::string SynthEngine::render_code_prompt(std::string_view question, const SeedBundle& bundle,
                                            int attempt) const {
  std::string info;
  for (const auto& id : bundle.target_nodes) {
    const InfoBundle fresh = subtree_info(graph_, id);
    if (!info.empty()) info += "\n";
    append_entry(info, fresh.node, "api", "", true);
    if (!fresh.children.empty()) {
      info += "Members:\n";
      for (const auto& child : fresh.children) append_entry(info, child, "member", "  ", true);
    }
  }
  std::string constraints = "The solution must use each of: " + names_of(bundle) + ".\n";
  if (attempt > 1) {
    constraints += "Attempt " + std::to_string(attempt) +
                   ": the previous answer did not use every listed API.\n";
  }
  return code_template_.render({{"framework", options_.framework},
                                {"question", std::string(question)},
                                {"fine_grained_info", info},
                                {"constraints", constraints}});
}

std::optional<GeneratedText> SynthEngine::question_for(const SeedBundle& bundle,
                                                       double temperature,
                                                       std::size_t reuse_index,
                                                       std::vector<Diagnostic>& diagnostics) {
  for (int attempt = 1; attempt <= options_.attempts; ++attempt) {
    const std::string prompt = render_question_prompt(bundle, reuse_index, attempt);
    const std::string text(
        trim(client_.complete(prompt, temperature, options_.question_max_tokens)));
    const bool names_target =
        std::any_of(bundle.entries.begin(), bundle.entries.end(),
                    [&](const InfoBundle& e) { return mentions_word(text, e.node.name); });
    if (!text.empty() && names_target) return GeneratedText{text, sha256_hex(prompt)};
  }
  diagnostics.push_back({"synth", 0,
                         std::string(to_string(bundle.seed_type)) + " bundle [" +
                             names_of(bundle) + "] reuse " + std::to_string(reuse_index) +
                             ": question rejected after " + std::to_string(options_.attempts) +
                             " attempts"});
  return std::nullopt;
}

std::optional<GeneratedText> SynthEngine::code_for(std::string_view question,
                                                   const SeedBundle& bundle, double temperature,
                                                   std::vector<Diagnostic>& diagnostics) {
  if (trim(question).empty()) throw Error(ErrorKind::precondition, "empty question");
  for (int attempt = 1; attempt <= options_.attempts; ++attempt) {
    const std::string prompt = render_code_prompt(question, bundle, attempt);
    const std::string text(trim(client_.complete(prompt, temperature, options_.code_max_tokens)));
    const bool names_all =
        std::all_of(bundle.entries.begin(), bundle.entries.end(),
                    [&](const InfoBundle& e) { return mentions_word(text, e.node.name); });
    if (!text.empty() && names_all) return GeneratedText{text, sha256_hex(prompt)};
  }
  diagnostics.push_back({"synth", 0,
                         std::string(to_string(bundle.seed_type)) + " bundle [" +
                             names_of(bundle) + "]: code rejected after " +
                             std::to_string(options_.attempts) + " attempts"});
  return std::nullopt;
}

std::optional<GeneratedText> SynthEngine::generate_question(const SeedBundle& bundle,
                                                            double temperature,
                                                            std::size_t reuse_index) {
  std::vector<Diagnostic> local;
  auto result = question_for(bundle, temperature, reuse_index, local);
  for (auto& d : local) add_diagnostic(std::move(d));
  return result;
}

std::optional<GeneratedText> SynthEngine::generate_code(std::string_view question,
                                                        const SeedBundle& bundle,
                                                        double temperature) {
  std::vector<Diagnostic> local;
  auto result = code_for(question, bundle, temperature, local);
  for (auto& d : local) add_diagnostic(std::move(d));
  return result;
}

SynthEngine::Outcome SynthEngine::produce(SeedType type, Slot slot) {
  Outcome outcome;
  const SeedBundle& bundle = bundles_.at(type)[slot.bundle_index];
  const double temperature = temperature_for(slot.reuse_index);
  const auto question = question_for(bundle, temperature, slot.reuse_index, outcome.diagnostics);
  if (!question) return outcome;
  const auto code = code_for(question->text, bundle, temperature, outcome.diagnostics);
  if (!code) return outcome;
  QuestionCodeTuple tuple;
  tuple.question = question->text;
  tuple.code = code->text;
  tuple.api_nodes = bundle.target_nodes;
  tuple.seed_type = type;
  tuple.gen_meta = {client_.id(),      temperature,       question->prompt_hash,
                    code->prompt_hash, slot.bundle_index, slot.reuse_index};
  outcome.tuple = std::move(tuple);
  return outcome;
}

std::vector<QuestionCodeTuple> SynthEngine::fill(SeedType type, std::size_t count,
                                                 bool throw_on_stall) {
  std::vector<QuestionCodeTuple> out;
  if (count == 0) return out;
  const auto found = bundles_.find(type);
  if (found == bundles_.end() || found->second.empty()) {
    if (throw_on_stall) {
      throw Error(ErrorKind::stall, "no " + std::string(to_string(type)) +
                                        " seed bundles to fill a quota of " +
                                        std::to_string(count));
    }
    return out;
  }
  const std::size_t nb = found->second.size();
  std::deque<bool> window;
  std::size_t skipped_in_window = 0;
  std::size_t& cursor = cursor_[type];

  while (out.size() < count) {
    const std::size_t need = count - out.size();
    std::vector<Slot> slots(need);
    for (auto& s : slots) {
      s = {cursor % nb, cursor / nb};
      ++cursor;
    }
    std::vector<Outcome> outcomes(need);
    parallel_for(need, options_.jobs, [&](std::size_t i) { outcomes[i] = produce(type, slots[i]); });

    for (auto& outcome : outcomes) {
      for (auto& d : outcome.diagnostics) add_diagnostic(std::move(d));
      const bool skipped = !outcome.tuple;
      if (!skipped) out.push_back(std::move(*outcome.tuple));
      window.push_back(skipped);
      skipped_in_window += skipped;
      if (window.size() > options_.stall_window) {
        skipped_in_window -= window.front();
        window.pop_front();
      }
      if (window.size() == options_.stall_window &&
          static_cast<double>(skipped_in_window) >
              options_.stall_skip_rate * static_cast<double>(window.size())) {
        if (!throw_on_stall) return out;
        throw Error(ErrorKind::stall,
                    std::string(to_string(type)) + " generation stalled: " +
                        std::to_string(skipped_in_window) + " of the last " +
                        std::to_string(window.size()) + " attempts were skipped (" +
                        std::to_string(out.size()) + " of " + std::to_string(count) +
                        " tuples produced)");
      }
    }
  }
  return out;
}

std::vector<QuestionCodeTuple> SynthEngine::synthesize(Quotas quotas) {
  auto out = fill(SeedType::single, quotas.single, true);
  auto multi = fill(SeedType::multi, quotas.multi, true);
  out.insert(out.end(), std::make_move_iterator(multi.begin()),
             std::make_move_iterator(multi.end()));
  return out;
}

std::vector<QuestionCodeTuple> SynthEngine::generate(SeedType type, std::size_t count) {
  return fill(type, count, false);
}

void SynthEngine::resume_after(std::span<const QuestionCodeTuple> produced) {
  for (const auto& t : produced) {
    const auto found = bundles_.find(t.seed_type);
    if (found == bundles_.end() || found->second.empty()) continue;
    const std::size_t slot = t.gen_meta.reuse_index * found->second.size() + t.gen_meta.bundle_index;
    std::size_t& cursor = cursor_[t.seed_type];
    cursor = std::max(cursor, slot + 1);
  }
}

void SynthEngine::add_diagnostic(Diagnostic d) {
  std::lock_guard lock(diagnostics_mutex_);
  diagnostics_.push_back(std::move(d));
}

std::vector<Diagnostic> SynthEngine::take_diagnostics() {
  std::lock_guard lock(diagnostics_mutex_);
  return std::exchange(diagnostics_, {});
}

std::vector<QuestionCodeTuple> synthesize_dataset(const ApiGraph& graph,
                                                  std::span<const SeedBundle> bundles,
                                                  Quotas quotas, GeneratorClient& client,
                                                  const SynthOptions& options) {
  SynthEngine engine(graph, {bundles.begin(), bundles.end()}, client, options);
  return engine.synthesize(quotas);
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const QuestionCodeTuple& tuple) {
  const GenMeta& m = tuple.gen_meta;
  return {{"question", tuple.question},
          {"code", tuple.code},
          {"api_nodes", tuple.api_nodes},
          {"seed_type", to_string(tuple.seed_type)},
          {"gen_meta",
           {{"model", m.model},
            {"temperature", m.temperature},
            {"question_prompt_hash", m.question_prompt_hash},
            {"code_prompt_hash", m.code_prompt_hash},
            {"bundle_index", m.bundle_index},
            {"reuse_index", m.reuse_index}}}};
}

QuestionCodeTuple tuple_from_json(const json& j) {
  QuestionCodeTuple t;
  try {
    t.question = j.at("question").get<std::string>();
    t.code = j.at("code").get<std::string>();
    t.api_nodes = j.at("api_nodes").get<std::vector<std::string>>();
    const auto type = parse_seed_type(j.at("seed_type").get<std::string>());
    if (!type) throw Error(ErrorKind::schema, "unknown seed_type");
    t.seed_type = *type;
    const json& m = j.at("gen_meta");
    t.gen_meta.model = m.at("model").get<std::string>();
    t.gen_meta.temperature = m.at("temperature").get<double>();
    t.gen_meta.question_prompt_hash = m.at("question_prompt_hash").get<std::string>();
    t.gen_meta.code_prompt_hash = m.at("code_prompt_hash").get<std::string>();
    t.gen_meta.bundle_index = m.at("bundle_index").get<std::size_t>();
    t.gen_meta.reuse_index = m.at("reuse_index").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("malformed tuple: ") + e.what());
  }
  return t;
}

json tuples_to_json(std::span<const QuestionCodeTuple> tuples) {
  json out = json::array();
  for (const auto& t : tuples) out.push_back(to_json(t));
  return out;
}

std::vector<QuestionCodeTuple> tuples_from_json(const json& doc) {
  if (!doc.is_array()) throw Error(ErrorKind::schema, "raw dataset must be a JSON array");
  std::vector<QuestionCodeTuple> out;
  for (const auto& j : doc) out.push_back(tuple_from_json(j));
  return out;
}

}  // namespace kgsynth
