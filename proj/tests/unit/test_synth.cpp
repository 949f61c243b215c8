#include <doctest.h>

#include <atomic>
#include <set>

#include <kgsynth/error.hpp>
#include <kgsynth/support.hpp>
#include <kgsynth/synth.hpp>

using namespace kgsynth;

namespace {

ApiNode node(std::string id, EntityKind kind) {
  ApiNode n;
  n.id = id;
  n.name = id.substr(id.rfind('.') + 1);
  n.kind = kind;
  n.signature = "declare " + std::string(to_string(kind)) + " " + n.name;
  n.description = "about " + n.name;
  return n;
}

ApiGraph graph() {
  return ApiGraph::from_parts(
      {node("List", EntityKind::class_), node("List.add", EntityKind::method),
       node("List.remove", EntityKind::method), node("Opts", EntityKind::interface),
       node("Mode", EntityKind::enum_), node("Mode.FAST", EntityKind::property)},
      {{"List", "List.add", Relation::contains},
       {"List", "List.remove", Relation::contains},
       {"Mode", "Mode.FAST", Relation::contains}});
}

SeedBundle bundle_of(const ApiGraph& g, SeedType type, std::vector<std::string> ids) {
  SeedBundle b;
  b.seed_type = type;
  b.target_nodes = ids;
  for (const auto& id : ids) b.entries.push_back(subtree_info(g, id));
  if (type == SeedType::multi) b.provenance = SeedProvenance{0, ids, 1.0};
  return b;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

// Replies with a fixed string and counts calls.
class FixedGenerator final : public GeneratorClient {
 public:
  explicit FixedGenerator(std::string reply) : reply_(std::move(reply)) {}
  std::string id() const override { return "fixed"; }
  std::string complete(const std::string&, double, int) override {
    ++calls;
    return reply_;
  }
  std::atomic<int> calls{0};

 private:
  std::string reply_;
};

// Delegates to the mock generator and counts calls.
class CountingMock final : public GeneratorClient {
 public:
  std::string id() const override { return mock_.id(); }
  std::string complete(const std::string& prompt, double t, int max_tokens) override {
    ++calls;
    return mock_.complete(prompt, t, max_tokens);
  }
  std::atomic<int> calls{0};

 private:
  MockGenerator mock_;
};

}  // namespace

TEST_CASE("PromptTemplate") {
  const PromptTemplate t("q", "Hello {name}, {json: \"x\"} and {Upper} stay");
  CHECK(t.placeholders() == std::set<std::string>{"name"});
  CHECK(t.render({{"name", "Ann"}}) == "Hello Ann, {json: \"x\"} and {Upper} stay");
  try {
    t.render({{"other", "x"}});
    FAIL("expected template error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::template_error);
    CHECK(std::string(e.what()).find("{name}") != std::string::npos);
  }
  const auto q = PromptTemplate::default_question();
  CHECK(q.placeholders() == std::set<std::string>{"api_entries", "constraints", "framework"});
  const auto c = PromptTemplate::default_code();
  CHECK(c.placeholders() ==
        std::set<std::string>{"constraints", "fine_grained_info", "framework", "question"});
}

TEST_CASE("question prompts") {
  const ApiGraph g = graph();
  MockGenerator mock;
  SynthEngine engine(g, {}, mock);
  SUBCASE("single bundle") {
    const auto b = bundle_of(g, SeedType::single, {"List"});
    const std::string p = engine.render_question_prompt(b);
    CHECK(count_of(p, "declare class List") == 1);
    CHECK(p.find("declare method add") != std::string::npos);
    CHECK(p.find("declare method remove") != std::string::npos);
    CHECK(p.find("HarmonyOS") != std::string::npos);
    CHECK(p.find("jointly") == std::string::npos);
    CHECK(p.find("Variation") == std::string::npos);
  }
  SUBCASE("multi bundle lists every target and asks for joint use") {
    const auto b = bundle_of(g, SeedType::multi, {"List", "Opts", "Mode"});
    const std::string p = engine.render_question_prompt(b);
    CHECK(count_of(p, "[target] ") == 3);
    for (const char* sig : {"declare class List", "declare interface Opts", "declare enum Mode"}) {
      CHECK(count_of(p, sig) == 1);
    }
    CHECK(p.find("jointly in one solution: List, Opts, Mode.") != std::string::npos);
  }
  SUBCASE("childless target renders without members") {
    const auto b = bundle_of(g, SeedType::single, {"Opts"});
    const std::string p = engine.render_question_prompt(b);
    CHECK(p.find("Members:") == std::string::npos);
    CHECK(count_of(p, "declare interface Opts") == 1);
  }
  SUBCASE("reuse and attempt lines change the prompt") {
    const auto b = bundle_of(g, SeedType::single, {"List"});
    const std::string base = engine.render_question_prompt(b);
    CHECK(engine.render_question_prompt(b, 2) != base);
    CHECK(engine.render_question_prompt(b, 2).find("Variation 2") != std::string::npos);
    CHECK(engine.render_question_prompt(b, 0, 2).find("Attempt 2") != std::string::npos);
  }
}

TEST_CASE("code prompts carry every member signature") {
  const ApiGraph g = graph();
  MockGenerator mock;
  SynthEngine engine(g, {}, mock);
  const auto b = bundle_of(g, SeedType::multi, {"List", "Mode"});
  const std::string p = engine.render_code_prompt("How do I use List with Mode?", b);
  for (const auto& id : {"List", "List.add", "List.remove", "Mode", "Mode.FAST"}) {
    CHECK(p.find(g.node(id).signature) != std::string::npos);
  }
  CHECK(p.find("How do I use List with Mode?") != std::string::npos);
  CHECK(p.find("declare interface Opts") == std::string::npos);
}

TEST_CASE("question validation and retries") {
  const ApiGraph g = graph();
  const auto b = bundle_of(g, SeedType::single, {"List"});
  SUBCASE("an answer naming the target is accepted first time") {
    FixedGenerator gen("  How do I sort a List?  ");
    SynthEngine engine(g, {}, gen);
    const auto q = engine.generate_question(b, 0.7);
    REQUIRE(q.has_value());
    CHECK(q->text == "How do I sort a List?");
    CHECK(q->prompt_hash == sha256_hex(engine.render_question_prompt(b)));
    CHECK(gen.calls == 1);
    CHECK(engine.take_diagnostics().empty());
  }
  SUBCASE("an answer without the name is retried then skipped") {
    FixedGenerator gen("How do I sort a Listing?");
    SynthEngine engine(g, {}, gen);
    CHECK_FALSE(engine.generate_question(b, 0.7).has_value());
    CHECK(gen.calls == 3);
    CHECK(engine.take_diagnostics().size() == 1);
  }
  SUBCASE("code must reference every target") {
    const auto multi = bundle_of(g, SeedType::multi, {"List", "Mode"});
    FixedGenerator partial("const l = new List();");
    SynthEngine engine(g, {}, partial);
    CHECK_FALSE(engine.generate_code("q", multi, 0.7).has_value());
    CHECK(partial.calls == 3);
    FixedGenerator full("const l = new List(Mode.FAST);");
    SynthEngine engine2(g, {}, full);
    CHECK(engine2.generate_code("q", multi, 0.7).has_value());
    CHECK_THROWS_AS(engine2.generate_code("  ", multi, 0.7), Error);
  }
}

TEST_CASE("mock generator names every target") {
  const ApiGraph g = graph();
  MockGenerator mock;
  SynthEngine engine(g, {}, mock);
  const auto b = bundle_of(g, SeedType::multi, {"List", "Opts", "Mode"});
  const auto q = engine.generate_question(b, 0.7);
  REQUIRE(q.has_value());
  const auto c = engine.generate_code(q->text, b, 0.7);
  REQUIRE(c.has_value());
  for (const char* name : {"List", "Opts", "Mode"}) {
    CHECK(mentions_word(q->text, name));
    CHECK(mentions_word(c->text, name));
  }
  const std::string marked = "[target] class List (List)\n";
  CHECK(mock.complete(marked, 0.7, 10) == mock.complete(marked, 0.7, 10));
  CHECK(mock.complete(marked, 0.7, 10) != mock.complete(marked, 0.8, 10));
}

TEST_CASE("synthesize: quotas, reuse and temperatures") {
  const ApiGraph g = graph();
  MockGenerator mock;
  std::vector<SeedBundle> bundles{bundle_of(g, SeedType::single, {"List"}),
                                  bundle_of(g, SeedType::single, {"Opts"}),
                                  bundle_of(g, SeedType::multi, {"List", "Mode"})};
  SynthEngine engine(g, bundles, mock);
  CHECK(engine.temperature_for(0) == 0.7);
  CHECK(engine.temperature_for(1) == 0.8);
  CHECK(engine.temperature_for(3) == 1.0);
  CHECK(engine.temperature_for(10) == 1.0);

  SUBCASE("three singles from two bundles") {
    const auto out = engine.synthesize({3, 0});
    REQUIRE(out.size() == 3);
    CHECK(out[0].api_nodes == std::vector<std::string>{"List"});
    CHECK(out[1].api_nodes == std::vector<std::string>{"Opts"});
    CHECK(out[2].api_nodes == std::vector<std::string>{"List"});
    CHECK(out[0].gen_meta.temperature == 0.7);
    CHECK(out[1].gen_meta.temperature == 0.7);
    CHECK(out[2].gen_meta.temperature == 0.8);
    CHECK(out[2].gen_meta.reuse_index == 1);
    CHECK(out[2].gen_meta.bundle_index == 0);
    CHECK(out[0].question != out[2].question);
    CHECK(out[0].gen_meta.model == "mock-generator");
  }
  SUBCASE("zero quotas") { CHECK(engine.synthesize({0, 0}).empty()); }
  SUBCASE("singles precede multis") {
    const auto out = engine.synthesize({2, 2});
    REQUIRE(out.size() == 4);
    CHECK(out[1].seed_type == SeedType::single);
    CHECK(out[2].seed_type == SeedType::multi);
    CHECK(out[2].api_nodes == std::vector<std::string>{"List", "Mode"});
  }
}

TEST_CASE("property: every tuple traces back to its bundle") {
  const ApiGraph g = graph();
  MockGenerator mock;
  std::vector<SeedBundle> bundles{bundle_of(g, SeedType::single, {"List"}),
                                  bundle_of(g, SeedType::single, {"Mode"}),
                                  bundle_of(g, SeedType::multi, {"List", "Opts"}),
                                  bundle_of(g, SeedType::multi, {"Opts", "Mode", "List"})};
  SynthEngine engine(g, bundles, mock);
  const auto out = engine.synthesize({7, 9});
  REQUIRE(out.size() == 16);
  std::map<SeedType, std::vector<const SeedBundle*>> by_type;
  for (const auto& b : bundles) by_type[b.seed_type].push_back(&b);
  for (const auto& t : out) {
    const SeedBundle& b = *by_type[t.seed_type].at(t.gen_meta.bundle_index);
    CHECK(t.api_nodes == b.target_nodes);
    CHECK(t.gen_meta.temperature == engine.temperature_for(t.gen_meta.reuse_index));
    CHECK(t.gen_meta.question_prompt_hash ==
          sha256_hex(engine.render_question_prompt(b, t.gen_meta.reuse_index)));
    CHECK(t.gen_meta.code_prompt_hash == sha256_hex(engine.render_code_prompt(t.question, b)));
    for (const auto& id : t.api_nodes) CHECK(mentions_word(t.code, g.node(id).name));
  }
}

TEST_CASE("synthesize stalls when nothing validates") {
  const ApiGraph g = graph();
  FixedGenerator gen("no idea");
  SynthOptions options;
  options.stall_window = 10;
  SynthEngine engine(g, {bundle_of(g, SeedType::single, {"List"})}, gen, options);
  try {
    engine.synthesize({100, 0});
    FAIL("expected stall");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::stall);
  }
  SynthEngine no_multi(g, {bundle_of(g, SeedType::single, {"List"})}, gen, options);
  CHECK_THROWS_AS(no_multi.synthesize({0, 1}), Error);
  SynthEngine partial(g, {bundle_of(g, SeedType::single, {"List"})}, gen, options);
  CHECK(partial.generate(SeedType::single, 100).empty());
}

TEST_CASE("cached generation replays without upstream calls") {
  const ApiGraph g = graph();
  std::vector<SeedBundle> bundles{bundle_of(g, SeedType::single, {"List"}),
                                  bundle_of(g, SeedType::multi, {"List", "Mode"})};
  ResponseCache cache;
  CountingMock upstream;
  CachedGenerator cold(upstream, cache);
  const auto first = SynthEngine(g, bundles, cold).synthesize({4, 4});
  const int calls = upstream.calls;
  CHECK(calls > 0);
  CHECK(cold.upstream_calls() == static_cast<std::size_t>(calls));

  CachedGenerator warm(upstream, cache);
  const auto second = SynthEngine(g, bundles, warm).synthesize({4, 4});
  CHECK(upstream.calls == calls);
  CHECK(warm.upstream_calls() == 0);
  CHECK(second == first);
  CHECK(CachedGenerator::cache_key("a", "p", 0.7) != CachedGenerator::cache_key("a", "p", 0.8));
  CHECK(CachedGenerator::cache_key("a", "p", 0.7) != CachedGenerator::cache_key("b", "p", 0.7));
}

TEST_CASE("property: output does not depend on the job count") {
  const ApiGraph g = graph();
  MockGenerator mock;
  std::vector<SeedBundle> bundles{bundle_of(g, SeedType::single, {"List"}),
                                  bundle_of(g, SeedType::single, {"Opts"}),
                                  bundle_of(g, SeedType::single, {"Mode"}),
                                  bundle_of(g, SeedType::multi, {"List", "Mode"})};
  SynthOptions serial;
  serial.jobs = 1;
  SynthOptions wide;
  wide.jobs = 8;
  CHECK(SynthEngine(g, bundles, mock, serial).synthesize({11, 5}) ==
        SynthEngine(g, bundles, mock, wide).synthesize({11, 5}));
}

TEST_CASE("resume_after skips slots already used") {
  const ApiGraph g = graph();
  MockGenerator mock;
  std::vector<SeedBundle> bundles{bundle_of(g, SeedType::single, {"List"}),
                                  bundle_of(g, SeedType::single, {"Opts"})};
  const auto all = SynthEngine(g, bundles, mock).generate(SeedType::single, 5);
  REQUIRE(all.size() == 5);
  SynthEngine engine(g, bundles, mock);
  engine.resume_after(std::span(all).first(3));
  const auto more = engine.generate(SeedType::single, 2);
  REQUIRE(more.size() == 2);
  CHECK(more[0] == all[3]);
  CHECK(more[1] == all[4]);
}

TEST_CASE("tuple JSON round trip") {
  const ApiGraph g = graph();
  MockGenerator mock;
  const auto out = SynthEngine(g, {bundle_of(g, SeedType::multi, {"List", "Opts"})}, mock)
                       .synthesize({0, 3});
  const auto doc = nlohmann::json::parse(tuples_to_json(out).dump());
  CHECK(tuples_from_json(doc) == out);
  CHECK_THROWS_AS(tuples_from_json(nlohmann::json::object()), Error);
  auto bad = doc;
  bad[0]["seed_type"] = "triple";
  CHECK_THROWS_AS(tuples_from_json(bad), Error);
}
