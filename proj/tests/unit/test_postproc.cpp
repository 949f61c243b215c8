#include <doctest.h>

#include <deque>
#include <random>

#include <kgsynth/error.hpp>
#include <kgsynth/postproc.hpp>
#include <kgsynth/support.hpp>

#include "oracles.hpp"

using namespace kgsynth;

namespace {

QuestionCodeTuple tuple(std::string q, std::string c, SeedType type = SeedType::single,
                        std::vector<std::string> nodes = {"A"}) {
  QuestionCodeTuple t;
  t.question = std::move(q);
  t.code = std::move(c);
  t.api_nodes = std::move(nodes);
  t.seed_type = type;
  return t;
}

std::string random_text(std::mt19937_64& rng, std::size_t length) {
  static const std::string alphabet = "abcdefghij klmnop";
  std::string s;
  for (std::size_t i = 0; i < length; ++i) s += alphabet[rng() % alphabet.size()];
  return s;
}

std::string mutate(std::mt19937_64& rng, std::string s, std::size_t edits) {
  for (std::size_t i = 0; i < edits && !s.empty(); ++i) s[rng() % s.size()] = 'Z';
  return s;
}

// Hands out queued tuples per type.
class QueueSource final : public TupleSource {
 public:
  std::vector<QuestionCodeTuple> generate(SeedType type, std::size_t count) override {
    ++calls;
    std::vector<QuestionCodeTuple> out;
    auto& q = queues[type];
    while (out.size() < count && !q.empty()) {
      out.push_back(q.front());
      q.pop_front();
    }
    return out;
  }
  std::map<SeedType, std::deque<QuestionCodeTuple>> queues;
  int calls = 0;
};

// Always returns the same tuple.
class EchoSource final : public TupleSource {
 public:
  explicit EchoSource(QuestionCodeTuple t) : t_(std::move(t)) {}
  std::vector<QuestionCodeTuple> generate(SeedType type, std::size_t count) override {
    ++calls;
    auto t = t_;
    t.seed_type = type;
    return std::vector<QuestionCodeTuple>(count, t);
  }
  int calls = 0;

 private:
  QuestionCodeTuple t_;
};

}  // namespace

TEST_CASE("levenshtein") {
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("flaw", "lawn") == 2);
  CHECK(levenshtein("same", "same") == 0);
  CHECK(levenshtein("", "abc") == 3);
  CHECK(levenshtein("abc", "") == 3);
  CHECK(levenshtein("", "") == 0);
  CHECK(levenshtein("héllo", "hello") == 1);
  CHECK(levenshtein("日本語", "日本") == 1);
  CHECK(similarity("kitten", "sitting") == doctest::Approx(1.0 - 3.0 / 7.0));
  CHECK(similarity("abc", "xyz") == 0.0);
  CHECK(similarity("", "") == 1.0);
  CHECK(similarity("same", "same") == 1.0);
}

TEST_CASE("property: levenshtein matches the table oracle") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 600; ++i) {
    const std::size_t la = rng() % (i < 500 ? 40 : 200);
    const std::size_t lb = rng() % (i < 500 ? 40 : 200);
    std::u32string a, b;
    for (std::size_t k = 0; k < la; ++k) a += static_cast<char32_t>(U'a' + rng() % 4);
    for (std::size_t k = 0; k < lb; ++k) b += static_cast<char32_t>(U'a' + rng() % 4);
    if (i % 7 == 0) b = a.substr(0, a.size() / 2) + U"é" + a.substr(a.size() / 2);
    REQUIRE(levenshtein(a, b) == oracle::edit_distance(a, b));
    CHECK(levenshtein(b, a) == levenshtein(a, b));
  }
}

TEST_CASE("dedup") {
  SUBCASE("identical questions keep the first") {
    const std::vector<QuestionCodeTuple> in{tuple("How do I sort a list?", "code one"),
                                            tuple("How do I sort a list?", "different body")};
    const auto r = dedup(in, {}, {});
    CHECK(r.kept.size() == 1);
    CHECK(r.kept_indices == std::vector<std::size_t>{0});
    REQUIRE(r.report.pairs.size() == 1);
    CHECK(r.report.pairs[0].index_a == 0);
    CHECK(r.report.pairs[0].index_b == 1);
    CHECK(r.report.pairs[0].question_similarity == 1.0);
  }
  SUBCASE("benchmark contamination") {
    const std::vector<BenchmarkEntry> bench{{"abcdefghij", "unrelated benchmark code"}};
    const std::vector<QuestionCodeTuple> in{tuple("abcdefghiX", "some code"),
                                            tuple("qrstuvwxyz", "other code")};
    const auto r = dedup(in, bench, {});
    CHECK(r.kept_indices == std::vector<std::size_t>{1});
    REQUIRE(r.report.benchmark_hits.size() == 1);
    CHECK(r.report.benchmark_hits[0].index == 0);
    CHECK(r.report.benchmark_hits[0].question_similarity == doctest::Approx(0.9));
    CHECK(r.report.pairs.empty());
  }
  SUBCASE("planted near duplicates") {
    std::mt19937_64 rng(3);
    std::vector<QuestionCodeTuple> in;
    for (int i = 0; i < 7; ++i) in.push_back(tuple(random_text(rng, 80), random_text(rng, 120)));
    for (int i : {1, 4, 6}) in.push_back(tuple(mutate(rng, in[i].question, 2), random_text(rng, 120)));
    const auto r = dedup(in, {}, {});
    CHECK(r.kept.size() == 7);
    CHECK(r.removed.size() == 3);
    REQUIRE(r.report.pairs.size() == 3);
    CHECK(r.report.pairs[0].index_a == 1);
    CHECK(r.report.pairs[1].index_a == 4);
    CHECK(r.report.pairs[2].index_a == 6);
  }
  SUBCASE("threshold validation") {
    DedupOptions bad;
    bad.threshold = 0.0;
    CHECK_THROWS_AS(dedup({}, {}, bad), Error);
    bad.threshold = 1.5;
    CHECK_THROWS_AS(dedup({}, {}, bad), Error);
  }
}

TEST_CASE("property: dedup keeps exactly the tuples with no earlier witness") {
  std::mt19937_64 rng(29);
  for (int round = 0; round < 8; ++round) {
    std::vector<std::string> bases;
    for (int i = 0; i < 6; ++i) bases.push_back(random_text(rng, 30 + rng() % 30));
    std::vector<QuestionCodeTuple> in;
    for (int i = 0; i < 40; ++i) {
      const auto& q = bases[rng() % bases.size()];
      const auto& c = bases[rng() % bases.size()];
      in.push_back(tuple(mutate(rng, q, rng() % 10), mutate(rng, c, rng() % 10)));
    }
    std::vector<BenchmarkEntry> bench{{mutate(rng, bases[0], 3), "zzzz"}};
    DedupOptions options;
    options.threshold = 0.8;
    const auto r = dedup(in, bench, options);

    const auto near = [&](const std::string& a, const std::string& b) {
      return oracle::similarity(decode_utf8(a), decode_utf8(b)) >= options.threshold;
    };
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < in.size(); ++i) {
      bool dup = false;
      for (const auto& b : bench) dup = dup || near(in[i].question, b.question) || near(in[i].code, b.code);
      for (std::size_t k : expected) {
        dup = dup || near(in[i].question, in[k].question) || near(in[i].code, in[k].code);
      }
      if (!dup) expected.push_back(i);
    }
    CHECK(r.kept_indices == expected);
    CHECK(r.kept.size() + r.removed.size() == in.size());
    CHECK(r.report.pairs.size() + r.report.benchmark_hits.size() == r.removed.size());

    options.prefilter = false;
    const auto exhaustive = dedup(in, bench, options);
    CHECK(exhaustive.kept_indices == r.kept_indices);
    CHECK(exhaustive.report == r.report);
    options.prefilter = true;
    options.jobs = 1;
    CHECK(dedup(in, bench, options).report == r.report);
  }
}

TEST_CASE("regenerate_to_size") {
  std::mt19937_64 rng(5);
  std::vector<QuestionCodeTuple> kept;
  for (int i = 0; i < 4; ++i) kept.push_back(tuple(random_text(rng, 60), random_text(rng, 60)));
  SUBCASE("two removed, two fresh") {
    QueueSource source;
    source.queues[SeedType::single] = {tuple(random_text(rng, 60), random_text(rng, 60)),
                                       tuple(random_text(rng, 60), random_text(rng, 60))};
    const auto r = regenerate_to_size(kept, {6, 0}, source, {}, {});
    CHECK(r.complete());
    CHECK(r.tuples.size() == 6);
    CHECK(r.generated == 2);
    CHECK(r.rounds == 1);
  }
  SUBCASE("a duplicate replacement is filtered and replaced") {
    QueueSource source;
    source.queues[SeedType::single] = {kept[0], tuple(random_text(rng, 60), random_text(rng, 60))};
    const auto r = regenerate_to_size(kept, {5, 0}, source, {}, {});
    CHECK(r.complete());
    CHECK(r.rounds == 2);
    CHECK(r.rejected == 1);
    REQUIRE(r.report.pairs.size() == 1);
    CHECK(r.report.pairs[0].index_a == 0);
    CHECK(r.report.pairs[0].index_b == 4);
  }
  SUBCASE("quota already met") {
    QueueSource source;
    const auto r = regenerate_to_size(kept, {4, 0}, source, {}, {});
    CHECK(source.calls == 0);
    CHECK(r.tuples == kept);
    CHECK(r.rounds == 0);
  }
  SUBCASE("an adversarial source leaves a shortfall") {
    EchoSource source(kept[1]);
    const auto r = regenerate_to_size(kept, {4, 2}, source, {}, {});
    CHECK_FALSE(r.complete());
    CHECK(r.rounds == 10);
    CHECK(source.calls == 10);
    CHECK(r.shortfall.single == 0);
    CHECK(r.shortfall.multi == 2);
  }
  SUBCASE("input duplicates are removed before topping up") {
    auto with_dup = kept;
    with_dup.push_back(kept[2]);
    QueueSource source;
    source.queues[SeedType::single] = {tuple(random_text(rng, 60), random_text(rng, 60))};
    const auto r = regenerate_to_size(with_dup, {5, 0}, source, {}, {});
    CHECK(r.complete());
    REQUIRE(r.report.pairs.size() == 1);
    CHECK(r.report.pairs[0].index_a == 2);
    CHECK(r.report.pairs[0].index_b == 4);
  }
}

TEST_CASE("standardize") {
  std::vector<QuestionCodeTuple> in;
  for (int i = 0; i < 8000; ++i) {
    const auto type = i % 5 == 0 ? SeedType::multi : SeedType::single;
    in.push_back(tuple("q" + std::to_string(i), "c" + std::to_string(i), type));
  }
  const auto r = standardize(in);
  REQUIRE(r.records.size() == 8000);
  CHECK(r.rejects.empty());
  for (std::size_t i = 0; i < 6400; ++i) CHECK(r.records[i].seed_type == SeedType::single);
  for (std::size_t i = 6400; i < 8000; ++i) CHECK(r.records[i].seed_type == SeedType::multi);
  CHECK(r.records[0].instruction == "q1");
  CHECK(r.records[6400].instruction == "q0");
  CHECK(r.records[0].input.empty());

  const std::vector<QuestionCodeTuple> bad{tuple("q", "   "), tuple("", "c"), tuple("q", "c", SeedType::single, {}),
                                           tuple("q", "c")};
  const auto q = standardize(bad);
  CHECK(q.records.size() == 1);
  REQUIRE(q.rejects.size() == 3);
  CHECK(q.rejects[0].reason == "empty output");
  CHECK(q.rejects[1].reason == "empty instruction");
  CHECK(q.rejects[2].reason == "no api_nodes");
  CHECK(q.rejects[2].index == 2);
}

TEST_CASE("training record JSON") {
  const auto r = standardize(std::vector{tuple("q", "c", SeedType::multi, {"A", "B"})}).records;
  const auto doc = nlohmann::json::parse(records_to_json(r).dump());
  CHECK(doc[0]["input"] == "");
  CHECK(doc[0]["meta"]["seed_type"] == "multi");
  CHECK(records_from_json(doc) == r);
  auto bad = doc;
  bad[0]["input"] = "x";
  CHECK_THROWS_AS(records_from_json(bad), Error);
  bad = doc;
  bad[0].erase("output");
  CHECK_THROWS_AS(records_from_json(bad), Error);
}

TEST_CASE("benchmark file") {
  const auto doc = nlohmann::json::parse(R"([{"question":"q","code":"c"}])");
  const auto b = benchmark_from_json(doc);
  REQUIRE(b.size() == 1);
  CHECK(b[0].question == "q");
  CHECK_THROWS_AS(benchmark_from_json(nlohmann::json::parse(R"([{"question":1}])")), Error);
}
