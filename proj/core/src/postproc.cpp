#include "kgsynth/postproc.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>

#include "kgsynth/error.hpp"
#include "kgsynth/support.hpp"

namespace kgsynth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Distance

namespace {

// Match masks of the pattern, one row of 64-bit blocks per distinct symbol.
class PatternMasks {
 public:
  PatternMasks(std::u32string_view pattern, std::size_t blocks) : blocks_(blocks) {
    ascii_.fill(-1);
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      uint64_t* row = row_for_insert(pattern[i]);
      row[i / 64] |= uint64_t{1} << (i % 64);
    }
  }

  const uint64_t* row(char32_t c) const {
    if (c < ascii_.size()) {
      const int idx = ascii_[c];
      return idx < 0 ? nullptr : &masks_[static_cast<std::size_t>(idx) * blocks_];
    }
    const auto it = std::lower_bound(other_.begin(), other_.end(), std::pair{c, 0});
    if (it == other_.end() || it->first != c) return nullptr;
    return &masks_[static_cast<std::size_t>(it->second) * blocks_];
  }

 private:
  uint64_t* row_for_insert(char32_t c) {
    int idx = -1;
    if (c < ascii_.size()) {
      if (ascii_[c] < 0) ascii_[c] = add_row();
      idx = ascii_[c];
    } else {
      auto it = std::lower_bound(other_.begin(), other_.end(), std::pair{c, 0});
      if (it == other_.end() || it->first != c) it = other_.insert(it, {c, add_row()});
      idx = it->second;
    }
    return &masks_[static_cast<std::size_t>(idx) * blocks_];
  }

  int add_row() {
    masks_.resize(masks_.size() + blocks_, 0);
    return static_cast<int>(masks_.size() / blocks_ - 1);
  }

  std::size_t blocks_;
  std::array<int, 128> ascii_{};
  std::vector<std::pair<char32_t, int>> other_;
  std::vector<uint64_t> masks_;
};

}  // namespace

std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() > b.size()) std::swap(a, b);
  while (!a.empty() && a.front() == b.front()) {
    a.remove_prefix(1);
    b.remove_prefix(1);
  }
  while (!a.empty() && a.back() == b.back()) {
    a.remove_suffix(1);
    b.remove_suffix(1);
  }
  const std::size_t m = a.size();
  if (m == 0) return b.size();

  // Column-wise vertical deltas of the DP matrix, 64 rows per block; block
  // boundaries exchange only the horizontal delta (-1, 0 or +1).
  const std::size_t blocks = (m + 63) / 64;
  const PatternMasks masks(a, blocks);
  std::vector<uint64_t> vp(blocks, ~uint64_t{0});
  std::vector<uint64_t> vn(blocks, 0);
  const uint64_t last = uint64_t{1} << ((m - 1) % 64);
  std::size_t score = m;

  for (const char32_t c : b) {
    const uint64_t* eq_row = masks.row(c);
    int h_in = 1;
    for (std::size_t k = 0; k < blocks; ++k) {
      uint64_t eq = eq_row ? eq_row[k] : 0;
      const uint64_t pv = vp[k];
      const uint64_t mv = vn[k];
      const uint64_t xv = eq | mv;
      if (h_in < 0) eq |= 1;
      const uint64_t xh = (((eq & pv) + pv) ^ pv) | eq;
      uint64_t ph = mv | ~(xh | pv);
      uint64_t mh = pv & xh;
      int h_out = 0;
      if (k + 1 == blocks) {
        if (ph & last) ++score;
        if (mh & last) --score;
      } else {
        h_out = (ph >> 63) ? 1 : (mh >> 63) ? -1 : 0;
      }
      ph <<= 1;
      mh <<= 1;
      if (h_in < 0) mh |= 1;
      if (h_in > 0) ph |= 1;
      vp[k] = mh | ~(xv | ph);
      vn[k] = ph & xv;
      h_in = h_out;
    }
  }
  return score;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  return levenshtein(std::u32string_view(decode_utf8(a)), std::u32string_view(decode_utf8(b)));
}

double similarity(std::u32string_view a, std::u32string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

double similarity(std::string_view a, std::string_view b) {
  return similarity(std::u32string_view(decode_utf8(a)), std::u32string_view(decode_utf8(b)));
}

// ---------------------------------------------------------------------------
// Benchmark file

std::vector<BenchmarkEntry> benchmark_from_json(const json& doc) {
  if (!doc.is_array()) throw Error(ErrorKind::schema, "benchmark must be a JSON array");
  std::vector<BenchmarkEntry> out;
  try {
    for (const auto& j : doc) {
      out.push_back({j.at("question").get<std::string>(), j.at("code").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("malformed benchmark entry: ") + e.what());
  }
  return out;
}

std::vector<BenchmarkEntry> load_benchmark(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return benchmark_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::schema, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dedup

void DedupOptions::validate() const {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error(ErrorKind::domain, "dedup threshold must be in (0, 1]");
  }
}

namespace {

constexpr std::size_t kGram = 3;

struct Profile {
  std::u32string text;
  std::vector<uint64_t> grams;  // sorted; 3 code points of 21 bits each

  explicit Profile(std::string_view utf8) : text(decode_utf8(utf8)) {
    if (text.size() >= kGram) {
      grams.reserve(text.size() - kGram + 1);
      for (std::size_t i = 0; i + kGram <= text.size(); ++i) {
        grams.push_back((uint64_t{text[i]} << 42) | (uint64_t{text[i + 1]} << 21) |
                        uint64_t{text[i + 2]});
      }
      std::sort(grams.begin(), grams.end());
    }
  }
};

std::size_t shared_grams(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
  std::size_t shared = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++shared;
      ++i;
      ++j;
    }
  }
  return shared;
}

struct Item {
  Profile question;
  Profile code;
};

}  // namespace

struct Deduper::Impl {
  DedupOptions options;
  std::vector<Item> benchmark;
  std::vector<Item> accepted;
  std::atomic<uint64_t> exact{0};

  // True iff similarity(a, b) >= threshold.
  bool reaches(const Profile& a, const Profile& b) {
    const double t = options.threshold;
    const std::size_t longest = std::max(a.text.size(), b.text.size());
    const std::size_t shortest = std::min(a.text.size(), b.text.size());
    if (longest == 0) return true;
    if (options.prefilter) {
      // similarity <= shortest / longest
      if (static_cast<double>(shortest) / static_cast<double>(longest) < t - 1e-12) return false;
      // d <= k edits leave at least (longest - q + 1) - k*q common q-grams.
      const auto k = static_cast<std::size_t>(
          std::floor((1.0 - t) * static_cast<double>(longest) + 1e-9));
      if (longest >= kGram) {
        const std::size_t total = longest - kGram + 1;
        if (total > k * kGram && shared_grams(a.grams, b.grams) < total - k * kGram) return false;
      }
    }
    ++exact;
    return similarity(a.text, b.text) >= t;
  }

  bool similar(const Item& x, const Item& y) {
    return reaches(x.question, y.question) || reaches(x.code, y.code);
  }

  // First index in `pool` similar to `item`, scanning in order.
  std::optional<std::size_t> first_similar(const Item& item, std::vector<Item>& pool) {
    const std::size_t n = pool.size();
    const std::size_t chunks = std::min(options.jobs, n / 64);
    if (chunks <= 1) {
      for (std::size_t i = 0; i < n; ++i) {
        if (similar(item, pool[i])) return i;
      }
      return std::nullopt;
    }
    std::vector<std::size_t> hit(chunks, n);
    parallel_for(chunks, chunks, [&](std::size_t c) {
      const std::size_t begin = n * c / chunks;
      const std::size_t end = n * (c + 1) / chunks;
      for (std::size_t i = begin; i < end; ++i) {
        if (similar(item, pool[i])) {
          hit[c] = i;
          return;
        }
      }
    });
    const std::size_t first = *std::min_element(hit.begin(), hit.end());
    if (first == n) return std::nullopt;
    return first;
  }
};

Deduper::Deduper(std::span<const BenchmarkEntry> benchmark, DedupOptions options)
    : impl_(std::make_unique<Impl>()) {
  options.validate();
  impl_->options = options;
  for (const auto& entry : benchmark) {
    impl_->benchmark.push_back({Profile(entry.question), Profile(entry.code)});
  }
}

Deduper::~Deduper() = default;
Deduper::Deduper(Deduper&&) noexcept = default;
Deduper& Deduper::operator=(Deduper&&) noexcept = default;

std::optional<Deduper::Match> Deduper::offer(std::string_view question, std::string_view code) {
  Item item{Profile(question), Profile(code)};
  const auto match_with = [&](bool benchmark, std::size_t index, const Item& other) {
    return Match{benchmark, index, similarity(item.question.text, other.question.text),
                 similarity(item.code.text, other.code.text)};
  };
  if (auto hit = impl_->first_similar(item, impl_->benchmark)) {
    return match_with(true, *hit, impl_->benchmark[*hit]);
  }
  if (auto hit = impl_->first_similar(item, impl_->accepted)) {
    return match_with(false, *hit, impl_->accepted[*hit]);
  }
  impl_->accepted.push_back(std::move(item));
  return std::nullopt;
}

std::size_t Deduper::accepted() const noexcept { return impl_->accepted.size(); }

const DedupOptions& Deduper::options() const noexcept { return impl_->options; }

std::uint64_t Deduper::exact_comparisons() const noexcept { return impl_->exact; }

DedupResult dedup(std::span<const QuestionCodeTuple> tuples, Deduper& filter) {
  DedupResult result;
  result.report.threshold = filter.options().threshold;
  // Accepted positions before this call belong to someone else's tuples.
  const std::size_t base = filter.accepted();
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    const auto match = filter.offer(tuples[i].question, tuples[i].code);
    if (!match) {
      result.kept.push_back(tuples[i]);
      result.kept_indices.push_back(i);
      continue;
    }
    result.removed.push_back(tuples[i]);
    if (match->benchmark) {
      result.report.benchmark_hits.push_back(
          {i, match->index, match->question_similarity, match->code_similarity});
    } else if (match->index >= base) {
      result.report.pairs.push_back({result.kept_indices[match->index - base], i,
                                     match->question_similarity, match->code_similarity});
    }
  }
  return result;
}

DedupResult dedup(std::span<const QuestionCodeTuple> tuples,
                  std::span<const BenchmarkEntry> benchmark, const DedupOptions& options) {
  Deduper filter(benchmark, options);
  return dedup(tuples, filter);
}

RegenerateResult regenerate_to_size(std::vector<QuestionCodeTuple> kept, Quotas quotas,
                                    TupleSource& source, Deduper& filter,
                                    std::size_t max_rounds) {
  RegenerateResult result;
  result.report.threshold = filter.options().threshold;
  result.tuples = std::move(kept);
  const std::size_t base = filter.accepted() - std::min(filter.accepted(), result.tuples.size());
  // Candidate stream index of every accepted tuple.
  std::vector<std::size_t> stream_of(result.tuples.size());
  for (std::size_t i = 0; i < stream_of.size(); ++i) stream_of[i] = i;
  std::size_t stream = result.tuples.size();

  const auto missing = [&](SeedType type) {
    const auto have = static_cast<std::size_t>(
        std::count_if(result.tuples.begin(), result.tuples.end(),
                      [&](const QuestionCodeTuple& t) { return t.seed_type == type; }));
    return quotas.of(type) > have ? quotas.of(type) - have : 0;
  };

  for (std::size_t round = 0; round < max_rounds; ++round) {
    if (missing(SeedType::single) == 0 && missing(SeedType::multi) == 0) break;
    ++result.rounds;
    for (const SeedType type : {SeedType::single, SeedType::multi}) {
      const std::size_t need = missing(type);
      if (need == 0) continue;
      for (auto& tuple : source.generate(type, need)) {
        ++result.generated;
        const std::size_t index = stream++;
        const auto match = filter.offer(tuple.question, tuple.code);
        if (!match) {
          result.tuples.push_back(std::move(tuple));
          stream_of.push_back(index);
          continue;
        }
        ++result.rejected;
        if (match->benchmark) {
          result.report.benchmark_hits.push_back(
              {index, match->index, match->question_similarity, match->code_similarity});
        } else if (match->index >= base) {
          result.report.pairs.push_back({stream_of[match->index - base], index,
                                         match->question_similarity, match->code_similarity});
        }
      }
    }
  }
  result.shortfall = {missing(SeedType::single), missing(SeedType::multi)};
  return result;
}

RegenerateResult regenerate_to_size(std::vector<QuestionCodeTuple> kept, Quotas quotas,
                                    TupleSource& source, std::span<const BenchmarkEntry> benchmark,
                                    const DedupOptions& options, std::size_t max_rounds) {
  Deduper filter(benchmark, options);
  DedupResult clean = dedup(kept, filter);
  const std::size_t survivors = clean.kept.size();
  RegenerateResult result =
      regenerate_to_size(std::move(clean.kept), quotas, source, filter, max_rounds);
  // Re-express stream indices against the full input: survivors map back to
  // their input positions, batch candidates follow every input tuple.
  const auto remap = [&](std::size_t s) {
    return s < survivors ? clean.kept_indices[s] : s - survivors + kept.size();
  };
  for (auto& p : result.report.pairs) {
    p.index_a = remap(p.index_a);
    p.index_b = remap(p.index_b);
  }
  for (auto& h : result.report.benchmark_hits) h.index = remap(h.index);
  result.report.pairs.insert(result.report.pairs.begin(), clean.report.pairs.begin(),
                             clean.report.pairs.end());
  result.report.benchmark_hits.insert(result.report.benchmark_hits.begin(),
                                      clean.report.benchmark_hits.begin(),
                                      clean.report.benchmark_hits.end());
  result.rejected += clean.removed.size();
  return result;
}

// ---------------------------------------------------------------------------
// Standardization

std::string validate_record(const TrainingRecord& record) {
  if (trim(record.instruction).empty()) return "empty instruction";
  if (trim(record.output).empty()) return "empty output";
  if (!record.input.empty()) return "input must be empty";
  if (record.api_nodes.empty()) return "no api_nodes";
  for (const auto& id : record.api_nodes) {
    if (id.empty()) return "empty api node id";
  }
  return {};
}

StandardizeResult standardize(std::span<const QuestionCodeTuple> tuples) {
  StandardizeResult result;
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    const QuestionCodeTuple& t = tuples[i];
    TrainingRecord record{t.question, "", t.code, t.api_nodes, t.seed_type};
    if (std::string reason = validate_record(record); !reason.empty()) {
      result.rejects.push_back({i, std::move(reason), t});
      continue;
    }
    result.records.push_back(std::move(record));
  }
  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const TrainingRecord& a, const TrainingRecord& b) {
                     return a.seed_type < b.seed_type;
                   });
  return result;
}

json to_json(const TrainingRecord& record) {
  return {{"instruction", record.instruction},
          {"input", record.input},
          {"output", record.output},
          {"meta", {{"api_nodes", record.api_nodes}, {"seed_type", to_string(record.seed_type)}}}};
}

TrainingRecord training_record_from_json(const json& j) {
  TrainingRecord record;
  try {
    record.instruction = j.at("instruction").get<std::string>();
    record.input = j.at("input").get<std::string>();
    record.output = j.at("output").get<std::string>();
    const json& meta = j.at("meta");
    record.api_nodes = meta.at("api_nodes").get<std::vector<std::string>>();
    const auto type = parse_seed_type(meta.at("seed_type").get<std::string>());
    if (!type) throw Error(ErrorKind::schema, "unknown seed_type");
    record.seed_type = *type;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("malformed training record: ") + e.what());
  }
  if (std::string reason = validate_record(record); !reason.empty()) {
    throw Error(ErrorKind::schema, "invalid training record: " + reason);
  }
  return record;
}

json records_to_json(std::span<const TrainingRecord> records) {
  json out = json::array();
  for (const auto& r : records) out.push_back(to_json(r));
  return out;
}

std::vector<TrainingRecord> records_from_json(const json& doc) {
  if (!doc.is_array()) throw Error(ErrorKind::schema, "dataset must be a JSON array");
  std::vector<TrainingRecord> out;
  for (const auto& j : doc) out.push_back(training_record_from_json(j));
  return out;
}

json rejects_to_json(std::span<const Reject> rejects) {
  json out = json::array();
  for (const auto& r : rejects) {
    out.push_back({{"index", r.index}, {"reason", r.reason}, {"tuple", to_json(r.tuple)}});
  }
  return out;
}

json to_json(const SimilarityReport& report) {
  json pairs = json::array();
  for (const auto& p : report.pairs) {
    pairs.push_back({{"index_a", p.index_a},
                     {"index_b", p.index_b},
                     {"question_similarity", p.question_similarity},
                     {"code_similarity", p.code_similarity}});
  }
  json hits = json::array();
  for (const auto& h : report.benchmark_hits) {
    hits.push_back({{"index", h.index},
                    {"benchmark_index", h.benchmark_index},
                    {"question_similarity", h.question_similarity},
                    {"code_similarity", h.code_similarity}});
  }
  return {{"threshold", report.threshold}, {"pairs", pairs}, {"benchmark_hits", hits}};
}

}  // namespace kgsynth
