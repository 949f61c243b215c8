#include "kgsynth/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "kgsynth/error.hpp"
#include "kgsynth/support.hpp"

namespace kgsynth {

double information_content(double p, double p_min) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorKind::domain, "probability outside [0, 1]: " + std::to_string(p));
  }
  return -std::log2(std::max(p, p_min));
}

std::string u_context(const ApiNode& node) {
  return std::string(to_string(node.kind)) + " " + node.name + " [" + node.id + "]";
}

std::string MockProvider::id() const { return "mock:" + std::to_string(seed_); }

double MockProvider::estimate(std::string_view u, std::string_view v) {
  uint64_t h = splitmix64(seed_);
  for (char c : u) h = splitmix64(h ^ static_cast<unsigned char>(c));
  h = splitmix64(h ^ 0x1f);
  for (char c : v) h = splitmix64(h ^ static_cast<unsigned char>(c));
  // 53 random bits mapped onto (0, 1].
  return static_cast<double>((h >> 11) + 1) * 0x1.0p-53;
}

namespace {

// "class ArrayList [util.ArrayList]" -> ("class", "ArrayList")
std::pair<std::string, std::string> split_context(std::string_view context) {
  const auto space = context.find(' ');
  if (space == std::string_view::npos) return {"", std::string(context)};
  std::string_view rest = context.substr(space + 1);
  rest = rest.substr(0, rest.rfind(" ["));
  return {std::string(context.substr(0, space)), std::string(rest)};
}

std::string lowercase(std::string_view text) {
  std::string out(trim(text));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

LogprobProvider::LogprobProvider(std::shared_ptr<const ChatClient> client, std::string framework)
    : client_(std::move(client)), framework_(std::move(framework)) {}

std::string LogprobProvider::id() const {
  return "logprob:" + client_->endpoint().model;
}

std::string LogprobProvider::question(std::string_view context, std::string_view v) const {
  const auto [kind, name] = split_context(context);
  return "Does " + kind + " " + name + " in " + framework_ + " have a member named " +
         std::string(v) + "? Answer Yes or No.";
}

double LogprobProvider::estimate(std::string_view context, std::string_view v) {
  ChatRequest request;
  request.messages = {{"user", question(context, v)}};
  request.temperature = 0.0;
  request.max_tokens = 1;
  request.top_logprobs = 10;
  const ChatResponse response = client_->complete(request);
  double yes = 0.0;
  double no = 0.0;
  for (const auto& [token, logprob] : response.first_token_logprobs) {
    const std::string t = lowercase(token);
    if (t == "yes") yes += std::exp(logprob);
    if (t == "no") no += std::exp(logprob);
  }
  if (yes + no <= 0.0) {
    throw Error(ErrorKind::provider, "no Yes/No token among first-token logprobs");
  }
  return yes / (yes + no);
}

SamplingProvider::SamplingProvider(std::shared_ptr<const ChatClient> client,
                                   std::string framework, int samples)
    : client_(std::move(client)), framework_(std::move(framework)), samples_(samples) {
  if (samples_ < 1) throw Error(ErrorKind::domain, "sampling provider needs >= 1 sample");
}

std::string SamplingProvider::id() const {
  return "sampling" + std::to_string(samples_) + ":" + client_->endpoint().model;
}

std::vector<std::string> SamplingProvider::samples_for(std::string_view context) {
  {
    std::lock_guard lock(mutex_);
    auto it = memo_.find(context);
    if (it != memo_.end()) return it->second;
  }
  const auto [kind, name] = split_context(context);
  ChatRequest request;
  request.messages = {{"user", "List the members (methods and properties) of " + kind + " " +
                                   name + " in " + framework_ +
                                   ". Reply with member names only, one per line."}};
  request.temperature = 1.0;
  request.max_tokens = 256;
  std::vector<std::string> answers;
  for (int i = 0; i < samples_; ++i) answers.push_back(client_->complete(request).text);
  std::lock_guard lock(mutex_);
  return memo_.try_emplace(std::string(context), std::move(answers)).first->second;
}

double SamplingProvider::estimate(std::string_view context, std::string_view v) {
  const auto answers = samples_for(context);
  const auto hits = std::count_if(answers.begin(), answers.end(),
                                  [&](const std::string& a) { return mentions_word(a, v); });
  return static_cast<double>(hits) / static_cast<double>(answers.size());
}

std::string CachedProvider::cache_key(std::string_view provider_id, std::string_view context,
                                      std::string_view v) {
  std::string material;
  material.append(context).append("\x1f").append(v).append("\x1f").append(provider_id);
  return sha256_hex(material);
}

double CachedProvider::estimate(std::string_view context, std::string_view v) {
  const std::string key = cache_key(inner_.id(), context, v);
  if (auto hit = cache_.get(key); hit && hit->is_number()) return hit->get<double>();
  const double p = inner_.estimate(context, v);
  cache_.put(key, p);
  return p;
}

namespace {

struct FactJob {
  std::size_t node_index = 0;
  std::string v;
  std::optional<double> probability;
  std::string failure;
};

void require_non_leaf(const ApiGraph& graph, std::string_view id) {
  if (!is_container(graph.node(id).kind)) {
    throw Error(ErrorKind::precondition, "cannot score leaf node " + std::string(id));
  }
}

double estimate_with_retries(ProbabilityProvider& provider, const std::string& context,
                             const std::string& v, const RetryPolicy& retry) {
  return with_retries(retry, [&] {
    const double p = provider.estimate(context, v);
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw Error(ErrorKind::provider, "provider returned out-of-range probability");
    }
    return p;
  });
}

std::vector<NodeScore> compute_scores(const ApiGraph& graph, std::span<const std::string> ids,
                                      ProbabilityProvider& provider,
                                      const ScoringOptions& options) {
  std::vector<FactJob> jobs;
  std::vector<std::string> contexts;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    require_non_leaf(graph, ids[n]);
    contexts.push_back(u_context(graph.node(ids[n])));
    for (const auto& child : graph.children(ids[n])) {
      jobs.push_back({n, graph.node(child).name, std::nullopt, {}});
    }
  }
  parallel_for(jobs.size(), options.jobs, [&](std::size_t i) {
    FactJob& job = jobs[i];
    try {
      job.probability =
          estimate_with_retries(provider, contexts[job.node_index], job.v, options.retry);
    } catch (const Error& e) {
      job.failure = e.what();
    }
  });

  std::vector<NodeScore> scores(ids.size());
  for (std::size_t n = 0; n < ids.size(); ++n) scores[n].node = ids[n];
  std::size_t job_index = 0;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    NodeScore& score = scores[n];
    const auto children = graph.children(ids[n]);
    double total = 0.0;
    for (std::size_t c = 0; c < children.size(); ++c, ++job_index) {
      const FactJob& job = jobs[job_index];
      if (!job.probability) {
        if (score.failure.empty()) score.failure = job.failure;
        continue;
      }
      FactTriple fact;
      fact.u = ids[n];
      fact.v = children[c];
      fact.probability = std::max(*job.probability, options.p_min);
      fact.information_bits = information_content(*job.probability, options.p_min);
      total += fact.information_bits;
      score.facts.push_back(std::move(fact));
    }
    if (!score.failure.empty()) {
      score.facts.clear();
    } else {
      score.ue_score = score.facts.empty() ? 0.0 : total / static_cast<double>(score.facts.size());
    }
  }
  return scores;
}

}  // namespace

NodeScore score_node(ApiGraph& graph, std::string_view id, ProbabilityProvider& provider,
                     const ScoringOptions& options) {
  const std::string ids[] = {std::string(id)};
  NodeScore score = std::move(compute_scores(graph, ids, provider, options).front());
  graph.set_ue_score(id, score.ue_score);
  return score;
}

ScoreReport score_all(ApiGraph& graph, ProbabilityProvider& provider,
                      const ScoringOptions& options) {
  const auto ids = non_leaf_nodes(graph);
  ScoreReport report;
  report.scores = compute_scores(graph, ids, provider, options);
  for (const auto& score : report.scores) {
    graph.set_ue_score(score.node, score.ue_score);
    if (!score.ue_score) {
      ++report.unscored;
      report.failures.push_back({score.node, 0, "unscored: " + score.failure});
    }
  }
  if (!ids.empty() && static_cast<double>(report.unscored) >
                          options.max_unscored_fraction * static_cast<double>(ids.size())) {
    throw Error(ErrorKind::scoring, std::to_string(report.unscored) + " of " +
                                        std::to_string(ids.size()) +
                                        " non-leaf nodes could not be scored");
  }
  return report;
}

}  // namespace kgsynth
