#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kgsynth/cache.hpp"
#include "kgsynth/diagnostics.hpp"
#include "kgsynth/graph.hpp"
#include "kgsynth/llm_client.hpp"

namespace kgsynth {

inline constexpr double kDefaultMinProbability = 1e-6;
inline constexpr std::string_view kMembershipRelation = "has_member";

/// Bits of surprise for a membership fact: -log2(max(p, p_min)).
/// Throws Error(domain) unless p is in [0, 1].
double information_content(double p, double p_min = kDefaultMinProbability);

struct FactTriple {
  std::string u;
  std::string rho{kMembershipRelation};
  std::string v;
  double probability = 1.0;  // after clamping
  double information_bits = 0.0;
};

struct NodeScore {
  std::string node;
  std::vector<FactTriple> facts;
  std::optional<double> ue_score;  // absent when the provider kept failing
  std::string failure;
};

/// Estimates P(v | u, has_member). Implementations must be safe to call
/// from several threads and return the same value for the same inputs.
class ProbabilityProvider {
 public:
  virtual ~ProbabilityProvider() = default;
  virtual std::string id() const = 0;
  virtual double estimate(std::string_view u_context, std::string_view v_name) = 0;
};

/// Head-entity context handed to providers: "<kind> <name> [<id>]".
std::string u_context(const ApiNode& node);

/// Deterministic probabilities from a seeded hash of the inputs.
class MockProvider final : public ProbabilityProvider {
 public:
  explicit MockProvider(uint64_t seed = 0) : seed_(seed) {}
  std::string id() const override;
  double estimate(std::string_view u_context, std::string_view v_name) override;

 private:
  uint64_t seed_;
};

/// Asks a yes/no membership question and normalizes the first-token mass
/// of "Yes" against "No".
class LogprobProvider final : public ProbabilityProvider {
 public:
  LogprobProvider(std::shared_ptr<const ChatClient> client, std::string framework);
  std::string id() const override;
  double estimate(std::string_view u_context, std::string_view v_name) override;

  std::string question(std::string_view u_context, std::string_view v_name) const;

 private:
  std::shared_ptr<const ChatClient> client_;
  std::string framework_;
};

/// Asks the model to list the members of u `samples` times and returns the
/// fraction of answers naming v. Samples per head entity are memoized.
class SamplingProvider final : public ProbabilityProvider {
 public:
  SamplingProvider(std::shared_ptr<const ChatClient> client, std::string framework,
                   int samples = 10);
  std::string id() const override;
  double estimate(std::string_view u_context, std::string_view v_name) override;

 private:
  std::vector<std::string> samples_for(std::string_view u_context);

  std::shared_ptr<const ChatClient> client_;
  std::string framework_;
  int samples_;
  std::mutex mutex_;
  std::map<std::string, std::vector<std::string>, std::less<>> memo_;
};

/// Memoizes another provider in a ResponseCache keyed by a content hash of
/// (u-context, v-name, provider id).
class CachedProvider final : public ProbabilityProvider {
 public:
  CachedProvider(ProbabilityProvider& inner, ResponseCache& cache)
      : inner_(inner), cache_(cache) {}
  std::string id() const override { return inner_.id(); }
  double estimate(std::string_view u_context, std::string_view v_name) override;

  static std::string cache_key(std::string_view provider_id, std::string_view u_context,
                               std::string_view v_name);

 private:
  ProbabilityProvider& inner_;
  ResponseCache& cache_;
};

struct ScoringOptions {
  double p_min = kDefaultMinProbability;
  std::size_t jobs = 4;
  RetryPolicy retry;
  double max_unscored_fraction = 0.5;
};

/// Scores one non-leaf node and writes the result into the graph.
/// Throws Error(precondition) for leaf nodes.
NodeScore score_node(ApiGraph& graph, std::string_view id, ProbabilityProvider& provider,
                     const ScoringOptions& options = {});

struct ScoreReport {
  std::vector<NodeScore> scores;  // non_leaf_nodes() order
  std::vector<Diagnostic> failures;
  std::size_t unscored = 0;
};

/// Scores every non-leaf node with bounded parallelism, then writes all
/// scores back in one pass. Throws Error(scoring) when more than
/// max_unscored_fraction of the nodes could not be scored.
ScoreReport score_all(ApiGraph& graph, ProbabilityProvider& provider,
                      const ScoringOptions& options = {});

}  // namespace kgsynth
