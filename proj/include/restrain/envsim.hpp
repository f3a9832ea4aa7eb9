#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "restrain/consensus.hpp"

namespace restrain {

enum class Difficulty { Easy, SpuriousMajority, Hard };

std::string to_string(Difficulty d);
Difficulty difficulty_from_string(const std::string& s);

// A prompt with a hidden gold answer. Answers are generated in two stages:
// a latent reasoning mode drawn from the policy, then an answer drawn from
// the fixed emission row of that mode.
struct SyntheticTask {
  PromptId prompt_id;
  int vocab_size = 2;
  int mode_count = 1;
  AnswerId gold = 0;
  std::vector<std::vector<double>> emission;  // mode_count x vocab_size
  Difficulty tag = Difficulty::Easy;
  // Mode logits of the untrained ("base") policy.
  std::vector<double> initial_logits;

  bool operator==(const SyntheticTask&) const = default;
};

// Throws InvalidInput on shape errors, non-stochastic rows or a gold id out of range.
void validate(const SyntheticTask& task);

struct PolicyParams {
  std::map<PromptId, std::vector<double>> logits;
  double temperature = 1.0;

  const std::vector<double>& mode_logits(const PromptId& id) const;
  std::vector<double> mode_log_probs(const PromptId& id) const;
  std::vector<double> mode_probs(const PromptId& id) const;

  bool operator==(const PolicyParams&) const = default;
};

// Frozen copy of a policy. Used for pi_old (behavior) and pi_ref (reference).
class PolicySnapshot {
 public:
  PolicySnapshot(std::string id, PolicyParams params);

  const std::string& id() const { return id_; }
  const PolicyParams& params() const { return params_; }
  std::uint64_t checksum() const;

 private:
  std::string id_;
  PolicyParams params_;
};

std::uint64_t checksum(const PolicyParams& params);

PolicyParams initial_policy(std::span<const SyntheticTask> suite, double temperature = 1.0);

// Composition of a generated suite. Emission and initial-logit archetypes per
// difficulty are fixed by the generator; only the counts and sizes vary.
struct SuiteSpec {
  int easy = 0;
  int spurious = 0;
  int hard = 0;
  int vocab_size = 8;       // EASY and SPURIOUS_MAJORITY tasks
  int hard_vocab_size = 64; // HARD tasks spread over a wider answer set
  int mode_count = 6;

  bool operator==(const SuiteSpec&) const = default;
};

// Deterministic in (spec, seed). Prompt order: EASY, SPURIOUS_MAJORITY, HARD.
std::vector<SyntheticTask> generate_suite(const SuiteSpec& spec, std::uint64_t seed);

// log softmax(logits / T)[mode] + log emission[mode][answer]; -inf for a
// zero-probability emission entry.
double logprob(const PolicyParams& policy, const SyntheticTask& task,
               std::span<const int> trajectory);

// n rollouts drawn from `behavior`, each annotated with exact log-probabilities
// under `policy`, `behavior` and `reference`. Deterministic in (seed, prompt id).
RolloutGroup sample_rollouts(const SyntheticTask& task, const PolicyParams& policy,
                             const PolicySnapshot& behavior, const PolicySnapshot& reference,
                             int n, std::uint64_t seed);

// Marginal answer distribution sum_m p(m) emission[m][.].
std::vector<double> answer_distribution(const PolicyParams& policy, const SyntheticTask& task);

// Greedy decode: argmax mode, then argmax answer of that mode's row (lowest index on ties).
AnswerId greedy_answer(const PolicyParams& policy, const SyntheticTask& task);
double greedy_accuracy(const PolicyParams& policy, std::span<const SyntheticTask> suite);

// Entropy (nats) of the mode distribution.
double mode_entropy(const PolicyParams& policy, const PromptId& id);

}  // namespace restrain
