#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace restrain {

using AnswerId = std::int32_t;
using PromptId = std::string;

// One sampled trajectory. trajectory = {mode, answer}.
struct Rollout {
  AnswerId answer = 0;
  std::vector<int> trajectory;
  double logprob_current = 0.0;
  double logprob_behavior = 0.0;
  double logprob_reference = 0.0;

  int mode() const { return trajectory.front(); }
};

struct RolloutGroup {
  PromptId prompt_id;
  std::vector<Rollout> rollouts;

  int n() const { return static_cast<int>(rollouts.size()); }
  std::vector<AnswerId> answers() const;
};

// Throws InvalidInput when the group is empty or a rollout is inconsistent
// (answer not the last trajectory token, log-probabilities positive or NaN).
void validate(const RolloutGroup& group);

// Distinct answers of a group, ordered by descending count then ascending id.
struct AnswerTally {
  std::vector<AnswerId> answers;
  std::vector<int> counts;
  std::vector<double> freqs;
  int majority_count = 0;
  int n = 0;

  int m() const { return static_cast<int>(answers.size()); }
};

AnswerTally tally(const RolloutGroup& group);
AnswerTally tally(std::span<const AnswerId> answers);

// Highest count, lowest id on ties.
AnswerId majority_answer(const AnswerTally& tally);

struct ReliabilityBucket {
  int majority_size = 0;
  int population = 0;
  // Unset when the bucket is empty.
  std::optional<double> majority_correct_ratio;
  std::optional<double> at_least_one_correct_ratio;
};

struct ReliabilityReport {
  int n = 0;  // rollouts per prompt
  int prompts = 0;
  double pass_at_n = 0.0;
  std::vector<ReliabilityBucket> buckets;  // one per majority size 1..n
};

// Majority-vote reliability bucketed by majority size. All groups must share
// the same rollout count and have a gold label.
ReliabilityReport reliability_stats(std::span<const RolloutGroup> groups,
                                    const std::map<PromptId, AnswerId>& gold);

// CSV with header majority_size,population,majority_correct_ratio,
// at_least_one_correct_ratio. Empty buckets leave the ratio cells blank.
std::string to_csv(const ReliabilityReport& report);

}  // namespace restrain
