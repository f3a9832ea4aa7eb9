#pragma once

#include <span>
#include <vector>

#include "restrain/consensus.hpp"

namespace restrain {

// Majority threshold kappa and negative offset delta.
struct PenaltyConfig {
  int majority_threshold = 3;
  double negative_offset = 1.0;

  bool operator==(const PenaltyConfig&) const = default;
};

inline constexpr double kAdvantageEpsilon = 1e-6;

// Rule-based verifiable reward: 1 on exact match, else 0.
double reward(AnswerId rollout_answer, AnswerId label);

// Group-baselined advantages (r - mean) / (std + 1e-6) with population std.
// Constant rewards give all zeros. With scale_by_std = false only the mean is
// subtracted.
std::vector<double> grpo_advantages(std::span<const double> rewards, bool scale_by_std = true);

// Sentinel label for the single row of a penalized prompt.
inline constexpr AnswerId kNoLabel = -1;

struct AdvantageMatrix {
  std::vector<AnswerId> labels;               // row labels; {kNoLabel} when penalized
  std::vector<std::vector<double>> rewards;   // rows x n
  std::vector<std::vector<double>> values;    // rows x n refined advantages
  bool penalized = false;

  int rows() const { return static_cast<int>(values.size()); }
};

// Per-label rewards and advantages. When the majority count is below the
// threshold every reward is zeroed and every advantage becomes -delta.
AdvantageMatrix refine(const AnswerTally& tally, const RolloutGroup& group,
                       const PenaltyConfig& cfg, bool scale_by_std = true);

}  // namespace restrain
