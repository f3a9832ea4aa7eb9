#include "restrain/advantage.hpp"

#include <cmath>
#include <numeric>

#include "restrain/errors.hpp"

namespace restrain {

double reward(AnswerId rollout_answer, AnswerId label) { return rollout_answer == label ? 1.0 : 0.0; }

std::vector<double> grpo_advantages(std::span<const double> rewards, bool scale_by_std) {
  const auto n = static_cast<double>(rewards.size());
  std::vector<double> adv(rewards.size(), 0.0);
  if (rewards.empty()) return adv;
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) return adv;
  const double scale = scale_by_std ? 1.0 / (sd + kAdvantageEpsilon) : 1.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) * scale;
  return adv;
}

AdvantageMatrix refine(const AnswerTally& tally, const RolloutGroup& group,
                       const PenaltyConfig& cfg, bool scale_by_std) {
  const int n = group.n();
  if (n < 1 || tally.n != n) throw InvalidInput("refine: tally does not match group");
  if (cfg.majority_threshold < 1 || cfg.majority_threshold > n)
    throw ConfigError("refine: majority threshold must lie in [1, n]");
  if (!(cfg.negative_offset >= 0.0)) throw ConfigError("refine: negative offset must be >= 0");

  AdvantageMatrix out;
  if (tally.majority_count < cfg.majority_threshold) {
    out.penalized = true;
    out.labels = {kNoLabel};
    const std::vector<double> zeros(n, 0.0);
    auto adv = grpo_advantages(zeros, scale_by_std);
    for (auto& a : adv) a -= cfg.negative_offset;
    out.rewards.push_back(zeros);
    out.values.push_back(std::move(adv));
    return out;
  }

  for (AnswerId label : tally.answers) {
    std::vector<double> r(n);
    for (int i = 0; i < n; ++i) r[i] = reward(group.rollouts[i].answer, label);
    out.labels.push_back(label);
    out.values.push_back(grpo_advantages(r, scale_by_std));
    out.rewards.push_back(std::move(r));
  }
  return out;
}

}  // namespace restrain
