#pragma once

#include <map>
#include <span>
#include <vector>

#include "restrain/advantage.hpp"
#include "restrain/consensus.hpp"
#include "restrain/envsim.hpp"
#include "restrain/shaping.hpp"

namespace restrain {

struct ObjectiveConfig {
  double clip_epsilon = 0.2;
  double kl_coefficient = 0.001;
  ShapingConfig shaping;  // pseudo-label weighting
  PenaltyConfig penalty;
  bool scale_advantages_by_std = true;

  void validate() const;
  bool operator==(const ObjectiveConfig&) const = default;
};

struct LabelLoss {
  AnswerId answer = kNoLabel;
  double weight = 0.0;
  double loss = 0.0;  // clipped surrogate + beta * KL for this label
};

struct LossBreakdown {
  double total = 0.0;
  double surrogate = 0.0;  // label-weighted surrogate before the prompt weight
  double kl = 0.0;         // KL(pi_theta || pi_ref), before beta
  std::vector<LabelLoss> per_label;
  double prompt_weight_applied = 1.0;
  bool penalized = false;
  bool skipped = false;  // SRT easy-prompt filter rejected the group
};

// Everything a per-prompt loss needs besides the rollouts.
struct PromptContext {
  const SyntheticTask& task;
  const PolicyParams& policy;       // pi_theta, the differentiated parameters
  const PolicySnapshot& reference;  // pi_ref
};

// exp(logprob_current - logprob_behavior) from the stored log-probabilities.
std::vector<double> importance_ratios(const RolloutGroup& group);

// Same ratios with logprob_current re-evaluated under ctx.policy.
std::vector<double> importance_ratios(const RolloutGroup& group, const PromptContext& ctx);

// -(1/n) sum_i min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i)
double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages,
                         double clip_epsilon);

// Exact KL(pi_theta || pi_ref) over trajectories: mode stage plus the
// expected answer-stage divergence. +inf when the reference has no mass where
// the current policy does.
double kl_term(const PromptContext& ctx);

struct LossGradient {
  PromptId prompt_id;
  std::vector<double> d_logits;  // d total / d mode logits of prompt_id
  LossBreakdown loss;
};

// Per-prompt objective: u_x * sum_j w_j (surrogate_j + beta KL). Penalized
// prompts use the single -delta row and skip label weighting.
LossBreakdown restrain_loss(const RolloutGroup& group, const PromptWeightTable& table,
                            const ObjectiveConfig& cfg, const PromptContext& ctx);
LossBreakdown restrain_loss(const RolloutGroup& group, double prompt_weight,
                            const ObjectiveConfig& cfg, const PromptContext& ctx);

LossGradient loss_gradient(const RolloutGroup& group, const PromptWeightTable& table,
                           const ObjectiveConfig& cfg, const PromptContext& ctx);
LossGradient loss_gradient(const RolloutGroup& group, double prompt_weight,
                           const ObjectiveConfig& cfg, const PromptContext& ctx);

// Plain single-label GRPO loss against `label`.
LossGradient single_label_gradient(const RolloutGroup& group, AnswerId label,
                                   const ObjectiveConfig& cfg, const PromptContext& ctx);

enum class BaselineKind { GoldGrpo, Ttrl, SrtOffline, SrtEasy };

using LabelTable = std::map<PromptId, AnswerId>;

struct BaselineInputs {
  const LabelTable* gold = nullptr;            // GoldGrpo
  const LabelTable* offline_labels = nullptr;  // SrtOffline
  double easy_threshold = 0.7;                 // SrtEasy, on majority_count / n
};

LossBreakdown baseline_loss(BaselineKind kind, const RolloutGroup& group,
                            const BaselineInputs& inputs, const ObjectiveConfig& cfg,
                            const PromptContext& ctx);
LossGradient baseline_gradient(BaselineKind kind, const RolloutGroup& group,
                               const BaselineInputs& inputs, const ObjectiveConfig& cfg,
                               const PromptContext& ctx);

}  // namespace restrain
