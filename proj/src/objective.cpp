#include "restrain/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "restrain/errors.hpp"

namespace restrain {
namespace {

struct Row {
  AnswerId label;
  double weight;
  std::vector<double> advantages;
};

double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

// KL(p || q) over modes and its gradient with respect to the mode logits of p.
double mode_kl(std::span<const double> lp, std::span<const double> lq, double temperature,
               std::vector<double>* grad) {
  double kl = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    const double pk = std::exp(lp[k]);
    if (pk == 0.0) continue;
    if (!std::isfinite(lq[k])) return std::numeric_limits<double>::infinity();
    kl += pk * (lp[k] - lq[k]);
  }
  if (grad) {
    grad->assign(lp.size(), 0.0);
    for (std::size_t k = 0; k < lp.size(); ++k) {
      const double pk = std::exp(lp[k]);
      if (pk == 0.0) continue;
      (*grad)[k] = pk * ((lp[k] - lq[k]) - kl) / temperature;
    }
  }
  return kl;
}

// Shared evaluation of u * sum_j w_j (surrogate_j + beta KL) and its gradient.
LossGradient evaluate(const RolloutGroup& group, const std::vector<Row>& rows, double prompt_weight,
                      bool penalized, const ObjectiveConfig& cfg, const PromptContext& ctx,
                      bool want_grad) {
  const int n = group.n();
  const auto& task = ctx.task;
  const double temperature = ctx.policy.temperature;
  const auto lp = ctx.policy.mode_log_probs(task.prompt_id);
  const auto lq = ctx.reference.params().mode_log_probs(task.prompt_id);
  const double eps = cfg.clip_epsilon;

  std::vector<double> ratio(n);
  for (int i = 0; i < n; ++i) {
    const auto& r = group.rollouts[i];
    const double current = lp[r.mode()] + std::log(task.emission[r.mode()][r.answer]);
    ratio[i] = std::exp(current - r.logprob_behavior);
  }

  LossGradient out;
  out.prompt_id = group.prompt_id;
  auto& loss = out.loss;
  loss.penalized = penalized;
  loss.prompt_weight_applied = prompt_weight;

  std::vector<double> kl_grad;
  // The answer stage contributes sum_m p(m) KL(emission_m || emission_m) = 0:
  // both policies share the task's emission rows, so only the mode stage remains.
  loss.kl = mode_kl(lp, lq, temperature, want_grad ? &kl_grad : nullptr);
  const double beta = cfg.kl_coefficient;
  const double kl_part = beta == 0.0 ? 0.0 : beta * loss.kl;

  // d total / d rho_i, accumulated over label rows.
  std::vector<double> d_ratio(n, 0.0);
  for (const auto& row : rows) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double a = row.advantages[i];
      const double unclipped = ratio[i] * a;
      const double clipped = clip(ratio[i], 1.0 - eps, 1.0 + eps) * a;
      if (unclipped <= clipped) {
        acc += unclipped;
        d_ratio[i] += -row.weight * a / n;
      } else {
        acc += clipped;
      }
    }
    const double surrogate = -acc / n;
    loss.per_label.push_back({row.label, row.weight, surrogate + kl_part});
    loss.surrogate += row.weight * surrogate;
  }
  loss.total = prompt_weight * (loss.surrogate + kl_part);

  if (want_grad) {
    std::vector<double> p(lp.size());
    for (std::size_t k = 0; k < lp.size(); ++k) p[k] = std::exp(lp[k]);
    out.d_logits.assign(lp.size(), 0.0);
    for (int i = 0; i < n; ++i) {
      if (d_ratio[i] == 0.0) continue;
      const double c = d_ratio[i] * ratio[i] / temperature;
      const int m = group.rollouts[i].mode();
      for (std::size_t k = 0; k < p.size(); ++k) out.d_logits[k] -= c * p[k];
      out.d_logits[m] += c;
    }
    if (beta != 0.0)
      for (std::size_t k = 0; k < p.size(); ++k) out.d_logits[k] += beta * kl_grad[k];
    for (auto& g : out.d_logits) g *= prompt_weight;
  }
  return out;
}

LossGradient restrain_eval(const RolloutGroup& group, double prompt_weight, const ObjectiveConfig& cfg,
                           const PromptContext& ctx, bool want_grad) {
  validate(group);
  cfg.validate();
  if (!(prompt_weight > 0.0) || !std::isfinite(prompt_weight))
    throw ConfigError("prompt weight must be positive");
  const AnswerTally t = tally(group);
  const AdvantageMatrix adv = refine(t, group, cfg.penalty, cfg.scale_advantages_by_std);

  std::vector<Row> rows;
  if (adv.penalized) {
    rows.push_back({kNoLabel, 1.0, adv.values.front()});
  } else {
    const auto w = label_weights(t, cfg.shaping);
    for (int j = 0; j < adv.rows(); ++j) rows.push_back({adv.labels[j], w.weights[j], adv.values[j]});
  }
  return evaluate(group, rows, prompt_weight, adv.penalized, cfg, ctx, want_grad);
}

LossGradient single_label_eval(const RolloutGroup& group, AnswerId label, const ObjectiveConfig& cfg,
                               const PromptContext& ctx, bool want_grad) {
  std::vector<double> rewards(group.n());
  for (int i = 0; i < group.n(); ++i) rewards[i] = reward(group.rollouts[i].answer, label);
  std::vector<Row> rows{{label, 1.0, grpo_advantages(rewards, cfg.scale_advantages_by_std)}};
  return evaluate(group, rows, 1.0, false, cfg, ctx, want_grad);
}

AnswerId lookup(const LabelTable* table, const PromptId& id, const char* what) {
  if (!table) throw ConfigError(std::string(what) + " table not provided");
  auto it = table->find(id);
  if (it == table->end()) throw ConfigError(std::string("no ") + what + " label for '" + id + "'");
  return it->second;
}

LossGradient baseline_eval(BaselineKind kind, const RolloutGroup& group, const BaselineInputs& inputs,
                           const ObjectiveConfig& cfg, const PromptContext& ctx, bool want_grad) {
  validate(group);
  cfg.validate();
  switch (kind) {
    case BaselineKind::GoldGrpo:
      return single_label_eval(group, lookup(inputs.gold, group.prompt_id, "gold"), cfg, ctx, want_grad);
    case BaselineKind::SrtOffline:
      return single_label_eval(group, lookup(inputs.offline_labels, group.prompt_id, "offline"), cfg, ctx,
                               want_grad);
    case BaselineKind::Ttrl:
      return single_label_eval(group, majority_answer(tally(group)), cfg, ctx, want_grad);
    case BaselineKind::SrtEasy: {
      const AnswerTally t = tally(group);
      if (static_cast<double>(t.majority_count) / t.n < inputs.easy_threshold) {
        LossGradient skipped;
        skipped.prompt_id = group.prompt_id;
        skipped.loss.skipped = true;
        skipped.d_logits.assign(ctx.task.mode_count, 0.0);
        return skipped;
      }
      return single_label_eval(group, majority_answer(t), cfg, ctx, want_grad);
    }
  }
  throw ConfigError("unknown baseline kind");
}

}  // namespace

void ObjectiveConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("clip epsilon must lie in (0, 1)");
  if (!(kl_coefficient >= 0.0)) throw ConfigError("KL coefficient must be >= 0");
  shaping.validate();
  if (penalty.majority_threshold < 1) throw ConfigError("majority threshold must be >= 1");
  if (!(penalty.negative_offset >= 0.0)) throw ConfigError("negative offset must be >= 0");
}

std::vector<double> importance_ratios(const RolloutGroup& group) {
  std::vector<double> out;
  out.reserve(group.rollouts.size());
  for (const auto& r : group.rollouts) {
    if (!std::isfinite(r.logprob_current) || !std::isfinite(r.logprob_behavior))
      throw InvalidInput("importance_ratios: non-finite log-probability");
    out.push_back(std::exp(r.logprob_current - r.logprob_behavior));
  }
  return out;
}

std::vector<double> importance_ratios(const RolloutGroup& group, const PromptContext& ctx) {
  std::vector<double> out;
  out.reserve(group.rollouts.size());
  for (const auto& r : group.rollouts) {
    const double current = logprob(ctx.policy, ctx.task, r.trajectory);
    if (!std::isfinite(current) || !std::isfinite(r.logprob_behavior))
      throw InvalidInput("importance_ratios: non-finite log-probability");
    out.push_back(std::exp(current - r.logprob_behavior));
  }
  return out;
}

double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages,
                         double clip_epsilon) {
  if (ratios.size() != advantages.size()) throw InvalidInput("clipped_surrogate: length mismatch");
  if (ratios.empty()) throw InvalidInput("clipped_surrogate: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double a = advantages[i];
    acc += std::min(ratios[i] * a, clip(ratios[i], 1.0 - clip_epsilon, 1.0 + clip_epsilon) * a);
  }
  return -acc / static_cast<double>(ratios.size());
}

double kl_term(const PromptContext& ctx) {
  const auto lp = ctx.policy.mode_log_probs(ctx.task.prompt_id);
  const auto lq = ctx.reference.params().mode_log_probs(ctx.task.prompt_id);
  return mode_kl(lp, lq, ctx.policy.temperature, nullptr);
}

LossBreakdown restrain_loss(const RolloutGroup& group, const PromptWeightTable& table,
                            const ObjectiveConfig& cfg, const PromptContext& ctx) {
  return restrain_eval(group, table.weight(group.prompt_id), cfg, ctx, false).loss;
}

LossBreakdown restrain_loss(const RolloutGroup& group, double prompt_weight, const ObjectiveConfig& cfg,
                            const PromptContext& ctx) {
  return restrain_eval(group, prompt_weight, cfg, ctx, false).loss;
}

LossGradient loss_gradient(const RolloutGroup& group, const PromptWeightTable& table,
                           const ObjectiveConfig& cfg, const PromptContext& ctx) {
  return restrain_eval(group, table.weight(group.prompt_id), cfg, ctx, true);
}

LossGradient loss_gradient(const RolloutGroup& group, double prompt_weight, const ObjectiveConfig& cfg,
                           const PromptContext& ctx) {
  return restrain_eval(group, prompt_weight, cfg, ctx, true);
}

LossGradient single_label_gradient(const RolloutGroup& group, AnswerId label, const ObjectiveConfig& cfg,
                                   const PromptContext& ctx) {
  validate(group);
  cfg.validate();
  return single_label_eval(group, label, cfg, ctx, true);
}

LossBreakdown baseline_loss(BaselineKind kind, const RolloutGroup& group, const BaselineInputs& inputs,
                            const ObjectiveConfig& cfg, const PromptContext& ctx) {
  return baseline_eval(kind, group, inputs, cfg, ctx, false).loss;
}

LossGradient baseline_gradient(BaselineKind kind, const RolloutGroup& group, const BaselineInputs& inputs,
                               const ObjectiveConfig& cfg, const PromptContext& ctx) {
  return baseline_eval(kind, group, inputs, cfg, ctx, true);
}

}  // namespace restrain
