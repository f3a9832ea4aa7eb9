#include "restrain/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "restrain/errors.hpp"
#include "restrain/random.hpp"

namespace restrain {
namespace {

constexpr std::array kMethods{Method::Restrain, Method::GoldGrpo,  Method::Ttrl,
                              Method::SrtOffline, Method::SrtEasy, Method::RestrainOnlinePw};

std::uint64_t salted(std::uint64_t seed, const char* salt) { return mix_seed(seed, stable_hash(salt)); }

struct Window {
  double loss = 0.0;
  double kl = 0.0;
  double majority_ratio = 0.0;
  int penalized = 0;
  int prompts = 0;
  int evaluated = 0;  // prompts that produced a loss (not skipped)

  void clear() { *this = Window{}; }
};

StepRecord make_record(int step, const Window& w, const PolicyParams& policy,
                       std::span<const SyntheticTask> suite) {
  StepRecord r;
  r.step = step;
  if (w.evaluated > 0) {
    r.mean_loss = w.loss / w.evaluated;
    r.mean_kl = w.kl / w.evaluated;
  }
  if (w.prompts > 0) {
    r.mean_majority_ratio = w.majority_ratio / w.prompts;
    r.penalized_fraction = static_cast<double>(w.penalized) / w.prompts;
  }
  r.accuracy = greedy_accuracy(policy, suite);
  double h = 0.0;
  for (const auto& t : suite) h += mode_entropy(policy, t.prompt_id);
  r.mean_entropy = suite.empty() ? 0.0 : h / static_cast<double>(suite.size());
  return r;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::Restrain: return "RESTRAIN";
    case Method::GoldGrpo: return "GOLD_GRPO";
    case Method::Ttrl: return "TTRL";
    case Method::SrtOffline: return "SRT_OFFLINE";
    case Method::SrtEasy: return "SRT_EASY";
    case Method::RestrainOnlinePw: return "RESTRAIN_ONLINE_PW";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : kMethods)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

std::span<const Method> all_methods() { return kMethods; }

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (n_rollouts < 1) throw ConfigError("n_rollouts must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (n_ref < 1) throw ConfigError("n_ref must be >= 1");
  if (!(easy_threshold >= 0.0 && easy_threshold <= 1.0)) throw ConfigError("easy_threshold must lie in [0, 1]");
  if (!(collapse_threshold > 0.0)) throw ConfigError("collapse_threshold must be positive");
  objective.validate();
  prompt_shaping.validate();
  if (n_rollouts < objective.penalty.majority_threshold)
    throw ConfigError("n_rollouts must be >= the majority threshold");
}

PromptWeightTable precompute_prompt_weights(std::span<const SyntheticTask> suite,
                                            const PolicySnapshot& reference, const TrainConfig& cfg) {
  return build_prompt_table(suite, reference, cfg.n_ref, cfg.prompt_shaping, salted(cfg.seed, "prompt-table"));
}

LabelTable precompute_offline_labels(std::span<const SyntheticTask> suite, const PolicySnapshot& reference,
                                     const TrainConfig& cfg) {
  LabelTable labels;
  const auto seed = salted(cfg.seed, "offline-labels");
  for (const auto& task : suite) {
    const auto group = sample_rollouts(task, reference.params(), reference, reference, cfg.n_ref, seed);
    labels[task.prompt_id] = majority_answer(tally(group));
  }
  return labels;
}

TrainResult train(std::span<const SyntheticTask> suite, const TrainConfig& cfg, const PromptWeightTable* table) {
  cfg.validate();
  if (suite.empty()) throw InvalidInput("train: empty suite");

  TrainResult result;
  PolicyParams policy = initial_policy(suite);
  result.initial_policy = policy;
  const PolicySnapshot reference("reference", policy);

  std::optional<PromptWeightTable> own_table;
  if (cfg.method == Method::Restrain && !table) {
    own_table.emplace(precompute_prompt_weights(suite, reference, cfg));
    table = &*own_table;
  }
  if (cfg.method == Method::Restrain) {
    for (const auto& t : suite)
      if (!table->contains(t.prompt_id)) throw ConfigError("prompt table lacks '" + t.prompt_id + "'");
  }

  LabelTable gold;
  for (const auto& t : suite) gold[t.prompt_id] = t.gold;
  LabelTable offline;
  if (cfg.method == Method::SrtOffline) offline = precompute_offline_labels(suite, reference, cfg);
  const BaselineInputs inputs{&gold, &offline, cfg.easy_threshold};

  Window window;
  result.records.push_back(make_record(0, window, policy, suite));

  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(suite.size()));
  std::vector<std::size_t> order(suite.size());
  const auto batch_seed = salted(cfg.seed, "batch");
  const auto rollout_seed = salted(cfg.seed, "rollouts");

  for (int step = 1; step <= cfg.steps; ++step) {
    const PolicySnapshot behavior("behavior", policy);
    if (table && cfg.method == Method::Restrain) result.table_checksums.push_back(table->checksum());

    // Partial Fisher-Yates: the first `batch` entries form this step's prompts.
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(batch_seed, static_cast<std::uint64_t>(step)));
    for (int i = 0; i < batch; ++i) {
      const auto j = i + rng.below(order.size() - i);
      std::swap(order[i], order[j]);
    }

    std::vector<LossGradient> grads;
    grads.reserve(batch);
    for (int b = 0; b < batch; ++b) {
      const SyntheticTask& task = suite[order[b]];
      const auto group = sample_rollouts(task, policy, behavior, reference, cfg.n_rollouts,
                                         mix_seed(rollout_seed, static_cast<std::uint64_t>(step)));
      const PromptContext ctx{task, policy, reference};
      const AnswerTally t = tally(group);

      LossGradient g;
      switch (cfg.method) {
        case Method::Restrain:
          g = loss_gradient(group, *table, cfg.objective, ctx);
          break;
        case Method::RestrainOnlinePw:
          g = loss_gradient(group, prompt_weight(t, cfg.prompt_shaping), cfg.objective, ctx);
          break;
        case Method::GoldGrpo:
          g = baseline_gradient(BaselineKind::GoldGrpo, group, inputs, cfg.objective, ctx);
          break;
        case Method::Ttrl:
          g = baseline_gradient(BaselineKind::Ttrl, group, inputs, cfg.objective, ctx);
          break;
        case Method::SrtOffline:
          g = baseline_gradient(BaselineKind::SrtOffline, group, inputs, cfg.objective, ctx);
          break;
        case Method::SrtEasy:
          g = baseline_gradient(BaselineKind::SrtEasy, group, inputs, cfg.objective, ctx);
          break;
      }

      if (!std::isfinite(g.loss.total) || !all_finite(g.d_logits)) {
        std::ostringstream msg;
        msg << "non-finite loss or gradient at step " << step << " for prompt '" << task.prompt_id
            << "' (loss=" << g.loss.total << ", kl=" << g.loss.kl << ")";
        throw TrainingAborted(msg.str());
      }

      ++window.prompts;
      window.majority_ratio += static_cast<double>(t.majority_count) / t.n;
      if (g.loss.penalized) ++window.penalized;
      if (!g.loss.skipped) {
        ++window.evaluated;
        window.loss += g.loss.total;
        window.kl += g.loss.kl;
      }
      grads.push_back(std::move(g));
    }

    // Unweighted mean over the batch; each prompt owns its logits.
    const double scale = cfg.learning_rate / batch;
    for (const auto& g : grads) {
      auto& logits = policy.logits.at(g.prompt_id);
      for (std::size_t k = 0; k < logits.size() && k < g.d_logits.size(); ++k) logits[k] -= scale * g.d_logits[k];
    }

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      result.records.push_back(make_record(step, window, policy, suite));
      window.clear();
    }
  }

  result.final_policy = std::move(policy);
  return result;
}

CollapseReport detect_collapse(std::span<const StepRecord> records, double threshold) {
  if (records.size() < 2) throw InvalidInput("detect_collapse: need at least two records");
  // Guards against 0.6 - 0.45 landing a hair below 0.15.
  constexpr double kSlack = 1e-12;
  CollapseReport rep;
  std::size_t peak = 0;
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].accuracy > records[peak].accuracy) peak = i;
  rep.peak_accuracy = records[peak].accuracy;
  rep.peak_step = records[peak].step;
  rep.final_accuracy = records.back().accuracy;
  rep.collapsed = rep.peak_accuracy - rep.final_accuracy >= threshold - kSlack;
  if (rep.collapsed) {
    for (std::size_t i = peak + 1; i < records.size(); ++i) {
      if (records[i].accuracy <= rep.peak_accuracy - threshold + kSlack) {
        rep.collapse_step = records[i].step;
        break;
      }
    }
  }
  return rep;
}

}  // namespace restrain
