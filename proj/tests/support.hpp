#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "restrain/consensus.hpp"
#include "restrain/envsim.hpp"
#include "restrain/objective.hpp"
#include "restrain/random.hpp"

namespace support {

using restrain::AnswerId;

// Group whose rollouts carry the given answers; trajectories use mode 0.
inline restrain::RolloutGroup group_of(const std::vector<AnswerId>& answers, std::string id = "p") {
  restrain::RolloutGroup g;
  g.prompt_id = std::move(id);
  for (AnswerId a : answers) {
    restrain::Rollout r;
    r.answer = a;
    r.trajectory = {0, a};
    r.logprob_current = r.logprob_behavior = r.logprob_reference = -1.0;
    g.rollouts.push_back(r);
  }
  return g;
}

// answers[i] repeated counts[i] times.
inline std::vector<AnswerId> expand(const std::vector<int>& counts) {
  std::vector<AnswerId> out;
  for (std::size_t i = 0; i < counts.size(); ++i)
    for (int k = 0; k < counts[i]; ++k) out.push_back(static_cast<AnswerId>(i));
  return out;
}

inline restrain::SyntheticTask make_task(std::string id, std::vector<std::vector<double>> emission,
                                         std::vector<double> logits, AnswerId gold = 0) {
  restrain::SyntheticTask t;
  t.prompt_id = std::move(id);
  t.mode_count = static_cast<int>(emission.size());
  t.vocab_size = static_cast<int>(emission.front().size());
  t.gold = gold;
  t.emission = std::move(emission);
  t.initial_logits = std::move(logits);
  return t;
}

inline std::vector<double> random_simplex(int size, restrain::Rng& rng) {
  std::vector<double> v(size);
  double s = 0.0;
  for (auto& x : v) {
    x = 0.05 + rng.uniform();
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

inline restrain::SyntheticTask random_task(restrain::Rng& rng, std::string id = "rand") {
  const int modes = 2 + static_cast<int>(rng.below(3));
  const int vocab = 2 + static_cast<int>(rng.below(4));
  std::vector<std::vector<double>> emission;
  for (int m = 0; m < modes; ++m) emission.push_back(random_simplex(vocab, rng));
  std::vector<double> logits;
  for (int m = 0; m < modes; ++m) logits.push_back(2.0 * rng.uniform() - 1.0);
  return make_task(std::move(id), std::move(emission), std::move(logits),
                   static_cast<AnswerId>(rng.below(vocab)));
}

inline restrain::PolicyParams policy_for(const restrain::SyntheticTask& t, std::vector<double> logits,
                                         double temperature = 1.0) {
  restrain::PolicyParams p;
  p.temperature = temperature;
  p.logits[t.prompt_id] = std::move(logits);
  return p;
}

inline std::vector<double> perturbed(std::vector<double> v, double scale, restrain::Rng& rng) {
  for (auto& x : v) x += scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

// One prompt's rollouts plus everything the objective needs to evaluate them.
struct LossCase {
  restrain::SyntheticTask task;
  restrain::PolicyParams current;
  restrain::PolicySnapshot behavior{"behavior", {}};
  restrain::PolicySnapshot reference{"reference", {}};
  restrain::RolloutGroup group;
  restrain::ObjectiveConfig cfg;
  double prompt_weight = 1.0;

  restrain::PromptContext ctx() const { return {task, current, reference}; }
  restrain::PromptContext ctx(const restrain::PolicyParams& p) const { return {task, p, reference}; }
};

// Random task, behavior/reference policies, a current policy perturbed from
// the behavior one by up to `drift` per logit, and n sampled rollouts.
inline LossCase random_case(restrain::Rng& rng, double drift) {
  LossCase c;
  c.task = random_task(rng);
  const double temperature = 0.5 + 1.5 * rng.uniform();
  const auto behavior_logits = perturbed(c.task.initial_logits, 1.0, rng);
  c.behavior = restrain::PolicySnapshot("behavior", policy_for(c.task, behavior_logits, temperature));
  c.reference = restrain::PolicySnapshot("reference", policy_for(c.task, c.task.initial_logits, temperature));
  c.current = policy_for(c.task, perturbed(behavior_logits, drift, rng), temperature);
  const int n = 2 + static_cast<int>(rng.below(15));
  c.group = restrain::sample_rollouts(c.task, c.current, c.behavior, c.reference, n, rng.below(1u << 30));
  c.cfg.clip_epsilon = 0.1 + 0.2 * rng.uniform();
  c.cfg.kl_coefficient = rng.uniform() < 0.5 ? 0.0 : 0.5 * rng.uniform();
  c.cfg.shaping.width = 0.1 + rng.uniform();
  c.cfg.penalty.majority_threshold = 1 + static_cast<int>(rng.below(n));
  c.cfg.penalty.negative_offset = 3.0 * rng.uniform();
  c.prompt_weight = 0.05 + rng.uniform();
  return c;
}

// True when some ratio sits within `margin` of a clip boundary.
inline bool near_kink(const LossCase& c, double margin = 1e-4) {
  const auto ratios = restrain::importance_ratios(c.group, c.ctx());
  const double eps = c.cfg.clip_epsilon;
  for (double r : ratios)
    if (std::abs(r - (1 - eps)) < margin || std::abs(r - (1 + eps)) < margin) return true;
  return false;
}

inline bool clip_active(const LossCase& c) {
  const auto ratios = restrain::importance_ratios(c.group, c.ctx());
  const double eps = c.cfg.clip_epsilon;
  for (double r : ratios)
    if (r < 1 - eps || r > 1 + eps) return true;
  return false;
}

// Max-norm error of the analytic gradient against central differences,
// relative to the finite-difference gradient (floored at 1e-4).
inline double gradient_error(const LossCase& c, double h = 1e-5) {
  const auto analytic = restrain::loss_gradient(c.group, c.prompt_weight, c.cfg, c.ctx()).d_logits;
  double err = 0.0, scale = 1e-4;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    auto plus = c.current, minus = c.current;
    plus.logits[c.task.prompt_id][k] += h;
    minus.logits[c.task.prompt_id][k] -= h;
    const double fp = restrain::restrain_loss(c.group, c.prompt_weight, c.cfg, c.ctx(plus)).total;
    const double fm = restrain::restrain_loss(c.group, c.prompt_weight, c.cfg, c.ctx(minus)).total;
    const double fd = (fp - fm) / (2 * h);
    err = std::max(err, std::abs(fd - analytic[k]));
    scale = std::max(scale, std::abs(fd));
  }
  return err / scale;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& sub = "") const { return (sub.empty() ? path_ : path_ / sub).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace support
