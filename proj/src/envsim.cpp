#include "restrain/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "restrain/errors.hpp"
#include "restrain/random.hpp"

namespace restrain {
namespace {

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v / temperature - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lse;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Row that emits `answer` with probability q and spreads the rest evenly.
std::vector<double> consistent_row(int vocab, AnswerId answer, double q) {
  std::vector<double> row(vocab, (1.0 - q) / (vocab - 1));
  row[answer] = q;
  return row;
}

// Broad row with random positive weights; the gold answer gets at most an
// average share so scattered reasoning rarely lands on it.
std::vector<double> scatter_row(int vocab, AnswerId gold, Rng& rng) {
  std::vector<double> row(vocab);
  for (auto& w : row) w = 0.5 + rng.uniform();
  row[gold] = 0.5;
  const double s = std::accumulate(row.begin(), row.end(), 0.0);
  for (auto& w : row) w /= s;
  return row;
}

AnswerId other_answer(int vocab, AnswerId avoid, Rng& rng) {
  auto a = static_cast<AnswerId>(rng.below(vocab - 1));
  return a >= avoid ? a + 1 : a;
}

std::vector<double> logits_from_masses(std::span<const double> masses) {
  std::vector<double> out;
  out.reserve(masses.size());
  for (double p : masses) out.push_back(std::log(p));
  return out;
}

std::string make_id(Difficulty d, int index) {
  static const char* prefix[] = {"easy", "spur", "hard"};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04d", prefix[static_cast<int>(d)], index);
  return buf;
}

SyntheticTask make_easy(const SuiteSpec& spec, int index, Rng& rng) {
  SyntheticTask t;
  t.prompt_id = make_id(Difficulty::Easy, index);
  t.tag = Difficulty::Easy;
  t.vocab_size = spec.vocab_size;
  t.mode_count = spec.mode_count;
  t.gold = static_cast<AnswerId>(rng.below(spec.vocab_size));

  const bool split = spec.mode_count >= 3 && rng.uniform() < 0.5;
  const int gold_modes = split ? 2 : 1;
  const double gold_mass = 0.55 + 0.2 * rng.uniform();
  std::vector<double> masses(spec.mode_count, 0.0);
  for (int m = 0; m < spec.mode_count; ++m) {
    if (m < gold_modes)
      t.emission.push_back(consistent_row(spec.vocab_size, t.gold, 0.9 + 0.07 * rng.uniform()));
    else
      t.emission.push_back(scatter_row(spec.vocab_size, t.gold, rng));
  }
  if (spec.mode_count == 1) {
    masses[0] = 1.0;
  } else if (split) {
    // Two gold modes share the mass; the leading scatter mode out-weighs each
    // of them, so greedy decoding starts out wrong while the vote is right.
    masses[0] = masses[1] = gold_mass / 2;
    const double rest = 1.0 - gold_mass;
    const double lead = std::min(rest, gold_mass / 2 + 0.02 + 0.03 * rng.uniform());
    masses[2] = lead;
    for (int m = 3; m < spec.mode_count; ++m) masses[m] = (rest - lead) / (spec.mode_count - 3);
    if (spec.mode_count == 3) masses[2] = rest;
  } else {
    masses[0] = gold_mass;
    for (int m = 1; m < spec.mode_count; ++m) masses[m] = (1.0 - gold_mass) / (spec.mode_count - 1);
  }
  for (auto& p : masses) p = std::max(p, 1e-3);
  t.initial_logits = logits_from_masses(masses);
  return t;
}

SyntheticTask make_spurious(const SuiteSpec& spec, int index, Rng& rng) {
  SyntheticTask t;
  t.prompt_id = make_id(Difficulty::SpuriousMajority, index);
  t.tag = Difficulty::SpuriousMajority;
  t.vocab_size = spec.vocab_size;
  t.mode_count = spec.mode_count;
  t.gold = static_cast<AnswerId>(rng.below(spec.vocab_size));
  const AnswerId wrong = other_answer(spec.vocab_size, t.gold, rng);

  // Mode 0 reasons correctly and is the single most likely mode; the wrong
  // answer is reached by several weaker modes whose combined mass wins the vote.
  const int wrong_modes = spec.mode_count >= 4 ? spec.mode_count - 2 : spec.mode_count - 1;
  const double gold_mass = 0.30 + 0.06 * rng.uniform();
  const double wrong_mass = std::min({gold_mass + 0.10 + 0.40 * rng.uniform(),
                                      wrong_modes * (gold_mass - 0.01), 0.98 - gold_mass});
  std::vector<double> masses(spec.mode_count, 0.0);
  masses[0] = gold_mass;
  t.emission.push_back(consistent_row(spec.vocab_size, t.gold, 0.95));
  for (int m = 1; m <= wrong_modes; ++m) {
    masses[m] = wrong_mass / wrong_modes;
    t.emission.push_back(consistent_row(spec.vocab_size, wrong, 0.95));
  }
  for (int m = wrong_modes + 1; m < spec.mode_count; ++m) {
    masses[m] = 1.0 - gold_mass - wrong_mass;
    t.emission.push_back(scatter_row(spec.vocab_size, t.gold, rng));
  }
  if (wrong_modes + 1 == spec.mode_count) {
    const double s = gold_mass + wrong_mass;
    for (auto& p : masses) p /= s;
  }
  t.initial_logits = logits_from_masses(masses);
  return t;
}

SyntheticTask make_hard(const SuiteSpec& spec, int index, Rng& rng) {
  SyntheticTask t;
  t.prompt_id = make_id(Difficulty::Hard, index);
  t.tag = Difficulty::Hard;
  t.vocab_size = spec.hard_vocab_size;
  t.mode_count = spec.mode_count;
  t.gold = static_cast<AnswerId>(rng.below(spec.hard_vocab_size));
  std::vector<double> masses(spec.mode_count);

  if (index % 2 == 0) {
    // A self-consistent correct mode, marginally below each of several
    // scattered modes: greedy decoding starts wrong.
    const double gold_mass = 0.165 + 0.0015 * rng.uniform();
    masses[0] = gold_mass;
    t.emission.push_back(consistent_row(spec.hard_vocab_size, t.gold, 0.95));
    for (int m = 1; m < spec.mode_count; ++m) {
      masses[m] = (1.0 - gold_mass) / (spec.mode_count - 1);
      t.emission.push_back(scatter_row(spec.hard_vocab_size, t.gold, rng));
    }
  } else {
    // The leading mode reaches the gold answer only part of the time; a
    // runner-up mode repeats one wrong answer more reliably.
    const AnswerId wrong = other_answer(spec.hard_vocab_size, t.gold, rng);
    const double lead = 0.28 + 0.04 * rng.uniform();
    const double runner = lead * std::exp(-(0.05 + 0.15 * rng.uniform()));
    masses[0] = lead;
    masses[1] = runner;
    t.emission.push_back(consistent_row(spec.hard_vocab_size, t.gold, 0.33));
    t.emission.push_back(consistent_row(spec.hard_vocab_size, wrong, 0.6));
    for (int m = 2; m < spec.mode_count; ++m) {
      masses[m] = (1.0 - lead - runner) / (spec.mode_count - 2);
      t.emission.push_back(scatter_row(spec.hard_vocab_size, t.gold, rng));
    }
  }
  t.initial_logits = logits_from_masses(masses);
  return t;
}

}  // namespace

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "EASY";
    case Difficulty::SpuriousMajority: return "SPURIOUS_MAJORITY";
    case Difficulty::Hard: return "HARD";
  }
  return "?";
}

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "EASY") return Difficulty::Easy;
  if (s == "SPURIOUS_MAJORITY") return Difficulty::SpuriousMajority;
  if (s == "HARD") return Difficulty::Hard;
  throw InvalidInput("unknown difficulty tag '" + s + "'");
}

void validate(const SyntheticTask& task) {
  if (task.vocab_size < 2) throw InvalidInput(task.prompt_id + ": vocab_size must be >= 2");
  if (task.mode_count < 1) throw InvalidInput(task.prompt_id + ": mode_count must be >= 1");
  if (task.gold < 0 || task.gold >= task.vocab_size) throw InvalidInput(task.prompt_id + ": gold out of range");
  if (static_cast<int>(task.emission.size()) != task.mode_count)
    throw InvalidInput(task.prompt_id + ": emission row count != mode_count");
  for (const auto& row : task.emission) {
    if (static_cast<int>(row.size()) != task.vocab_size)
      throw InvalidInput(task.prompt_id + ": emission row width != vocab_size");
    double s = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw InvalidInput(task.prompt_id + ": negative emission entry");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw InvalidInput(task.prompt_id + ": emission row does not sum to 1");
  }
  if (static_cast<int>(task.initial_logits.size()) != task.mode_count)
    throw InvalidInput(task.prompt_id + ": initial_logits size != mode_count");
  for (double v : task.initial_logits)
    if (!std::isfinite(v)) throw InvalidInput(task.prompt_id + ": non-finite initial logit");
}

const std::vector<double>& PolicyParams::mode_logits(const PromptId& id) const {
  auto it = logits.find(id);
  if (it == logits.end()) throw InvalidInput("policy has no logits for prompt '" + id + "'");
  return it->second;
}

std::vector<double> PolicyParams::mode_log_probs(const PromptId& id) const {
  return log_softmax(mode_logits(id), temperature);
}

std::vector<double> PolicyParams::mode_probs(const PromptId& id) const {
  auto lp = mode_log_probs(id);
  for (auto& v : lp) v = std::exp(v);
  return lp;
}

std::uint64_t checksum(const PolicyParams& params) {
  std::uint64_t h = stable_hash("policy");
  auto mix_double = [&h](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix_seed(h, bits);
  };
  mix_double(params.temperature);
  for (const auto& [id, logits] : params.logits) {
    h = mix_seed(h, stable_hash(id));
    for (double v : logits) mix_double(v);
  }
  return h;
}

PolicySnapshot::PolicySnapshot(std::string id, PolicyParams params)
    : id_(std::move(id)), params_(std::move(params)) {}

std::uint64_t PolicySnapshot::checksum() const { return restrain::checksum(params_); }

PolicyParams initial_policy(std::span<const SyntheticTask> suite, double temperature) {
  if (!(temperature > 0.0)) throw InvalidInput("temperature must be positive");
  PolicyParams p;
  p.temperature = temperature;
  for (const auto& t : suite) p.logits[t.prompt_id] = t.initial_logits;
  return p;
}

std::vector<SyntheticTask> generate_suite(const SuiteSpec& spec, std::uint64_t seed) {
  if (spec.easy < 0 || spec.spurious < 0 || spec.hard < 0)
    throw InvalidInput("suite spec counts must be non-negative");
  if (spec.mode_count < 1) throw InvalidInput("suite spec mode_count must be >= 1");
  if (spec.vocab_size < 2) throw InvalidInput("suite spec vocab_size must be >= 2");
  if (spec.spurious > 0 && (spec.mode_count < 3 || spec.vocab_size < 2))
    throw InvalidInput("SPURIOUS_MAJORITY tasks need mode_count >= 3");
  if (spec.hard > 0 && (spec.mode_count < 4 || spec.hard_vocab_size < 16))
    throw InvalidInput("HARD tasks need mode_count >= 4 and hard_vocab_size >= 16");

  std::vector<SyntheticTask> suite;
  suite.reserve(spec.easy + spec.spurious + spec.hard);
  for (int i = 0; i < spec.easy; ++i) {
    Rng rng(mix_seed(seed, stable_hash(make_id(Difficulty::Easy, i))));
    suite.push_back(make_easy(spec, i, rng));
  }
  for (int i = 0; i < spec.spurious; ++i) {
    Rng rng(mix_seed(seed, stable_hash(make_id(Difficulty::SpuriousMajority, i))));
    suite.push_back(make_spurious(spec, i, rng));
  }
  for (int i = 0; i < spec.hard; ++i) {
    Rng rng(mix_seed(seed, stable_hash(make_id(Difficulty::Hard, i))));
    suite.push_back(make_hard(spec, i, rng));
  }
  for (const auto& t : suite) validate(t);
  return suite;
}

double logprob(const PolicyParams& policy, const SyntheticTask& task, std::span<const int> trajectory) {
  if (trajectory.size() != 2) throw InvalidInput("trajectory must be {mode, answer}");
  const int mode = trajectory[0];
  const int answer = trajectory[1];
  if (mode < 0 || mode >= task.mode_count || answer < 0 || answer >= task.vocab_size)
    throw InvalidInput("trajectory token out of range for task " + task.prompt_id);
  const double emit = task.emission[mode][answer];
  if (emit <= 0.0) return -std::numeric_limits<double>::infinity();
  return policy.mode_log_probs(task.prompt_id)[mode] + std::log(emit);
}

RolloutGroup sample_rollouts(const SyntheticTask& task, const PolicyParams& policy,
                             const PolicySnapshot& behavior, const PolicySnapshot& reference,
                             int n, std::uint64_t seed) {
  if (n < 1) throw InvalidInput("sample_rollouts: n must be >= 1");
  Rng rng(mix_seed(seed, stable_hash(task.prompt_id)));
  const auto behavior_probs = behavior.params().mode_probs(task.prompt_id);
  const auto lp_current = policy.mode_log_probs(task.prompt_id);
  const auto lp_behavior = behavior.params().mode_log_probs(task.prompt_id);
  const auto lp_reference = reference.params().mode_log_probs(task.prompt_id);

  RolloutGroup group;
  group.prompt_id = task.prompt_id;
  group.rollouts.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int mode = rng.categorical(behavior_probs);
    const int answer = rng.categorical(task.emission[mode]);
    const double log_emit = std::log(task.emission[mode][answer]);
    Rollout r;
    r.answer = answer;
    r.trajectory = {mode, answer};
    r.logprob_current = lp_current[mode] + log_emit;
    r.logprob_behavior = lp_behavior[mode] + log_emit;
    r.logprob_reference = lp_reference[mode] + log_emit;
    group.rollouts.push_back(std::move(r));
  }
  return group;
}

std::vector<double> answer_distribution(const PolicyParams& policy, const SyntheticTask& task) {
  const auto p = policy.mode_probs(task.prompt_id);
  std::vector<double> out(task.vocab_size, 0.0);
  for (int m = 0; m < task.mode_count; ++m)
    for (int a = 0; a < task.vocab_size; ++a) out[a] += p[m] * task.emission[m][a];
  return out;
}

AnswerId greedy_answer(const PolicyParams& policy, const SyntheticTask& task) {
  const auto& logits = policy.mode_logits(task.prompt_id);
  const auto mode = argmax(logits);
  return static_cast<AnswerId>(argmax(task.emission[mode]));
}

double greedy_accuracy(const PolicyParams& policy, std::span<const SyntheticTask> suite) {
  if (suite.empty()) return 0.0;
  int correct = 0;
  for (const auto& t : suite) correct += greedy_answer(policy, t) == t.gold ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(suite.size());
}

double mode_entropy(const PolicyParams& policy, const PromptId& id) {
  const auto lp = policy.mode_log_probs(id);
  double h = 0.0;
  for (double v : lp)
    if (std::isfinite(v)) h -= std::exp(v) * v;
  return h;
}

}  // namespace restrain
