#include "restrain/shaping.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "restrain/errors.hpp"
#include "restrain/random.hpp"

namespace restrain {
namespace {

double log_shape(double f, const ShapingConfig& cfg) {
  const double d = f - cfg.center;
  return -(d * d) / (2.0 * cfg.width * cfg.width);
}

}  // namespace

void ShapingConfig::validate() const {
  if (!(center >= 0.0 && center <= 1.0)) throw ConfigError("shaping center must lie in [0, 1]");
  if (!(width > 0.0) || !std::isfinite(width)) throw ConfigError("shaping width must be positive and finite");
}

double gaussian_shape(double frequency, const ShapingConfig& cfg) {
  if (!(frequency >= 0.0 && frequency <= 1.0)) throw InvalidInput("shaping: frequency outside [0, 1]");
  cfg.validate();
  return std::exp(log_shape(frequency, cfg));
}

PseudoLabelWeights label_weights(const AnswerTally& tally, const ShapingConfig& cfg) {
  if (tally.answers.empty() || tally.freqs.size() != tally.answers.size())
    throw InvalidInput("label_weights: invalid tally");
  cfg.validate();
  std::vector<double> logs;
  logs.reserve(tally.freqs.size());
  for (double f : tally.freqs) {
    if (!(f >= 0.0 && f <= 1.0)) throw InvalidInput("label_weights: frequency outside [0, 1]");
    logs.push_back(log_shape(f, cfg));
  }
  const double mx = *std::max_element(logs.begin(), logs.end());
  PseudoLabelWeights out;
  out.answers = tally.answers;
  out.weights.reserve(logs.size());
  double sum = 0.0;
  for (double l : logs) {
    out.weights.push_back(std::exp(l - mx));
    sum += out.weights.back();
  }
  for (auto& w : out.weights) w /= sum;
  return out;
}

double prompt_weight(const AnswerTally& reference_tally, const ShapingConfig& cfg) {
  if (reference_tally.n < 1) throw InvalidInput("prompt_weight: invalid tally");
  return gaussian_shape(static_cast<double>(reference_tally.majority_count) / reference_tally.n, cfg);
}

PromptWeightTable::PromptWeightTable(std::map<PromptId, double> entries, PromptTableMetadata meta)
    : entries_(std::move(entries)), meta_(std::move(meta)) {
  for (const auto& [id, u] : entries_)
    if (!(u > 0.0) || !std::isfinite(u)) throw InvalidInput("prompt weight for '" + id + "' must be positive");
}

double PromptWeightTable::weight(const PromptId& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ConfigError("no prompt weight for '" + id + "'");
  return it->second;
}

std::uint64_t PromptWeightTable::checksum() const {
  std::uint64_t h = stable_hash("prompt-weights");
  for (const auto& [id, u] : entries_) {
    std::uint64_t bits;
    std::memcpy(&bits, &u, sizeof bits);
    h = mix_seed(mix_seed(h, stable_hash(id)), bits);
  }
  return h;
}

PromptWeightTable build_prompt_table(std::span<const SyntheticTask> prompts,
                                     const PolicySnapshot& reference, int n_ref,
                                     const ShapingConfig& cfg, std::uint64_t seed) {
  if (prompts.empty()) throw InvalidInput("build_prompt_table: empty prompt set");
  if (n_ref < 1) throw InvalidInput("build_prompt_table: n_ref must be >= 1");
  cfg.validate();
  std::map<PromptId, double> entries;
  for (const auto& task : prompts) {
    const auto group = sample_rollouts(task, reference.params(), reference, reference, n_ref, seed);
    entries[task.prompt_id] = prompt_weight(tally(group), cfg);
  }
  PromptTableMetadata meta{seed, n_ref, cfg, reference.id(), reference.checksum()};
  return PromptWeightTable(std::move(entries), std::move(meta));
}

}  // namespace restrain
