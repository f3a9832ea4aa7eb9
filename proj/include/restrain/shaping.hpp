#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "restrain/consensus.hpp"
#include "restrain/envsim.hpp"

namespace restrain {

// Gaussian shaping g(f) = exp(-(f - center)^2 / (2 width^2)).
struct ShapingConfig {
  double center = 1.0;
  double width = 0.5;

  void validate() const;
  bool operator==(const ShapingConfig&) const = default;
};

double gaussian_shape(double frequency, const ShapingConfig& cfg);

// Normalized weights parallel to the tally's answers.
struct PseudoLabelWeights {
  std::vector<AnswerId> answers;
  std::vector<double> weights;
};

// w_j = g(f_j) / sum_l g(f_l), evaluated in log space so that narrow widths
// still normalize.
PseudoLabelWeights label_weights(const AnswerTally& tally, const ShapingConfig& cfg);

// u_x = g(majority_count / n). Not normalized across prompts.
double prompt_weight(const AnswerTally& reference_tally, const ShapingConfig& cfg);

struct PromptTableMetadata {
  std::uint64_t seed = 0;
  int n_ref = 0;
  ShapingConfig shaping;
  std::string snapshot_id;
  std::uint64_t snapshot_checksum = 0;

  bool operator==(const PromptTableMetadata&) const = default;
};

// Frozen prompt-level weights. Immutable once constructed.
class PromptWeightTable {
 public:
  PromptWeightTable(std::map<PromptId, double> entries, PromptTableMetadata meta);

  // Throws ConfigError for an unknown prompt.
  double weight(const PromptId& id) const;
  bool contains(const PromptId& id) const { return entries_.contains(id); }

  const std::map<PromptId, double>& entries() const { return entries_; }
  const PromptTableMetadata& metadata() const { return meta_; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t checksum() const;

 private:
  std::map<PromptId, double> entries_;
  PromptTableMetadata meta_;
};

// Samples n_ref rollouts per prompt from the reference snapshot and applies
// prompt_weight to each tally.
PromptWeightTable build_prompt_table(std::span<const SyntheticTask> prompts,
                                     const PolicySnapshot& reference, int n_ref,
                                     const ShapingConfig& cfg, std::uint64_t seed);

}  // namespace restrain
