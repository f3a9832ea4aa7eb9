#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "restrain/envsim.hpp"
#include "restrain/objective.hpp"
#include "restrain/shaping.hpp"

namespace restrain {

enum class Method { Restrain, GoldGrpo, Ttrl, SrtOffline, SrtEasy, RestrainOnlinePw };

std::string to_string(Method m);
// Throws ConfigError for an unknown name.
Method method_from_string(const std::string& s);
std::span<const Method> all_methods();

struct TrainConfig {
  Method method = Method::Restrain;
  int steps = 500;
  int batch_size = 8;
  int n_rollouts = 16;
  double learning_rate = 2.0;
  ObjectiveConfig objective;
  ShapingConfig prompt_shaping;  // for u_x, independent of objective.shaping
  std::uint64_t seed = 0;
  int eval_every = 10;
  int n_ref = 16;               // reference rollouts per prompt for offline tables
  double easy_threshold = 0.7;  // SRT easy-prompt vote ratio
  double collapse_threshold = 0.15;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Metrics at one evaluation point. Loss-side statistics average the batches
// since the previous record (zero for the step-0 record).
struct StepRecord {
  int step = 0;
  double mean_loss = 0.0;
  double mean_kl = 0.0;
  double accuracy = 0.0;
  double mean_majority_ratio = 0.0;
  double mean_entropy = 0.0;
  double penalized_fraction = 0.0;

  bool operator==(const StepRecord&) const = default;
};

struct TrainResult {
  std::vector<StepRecord> records;
  PolicyParams initial_policy;
  PolicyParams final_policy;
  // Checksum of the offline prompt-weight table observed at every step
  // (empty for methods that do not use it).
  std::vector<std::uint64_t> table_checksums;
};

// Reference-policy prompt weights, computed once before training.
PromptWeightTable precompute_prompt_weights(std::span<const SyntheticTask> suite,
                                            const PolicySnapshot& reference,
                                            const TrainConfig& cfg);

// Offline majority labels for SRT from the reference policy.
LabelTable precompute_offline_labels(std::span<const SyntheticTask> suite,
                                     const PolicySnapshot& reference, const TrainConfig& cfg);

// Runs the configured method. `table` is required for Method::Restrain and is
// built internally when absent. Throws TrainingAborted on non-finite values.
TrainResult train(std::span<const SyntheticTask> suite, const TrainConfig& cfg,
                  const PromptWeightTable* table = nullptr);

struct CollapseReport {
  double peak_accuracy = 0.0;
  int peak_step = 0;
  double final_accuracy = 0.0;
  bool collapsed = false;
  std::optional<int> collapse_step;
};

// collapsed = (peak - final >= threshold); collapse_step is the first record
// after the peak with accuracy <= peak - threshold.
CollapseReport detect_collapse(std::span<const StepRecord> records, double threshold = 0.15);

}  // namespace restrain
