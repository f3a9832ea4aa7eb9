#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "restrain/envsim.hpp"
#include "restrain/shaping.hpp"
#include "restrain/trainer.hpp"

namespace restrain {

inline constexpr const char* kSuiteFormat = "restrain-suite/1";
inline constexpr const char* kMetricsFormat = "restrain-metrics/1";
inline constexpr const char* kPolicyFormat = "restrain-policy/1";
inline constexpr const char* kWeightsFormat = "restrain-weights/1";
inline constexpr const char* kCollapseFormat = "restrain-collapse/1";
inline constexpr const char* kConfigFormat = "restrain-config/1";

// One experiment: which suite to build, how to train, where to write.
struct RunConfig {
  SuiteSpec suite{80, 80, 40};
  std::uint64_t suite_seed = 2025;
  TrainConfig train;
  std::string output_dir = "runs/default";

  bool operator==(const RunConfig&) const = default;
};

// JSON text. Parsing is strict: unknown keys and type mismatches throw
// ConfigError; absent keys keep their defaults.
std::string serialize_config(const RunConfig& cfg);
RunConfig parse_config(const std::string& text);

// Line-delimited: a header record, then one task per line.
void write_suite(std::ostream& os, std::span<const SyntheticTask> suite);
std::vector<SyntheticTask> read_suite(std::istream& is);

// prompt_id,weight CSV plus a JSON sidecar with the table metadata.
void write_weight_table(std::ostream& csv, std::ostream& meta, const PromptWeightTable& table);
PromptWeightTable read_weight_table(std::istream& csv, std::istream& meta);

struct MetricsLog {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<StepRecord> records;
};

void write_metrics(std::ostream& os, const MetricsLog& log);
MetricsLog read_metrics(std::istream& is);

void write_policy(std::ostream& os, const PolicyParams& policy);
PolicyParams read_policy(std::istream& is);

void write_collapse(std::ostream& os, const CollapseReport& report, double threshold);

// Whole-file helpers. Reads throw InvalidInput when the file cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace restrain
