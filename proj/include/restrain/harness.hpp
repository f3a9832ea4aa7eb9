#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "restrain/consensus.hpp"
#include "restrain/serialization.hpp"
#include "restrain/trainer.hpp"

namespace restrain {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "RESTRAIN_OUTPUT_ROOT";

// Relative paths are placed under $RESTRAIN_OUTPUT_ROOT when it is set.
fs::path resolve_output(const std::string& dir);

// Files inside a run directory.
namespace run_files {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kSuite = "suite.jsonl";
inline constexpr const char* kWeights = "prompt_weights.csv";
inline constexpr const char* kWeightsMeta = "prompt_weights.meta.json";
inline constexpr const char* kMetrics = "metrics.jsonl";
inline constexpr const char* kInitialPolicy = "initial_policy.json";
inline constexpr const char* kFinalPolicy = "final_policy.json";
inline constexpr const char* kCollapse = "collapse.json";
}  // namespace run_files

struct RunSummary {
  fs::path dir;
  Method method = Method::Restrain;
  CollapseReport collapse;
};

// Builds the suite, writes the offline prompt table (RESTRAIN only) before
// training, trains and writes every run file into `dir`.
RunSummary run_experiment(const RunConfig& cfg, const fs::path& dir);

// Runs independent experiments on up to `jobs` threads. Results keep the
// input order.
std::vector<RunSummary> run_experiments(const std::vector<std::pair<RunConfig, fs::path>>& runs, int jobs);

enum class PlotKind { AccuracyCurves, Reliability, WeightHistogram };

std::string to_string(PlotKind k);
PlotKind plot_kind_from_string(const std::string& s);

// Majority-vote reliability of a run's saved policy: n rollouts per prompt of
// its suite. Read-only.
ReliabilityReport run_reliability(const fs::path& run_dir, bool use_final_policy, int n, std::uint64_t seed);

// Long-format CSV (series,x,y), ordered by run then x. Throws InvalidInput
// for runs that cannot share a plot (different step grids or suites).
std::string emit_plot_data(const std::vector<fs::path>& run_dirs, PlotKind kind);

// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace restrain
