#include "restrain/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "restrain/errors.hpp"
#include "restrain/format.hpp"
#include "restrain/random.hpp"

namespace restrain {
namespace {

std::string fmt(double v) { return format_double(v); }

std::string label_of(const fs::path& dir) {
  auto p = dir.lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::vector<std::string> labels_for(const std::vector<fs::path>& dirs) {
  std::vector<std::string> labels;
  for (const auto& d : dirs) labels.push_back(label_of(d));
  auto sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    labels.clear();
    for (const auto& d : dirs) labels.push_back(d.lexically_normal().string());
  }
  return labels;
}

RunConfig load_run_config(const fs::path& dir) {
  return parse_config(read_file((dir / run_files::kConfig).string()));
}

MetricsLog load_metrics(const fs::path& dir) {
  std::ifstream in(dir / run_files::kMetrics);
  if (!in) throw InvalidInput("missing metrics file in '" + dir.string() + "'");
  return read_metrics(in);
}

void write_table_files(const fs::path& dir, const PromptWeightTable& table) {
  std::ostringstream csv, meta;
  write_weight_table(csv, meta, table);
  write_file((dir / run_files::kWeights).string(), csv.str());
  write_file((dir / run_files::kWeightsMeta).string(), meta.str());
}

std::string policy_text(const PolicyParams& p) {
  std::ostringstream os;
  write_policy(os, p);
  return os.str();
}

std::string collapse_csv_header() { return "run,method,peak_accuracy,peak_step,final_accuracy,collapsed,collapse_step\n"; }

std::string collapse_csv_row(const std::string& run, const std::string& method, const CollapseReport& c) {
  std::ostringstream os;
  os << run << ',' << method << ',' << fmt(c.peak_accuracy) << ',' << c.peak_step << ','
     << fmt(c.final_accuracy) << ',' << (c.collapsed ? 1 : 0) << ','
     << (c.collapse_step ? std::to_string(*c.collapse_step) : std::string()) << '\n';
  return os.str();
}

// Default grids per ablation parameter.
const std::map<std::string, std::vector<std::string>>& sweeps() {
  static const std::map<std::string, std::vector<std::string>> s{
      {"sigma", {"0", "0.1", "0.25", "0.5", "1", "2", "5", "inf"}},
      {"delta", {"0", "0.1", "1", "2", "5"}},
      {"kappa", {"2", "3", "5", "8"}},
  };
  return s;
}

// Shaping width actually used for a requested sigma: 0 is the one-hot limit
// and inf the uniform limit, neither of which the Gaussian can take directly.
double effective_sigma(double requested) {
  if (requested == 0.0) return 0.01;
  if (std::isinf(requested)) return 1e6;
  return requested;
}

double parse_number(const std::string& s) {
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

void apply_sweep(RunConfig& cfg, const std::string& param, double value) {
  auto& o = cfg.train.objective;
  if (param == "sigma") {
    if (value < 0) throw ConfigError("sigma must be >= 0");
    o.shaping.width = effective_sigma(value);
  } else if (param == "delta") {
    o.penalty.negative_offset = value;
  } else if (param == "kappa") {
    if (value != std::floor(value)) throw ConfigError("kappa must be an integer");
    o.penalty.majority_threshold = static_cast<int>(value);
  } else {
    throw ConfigError("unknown ablation parameter '" + param + "' (sigma, delta, kappa)");
  }
  cfg.train.validate();
}

}  // namespace

fs::path resolve_output(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
  }
  return p;
}

RunSummary run_experiment(const RunConfig& cfg, const fs::path& dir) {
  cfg.train.validate();
  fs::create_directories(dir);
  const auto suite = generate_suite(cfg.suite, cfg.suite_seed);

  write_file((dir / run_files::kConfig).string(), serialize_config(cfg));
  {
    std::ostringstream os;
    write_suite(os, suite);
    write_file((dir / run_files::kSuite).string(), os.str());
  }

  std::optional<PromptWeightTable> table;
  if (cfg.train.method == Method::Restrain) {
    const PolicySnapshot reference("reference", initial_policy(suite));
    table.emplace(precompute_prompt_weights(suite, reference, cfg.train));
    write_table_files(dir, *table);
  }

  const auto result = train(suite, cfg.train, table ? &*table : nullptr);
  MetricsLog log{to_string(cfg.train.method), cfg.train.seed, result.records};
  {
    std::ostringstream os;
    write_metrics(os, log);
    write_file((dir / run_files::kMetrics).string(), os.str());
  }
  write_file((dir / run_files::kInitialPolicy).string(), policy_text(result.initial_policy));
  write_file((dir / run_files::kFinalPolicy).string(), policy_text(result.final_policy));

  RunSummary summary{dir, cfg.train.method, detect_collapse(result.records, cfg.train.collapse_threshold)};
  std::ostringstream os;
  write_collapse(os, summary.collapse, cfg.train.collapse_threshold);
  write_file((dir / run_files::kCollapse).string(), os.str());
  return summary;
}

std::vector<RunSummary> run_experiments(const std::vector<std::pair<RunConfig, fs::path>>& runs, int jobs) {
  std::vector<RunSummary> out(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        out[i] = run_experiment(runs[i].first, runs[i].second);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(runs.size(), 1)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::string to_string(PlotKind k) {
  switch (k) {
    case PlotKind::AccuracyCurves: return "ACCURACY_CURVES";
    case PlotKind::Reliability: return "RELIABILITY";
    case PlotKind::WeightHistogram: return "WEIGHT_HISTOGRAM";
  }
  return "?";
}

PlotKind plot_kind_from_string(const std::string& s) {
  for (auto k : {PlotKind::AccuracyCurves, PlotKind::Reliability, PlotKind::WeightHistogram})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown plot kind '" + s + "'");
}

ReliabilityReport run_reliability(const fs::path& run_dir, bool use_final_policy, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("rollouts must be >= 1");
  std::vector<SyntheticTask> suite;
  {
    std::ifstream in(run_dir / run_files::kSuite);
    if (!in) throw InvalidInput("missing suite file in '" + run_dir.string() + "'");
    suite = read_suite(in);
  }
  PolicyParams policy;
  {
    const auto name = use_final_policy ? run_files::kFinalPolicy : run_files::kInitialPolicy;
    std::ifstream in(run_dir / name);
    if (!in) throw InvalidInput("missing policy file in '" + run_dir.string() + "'");
    policy = read_policy(in);
  }
  const PolicySnapshot snap("analysis", policy);
  const auto s = mix_seed(seed, stable_hash("reliability"));
  std::vector<RolloutGroup> groups;
  std::map<PromptId, AnswerId> gold;
  for (const auto& t : suite) {
    if (!policy.logits.contains(t.prompt_id)) throw InvalidInput("policy lacks prompt '" + t.prompt_id + "'");
    groups.push_back(sample_rollouts(t, policy, snap, snap, n, s));
    gold[t.prompt_id] = t.gold;
  }
  return reliability_stats(groups, gold);
}

std::string emit_plot_data(const std::vector<fs::path>& run_dirs, PlotKind kind) {
  if (run_dirs.empty()) throw InvalidInput("no run directories given");
  const auto labels = labels_for(run_dirs);
  std::ostringstream os;
  os << "series,x,y\n";

  switch (kind) {
    case PlotKind::AccuracyCurves: {
      std::vector<int> grid;
      for (std::size_t r = 0; r < run_dirs.size(); ++r) {
        const auto log = load_metrics(run_dirs[r]);
        std::vector<int> steps;
        for (const auto& rec : log.records) steps.push_back(rec.step);
        if (r == 0) grid = steps;
        else if (steps != grid) throw InvalidInput("runs have different evaluation steps: '" + labels[r] + "'");
        for (const auto& rec : log.records) os << labels[r] << ',' << rec.step << ',' << fmt(rec.accuracy) << '\n';
      }
      break;
    }
    case PlotKind::Reliability: {
      std::string first_suite;
      for (std::size_t r = 0; r < run_dirs.size(); ++r) {
        const auto suite_text = read_file((run_dirs[r] / run_files::kSuite).string());
        if (r == 0) first_suite = suite_text;
        else if (suite_text != first_suite) throw InvalidInput("runs use different suites: '" + labels[r] + "'");
        const auto cfg = load_run_config(run_dirs[r]);
        const auto rep = run_reliability(run_dirs[r], true, cfg.train.n_rollouts, cfg.train.seed);
        for (const auto& b : rep.buckets)
          os << labels[r] << "/population," << b.majority_size << ',' << b.population << '\n';
        for (const auto& b : rep.buckets)
          if (b.majority_correct_ratio)
            os << labels[r] << "/majority_correct_ratio," << b.majority_size << ',' << fmt(*b.majority_correct_ratio) << '\n';
        for (const auto& b : rep.buckets)
          if (b.at_least_one_correct_ratio)
            os << labels[r] << "/at_least_one_correct_ratio," << b.majority_size << ','
               << fmt(*b.at_least_one_correct_ratio) << '\n';
      }
      break;
    }
    case PlotKind::WeightHistogram: {
      constexpr int kBins = 20;
      for (std::size_t r = 0; r < run_dirs.size(); ++r) {
        std::ifstream csv(run_dirs[r] / run_files::kWeights), meta(run_dirs[r] / run_files::kWeightsMeta);
        if (!csv || !meta) throw InvalidInput("missing prompt weight table in '" + run_dirs[r].string() + "'");
        const auto table = read_weight_table(csv, meta);
        // Bin k covers ((k-1)/20, k/20]; x is the upper edge.
        std::vector<int> counts(kBins + 1, 0);
        for (const auto& [id, w] : table.entries())
          counts[std::clamp(static_cast<int>(std::ceil(w * kBins - 1e-9)), 1, kBins)]++;
        for (int k = 1; k <= kBins; ++k)
          if (counts[k] > 0) os << labels[r] << ',' << fmt(static_cast<double>(k) / kBins) << ',' << counts[k] << '\n';
      }
      break;
    }
  }
  return os.str();
}

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"RESTRAIN label-free RL simulator", "restrain"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("-o,--out", out_path, "Output path; relative paths go under $RESTRAIN_OUTPUT_ROOT");
  };

  auto* gen = app.add_subcommand("gen-suite", "Generate a synthetic task suite");
  add_common(gen);

  auto* weights = app.add_subcommand("precompute-weights", "Build the offline prompt-weight table");
  add_common(weights);

  auto* trn = app.add_subcommand("train", "Train one method and write a run directory");
  add_common(trn);
  std::string method_override;
  trn->add_option("--method", method_override, "Override train.method");

  auto* ana = app.add_subcommand("analyze", "Collapse reports, reliability statistics and plot data");
  std::vector<std::string> run_dirs;
  std::string plot_kind;
  bool reliability = false;
  int rollouts = 0;
  std::string policy_choice = "final";
  ana->add_option("-r,--run", run_dirs, "Run directory (repeatable)")->required()->check(CLI::ExistingDirectory);
  ana->add_option("--plot", plot_kind, "ACCURACY_CURVES, RELIABILITY or WEIGHT_HISTOGRAM");
  ana->add_flag("--reliability", reliability, "Reliability CSV for a single run");
  ana->add_option("--rollouts", rollouts, "Rollouts per prompt for reliability (default: run's n_rollouts)");
  ana->add_option("--policy", policy_choice, "Policy to analyze")->check(CLI::IsMember({"initial", "final"}));
  ana->add_option("-o,--out", out_path, "Write CSV here instead of stdout");

  auto* abl = app.add_subcommand("ablate", "Sweep sigma, delta or kappa");
  add_common(abl);
  std::string param;
  std::vector<std::string> values;
  int seeds = 1;
  int jobs = 1;
  abl->add_option("parameter", param, "sigma, delta or kappa")->required();
  abl->add_option("values", values, "Values to sweep (default: the standard grid)");
  abl->add_option("--seeds", seeds, "Seeds per value")->check(CLI::PositiveNumber);
  abl->add_option("-j,--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  auto* cmp = app.add_subcommand("compare", "Run several methods on one suite");
  add_common(cmp);
  std::vector<std::string> methods;
  cmp->add_option("--methods", methods, "Methods to run (default: all)")->delimiter(',');
  cmp->add_option("-j,--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : parse_config(read_file(config_path));
    auto target = [&](const std::string& fallback) { return resolve_output(out_path.empty() ? fallback : out_path); };

    if (gen->parsed()) {
      const fs::path path = target(cfg.output_dir + "/" + run_files::kSuite);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      std::ostringstream os;
      write_suite(os, generate_suite(cfg.suite, cfg.suite_seed));
      write_file(path.string(), os.str());
      out << "wrote " << path.string() << "\n";
    } else if (weights->parsed()) {
      const fs::path dir = target(cfg.output_dir);
      fs::create_directories(dir);
      const auto suite = generate_suite(cfg.suite, cfg.suite_seed);
      const PolicySnapshot reference("reference", initial_policy(suite));
      write_table_files(dir, precompute_prompt_weights(suite, reference, cfg.train));
      out << "wrote " << (dir / run_files::kWeights).string() << "\n";
    } else if (trn->parsed()) {
      if (!method_override.empty()) cfg.train.method = method_from_string(method_override);
      const fs::path dir = target(cfg.output_dir);
      const auto s = run_experiment(cfg, dir);
      out << collapse_csv_header() << collapse_csv_row(label_of(dir), to_string(s.method), s.collapse);
    } else if (ana->parsed()) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      std::string csv;
      if (!plot_kind.empty()) {
        csv = emit_plot_data(dirs, plot_kind_from_string(plot_kind));
      } else if (reliability) {
        if (dirs.size() != 1) throw ConfigError("--reliability takes exactly one run");
        const auto rc = load_run_config(dirs[0]);
        csv = to_csv(run_reliability(dirs[0], policy_choice == "final", rollouts > 0 ? rollouts : rc.train.n_rollouts,
                                     rc.train.seed));
      } else {
        csv = collapse_csv_header();
        const auto labels = labels_for(dirs);
        for (std::size_t i = 0; i < dirs.size(); ++i) {
          const auto rc = load_run_config(dirs[i]);
          const auto log = load_metrics(dirs[i]);
          csv += collapse_csv_row(labels[i], log.method, detect_collapse(log.records, rc.train.collapse_threshold));
        }
      }
      if (out_path.empty()) {
        out << csv;
      } else {
        const fs::path path = resolve_output(out_path);
        const auto parent = fs::weakly_canonical(path.parent_path().empty() ? fs::path(".") : path.parent_path());
        for (const auto& d : dirs)
          if (parent == fs::weakly_canonical(d)) throw ConfigError("analyze does not write into run directories");
        write_file(path.string(), csv);
      }
    } else if (abl->parsed()) {
      const auto it = sweeps().find(param);
      if (it == sweeps().end()) throw ConfigError("unknown ablation parameter '" + param + "' (sigma, delta, kappa)");
      if (values.empty()) values = it->second;
      const fs::path root = target(cfg.output_dir);
      std::vector<std::pair<RunConfig, fs::path>> runs;
      for (const auto& v : values) {
        for (int s = 0; s < seeds; ++s) {
          RunConfig rc = cfg;
          apply_sweep(rc, param, parse_number(v));
          rc.train.seed = cfg.train.seed + static_cast<std::uint64_t>(s);
          const fs::path dir = root / (param + "_" + v) / ("seed_" + std::to_string(rc.train.seed));
          rc.output_dir = dir.string();
          runs.emplace_back(std::move(rc), dir);
        }
      }
      const auto results = run_experiments(runs, jobs);
      std::ostringstream csv;
      csv << "parameter,value,effective_value,seeds,mean_final_accuracy,mean_peak_accuracy,collapsed_runs\n";
      for (std::size_t i = 0; i < values.size(); ++i) {
        double fin = 0.0, peak = 0.0;
        int collapsed = 0;
        for (int s = 0; s < seeds; ++s) {
          const auto& c = results[i * seeds + s].collapse;
          fin += c.final_accuracy / seeds;
          peak += c.peak_accuracy / seeds;
          collapsed += c.collapsed ? 1 : 0;
        }
        const double requested = parse_number(values[i]);
        const double effective = param == "sigma" ? effective_sigma(requested) : requested;
        csv << param << ',' << values[i] << ',' << fmt(effective) << ',' << seeds << ',' << fmt(fin) << ','
            << fmt(peak) << ',' << collapsed << '\n';
      }
      write_file((root / ("ablation_" + param + ".csv")).string(), csv.str());
      out << csv.str();
    } else if (cmp->parsed()) {
      std::vector<Method> list;
      if (methods.empty()) list.assign(all_methods().begin(), all_methods().end());
      for (const auto& m : methods) list.push_back(method_from_string(m));
      const fs::path root = target(cfg.output_dir);
      std::vector<std::pair<RunConfig, fs::path>> runs;
      std::vector<fs::path> dirs;
      for (Method m : list) {
        RunConfig rc = cfg;
        rc.train.method = m;
        const fs::path dir = root / to_string(m);
        rc.output_dir = dir.string();
        runs.emplace_back(std::move(rc), dir);
        dirs.push_back(dir);
      }
      const auto results = run_experiments(runs, jobs);
      write_file((root / "accuracy_curves.csv").string(), emit_plot_data(dirs, PlotKind::AccuracyCurves));
      std::string summary = collapse_csv_header();
      for (const auto& r : results) summary += collapse_csv_row(to_string(r.method), to_string(r.method), r.collapse);
      write_file((root / "summary.csv").string(), summary);
      out << summary;
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace restrain
