#include "restrain/serialization.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "restrain/errors.hpp"
#include "restrain/format.hpp"

namespace restrain {
namespace {

using nlohmann::json;

// Reads fields from one JSON object and remembers which keys were consumed,
// so leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }

  ObjectReader child(const std::string& key) {
    static const json empty = json::object();
    const json* v = find(key);
    return ObjectReader(v ? *v : empty, where_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.contains(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
  }

 private:
  [[noreturn]] void fail(const std::string& key, const char* what) const {
    throw ConfigError(where_ + "." + key + ": expected " + what);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json shaping_json(const ShapingConfig& s) { return {{"center", s.center}, {"width", s.width}}; }

void read_shaping(ObjectReader r, ShapingConfig& s) {
  r.read("center", s.center);
  r.read("width", s.width);
  r.finish();
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("malformed ") + what + ": " + e.what());
  }
}

void check_format(const json& header, const char* expected) {
  if (!header.is_object() || !header.contains("format") || header["format"] != expected)
    throw InvalidInput(std::string("expected format tag '") + expected + "'");
}

}  // namespace

std::string serialize_config(const RunConfig& cfg) {
  const auto& t = cfg.train;
  const auto& o = t.objective;
  json j;
  j["format"] = kConfigFormat;
  j["suite"] = {{"easy", cfg.suite.easy},
                {"spurious", cfg.suite.spurious},
                {"hard", cfg.suite.hard},
                {"vocab_size", cfg.suite.vocab_size},
                {"hard_vocab_size", cfg.suite.hard_vocab_size},
                {"mode_count", cfg.suite.mode_count},
                {"seed", cfg.suite_seed}};
  j["train"] = {{"method", to_string(t.method)},
                {"steps", t.steps},
                {"batch_size", t.batch_size},
                {"n_rollouts", t.n_rollouts},
                {"learning_rate", t.learning_rate},
                {"seed", t.seed},
                {"eval_every", t.eval_every},
                {"n_ref", t.n_ref},
                {"easy_threshold", t.easy_threshold},
                {"collapse_threshold", t.collapse_threshold},
                {"prompt_shaping", shaping_json(t.prompt_shaping)}};
  j["objective"] = {{"clip_epsilon", o.clip_epsilon},
                    {"kl_coefficient", o.kl_coefficient},
                    {"scale_advantages_by_std", o.scale_advantages_by_std},
                    {"shaping", shaping_json(o.shaping)},
                    {"penalty",
                     {{"majority_threshold", o.penalty.majority_threshold},
                      {"negative_offset", o.penalty.negative_offset}}}};
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  ObjectReader root(j, "config");
  std::string format = kConfigFormat;
  root.read("format", format);
  if (format != kConfigFormat) throw ConfigError("config: unsupported format '" + format + "'");

  {
    auto s = root.child("suite");
    s.read("easy", cfg.suite.easy);
    s.read("spurious", cfg.suite.spurious);
    s.read("hard", cfg.suite.hard);
    s.read("vocab_size", cfg.suite.vocab_size);
    s.read("hard_vocab_size", cfg.suite.hard_vocab_size);
    s.read("mode_count", cfg.suite.mode_count);
    s.read("seed", cfg.suite_seed);
    s.finish();
  }
  auto& t = cfg.train;
  {
    auto r = root.child("train");
    std::string method = to_string(t.method);
    r.read("method", method);
    t.method = method_from_string(method);
    r.read("steps", t.steps);
    r.read("batch_size", t.batch_size);
    r.read("n_rollouts", t.n_rollouts);
    r.read("learning_rate", t.learning_rate);
    r.read("seed", t.seed);
    r.read("eval_every", t.eval_every);
    r.read("n_ref", t.n_ref);
    r.read("easy_threshold", t.easy_threshold);
    r.read("collapse_threshold", t.collapse_threshold);
    read_shaping(r.child("prompt_shaping"), t.prompt_shaping);
    r.finish();
  }
  {
    auto& o = t.objective;
    auto r = root.child("objective");
    r.read("clip_epsilon", o.clip_epsilon);
    r.read("kl_coefficient", o.kl_coefficient);
    r.read("scale_advantages_by_std", o.scale_advantages_by_std);
    read_shaping(r.child("shaping"), o.shaping);
    auto p = r.child("penalty");
    p.read("majority_threshold", o.penalty.majority_threshold);
    p.read("negative_offset", o.penalty.negative_offset);
    p.finish();
    r.finish();
  }
  root.read("output_dir", cfg.output_dir);
  root.finish();

  if (cfg.suite.easy < 0 || cfg.suite.spurious < 0 || cfg.suite.hard < 0)
    throw ConfigError("config.suite: counts must be >= 0");
  t.validate();
  return cfg;
}

void write_suite(std::ostream& os, std::span<const SyntheticTask> suite) {
  os << json{{"format", kSuiteFormat}, {"tasks", suite.size()}}.dump() << '\n';
  for (const auto& t : suite) {
    json j{{"id", t.prompt_id},
           {"vocab_size", t.vocab_size},
           {"mode_count", t.mode_count},
           {"gold", t.gold},
           {"tag", to_string(t.tag)},
           {"emission", t.emission},
           {"initial_logits", t.initial_logits}};
    os << j.dump() << '\n';
  }
}

std::vector<SyntheticTask> read_suite(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("suite file is empty");
  const json header = parse_json(line, "suite header");
  check_format(header, kSuiteFormat);

  std::vector<SyntheticTask> suite;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = parse_json(line, "suite record");
    SyntheticTask t;
    try {
      t.prompt_id = j.at("id").get<std::string>();
      t.vocab_size = j.at("vocab_size").get<int>();
      t.mode_count = j.at("mode_count").get<int>();
      t.gold = j.at("gold").get<AnswerId>();
      t.tag = difficulty_from_string(j.at("tag").get<std::string>());
      t.emission = j.at("emission").get<std::vector<std::vector<double>>>();
      t.initial_logits = j.at("initial_logits").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw InvalidInput(std::string("bad suite record: ") + e.what());
    }
    validate(t);
    suite.push_back(std::move(t));
  }
  if (header.contains("tasks") && header["tasks"] != suite.size())
    throw InvalidInput("suite file is truncated");
  return suite;
}

void write_weight_table(std::ostream& csv, std::ostream& meta, const PromptWeightTable& table) {
  csv << "prompt_id,weight\n";
  for (const auto& [id, w] : table.entries()) csv << id << ',' << format_double(w) << '\n';
  const auto& m = table.metadata();
  json j{{"format", kWeightsFormat},
         {"seed", m.seed},
         {"n_ref", m.n_ref},
         {"center", m.shaping.center},
         {"width", m.shaping.width},
         {"snapshot_id", m.snapshot_id},
         {"snapshot_checksum", m.snapshot_checksum},
         {"prompts", table.size()}};
  meta << j.dump(2) << '\n';
}

PromptWeightTable read_weight_table(std::istream& csv, std::istream& meta) {
  std::stringstream buf;
  buf << meta.rdbuf();
  const json j = parse_json(buf.str(), "weight metadata");
  check_format(j, kWeightsFormat);
  PromptTableMetadata m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_ref = j.at("n_ref").get<int>();
    m.shaping.center = j.at("center").get<double>();
    m.shaping.width = j.at("width").get<double>();
    m.snapshot_id = j.at("snapshot_id").get<std::string>();
    m.snapshot_checksum = j.at("snapshot_checksum").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("bad weight metadata: ") + e.what());
  }

  std::string line;
  if (!std::getline(csv, line) || line != "prompt_id,weight") throw InvalidInput("weight table: bad header");
  std::map<PromptId, double> entries;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw InvalidInput("weight table: malformed row '" + line + "'");
    double w = 0.0;
    try {
      std::size_t used = 0;
      w = std::stod(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw InvalidInput("weight table: malformed weight in '" + line + "'");
    }
    if (!entries.emplace(line.substr(0, comma), w).second)
      throw InvalidInput("weight table: duplicate prompt '" + line.substr(0, comma) + "'");
  }
  return PromptWeightTable(std::move(entries), std::move(m));
}

void write_metrics(std::ostream& os, const MetricsLog& log) {
  os << json{{"format", kMetricsFormat}, {"method", log.method}, {"seed", log.seed}}.dump() << '\n';
  for (const auto& r : log.records) {
    json j{{"step", r.step},
           {"mean_loss", r.mean_loss},
           {"mean_kl", r.mean_kl},
           {"accuracy", r.accuracy},
           {"mean_majority_ratio", r.mean_majority_ratio},
           {"mean_entropy", r.mean_entropy},
           {"penalized_fraction", r.penalized_fraction}};
    os << j.dump() << '\n';
  }
}

MetricsLog read_metrics(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("metrics file is empty");
  const json header = parse_json(line, "metrics header");
  check_format(header, kMetricsFormat);
  MetricsLog log;
  try {
    log.method = header.at("method").get<std::string>();
    log.seed = header.at("seed").get<std::uint64_t>();
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json j = parse_json(line, "metrics record");
      StepRecord r;
      r.step = j.at("step").get<int>();
      r.mean_loss = j.at("mean_loss").get<double>();
      r.mean_kl = j.at("mean_kl").get<double>();
      r.accuracy = j.at("accuracy").get<double>();
      r.mean_majority_ratio = j.at("mean_majority_ratio").get<double>();
      r.mean_entropy = j.at("mean_entropy").get<double>();
      r.penalized_fraction = j.at("penalized_fraction").get<double>();
      log.records.push_back(r);
    }
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("bad metrics record: ") + e.what());
  }
  return log;
}

void write_policy(std::ostream& os, const PolicyParams& policy) {
  json logits = json::object();
  for (const auto& [id, v] : policy.logits) logits[id] = v;
  os << json{{"format", kPolicyFormat}, {"temperature", policy.temperature}, {"logits", logits}}.dump(2) << '\n';
}

PolicyParams read_policy(std::istream& is) {
  std::stringstream buf;
  buf << is.rdbuf();
  const json j = parse_json(buf.str(), "policy");
  check_format(j, kPolicyFormat);
  PolicyParams p;
  try {
    p.temperature = j.at("temperature").get<double>();
    for (const auto& [id, v] : j.at("logits").items()) p.logits[id] = v.get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("bad policy file: ") + e.what());
  }
  return p;
}

void write_collapse(std::ostream& os, const CollapseReport& report, double threshold) {
  json j{{"format", kCollapseFormat},
         {"threshold", threshold},
         {"peak_accuracy", report.peak_accuracy},
         {"peak_step", report.peak_step},
         {"final_accuracy", report.final_accuracy},
         {"collapsed", report.collapsed},
         {"collapse_step", report.collapse_step ? json(*report.collapse_step) : json(nullptr)}};
  os << j.dump(2) << '\n';
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << contents;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace restrain
