#include "restrain/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "restrain/errors.hpp"
#include "restrain/format.hpp"

namespace restrain {

std::vector<AnswerId> RolloutGroup::answers() const {
  std::vector<AnswerId> out;
  out.reserve(rollouts.size());
  for (const auto& r : rollouts) out.push_back(r.answer);
  return out;
}

void validate(const RolloutGroup& group) {
  if (group.rollouts.empty()) throw InvalidInput("rollout group '" + group.prompt_id + "' is empty");
  for (const auto& r : group.rollouts) {
    if (r.trajectory.empty() || r.trajectory.back() != r.answer)
      throw InvalidInput("rollout answer must equal the final trajectory token");
    for (double lp : {r.logprob_current, r.logprob_behavior, r.logprob_reference}) {
      if (std::isnan(lp) || lp > 0.0) throw InvalidInput("rollout log-probability must be <= 0");
    }
  }
}

AnswerTally tally(std::span<const AnswerId> answers) {
  if (answers.empty()) throw InvalidInput("cannot tally an empty rollout sequence");
  std::vector<AnswerId> sorted(answers.begin(), answers.end());
  std::sort(sorted.begin(), sorted.end());

  std::vector<std::pair<AnswerId, int>> runs;
  for (AnswerId a : sorted) {
    if (runs.empty() || runs.back().first != a)
      runs.emplace_back(a, 1);
    else
      ++runs.back().second;
  }
  std::stable_sort(runs.begin(), runs.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });

  AnswerTally t;
  t.n = static_cast<int>(answers.size());
  for (const auto& [answer, count] : runs) {
    t.answers.push_back(answer);
    t.counts.push_back(count);
    t.freqs.push_back(static_cast<double>(count) / t.n);
  }
  t.majority_count = t.counts.front();
  return t;
}

AnswerTally tally(const RolloutGroup& group) {
  if (group.rollouts.empty()) throw InvalidInput("rollout group '" + group.prompt_id + "' is empty");
  const auto answers = group.answers();
  return tally(answers);
}

AnswerId majority_answer(const AnswerTally& tally) {
  if (tally.answers.empty()) throw InvalidInput("majority_answer: empty tally");
  return tally.answers.front();
}

ReliabilityReport reliability_stats(std::span<const RolloutGroup> groups,
                                    const std::map<PromptId, AnswerId>& gold) {
  if (groups.empty()) throw InvalidInput("reliability_stats: no groups");
  ReliabilityReport report;
  report.n = groups.front().n();
  report.prompts = static_cast<int>(groups.size());

  std::vector<int> population(report.n + 1, 0);
  std::vector<int> majority_correct(report.n + 1, 0);
  std::vector<int> any_correct(report.n + 1, 0);
  int pass = 0;

  for (const auto& g : groups) {
    if (g.n() != report.n) throw InvalidInput("reliability_stats: groups differ in rollout count");
    auto it = gold.find(g.prompt_id);
    if (it == gold.end()) throw InvalidInput("reliability_stats: no gold label for '" + g.prompt_id + "'");
    const AnswerTally t = tally(g);
    const bool hit = std::find(t.answers.begin(), t.answers.end(), it->second) != t.answers.end();
    ++population[t.majority_count];
    if (majority_answer(t) == it->second) ++majority_correct[t.majority_count];
    if (hit) {
      ++any_correct[t.majority_count];
      ++pass;
    }
  }

  for (int size = 1; size <= report.n; ++size) {
    ReliabilityBucket b;
    b.majority_size = size;
    b.population = population[size];
    if (b.population > 0) {
      b.majority_correct_ratio = static_cast<double>(majority_correct[size]) / b.population;
      b.at_least_one_correct_ratio = static_cast<double>(any_correct[size]) / b.population;
    }
    report.buckets.push_back(b);
  }
  report.pass_at_n = static_cast<double>(pass) / report.prompts;
  return report;
}

std::string to_csv(const ReliabilityReport& report) {
  std::ostringstream os;
  os << "majority_size,population,majority_correct_ratio,at_least_one_correct_ratio\n";
  for (const auto& b : report.buckets) {
    os << b.majority_size << ',' << b.population << ',';
    if (b.majority_correct_ratio) os << format_double(*b.majority_correct_ratio);
    os << ',';
    if (b.at_least_one_correct_ratio) os << format_double(*b.at_least_one_correct_ratio);
    os << '\n';
  }
  return os.str();
}

}  // namespace restrain
