#include "doctest.h"

#include <algorithm>
#include <map>
#include <random>

#include "restrain/consensus.hpp"
#include "restrain/errors.hpp"
#include "support.hpp"

using namespace restrain;
using support::expand;
using support::group_of;

namespace {

// Counts by a plain loop over the id range.
std::map<AnswerId, int> count_loop(const std::vector<AnswerId>& answers) {
  std::map<AnswerId, int> c;
  for (AnswerId a : answers) c[a] += 1;
  return c;
}

}  // namespace

TEST_CASE("tally counts a small group") {
  const auto t = tally(group_of({0, 0, 0, 1}));
  CHECK(t.answers == std::vector<AnswerId>{0, 1});
  CHECK(t.counts == std::vector<int>{3, 1});
  CHECK(t.freqs[0] == doctest::Approx(0.75));
  CHECK(t.freqs[1] == doctest::Approx(0.25));
  CHECK(t.majority_count == 3);
  CHECK(t.n == 4);
}

TEST_CASE("unanimous group") {
  const auto t = tally(group_of(std::vector<AnswerId>(16, 5)));
  CHECK(t.m() == 1);
  CHECK(t.freqs[0] == 1.0);
  CHECK(t.majority_count == 16);
}

TEST_CASE("8/5/3 split matches a counting loop") {
  const auto answers = expand({8, 5, 3});
  const auto t = tally(group_of(answers));
  const auto oracle = count_loop(answers);
  REQUIRE(t.m() == 3);
  for (int j = 0; j < t.m(); ++j) CHECK(t.counts[j] == oracle.at(t.answers[j]));
  CHECK(t.freqs == std::vector<double>{0.5, 0.3125, 0.1875});
  CHECK(t.majority_count == 8);
  CHECK(majority_answer(t) == 0);
}

TEST_CASE("ties break toward the lower id") {
  CHECK(majority_answer(tally(group_of({4, 2, 4, 2}))) == 2);
  const auto t = tally(group_of({7, 3, 3, 7, 1}));
  CHECK(t.answers == std::vector<AnswerId>{3, 7, 1});
}

TEST_CASE("empty input is rejected") {
  CHECK_THROWS_AS(tally(group_of({})), InvalidInput);
  CHECK_THROWS_AS(tally(std::span<const AnswerId>{}), InvalidInput);
}

TEST_CASE("tally invariants and permutation invariance on random groups") {
  std::mt19937_64 eng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(eng() % 20);
    const int vocab = 1 + static_cast<int>(eng() % 6);
    std::vector<AnswerId> answers(n);
    for (auto& a : answers) a = static_cast<AnswerId>(eng() % vocab);
    const auto t = tally(answers);

    int sum = 0;
    double fsum = 0.0;
    for (int j = 0; j < t.m(); ++j) {
      sum += t.counts[j];
      fsum += t.freqs[j];
      CHECK(t.counts[j] > 0);
      if (j > 0) {
        const bool ordered = t.counts[j - 1] > t.counts[j] ||
                             (t.counts[j - 1] == t.counts[j] && t.answers[j - 1] < t.answers[j]);
        CHECK(ordered);
      }
    }
    CHECK(sum == n);
    CHECK(std::abs(fsum - 1.0) <= 1e-12);
    CHECK(t.majority_count == *std::max_element(t.counts.begin(), t.counts.end()));
    CHECK(t.m() <= n);

    auto shuffled = answers;
    std::shuffle(shuffled.begin(), shuffled.end(), eng);
    const auto u = tally(shuffled);
    CHECK(u.answers == t.answers);
    CHECK(u.counts == t.counts);
    CHECK(majority_answer(u) == majority_answer(t));
  }
}

TEST_CASE("validate rejects inconsistent rollouts") {
  auto g = group_of({1, 2});
  CHECK_NOTHROW(validate(g));
  g.rollouts[0].trajectory = {0, 3};
  CHECK_THROWS_AS(validate(g), InvalidInput);
  g = group_of({1});
  g.rollouts[0].logprob_behavior = 0.5;
  CHECK_THROWS_AS(validate(g), InvalidInput);
}

TEST_CASE("reliability: wrong answers that agree") {
  // gold = 0; the two wrong rollouts agree, so the majority (size 2) is wrong.
  std::vector<RolloutGroup> groups{group_of({0, 1, 1}, "a")};
  const auto rep = reliability_stats(groups, {{"a", 0}});
  REQUIRE(rep.buckets.size() == 3);
  const auto& b = rep.buckets[1];
  CHECK(b.majority_size == 2);
  CHECK(b.population == 1);
  CHECK(*b.majority_correct_ratio == 0.0);
  CHECK(*b.at_least_one_correct_ratio == 1.0);
  CHECK_FALSE(rep.buckets[0].majority_correct_ratio.has_value());
  CHECK(rep.pass_at_n == 1.0);
}

TEST_CASE("reliability: unanimous and correct") {
  std::vector<RolloutGroup> groups{group_of({2, 2, 2, 2}, "a"), group_of({1, 1, 1, 1}, "b")};
  const auto rep = reliability_stats(groups, {{"a", 2}, {"b", 1}});
  CHECK(rep.buckets.back().population == 2);
  CHECK(*rep.buckets.back().majority_correct_ratio == 1.0);
  CHECK(*rep.buckets.back().at_least_one_correct_ratio == 1.0);
}

TEST_CASE("reliability: missing gold label and mixed sizes") {
  std::vector<RolloutGroup> groups{group_of({0, 1}, "a")};
  CHECK_THROWS_AS(reliability_stats(groups, {{"b", 0}}), InvalidInput);
  groups.push_back(group_of({0, 1, 1}, "b"));
  CHECK_THROWS_AS(reliability_stats(groups, {{"a", 0}, {"b", 0}}), InvalidInput);
}

TEST_CASE("reliability matches enumeration over all outcomes of two prompts") {
  // Every joint outcome of two prompts with n = 3 rollouts over V = 3 answers.
  const int n = 3, vocab = 3;
  const std::map<PromptId, AnswerId> gold{{"a", 1}, {"b", 2}};
  int outcomes = 1;
  for (int i = 0; i < 2 * n; ++i) outcomes *= vocab;

  for (int code = 0; code < outcomes; ++code) {
    std::vector<AnswerId> xs(2 * n);
    int c = code;
    for (auto& x : xs) {
      x = c % vocab;
      c /= vocab;
    }
    std::vector<RolloutGroup> groups{group_of({xs.begin(), xs.begin() + n}, "a"),
                                     group_of({xs.begin() + n, xs.end()}, "b")};
    const auto rep = reliability_stats(groups, gold);

    std::vector<int> pop(n + 1, 0), maj(n + 1, 0), any(n + 1, 0);
    for (const auto& g : groups) {
      int counts[3] = {0, 0, 0};
      for (const auto& r : g.rollouts) counts[r.answer]++;
      int m = 0, arg = 0;
      for (int a = 0; a < vocab; ++a)
        if (counts[a] > m) m = counts[a], arg = a;
      const AnswerId y = gold.at(g.prompt_id);
      pop[m]++;
      maj[m] += arg == y;
      any[m] += counts[y] > 0;
    }
    for (int size = 1; size <= n; ++size) {
      const auto& b = rep.buckets[size - 1];
      REQUIRE(b.population == pop[size]);
      if (pop[size] == 0) {
        CHECK_FALSE(b.majority_correct_ratio.has_value());
      } else {
        CHECK(*b.majority_correct_ratio == static_cast<double>(maj[size]) / pop[size]);
        CHECK(*b.at_least_one_correct_ratio == static_cast<double>(any[size]) / pop[size]);
        CHECK(*b.at_least_one_correct_ratio >= *b.majority_correct_ratio);
      }
    }
  }
}

TEST_CASE("reliability CSV layout") {
  std::vector<RolloutGroup> groups{group_of({0, 1, 1}, "a")};
  const auto csv = to_csv(reliability_stats(groups, {{"a", 0}}));
  CHECK(csv ==
        "majority_size,population,majority_correct_ratio,at_least_one_correct_ratio\n"
        "1,0,,\n"
        "2,1,0,1\n"
        "3,0,,\n");
}
