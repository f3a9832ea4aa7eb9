#include "doctest.h"

#include "restrain/errors.hpp"
#include "restrain/trainer.hpp"

using namespace restrain;

namespace {

TrainConfig small_config(Method m, int steps = 40) {
  TrainConfig cfg;
  cfg.method = m;
  cfg.steps = steps;
  cfg.eval_every = 10;
  return cfg;
}

std::vector<StepRecord> curve(std::initializer_list<double> acc) {
  std::vector<StepRecord> out;
  int step = 0;
  for (double a : acc) {
    StepRecord r;
    r.step = step;
    r.accuracy = a;
    out.push_back(r);
    step += 10;
  }
  return out;
}

}  // namespace

TEST_CASE("method names round-trip") {
  for (Method m : all_methods()) CHECK(method_from_string(to_string(m)) == m);
  CHECK(all_methods().size() == 6);
  CHECK(to_string(Method::RestrainOnlinePw) == "RESTRAIN_ONLINE_PW");
  CHECK_THROWS_AS(method_from_string("restrain"), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.n_rollouts = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.eval_every = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.objective.clip_epsilon = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("zero learning rate leaves the policy unchanged") {
  const auto suite = generate_suite({4, 4, 2}, 3);
  for (Method m : all_methods()) {
    auto cfg = small_config(m, 20);
    cfg.learning_rate = 0.0;
    const auto res = train(suite, cfg);
    CHECK(res.final_policy == res.initial_policy);
    CHECK(res.final_policy == initial_policy(suite));
    for (const auto& r : res.records) CHECK(r.accuracy == res.records.front().accuracy);
  }
}

TEST_CASE("training is deterministic in the seed") {
  const auto suite = generate_suite({4, 4, 2}, 3);
  const auto cfg = small_config(Method::Restrain);
  const auto a = train(suite, cfg), b = train(suite, cfg);
  CHECK(a.records == b.records);
  CHECK(a.final_policy == b.final_policy);
  auto other = cfg;
  other.seed = 1;
  CHECK(train(suite, other).final_policy != a.final_policy);
}

TEST_CASE("record grid") {
  const auto suite = generate_suite({2, 2, 2}, 3);
  auto cfg = small_config(Method::Ttrl, 25);
  const auto res = train(suite, cfg);
  REQUIRE(res.records.size() == 4);
  CHECK(res.records[0].step == 0);
  CHECK(res.records[0].mean_loss == 0.0);
  CHECK(res.records[1].step == 10);
  CHECK(res.records.back().step == 25);
  for (const auto& r : res.records) {
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
    CHECK(r.penalized_fraction == 0.0);
  }
}

TEST_CASE("offline prompt table is frozen during training") {
  const auto suite = generate_suite({4, 4, 4}, 5);
  const auto cfg = small_config(Method::Restrain);
  const auto table = precompute_prompt_weights(suite, PolicySnapshot("ref", initial_policy(suite)), cfg);
  const auto res = train(suite, cfg, &table);
  REQUIRE(res.table_checksums.size() == static_cast<std::size_t>(cfg.steps));
  for (auto c : res.table_checksums) CHECK(c == table.checksum());
  CHECK(train(suite, cfg).records == res.records);

  const auto online = train(suite, small_config(Method::RestrainOnlinePw));
  CHECK(online.table_checksums.empty());
}

TEST_CASE("a table missing a prompt is rejected") {
  const auto suite = generate_suite({2, 0, 0}, 5);
  const PromptWeightTable partial({{suite[0].prompt_id, 1.0}}, {});
  CHECK_THROWS_AS(train(suite, small_config(Method::Restrain), &partial), ConfigError);
}

TEST_CASE("gold rewards learn the hard prompts") {
  const auto suite = generate_suite({0, 0, 16}, 2025);
  auto cfg = small_config(Method::GoldGrpo, 300);
  cfg.eval_every = 10;
  const auto res = train(suite, cfg);
  CHECK(res.records.front().accuracy <= 0.5);
  CHECK(res.records.back().accuracy >= 0.95);

  // Moving average over 50-step windows never drops.
  std::vector<double> avg;
  for (std::size_t i = 0; i + 5 <= res.records.size(); i += 5) {
    double s = 0.0;
    for (std::size_t k = i; k < i + 5; ++k) s += res.records[k].accuracy;
    avg.push_back(s / 5);
  }
  for (std::size_t i = 1; i < avg.size(); ++i) CHECK(avg[i] >= avg[i - 1] - 1e-12);
}

TEST_CASE("gold rewards keep easy prompts solved") {
  const auto suite = generate_suite({16, 0, 0}, 7);
  auto cfg = small_config(Method::GoldGrpo, 200);
  const auto res = train(suite, cfg);
  CHECK(res.records.back().accuracy >= 0.95);
  for (std::size_t i = 5; i + 5 <= res.records.size(); ++i) {
    double prev = 0.0, cur = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      prev += res.records[i - 5 + k].accuracy / 5;
      cur += res.records[i + k].accuracy / 5;
    }
    CHECK(cur >= prev - 0.02);
  }
}

TEST_CASE("offline labels come from the reference policy") {
  const auto suite = generate_suite({6, 6, 0}, 4);
  const PolicySnapshot ref("ref", initial_policy(suite));
  const TrainConfig cfg;
  const auto labels = precompute_offline_labels(suite, ref, cfg);
  CHECK(labels == precompute_offline_labels(suite, ref, cfg));
  REQUIRE(labels.size() == suite.size());
  for (std::size_t i = 0; i < 6; ++i) CHECK(labels.at(suite[i].prompt_id) == suite[i].gold);
}

TEST_CASE("collapse detection") {
  const auto up_down = curve({0.3, 0.6, 0.2});
  const auto rep = detect_collapse(up_down);
  CHECK(rep.collapsed);
  CHECK(rep.peak_accuracy == 0.6);
  CHECK(rep.peak_step == 10);
  CHECK(rep.final_accuracy == 0.2);
  CHECK(rep.collapse_step == 20);

  const auto rising = curve({0.1, 0.2, 0.3, 0.4});
  const auto r2 = detect_collapse(rising);
  CHECK_FALSE(r2.collapsed);
  CHECK_FALSE(r2.collapse_step.has_value());
  CHECK(r2.peak_step == 30);

  CHECK(detect_collapse(curve({0.6, 0.45}), 0.15).collapsed);
  CHECK_FALSE(detect_collapse(curve({0.6, 0.46}), 0.15).collapsed);
  const auto late = curve({0.2, 0.8, 0.7, 0.6, 0.5});
  CHECK(detect_collapse(late, 0.25).collapse_step == 40);
  CHECK_THROWS_AS(detect_collapse(curve({0.5})), InvalidInput);
}

TEST_CASE("every method runs on a mixed suite") {
  const auto suite = generate_suite({3, 3, 2}, 8);
  for (Method m : all_methods()) {
    const auto res = train(suite, small_config(m, 10));
    CHECK(res.records.size() == 2);
    CHECK(res.final_policy != res.initial_policy);
  }
}
