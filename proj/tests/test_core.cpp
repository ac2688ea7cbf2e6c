#include <doctest.h>

#include <cmath>
#include <set>

#include "coppkit/dataset.hpp"
#include "coppkit/policy.hpp"
#include "coppkit/prediction_set.hpp"

using namespace coppkit;

namespace {

BanditDataset tiny_dataset(std::size_t n) {
  std::vector<LoggedSample> samples;
  for (std::size_t i = 0; i < n; ++i)
    samples.push_back({{static_cast<double>(i)}, static_cast<double>(i % 4),
                       static_cast<double>(i) * 0.5});
  return BanditDataset(std::move(samples), ActionKind::Discrete, OutcomeKind::Continuous, 4);
}

// chi-square statistic of observed counts against expected probabilities
double chi_square(const std::vector<std::size_t>& counts, const std::vector<double>& probs,
                  std::size_t n) {
  double stat = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double expected = probs[k] * static_cast<double>(n);
    const double diff = static_cast<double>(counts[k]) - expected;
    stat += diff * diff / expected;
  }
  return stat;
}

}  // namespace

TEST_CASE("split_dataset produces disjoint parts of the requested sizes") {
  const BanditDataset data = tiny_dataset(10);
  const SplitResult split = split_dataset(data, {6, 4, 1});
  CHECK(split.train.size() == 6);
  CHECK(split.cal.size() == 4);

  std::set<double> seen;
  for (const auto& s : split.train.samples()) seen.insert(s.x[0]);
  for (const auto& s : split.cal.samples()) {
    CHECK(seen.count(s.x[0]) == 0);
    seen.insert(s.x[0]);
  }
  CHECK(seen.size() == 10);
}

TEST_CASE("split_dataset is a deterministic function of the seed") {
  const BanditDataset data = tiny_dataset(50);
  const SplitResult a = split_dataset(data, {30, 20, 42});
  const SplitResult b = split_dataset(data, {30, 20, 42});
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK(a.train[i].x[0] == b.train[i].x[0]);
  for (std::size_t i = 0; i < a.cal.size(); ++i) CHECK(a.cal[i].x[0] == b.cal[i].x[0]);

  const SplitResult c = split_dataset(data, {30, 20, 43});
  bool any_diff = false;
  for (std::size_t i = 0; i < a.train.size(); ++i)
    any_diff = any_diff || a.train[i].x[0] != c.train[i].x[0];
  CHECK(any_diff);
}

TEST_CASE("split_dataset rejects oversized requests") {
  const BanditDataset data = tiny_dataset(10);
  CHECK_THROWS_AS(split_dataset(data, {6, 5, 1}), ValidationError);
  CHECK_THROWS_AS(split_dataset(data, {0, 5, 1}), ValidationError);
}

TEST_CASE("banded epsilon policy matches its defining table") {
  const PolicySpec p = region_epsilon_policy(0.3);

  // |x| <= 1: favored index 0 gets 1 - 3 eps
  CHECK(policy_prob(p, {0.5}, 0.0) == doctest::Approx(0.1));
  CHECK(policy_prob(p, {0.5}, 1.0) == doctest::Approx(0.3));
  CHECK(policy_prob(p, {0.5}, 2.0) == doctest::Approx(0.3));
  CHECK(policy_prob(p, {0.5}, 3.0) == doctest::Approx(0.3));

  // favored action escalates with |x|
  CHECK(policy_prob(p, {-1.5}, 1.0) == doctest::Approx(0.1));
  CHECK(policy_prob(p, {2.5}, 2.0) == doctest::Approx(0.1));
  CHECK(policy_prob(p, {-7.0}, 3.0) == doctest::Approx(0.1));

  CHECK_THROWS_AS(region_epsilon_policy(0.4), ValidationError);
  CHECK_THROWS_AS(region_epsilon_policy(0.0), ValidationError);
}

TEST_CASE("gaussian linear policy evaluates the normal density") {
  const PolicySpec p = GaussianLinearPolicy{0.25, 0.0, 1.0};
  // standard normal density at its mean
  CHECK(policy_prob(p, {0.0}, 0.0) == doctest::Approx(0.3989422804).epsilon(1e-6));
  CHECK(policy_prob(p, {4.0}, 1.0) == doctest::Approx(0.3989422804).epsilon(1e-6));
}

TEST_CASE("deterministic policy is a point mass") {
  const PolicySpec p = DeterministicPolicy::constant_discrete(2, 4);
  CHECK(policy_prob(p, {1.0}, 2.0) == 1.0);
  CHECK(policy_prob(p, {1.0}, 1.0) == 0.0);
  Rng rng(3);
  for (int i = 0; i < 10; ++i) CHECK(policy_sample(p, {1.0}, rng) == 2.0);
}

TEST_CASE("discrete policy probabilities sum to one at random covariates") {
  const PolicySpec p = region_epsilon_policy(0.17);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> x{rng.normal(0.0, 3.0)};
    double sum = 0.0;
    for (int a = 0; a < 4; ++a) sum += policy_prob(p, x, static_cast<double>(a));
    CHECK(std::fabs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("policy samples follow the probabilities (chi-square)") {
  const std::size_t n = 100000;
  // chi-square critical value, 3 dof, upper tail 1e-3
  const double critical = 16.266;

  SUBCASE("banded family at a fixed covariate") {
    const PolicySpec p = region_epsilon_policy(0.25);
    const std::vector<double> x{1.7};
    std::vector<double> probs(4);
    for (int a = 0; a < 4; ++a) probs[a] = policy_prob(p, x, static_cast<double>(a));
    Rng rng(11);
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t i = 0; i < n; ++i)
      ++counts[static_cast<std::size_t>(policy_sample(p, x, rng))];
    CHECK(chi_square(counts, probs, n) < critical);
  }

  SUBCASE("eps near 1/3 empties the favored action and spreads 1/3 on the rest") {
    const PolicySpec p = region_epsilon_policy(1.0 / 3.0 - 1e-12);
    const std::vector<double> x{0.2};  // favored index 0 in this band
    Rng rng(13);
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t i = 0; i < n; ++i)
      ++counts[static_cast<std::size_t>(policy_sample(p, x, rng))];
    CHECK(static_cast<double>(counts[0]) / static_cast<double>(n) < 0.001);
    for (std::size_t k = 1; k < 4; ++k) {
      const double freq = static_cast<double>(counts[k]) / static_cast<double>(n);
      CHECK(std::fabs(freq - 1.0 / 3.0) < 0.01);
    }
  }

  SUBCASE("classifier-epsilon spreads the off-favored mass uniformly") {
    ClassifierEpsilonPolicy cp;
    cp.num_actions = 5;
    cp.eps = 0.4;
    cp.favored_fn = [](const std::vector<double>&) { return 2; };
    const PolicySpec p = cp;
    const std::vector<double> x{0.0};
    std::vector<double> probs(5);
    for (int a = 0; a < 5; ++a) probs[a] = policy_prob(p, x, static_cast<double>(a));
    CHECK(probs[2] == doctest::Approx(0.4));
    CHECK(probs[0] == doctest::Approx(0.15));
    Rng rng(17);
    std::vector<std::size_t> counts(5, 0);
    for (std::size_t i = 0; i < n; ++i)
      ++counts[static_cast<std::size_t>(policy_sample(p, x, rng))];
    // chi-square critical value, 4 dof, upper tail 1e-3
    CHECK(chi_square(counts, probs, n) < 18.467);
  }
}

TEST_CASE("gaussian linear sampling hits the requested mean") {
  const PolicySpec p = GaussianLinearPolicy{0.25, 0.0, 1.0};
  Rng rng(19);
  const std::vector<double> x{4.0};
  double sum = 0.0;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) sum += policy_sample(p, x, rng);
  CHECK(std::fabs(sum / static_cast<double>(n) - 1.0) < 0.02);
}

TEST_CASE("prediction sets enforce their invariants") {
  CHECK_THROWS_AS(PredictionSet::grid_set({2.0, 1.0}, 0.5, false), ValidationError);
  CHECK_THROWS_AS(PredictionSet::label_set({1, 1}, false), ValidationError);

  const PredictionSet grid = PredictionSet::grid_set({0.0, 0.5, 2.0}, 0.5, false);
  CHECK(grid.grid_measure_length() == doctest::Approx(1.5));
  CHECK(grid.hull_length() == doctest::Approx(2.5));
  CHECK(grid.contains(0.2));
  CHECK(grid.contains(2.24));
  CHECK(!grid.contains(1.3));

  const PredictionSet labels = PredictionSet::label_set({2, 0}, false);
  CHECK(labels.contains(0.0));
  CHECK(!labels.contains(1.0));
  CHECK(labels.grid_measure_length() == 2.0);
}

TEST_CASE("dataset constructor validates shapes and ranges") {
  std::vector<LoggedSample> bad_action{{{0.0}, 7.0, 0.0}};
  CHECK_THROWS_AS(
      BanditDataset(bad_action, ActionKind::Discrete, OutcomeKind::Continuous, 4),
      ValidationError);

  std::vector<LoggedSample> ragged{{{0.0}, 0.0, 0.0}, {{0.0, 1.0}, 0.0, 0.0}};
  CHECK_THROWS_AS(BanditDataset(ragged, ActionKind::Discrete, OutcomeKind::Continuous, 4),
                  ValidationError);

  CHECK_THROWS_AS(BanditDataset({}, ActionKind::Discrete, OutcomeKind::Continuous, 4),
                  ValidationError);
}

TEST_CASE("policy json round-trip") {
  const PolicySpec p = region_epsilon_policy(0.2);
  const PolicySpec q = policy_from_json(policy_to_json(p));
  Rng rng(23);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x{rng.normal(0.0, 3.0)};
    for (int a = 0; a < 4; ++a)
      CHECK(policy_prob(p, x, a) == policy_prob(q, x, a));
  }
  CHECK_THROWS_AS(policy_from_json("{\"kind\":\"bogus\"}"), ValidationError);
  CHECK_THROWS_AS(policy_from_json("not json"), ValidationError);
}
