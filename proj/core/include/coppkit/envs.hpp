#pragma once

#include <string>
#include <variant>
#include <vector>

#include "coppkit/dataset.hpp"
#include "coppkit/policy.hpp"
#include "coppkit/prediction_set.hpp"

namespace coppkit {

/// Discrete-action bandit with closed-form generative law:
///   X ~ N(0, x_std^2), four actions with numeric values {1,2,3,4},
///   Y | x, a ~ N(value(a) * x, y_std^2).
/// The banded epsilon policy family (region_epsilon_policy) is its native
/// policy family; actions are indexed 0..3 with the value table attached here.
struct ToyDiscreteEnv {
  double x_std = 3.0;
  double y_std = 1.0;
  std::vector<double> action_values = {1.0, 2.0, 3.0, 4.0};

  int num_actions() const { return static_cast<int>(action_values.size()); }
};

/// Continuous-action bandit:
///   X ~ N(0, x_std^2), A | x ~ N(x/4, 1) under the native behavior policy,
///   Y | x, a ~ N(a + x, y_std^2).
/// Target policies shift the action mean: N(x/4 + eps, 1).
struct ToyContinuousEnv {
  double x_std = 2.0;
  double y_std = 1.0;

  GaussianLinearPolicy policy(double eps) const { return {0.25, eps, 1.0}; }
};

using SyntheticEnv = std::variant<ToyDiscreteEnv, ToyContinuousEnv>;

ActionKind env_action_kind(const SyntheticEnv& env);

/// i.i.d. logged draws X -> A|X -> Y|X,A; a pure function of the rng state.
BanditDataset gen_synthetic(const SyntheticEnv& env, const PolicySpec& behavior,
                            std::size_t n_obs, Rng& rng);

/// Exact conditional outcome density P(y | x, a). Discrete actions are
/// indices into the env's value table.
double env_density(const SyntheticEnv& env, const std::vector<double>& x, double a, double y);

/// log P^pi(y | x) = log Integral P(y|x,a) pi(a|x) da, evaluated in closed
/// form (log-sum-exp over actions, or the Gaussian convolution for Gaussian
/// policies on the continuous env).
double env_log_outcome_density(const SyntheticEnv& env, const PolicySpec& policy,
                               const std::vector<double>& x, double y);

/// CDF of the outcome mixture P^pi(. | x).
double env_outcome_cdf(const SyntheticEnv& env, const PolicySpec& policy,
                       const std::vector<double>& x, double t);

/// Central (alpha/2, 1-alpha/2) interval of the exact outcome law under the
/// target policy, found by bisection on the mixture CDF to |F - beta| <= 1e-10.
Interval oracle_interval(const SyntheticEnv& env, const PolicySpec& target,
                         const std::vector<double>& x, double alpha);

/// One fresh draw (x, a, y) with x ~ P_X, a ~ policy, y ~ P(.|x,a).
LoggedSample sample_triple(const SyntheticEnv& env, const PolicySpec& policy, Rng& rng);

// ---- classification-derived bandits -----------------------------------------

/// Feature/label table turned into a bandit: the action guesses the label and
/// the binary outcome records whether the guess was right.
struct ClassificationBandit {
  std::vector<std::vector<double>> xs;
  std::vector<int> labels;
  int num_classes = 0;
};

ClassificationBandit load_classification_csv(const std::string& path);
void write_classification_csv(const ClassificationBandit& cb, const std::string& path);

/// For each row draws A ~ pi(.|x) and sets Y = 1(A == label).
BanditDataset to_bandit(const ClassificationBandit& cb, const PolicySpec& policy, Rng& rng);

// ---- dataset CSV --------------------------------------------------------------

struct DatasetSchema {
  ActionKind action_kind = ActionKind::Discrete;
  OutcomeKind outcome_kind = OutcomeKind::Continuous;
  int num_actions = 0;  // 0 = infer from data
  int num_labels = 0;   // 0 = infer from data
};

/// Header `x0,...,x{d-1},a,y`; '.' decimals, LF line endings, integers for
/// discrete actions/labels.
void write_dataset_csv(const BanditDataset& data, const std::string& path);
BanditDataset read_dataset_csv(const std::string& path, const DatasetSchema& schema);

}  // namespace coppkit
