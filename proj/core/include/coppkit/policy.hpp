#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "coppkit/dataset.hpp"
#include "coppkit/rng.hpp"

namespace coppkit {

/// Region-based probability table over K discrete actions. Regions are
/// half-open bands of |x[0]|: region i is active when |x[0]| <= upper_bounds[i]
/// and |x[0]| > upper_bounds[i-1]. The last bound may be +infinity.
struct TabularRulePolicy {
  std::vector<double> upper_bounds;            // ascending
  std::vector<std::vector<double>> rows;       // one K-row of probabilities per region

  int num_actions() const { return rows.empty() ? 0 : static_cast<int>(rows[0].size()); }
  int region_of(double x0) const;
};

/// Gaussian policy over a continuous action: A | x ~ N(coef * x[0] + shift, std^2).
struct GaussianLinearPolicy {
  double coef = 0.0;
  double shift = 0.0;
  double stddev = 1.0;
};

/// Point mass on a (possibly x-dependent) action.
struct DeterministicPolicy {
  ActionKind kind = ActionKind::Discrete;
  int num_actions = 0;                                   // K for discrete, 0 otherwise
  std::function<double(const std::vector<double>&)> action_fn;

  static DeterministicPolicy constant_discrete(int action, int num_actions);
  static DeterministicPolicy constant_continuous(double action);
};

/// Picks a favored action with probability eps and spreads the remaining
/// (1 - eps) uniformly over the other K - 1 actions. The favored action comes
/// from a caller-supplied rule, typically a fitted classifier's argmax.
struct ClassifierEpsilonPolicy {
  int num_actions = 0;
  double eps = 0.5;
  std::function<int(const std::vector<double>&)> favored_fn;
};

using PolicySpec =
    std::variant<TabularRulePolicy, GaussianLinearPolicy, DeterministicPolicy,
                 ClassifierEpsilonPolicy>;

ActionKind policy_action_kind(const PolicySpec& p);
int policy_num_actions(const PolicySpec& p);

/// Probability of `a` under the policy (a density for continuous actions).
/// Discrete probabilities sum to one over the K actions within 1e-9.
double policy_prob(const PolicySpec& p, const std::vector<double>& x, double a);

/// Draws one action; a deterministic function of the rng state.
double policy_sample(const PolicySpec& p, const std::vector<double>& x, Rng& rng);

/// Validates the structural invariants (row sums, std > 0, ...). Throws
/// ValidationError on violation. Called by the constructors of composite
/// objects that accept policies.
void validate_policy(const PolicySpec& p);

/// The banded epsilon family over four actions used by the bundled discrete
/// environment: the favored action escalates with |x[0]| at thresholds
/// {1, 2, 3}; the favored action gets probability 1 - 3*eps, every other one
/// gets eps. Requires eps in (0, 1/3).
TabularRulePolicy region_epsilon_policy(double eps);

/// JSON (de)serialization for the value-only policy forms (tabular_rule,
/// gaussian_linear, deterministic with a constant action, region_eps).
PolicySpec policy_from_json(const std::string& text);
std::string policy_to_json(const PolicySpec& p);

}  // namespace coppkit
