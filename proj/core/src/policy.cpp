#include "coppkit/policy.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "coppkit/errors.hpp"

namespace coppkit {

namespace {
constexpr double kProbTol = 1e-9;
}

int TabularRulePolicy::region_of(double x0) const {
  const double v = std::fabs(x0);
  for (std::size_t i = 0; i < upper_bounds.size(); ++i) {
    if (v <= upper_bounds[i]) return static_cast<int>(i);
  }
  return static_cast<int>(upper_bounds.size()) - 1;
}

DeterministicPolicy DeterministicPolicy::constant_discrete(int action, int num_actions) {
  DeterministicPolicy p;
  p.kind = ActionKind::Discrete;
  p.num_actions = num_actions;
  p.action_fn = [action](const std::vector<double>&) { return static_cast<double>(action); };
  return p;
}

DeterministicPolicy DeterministicPolicy::constant_continuous(double action) {
  DeterministicPolicy p;
  p.kind = ActionKind::Continuous;
  p.action_fn = [action](const std::vector<double>&) { return action; };
  return p;
}

ActionKind policy_action_kind(const PolicySpec& p) {
  return std::visit(
      [](const auto& v) -> ActionKind {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, GaussianLinearPolicy>) return ActionKind::Continuous;
        else if constexpr (std::is_same_v<T, DeterministicPolicy>) return v.kind;
        else return ActionKind::Discrete;
      },
      p);
}

int policy_num_actions(const PolicySpec& p) {
  return std::visit(
      [](const auto& v) -> int {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TabularRulePolicy>) return v.num_actions();
        else if constexpr (std::is_same_v<T, ClassifierEpsilonPolicy>) return v.num_actions;
        else if constexpr (std::is_same_v<T, DeterministicPolicy>) return v.num_actions;
        else return 0;
      },
      p);
}

double policy_prob(const PolicySpec& p, const std::vector<double>& x, double a) {
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TabularRulePolicy>) {
          const int k = static_cast<int>(a);
          if (a != std::floor(a) || k < 0 || k >= v.num_actions())
            throw ValidationError("policy_prob: discrete action index out of range");
          return v.rows[v.region_of(x[0])][k];
        } else if constexpr (std::is_same_v<T, GaussianLinearPolicy>) {
          const double mu = v.coef * x[0] + v.shift;
          const double z = (a - mu) / v.stddev;
          return std::exp(-0.5 * z * z) / (v.stddev * std::sqrt(2.0 * std::numbers::pi));
        } else if constexpr (std::is_same_v<T, DeterministicPolicy>) {
          return v.action_fn(x) == a ? 1.0 : 0.0;
        } else {  // ClassifierEpsilonPolicy
          const int k = static_cast<int>(a);
          if (a != std::floor(a) || k < 0 || k >= v.num_actions)
            throw ValidationError("policy_prob: discrete action index out of range");
          if (v.num_actions == 1) return 1.0;
          return k == v.favored_fn(x) ? v.eps : (1.0 - v.eps) / (v.num_actions - 1);
        }
      },
      p);
}

double policy_sample(const PolicySpec& p, const std::vector<double>& x, Rng& rng) {
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TabularRulePolicy>) {
          const auto& row = v.rows[v.region_of(x[0])];
          return static_cast<double>(rng.categorical(row));
        } else if constexpr (std::is_same_v<T, GaussianLinearPolicy>) {
          return rng.normal(v.coef * x[0] + v.shift, v.stddev);
        } else if constexpr (std::is_same_v<T, DeterministicPolicy>) {
          return v.action_fn(x);
        } else {
          if (v.num_actions == 1) return 0.0;
          const int favored = v.favored_fn(x);
          if (rng.uniform() < v.eps) return static_cast<double>(favored);
          // uniform over the K-1 non-favored actions
          int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(v.num_actions - 1)));
          if (j >= favored) ++j;
          return static_cast<double>(j);
        }
      },
      p);
}

void validate_policy(const PolicySpec& p) {
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TabularRulePolicy>) {
          if (v.rows.empty() || v.upper_bounds.size() != v.rows.size())
            throw ValidationError("TabularRulePolicy: bounds/rows size mismatch");
          for (std::size_t i = 1; i < v.upper_bounds.size(); ++i)
            if (!(v.upper_bounds[i] > v.upper_bounds[i - 1]))
              throw ValidationError("TabularRulePolicy: bounds must be ascending");
          const std::size_t k = v.rows[0].size();
          for (const auto& row : v.rows) {
            if (row.size() != k)
              throw ValidationError("TabularRulePolicy: ragged probability rows");
            double sum = 0.0;
            for (double q : row) {
              if (q < 0.0) throw ValidationError("TabularRulePolicy: negative probability");
              sum += q;
            }
            if (std::fabs(sum - 1.0) > kProbTol)
              throw ValidationError("TabularRulePolicy: row probabilities must sum to 1");
          }
        } else if constexpr (std::is_same_v<T, GaussianLinearPolicy>) {
          if (!(v.stddev > 0.0))
            throw ValidationError("GaussianLinearPolicy: std must be positive");
        } else if constexpr (std::is_same_v<T, DeterministicPolicy>) {
          if (!v.action_fn) throw ValidationError("DeterministicPolicy: missing action rule");
        } else {
          if (v.num_actions < 1)
            throw ValidationError("ClassifierEpsilonPolicy: need at least one action");
          if (!(v.eps >= 0.0 && v.eps <= 1.0))
            throw ValidationError("ClassifierEpsilonPolicy: eps must lie in [0, 1]");
          if (!v.favored_fn)
            throw ValidationError("ClassifierEpsilonPolicy: missing favored-action rule");
        }
      },
      p);
}

TabularRulePolicy region_epsilon_policy(double eps) {
  if (!(eps > 0.0 && eps < 1.0 / 3.0))
    throw ValidationError("region_epsilon_policy: eps must lie in (0, 1/3)");
  TabularRulePolicy p;
  p.upper_bounds = {1.0, 2.0, 3.0, std::numeric_limits<double>::infinity()};
  // favored action index per band, escalating with |x|
  const int favored[4] = {0, 1, 2, 3};
  for (int r = 0; r < 4; ++r) {
    std::vector<double> row(4, eps);
    row[favored[r]] = 1.0 - 3.0 * eps;
    p.rows.push_back(std::move(row));
  }
  return p;
}

PolicySpec policy_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("policy_from_json: ") + e.what());
  }
  if (!j.is_object() || !j.contains("kind"))
    throw ValidationError("policy_from_json: expected an object with a 'kind' key");
  const std::string kind = j.at("kind").get<std::string>();
  try {
    if (kind == "region_eps") {
      PolicySpec p = region_epsilon_policy(j.at("eps").get<double>());
      validate_policy(p);
      return p;
    }
    if (kind == "tabular_rule") {
      TabularRulePolicy p;
      for (const auto& b : j.at("upper_bounds")) {
        // open-ended top band serialized as the string "inf"
        if (b.is_string() && b.get<std::string>() == "inf")
          p.upper_bounds.push_back(std::numeric_limits<double>::infinity());
        else
          p.upper_bounds.push_back(b.get<double>());
      }
      p.rows = j.at("rows").get<std::vector<std::vector<double>>>();
      PolicySpec spec = p;
      validate_policy(spec);
      return spec;
    }
    if (kind == "gaussian_linear") {
      GaussianLinearPolicy p;
      p.coef = j.at("coef").get<double>();
      p.shift = j.at("shift").get<double>();
      p.stddev = j.value("std", 1.0);
      PolicySpec spec = p;
      validate_policy(spec);
      return spec;
    }
    if (kind == "deterministic") {
      if (j.contains("action_index"))
        return DeterministicPolicy::constant_discrete(j.at("action_index").get<int>(),
                                                      j.at("num_actions").get<int>());
      return DeterministicPolicy::constant_continuous(j.at("action_value").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("policy_from_json: " + kind + ": " + e.what());
  }
  throw ValidationError("policy_from_json: unknown policy kind '" + kind + "'");
}

std::string policy_to_json(const PolicySpec& p) {
  nlohmann::json j;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, TabularRulePolicy>) {
          j["kind"] = "tabular_rule";
          nlohmann::json bounds = nlohmann::json::array();
          for (double b : v.upper_bounds) {
            if (std::isinf(b))
              bounds.push_back("inf");
            else
              bounds.push_back(b);
          }
          j["upper_bounds"] = bounds;
          j["rows"] = v.rows;
        } else if constexpr (std::is_same_v<T, GaussianLinearPolicy>) {
          j["kind"] = "gaussian_linear";
          j["coef"] = v.coef;
          j["shift"] = v.shift;
          j["std"] = v.stddev;
        } else if constexpr (std::is_same_v<T, DeterministicPolicy>) {
          j["kind"] = "deterministic";
          if (v.kind == ActionKind::Discrete) {
            j["action_index"] = static_cast<int>(v.action_fn(std::vector<double>{0.0}));
            j["num_actions"] = v.num_actions;
          } else {
            j["action_value"] = v.action_fn(std::vector<double>{0.0});
          }
        } else {
          throw ValidationError("policy_to_json: classifier policies are not serializable");
        }
      },
      p);
  return j.dump();
}

}  // namespace coppkit
