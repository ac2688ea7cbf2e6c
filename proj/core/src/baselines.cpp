#include "coppkit/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace coppkit {

WeightedCdf::WeightedCdf(std::vector<double> values, std::vector<double> weights) {
  if (values.empty() || values.size() != weights.size())
    throw ValidationError("WeightedCdf: empty or mismatched inputs");

  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ValidationError("WeightedCdf: weights must be finite and nonnegative");
    total += w;
  }
  if (!(total > 0.0)) throw DegenerateWeightsError("WeightedCdf: all weights are zero");

  values_.reserve(values.size());
  cum_.reserve(values.size());
  double cum = 0.0;
  for (std::size_t i : order) {
    cum += weights[i] / total;
    values_.push_back(values[i]);
    cum_.push_back(cum);
  }
  cum_.back() = 1.0;  // guard against rounding drift at the top
}

double WeightedCdf::cdf(double t) const {
  auto it = std::upper_bound(values_.begin(), values_.end(), t);
  if (it == values_.begin()) return 0.0;
  return cum_[static_cast<std::size_t>(it - values_.begin()) - 1];
}

double WeightedCdf::quantile(double beta) const {
  if (!(beta > 0.0 && beta <= 1.0))
    throw ValidationError("WeightedCdf::quantile: beta must lie in (0, 1]");
  auto it = std::lower_bound(cum_.begin(), cum_.end(), beta);
  if (it == cum_.end()) return values_.back();
  return values_[static_cast<std::size_t>(it - cum_.begin())];
}

WeightedCdf wis_cdf(const BanditDataset& data, const PolicySpec& target,
                    const std::function<double(const std::vector<double>&, double)>&
                        behavior_prob,
                    std::uint64_t* floor_hits) {
  validate_policy(target);
  constexpr double kFloor = 1e-12;
  std::vector<double> values, weights;
  values.reserve(data.size());
  weights.reserve(data.size());
  for (const auto& s : data.samples()) {
    double pb = behavior_prob(s.x, s.action);
    if (!(pb > kFloor)) {
      pb = kFloor;
      if (floor_hits) ++*floor_hits;
    }
    values.push_back(s.y);
    weights.push_back(policy_prob(target, s.x, s.action) / pb);
  }
  return WeightedCdf(std::move(values), std::move(weights));
}

WeightedCdf wis_cdf(const BanditDataset& data, const PolicySpec& target,
                    const BehaviorModel& pi_b_hat, std::uint64_t* floor_hits) {
  return wis_cdf(
      data, target,
      [&pi_b_hat](const std::vector<double>& x, double a) {
        return behavior_prob(pi_b_hat, x, a);
      },
      floor_hits);
}

Interval wis_interval(const WeightedCdf& cdf, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("wis_interval: alpha must lie in (0, 1)");
  return Interval{cdf.quantile(alpha / 2.0), cdf.quantile(1.0 - alpha / 2.0)};
}

Interval sba_interval(const std::vector<double>& x_test, const PolicySpec& target,
                      const GaussianConditional& p_hat, int ell, double alpha, Rng& rng) {
  if (ell < 2) throw ValidationError("sba_interval: need at least two draws");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("sba_interval: alpha must lie in (0, 1)");
  validate_policy(target);

  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(ell));
  for (int i = 0; i < ell; ++i) {
    const double a = policy_sample(target, x_test, rng);
    const auto [m, s] = p_hat.mean_sigma(x_test, a);
    draws.push_back(rng.normal(m, s));
  }
  std::sort(draws.begin(), draws.end());

  // inf convention on the empirical CDF, matching the conformal module
  auto quantile = [&](double beta) {
    const double n = static_cast<double>(draws.size());
    std::size_t k = static_cast<std::size_t>(std::ceil(beta * n));
    if (k == 0) k = 1;
    if (k > draws.size()) k = draws.size();
    return draws[k - 1];
  };
  return Interval{quantile(alpha / 2.0), quantile(1.0 - alpha / 2.0)};
}

}  // namespace coppkit
