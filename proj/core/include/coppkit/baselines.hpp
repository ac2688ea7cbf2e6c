#pragma once

#include <functional>
#include <vector>

#include "coppkit/dataset.hpp"
#include "coppkit/models.hpp"
#include "coppkit/policy.hpp"
#include "coppkit/prediction_set.hpp"

namespace coppkit {

/// Self-normalized weighted step CDF over logged outcomes.
class WeightedCdf {
 public:
  /// Values need not be sorted; weights must be nonnegative with positive sum.
  WeightedCdf(std::vector<double> values, std::vector<double> weights);

  double cdf(double t) const;
  /// inf{ t : F(t) >= beta } for beta in (0, 1].
  double quantile(double beta) const;
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<double> values_;  // ascending
  std::vector<double> cum_;     // normalized cumulative weights
};

/// Importance-weighted outcome CDF under the target policy, with ratios
/// target(a|x) / behavior_prob(x, a). Behavior probabilities below 1e-12 are
/// floored (counted into *floor_hits when given).
WeightedCdf wis_cdf(const BanditDataset& data, const PolicySpec& target,
                    const std::function<double(const std::vector<double>&, double)>&
                        behavior_prob,
                    std::uint64_t* floor_hits = nullptr);

WeightedCdf wis_cdf(const BanditDataset& data, const PolicySpec& target,
                    const BehaviorModel& pi_b_hat, std::uint64_t* floor_hits = nullptr);

/// Central [alpha/2, 1-alpha/2] interval of the weighted CDF; the same
/// interval is returned for every test covariate.
Interval wis_interval(const WeightedCdf& cdf, double alpha);

/// Sampling route through the fitted outcome model: draws `ell` actions from
/// the target policy and one outcome per action from p_hat, then takes the
/// empirical central interval of the draws.
Interval sba_interval(const std::vector<double>& x_test, const PolicySpec& target,
                      const GaussianConditional& p_hat, int ell, double alpha, Rng& rng);

}  // namespace coppkit
