#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "coppkit/envs.hpp"
#include "coppkit/models.hpp"
#include "coppkit/policy.hpp"

namespace coppkit {

enum class WeightKind { Exact, MonteCarlo, ExactSum, Regression };

struct WeightDiagnostics {
  std::atomic<std::uint64_t> floor_hits{0};
};

/// Likelihood-ratio function w(x, y) between the outcome laws under the
/// target and behavior policies.
///
/// Evaluation is curried: `at(x)` does the per-x work once (action draws,
/// network passes, policy probabilities) and returns a cheap y-evaluator,
/// which is what grid construction needs. Evaluators are pure and thread-safe;
/// only the floor-hit counter mutates, atomically.
class WeightFn {
 public:
  using YEvaluator = std::function<double(double)>;
  using Curry = std::function<YEvaluator(const std::vector<double>&)>;

  WeightFn() = default;
  WeightFn(Curry curry, WeightKind kind, int mc_draws = 0,
           std::shared_ptr<WeightDiagnostics> diag = nullptr)
      : curry_(std::move(curry)),
        kind_(kind),
        mc_draws_(mc_draws),
        diag_(diag ? std::move(diag) : std::make_shared<WeightDiagnostics>()) {}

  YEvaluator at(const std::vector<double>& x) const { return curry_(x); }
  double operator()(const std::vector<double>& x, double y) const { return curry_(x)(y); }

  WeightKind kind() const { return kind_; }
  int mc_draws() const { return mc_draws_; }
  std::uint64_t floor_hits() const { return diag_->floor_hits.load(); }
  const std::shared_ptr<WeightDiagnostics>& diagnostics() const { return diag_; }

 private:
  Curry curry_;
  WeightKind kind_ = WeightKind::Exact;
  int mc_draws_ = 0;
  std::shared_ptr<WeightDiagnostics> diag_;
};

/// w identically one (no policy shift).
WeightFn unit_weight();

/// Ground-truth weights from a synthetic env's closed-form outcome laws:
/// w(x,y) = P^target(y|x) / P^behavior(y|x), mixing over actions exactly.
/// Denominators below 1e-300 are floored and counted.
WeightFn exact_weight(const SyntheticEnv& env, const PolicySpec& target,
                      const PolicySpec& behavior);

/// Monte Carlo weight estimate from fitted models: both mixture integrals are
/// replaced by means over h action draws (target actions from the known
/// target policy, behavior actions from the fitted behavior model). The draw
/// streams are a pure function of (seed, x), so evaluation is deterministic.
/// `share_draws` reuses the behavior draws in the numerator, which is only
/// meaningful when target and fitted behavior coincide.
WeightFn mc_weight(std::shared_ptr<const GaussianConditional> p_hat,
                   std::shared_ptr<const BehaviorModel> pi_b_hat, const PolicySpec& target,
                   int h, std::uint64_t seed, bool share_draws = false);

/// Deterministic replacement of the Monte Carlo sum for finite action spaces:
/// w(x,y) = sum_a target(a|x) p_hat(y|x,a) / sum_a pi_b_hat(a|x) p_hat(y|x,a),
/// denominator floored at 1e-12.
WeightFn exact_sum_weight(std::shared_ptr<const GaussianConditional> p_hat,
                          std::shared_ptr<const BehaviorModel> pi_b_hat,
                          const PolicySpec& target);

/// Generic finite-action mixture ratio over caller-supplied conditionals;
/// backs the discrete-outcome path where p(y|x,a) is a probability mass.
WeightFn mixture_ratio_weight(
    int num_actions, std::function<double(const std::vector<double>&, int)> target_prob,
    std::function<double(const std::vector<double>&, int)> behavior_prob,
    std::function<double(const std::vector<double>&, int, double)> cond_density,
    WeightKind kind = WeightKind::ExactSum);

/// Exact env weights with the conditional density multiplied by a smooth
/// deterministic factor gamma(x, a, y) in [1/gamma_bound, gamma_bound].
/// Used to study coverage under bounded model error.
WeightFn gamma_perturbed_weight(const SyntheticEnv& env, const PolicySpec& target,
                                const PolicySpec& behavior, double gamma_bound,
                                std::uint64_t seed);

/// Regression route: fits f(x, y) to the observed ratio targets
/// target(A|X) / pi_b_hat(A|X) by least squares; the returned weight clamps
/// the network output at zero.
WeightFn fit_direct_weight(const BanditDataset& train, const PolicySpec& target,
                           const BehaviorModel& pi_b_hat, const MlpSpec& spec,
                           const TrainOpts& opts);

struct DeltaWEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t sample_size = 0;
};

/// Half the mean absolute error between the estimated and true weights over a
/// behavior-law sample, after rescaling the estimate to unit empirical mean
/// (the normalization that makes the quantity scale-free).
DeltaWEstimate estimate_delta_w(const WeightFn& w_hat, const WeightFn& w_true,
                                const BanditDataset& sample);

}  // namespace coppkit
