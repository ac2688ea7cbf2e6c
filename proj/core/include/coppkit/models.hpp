#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "coppkit/dataset.hpp"
#include "coppkit/nn.hpp"

namespace coppkit {

/// Quantile-regression check loss. beta must lie in (0, 1).
double pinball_loss(double prediction, double y, double beta);

/// Lower/upper conditional-quantile estimators of the logged outcome given x.
/// Crossing is repaired at prediction time by clamping the upper estimate.
class QuantilePair {
 public:
  QuantilePair() = default;
  QuantilePair(Mlp lo, Mlp hi, double alpha_lo, double alpha_hi);

  double lo(const std::vector<double>& x) const;
  /// Upper quantile after the clamp hi := max(hi, lo).
  double hi(const std::vector<double>& x) const;
  std::pair<double, double> bounds(const std::vector<double>& x) const;

  double alpha_lo() const { return alpha_lo_; }
  double alpha_hi() const { return alpha_hi_; }
  const Mlp& lo_net() const { return lo_; }
  const Mlp& hi_net() const { return hi_; }

 private:
  Mlp lo_, hi_;
  double alpha_lo_ = 0.05, alpha_hi_ = 0.95;
};

/// Conditional outcome density N(mu(x,a), sigma(x,a)^2); sigma goes through
/// softplus plus a fixed positive floor.
class GaussianConditional {
 public:
  static constexpr double kSigmaFloor = 1e-3;

  GaussianConditional() = default;
  GaussianConditional(Mlp mu, Mlp sigma_raw, ActionKind action_kind, int num_actions);

  double mean(const std::vector<double>& x, double a) const;
  double sigma(const std::vector<double>& x, double a) const;
  double log_density(const std::vector<double>& x, double a, double y) const;
  double density(const std::vector<double>& x, double a, double y) const;
  /// One call returning (mu, sigma); avoids a duplicated forward pass when a
  /// caller evaluates many outcomes at a fixed (x, a).
  std::pair<double, double> mean_sigma(const std::vector<double>& x, double a) const;

  ActionKind action_kind() const { return action_kind_; }
  int num_actions() const { return num_actions_; }
  const Mlp& mu_net() const { return mu_; }
  const Mlp& sigma_net() const { return sigma_raw_; }

  Eigen::VectorXd encode(const std::vector<double>& x, double a) const;

 private:
  Mlp mu_, sigma_raw_;
  ActionKind action_kind_ = ActionKind::Discrete;
  int num_actions_ = 0;
};

/// Classifier network x -> probability vector over K classes.
class SoftmaxPolicyModel {
 public:
  SoftmaxPolicyModel() = default;
  SoftmaxPolicyModel(Mlp net, int num_classes);

  Eigen::VectorXd probs(const std::vector<double>& x) const;
  double prob(const std::vector<double>& x, int k) const;
  int argmax(const std::vector<double>& x) const;
  int num_classes() const { return num_classes_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
  int num_classes_ = 0;
};

/// Gaussian density over a continuous action: N(mean(x), std^2) with a std
/// fitted from residuals.
class GaussianPolicyModel {
 public:
  GaussianPolicyModel() = default;
  GaussianPolicyModel(Mlp mean_net, double stddev);

  double mean(const std::vector<double>& x) const;
  double stddev() const { return stddev_; }
  double density(const std::vector<double>& x, double a) const;
  double sample(const std::vector<double>& x, Rng& rng) const;
  const Mlp& net() const { return mean_net_; }

 private:
  Mlp mean_net_;
  double stddev_ = 1.0;
};

using BehaviorModel = std::variant<SoftmaxPolicyModel, GaussianPolicyModel>;

/// Probability (density) of action `a` under a fitted behavior model.
double behavior_prob(const BehaviorModel& m, const std::vector<double>& x, double a);
double behavior_sample(const BehaviorModel& m, const std::vector<double>& x, Rng& rng);

/// Conditional label distribution P(y | x, a) over L labels for discrete
/// outcomes; same classifier machinery with the action appended to the input.
class SoftmaxConditional {
 public:
  SoftmaxConditional() = default;
  SoftmaxConditional(Mlp net, ActionKind action_kind, int num_actions, int num_labels);

  Eigen::VectorXd probs(const std::vector<double>& x, double a) const;
  int num_labels() const { return num_labels_; }
  ActionKind action_kind() const { return action_kind_; }
  int num_actions() const { return num_actions_; }
  const Mlp& net() const { return net_; }

  Eigen::VectorXd encode(const std::vector<double>& x, double a) const;

 private:
  Mlp net_;
  ActionKind action_kind_ = ActionKind::Discrete;
  int num_actions_ = 0;
  int num_labels_ = 0;
};

// ---- fitting ------------------------------------------------------------

/// Trains lower/upper quantile networks with (optionally weighted) pinball
/// loss. Weights must be nonnegative and not all zero; all-equal weights take
/// the unweighted path. Throws TrainingError on divergence.
QuantilePair fit_quantile_pair(const BanditDataset& train, double alpha_lo, double alpha_hi,
                               const MlpSpec& spec, const TrainOpts& opts,
                               const std::optional<std::vector<double>>& sample_weights = {});

/// Same as above on raw (x, y) pairs; used for per-action quantile fits.
QuantilePair fit_quantile_pair_xy(const std::vector<std::vector<double>>& xs,
                                  const std::vector<double>& ys, double alpha_lo,
                                  double alpha_hi, const MlpSpec& spec, const TrainOpts& opts,
                                  const std::optional<std::vector<double>>& sample_weights = {});

GaussianConditional fit_gaussian_conditional(const BanditDataset& train, const MlpSpec& spec,
                                             const TrainOpts& opts);

BehaviorModel fit_behavior_policy(const BanditDataset& train, const MlpSpec& spec,
                                  const TrainOpts& opts);

/// Multinomial classifier on raw feature/label pairs (cross-entropy).
SoftmaxPolicyModel fit_softmax_classifier(const std::vector<std::vector<double>>& xs,
                                          const std::vector<int>& labels, int num_classes,
                                          const MlpSpec& spec, const TrainOpts& opts);

SoftmaxConditional fit_softmax_conditional(const BanditDataset& train, const MlpSpec& spec,
                                           const TrainOpts& opts);

}  // namespace coppkit
