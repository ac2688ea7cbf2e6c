#pragma once

#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "coppkit/dataset.hpp"
#include "coppkit/models.hpp"
#include "coppkit/prediction_set.hpp"
#include "coppkit/weights.hpp"

namespace coppkit {

/// One calibration point: its nonconformity score plus the (x, y) pair kept
/// for weight evaluation.
struct CalibrationRecord {
  double score = 0.0;
  std::vector<double> x;
  double y = 0.0;
};

/// Nonconformity score s(x, y); curried like WeightFn so per-x work (network
/// passes) happens once per test point.
class ScoreFn {
 public:
  enum class Kind { Cqr, DiscreteCumProb };
  using YEvaluator = std::function<double(double)>;
  using Curry = std::function<YEvaluator(const std::vector<double>&)>;

  ScoreFn() = default;
  ScoreFn(Curry curry, Kind kind) : curry_(std::move(curry)), kind_(kind) {}

  YEvaluator at(const std::vector<double>& x) const { return curry_(x); }
  double operator()(const std::vector<double>& x, double y) const { return curry_(x)(y); }
  Kind kind() const { return kind_; }

 private:
  Curry curry_;
  Kind kind_ = Kind::Cqr;
};

/// max{ q_lo(x) - y, y - q_hi(x) }: negative strictly inside the band, zero on
/// its boundary.
double cqr_score(const QuantilePair& q, const std::vector<double>& x, double y);
ScoreFn make_cqr_score(std::shared_ptr<const QuantilePair> q);

/// Sum of the conditional label probabilities at least as large as the one of
/// label y (ties included, so the score of the modal label equals its own
/// probability and the least likely label scores 1).
double discrete_cumprob_score(std::span<const double> pyx, int y);
ScoreFn make_discrete_score(
    std::function<std::vector<double>(const std::vector<double>&)> label_probs);

/// Scores a calibration set.
std::vector<CalibrationRecord> score_dataset(const BanditDataset& cal, const ScoreFn& score);

/// Outcome grid request: `count` equally spaced points spanning the
/// calibration outcomes widened by `margin` times their span on each side.
struct GridSpec {
  int count = 100;
  double margin = 0.25;
};

struct Grid {
  std::vector<double> points;  // ascending, equally spaced
  double spacing = 0.0;

  double lo() const { return points.front(); }
  double hi() const { return points.back(); }
};

Grid build_grid(const std::vector<double>& calibration_outcomes, const GridSpec& spec);
Grid build_grid_range(double lo, double hi, int count);

/// Calibration scores with their conformal weights evaluated once and sorted.
///
/// Quantile convention (shared with the brute-force oracles in the tests):
/// with calibration weights w_i in ascending-score order (ties kept in input
/// order), total W = sum_i w_i and test weight w, the level-q quantile is the
/// smallest score t such that
///     sum_{V_i <= t} w_i >= q * (W + w),
/// and +infinity when no score satisfies it. This is the left-continuous
/// generalized inverse of the weighted score distribution with its +infinity
/// atom; tied scores pool their mass.
class PreparedCalibration {
 public:
  PreparedCalibration(const std::vector<CalibrationRecord>& records, const WeightFn& w_hat);

  std::size_t size() const { return n_; }
  double total_weight() const { return total_; }

  /// Quantile of the weighted score distribution seen by a test point with
  /// weight `w_test`. Throws DegenerateWeightsError when every atom
  /// (calibration and test) has zero weight.
  double quantile(double w_test, double level) const;

 private:
  std::size_t n_ = 0;
  double total_ = 0.0;
  std::vector<double> group_score_;  // unique scores ascending
  std::vector<double> group_cum_;    // cumulative weight through each group
};

/// Level-(1-alpha)... quantile of the weighted score distribution for one
/// test pair (x, y); recomputes the preparation, so use PreparedCalibration
/// in loops. Returns +infinity when the finite mass cannot reach `level`.
double weighted_quantile(const std::vector<CalibrationRecord>& records,
                         const WeightFn& w_hat, const std::vector<double>& x, double y,
                         double level);

/// Weighted conformal set over a fixed outcome grid: accepts the grid points
/// whose score does not exceed the weighted quantile at that point.
PredictionSet copp_predict_continuous(const std::vector<double>& x_test, const Grid& grid,
                                      const ScoreFn& score, const WeightFn& w_hat,
                                      const std::vector<CalibrationRecord>& records,
                                      double alpha);

/// Same construction over a finite label set.
PredictionSet copp_predict_discrete(const std::vector<double>& x_test, int num_labels,
                                    const ScoreFn& score, const WeightFn& w_hat,
                                    const std::vector<CalibrationRecord>& records,
                                    double alpha);

/// Unweighted conformal set; identical to copp_predict_* with a unit weight.
PredictionSet standard_cp(const std::vector<double>& x_test, const Grid& grid,
                          const ScoreFn& score,
                          const std::vector<CalibrationRecord>& records, double alpha);

/// Reusable engine: calibration weights are evaluated and sorted once, then
/// many test points can be served. Pure and safe to share across threads.
class ConformalEngine {
 public:
  ConformalEngine(std::vector<CalibrationRecord> records, WeightFn w_hat);

  PredictionSet predict_grid(const std::vector<double>& x_test, const Grid& grid,
                             const ScoreFn& score, double alpha) const;
  PredictionSet predict_labels(const std::vector<double>& x_test, int num_labels,
                               const ScoreFn& score, double alpha) const;

  const PreparedCalibration& prepared() const { return prepared_; }

 private:
  WeightFn w_hat_;
  PreparedCalibration prepared_;
};

/// Per-action conformalization input: that action's own score function and
/// the calibration records it scored.
struct ActionCalibration {
  ScoreFn score;
  std::vector<CalibrationRecord> records;
};

/// Union over actions of the per-action unweighted conformal sets; actions
/// with no calibration data are skipped (and counted when a counter is
/// given). The result does not depend on the target policy.
PredictionSet union_cp(const std::vector<double>& x_test, const Grid& grid,
                       const std::vector<ActionCalibration>& per_action, double alpha,
                       int* skipped_actions = nullptr);

/// Label-conditioned conformal set: each label's quantile is computed from
/// the calibration records of that label only. Labels with no records are
/// always included (their quantile is +infinity by convention).
PredictionSet class_balanced_copp(const std::vector<double>& x_test,
                                  const std::map<int, std::vector<CalibrationRecord>>&
                                      per_label_records,
                                  int num_labels, const ScoreFn& score, const WeightFn& w_hat,
                                  double alpha, int* empty_labels = nullptr);

/// class_balanced_copp with the per-label calibration prepared once.
class ClassBalancedEngine {
 public:
  ClassBalancedEngine(const std::map<int, std::vector<CalibrationRecord>>& per_label_records,
                      WeightFn w_hat, int num_labels);

  PredictionSet predict(const std::vector<double>& x_test, const ScoreFn& score,
                        double alpha, int* empty_labels = nullptr) const;

 private:
  WeightFn w_hat_;
  int num_labels_ = 0;
  std::vector<std::unique_ptr<PreparedCalibration>> per_label_;  // null = empty label
};

}  // namespace coppkit
