#include "coppkit/conformal.hpp"

#include <algorithm>
#include <cmath>

namespace coppkit {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double cqr_score(const QuantilePair& q, const std::vector<double>& x, double y) {
  const auto [lo, hi] = q.bounds(x);
  return std::max(lo - y, y - hi);
}

ScoreFn make_cqr_score(std::shared_ptr<const QuantilePair> q) {
  return ScoreFn(
      [q](const std::vector<double>& x) -> ScoreFn::YEvaluator {
        const auto [lo, hi] = q->bounds(x);
        return [lo, hi](double y) { return std::max(lo - y, y - hi); };
      },
      ScoreFn::Kind::Cqr);
}

double discrete_cumprob_score(std::span<const double> pyx, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= pyx.size())
    throw ValidationError("discrete_cumprob_score: label out of range");
  double sum = 0.0;
  for (double p : pyx) sum += p;
  if (std::fabs(sum - 1.0) > 1e-6)
    throw ValidationError("discrete_cumprob_score: probabilities must sum to 1");
  const double py = pyx[static_cast<std::size_t>(y)];
  double score = 0.0;
  for (double p : pyx)
    if (p >= py) score += p;
  return score;
}

ScoreFn make_discrete_score(
    std::function<std::vector<double>(const std::vector<double>&)> label_probs) {
  return ScoreFn(
      [label_probs](const std::vector<double>& x) -> ScoreFn::YEvaluator {
        std::vector<double> pyx = label_probs(x);
        return [pyx = std::move(pyx)](double y) {
          return discrete_cumprob_score(pyx, static_cast<int>(y));
        };
      },
      ScoreFn::Kind::DiscreteCumProb);
}

std::vector<CalibrationRecord> score_dataset(const BanditDataset& cal, const ScoreFn& score) {
  std::vector<CalibrationRecord> records;
  records.reserve(cal.size());
  for (const auto& s : cal.samples()) {
    CalibrationRecord r;
    r.x = s.x;
    r.y = s.y;
    r.score = score(s.x, s.y);
    if (!std::isfinite(r.score))
      throw NumericError("score_dataset: non-finite nonconformity score");
    records.push_back(std::move(r));
  }
  return records;
}

Grid build_grid(const std::vector<double>& calibration_outcomes, const GridSpec& spec) {
  if (calibration_outcomes.empty())
    throw ValidationError("build_grid: no calibration outcomes");
  const auto [mn_it, mx_it] =
      std::minmax_element(calibration_outcomes.begin(), calibration_outcomes.end());
  double lo = *mn_it, hi = *mx_it;
  double span = hi - lo;
  if (span <= 0.0) span = 1.0;  // degenerate outcomes: pad to a unit window
  lo -= spec.margin * span;
  hi += spec.margin * span;
  return build_grid_range(lo, hi, spec.count);
}

Grid build_grid_range(double lo, double hi, int count) {
  if (count < 2) throw ValidationError("build_grid: need at least two grid points");
  if (!(lo < hi)) throw ValidationError("build_grid: grid range must satisfy lo < hi");
  Grid g;
  g.spacing = (hi - lo) / static_cast<double>(count - 1);
  g.points.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    g.points[static_cast<std::size_t>(i)] = lo + g.spacing * static_cast<double>(i);
  return g;
}

PreparedCalibration::PreparedCalibration(const std::vector<CalibrationRecord>& records,
                                         const WeightFn& w_hat) {
  if (records.empty())
    throw ValidationError("PreparedCalibration: calibration records are empty");
  n_ = records.size();

  std::vector<std::pair<double, double>> scored;  // (score, weight)
  scored.reserve(n_);
  for (const auto& r : records) {
    const double w = w_hat(r.x, r.y);
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ValidationError("PreparedCalibration: weights must be finite and nonnegative");
    scored.emplace_back(r.score, w);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  double cum = 0.0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    cum += scored[i].second;
    if (i + 1 == scored.size() || scored[i + 1].first != scored[i].first) {
      group_score_.push_back(scored[i].first);
      group_cum_.push_back(cum);
    }
  }
  total_ = cum;
}

double PreparedCalibration::quantile(double w_test, double level) const {
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("weighted quantile: level must lie in (0, 1)");
  if (!(w_test >= 0.0) || !std::isfinite(w_test))
    throw ValidationError("weighted quantile: test weight must be finite and nonnegative");
  const double denom = total_ + w_test;
  if (denom <= 0.0)
    throw DegenerateWeightsError("weighted quantile: all weights are zero after flooring");

  const double threshold = level * denom;
  auto it = std::lower_bound(group_cum_.begin(), group_cum_.end(), threshold);
  if (it == group_cum_.end()) return kInf;
  return group_score_[static_cast<std::size_t>(it - group_cum_.begin())];
}

double weighted_quantile(const std::vector<CalibrationRecord>& records,
                         const WeightFn& w_hat, const std::vector<double>& x, double y,
                         double level) {
  PreparedCalibration prep(records, w_hat);
  return prep.quantile(w_hat(x, y), level);
}

ConformalEngine::ConformalEngine(std::vector<CalibrationRecord> records, WeightFn w_hat)
    : w_hat_(std::move(w_hat)), prepared_(records, w_hat_) {}

PredictionSet ConformalEngine::predict_grid(const std::vector<double>& x_test,
                                            const Grid& grid, const ScoreFn& score,
                                            double alpha) const {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("predict_grid: alpha must lie in (0, 1)");
  const double level = 1.0 - alpha;
  const auto w_eval = w_hat_.at(x_test);
  const auto s_eval = score.at(x_test);

  std::vector<double> accepted;
  bool any_infinite = false;
  for (double g : grid.points) {
    const double eta = prepared_.quantile(w_eval(g), level);
    if (std::isinf(eta)) any_infinite = true;
    if (s_eval(g) <= eta) accepted.push_back(g);
  }
  const bool unbounded = any_infinite && accepted.size() == grid.points.size();
  return PredictionSet::grid_set(std::move(accepted), grid.spacing, unbounded);
}

PredictionSet ConformalEngine::predict_labels(const std::vector<double>& x_test,
                                              int num_labels, const ScoreFn& score,
                                              double alpha) const {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("predict_labels: alpha must lie in (0, 1)");
  if (num_labels < 1) throw ValidationError("predict_labels: need >= 1 label");
  const double level = 1.0 - alpha;
  const auto w_eval = w_hat_.at(x_test);
  const auto s_eval = score.at(x_test);

  std::vector<int> accepted;
  bool any_infinite = false;
  for (int y = 0; y < num_labels; ++y) {
    const double yd = static_cast<double>(y);
    const double eta = prepared_.quantile(w_eval(yd), level);
    if (std::isinf(eta)) any_infinite = true;
    if (s_eval(yd) <= eta) accepted.push_back(y);
  }
  const bool unbounded = any_infinite && static_cast<int>(accepted.size()) == num_labels;
  return PredictionSet::label_set(std::move(accepted), unbounded);
}

PredictionSet copp_predict_continuous(const std::vector<double>& x_test, const Grid& grid,
                                      const ScoreFn& score, const WeightFn& w_hat,
                                      const std::vector<CalibrationRecord>& records,
                                      double alpha) {
  return ConformalEngine(records, w_hat).predict_grid(x_test, grid, score, alpha);
}

PredictionSet copp_predict_discrete(const std::vector<double>& x_test, int num_labels,
                                    const ScoreFn& score, const WeightFn& w_hat,
                                    const std::vector<CalibrationRecord>& records,
                                    double alpha) {
  return ConformalEngine(records, w_hat).predict_labels(x_test, num_labels, score, alpha);
}

PredictionSet standard_cp(const std::vector<double>& x_test, const Grid& grid,
                          const ScoreFn& score,
                          const std::vector<CalibrationRecord>& records, double alpha) {
  return copp_predict_continuous(x_test, grid, score, unit_weight(), records, alpha);
}

PredictionSet union_cp(const std::vector<double>& x_test, const Grid& grid,
                       const std::vector<ActionCalibration>& per_action, double alpha,
                       int* skipped_actions) {
  if (per_action.empty()) throw ValidationError("union_cp: no per-action calibration");
  if (skipped_actions) *skipped_actions = 0;

  std::vector<char> in_union(grid.points.size(), 0);
  bool unbounded = false;
  bool any = false;
  for (const auto& ac : per_action) {
    if (ac.records.empty()) {
      if (skipped_actions) ++*skipped_actions;
      continue;
    }
    any = true;
    const PredictionSet s = standard_cp(x_test, grid, ac.score, ac.records, alpha);
    unbounded = unbounded || s.unbounded();
    std::size_t j = 0;
    for (std::size_t i = 0; i < grid.points.size() && j < s.accepted_points().size(); ++i) {
      if (grid.points[i] == s.accepted_points()[j]) {
        in_union[i] = 1;
        ++j;
      }
    }
  }
  if (!any)
    throw ValidationError("union_cp: every action had an empty calibration subset");

  std::vector<double> accepted;
  for (std::size_t i = 0; i < grid.points.size(); ++i)
    if (in_union[i]) accepted.push_back(grid.points[i]);
  unbounded = unbounded && accepted.size() == grid.points.size();
  return PredictionSet::grid_set(std::move(accepted), grid.spacing, unbounded);
}

PredictionSet class_balanced_copp(const std::vector<double>& x_test,
                                  const std::map<int, std::vector<CalibrationRecord>>&
                                      per_label_records,
                                  int num_labels, const ScoreFn& score, const WeightFn& w_hat,
                                  double alpha, int* empty_labels) {
  ClassBalancedEngine engine(per_label_records, w_hat, num_labels);
  return engine.predict(x_test, score, alpha, empty_labels);
}

ClassBalancedEngine::ClassBalancedEngine(
    const std::map<int, std::vector<CalibrationRecord>>& per_label_records, WeightFn w_hat,
    int num_labels)
    : w_hat_(std::move(w_hat)), num_labels_(num_labels) {
  if (num_labels_ < 1) throw ValidationError("class_balanced_copp: need >= 1 label");
  per_label_.resize(static_cast<std::size_t>(num_labels_));
  for (int y = 0; y < num_labels_; ++y) {
    auto it = per_label_records.find(y);
    if (it != per_label_records.end() && !it->second.empty())
      per_label_[static_cast<std::size_t>(y)] =
          std::make_unique<PreparedCalibration>(it->second, w_hat_);
  }
}

PredictionSet ClassBalancedEngine::predict(const std::vector<double>& x_test,
                                           const ScoreFn& score, double alpha,
                                           int* empty_labels) const {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("class_balanced_copp: alpha must lie in (0, 1)");
  if (empty_labels) *empty_labels = 0;
  const double level = 1.0 - alpha;
  const auto w_eval = w_hat_.at(x_test);
  const auto s_eval = score.at(x_test);

  std::vector<int> accepted;
  bool any_infinite = false;
  for (int y = 0; y < num_labels_; ++y) {
    const double yd = static_cast<double>(y);
    const auto& prep = per_label_[static_cast<std::size_t>(y)];
    double eta = kInf;
    if (!prep) {
      if (empty_labels) ++*empty_labels;
    } else {
      eta = prep->quantile(w_eval(yd), level);
    }
    if (std::isinf(eta)) any_infinite = true;
    if (s_eval(yd) <= eta) accepted.push_back(y);
  }
  const bool unbounded = any_infinite && static_cast<int>(accepted.size()) == num_labels_;
  return PredictionSet::label_set(std::move(accepted), unbounded);
}

}  // namespace coppkit
