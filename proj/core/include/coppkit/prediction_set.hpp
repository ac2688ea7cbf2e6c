#pragma once

#include <vector>

#include "coppkit/errors.hpp"

namespace coppkit {

enum class SetKind { IntervalGrid, LabelSet };

/// Conformal prediction set: either the accepted cells of a regular outcome
/// grid or a set of discrete labels. `unbounded` records that the conformal
/// quantile hit the +infinity atom and the full grid / label set came back.
class PredictionSet {
 public:
  static PredictionSet grid_set(std::vector<double> accepted, double spacing, bool unbounded);
  static PredictionSet label_set(std::vector<int> labels, bool unbounded);

  SetKind kind() const { return kind_; }
  bool unbounded() const { return unbounded_; }

  const std::vector<double>& accepted_points() const { return accepted_; }
  double spacing() const { return spacing_; }

  const std::vector<int>& labels() const { return labels_; }

  bool empty() const;
  /// Membership test: within half a spacing of an accepted grid point, or
  /// exact label membership.
  bool contains(double y) const;

  /// Accepted-cell measure: count * spacing. Label sets report cardinality.
  double grid_measure_length() const;
  /// Convex-hull extent of the accepted cells (secondary diagnostic).
  double hull_length() const;

 private:
  SetKind kind_ = SetKind::IntervalGrid;
  bool unbounded_ = false;
  std::vector<double> accepted_;  // sorted ascending
  double spacing_ = 0.0;
  std::vector<int> labels_;       // sorted, unique
};

/// Plain closed interval used by the non-conformal baselines and the oracle.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double y) const { return y >= lo && y <= hi; }
  double length() const { return hi - lo; }
};

}  // namespace coppkit
