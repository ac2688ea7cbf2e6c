#include "coppkit/prediction_set.hpp"

#include <algorithm>
#include <cmath>

namespace coppkit {

PredictionSet PredictionSet::grid_set(std::vector<double> accepted, double spacing,
                                      bool unbounded) {
  if (!(spacing > 0.0)) throw ValidationError("PredictionSet: grid spacing must be positive");
  if (!std::is_sorted(accepted.begin(), accepted.end()))
    throw ValidationError("PredictionSet: accepted grid points must be sorted");
  PredictionSet s;
  s.kind_ = SetKind::IntervalGrid;
  s.accepted_ = std::move(accepted);
  s.spacing_ = spacing;
  s.unbounded_ = unbounded;
  return s;
}

PredictionSet PredictionSet::label_set(std::vector<int> labels, bool unbounded) {
  std::sort(labels.begin(), labels.end());
  if (std::adjacent_find(labels.begin(), labels.end()) != labels.end())
    throw ValidationError("PredictionSet: duplicate labels");
  PredictionSet s;
  s.kind_ = SetKind::LabelSet;
  s.labels_ = std::move(labels);
  s.unbounded_ = unbounded;
  return s;
}

bool PredictionSet::empty() const {
  return kind_ == SetKind::IntervalGrid ? accepted_.empty() : labels_.empty();
}

bool PredictionSet::contains(double y) const {
  if (kind_ == SetKind::LabelSet) {
    const int label = static_cast<int>(y);
    return std::binary_search(labels_.begin(), labels_.end(), label);
  }
  if (accepted_.empty()) return false;
  auto it = std::lower_bound(accepted_.begin(), accepted_.end(), y);
  const double half = 0.5 * spacing_;
  if (it != accepted_.end() && std::fabs(*it - y) <= half) return true;
  if (it != accepted_.begin() && std::fabs(*(it - 1) - y) <= half) return true;
  return false;
}

double PredictionSet::grid_measure_length() const {
  if (kind_ == SetKind::LabelSet) return static_cast<double>(labels_.size());
  return static_cast<double>(accepted_.size()) * spacing_;
}

double PredictionSet::hull_length() const {
  if (kind_ == SetKind::LabelSet) return static_cast<double>(labels_.size());
  if (accepted_.empty()) return 0.0;
  return (accepted_.back() - accepted_.front()) + spacing_;
}

}  // namespace coppkit
