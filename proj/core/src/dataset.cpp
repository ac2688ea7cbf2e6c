#include "coppkit/dataset.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace coppkit {

namespace {

bool is_integral_value(double v) { return std::isfinite(v) && v == std::floor(v); }

}  // namespace

BanditDataset::BanditDataset(std::vector<LoggedSample> samples, ActionKind action_kind,
                             OutcomeKind outcome_kind, int num_actions, int num_labels)
    : samples_(std::move(samples)),
      action_kind_(action_kind),
      outcome_kind_(outcome_kind),
      num_actions_(num_actions),
      num_labels_(num_labels) {
  if (samples_.empty()) throw ValidationError("BanditDataset: empty sample list");
  dim_ = static_cast<int>(samples_.front().x.size());
  if (dim_ < 1) throw ValidationError("BanditDataset: covariate dimension must be >= 1");
  if (action_kind_ == ActionKind::Discrete && num_actions_ < 1)
    throw ValidationError("BanditDataset: discrete actions need num_actions >= 1");
  if (outcome_kind_ == OutcomeKind::Discrete && num_labels_ < 1)
    throw ValidationError("BanditDataset: discrete outcomes need num_labels >= 1");
  if (action_kind_ == ActionKind::Continuous) num_actions_ = 0;
  if (outcome_kind_ == OutcomeKind::Continuous) num_labels_ = 0;

  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const LoggedSample& s = samples_[i];
    if (static_cast<int>(s.x.size()) != dim_)
      throw ValidationError("BanditDataset: inconsistent covariate dimension at sample " +
                            std::to_string(i));
    if (action_kind_ == ActionKind::Discrete) {
      if (!is_integral_value(s.action) || s.action < 0.0 || s.action >= num_actions_)
        throw ValidationError("BanditDataset: action index out of range at sample " +
                              std::to_string(i));
    }
    if (outcome_kind_ == OutcomeKind::Discrete) {
      if (!is_integral_value(s.y) || s.y < 0.0 || s.y >= num_labels_)
        throw ValidationError("BanditDataset: label index out of range at sample " +
                              std::to_string(i));
    }
  }
}

std::vector<double> BanditDataset::outcomes() const {
  std::vector<double> ys;
  ys.reserve(samples_.size());
  for (const auto& s : samples_) ys.push_back(s.y);
  return ys;
}

SplitResult split_dataset(const BanditDataset& data, const SplitSpec& spec) {
  if (spec.m < 1 || spec.n < 1)
    throw ValidationError("split_dataset: m and n must both be >= 1");
  if (spec.m + spec.n > data.size())
    throw ValidationError("split_dataset: m + n = " + std::to_string(spec.m + spec.n) +
                          " exceeds dataset size " + std::to_string(data.size()));

  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(spec.seed);
  for (std::size_t i = idx.size() - 1; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(idx[i], idx[j]);
  }

  std::vector<LoggedSample> train, cal;
  train.reserve(spec.m);
  cal.reserve(spec.n);
  for (std::size_t i = 0; i < spec.m; ++i) train.push_back(data[idx[i]]);
  for (std::size_t i = spec.m; i < spec.m + spec.n; ++i) cal.push_back(data[idx[i]]);

  return SplitResult{
      BanditDataset(std::move(train), data.action_kind(), data.outcome_kind(),
                    data.num_actions(), data.num_labels()),
      BanditDataset(std::move(cal), data.action_kind(), data.outcome_kind(),
                    data.num_actions(), data.num_labels())};
}

}  // namespace coppkit
