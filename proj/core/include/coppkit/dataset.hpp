#pragma once

#include <cstdint>
#include <vector>

#include "coppkit/errors.hpp"
#include "coppkit/rng.hpp"

namespace coppkit {

enum class ActionKind { Discrete, Continuous };
enum class OutcomeKind { Continuous, Discrete };

/// One logged (x, a, y) triple.
///
/// For discrete action spaces `action` holds a zero-based index; for
/// continuous spaces it holds the raw action value. Discrete outcomes store
/// the label index in `y`.
struct LoggedSample {
  std::vector<double> x;
  double action = 0.0;
  double y = 0.0;

  int action_index() const { return static_cast<int>(action); }
  int label() const { return static_cast<int>(y); }
};

/// Immutable collection of logged samples with uniform shapes.
class BanditDataset {
 public:
  BanditDataset(std::vector<LoggedSample> samples, ActionKind action_kind,
                OutcomeKind outcome_kind, int num_actions = 0, int num_labels = 0);

  const std::vector<LoggedSample>& samples() const { return samples_; }
  const LoggedSample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  int dim() const { return dim_; }

  ActionKind action_kind() const { return action_kind_; }
  OutcomeKind outcome_kind() const { return outcome_kind_; }

  /// K for discrete action spaces, 0 otherwise.
  int num_actions() const { return num_actions_; }
  /// L for discrete outcome spaces, 0 otherwise.
  int num_labels() const { return num_labels_; }

  std::vector<double> outcomes() const;

 private:
  std::vector<LoggedSample> samples_;
  ActionKind action_kind_;
  OutcomeKind outcome_kind_;
  int num_actions_;
  int num_labels_;
  int dim_;
};

/// Deterministic train/calibration split request.
struct SplitSpec {
  std::size_t m = 0;         // training samples
  std::size_t n = 0;         // calibration samples
  std::uint64_t seed = 0;
};

struct SplitResult {
  BanditDataset train;
  BanditDataset cal;
};

/// Splits `data` into disjoint train/calibration subsets of sizes m and n.
/// The permutation is a pure function of `spec.seed`.
SplitResult split_dataset(const BanditDataset& data, const SplitSpec& spec);

}  // namespace coppkit
