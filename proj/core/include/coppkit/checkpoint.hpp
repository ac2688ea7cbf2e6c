#pragma once

#include <string>

#include "coppkit/models.hpp"

namespace coppkit {

// Versioned binary checkpoint format: a fixed magic header, a kind tag,
// model scalars, then per-network layer shapes followed by flat little-endian
// 64-bit float parameter arrays.
inline constexpr char kModelMagic[] = "COPPKIT-MODEL-1";

void save_model(const QuantilePair& m, const std::string& path);
void save_model(const GaussianConditional& m, const std::string& path);
void save_model(const SoftmaxPolicyModel& m, const std::string& path);
void save_model(const GaussianPolicyModel& m, const std::string& path);
void save_model(const SoftmaxConditional& m, const std::string& path);

/// Kind tag stored in the checkpoint ("quantile_pair", ...). Throws
/// IngestError on bad magic or truncated files.
std::string checkpoint_kind(const std::string& path);

QuantilePair load_quantile_pair(const std::string& path);
GaussianConditional load_gaussian_conditional(const std::string& path);
SoftmaxPolicyModel load_softmax_policy(const std::string& path);
GaussianPolicyModel load_gaussian_policy(const std::string& path);
SoftmaxConditional load_softmax_conditional(const std::string& path);

}  // namespace coppkit
