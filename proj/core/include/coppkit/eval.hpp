#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coppkit/conformal.hpp"
#include "coppkit/envs.hpp"
#include "coppkit/prediction_set.hpp"

namespace coppkit {

enum class MethodId {
  CoppGt,
  CoppEst,
  CoppRegressionWeights,
  StandardCp,
  UnionCp,
  Wis,
  Sba,
  ClassBalancedCopp,
  Oracle,
};

std::string to_string(MethodId m);
MethodId method_from_string(const std::string& s);

struct EnvConfig {
  enum class Kind { ToyDiscrete, ToyContinuous, Classification };
  Kind kind = Kind::ToyDiscrete;
  std::string csv_path;  // classification data
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 400;
  int batch_size = 128;
  double val_frac = 0.1;
  int patience = 10;
};

struct ArchConfig {
  std::vector<int> behavior = {16, 16};
  std::vector<int> quantile = {32};
  std::vector<int> outcome = {32};
  std::vector<int> classifier = {64, 64};
};

struct ExperimentConfig {
  EnvConfig env;
  double eps_b = 0.3;
  std::vector<double> eps_stars;
  double alpha = 0.1;
  std::size_t m = 1000;
  std::size_t n = 5000;
  std::size_t n_test = 5000;
  GridSpec grid;
  std::vector<MethodId> methods;
  std::vector<std::uint64_t> seeds;
  int h = 500;
  int ell = 1000;
  TrainConfig train;
  ArchConfig arch;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

/// Strict parse: unknown keys anywhere raise SchemaError with the JSON
/// pointer of the offending key.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

// ---- metrics -----------------------------------------------------------------

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean of membership indicators and its binomial standard error. Grid sets
/// count the truth as covered when it lies within half a spacing of an
/// accepted point; label sets use exact membership.
MeanSe coverage(const std::vector<PredictionSet>& sets, const std::vector<double>& truths);
MeanSe coverage(const std::vector<Interval>& intervals, const std::vector<double>& truths);

struct LengthStats {
  double mean = 0.0;       // grid measure (or cardinality for label sets)
  double se = 0.0;
  double hull_mean = 0.0;  // convex-hull diagnostic
};

LengthStats mean_length(const std::vector<PredictionSet>& sets);
LengthStats mean_length(const std::vector<Interval>& intervals);

struct BinCoverage {
  double x_lo = 0.0;
  double x_hi = 0.0;
  std::size_t count = 0;
  double coverage = 0.0;
};

/// Equal-frequency bins over the first covariate with per-bin coverage.
std::vector<BinCoverage> conditional_coverage_diagnostic(
    const std::vector<PredictionSet>& sets, const std::vector<double>& truths,
    const std::vector<std::vector<double>>& xs, int bins);
std::vector<BinCoverage> conditional_coverage_diagnostic(
    const std::vector<Interval>& intervals, const std::vector<double>& truths,
    const std::vector<std::vector<double>>& xs, int bins);

// ---- report --------------------------------------------------------------------

inline constexpr char kReportSchema[] = "coppkit-report-1";

struct SeedCell {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double coverage = 0.0;
  double length = 0.0;
  double hull = 0.0;
  std::uint64_t unbounded_sets = 0;
  std::uint64_t weight_floor_hits = 0;
};

struct ReportRow {
  MethodId method = MethodId::CoppGt;
  double eps_star = 0.0;
  double delta_eps = 0.0;
  std::string length_metric;  // "grid_measure" | "interval" | "cardinality"
  double coverage_mean = 0.0;
  double coverage_2se = 0.0;
  double length_mean = 0.0;
  double length_2se = 0.0;
  double hull_mean = 0.0;
  std::vector<SeedCell> cells;
};

struct Report {
  std::string schema_version = kReportSchema;
  std::string config_json;  // canonical echo of the config
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
  bool complete = true;
};

std::string report_to_json(const Report& report);
std::string report_to_csv(const Report& report);

/// Runs the full pipeline for every (seed, eps_star, method) cell: generate,
/// split, fit, weigh, score, predict on fresh target-policy draws, aggregate
/// mean and 2 standard errors across seeds. Deterministic given the config;
/// seeds may run on parallel threads without changing the report.
Report run_experiment(const ExperimentConfig& cfg);

}  // namespace coppkit
