#include "coppkit/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "coppkit/baselines.hpp"

namespace coppkit {

using nlohmann::json;

namespace {

// substream tags for per-seed rng derivation
constexpr std::uint64_t kTagGen = 0x01;
constexpr std::uint64_t kTagSplit = 0x02;
constexpr std::uint64_t kTagQuantile = 0x03;
constexpr std::uint64_t kTagOutcome = 0x04;
constexpr std::uint64_t kTagBehavior = 0x05;
constexpr std::uint64_t kTagUnionBase = 0x800;
constexpr std::uint64_t kTagShuffle = 0x09;
constexpr std::uint64_t kTagClassifier = 0x0A;
constexpr std::uint64_t kTagBanditTrain = 0x0B;
constexpr std::uint64_t kTagBanditCal = 0x0C;
constexpr std::uint64_t kTagTestBase = 0x1000;
constexpr std::uint64_t kTagSbaBase = 0x2000;
constexpr std::uint64_t kTagMcBase = 0x3000;
constexpr std::uint64_t kTagDirectWBase = 0x4000;
constexpr std::uint64_t kTagBanditTestBase = 0x5000;

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string to_string(MethodId m) {
  switch (m) {
    case MethodId::CoppGt: return "copp_gt";
    case MethodId::CoppEst: return "copp_est";
    case MethodId::CoppRegressionWeights: return "copp_regression_weights";
    case MethodId::StandardCp: return "standard_cp";
    case MethodId::UnionCp: return "union_cp";
    case MethodId::Wis: return "wis";
    case MethodId::Sba: return "sba";
    case MethodId::ClassBalancedCopp: return "class_balanced_copp";
    case MethodId::Oracle: return "oracle";
  }
  throw ValidationError("to_string(MethodId): unknown method");
}

MethodId method_from_string(const std::string& s) {
  for (MethodId m :
       {MethodId::CoppGt, MethodId::CoppEst, MethodId::CoppRegressionWeights,
        MethodId::StandardCp, MethodId::UnionCp, MethodId::Wis, MethodId::Sba,
        MethodId::ClassBalancedCopp, MethodId::Oracle}) {
    if (to_string(m) == s) return m;
  }
  throw ValidationError("unknown method id '" + s + "'");
}

// ---- config -------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (eps_stars.empty()) throw ValidationError("config: eps_stars must be nonempty");
  if (seeds.empty()) throw ValidationError("config: seeds must be nonempty");
  if (methods.empty()) throw ValidationError("config: methods must be nonempty");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("config: alpha must lie in (0, 1)");
  if (m < 1 || n < 1 || n_test < 1)
    throw ValidationError("config: m, n and n_test must be >= 1");
  if (grid.count < 2) throw ValidationError("config: grid count must be >= 2");
  if (h < 1) throw ValidationError("config: h must be >= 1");
  if (ell < 2) throw ValidationError("config: ell must be >= 2");

  const bool discrete_env = env.kind == EnvConfig::Kind::ToyDiscrete;
  const bool continuous_env = env.kind == EnvConfig::Kind::ToyContinuous;
  const bool classification = env.kind == EnvConfig::Kind::Classification;

  if (discrete_env) {
    auto check_eps = [](double e) {
      if (!(e > 0.0 && e < 1.0 / 3.0))
        throw ValidationError("config: toy-discrete eps must lie in (0, 1/3)");
    };
    check_eps(eps_b);
    for (double e : eps_stars) check_eps(e);
  }
  if (classification) {
    if (env.csv_path.empty())
      throw ValidationError("config: classification env needs a csv path");
    auto check_eps = [](double e) {
      if (!(e >= 0.0 && e <= 1.0))
        throw ValidationError("config: classification eps must lie in [0, 1]");
    };
    check_eps(eps_b);
    for (double e : eps_stars) check_eps(e);
  }

  for (MethodId mth : methods) {
    const bool ok =
        (discrete_env &&
         (mth == MethodId::CoppGt || mth == MethodId::CoppEst ||
          mth == MethodId::CoppRegressionWeights || mth == MethodId::StandardCp ||
          mth == MethodId::UnionCp || mth == MethodId::Wis || mth == MethodId::Sba ||
          mth == MethodId::Oracle)) ||
        (continuous_env &&
         (mth == MethodId::CoppGt || mth == MethodId::CoppEst ||
          mth == MethodId::CoppRegressionWeights || mth == MethodId::StandardCp ||
          mth == MethodId::Wis || mth == MethodId::Sba || mth == MethodId::Oracle)) ||
        (classification &&
         (mth == MethodId::CoppEst || mth == MethodId::CoppRegressionWeights ||
          mth == MethodId::StandardCp || mth == MethodId::ClassBalancedCopp ||
          mth == MethodId::Wis));
    if (!ok)
      throw ValidationError("config: method '" + to_string(mth) +
                            "' is not available for this env");
  }

  TrainOpts probe;
  probe.learning_rate = train.learning_rate;
  probe.epochs = train.epochs;
  probe.batch_size = train.batch_size;
  probe.val_frac = train.val_frac;
  probe.patience = train.patience;
  probe.validate();
}

namespace {

void check_keys(const json& obj, const std::string& pointer,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool found = false;
    for (const char* a : allowed)
      if (key == a) {
        found = true;
        break;
      }
    if (!found) throw SchemaError(pointer + "/" + key, "unknown key");
  }
}

template <typename T>
T require(const json& obj, const std::string& pointer, const char* key) {
  if (!obj.contains(key)) throw SchemaError(pointer + "/" + key, "missing required key");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(pointer + "/" + key, e.what());
  }
}

template <typename T>
T optional(const json& obj, const std::string& pointer, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(pointer + "/" + key, e.what());
  }
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError("", std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("", "config must be a JSON object");
  check_keys(j, "", {"env", "eps_b", "eps_stars", "alpha", "m", "n", "n_test", "grid",
                     "methods", "seeds", "h", "ell", "train", "arch", "threads"});

  ExperimentConfig cfg;

  const json& env = j.contains("env") ? j.at("env") : json::object();
  if (!j.contains("env")) throw SchemaError("/env", "missing required key");
  if (!env.is_object()) throw SchemaError("/env", "must be an object");
  check_keys(env, "/env", {"kind", "csv"});
  const std::string kind = require<std::string>(env, "/env", "kind");
  if (kind == "toy-discrete") {
    cfg.env.kind = EnvConfig::Kind::ToyDiscrete;
  } else if (kind == "toy-continuous") {
    cfg.env.kind = EnvConfig::Kind::ToyContinuous;
  } else if (kind == "classification") {
    cfg.env.kind = EnvConfig::Kind::Classification;
    cfg.env.csv_path = require<std::string>(env, "/env", "csv");
  } else {
    throw SchemaError("/env/kind", "expected toy-discrete, toy-continuous or classification");
  }

  cfg.eps_b = require<double>(j, "", "eps_b");
  cfg.eps_stars = require<std::vector<double>>(j, "", "eps_stars");
  cfg.alpha = optional<double>(j, "", "alpha", 0.1);
  cfg.m = require<std::size_t>(j, "", "m");
  cfg.n = require<std::size_t>(j, "", "n");
  cfg.n_test = optional<std::size_t>(j, "", "n_test", 5000);
  cfg.h = optional<int>(j, "", "h", 500);
  cfg.ell = optional<int>(j, "", "ell", 1000);
  cfg.threads = optional<int>(j, "", "threads", 0);

  if (j.contains("grid")) {
    const json& g = j.at("grid");
    if (!g.is_object()) throw SchemaError("/grid", "must be an object");
    check_keys(g, "/grid", {"count", "margin"});
    cfg.grid.count = optional<int>(g, "/grid", "count", 100);
    cfg.grid.margin = optional<double>(g, "/grid", "margin", 0.25);
  }

  for (const std::string& name : require<std::vector<std::string>>(j, "", "methods")) {
    try {
      cfg.methods.push_back(method_from_string(name));
    } catch (const ValidationError& e) {
      throw SchemaError("/methods", e.what());
    }
  }
  cfg.seeds = require<std::vector<std::uint64_t>>(j, "", "seeds");

  if (j.contains("train")) {
    const json& t = j.at("train");
    if (!t.is_object()) throw SchemaError("/train", "must be an object");
    check_keys(t, "/train",
               {"learning_rate", "epochs", "batch_size", "val_frac", "patience"});
    cfg.train.learning_rate = optional<double>(t, "/train", "learning_rate", 1e-3);
    cfg.train.epochs = optional<int>(t, "/train", "epochs", 400);
    cfg.train.batch_size = optional<int>(t, "/train", "batch_size", 128);
    cfg.train.val_frac = optional<double>(t, "/train", "val_frac", 0.1);
    cfg.train.patience = optional<int>(t, "/train", "patience", 10);
  }

  if (j.contains("arch")) {
    const json& a = j.at("arch");
    if (!a.is_object()) throw SchemaError("/arch", "must be an object");
    check_keys(a, "/arch", {"behavior", "quantile", "outcome", "classifier"});
    cfg.arch.behavior = optional<std::vector<int>>(a, "/arch", "behavior", cfg.arch.behavior);
    cfg.arch.quantile = optional<std::vector<int>>(a, "/arch", "quantile", cfg.arch.quantile);
    cfg.arch.outcome = optional<std::vector<int>>(a, "/arch", "outcome", cfg.arch.outcome);
    cfg.arch.classifier =
        optional<std::vector<int>>(a, "/arch", "classifier", cfg.arch.classifier);
  } else if (cfg.env.kind == EnvConfig::Kind::Classification) {
    cfg.arch.behavior = {64, 64};  // wider default for high-dimensional covariates
  }

  cfg.validate();
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["env"]["kind"] = cfg.env.kind == EnvConfig::Kind::ToyDiscrete      ? "toy-discrete"
                     : cfg.env.kind == EnvConfig::Kind::ToyContinuous ? "toy-continuous"
                                                                       : "classification";
  if (cfg.env.kind == EnvConfig::Kind::Classification) j["env"]["csv"] = cfg.env.csv_path;
  j["eps_b"] = cfg.eps_b;
  j["eps_stars"] = cfg.eps_stars;
  j["alpha"] = cfg.alpha;
  j["m"] = cfg.m;
  j["n"] = cfg.n;
  j["n_test"] = cfg.n_test;
  j["grid"]["count"] = cfg.grid.count;
  j["grid"]["margin"] = cfg.grid.margin;
  json methods = json::array();
  for (MethodId m : cfg.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  j["seeds"] = cfg.seeds;
  j["h"] = cfg.h;
  j["ell"] = cfg.ell;
  j["train"]["learning_rate"] = cfg.train.learning_rate;
  j["train"]["epochs"] = cfg.train.epochs;
  j["train"]["batch_size"] = cfg.train.batch_size;
  j["train"]["val_frac"] = cfg.train.val_frac;
  j["train"]["patience"] = cfg.train.patience;
  j["arch"]["behavior"] = cfg.arch.behavior;
  j["arch"]["quantile"] = cfg.arch.quantile;
  j["arch"]["outcome"] = cfg.arch.outcome;
  j["arch"]["classifier"] = cfg.arch.classifier;
  j["threads"] = cfg.threads;
  return j.dump(2);
}

// ---- metrics ----------------------------------------------------------------

namespace {

MeanSe binomial_mean_se(std::size_t hits, std::size_t n) {
  const double p = static_cast<double>(hits) / static_cast<double>(n);
  return MeanSe{p, std::sqrt(p * (1.0 - p) / static_cast<double>(n))};
}

}  // namespace

MeanSe coverage(const std::vector<PredictionSet>& sets, const std::vector<double>& truths) {
  if (sets.size() != truths.size() || sets.empty())
    throw ValidationError("coverage: sets/truths size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sets.size(); ++i)
    if (sets[i].contains(truths[i])) ++hits;
  return binomial_mean_se(hits, sets.size());
}

MeanSe coverage(const std::vector<Interval>& intervals, const std::vector<double>& truths) {
  if (intervals.size() != truths.size() || intervals.empty())
    throw ValidationError("coverage: intervals/truths size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i)
    if (intervals[i].contains(truths[i])) ++hits;
  return binomial_mean_se(hits, intervals.size());
}

namespace {

LengthStats length_stats(const std::vector<double>& lengths,
                         const std::vector<double>& hulls) {
  const double n = static_cast<double>(lengths.size());
  double mean = 0.0, hull = 0.0;
  for (double v : lengths) mean += v;
  for (double v : hulls) hull += v;
  mean /= n;
  hull /= n;
  double var = 0.0;
  for (double v : lengths) var += (v - mean) * (v - mean);
  var /= n;
  return LengthStats{mean, std::sqrt(var / n), hull};
}

}  // namespace

LengthStats mean_length(const std::vector<PredictionSet>& sets) {
  if (sets.empty()) throw ValidationError("mean_length: no sets");
  std::vector<double> lengths, hulls;
  lengths.reserve(sets.size());
  hulls.reserve(sets.size());
  for (const auto& s : sets) {
    lengths.push_back(s.grid_measure_length());
    hulls.push_back(s.hull_length());
  }
  return length_stats(lengths, hulls);
}

LengthStats mean_length(const std::vector<Interval>& intervals) {
  if (intervals.empty()) throw ValidationError("mean_length: no intervals");
  std::vector<double> lengths;
  lengths.reserve(intervals.size());
  for (const auto& iv : intervals) lengths.push_back(iv.length());
  return length_stats(lengths, lengths);
}

namespace {

template <typename Container>
std::vector<BinCoverage> binned_coverage(const Container& sets,
                                         const std::vector<double>& truths,
                                         const std::vector<std::vector<double>>& xs,
                                         int bins) {
  if (bins < 1) throw ValidationError("conditional_coverage_diagnostic: bins must be >= 1");
  if (sets.size() != truths.size() || sets.size() != xs.size() || sets.empty())
    throw ValidationError("conditional_coverage_diagnostic: size mismatch");

  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a][0] < xs[b][0]; });

  std::vector<BinCoverage> out;
  const std::size_t n = order.size();
  for (int b = 0; b < bins; ++b) {
    const std::size_t lo = n * static_cast<std::size_t>(b) / static_cast<std::size_t>(bins);
    const std::size_t hi =
        n * static_cast<std::size_t>(b + 1) / static_cast<std::size_t>(bins);
    if (hi <= lo) continue;
    BinCoverage bc;
    bc.x_lo = xs[order[lo]][0];
    bc.x_hi = xs[order[hi - 1]][0];
    bc.count = hi - lo;
    std::size_t hits = 0;
    for (std::size_t i = lo; i < hi; ++i)
      if (sets[order[i]].contains(truths[order[i]])) ++hits;
    bc.coverage = static_cast<double>(hits) / static_cast<double>(bc.count);
    out.push_back(bc);
  }
  return out;
}

}  // namespace

std::vector<BinCoverage> conditional_coverage_diagnostic(
    const std::vector<PredictionSet>& sets, const std::vector<double>& truths,
    const std::vector<std::vector<double>>& xs, int bins) {
  return binned_coverage(sets, truths, xs, bins);
}

std::vector<BinCoverage> conditional_coverage_diagnostic(
    const std::vector<Interval>& intervals, const std::vector<double>& truths,
    const std::vector<std::vector<double>>& xs, int bins) {
  return binned_coverage(intervals, truths, xs, bins);
}

// ---- report -------------------------------------------------------------------

std::string report_to_json(const Report& report) {
  json j;
  j["schema_version"] = report.schema_version;
  j["config"] = json::parse(report.config_json);
  j["complete"] = report.complete;
  j["warnings"] = report.warnings;
  json rows = json::array();
  for (const auto& row : report.rows) {
    json r;
    r["method"] = to_string(row.method);
    r["eps_star"] = row.eps_star;
    r["delta_eps"] = row.delta_eps;
    r["length_metric"] = row.length_metric;
    r["coverage_mean"] = row.coverage_mean;
    r["coverage_2se"] = row.coverage_2se;
    r["length_mean"] = row.length_mean;
    r["length_2se"] = row.length_2se;
    r["hull_mean"] = row.hull_mean;
    json cells = json::array();
    for (const auto& c : row.cells) {
      json cj;
      cj["seed"] = c.seed;
      cj["failed"] = c.failed;
      if (c.failed) cj["error"] = c.error;
      cj["coverage"] = c.coverage;
      cj["length"] = c.length;
      cj["hull"] = c.hull;
      cj["unbounded_sets"] = c.unbounded_sets;
      cj["weight_floor_hits"] = c.weight_floor_hits;
      cells.push_back(cj);
    }
    r["seeds"] = cells;
    rows.push_back(r);
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

std::string report_to_csv(const Report& report) {
  std::string out = "method,eps_star,seed,coverage,length\n";
  for (const auto& row : report.rows) {
    for (const auto& c : row.cells) {
      out += to_string(row.method);
      out += ',';
      out += fmt(row.eps_star);
      out += ',';
      out += std::to_string(c.seed);
      out += ',';
      if (c.failed) {
        out += "nan,nan";
      } else {
        out += fmt(c.coverage);
        out += ',';
        out += fmt(c.length);
      }
      out += '\n';
    }
  }
  return out;
}

// ---- experiment runner -----------------------------------------------------------

namespace {

TrainOpts make_train_opts(const TrainConfig& t, std::uint64_t seed) {
  TrainOpts o;
  o.learning_rate = t.learning_rate;
  o.epochs = t.epochs;
  o.batch_size = t.batch_size;
  o.val_frac = t.val_frac;
  o.patience = t.patience;
  o.seed = seed;
  return o;
}

MlpSpec make_spec(const std::vector<int>& hidden) {
  MlpSpec s;
  s.hidden_sizes = hidden;
  return s;
}

struct CellResult {
  double coverage = 0.0;
  double length = 0.0;
  double hull = 0.0;
  std::uint64_t unbounded = 0;
  std::uint64_t floor_hits = 0;
};

CellResult grid_cell(const ConformalEngine& engine, const WeightFn& w,
                     const std::vector<LoggedSample>& test, const Grid& grid,
                     const ScoreFn& score, double alpha) {
  std::vector<PredictionSet> sets;
  std::vector<double> truths;
  sets.reserve(test.size());
  truths.reserve(test.size());
  for (const auto& t : test) {
    sets.push_back(engine.predict_grid(t.x, grid, score, alpha));
    truths.push_back(t.y);
  }
  CellResult r;
  r.coverage = coverage(sets, truths).mean;
  const LengthStats ls = mean_length(sets);
  r.length = ls.mean;
  r.hull = ls.hull_mean;
  for (const auto& s : sets) r.unbounded += s.unbounded() ? 1 : 0;
  r.floor_hits = w.floor_hits();
  return r;
}

CellResult interval_cell(const std::vector<Interval>& intervals,
                         const std::vector<double>& truths) {
  CellResult r;
  r.coverage = coverage(intervals, truths).mean;
  const LengthStats ls = mean_length(intervals);
  r.length = ls.mean;
  r.hull = ls.hull_mean;
  return r;
}

// one seed of the synthetic-env pipeline; returns cells in (method, eps) order
std::vector<CellResult> run_seed_toy(const ExperimentConfig& cfg, const SyntheticEnv& env,
                                     std::uint64_t seed) {
  const bool discrete = std::holds_alternative<ToyDiscreteEnv>(env);

  auto target_policy = [&](double eps) -> PolicySpec {
    if (discrete) return region_epsilon_policy(eps);
    return std::get<ToyContinuousEnv>(env).policy(eps);
  };
  const PolicySpec pi_b = target_policy(cfg.eps_b);

  Rng gen_rng(derive_seed(seed, kTagGen));
  const BanditDataset data = gen_synthetic(env, pi_b, cfg.m + cfg.n, gen_rng);
  const SplitResult split =
      split_dataset(data, SplitSpec{cfg.m, cfg.n, derive_seed(seed, kTagSplit)});
  const BanditDataset& train = split.train;
  const BanditDataset& cal = split.cal;

  auto uses = [&](MethodId m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
  };

  // shared fitted models
  auto qpair = std::make_shared<QuantilePair>(
      fit_quantile_pair(train, cfg.alpha / 2.0, 1.0 - cfg.alpha / 2.0,
                        make_spec(cfg.arch.quantile),
                        make_train_opts(cfg.train, derive_seed(seed, kTagQuantile))));
  const ScoreFn score = make_cqr_score(qpair);

  std::shared_ptr<GaussianConditional> p_hat;
  if (uses(MethodId::CoppEst) || uses(MethodId::Sba))
    p_hat = std::make_shared<GaussianConditional>(fit_gaussian_conditional(
        train, make_spec(cfg.arch.outcome),
        make_train_opts(cfg.train, derive_seed(seed, kTagOutcome))));

  std::shared_ptr<BehaviorModel> pi_b_hat;
  if (uses(MethodId::CoppEst) || uses(MethodId::Wis) ||
      uses(MethodId::CoppRegressionWeights))
    pi_b_hat = std::make_shared<BehaviorModel>(fit_behavior_policy(
        train, make_spec(cfg.arch.behavior),
        make_train_opts(cfg.train, derive_seed(seed, kTagBehavior))));

  const std::vector<CalibrationRecord> records = score_dataset(cal, score);
  const Grid grid = build_grid(cal.outcomes(), cfg.grid);

  // per-action conformalization for the union construction
  std::vector<ActionCalibration> per_action;
  if (uses(MethodId::UnionCp)) {
    const int K = train.num_actions();
    for (int a = 0; a < K; ++a) {
      std::vector<std::vector<double>> xs;
      std::vector<double> ys;
      for (const auto& s : train.samples())
        if (s.action_index() == a) {
          xs.push_back(s.x);
          ys.push_back(s.y);
        }
      ActionCalibration ac;
      if (xs.size() >= 10) {
        auto qa = std::make_shared<QuantilePair>(fit_quantile_pair_xy(
            xs, ys, cfg.alpha / 2.0, 1.0 - cfg.alpha / 2.0, make_spec(cfg.arch.quantile),
            make_train_opts(cfg.train,
                            derive_seed(seed, kTagUnionBase + static_cast<std::uint64_t>(a)))));
        ac.score = make_cqr_score(qa);
        for (const auto& s : cal.samples())
          if (s.action_index() == a)
            ac.records.push_back(CalibrationRecord{ac.score(s.x, s.y), s.x, s.y});
      }
      per_action.push_back(std::move(ac));
    }
  }

  std::vector<CellResult> cells;
  cells.reserve(cfg.methods.size() * cfg.eps_stars.size());

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const MethodId method = cfg.methods[mi];
    for (std::size_t ei = 0; ei < cfg.eps_stars.size(); ++ei) {
      const double eps_star = cfg.eps_stars[ei];
      const PolicySpec pi_star = target_policy(eps_star);

      // fresh target-policy test draws, shared across methods for this eps
      Rng test_rng(derive_seed(seed, kTagTestBase + ei));
      std::vector<LoggedSample> test;
      test.reserve(cfg.n_test);
      for (std::size_t i = 0; i < cfg.n_test; ++i)
        test.push_back(sample_triple(env, pi_star, test_rng));
      std::vector<double> truths;
      truths.reserve(test.size());
      for (const auto& t : test) truths.push_back(t.y);

      switch (method) {
        case MethodId::CoppGt: {
          WeightFn w = exact_weight(env, pi_star, pi_b);
          ConformalEngine engine(records, w);
          cells.push_back(grid_cell(engine, w, test, grid, score, cfg.alpha));
          break;
        }
        case MethodId::CoppEst: {
          WeightFn w = discrete ? exact_sum_weight(p_hat, pi_b_hat, pi_star)
                                : mc_weight(p_hat, pi_b_hat, pi_star, cfg.h,
                                            derive_seed(seed, kTagMcBase + ei));
          ConformalEngine engine(records, w);
          cells.push_back(grid_cell(engine, w, test, grid, score, cfg.alpha));
          break;
        }
        case MethodId::CoppRegressionWeights: {
          WeightFn w = fit_direct_weight(
              train, pi_star, *pi_b_hat, make_spec(cfg.arch.outcome),
              make_train_opts(cfg.train, derive_seed(seed, kTagDirectWBase + ei)));
          ConformalEngine engine(records, w);
          cells.push_back(grid_cell(engine, w, test, grid, score, cfg.alpha));
          break;
        }
        case MethodId::StandardCp: {
          WeightFn w = unit_weight();
          ConformalEngine engine(records, w);
          cells.push_back(grid_cell(engine, w, test, grid, score, cfg.alpha));
          break;
        }
        case MethodId::UnionCp: {
          std::vector<PredictionSet> sets;
          sets.reserve(test.size());
          for (const auto& t : test)
            sets.push_back(union_cp(t.x, grid, per_action, cfg.alpha));
          CellResult r;
          r.coverage = coverage(sets, truths).mean;
          const LengthStats ls = mean_length(sets);
          r.length = ls.mean;
          r.hull = ls.hull_mean;
          for (const auto& s : sets) r.unbounded += s.unbounded() ? 1 : 0;
          cells.push_back(r);
          break;
        }
        case MethodId::Wis: {
          std::uint64_t floors = 0;
          const WeightedCdf cdf = wis_cdf(cal, pi_star, *pi_b_hat, &floors);
          const Interval iv = wis_interval(cdf, cfg.alpha);
          std::vector<Interval> intervals(test.size(), iv);
          CellResult r = interval_cell(intervals, truths);
          r.floor_hits = floors;
          cells.push_back(r);
          break;
        }
        case MethodId::Sba: {
          Rng sba_rng(derive_seed(seed, kTagSbaBase + ei));
          std::vector<Interval> intervals;
          intervals.reserve(test.size());
          for (const auto& t : test)
            intervals.push_back(
                sba_interval(t.x, pi_star, *p_hat, cfg.ell, cfg.alpha, sba_rng));
          cells.push_back(interval_cell(intervals, truths));
          break;
        }
        case MethodId::Oracle: {
          std::vector<Interval> intervals;
          intervals.reserve(test.size());
          for (const auto& t : test)
            intervals.push_back(oracle_interval(env, pi_star, t.x, cfg.alpha));
          cells.push_back(interval_cell(intervals, truths));
          break;
        }
        case MethodId::ClassBalancedCopp:
          throw ValidationError("class_balanced_copp needs discrete outcomes");
      }
    }
  }
  return cells;
}

// one seed of the classification-bandit pipeline (binary outcomes)
std::vector<CellResult> run_seed_classification(const ExperimentConfig& cfg,
                                                const ClassificationBandit& cb,
                                                std::uint64_t seed) {
  const int K = cb.num_classes;
  const std::size_t rows = cb.xs.size();
  if (cfg.m + cfg.n >= rows)
    throw ValidationError("classification env: m + n must leave rows for test draws");

  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(seed, kTagShuffle));
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[shuffle_rng.below(i + 1)]);

  auto take = [&](std::size_t from, std::size_t count) {
    ClassificationBandit part;
    part.num_classes = K;
    for (std::size_t i = from; i < from + count; ++i) {
      part.xs.push_back(cb.xs[order[i]]);
      part.labels.push_back(cb.labels[order[i]]);
    }
    return part;
  };
  const ClassificationBandit train_rows = take(0, cfg.m);
  const ClassificationBandit cal_rows = take(cfg.m, cfg.n);
  const std::size_t rest = rows - cfg.m - cfg.n;

  // label scorer defining the policy family and the outcome model
  auto f_theta = std::make_shared<SoftmaxPolicyModel>(
      fit_softmax_classifier(train_rows.xs, train_rows.labels, K,
                             make_spec(cfg.arch.classifier),
                             make_train_opts(cfg.train, derive_seed(seed, kTagClassifier))));
  auto policy_eps = [f_theta, K](double eps) -> PolicySpec {
    ClassifierEpsilonPolicy p;
    p.num_actions = K;
    p.eps = eps;
    p.favored_fn = [f_theta](const std::vector<double>& x) { return f_theta->argmax(x); };
    return p;
  };
  const PolicySpec pi_b = policy_eps(cfg.eps_b);

  Rng train_rng(derive_seed(seed, kTagBanditTrain));
  const BanditDataset train = to_bandit(train_rows, pi_b, train_rng);
  Rng cal_rng(derive_seed(seed, kTagBanditCal));
  const BanditDataset cal = to_bandit(cal_rows, pi_b, cal_rng);

  auto uses = [&](MethodId m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
  };

  std::shared_ptr<BehaviorModel> pi_b_hat = std::make_shared<BehaviorModel>(
      fit_behavior_policy(train, make_spec(cfg.arch.behavior),
                          make_train_opts(cfg.train, derive_seed(seed, kTagBehavior))));
  const SoftmaxPolicyModel& pi_b_net = std::get<SoftmaxPolicyModel>(*pi_b_hat);

  // P(y=1 | x, a) is the classifier's score for class a
  const ScoreFn score = make_discrete_score([f_theta, &pi_b_net,
                                             K](const std::vector<double>& x) {
    const Eigen::VectorXd f = f_theta->probs(x);
    const Eigen::VectorXd pb = pi_b_net.probs(x);
    double p1 = 0.0;
    for (int a = 0; a < K; ++a) p1 += pb(a) * f(a);
    return std::vector<double>{1.0 - p1, p1};
  });

  const std::vector<CalibrationRecord> records = score_dataset(cal, score);
  std::map<int, std::vector<CalibrationRecord>> per_label;
  if (uses(MethodId::ClassBalancedCopp))
    for (const auto& r : records) per_label[static_cast<int>(r.y)].push_back(r);

  std::vector<CellResult> cells;
  cells.reserve(cfg.methods.size() * cfg.eps_stars.size());

  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const MethodId method = cfg.methods[mi];
    for (std::size_t ei = 0; ei < cfg.eps_stars.size(); ++ei) {
      const double eps_star = cfg.eps_stars[ei];
      const PolicySpec pi_star = policy_eps(eps_star);

      // test rows resampled from the held-out remainder, bandit-ized under pi*
      Rng test_rng(derive_seed(seed, kTagBanditTestBase + ei));
      ClassificationBandit test_rows;
      test_rows.num_classes = K;
      for (std::size_t i = 0; i < cfg.n_test; ++i) {
        const std::size_t pick = cfg.m + cfg.n + test_rng.below(rest);
        test_rows.xs.push_back(cb.xs[order[pick]]);
        test_rows.labels.push_back(cb.labels[order[pick]]);
      }
      const BanditDataset test = to_bandit(test_rows, pi_star, test_rng);
      std::vector<double> truths = test.outcomes();

      // estimated weight shared by the conformal variants
      auto make_est_weight = [&]() {
        return WeightFn(
            [f_theta, &pi_b_net, pi_star, K](const std::vector<double>& x)
                -> WeightFn::YEvaluator {
              const Eigen::VectorXd f = f_theta->probs(x);
              const Eigen::VectorXd pb = pi_b_net.probs(x);
              Eigen::VectorXd tp(K);
              for (int a = 0; a < K; ++a)
                tp(a) = policy_prob(pi_star, x, static_cast<double>(a));
              return [f, pb, tp, K](double y) {
                double num = 0.0, den = 0.0;
                for (int a = 0; a < K; ++a) {
                  const double p = y == 1.0 ? f(a) : 1.0 - f(a);
                  num += tp(a) * p;
                  den += pb(a) * p;
                }
                if (den < 1e-12) den = 1e-12;
                return num / den;
              };
            },
            WeightKind::ExactSum);
      };

      switch (method) {
        case MethodId::CoppEst: {
          WeightFn w = make_est_weight();
          ConformalEngine engine(records, w);
          std::vector<PredictionSet> sets;
          sets.reserve(test.size());
          for (const auto& t : test.samples())
            sets.push_back(engine.predict_labels(t.x, 2, score, cfg.alpha));
          CellResult r;
          r.coverage = coverage(sets, truths).mean;
          const LengthStats ls = mean_length(sets);
          r.length = ls.mean;
          r.hull = ls.hull_mean;
          for (const auto& s : sets) r.unbounded += s.unbounded() ? 1 : 0;
          r.floor_hits = w.floor_hits();
          cells.push_back(r);
          break;
        }
        case MethodId::CoppRegressionWeights: {
          WeightFn w = fit_direct_weight(
              train, pi_star, *pi_b_hat, make_spec(cfg.arch.outcome),
              make_train_opts(cfg.train, derive_seed(seed, kTagDirectWBase + ei)));
          ConformalEngine engine(records, w);
          std::vector<PredictionSet> sets;
          sets.reserve(test.size());
          for (const auto& t : test.samples())
            sets.push_back(engine.predict_labels(t.x, 2, score, cfg.alpha));
          CellResult r;
          r.coverage = coverage(sets, truths).mean;
          const LengthStats ls = mean_length(sets);
          r.length = ls.mean;
          r.hull = ls.hull_mean;
          for (const auto& s : sets) r.unbounded += s.unbounded() ? 1 : 0;
          cells.push_back(r);
          break;
        }
        case MethodId::StandardCp: {
          WeightFn w = unit_weight();
          ConformalEngine engine(records, w);
          std::vector<PredictionSet> sets;
          sets.reserve(test.size());
          for (const auto& t : test.samples())
            sets.push_back(engine.predict_labels(t.x, 2, score, cfg.alpha));
          CellResult r;
          r.coverage = coverage(sets, truths).mean;
          const LengthStats ls = mean_length(sets);
          r.length = ls.mean;
          r.hull = ls.hull_mean;
          for (const auto& s : sets) r.unbounded += s.unbounded() ? 1 : 0;
          cells.push_back(r);
          break;
        }
        case MethodId::ClassBalancedCopp: {
          WeightFn w = make_est_weight();
          ClassBalancedEngine engine(per_label, w, 2);
          std::vector<PredictionSet> sets;
          sets.reserve(test.size());
          for (const auto& t : test.samples())
            sets.push_back(engine.predict(t.x, score, cfg.alpha));
          CellResult r;
          r.coverage = coverage(sets, truths).mean;
          const LengthStats ls = mean_length(sets);
          r.length = ls.mean;
          r.hull = ls.hull_mean;
          for (const auto& s : sets) r.unbounded += s.unbounded() ? 1 : 0;
          r.floor_hits = w.floor_hits();
          cells.push_back(r);
          break;
        }
        case MethodId::Wis: {
          std::uint64_t floors = 0;
          const WeightedCdf cdf = wis_cdf(cal, pi_star, *pi_b_hat, &floors);
          const Interval iv = wis_interval(cdf, cfg.alpha);
          std::vector<Interval> intervals(test.size(), iv);
          CellResult r = interval_cell(intervals, truths);
          r.floor_hits = floors;
          cells.push_back(r);
          break;
        }
        default:
          throw ValidationError("method '" + to_string(method) +
                                "' is not available for classification envs");
      }
    }
  }
  return cells;
}

}  // namespace

Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  const std::size_t n_methods = cfg.methods.size();
  const std::size_t n_eps = cfg.eps_stars.size();
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t cells_per_seed = n_methods * n_eps;

  SyntheticEnv env = ToyDiscreteEnv{};
  if (cfg.env.kind == EnvConfig::Kind::ToyContinuous) env = ToyContinuousEnv{};
  ClassificationBandit cb;
  if (cfg.env.kind == EnvConfig::Kind::Classification)
    cb = load_classification_csv(cfg.env.csv_path);

  struct SeedOutcome {
    bool failed = false;
    std::string error;
    std::vector<CellResult> cells;
  };
  std::vector<SeedOutcome> outcomes(n_seeds);

  auto run_one = [&](std::size_t si) {
    try {
      if (cfg.env.kind == EnvConfig::Kind::Classification)
        outcomes[si].cells = run_seed_classification(cfg, cb, cfg.seeds[si]);
      else
        outcomes[si].cells = run_seed_toy(cfg, env, cfg.seeds[si]);
    } catch (const std::exception& e) {
      outcomes[si].failed = true;
      outcomes[si].error = e.what();
    }
  };

  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  std::size_t n_threads = cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads) : hw;
  n_threads = std::min(n_threads, n_seeds);

  if (n_threads <= 1) {
    for (std::size_t si = 0; si < n_seeds; ++si) run_one(si);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    workers.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t)
      workers.emplace_back([&]() {
        for (std::size_t si = next.fetch_add(1); si < n_seeds; si = next.fetch_add(1))
          run_one(si);
      });
    for (auto& w : workers) w.join();
  }

  Report report;
  report.config_json = config_to_json(cfg);

  for (std::size_t mi = 0; mi < n_methods; ++mi) {
    const MethodId method = cfg.methods[mi];
    const bool interval_metric =
        method == MethodId::Wis || method == MethodId::Sba || method == MethodId::Oracle;
    const bool label_metric = cfg.env.kind == EnvConfig::Kind::Classification &&
                              !interval_metric;
    for (std::size_t ei = 0; ei < n_eps; ++ei) {
      ReportRow row;
      row.method = method;
      row.eps_star = cfg.eps_stars[ei];
      row.delta_eps = cfg.env.kind == EnvConfig::Kind::ToyContinuous
                          ? cfg.eps_stars[ei] - cfg.eps_b
                          : cfg.eps_b - cfg.eps_stars[ei];
      row.length_metric =
          interval_metric ? "interval" : (label_metric ? "cardinality" : "grid_measure");

      std::vector<double> covs, lens;
      std::uint64_t unbounded = 0, floors = 0;
      for (std::size_t si = 0; si < n_seeds; ++si) {
        SeedCell cell;
        cell.seed = cfg.seeds[si];
        if (outcomes[si].failed) {
          cell.failed = true;
          cell.error = outcomes[si].error;
          report.complete = false;
        } else {
          const CellResult& c = outcomes[si].cells[mi * n_eps + ei];
          cell.coverage = c.coverage;
          cell.length = c.length;
          cell.hull = c.hull;
          cell.unbounded_sets = c.unbounded;
          cell.weight_floor_hits = c.floor_hits;
          covs.push_back(c.coverage);
          lens.push_back(c.length);
          unbounded += c.unbounded;
          floors += c.floor_hits;
        }
        row.cells.push_back(std::move(cell));
      }

      if (!covs.empty()) {
        auto agg = [](const std::vector<double>& v, double& mean, double& two_se) {
          mean = 0.0;
          for (double a : v) mean += a;
          mean /= static_cast<double>(v.size());
          double var = 0.0;
          if (v.size() > 1) {
            for (double a : v) var += (a - mean) * (a - mean);
            var /= static_cast<double>(v.size() - 1);
          }
          two_se = 2.0 * std::sqrt(var / static_cast<double>(v.size()));
        };
        agg(covs, row.coverage_mean, row.coverage_2se);
        agg(lens, row.length_mean, row.length_2se);
        double hull = 0.0;
        for (const auto& c : row.cells)
          if (!c.failed) hull += c.hull;
        row.hull_mean = hull / static_cast<double>(covs.size());
      }

      if (unbounded > 0)
        report.warnings.push_back(to_string(method) + " eps_star=" + fmt(row.eps_star) +
                                  ": " + std::to_string(unbounded) + " unbounded sets");
      if (floors > 0)
        report.warnings.push_back(to_string(method) + " eps_star=" + fmt(row.eps_star) +
                                  ": " + std::to_string(floors) +
                                  " weight-denominator floor hits");
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace coppkit
