#include "coppkit/envs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace coppkit {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

double normal_logpdf(double y, double mean, double sd) {
  const double z = (y - mean) / sd;
  return -kHalfLog2Pi - std::log(sd) - 0.5 * z * z;
}

double normal_cdf(double t, double mean, double sd) {
  return 0.5 * std::erfc(-(t - mean) / (sd * std::sqrt(2.0)));
}

double logsumexp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

// mean/sd of Y | x under a policy, when the mixture collapses to a single
// Gaussian (continuous env with Gaussian or deterministic policies)
std::pair<double, double> continuous_outcome_moments(const ToyContinuousEnv& env,
                                                     const PolicySpec& policy,
                                                     const std::vector<double>& x) {
  if (const auto* g = std::get_if<GaussianLinearPolicy>(&policy)) {
    const double mean = x[0] + g->coef * x[0] + g->shift;
    const double var = env.y_std * env.y_std + g->stddev * g->stddev;
    return {mean, std::sqrt(var)};
  }
  if (const auto* d = std::get_if<DeterministicPolicy>(&policy)) {
    if (d->kind != ActionKind::Continuous)
      throw ValidationError("continuous env: policy must emit continuous actions");
    return {d->action_fn(x) + x[0], env.y_std};
  }
  throw ValidationError("continuous env: unsupported policy family");
}

double format_double(char* buf, std::size_t n, double v) {
  auto res = std::to_chars(buf, buf + n, v);
  *res.ptr = '\0';
  return v;
}

double parse_double(const std::string& field, std::size_t line_no) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw IngestError("csv: malformed number '" + field + "' at line " +
                      std::to_string(line_no));
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

ActionKind env_action_kind(const SyntheticEnv& env) {
  return std::holds_alternative<ToyDiscreteEnv>(env) ? ActionKind::Discrete
                                                     : ActionKind::Continuous;
}

BanditDataset gen_synthetic(const SyntheticEnv& env, const PolicySpec& behavior,
                            std::size_t n_obs, Rng& rng) {
  if (n_obs == 0) throw ValidationError("gen_synthetic: need at least one sample");
  validate_policy(behavior);
  if (policy_action_kind(behavior) != env_action_kind(env))
    throw ValidationError("gen_synthetic: policy action kind does not match the env");

  std::vector<LoggedSample> samples;
  samples.reserve(n_obs);
  for (std::size_t i = 0; i < n_obs; ++i)
    samples.push_back(sample_triple(env, behavior, rng));

  if (const auto* d = std::get_if<ToyDiscreteEnv>(&env))
    return BanditDataset(std::move(samples), ActionKind::Discrete, OutcomeKind::Continuous,
                         d->num_actions());
  return BanditDataset(std::move(samples), ActionKind::Continuous, OutcomeKind::Continuous);
}

LoggedSample sample_triple(const SyntheticEnv& env, const PolicySpec& policy, Rng& rng) {
  LoggedSample s;
  if (const auto* d = std::get_if<ToyDiscreteEnv>(&env)) {
    s.x = {rng.normal(0.0, d->x_std)};
    s.action = policy_sample(policy, s.x, rng);
    s.y = rng.normal(d->action_values[static_cast<std::size_t>(s.action)] * s.x[0], d->y_std);
  } else {
    const auto& c = std::get<ToyContinuousEnv>(env);
    s.x = {rng.normal(0.0, c.x_std)};
    s.action = policy_sample(policy, s.x, rng);
    s.y = rng.normal(s.action + s.x[0], c.y_std);
  }
  return s;
}

double env_density(const SyntheticEnv& env, const std::vector<double>& x, double a,
                   double y) {
  if (const auto* d = std::get_if<ToyDiscreteEnv>(&env)) {
    const int k = static_cast<int>(a);
    if (a != std::floor(a) || k < 0 || k >= d->num_actions())
      throw ValidationError("env_density: action index out of range");
    return std::exp(normal_logpdf(y, d->action_values[static_cast<std::size_t>(k)] * x[0],
                                  d->y_std));
  }
  const auto& c = std::get<ToyContinuousEnv>(env);
  return std::exp(normal_logpdf(y, a + x[0], c.y_std));
}

double env_log_outcome_density(const SyntheticEnv& env, const PolicySpec& policy,
                               const std::vector<double>& x, double y) {
  if (const auto* d = std::get_if<ToyDiscreteEnv>(&env)) {
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(d->num_actions()));
    for (int k = 0; k < d->num_actions(); ++k) {
      const double p = policy_prob(policy, x, static_cast<double>(k));
      if (p <= 0.0) continue;
      terms.push_back(std::log(p) +
                      normal_logpdf(y, d->action_values[static_cast<std::size_t>(k)] * x[0],
                                    d->y_std));
    }
    if (terms.empty()) return -std::numeric_limits<double>::infinity();
    return logsumexp(terms);
  }
  const auto& c = std::get<ToyContinuousEnv>(env);
  const auto [mean, sd] = continuous_outcome_moments(c, policy, x);
  return normal_logpdf(y, mean, sd);
}

double env_outcome_cdf(const SyntheticEnv& env, const PolicySpec& policy,
                       const std::vector<double>& x, double t) {
  if (const auto* d = std::get_if<ToyDiscreteEnv>(&env)) {
    double f = 0.0;
    for (int k = 0; k < d->num_actions(); ++k) {
      const double p = policy_prob(policy, x, static_cast<double>(k));
      if (p <= 0.0) continue;
      f += p * normal_cdf(t, d->action_values[static_cast<std::size_t>(k)] * x[0], d->y_std);
    }
    return f;
  }
  const auto& c = std::get<ToyContinuousEnv>(env);
  const auto [mean, sd] = continuous_outcome_moments(c, policy, x);
  return normal_cdf(t, mean, sd);
}

namespace {

double mixture_quantile(const SyntheticEnv& env, const PolicySpec& policy,
                        const std::vector<double>& x, double beta) {
  // bracket, then bisect until the CDF residual is within tolerance
  double lo = -1.0, hi = 1.0;
  if (const auto* d = std::get_if<ToyDiscreteEnv>(&env)) {
    for (double v : d->action_values) {
      lo = std::min(lo, v * x[0] - 12.0 * d->y_std);
      hi = std::max(hi, v * x[0] + 12.0 * d->y_std);
    }
  } else {
    const auto& c = std::get<ToyContinuousEnv>(env);
    const auto [mean, sd] = continuous_outcome_moments(c, policy, x);
    lo = mean - 12.0 * sd;
    hi = mean + 12.0 * sd;
  }
  for (int i = 0; i < 200 && env_outcome_cdf(env, policy, x, lo) >= beta; ++i) lo -= 8.0;
  for (int i = 0; i < 200 && env_outcome_cdf(env, policy, x, hi) <= beta; ++i) hi += 8.0;

  constexpr double kTol = 1e-10;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double f = env_outcome_cdf(env, policy, x, mid);
    if (std::fabs(f - beta) <= kTol) return mid;
    (f < beta ? lo : hi) = mid;
    if (hi - lo < 1e-14 * std::max(1.0, std::fabs(mid))) {
      if (std::fabs(env_outcome_cdf(env, policy, x, mid) - beta) <= kTol) return mid;
      break;
    }
  }
  throw NumericError("oracle_interval: bisection did not reach the CDF tolerance");
}

}  // namespace

Interval oracle_interval(const SyntheticEnv& env, const PolicySpec& target,
                         const std::vector<double>& x, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ValidationError("oracle_interval: alpha must lie in (0, 1)");
  const double lo = mixture_quantile(env, target, x, alpha / 2.0);
  const double hi = mixture_quantile(env, target, x, 1.0 - alpha / 2.0);
  return Interval{lo, hi};
}

// ---- classification-derived bandits -----------------------------------------

ClassificationBandit load_classification_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("classification csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw IngestError("classification csv: empty file " + path);
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "label")
    throw IngestError("classification csv: expected header x0,...,label in " + path);
  const std::size_t d = header.size() - 1;
  for (std::size_t i = 0; i < d; ++i)
    if (header[i] != "x" + std::to_string(i))
      throw IngestError("classification csv: bad covariate header '" + header[i] + "'");

  ClassificationBandit cb;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw IngestError("classification csv: wrong field count at line " +
                        std::to_string(line_no));
    std::vector<double> x(d);
    for (std::size_t i = 0; i < d; ++i) x[i] = parse_double(fields[i], line_no);
    const double raw = parse_double(fields[d], line_no);
    if (raw != std::floor(raw) || raw < 0.0)
      throw IngestError("classification csv: label must be a nonnegative integer at line " +
                        std::to_string(line_no));
    cb.xs.push_back(std::move(x));
    cb.labels.push_back(static_cast<int>(raw));
  }
  if (cb.xs.empty()) throw IngestError("classification csv: no data rows in " + path);
  cb.num_classes = 1 + *std::max_element(cb.labels.begin(), cb.labels.end());
  return cb;
}

void write_classification_csv(const ClassificationBandit& cb, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary keeps LF endings everywhere
  if (!out) throw IngestError("classification csv: cannot open for writing " + path);
  const std::size_t d = cb.xs.front().size();
  for (std::size_t i = 0; i < d; ++i) out << "x" << i << ",";
  out << "label\n";
  char buf[64];
  for (std::size_t r = 0; r < cb.xs.size(); ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      format_double(buf, sizeof buf, cb.xs[r][i]);
      out << buf << ",";
    }
    out << cb.labels[r] << "\n";
  }
  if (!out.flush()) throw IngestError("classification csv: write failed " + path);
}

BanditDataset to_bandit(const ClassificationBandit& cb, const PolicySpec& policy, Rng& rng) {
  validate_policy(policy);
  if (policy_action_kind(policy) != ActionKind::Discrete)
    throw ValidationError("to_bandit: policy must be discrete over the class set");
  const int k = policy_num_actions(policy);
  if (k != 0 && k < cb.num_classes)
    throw ValidationError("to_bandit: policy covers " + std::to_string(k) +
                          " actions but the data has " + std::to_string(cb.num_classes) +
                          " classes");

  std::vector<LoggedSample> samples;
  samples.reserve(cb.xs.size());
  for (std::size_t i = 0; i < cb.xs.size(); ++i) {
    LoggedSample s;
    s.x = cb.xs[i];
    s.action = policy_sample(policy, s.x, rng);
    s.y = static_cast<int>(s.action) == cb.labels[i] ? 1.0 : 0.0;
    samples.push_back(std::move(s));
  }
  return BanditDataset(std::move(samples), ActionKind::Discrete, OutcomeKind::Discrete,
                       std::max(k, cb.num_classes), 2);
}

// ---- dataset CSV --------------------------------------------------------------

void write_dataset_csv(const BanditDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("dataset csv: cannot open for writing " + path);
  for (int i = 0; i < data.dim(); ++i) out << "x" << i << ",";
  out << "a,y\n";
  char buf[64];
  for (const auto& s : data.samples()) {
    for (double v : s.x) {
      format_double(buf, sizeof buf, v);
      out << buf << ",";
    }
    if (data.action_kind() == ActionKind::Discrete) {
      out << s.action_index() << ",";
    } else {
      format_double(buf, sizeof buf, s.action);
      out << buf << ",";
    }
    if (data.outcome_kind() == OutcomeKind::Discrete) {
      out << s.label() << "\n";
    } else {
      format_double(buf, sizeof buf, s.y);
      out << buf << "\n";
    }
  }
  if (!out.flush()) throw IngestError("dataset csv: write failed " + path);
}

BanditDataset read_dataset_csv(const std::string& path, const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IngestError("dataset csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw IngestError("dataset csv: empty file " + path);
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[header.size() - 2] != "a" || header.back() != "y")
    throw IngestError("dataset csv: expected header x0,...,a,y in " + path);
  const std::size_t d = header.size() - 2;
  for (std::size_t i = 0; i < d; ++i)
    if (header[i] != "x" + std::to_string(i))
      throw IngestError("dataset csv: bad covariate header '" + header[i] + "'");

  std::vector<LoggedSample> samples;
  std::size_t line_no = 1;
  double max_action = -1.0, max_label = -1.0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw IngestError("dataset csv: wrong field count at line " + std::to_string(line_no));
    LoggedSample s;
    s.x.resize(d);
    for (std::size_t i = 0; i < d; ++i) s.x[i] = parse_double(fields[i], line_no);
    s.action = parse_double(fields[d], line_no);
    s.y = parse_double(fields[d + 1], line_no);
    if (schema.action_kind == ActionKind::Discrete &&
        (s.action != std::floor(s.action) || s.action < 0.0))
      throw IngestError("dataset csv: discrete action must be a nonnegative integer at line " +
                        std::to_string(line_no));
    if (schema.outcome_kind == OutcomeKind::Discrete &&
        (s.y != std::floor(s.y) || s.y < 0.0))
      throw IngestError("dataset csv: discrete label must be a nonnegative integer at line " +
                        std::to_string(line_no));
    max_action = std::max(max_action, s.action);
    max_label = std::max(max_label, s.y);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw IngestError("dataset csv: no data rows in " + path);

  int num_actions = schema.num_actions;
  if (schema.action_kind == ActionKind::Discrete && num_actions == 0)
    num_actions = static_cast<int>(max_action) + 1;
  int num_labels = schema.num_labels;
  if (schema.outcome_kind == OutcomeKind::Discrete && num_labels == 0)
    num_labels = static_cast<int>(max_label) + 1;
  return BanditDataset(std::move(samples), schema.action_kind, schema.outcome_kind,
                       num_actions, num_labels);
}

}  // namespace coppkit
