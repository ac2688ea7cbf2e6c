#include "coppkit/weights.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <string>

namespace coppkit {

namespace {

constexpr double kExactFloor = 1e-300;
constexpr double kEstFloor = 1e-12;

double normal_pdf(double y, double mean, double sd) {
  const double z = (y - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

std::uint64_t hash_x(std::uint64_t seed, const std::vector<double>& x) {
  std::uint64_t h = seed;
  for (double v : x) {
    h ^= std::bit_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    splitmix64(h);
  }
  return splitmix64(h);
}

}  // namespace

WeightFn unit_weight() {
  return WeightFn([](const std::vector<double>&) -> WeightFn::YEvaluator {
    return [](double) { return 1.0; };
  },
                  WeightKind::Exact);
}

WeightFn exact_weight(const SyntheticEnv& env, const PolicySpec& target,
                      const PolicySpec& behavior) {
  validate_policy(target);
  validate_policy(behavior);
  auto diag = std::make_shared<WeightDiagnostics>();
  WeightFn fn(
      [env, target, behavior, diag](const std::vector<double>& x) -> WeightFn::YEvaluator {
        return [env, target, behavior, diag, x](double y) {
          const double log_num = env_log_outcome_density(env, target, x, y);
          double log_den = env_log_outcome_density(env, behavior, x, y);
          const double log_floor = std::log(kExactFloor);
          if (log_den < log_floor) {
            log_den = log_floor;
            diag->floor_hits.fetch_add(1, std::memory_order_relaxed);
          }
          return std::exp(log_num - log_den);
        };
      },
      WeightKind::Exact, 0, diag);
  return fn;
}

WeightFn mc_weight(std::shared_ptr<const GaussianConditional> p_hat,
                   std::shared_ptr<const BehaviorModel> pi_b_hat, const PolicySpec& target,
                   int h, std::uint64_t seed, bool share_draws) {
  if (h < 1) throw ValidationError("mc_weight: h must be >= 1");
  validate_policy(target);
  auto diag = std::make_shared<WeightDiagnostics>();
  WeightFn fn(
      [p_hat, pi_b_hat, target, h, seed, share_draws,
       diag](const std::vector<double>& x) -> WeightFn::YEvaluator {
        Rng rng(hash_x(seed, x));
        std::vector<std::pair<double, double>> num_ms, den_ms;
        num_ms.reserve(static_cast<std::size_t>(h));
        den_ms.reserve(static_cast<std::size_t>(h));
        for (int k = 0; k < h; ++k) {
          const double a = behavior_sample(*pi_b_hat, x, rng);
          den_ms.push_back(p_hat->mean_sigma(x, a));
        }
        if (share_draws) {
          num_ms = den_ms;
        } else {
          for (int k = 0; k < h; ++k) {
            const double a = policy_sample(target, x, rng);
            num_ms.push_back(p_hat->mean_sigma(x, a));
          }
        }
        return [num_ms = std::move(num_ms), den_ms = std::move(den_ms), diag](double y) {
          double num = 0.0, den = 0.0;
          for (const auto& [m, s] : num_ms) num += normal_pdf(y, m, s);
          for (const auto& [m, s] : den_ms) den += normal_pdf(y, m, s);
          num /= static_cast<double>(num_ms.size());
          den /= static_cast<double>(den_ms.size());
          if (!std::isfinite(num) || !std::isfinite(den))
            throw NumericError("mc_weight: non-finite density during evaluation");
          if (den < kEstFloor) {
            den = kEstFloor;
            diag->floor_hits.fetch_add(1, std::memory_order_relaxed);
          }
          return num / den;
        };
      },
      WeightKind::MonteCarlo, h, diag);
  return fn;
}

WeightFn mixture_ratio_weight(
    int num_actions, std::function<double(const std::vector<double>&, int)> target_prob,
    std::function<double(const std::vector<double>&, int)> behavior_prob,
    std::function<double(const std::vector<double>&, int, double)> cond_density,
    WeightKind kind) {
  if (num_actions < 1) throw ValidationError("mixture_ratio_weight: need >= 1 action");
  auto diag = std::make_shared<WeightDiagnostics>();
  WeightFn fn(
      [num_actions, target_prob, behavior_prob, cond_density,
       diag](const std::vector<double>& x) -> WeightFn::YEvaluator {
        std::vector<double> tp(static_cast<std::size_t>(num_actions));
        std::vector<double> bp(static_cast<std::size_t>(num_actions));
        for (int k = 0; k < num_actions; ++k) {
          tp[static_cast<std::size_t>(k)] = target_prob(x, k);
          bp[static_cast<std::size_t>(k)] = behavior_prob(x, k);
        }
        return [num_actions, tp = std::move(tp), bp = std::move(bp), cond_density, diag,
                x](double y) {
          double num = 0.0, den = 0.0;
          for (int k = 0; k < num_actions; ++k) {
            const double d = cond_density(x, k, y);
            num += tp[static_cast<std::size_t>(k)] * d;
            den += bp[static_cast<std::size_t>(k)] * d;
          }
          if (!std::isfinite(num) || !std::isfinite(den))
            throw NumericError("mixture_ratio_weight: non-finite density");
          if (den < kEstFloor) {
            den = kEstFloor;
            diag->floor_hits.fetch_add(1, std::memory_order_relaxed);
          }
          return num / den;
        };
      },
      kind, 0, diag);
  return fn;
}

WeightFn exact_sum_weight(std::shared_ptr<const GaussianConditional> p_hat,
                          std::shared_ptr<const BehaviorModel> pi_b_hat,
                          const PolicySpec& target) {
  validate_policy(target);
  if (policy_action_kind(target) != ActionKind::Discrete)
    throw ValidationError("exact_sum_weight: requires a discrete action space");
  if (p_hat->action_kind() != ActionKind::Discrete)
    throw ValidationError("exact_sum_weight: outcome model must take discrete actions");
  if (!std::holds_alternative<SoftmaxPolicyModel>(*pi_b_hat))
    throw ValidationError("exact_sum_weight: behavior model must be a classifier");
  const int K = p_hat->num_actions();

  auto diag = std::make_shared<WeightDiagnostics>();
  WeightFn fn(
      [p_hat, pi_b_hat, target, K, diag](const std::vector<double>& x) -> WeightFn::YEvaluator {
        std::vector<double> tp(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k)
          tp[static_cast<std::size_t>(k)] = policy_prob(target, x, static_cast<double>(k));
        const Eigen::VectorXd bp = std::get<SoftmaxPolicyModel>(*pi_b_hat).probs(x);
        std::vector<std::pair<double, double>> ms(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k)
          ms[static_cast<std::size_t>(k)] = p_hat->mean_sigma(x, static_cast<double>(k));
        return [tp = std::move(tp), bp, ms = std::move(ms), K, diag](double y) {
          double num = 0.0, den = 0.0;
          for (int k = 0; k < K; ++k) {
            const auto& [m, s] = ms[static_cast<std::size_t>(k)];
            const double d = normal_pdf(y, m, s);
            num += tp[static_cast<std::size_t>(k)] * d;
            den += bp(k) * d;
          }
          if (den < kEstFloor) {
            den = kEstFloor;
            diag->floor_hits.fetch_add(1, std::memory_order_relaxed);
          }
          return num / den;
        };
      },
      WeightKind::ExactSum, 0, diag);
  return fn;
}

WeightFn gamma_perturbed_weight(const SyntheticEnv& env, const PolicySpec& target,
                                const PolicySpec& behavior, double gamma_bound,
                                std::uint64_t seed) {
  if (!(gamma_bound >= 1.0))
    throw ValidationError("gamma_perturbed_weight: bound must be >= 1");
  validate_policy(target);
  validate_policy(behavior);
  const double log_gamma = std::log(gamma_bound);
  // smooth deterministic multiplier in [1/Gamma, Gamma]
  std::uint64_t s = seed;
  const double c1 = 0.7 + 0.6 * (static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53);
  const double c2 = 1.3 + 0.9 * (static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53);
  const double c3 = 0.9 + 0.7 * (static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53);
  const double phase = 6.28 * (static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53);
  auto gamma = [=](double x0, double a, double y) {
    return std::exp(std::sin(c1 * x0 + c2 * a + c3 * y + phase) * log_gamma);
  };

  if (const auto* denv = std::get_if<ToyDiscreteEnv>(&env)) {
    const ToyDiscreteEnv de = *denv;
    auto target_prob = [target](const std::vector<double>& x, int k) {
      return policy_prob(target, x, static_cast<double>(k));
    };
    auto behavior_prob = [behavior](const std::vector<double>& x, int k) {
      return policy_prob(behavior, x, static_cast<double>(k));
    };
    auto density = [de, gamma, env](const std::vector<double>& x, int k, double y) {
      return gamma(x[0], static_cast<double>(k), y) *
             env_density(env, x, static_cast<double>(k), y);
    };
    return mixture_ratio_weight(de.num_actions(), target_prob, behavior_prob, density,
                                WeightKind::Exact);
  }
  throw ValidationError("gamma_perturbed_weight: implemented for the discrete env only");
}

WeightFn fit_direct_weight(const BanditDataset& train, const PolicySpec& target,
                           const BehaviorModel& pi_b_hat, const MlpSpec& spec,
                           const TrainOpts& opts) {
  validate_policy(target);
  const Eigen::Index d = train.dim();
  const Eigen::Index n = static_cast<Eigen::Index>(train.size());

  Eigen::MatrixXd X(d + 1, n);
  Eigen::VectorXd t(n);
  std::string bad;
  int bad_count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = train[static_cast<std::size_t>(i)];
    for (Eigen::Index r = 0; r < d; ++r) X(r, i) = s.x[r];
    X(d, i) = s.y;
    const double pb = behavior_prob(pi_b_hat, s.x, s.action);
    const double ratio = policy_prob(target, s.x, s.action) / pb;
    if (!std::isfinite(ratio)) {
      if (bad_count < 8) bad += (bad.empty() ? "" : ", ") + std::to_string(i);
      ++bad_count;
      t(i) = 0.0;
      continue;
    }
    t(i) = ratio;
  }
  if (bad_count > 0)
    throw IngestError("fit_direct_weight: behavior density vanished on " +
                      std::to_string(bad_count) + " observed actions (samples " + bad + ")");

  MlpSpec net_spec = spec;
  net_spec.input_dim = static_cast<int>(d + 1);
  net_spec.output_dim = 1;
  net_spec.init_seed = derive_seed(opts.seed, 0x60);
  auto net = std::make_shared<Mlp>(net_spec);
  net->set_output_bias(Eigen::VectorXd::Constant(1, t.mean()));

  auto compute = [&](std::span<const std::size_t> idx,
                     std::vector<MlpGradients>* grads) -> double {
    Eigen::MatrixXd Xb(X.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j)
      Xb.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(idx[j]));
    Mlp::Cache cache;
    const Eigen::MatrixXd out = net->forward_batch(Xb, cache);
    double loss = 0.0;
    Eigen::MatrixXd d_out(1, out.cols());
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double diff = out(0, j) - t(static_cast<Eigen::Index>(idx[j]));
      loss += 0.5 * diff * diff;
      d_out(0, j) = diff;
    }
    if (grads) net->backward_batch(cache, d_out, (*grads)[0]);
    return loss;
  };

  TrainOpts topts = opts;
  topts.seed = derive_seed(opts.seed, 0x61);
  train_loop({net.get()}, static_cast<std::size_t>(n), topts, compute);

  return WeightFn(
      [net](const std::vector<double>& x) -> WeightFn::YEvaluator {
        return [net, x](double y) {
          Eigen::VectorXd v(static_cast<Eigen::Index>(x.size()) + 1);
          for (std::size_t i = 0; i < x.size(); ++i)
            v(static_cast<Eigen::Index>(i)) = x[i];
          v(static_cast<Eigen::Index>(x.size())) = y;
          return std::max(0.0, net->forward(v)(0));
        };
      },
      WeightKind::Regression);
}

DeltaWEstimate estimate_delta_w(const WeightFn& w_hat, const WeightFn& w_true,
                                const BanditDataset& sample) {
  const std::size_t n = sample.size();
  if (n == 0) throw ValidationError("estimate_delta_w: empty sample");

  std::vector<double> hat(n), truth(n);
  double hat_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = sample[i];
    hat[i] = w_hat(s.x, s.y);
    truth[i] = w_true(s.x, s.y);
    hat_mean += hat[i];
  }
  hat_mean /= static_cast<double>(n);
  if (!(hat_mean > 0.0))
    throw ValidationError("estimate_delta_w: estimated weights have zero mean");

  // rescale the estimate to unit empirical mean before comparing
  double mean_abs = 0.0, mean_abs_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = std::fabs(hat[i] / hat_mean - truth[i]);
    mean_abs += d;
    mean_abs_sq += d * d;
  }
  mean_abs /= static_cast<double>(n);
  mean_abs_sq /= static_cast<double>(n);
  const double var = std::max(0.0, mean_abs_sq - mean_abs * mean_abs);

  DeltaWEstimate est;
  est.value = 0.5 * mean_abs;
  est.std_error = 0.5 * std::sqrt(var / static_cast<double>(n));
  est.sample_size = n;
  return est;
}

}  // namespace coppkit
