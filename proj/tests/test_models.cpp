#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "coppkit/checkpoint.hpp"
#include "coppkit/envs.hpp"
#include "coppkit/models.hpp"

using namespace coppkit;

namespace {

Mlp random_net(const MlpSpec& spec, std::uint64_t seed) {
  Mlp net(spec);
  Rng rng(seed);
  std::vector<double> params = net.flat_params();
  for (double& p : params) p = 0.3 * rng.normal();
  net.set_flat_params(params);
  return net;
}

TrainOpts quick_opts(std::uint64_t seed, int epochs = 400) {
  TrainOpts o;
  o.seed = seed;
  o.epochs = epochs;
  return o;
}

}  // namespace

TEST_CASE("pinball loss evaluates its two branches") {
  CHECK(pinball_loss(3.0, 3.0, 0.5) == 0.0);
  CHECK(pinball_loss(2.0, 0.0, 0.9) == doctest::Approx(1.8));
  CHECK(pinball_loss(0.0, 2.0, 0.9) == doctest::Approx(0.2));
  CHECK_THROWS_AS(pinball_loss(0.0, 1.0, 0.0), ValidationError);
  CHECK_THROWS_AS(pinball_loss(0.0, 1.0, 1.0), ValidationError);
}

TEST_CASE("analytic gradients match central differences") {
  const std::vector<std::vector<double>> xs = {{0.3, -1.2}, {1.1, 0.4}, {-0.7, 2.0}};

  SUBCASE("squared loss on a linear network is exact") {
    MlpSpec spec;
    spec.input_dim = 2;
    spec.hidden_sizes = {};
    spec.output_dim = 1;
    Mlp net = random_net(spec, 1);
    const std::vector<double> ys = {0.5, -0.3, 1.7};

    auto loss = [&](const Mlp& m) {
      double total = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double out =
            m.forward(Eigen::Map<const Eigen::VectorXd>(xs[i].data(), 2))(0);
        total += 0.5 * (out - ys[i]) * (out - ys[i]);
      }
      return total;
    };
    auto grad = [&](const Mlp& m) {
      MlpGradients g = m.zero_gradients();
      for (std::size_t i = 0; i < xs.size(); ++i) {
        Mlp::Cache cache;
        Eigen::MatrixXd X = Eigen::Map<const Eigen::MatrixXd>(xs[i].data(), 2, 1);
        const Eigen::MatrixXd out = m.forward_batch(X, cache);
        Eigen::MatrixXd d(1, 1);
        d(0, 0) = out(0, 0) - ys[i];
        m.backward_batch(cache, d, g);
      }
      return g;
    };
    CHECK(grad_check(net, loss, grad) <= 1e-6);
  }

  SUBCASE("pinball loss away from the kink") {
    MlpSpec spec;
    spec.input_dim = 2;
    spec.hidden_sizes = {8};
    spec.output_dim = 1;
    Mlp net = random_net(spec, 2);
    const double beta = 0.9;
    // targets far from the predictions relative to the probe step
    std::vector<double> ys;
    for (const auto& x : xs)
      ys.push_back(net.forward(Eigen::Map<const Eigen::VectorXd>(x.data(), 2))(0) +
                   (ys.size() % 2 == 0 ? 2.0 : -2.0));

    auto loss = [&](const Mlp& m) {
      double total = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double out =
            m.forward(Eigen::Map<const Eigen::VectorXd>(xs[i].data(), 2))(0);
        total += pinball_loss(out, ys[i], beta);
      }
      return total;
    };
    auto grad = [&](const Mlp& m) {
      MlpGradients g = m.zero_gradients();
      for (std::size_t i = 0; i < xs.size(); ++i) {
        Mlp::Cache cache;
        Eigen::MatrixXd X = Eigen::Map<const Eigen::MatrixXd>(xs[i].data(), 2, 1);
        const Eigen::MatrixXd out = m.forward_batch(X, cache);
        Eigen::MatrixXd d(1, 1);
        d(0, 0) = out(0, 0) >= ys[i] ? beta : -(1.0 - beta);
        m.backward_batch(cache, d, g);
      }
      return g;
    };
    CHECK(grad_check(net, loss, grad) <= 1e-4);
  }

  SUBCASE("gaussian negative log-likelihood, both networks") {
    MlpSpec spec;
    spec.input_dim = 2;
    spec.hidden_sizes = {8};
    spec.output_dim = 1;
    Mlp mu = random_net(spec, 3);
    Mlp sg = random_net(spec, 4);
    const std::vector<double> ys = {0.4, -1.0, 0.9};
    constexpr double floor = GaussianConditional::kSigmaFloor;

    auto softplus = [](double s) { return s > 30.0 ? s : std::log1p(std::exp(s)); };
    auto sigmoid = [](double s) { return 1.0 / (1.0 + std::exp(-s)); };

    auto nll = [&](const Mlp& mu_net, const Mlp& sg_net) {
      double total = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const Eigen::Map<const Eigen::VectorXd> x(xs[i].data(), 2);
        const double m = mu_net.forward(x)(0);
        const double s = softplus(sg_net.forward(x)(0)) + floor;
        const double z = (ys[i] - m) / s;
        total += 0.5 * std::log(2.0 * 3.14159265358979323846) + std::log(s) + 0.5 * z * z;
      }
      return total;
    };

    auto grads_for = [&](const Mlp& mu_net, const Mlp& sg_net, bool wrt_mu) {
      MlpGradients g = wrt_mu ? mu_net.zero_gradients() : sg_net.zero_gradients();
      for (std::size_t i = 0; i < xs.size(); ++i) {
        Eigen::MatrixXd X = Eigen::Map<const Eigen::MatrixXd>(xs[i].data(), 2, 1);
        Mlp::Cache mu_cache, sg_cache;
        const double m = mu_net.forward_batch(X, mu_cache)(0, 0);
        const double raw = sg_net.forward_batch(X, sg_cache)(0, 0);
        const double s = softplus(raw) + floor;
        Eigen::MatrixXd d(1, 1);
        if (wrt_mu) {
          d(0, 0) = (m - ys[i]) / (s * s);
          mu_net.backward_batch(mu_cache, d, g);
        } else {
          const double z = (ys[i] - m) / s;
          d(0, 0) = (1.0 / s - z * z / s) * sigmoid(raw);
          sg_net.backward_batch(sg_cache, d, g);
        }
      }
      return g;
    };

    CHECK(grad_check(
              mu, [&](const Mlp& m) { return nll(m, sg); },
              [&](const Mlp& m) { return grads_for(m, sg, true); }) <= 1e-4);
    CHECK(grad_check(
              sg, [&](const Mlp& m) { return nll(mu, m); },
              [&](const Mlp& m) { return grads_for(mu, m, false); }) <= 1e-4);
  }
}

TEST_CASE("quantile pair recovers gaussian quantiles on iid data") {
  // y ~ N(0,1) independent of x
  Rng rng(21);
  std::vector<LoggedSample> samples;
  for (int i = 0; i < 2000; ++i)
    samples.push_back({{rng.normal(0.0, 1.0)}, 0.0, rng.normal(0.0, 1.0)});
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 1);

  MlpSpec spec;
  spec.hidden_sizes = {32};
  const QuantilePair q = fit_quantile_pair(train, 0.05, 0.95, spec, quick_opts(7));

  double lo_mean = 0.0, hi_mean = 0.0;
  Rng xr(22);
  const int n_eval = 200;
  for (int i = 0; i < n_eval; ++i) {
    const std::vector<double> x{xr.normal(0.0, 1.0)};
    const auto [lo, hi] = q.bounds(x);
    lo_mean += lo;
    hi_mean += hi;
  }
  lo_mean /= n_eval;
  hi_mean /= n_eval;
  CHECK(std::fabs(lo_mean - (-1.645)) < 0.15);
  CHECK(std::fabs(hi_mean - 1.645) < 0.15);
}

TEST_CASE("quantile pair collapses on constant outcomes") {
  std::vector<LoggedSample> samples;
  Rng rng(23);
  for (int i = 0; i < 500; ++i) samples.push_back({{rng.normal(0.0, 1.0)}, 0.0, 4.2});
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 1);
  MlpSpec spec;
  spec.hidden_sizes = {16};
  const QuantilePair q = fit_quantile_pair(train, 0.05, 0.95, spec, quick_opts(9, 50));
  for (double xv : {-1.0, 0.0, 2.0}) {
    const auto [lo, hi] = q.bounds({xv});
    CHECK(std::fabs(lo - 4.2) < 0.01);
    CHECK(std::fabs(hi - 4.2) < 0.01);
  }
}

TEST_CASE("uniform sample weights reproduce the unweighted fit exactly") {
  Rng rng(25);
  std::vector<LoggedSample> samples;
  for (int i = 0; i < 300; ++i) {
    const double x = rng.normal(0.0, 1.0);
    samples.push_back({{x}, 0.0, x + rng.normal(0.0, 0.5)});
  }
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 1);
  MlpSpec spec;
  spec.hidden_sizes = {16};

  const QuantilePair a = fit_quantile_pair(train, 0.1, 0.9, spec, quick_opts(31, 60));
  const QuantilePair b = fit_quantile_pair(train, 0.1, 0.9, spec, quick_opts(31, 60),
                                           std::vector<double>(300, 3.7));
  CHECK(a.lo_net().flat_params() == b.lo_net().flat_params());
  CHECK(a.hi_net().flat_params() == b.hi_net().flat_params());

  CHECK_THROWS_AS(fit_quantile_pair(train, 0.1, 0.9, spec, quick_opts(31, 10),
                                    std::vector<double>(300, 0.0)),
                  ValidationError);
}

TEST_CASE("weighted pinball fit tilts the quantiles toward the heavy region") {
  // two outcome clusters; upweighting the high one must raise the fitted median
  Rng rng(26);
  std::vector<LoggedSample> samples;
  std::vector<double> weights;
  for (int i = 0; i < 600; ++i) {
    const bool high = i % 2 == 0;
    samples.push_back({{0.0}, 0.0, (high ? 5.0 : -5.0) + rng.normal(0.0, 0.2)});
    weights.push_back(high ? 9.0 : 1.0);
  }
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 1);
  MlpSpec spec;
  spec.hidden_sizes = {16};
  const QuantilePair q =
      fit_quantile_pair(train, 0.45, 0.55, spec, quick_opts(33, 150), weights);
  CHECK(q.lo({0.0}) > 3.0);
}

TEST_CASE("gaussian conditional learns the synthetic outcome law") {
  const SyntheticEnv env = ToyDiscreteEnv{};
  const PolicySpec pi_b = region_epsilon_policy(0.3);
  Rng rng(41);
  const BanditDataset train = gen_synthetic(env, pi_b, 4000, rng);

  MlpSpec spec;
  spec.hidden_sizes = {32};
  const GaussianConditional p_hat = fit_gaussian_conditional(train, spec, quick_opts(43));

  // action index 1 carries numeric value 2, so E[y | x=1, a-index 1] = 2
  CHECK(std::fabs(p_hat.mean({1.0}, 1.0) - 2.0) < 0.2);

  SUBCASE("sigma stays above the floor everywhere") {
    Rng xr(44);
    for (int i = 0; i < 10000; ++i) {
      const std::vector<double> x{xr.normal(0.0, 3.0)};
      const double a = static_cast<double>(xr.below(4));
      CHECK(p_hat.sigma(x, a) >= GaussianConditional::kSigmaFloor);
    }
  }

  SUBCASE("log-density peaks at the fitted mean") {
    const std::vector<double> x{0.7};
    const auto [m, s] = p_hat.mean_sigma(x, 2.0);
    CHECK(p_hat.log_density(x, 2.0, m) >= p_hat.log_density(x, 2.0, m + 3.0 * s));
  }
}

TEST_CASE("gaussian conditional on a degenerate cell") {
  std::vector<LoggedSample> samples;
  for (int i = 0; i < 400; ++i) samples.push_back({{0.5}, 1.0, 3.0});
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 4);
  MlpSpec spec;
  spec.hidden_sizes = {16};
  const GaussianConditional p_hat = fit_gaussian_conditional(train, spec, quick_opts(45));
  CHECK(std::fabs(p_hat.mean({0.5}, 1.0) - 3.0) < 0.01);
  CHECK(p_hat.sigma({0.5}, 1.0) < 5e-3);  // close to the positivity floor
}

TEST_CASE("behavior policy fit recovers the banded family") {
  const SyntheticEnv env = ToyDiscreteEnv{};
  const PolicySpec pi_b = region_epsilon_policy(0.3);
  Rng rng(51);
  const BanditDataset train = gen_synthetic(env, pi_b, 4000, rng);

  MlpSpec spec;
  spec.hidden_sizes = {16, 16};
  const BehaviorModel model = fit_behavior_policy(train, spec, quick_opts(53));
  const auto& net = std::get<SoftmaxPolicyModel>(model);

  Rng xr(54);
  double err = 0.0;
  const int n_eval = 1000;
  for (int i = 0; i < n_eval; ++i) {
    const std::vector<double> x{xr.normal(0.0, 3.0)};
    const Eigen::VectorXd p = net.probs(x);
    for (int a = 0; a < 4; ++a)
      err += std::fabs(p(a) - policy_prob(pi_b, x, static_cast<double>(a))) / 4.0;
  }
  CHECK(err / n_eval < 0.05);
}

TEST_CASE("behavior policy fit with a single action is trivially certain") {
  std::vector<LoggedSample> samples;
  Rng rng(55);
  for (int i = 0; i < 200; ++i)
    samples.push_back({{rng.normal(0.0, 1.0)}, 0.0, rng.normal(0.0, 1.0)});
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 1);
  MlpSpec spec;
  spec.hidden_sizes = {8};
  const BehaviorModel model = fit_behavior_policy(train, spec, quick_opts(57, 5));
  CHECK(std::get<SoftmaxPolicyModel>(model).prob({0.3}, 0) == doctest::Approx(1.0));
}

TEST_CASE("continuous behavior fit recovers the action-mean slope") {
  const SyntheticEnv env = ToyContinuousEnv{};
  const PolicySpec pi_b = ToyContinuousEnv{}.policy(0.0);
  Rng rng(61);
  const BanditDataset train = gen_synthetic(env, pi_b, 4000, rng);

  MlpSpec spec;
  spec.hidden_sizes = {16, 16};
  const BehaviorModel model = fit_behavior_policy(train, spec, quick_opts(63));
  const auto& g = std::get<GaussianPolicyModel>(model);

  const double slope = (g.mean({2.0}) - g.mean({-2.0})) / 4.0;
  CHECK(std::fabs(slope - 0.25) < 0.05);
  CHECK(std::fabs(g.stddev() - 1.0) < 0.1);
}

TEST_CASE("quantile crossing is repaired by the clamp") {
  MlpSpec spec;
  spec.input_dim = 1;
  spec.hidden_sizes = {4};
  spec.output_dim = 1;
  Mlp lo = random_net(spec, 71);
  Mlp hi = random_net(spec, 72);
  // force the raw upper net below the lower one
  Eigen::VectorXd bias_lo(1), bias_hi(1);
  bias_lo << 5.0;
  bias_hi << -5.0;
  lo.set_output_bias(bias_lo);
  hi.set_output_bias(bias_hi);
  const QuantilePair q(std::move(lo), std::move(hi), 0.05, 0.95);
  Rng rng(73);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> x{rng.normal(0.0, 2.0)};
    const auto [l, h] = q.bounds(x);
    CHECK(l <= h);
  }
}

TEST_CASE("training is bit-reproducible under identical seeds") {
  Rng rng(81);
  std::vector<LoggedSample> samples;
  for (int i = 0; i < 400; ++i) {
    const double x = rng.normal(0.0, 1.0);
    samples.push_back({{x}, static_cast<double>(i % 2), x + rng.normal(0.0, 0.3)});
  }
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 2);
  MlpSpec spec;
  spec.hidden_sizes = {16};

  const GaussianConditional a = fit_gaussian_conditional(train, spec, quick_opts(83, 40));
  const GaussianConditional b = fit_gaussian_conditional(train, spec, quick_opts(83, 40));
  CHECK(a.mu_net().flat_params() == b.mu_net().flat_params());
  CHECK(a.sigma_net().flat_params() == b.sigma_net().flat_params());
}

TEST_CASE("training diverges loudly") {
  Rng rng(85);
  std::vector<LoggedSample> samples;
  for (int i = 0; i < 300; ++i) {
    const double x = rng.normal(0.0, 1.0);
    samples.push_back({{x * 1e6}, 0.0, x * 1e160});
  }
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 1);
  MlpSpec spec;
  spec.hidden_sizes = {16};
  TrainOpts opts = quick_opts(87, 200);
  opts.learning_rate = 1e6;  // guarantees a non-finite loss
  CHECK_THROWS_AS(fit_gaussian_conditional(train, spec, opts), TrainingError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "coppkit_ckpt_test").string();
  fs::create_directories(dir);

  Rng rng(91);
  std::vector<LoggedSample> samples;
  for (int i = 0; i < 300; ++i) {
    const double x = rng.normal(0.0, 1.0);
    samples.push_back({{x}, static_cast<double>(i % 3), 2.0 * x + rng.normal(0.0, 0.4)});
  }
  const BanditDataset train(std::move(samples), ActionKind::Discrete,
                            OutcomeKind::Continuous, 3);
  MlpSpec spec;
  spec.hidden_sizes = {8};

  const QuantilePair q = fit_quantile_pair(train, 0.1, 0.9, spec, quick_opts(93, 30));
  save_model(q, dir + "/q.bin");
  const QuantilePair q2 = load_quantile_pair(dir + "/q.bin");
  CHECK(q.lo_net().flat_params() == q2.lo_net().flat_params());
  CHECK(q.alpha_lo() == q2.alpha_lo());
  CHECK(q.bounds({0.37}) == q2.bounds({0.37}));
  CHECK(checkpoint_kind(dir + "/q.bin") == "quantile_pair");

  const GaussianConditional p = fit_gaussian_conditional(train, spec, quick_opts(95, 30));
  save_model(p, dir + "/p.bin");
  const GaussianConditional p2 = load_gaussian_conditional(dir + "/p.bin");
  CHECK(p.mean_sigma({0.2}, 1.0) == p2.mean_sigma({0.2}, 1.0));

  const BehaviorModel b = fit_behavior_policy(train, spec, quick_opts(97, 30));
  save_model(std::get<SoftmaxPolicyModel>(b), dir + "/b.bin");
  const SoftmaxPolicyModel b2 = load_softmax_policy(dir + "/b.bin");
  CHECK(std::get<SoftmaxPolicyModel>(b).probs({0.5}) == b2.probs({0.5}));

  CHECK_THROWS_AS(load_gaussian_conditional(dir + "/q.bin"), IngestError);
  CHECK_THROWS_AS(load_quantile_pair(dir + "/missing.bin"), IngestError);

  {
    std::FILE* f = std::fopen((dir + "/bad.bin").c_str(), "wb");
    std::fputs("NOT-A-CHECKPOINT", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_quantile_pair(dir + "/bad.bin"), IngestError);
}
