#include "coppkit/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace coppkit {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

double softplus(double s) { return s > 30.0 ? s : std::log1p(std::exp(s)); }

double softplus_inv(double v) {
  // inverse of log(1 + e^s); v must be positive
  return v > 30.0 ? v : std::log(std::expm1(v));
}

double sigmoid(double s) {
  return s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

Eigen::MatrixXd gather_cols(const Eigen::MatrixXd& m, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(idx[j]));
  return out;
}

double empirical_quantile(std::vector<double> v, double beta) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  std::size_t k = static_cast<std::size_t>(std::ceil(beta * static_cast<double>(n)));
  if (k == 0) k = 1;
  if (k > n) k = n;
  return v[k - 1];
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& xs) {
  const Eigen::Index d = static_cast<Eigen::Index>(xs.front().size());
  Eigen::MatrixXd m(d, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (Eigen::Index r = 0; r < d; ++r) m(r, static_cast<Eigen::Index>(i)) = xs[i][r];
  return m;
}

}  // namespace

double pinball_loss(double prediction, double y, double beta) {
  if (!(beta > 0.0 && beta < 1.0))
    throw ValidationError("pinball_loss: beta must lie in (0, 1)");
  const double diff = prediction - y;
  return diff > 0.0 ? beta * diff : (1.0 - beta) * (-diff);
}

// ---- QuantilePair ---------------------------------------------------------

QuantilePair::QuantilePair(Mlp lo, Mlp hi, double alpha_lo, double alpha_hi)
    : lo_(std::move(lo)), hi_(std::move(hi)), alpha_lo_(alpha_lo), alpha_hi_(alpha_hi) {
  if (!(alpha_lo_ < alpha_hi_))
    throw ValidationError("QuantilePair: alpha_lo must be < alpha_hi");
}

double QuantilePair::lo(const std::vector<double>& x) const {
  return lo_.forward(Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()))(0);
}

double QuantilePair::hi(const std::vector<double>& x) const {
  return bounds(x).second;
}

std::pair<double, double> QuantilePair::bounds(const std::vector<double>& x) const {
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const double l = lo_.forward(xv)(0);
  const double h = hi_.forward(xv)(0);
  return {l, std::max(h, l)};
}

// ---- GaussianConditional ----------------------------------------------------

GaussianConditional::GaussianConditional(Mlp mu, Mlp sigma_raw, ActionKind action_kind,
                                         int num_actions)
    : mu_(std::move(mu)),
      sigma_raw_(std::move(sigma_raw)),
      action_kind_(action_kind),
      num_actions_(num_actions) {}

Eigen::VectorXd GaussianConditional::encode(const std::vector<double>& x, double a) const {
  const Eigen::Index d = static_cast<Eigen::Index>(x.size());
  if (action_kind_ == ActionKind::Discrete) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d + num_actions_);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = x[i];
    v(d + static_cast<Eigen::Index>(a)) = 1.0;
    return v;
  }
  Eigen::VectorXd v(d + 1);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = x[i];
  v(d) = a;
  return v;
}

double GaussianConditional::mean(const std::vector<double>& x, double a) const {
  return mu_.forward(encode(x, a))(0);
}

double GaussianConditional::sigma(const std::vector<double>& x, double a) const {
  return softplus(sigma_raw_.forward(encode(x, a))(0)) + kSigmaFloor;
}

std::pair<double, double> GaussianConditional::mean_sigma(const std::vector<double>& x,
                                                          double a) const {
  const Eigen::VectorXd v = encode(x, a);
  return {mu_.forward(v)(0), softplus(sigma_raw_.forward(v)(0)) + kSigmaFloor};
}

double GaussianConditional::log_density(const std::vector<double>& x, double a,
                                        double y) const {
  const auto [m, s] = mean_sigma(x, a);
  const double z = (y - m) / s;
  return -kHalfLog2Pi - std::log(s) - 0.5 * z * z;
}

double GaussianConditional::density(const std::vector<double>& x, double a, double y) const {
  return std::exp(log_density(x, a, y));
}

// ---- SoftmaxPolicyModel -----------------------------------------------------

SoftmaxPolicyModel::SoftmaxPolicyModel(Mlp net, int num_classes)
    : net_(std::move(net)), num_classes_(num_classes) {}

Eigen::VectorXd SoftmaxPolicyModel::probs(const std::vector<double>& x) const {
  Eigen::VectorXd z =
      net_.forward(Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()));
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

double SoftmaxPolicyModel::prob(const std::vector<double>& x, int k) const {
  return probs(x)(k);
}

int SoftmaxPolicyModel::argmax(const std::vector<double>& x) const {
  Eigen::Index best = 0;
  probs(x).maxCoeff(&best);
  return static_cast<int>(best);
}

// ---- GaussianPolicyModel -----------------------------------------------------

GaussianPolicyModel::GaussianPolicyModel(Mlp mean_net, double stddev)
    : mean_net_(std::move(mean_net)), stddev_(stddev) {
  if (!(stddev_ > 0.0)) throw ValidationError("GaussianPolicyModel: std must be positive");
}

double GaussianPolicyModel::mean(const std::vector<double>& x) const {
  return mean_net_.forward(Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()))(0);
}

double GaussianPolicyModel::density(const std::vector<double>& x, double a) const {
  const double z = (a - mean(x)) / stddev_;
  return std::exp(-0.5 * z * z) / (stddev_ * std::sqrt(2.0 * std::numbers::pi));
}

double GaussianPolicyModel::sample(const std::vector<double>& x, Rng& rng) const {
  return rng.normal(mean(x), stddev_);
}

double behavior_prob(const BehaviorModel& m, const std::vector<double>& x, double a) {
  if (const auto* s = std::get_if<SoftmaxPolicyModel>(&m))
    return s->prob(x, static_cast<int>(a));
  return std::get<GaussianPolicyModel>(m).density(x, a);
}

double behavior_sample(const BehaviorModel& m, const std::vector<double>& x, Rng& rng) {
  if (const auto* s = std::get_if<SoftmaxPolicyModel>(&m)) {
    Eigen::VectorXd p = s->probs(x);
    std::vector<double> w(p.data(), p.data() + p.size());
    return static_cast<double>(rng.categorical(w));
  }
  return std::get<GaussianPolicyModel>(m).sample(x, rng);
}

// ---- SoftmaxConditional -------------------------------------------------------

SoftmaxConditional::SoftmaxConditional(Mlp net, ActionKind action_kind, int num_actions,
                                       int num_labels)
    : net_(std::move(net)),
      action_kind_(action_kind),
      num_actions_(num_actions),
      num_labels_(num_labels) {}

Eigen::VectorXd SoftmaxConditional::encode(const std::vector<double>& x, double a) const {
  const Eigen::Index d = static_cast<Eigen::Index>(x.size());
  if (action_kind_ == ActionKind::Discrete) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d + num_actions_);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = x[i];
    v(d + static_cast<Eigen::Index>(a)) = 1.0;
    return v;
  }
  Eigen::VectorXd v(d + 1);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = x[i];
  v(d) = a;
  return v;
}

Eigen::VectorXd SoftmaxConditional::probs(const std::vector<double>& x, double a) const {
  Eigen::VectorXd z = net_.forward(encode(x, a));
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

// ---- fitting ----------------------------------------------------------------

namespace {

// Fits the level-quantile of y given x. The check loss puts weight
// (1 - level) on over-predictions and level on under-predictions, whose
// population minimizer is exactly the level-quantile.
Mlp fit_pinball_net(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double level,
                    MlpSpec spec, const TrainOpts& opts,
                    const std::optional<std::vector<double>>& weights) {
  spec.input_dim = static_cast<int>(X.rows());
  spec.output_dim = 1;
  Mlp net(spec);
  std::vector<double> yv(y.data(), y.data() + y.size());
  net.set_output_bias(Eigen::VectorXd::Constant(1, empirical_quantile(yv, level)));

  const double w_over = 1.0 - level;
  const double w_under = level;
  auto compute = [&](std::span<const std::size_t> idx,
                     std::vector<MlpGradients>* grads) -> double {
    const Eigen::MatrixXd Xb = gather_cols(X, idx);
    Mlp::Cache cache;
    const Eigen::MatrixXd out = net.forward_batch(Xb, cache);
    double loss = 0.0;
    Eigen::MatrixXd d_out(1, out.cols());
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double w = weights ? (*weights)[idx[j]] : 1.0;
      const double diff = out(0, j) - y(static_cast<Eigen::Index>(idx[j]));
      // kink convention: prediction >= y takes the over-branch slope
      if (diff >= 0.0) {
        loss += w * w_over * diff;
        d_out(0, j) = w * w_over;
      } else {
        loss += w * w_under * (-diff);
        d_out(0, j) = -w * w_under;
      }
    }
    if (grads) net.backward_batch(cache, d_out, (*grads)[0]);
    return loss;
  };

  train_loop({&net}, static_cast<std::size_t>(X.cols()), opts, compute);
  return net;
}

}  // namespace

QuantilePair fit_quantile_pair_xy(const std::vector<std::vector<double>>& xs,
                                  const std::vector<double>& ys, double alpha_lo,
                                  double alpha_hi, const MlpSpec& spec, const TrainOpts& opts,
                                  const std::optional<std::vector<double>>& sample_weights) {
  if (!(alpha_lo < alpha_hi))
    throw ValidationError("fit_quantile_pair: alpha_lo must be < alpha_hi");
  if (!(alpha_lo > 0.0 && alpha_hi < 1.0))
    throw ValidationError("fit_quantile_pair: quantile levels must lie in (0, 1)");
  if (xs.empty() || xs.size() != ys.size())
    throw ValidationError("fit_quantile_pair: empty or mismatched inputs");

  std::optional<std::vector<double>> weights = sample_weights;
  if (weights) {
    if (weights->size() != ys.size())
      throw ValidationError("fit_quantile_pair: weight count mismatch");
    double sum = 0.0, mn = (*weights)[0], mx = (*weights)[0];
    for (double w : *weights) {
      if (w < 0.0) throw ValidationError("fit_quantile_pair: negative sample weight");
      sum += w;
      mn = std::min(mn, w);
      mx = std::max(mx, w);
    }
    if (sum == 0.0) throw ValidationError("fit_quantile_pair: all sample weights are zero");
    if (mn == mx) {
      weights.reset();  // uniform weights reduce exactly to the unweighted fit
    } else {
      const double inv_mean = static_cast<double>(weights->size()) / sum;
      for (double& w : *weights) w *= inv_mean;
    }
  }

  const Eigen::MatrixXd X = to_matrix(xs);
  const Eigen::VectorXd y =
      Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));

  TrainOpts lo_opts = opts;
  lo_opts.seed = derive_seed(opts.seed, 0x10);
  TrainOpts hi_opts = opts;
  hi_opts.seed = derive_seed(opts.seed, 0x11);

  MlpSpec lo_spec = spec;
  lo_spec.init_seed = derive_seed(opts.seed, 0x20);
  MlpSpec hi_spec = spec;
  hi_spec.init_seed = derive_seed(opts.seed, 0x21);

  Mlp lo = fit_pinball_net(X, y, alpha_lo, lo_spec, lo_opts, weights);
  Mlp hi = fit_pinball_net(X, y, alpha_hi, hi_spec, hi_opts, weights);
  return QuantilePair(std::move(lo), std::move(hi), alpha_lo, alpha_hi);
}

QuantilePair fit_quantile_pair(const BanditDataset& train, double alpha_lo, double alpha_hi,
                               const MlpSpec& spec, const TrainOpts& opts,
                               const std::optional<std::vector<double>>& sample_weights) {
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  xs.reserve(train.size());
  ys.reserve(train.size());
  for (const auto& s : train.samples()) {
    xs.push_back(s.x);
    ys.push_back(s.y);
  }
  return fit_quantile_pair_xy(xs, ys, alpha_lo, alpha_hi, spec, opts, sample_weights);
}

GaussianConditional fit_gaussian_conditional(const BanditDataset& train, const MlpSpec& spec,
                                             const TrainOpts& opts) {
  if (train.outcome_kind() != OutcomeKind::Continuous)
    throw ValidationError("fit_gaussian_conditional: outcomes must be continuous");

  const ActionKind akind = train.action_kind();
  const int K = train.num_actions();
  const Eigen::Index d = train.dim();
  const Eigen::Index din = akind == ActionKind::Discrete ? d + K : d + 1;
  const Eigen::Index n = static_cast<Eigen::Index>(train.size());

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(din, n);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = train[static_cast<std::size_t>(i)];
    for (Eigen::Index r = 0; r < d; ++r) X(r, i) = s.x[r];
    if (akind == ActionKind::Discrete)
      X(d + static_cast<Eigen::Index>(s.action), i) = 1.0;
    else
      X(d, i) = s.action;
    y(i) = s.y;
  }

  const double y_mean = y.mean();
  const double y_var = (y.array() - y_mean).square().sum() / static_cast<double>(n);
  const double y_std = std::max(std::sqrt(y_var), 2.0 * GaussianConditional::kSigmaFloor);

  MlpSpec mu_spec = spec;
  mu_spec.input_dim = static_cast<int>(din);
  mu_spec.output_dim = 1;
  mu_spec.init_seed = derive_seed(opts.seed, 0x30);
  MlpSpec sg_spec = mu_spec;
  sg_spec.init_seed = derive_seed(opts.seed, 0x31);

  Mlp mu(mu_spec), sigma_raw(sg_spec);
  // anchor the initial model at the global Gaussian fit
  mu.set_output_bias(Eigen::VectorXd::Constant(1, y_mean));
  sigma_raw.set_output_bias(
      Eigen::VectorXd::Constant(1, softplus_inv(y_std - GaussianConditional::kSigmaFloor)));

  auto compute = [&](std::span<const std::size_t> idx,
                     std::vector<MlpGradients>* grads) -> double {
    const Eigen::MatrixXd Xb = gather_cols(X, idx);
    Mlp::Cache mu_cache, sg_cache;
    const Eigen::MatrixXd mu_out = mu.forward_batch(Xb, mu_cache);
    const Eigen::MatrixXd sg_out = sigma_raw.forward_batch(Xb, sg_cache);
    double loss = 0.0;
    Eigen::MatrixXd d_mu(1, mu_out.cols()), d_sg(1, sg_out.cols());
    for (Eigen::Index j = 0; j < mu_out.cols(); ++j) {
      const double target = y(static_cast<Eigen::Index>(idx[j]));
      const double m = mu_out(0, j);
      const double raw = sg_out(0, j);
      const double s = softplus(raw) + GaussianConditional::kSigmaFloor;
      const double z = (target - m) / s;
      loss += kHalfLog2Pi + std::log(s) + 0.5 * z * z;
      d_mu(0, j) = (m - target) / (s * s);
      d_sg(0, j) = (1.0 / s - z * z / s) * sigmoid(raw);
    }
    if (grads) {
      mu.backward_batch(mu_cache, d_mu, (*grads)[0]);
      sigma_raw.backward_batch(sg_cache, d_sg, (*grads)[1]);
    }
    return loss;
  };

  TrainOpts topts = opts;
  topts.seed = derive_seed(opts.seed, 0x32);
  train_loop({&mu, &sigma_raw}, static_cast<std::size_t>(n), topts, compute);
  return GaussianConditional(std::move(mu), std::move(sigma_raw), akind, K);
}

SoftmaxPolicyModel fit_softmax_classifier(const std::vector<std::vector<double>>& xs,
                                          const std::vector<int>& labels, int num_classes,
                                          const MlpSpec& spec, const TrainOpts& opts) {
  if (xs.empty() || xs.size() != labels.size())
    throw ValidationError("fit_softmax_classifier: empty or mismatched inputs");
  if (num_classes < 1) throw ValidationError("fit_softmax_classifier: need >= 1 class");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw ValidationError("fit_softmax_classifier: label out of range");

  const Eigen::MatrixXd X = to_matrix(xs);
  MlpSpec net_spec = spec;
  net_spec.input_dim = static_cast<int>(X.rows());
  net_spec.output_dim = num_classes;
  net_spec.init_seed = derive_seed(opts.seed, 0x40);
  Mlp net(net_spec);  // zero output layer -> uniform class probabilities

  auto compute = [&](std::span<const std::size_t> idx,
                     std::vector<MlpGradients>* grads) -> double {
    const Eigen::MatrixXd Xb = gather_cols(X, idx);
    Mlp::Cache cache;
    const Eigen::MatrixXd z = net.forward_batch(Xb, cache);
    double loss = 0.0;
    Eigen::MatrixXd d_out(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const int target = labels[idx[j]];
      const double m = z.col(j).maxCoeff();
      const Eigen::VectorXd e = (z.col(j).array() - m).exp();
      const double denom = e.sum();
      loss += std::log(denom) + m - z(target, j);
      d_out.col(j) = e / denom;
      d_out(target, j) -= 1.0;
    }
    if (grads) net.backward_batch(cache, d_out, (*grads)[0]);
    return loss;
  };

  TrainOpts topts = opts;
  topts.seed = derive_seed(opts.seed, 0x41);
  train_loop({&net}, xs.size(), topts, compute);
  return SoftmaxPolicyModel(std::move(net), num_classes);
}

BehaviorModel fit_behavior_policy(const BanditDataset& train, const MlpSpec& spec,
                                  const TrainOpts& opts) {
  if (train.action_kind() == ActionKind::Discrete) {
    std::vector<std::vector<double>> xs;
    std::vector<int> acts;
    xs.reserve(train.size());
    for (const auto& s : train.samples()) {
      xs.push_back(s.x);
      acts.push_back(s.action_index());
    }
    return fit_softmax_classifier(xs, acts, train.num_actions(), spec, opts);
  }

  // continuous actions: regression mean + residual-MLE std
  const Eigen::Index d = train.dim();
  const Eigen::Index n = static_cast<Eigen::Index>(train.size());
  Eigen::MatrixXd X(d, n);
  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = train[static_cast<std::size_t>(i)];
    for (Eigen::Index r = 0; r < d; ++r) X(r, i) = s.x[r];
    a(i) = s.action;
  }

  MlpSpec net_spec = spec;
  net_spec.input_dim = static_cast<int>(d);
  net_spec.output_dim = 1;
  net_spec.init_seed = derive_seed(opts.seed, 0x50);
  Mlp net(net_spec);
  net.set_output_bias(Eigen::VectorXd::Constant(1, a.mean()));

  auto compute = [&](std::span<const std::size_t> idx,
                     std::vector<MlpGradients>* grads) -> double {
    const Eigen::MatrixXd Xb = gather_cols(X, idx);
    Mlp::Cache cache;
    const Eigen::MatrixXd out = net.forward_batch(Xb, cache);
    double loss = 0.0;
    Eigen::MatrixXd d_out(1, out.cols());
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double diff = out(0, j) - a(static_cast<Eigen::Index>(idx[j]));
      loss += 0.5 * diff * diff;
      d_out(0, j) = diff;
    }
    if (grads) net.backward_batch(cache, d_out, (*grads)[0]);
    return loss;
  };

  TrainOpts topts = opts;
  topts.seed = derive_seed(opts.seed, 0x51);
  train_loop({&net}, static_cast<std::size_t>(n), topts, compute);

  const Eigen::MatrixXd fitted = net.forward_batch(X);
  const double mse = (fitted.row(0).transpose() - a).squaredNorm() / static_cast<double>(n);
  const double stddev = std::max(std::sqrt(mse), 1e-3);
  return GaussianPolicyModel(std::move(net), stddev);
}

SoftmaxConditional fit_softmax_conditional(const BanditDataset& train, const MlpSpec& spec,
                                           const TrainOpts& opts) {
  if (train.outcome_kind() != OutcomeKind::Discrete)
    throw ValidationError("fit_softmax_conditional: outcomes must be discrete");
  const ActionKind akind = train.action_kind();
  const int K = train.num_actions();
  const int L = train.num_labels();
  const Eigen::Index d = train.dim();

  std::vector<std::vector<double>> enc;
  std::vector<int> labels;
  enc.reserve(train.size());
  for (const auto& s : train.samples()) {
    std::vector<double> v = s.x;
    if (akind == ActionKind::Discrete) {
      v.resize(static_cast<std::size_t>(d) + K, 0.0);
      v[static_cast<std::size_t>(d) + static_cast<std::size_t>(s.action)] = 1.0;
    } else {
      v.push_back(s.action);
    }
    enc.push_back(std::move(v));
    labels.push_back(s.label());
  }
  SoftmaxPolicyModel model = fit_softmax_classifier(enc, labels, L, spec, opts);
  return SoftmaxConditional(model.net(), akind, K, L);
}

}  // namespace coppkit
