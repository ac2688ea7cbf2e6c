#include "coppkit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace coppkit {

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1)
    throw ValidationError("MlpSpec: input and output dims must be >= 1");
  for (int h : hidden_sizes)
    if (h < 1) throw ValidationError("MlpSpec: hidden sizes must be >= 1");
}

void MlpGradients::set_zero() {
  for (auto& m : dW) m.setZero();
  for (auto& v : db) v.setZero();
}

void MlpGradients::scale(double s) {
  for (auto& m : dW) m *= s;
  for (auto& v : db) v *= s;
}

Mlp::Mlp(const MlpSpec& spec) : spec_(spec) {
  spec_.validate();
  std::vector<int> sizes;
  sizes.push_back(spec_.input_dim);
  for (int h : spec_.hidden_sizes) sizes.push_back(h);
  sizes.push_back(spec_.output_dim);

  Rng rng(spec_.init_seed);
  const int n_layers = static_cast<int>(sizes.size()) - 1;
  for (int l = 0; l < n_layers; ++l) {
    const int in = sizes[l];
    const int out = sizes[l + 1];
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out, in);
    if (l + 1 < n_layers) {
      const double scale = std::sqrt(2.0 / in);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) w(r, c) = scale * rng.normal();
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(out));
  }
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  Eigen::VectorXd a = x;
  const int L = num_layers();
  for (int l = 0; l < L; ++l) {
    Eigen::VectorXd z = weights_[l] * a + biases_[l];
    if (l + 1 < L) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd a = X;
  const int L = num_layers();
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd z = (weights_[l] * a).colwise() + biases_[l];
    if (l + 1 < L) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& X, Cache& cache) const {
  const int L = num_layers();
  cache.pre.assign(L, {});
  cache.act.assign(L + 1, {});
  cache.act[0] = X;
  for (int l = 0; l < L; ++l) {
    cache.pre[l] = (weights_[l] * cache.act[l]).colwise() + biases_[l];
    cache.act[l + 1] = (l + 1 < L) ? cache.pre[l].cwiseMax(0.0) : cache.pre[l];
  }
  return cache.act[L];
}

void Mlp::backward_batch(const Cache& cache, const Eigen::MatrixXd& d_out,
                         MlpGradients& grads) const {
  const int L = num_layers();
  Eigen::MatrixXd delta = d_out;
  for (int l = L - 1; l >= 0; --l) {
    grads.dW[l].noalias() += delta * cache.act[l].transpose();
    grads.db[l] += delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd mask = (cache.pre[l - 1].array() > 0.0).cast<double>();
      delta = (weights_[l].transpose() * delta).cwiseProduct(mask);
    }
  }
}

MlpGradients Mlp::zero_gradients() const {
  MlpGradients g;
  for (const auto& w : weights_) g.dW.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : biases_) g.db.push_back(Eigen::VectorXd::Zero(b.size()));
  return g;
}

void Mlp::set_output_bias(const Eigen::VectorXd& bias) {
  if (bias.size() != biases_.back().size())
    throw ValidationError("Mlp::set_output_bias: size mismatch");
  biases_.back() = bias;
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const auto& w : weights_) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases_) n += static_cast<std::size_t>(b.size());
  return n;
}

std::vector<double> Mlp::flat_params() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const auto& w : weights_)
    out.insert(out.end(), w.data(), w.data() + w.size());
  for (const auto& b : biases_)
    out.insert(out.end(), b.data(), b.data() + b.size());
  return out;
}

void Mlp::set_flat_params(std::span<const double> params) {
  if (params.size() != param_count())
    throw ValidationError("Mlp::set_flat_params: size mismatch");
  std::size_t off = 0;
  for (auto& w : weights_) {
    std::copy(params.begin() + off, params.begin() + off + w.size(), w.data());
    off += static_cast<std::size_t>(w.size());
  }
  for (auto& b : biases_) {
    std::copy(params.begin() + off, params.begin() + off + b.size(), b.data());
    off += static_cast<std::size_t>(b.size());
  }
}

AdamState::AdamState(const Mlp& net) {
  for (const auto& w : net.weights()) {
    mW_.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    vW_.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  for (const auto& b : net.biases()) {
    mb_.push_back(Eigen::VectorXd::Zero(b.size()));
    vb_.push_back(Eigen::VectorXd::Zero(b.size()));
  }
}

void AdamState::step(Mlp& net, const MlpGradients& grads, double learning_rate) {
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));

  auto& weights = net.mutable_weights();
  auto& biases = net.mutable_biases();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    mW_[l] = beta1 * mW_[l] + (1.0 - beta1) * grads.dW[l];
    vW_[l] = beta2 * vW_[l].array() + (1.0 - beta2) * grads.dW[l].array().square();
    weights[l].array() -=
        learning_rate * (mW_[l].array() / bc1) / ((vW_[l].array() / bc2).sqrt() + eps);

    mb_[l] = beta1 * mb_[l] + (1.0 - beta1) * grads.db[l];
    vb_[l] = beta2 * vb_[l].array() + (1.0 - beta2) * grads.db[l].array().square();
    biases[l].array() -=
        learning_rate * (mb_[l].array() / bc1) / ((vb_[l].array() / bc2).sqrt() + eps);
  }
}

void TrainOpts::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("TrainOpts: learning rate must be > 0");
  if (epochs < 1) throw ValidationError("TrainOpts: epoch budget must be >= 1");
  if (batch_size < 1) throw ValidationError("TrainOpts: batch size must be >= 1");
  if (val_frac < 0.0 || val_frac >= 1.0)
    throw ValidationError("TrainOpts: validation fraction must lie in [0, 1)");
  if (patience < 1) throw ValidationError("TrainOpts: patience must be >= 1");
}

FitDiagnostics train_loop(
    std::vector<Mlp*> nets, std::size_t n_samples, const TrainOpts& opts,
    const std::function<double(std::span<const std::size_t>, std::vector<MlpGradients>*)>&
        compute) {
  opts.validate();
  if (n_samples == 0) throw TrainingError("train_loop: no samples");

  Rng rng = Rng(opts.seed).fork(0xF17);
  std::vector<std::size_t> perm(n_samples);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(i + 1)]);

  std::size_t n_val = static_cast<std::size_t>(std::floor(opts.val_frac * n_samples));
  if (n_val >= n_samples) n_val = n_samples - 1;
  const std::size_t n_train = n_samples - n_val;
  std::vector<std::size_t> train_idx(perm.begin(), perm.begin() + n_train);
  std::vector<std::size_t> val_idx(perm.begin() + n_train, perm.end());
  // With no held-out slice, monitor the training loss instead.
  const std::vector<std::size_t>& monitor = n_val > 0 ? val_idx : train_idx;

  auto monitor_loss = [&]() {
    const double total = compute(monitor, nullptr);
    return total / static_cast<double>(monitor.size());
  };

  std::vector<MlpGradients> grads;
  std::vector<AdamState> adam;
  for (Mlp* net : nets) {
    grads.push_back(net->zero_gradients());
    adam.emplace_back(*net);
  }

  auto snapshot = [&]() {
    std::vector<std::vector<double>> s;
    for (Mlp* net : nets) s.push_back(net->flat_params());
    return s;
  };

  FitDiagnostics diag;
  double best = monitor_loss();
  if (!std::isfinite(best))
    throw TrainingError("train_loop: non-finite loss at initialization");
  diag.initial_val_loss = best;
  auto best_params = snapshot();
  int since_best = 0;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = train_idx.size() - 1; i > 0; --i)
      std::swap(train_idx[i], train_idx[rng.below(i + 1)]);

    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t len =
          std::min<std::size_t>(opts.batch_size, train_idx.size() - start);
      std::span<const std::size_t> batch(train_idx.data() + start, len);
      for (auto& g : grads) g.set_zero();
      const double loss = compute(batch, &grads);
      if (!std::isfinite(loss))
        throw TrainingError("train_loop: training diverged (non-finite loss) at epoch " +
                            std::to_string(epoch));
      const double inv = 1.0 / static_cast<double>(len);
      for (std::size_t k = 0; k < nets.size(); ++k) {
        grads[k].scale(inv);
        adam[k].step(*nets[k], grads[k], opts.learning_rate);
      }
    }

    diag.epochs_run = epoch + 1;
    const double val = monitor_loss();
    if (!std::isfinite(val))
      throw TrainingError("train_loop: non-finite validation loss at epoch " +
                          std::to_string(epoch));
    if (val < best - 1e-12) {
      best = val;
      best_params = snapshot();
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      break;
    }
  }

  for (std::size_t k = 0; k < nets.size(); ++k)
    nets[k]->set_flat_params(best_params[k]);
  diag.best_val_loss = best;
  return diag;
}

double grad_check(Mlp& net, const std::function<double(const Mlp&)>& loss,
                  const std::function<MlpGradients(const Mlp&)>& analytic_grad,
                  double step) {
  const MlpGradients analytic = analytic_grad(net);
  std::vector<double> flat_analytic;
  for (const auto& m : analytic.dW)
    flat_analytic.insert(flat_analytic.end(), m.data(), m.data() + m.size());
  for (const auto& v : analytic.db)
    flat_analytic.insert(flat_analytic.end(), v.data(), v.data() + v.size());

  std::vector<double> params = net.flat_params();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + step;
    net.set_flat_params(params);
    const double up = loss(net);
    params[i] = orig - step;
    net.set_flat_params(params);
    const double down = loss(net);
    params[i] = orig;
    net.set_flat_params(params);
    const double fd = (up - down) / (2.0 * step);
    const double rel = std::fabs(flat_analytic[i] - fd) / (std::fabs(fd) + 1e-8);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace coppkit
