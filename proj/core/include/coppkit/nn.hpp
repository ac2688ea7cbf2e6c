#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "coppkit/errors.hpp"
#include "coppkit/rng.hpp"

namespace coppkit {

/// Architecture of a small fully-connected network with rectified-linear
/// hidden activations and a linear output layer.
struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden_sizes = {32};
  int output_dim = 1;
  std::uint64_t init_seed = 0;

  void validate() const;
};

struct MlpGradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;

  void set_zero();
  void scale(double s);
};

/// Feed-forward network with explicit forward/backward passes. Hidden
/// weights use He-normal initialization; the output layer starts at zero so
/// callers can pin the initial prediction to a constant baseline through the
/// output bias.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(const MlpSpec& spec);

  int input_dim() const { return spec_.input_dim; }
  int output_dim() const { return spec_.output_dim; }
  const MlpSpec& spec() const { return spec_; }
  int num_layers() const { return static_cast<int>(weights_.size()); }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X) const;

  struct Cache {
    std::vector<Eigen::MatrixXd> pre;   // pre-activations, one per layer
    std::vector<Eigen::MatrixXd> act;   // act[0] = input, act[l] = post-activation
  };

  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X, Cache& cache) const;

  /// Backprop of dLoss/dOutput (output_dim x batch) through the cache;
  /// gradients are summed over the batch and accumulated into `grads`.
  void backward_batch(const Cache& cache, const Eigen::MatrixXd& d_out,
                      MlpGradients& grads) const;

  MlpGradients zero_gradients() const;

  void set_output_bias(const Eigen::VectorXd& bias);

  std::size_t param_count() const;
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> params);

  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
  std::vector<Eigen::MatrixXd>& mutable_weights() { return weights_; }
  std::vector<Eigen::VectorXd>& mutable_biases() { return biases_; }

 private:
  MlpSpec spec_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

/// Adaptive-moment stochastic gradient descent state for one network.
class AdamState {
 public:
  explicit AdamState(const Mlp& net);
  void step(Mlp& net, const MlpGradients& grads, double learning_rate);

 private:
  std::vector<Eigen::MatrixXd> mW_, vW_;
  std::vector<Eigen::VectorXd> mb_, vb_;
  long t_ = 0;
};

struct TrainOpts {
  double learning_rate = 1e-3;
  int epochs = 400;
  int batch_size = 128;
  double val_frac = 0.1;
  int patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitDiagnostics {
  int epochs_run = 0;
  double best_val_loss = 0.0;
  double initial_val_loss = 0.0;
};

/// Shared mini-batch / early-stopping loop.
///
/// `compute` must return the summed loss over the given sample indices and,
/// when the gradient vector is non-null, accumulate parameter gradients
/// (also summed over the indices, one MlpGradients per net in `nets`).
/// Early stopping monitors the mean loss on a held-out validation slice and
/// restores the best parameters seen, which includes the initial ones.
FitDiagnostics train_loop(
    std::vector<Mlp*> nets, std::size_t n_samples, const TrainOpts& opts,
    const std::function<double(std::span<const std::size_t>, std::vector<MlpGradients>*)>&
        compute);

/// Max over parameters of |analytic - central difference| / (|central| + 1e-8).
double grad_check(Mlp& net, const std::function<double(const Mlp&)>& loss,
                  const std::function<MlpGradients(const Mlp&)>& analytic_grad,
                  double step = 1e-5);

}  // namespace coppkit
