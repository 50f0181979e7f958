#pragma once

// Dense layers, losses, hand-written backpropagation and optimizers for the two
// network families an expert needs: an MLP classifier and an MLP variational
// autoencoder. Inputs are row-major: one sample per row.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "hge/random.hpp"

namespace hge::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct LayerShape {
  int in = 0;
  int out = 0;
};

/// weight is out x in, so a layer maps rows x -> x * weight^T + bias^T.
struct Dense {
  Matrix weight;
  Vector bias;
};

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  static OptimizerConfig sgd(double lr = 0.01, double momentum = 0.9, double weight_decay = 1e-4);
  static OptimizerConfig adam(double lr = 1e-3, double weight_decay = 1e-4);
};

/// Parameters of one network plus the optimizer state that mirrors them.
class ParamStore {
 public:
  ParamStore() = default;

  /// Glorot-uniform weights, zero biases.
  ParamStore(std::span<const LayerShape> shapes, const OptimizerConfig& optimizer, Rng& rng);

  /// Wraps explicit layers (fixtures and snapshot loading).
  ParamStore(std::vector<Dense> layers, const OptimizerConfig& optimizer);

  std::size_t size() const { return layers_.size(); }
  const Dense& layer(std::size_t i) const { return layers_.at(i); }
  Dense& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Dense>& layers() const { return layers_; }

  const OptimizerConfig& optimizer() const { return optimizer_; }
  long steps_taken() const { return steps_; }

  /// One optimizer update with PyTorch semantics (weight decay folded into the
  /// gradient, undampened momentum, bias-corrected Adam).
  void apply(std::span<const Dense> gradients, double lr_scale = 1.0);

  /// Optimizer moments. For SGD only the first set (velocity) is used.
  const std::vector<Dense>& first_moments() const { return first_; }
  const std::vector<Dense>& second_moments() const { return second_; }
  void restore_state(std::vector<Dense> first, std::vector<Dense> second, long steps);

 private:
  void reset_state();

  std::vector<Dense> layers_;
  std::vector<Dense> first_;
  std::vector<Dense> second_;
  OptimizerConfig optimizer_;
  long steps_ = 0;
};

struct Gradients {
  double loss = 0.0;
  std::vector<Dense> layers;
};

// ---------------------------------------------------------------------------
// Classifier: Linear -> ReLU -> ... -> Linear (raw logits).

struct ClassifierShape {
  int input_dim = 0;
  std::vector<int> hidden;
  int classes = 0;

  std::vector<LayerShape> layers() const;
};

ParamStore make_classifier(const ClassifierShape& shape, const OptimizerConfig& optimizer, Rng& rng);

Matrix classifier_forward(const ParamStore& params, const Matrix& inputs);

struct CrossEntropy {
  double loss = 0.0;
  Matrix grad;  // d loss / d logits, already divided by the batch size
};

/// Batch-mean softmax cross-entropy.
CrossEntropy cross_entropy_loss(const Matrix& logits, std::span<const int> labels);

Gradients classifier_gradients(const ParamStore& params, const Matrix& inputs, std::span<const int> labels);

/// Returns the loss observed before the update.
double classifier_train_step(ParamStore& params, const Matrix& inputs, std::span<const int> labels,
                             double lr_scale = 1.0);

/// Argmax of each logit row; ties go to the lowest index.
std::vector<int> predict(const Matrix& logits);

// ---------------------------------------------------------------------------
// Variational autoencoder.
//   encoder: Linear(in, hidden) -> ReLU -> {Linear(hidden, latent) mean,
//                                           Linear(hidden, latent) log-variance}
//   decoder: Linear(latent, hidden) -> ReLU -> Linear(hidden, in) -> Sigmoid

struct VaeShape {
  int input_dim = 0;
  int hidden = 0;
  int latent = 0;

  std::vector<LayerShape> layers() const;
};

namespace vae_layer {
inline constexpr std::size_t kEncoder = 0;
inline constexpr std::size_t kMean = 1;
inline constexpr std::size_t kLogVariance = 2;
inline constexpr std::size_t kDecoderHidden = 3;
inline constexpr std::size_t kDecoderOut = 4;
}  // namespace vae_layer

/// Log-variance is clipped to this range before exponentiation.
inline constexpr double kLogVarianceClip = 20.0;

ParamStore make_vae(const VaeShape& shape, const OptimizerConfig& optimizer, Rng& rng);

struct VaeOutput {
  Vector mean;
  Vector log_variance;
  Vector reconstruction;
  Vector latent_sample;
};

struct VaeBatchOutput {
  Matrix mean;
  Matrix log_variance;
  Matrix reconstruction;
  Matrix latent_sample;
};

struct VaeLoss {
  double reconstruction = 0.0;  // mean squared error over input dimensions
  double kl = 0.0;              // summed over latent dimensions
  double total() const { return reconstruction + kl; }
};

/// mean + exp(0.5 * log_variance) * noise, elementwise.
Vector reparameterize(const Vector& mean, const Vector& log_variance, const Vector& noise);

VaeOutput vae_forward(const ParamStore& params, const Vector& input, const Vector& noise);
VaeBatchOutput vae_forward(const ParamStore& params, const Matrix& inputs, const Matrix& noise);

VaeLoss vae_loss(const VaeOutput& out, const Vector& target);
/// Batch means of both components.
VaeLoss vae_loss(const VaeBatchOutput& out, const Matrix& targets);

Gradients vae_gradients(const ParamStore& params, const Matrix& inputs, const Matrix& noise);

/// Returns the total loss observed before the update.
double vae_train_step(ParamStore& params, const Matrix& inputs, const Matrix& noise, double lr_scale = 1.0);

}  // namespace hge::nn
