#include "hge/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hge/errors.hpp"

namespace hge::nn {

namespace {

Dense zeros_like(const Dense& d) {
  return Dense{Matrix::Zero(d.weight.rows(), d.weight.cols()), Vector::Zero(d.bias.size())};
}

Matrix affine(const Dense& layer, const Matrix& x) {
  Matrix y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  return y;
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_mask(const Matrix& pre) { return (pre.array() > 0.0).cast<double>().matrix(); }

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

void accumulate_affine_grad(Dense& grad, const Matrix& upstream, const Matrix& input) {
  grad.weight.noalias() += upstream.transpose() * input;
  grad.bias += upstream.colwise().sum().transpose();
}

void check_width(const Matrix& x, const Dense& first, const char* what) {
  if (x.cols() != first.weight.cols()) {
    throw ConfigError(std::string(what) + ": input width " + std::to_string(x.cols()) +
                      " does not match first layer width " + std::to_string(first.weight.cols()));
  }
}

void check_finite(const std::vector<Dense>& grads, const char* what) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].weight.allFinite() || !grads[i].bias.allFinite()) {
      throw NumericError(std::string(what) + ": non-finite gradient in layer " + std::to_string(i));
    }
  }
}

}  // namespace

OptimizerConfig OptimizerConfig::sgd(double lr, double momentum, double weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::Sgd;
  c.learning_rate = lr;
  c.momentum = momentum;
  c.weight_decay = weight_decay;
  return c;
}

OptimizerConfig OptimizerConfig::adam(double lr, double weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::Adam;
  c.learning_rate = lr;
  c.weight_decay = weight_decay;
  return c;
}

// ---------------------------------------------------------------------------

ParamStore::ParamStore(std::span<const LayerShape> shapes, const OptimizerConfig& optimizer, Rng& rng)
    : optimizer_(optimizer) {
  layers_.reserve(shapes.size());
  for (const auto& s : shapes) {
    if (s.in <= 0 || s.out <= 0) throw ConfigError("layer dimensions must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
    Dense d{Matrix(s.out, s.in), Vector::Zero(s.out)};
    for (Eigen::Index r = 0; r < d.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < d.weight.cols(); ++c) d.weight(r, c) = rng.uniform(-limit, limit);
    layers_.push_back(std::move(d));
  }
  reset_state();
}

ParamStore::ParamStore(std::vector<Dense> layers, const OptimizerConfig& optimizer)
    : layers_(std::move(layers)), optimizer_(optimizer) {
  for (const auto& d : layers_) {
    if (d.bias.size() != d.weight.rows()) throw ConfigError("bias length must equal weight rows");
  }
  reset_state();
}

void ParamStore::reset_state() {
  first_.clear();
  second_.clear();
  for (const auto& d : layers_) {
    first_.push_back(zeros_like(d));
    second_.push_back(zeros_like(d));
  }
  steps_ = 0;
}

void ParamStore::restore_state(std::vector<Dense> first, std::vector<Dense> second, long steps) {
  if (first.size() != layers_.size() || second.size() != layers_.size())
    throw ConfigError("optimizer state does not match parameter layout");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (first[i].weight.rows() != layers_[i].weight.rows() || first[i].weight.cols() != layers_[i].weight.cols() ||
        second[i].weight.rows() != layers_[i].weight.rows() || second[i].weight.cols() != layers_[i].weight.cols())
      throw ConfigError("optimizer state shape mismatch in layer " + std::to_string(i));
  }
  first_ = std::move(first);
  second_ = std::move(second);
  steps_ = steps;
}

void ParamStore::apply(std::span<const Dense> gradients, double lr_scale) {
  if (gradients.size() != layers_.size()) throw ConfigError("gradient count does not match layer count");
  ++steps_;
  const double lr = optimizer_.learning_rate * lr_scale;
  const double wd = optimizer_.weight_decay;

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    auto g = (grad + wd * param).eval();
    if (optimizer_.kind == OptimizerKind::Sgd) {
      if (optimizer_.momentum != 0.0) {
        // First step initializes the buffer with the raw gradient.
        if (steps_ == 1)
          m = g;
        else
          m = optimizer_.momentum * m + g;
        param -= lr * m;
      } else {
        param -= lr * g;
      }
    } else {
      m = optimizer_.beta1 * m + (1.0 - optimizer_.beta1) * g;
      v = optimizer_.beta2 * v + (1.0 - optimizer_.beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(optimizer_.beta1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(optimizer_.beta2, static_cast<double>(steps_));
      param -= (lr / c1) * (m.array() / ((v.array() / c2).sqrt() + optimizer_.adam_epsilon)).matrix();
    }
  };

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Dense& g = gradients[i];
    if (g.weight.rows() != layers_[i].weight.rows() || g.weight.cols() != layers_[i].weight.cols())
      throw ConfigError("gradient shape mismatch in layer " + std::to_string(i));
    update(layers_[i].weight, g.weight, first_[i].weight, second_[i].weight);
    update(layers_[i].bias, g.bias, first_[i].bias, second_[i].bias);
  }
}

// ---------------------------------------------------------------------------
// Classifier

std::vector<LayerShape> ClassifierShape::layers() const {
  std::vector<LayerShape> out;
  int prev = input_dim;
  for (int h : hidden) {
    out.push_back({prev, h});
    prev = h;
  }
  out.push_back({prev, classes});
  return out;
}

ParamStore make_classifier(const ClassifierShape& shape, const OptimizerConfig& optimizer, Rng& rng) {
  if (shape.input_dim <= 0 || shape.classes <= 0) throw ConfigError("classifier needs positive input and class counts");
  const auto shapes = shape.layers();
  return ParamStore(shapes, optimizer, rng);
}

Matrix classifier_forward(const ParamStore& params, const Matrix& inputs) {
  if (params.size() == 0) throw ConfigError("classifier_forward: empty network");
  check_width(inputs, params.layer(0), "classifier_forward");
  Matrix x = inputs;
  for (std::size_t i = 0; i < params.size(); ++i) {
    x = affine(params.layer(i), x);
    if (i + 1 < params.size()) x = relu(x);
  }
  return x;
}

CrossEntropy cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw InputError("cross_entropy_loss: label count does not match logit rows");
  const auto n = logits.rows();
  const auto k = logits.cols();
  CrossEntropy out;
  out.grad.resize(n, k);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k)
      throw InputError("cross_entropy_loss: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    const double m = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - m).eval();
    const auto e = shifted.exp().eval();
    const double z = e.sum();
    total += std::log(z) - shifted(y);
    out.grad.row(i) = (e / z).matrix();
    out.grad(i, y) -= 1.0;
  }
  out.grad /= static_cast<double>(n);
  out.loss = total / static_cast<double>(n);
  return out;
}

Gradients classifier_gradients(const ParamStore& params, const Matrix& inputs, std::span<const int> labels) {
  check_width(inputs, params.layer(0), "classifier_gradients");
  const std::size_t depth = params.size();
  std::vector<Matrix> activations;  // input to each layer
  std::vector<Matrix> pre;          // pre-activation of each hidden layer
  activations.reserve(depth);
  Matrix x = inputs;
  for (std::size_t i = 0; i < depth; ++i) {
    activations.push_back(x);
    Matrix z = affine(params.layer(i), x);
    if (i + 1 < depth) {
      pre.push_back(z);
      x = relu(z);
    } else {
      x = std::move(z);
    }
  }
  CrossEntropy ce = cross_entropy_loss(x, labels);

  Gradients g;
  g.loss = ce.loss;
  for (const auto& d : params.layers()) g.layers.push_back(zeros_like(d));

  Matrix upstream = std::move(ce.grad);
  for (std::size_t i = depth; i-- > 0;) {
    accumulate_affine_grad(g.layers[i], upstream, activations[i]);
    if (i > 0) {
      upstream = (upstream * params.layer(i).weight).cwiseProduct(relu_mask(pre[i - 1]));
    }
  }
  check_finite(g.layers, "classifier_gradients");
  return g;
}

double classifier_train_step(ParamStore& params, const Matrix& inputs, std::span<const int> labels, double lr_scale) {
  Gradients g = classifier_gradients(params, inputs, labels);
  params.apply(g.layers, lr_scale);
  return g.loss;
}

std::vector<int> predict(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// VAE

std::vector<LayerShape> VaeShape::layers() const {
  return {{input_dim, hidden}, {hidden, latent}, {hidden, latent}, {latent, hidden}, {hidden, input_dim}};
}

ParamStore make_vae(const VaeShape& shape, const OptimizerConfig& optimizer, Rng& rng) {
  if (shape.input_dim <= 0 || shape.hidden <= 0 || shape.latent <= 0)
    throw ConfigError("autoencoder dimensions must be positive");
  const auto shapes = shape.layers();
  return ParamStore(shapes, optimizer, rng);
}

Vector reparameterize(const Vector& mean, const Vector& log_variance, const Vector& noise) {
  if (mean.size() != log_variance.size() || mean.size() != noise.size())
    throw ConfigError("reparameterize: latent dimensions differ");
  const auto clipped = log_variance.array().min(kLogVarianceClip).max(-kLogVarianceClip);
  return (mean.array() + (0.5 * clipped).exp() * noise.array()).matrix();
}

namespace {

struct VaeTape {
  Matrix pre_hidden;   // encoder pre-activation
  Matrix hidden;       // encoder activation
  Matrix raw_log_var;  // before clipping
  Matrix pre_decoder;  // decoder hidden pre-activation
  Matrix decoder_hidden;
  VaeBatchOutput out;
};

VaeTape vae_tape(const ParamStore& params, const Matrix& inputs, const Matrix& noise) {
  using namespace vae_layer;
  if (params.size() != 5) throw ConfigError("vae: expected 5 layers");
  check_width(inputs, params.layer(kEncoder), "vae_forward");
  const auto latent = params.layer(kMean).weight.rows();
  if (noise.rows() != inputs.rows() || noise.cols() != latent)
    throw ConfigError("vae_forward: noise must be " + std::to_string(inputs.rows()) + "x" + std::to_string(latent));
  VaeTape t;
  t.pre_hidden = affine(params.layer(kEncoder), inputs);
  t.hidden = relu(t.pre_hidden);
  t.out.mean = affine(params.layer(kMean), t.hidden);
  t.raw_log_var = affine(params.layer(kLogVariance), t.hidden);
  t.out.log_variance = t.raw_log_var.array().min(kLogVarianceClip).max(-kLogVarianceClip).matrix();
  t.out.latent_sample =
      (t.out.mean.array() + (0.5 * t.out.log_variance.array()).exp() * noise.array()).matrix();
  t.pre_decoder = affine(params.layer(kDecoderHidden), t.out.latent_sample);
  t.decoder_hidden = relu(t.pre_decoder);
  t.out.reconstruction = sigmoid(affine(params.layer(kDecoderOut), t.decoder_hidden));
  return t;
}

}  // namespace

VaeBatchOutput vae_forward(const ParamStore& params, const Matrix& inputs, const Matrix& noise) {
  return vae_tape(params, inputs, noise).out;
}

VaeOutput vae_forward(const ParamStore& params, const Vector& input, const Vector& noise) {
  const Matrix x = input.transpose();
  const Matrix e = noise.transpose();
  VaeBatchOutput b = vae_forward(params, x, e);
  return VaeOutput{b.mean.row(0).transpose(), b.log_variance.row(0).transpose(),
                   b.reconstruction.row(0).transpose(), b.latent_sample.row(0).transpose()};
}

VaeLoss vae_loss(const VaeBatchOutput& out, const Matrix& targets) {
  if (targets.rows() != out.reconstruction.rows() || targets.cols() != out.reconstruction.cols())
    throw ConfigError("vae_loss: target shape does not match reconstruction");
  if (!targets.allFinite() || !out.reconstruction.allFinite() || !out.mean.allFinite() ||
      !out.log_variance.allFinite())
    throw NumericError("vae_loss: non-finite input");
  const double n = static_cast<double>(targets.rows());
  const double d = static_cast<double>(targets.cols());
  VaeLoss loss;
  loss.reconstruction = (out.reconstruction - targets).squaredNorm() / (n * d);
  const auto& mu = out.mean.array();
  const auto& lv = out.log_variance.array();
  loss.kl = (-0.5 * (1.0 + lv - mu.square() - lv.exp())).sum() / n;
  return loss;
}

VaeLoss vae_loss(const VaeOutput& out, const Vector& target) {
  VaeBatchOutput b{out.mean.transpose(), out.log_variance.transpose(), out.reconstruction.transpose(),
                   out.latent_sample.transpose()};
  return vae_loss(b, Matrix(target.transpose()));
}

Gradients vae_gradients(const ParamStore& params, const Matrix& inputs, const Matrix& noise) {
  using namespace vae_layer;
  VaeTape t = vae_tape(params, inputs, noise);
  const VaeLoss loss = vae_loss(t.out, inputs);
  const double n = static_cast<double>(inputs.rows());
  const double d = static_cast<double>(inputs.cols());

  Gradients g;
  g.loss = loss.total();
  for (const auto& layer : params.layers()) g.layers.push_back(zeros_like(layer));

  const Matrix& recon = t.out.reconstruction;
  Matrix d_out = (2.0 / (n * d)) * (recon - inputs);
  Matrix d_pre_out = d_out.cwiseProduct((recon.array() * (1.0 - recon.array())).matrix());
  accumulate_affine_grad(g.layers[kDecoderOut], d_pre_out, t.decoder_hidden);

  Matrix d_dec_hidden = (d_pre_out * params.layer(kDecoderOut).weight).cwiseProduct(relu_mask(t.pre_decoder));
  accumulate_affine_grad(g.layers[kDecoderHidden], d_dec_hidden, t.out.latent_sample);
  Matrix d_latent = d_dec_hidden * params.layer(kDecoderHidden).weight;

  const auto lv = t.out.log_variance.array();
  const auto std_dev = (0.5 * lv).exp();
  // KL term: -0.5 (1 + lv - mu^2 - e^lv), averaged over the batch.
  Matrix d_mean = d_latent + t.out.mean / n;
  Matrix d_log_var = (d_latent.array() * noise.array() * 0.5 * std_dev + (-0.5 / n) * (1.0 - lv.exp())).matrix();
  const auto in_range = (t.raw_log_var.array().abs() < kLogVarianceClip).cast<double>();
  d_log_var = d_log_var.cwiseProduct(in_range.matrix());

  accumulate_affine_grad(g.layers[kMean], d_mean, t.hidden);
  accumulate_affine_grad(g.layers[kLogVariance], d_log_var, t.hidden);
  Matrix d_hidden = (d_mean * params.layer(kMean).weight + d_log_var * params.layer(kLogVariance).weight)
                        .cwiseProduct(relu_mask(t.pre_hidden));
  accumulate_affine_grad(g.layers[kEncoder], d_hidden, inputs);

  check_finite(g.layers, "vae_gradients");
  return g;
}

double vae_train_step(ParamStore& params, const Matrix& inputs, const Matrix& noise, double lr_scale) {
  Gradients g = vae_gradients(params, inputs, noise);
  params.apply(g.layers, lr_scale);
  return g.loss;
}

}  // namespace hge::nn
