#include "hge/expert.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "hge/errors.hpp"

namespace hge {

// ---------------------------------------------------------------------------
// LossStats

LossStats::LossStats(double alpha, double epsilon, int warmup) : alpha_(alpha), epsilon_(epsilon), warmup_(warmup) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (warmup < 1) throw ConfigError("warmup must be at least 1");
}

void LossStats::update(double loss) {
  if (!std::isfinite(loss)) throw NumericError("LossStats::update: non-finite loss");
  if (count_ == 0) {
    mu_ = loss;
    sigma_ = 0.0;
  } else if (count_ == 1) {
    sigma_ = std::abs(loss - mu_);
    mu_ = alpha_ * mu_ + (1.0 - alpha_) * loss;
  } else {
    sigma_ = alpha_ * sigma_ + (1.0 - alpha_) * std::abs(loss - mu_);
    mu_ = alpha_ * mu_ + (1.0 - alpha_) * loss;
  }
  ++count_;
}

double LossStats::threshold() const {
  if (count_ < warmup_) return std::numeric_limits<double>::infinity();
  return mu_ + epsilon_ * sigma_;
}

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  if (capacity < 1) throw ConfigError("replay capacity must be positive");
}

void ReplayBuffer::offer(const BatchPtr& batch) {
  ++seen_;
  if (static_cast<int>(items_.size()) < capacity_) {
    items_.push_back(batch);
    return;
  }
  const auto slot = rng_.below(static_cast<std::uint64_t>(seen_));
  if (slot < static_cast<std::uint64_t>(capacity_)) items_[slot] = batch;
}

void ReplayBuffer::restore(std::vector<BatchPtr> items, long seen, Rng rng) {
  if (static_cast<int>(items.size()) > capacity_) throw ConfigError("replay contents exceed capacity");
  items_ = std::move(items);
  seen_ = seen;
  rng_ = std::move(rng);
}

// ---------------------------------------------------------------------------
// PromotionWindow

void PromotionWindow::push(bool lower) {
  flags_.push_back(lower);
  while (static_cast<int>(flags_.size()) > capacity_) flags_.pop_front();
}

int PromotionWindow::true_count() const {
  int n = 0;
  for (bool f : flags_) n += f ? 1 : 0;
  return n;
}

bool PromotionWindow::exceeds(double fraction) const {
  if (!full()) return false;
  return static_cast<double>(true_count()) > fraction * static_cast<double>(capacity_);
}

// ---------------------------------------------------------------------------

void ExpertConfig::validate() const {
  if (input_dim <= 0) throw ConfigError("input_dim must be positive");
  if (classes <= 0) throw ConfigError("classes must be positive");
  if (ae_hidden <= 0 || latent <= 0) throw ConfigError("autoencoder sizes must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (replay_capacity < 1) throw ConfigError("replay_capacity must be positive");
  if (promotion_window < 1) throw ConfigError("promotion_window must be positive");
  if (!(epsilon_promotion > 0.0 && epsilon_promotion < 1.0)) throw ConfigError("epsilon_promotion must lie in (0, 1)");
}

nn::Matrix NoiseSource::draw(std::uint64_t batch_uid, ExpertId expert, int rows, int cols) const {
  nn::Matrix m = nn::Matrix::Zero(rows, cols);
  if (!sampled_) return m;
  Rng rng(mix_seed(seed_, batch_uid, static_cast<std::uint64_t>(expert)));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

// ---------------------------------------------------------------------------
// Expert

Expert::Expert(ExpertId id, const ExpertConfig& config, std::uint64_t seed)
    : id_(id),
      config_(config),
      stats_(config.alpha, config.epsilon, config.warmup),
      replay_(config.replay_capacity, mix_seed(seed, 2)),
      promotion_(config.promotion_window),
      noise_rng_(mix_seed(seed, 3)) {
  config_.validate();
  Rng init(mix_seed(seed, 1));
  classifier_ = nn::make_classifier(config_.classifier_shape(), config_.classifier_optimizer, init);
  autoencoder_ = nn::make_vae(config_.vae_shape(), config_.ae_optimizer, init);
}

double Expert::classifier_loss(const Batch& batch) const {
  const nn::Matrix logits = nn::classifier_forward(classifier_, batch.inputs);
  return nn::cross_entropy_loss(logits, batch.labels).loss;
}

double Expert::autoencoding_loss(const Batch& batch, const NoiseSource& noise) const {
  const nn::Matrix eps = noise.draw(batch.uid, id_, static_cast<int>(batch.inputs.rows()), config_.latent);
  return nn::vae_loss(nn::vae_forward(autoencoder_, batch.inputs, eps), batch.inputs).total();
}

ExpertLosses Expert::losses(const Batch& batch, const NoiseSource& noise) const {
  return {classifier_loss(batch), autoencoding_loss(batch, noise)};
}

std::vector<int> Expert::predict(const Batch& batch) const {
  return nn::predict(nn::classifier_forward(classifier_, batch.inputs));
}

bool Expert::accepts(double classifier_loss) const {
  if (state_ == ExpertState::New && !promotion_.full()) return true;
  return classifier_loss <= stats_.threshold();
}

double Expert::train(const BatchPtr& batch, double lr_scale, bool offer_replay) {
  const double loss = nn::classifier_train_step(classifier_, batch->inputs, batch->labels, lr_scale);
  nn::Matrix eps(batch->inputs.rows(), config_.latent);
  for (Eigen::Index r = 0; r < eps.rows(); ++r)
    for (Eigen::Index c = 0; c < eps.cols(); ++c) eps(r, c) = noise_rng_.normal();
  nn::vae_train_step(autoencoder_, batch->inputs, eps, 1.0);
  stats_.update(loss);
  if (offer_replay) replay_.offer(batch);
  ++trained_batches_;
  return loss;
}

bool Expert::promotion_check(bool new_loss_lower) {
  if (state_ != ExpertState::New) throw std::logic_error("promotion_check on a promoted expert");
  promotion_.push(new_loss_lower);
  return promotion_.exceeds(config_.epsilon_promotion);
}

void Expert::promote() { state_ = ExpertState::Promoted; }

// ---------------------------------------------------------------------------
// Snapshot: "GEXP1" followed by little-endian fixed-width fields.

namespace {

constexpr char kMagic[5] = {'G', 'E', 'X', 'P', '1'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void matrix(const nn::Matrix& m) {
    i64(m.rows());
    i64(m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  void vector(const nn::Vector& v) {
    i64(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
  }
  void dense(const std::vector<nn::Dense>& layers) {
    u64(layers.size());
    for (const auto& d : layers) {
      matrix(d.weight);
      vector(d.bias);
    }
  }
  void optimizer(const nn::OptimizerConfig& o) {
    i64(o.kind == nn::OptimizerKind::Adam ? 1 : 0);
    f64(o.learning_rate);
    f64(o.momentum);
    f64(o.weight_decay);
    f64(o.beta1);
    f64(o.beta2);
    f64(o.adam_epsilon);
  }
  void params(const nn::ParamStore& p) {
    optimizer(p.optimizer());
    dense(p.layers());
    dense(p.first_moments());
    dense(p.second_moments());
    i64(p.steps_taken());
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IngestionError("expert snapshot truncated", offset_);
    offset_ += n;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::int64_t dim() {
    const auto v = i64();
    if (v < 0 || v > (1 << 24)) throw IngestionError("expert snapshot: implausible dimension", offset_);
    return v;
  }
  std::string str() {
    const auto n = dim();
    std::string s(static_cast<std::size_t>(n), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  nn::Matrix matrix() {
    const auto r = dim();
    const auto c = dim();
    nn::Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = f64();
    return m;
  }
  nn::Vector vector() {
    const auto n = dim();
    nn::Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = f64();
    return v;
  }
  std::vector<nn::Dense> dense() {
    const auto n = dim();
    std::vector<nn::Dense> out;
    for (std::int64_t i = 0; i < n; ++i) {
      nn::Matrix w = matrix();
      nn::Vector b = vector();
      out.push_back({std::move(w), std::move(b)});
    }
    return out;
  }
  nn::OptimizerConfig optimizer() {
    nn::OptimizerConfig o;
    o.kind = i64() == 1 ? nn::OptimizerKind::Adam : nn::OptimizerKind::Sgd;
    o.learning_rate = f64();
    o.momentum = f64();
    o.weight_decay = f64();
    o.beta1 = f64();
    o.beta2 = f64();
    o.adam_epsilon = f64();
    return o;
  }
  nn::ParamStore params() {
    const auto o = optimizer();
    auto layers = dense();
    auto first = dense();
    auto second = dense();
    const auto steps = i64();
    nn::ParamStore p(std::move(layers), o);
    p.restore_state(std::move(first), std::move(second), steps);
    return p;
  }
  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

void Expert::save(std::ostream& out) const {
  Writer w(out);
  w.bytes(kMagic, sizeof kMagic);
  w.i64(id_);
  w.i64(state_ == ExpertState::Promoted ? 1 : 0);

  w.i64(config_.input_dim);
  w.i64(config_.classes);
  w.u64(config_.classifier_hidden.size());
  for (int h : config_.classifier_hidden) w.i64(h);
  w.i64(config_.ae_hidden);
  w.i64(config_.latent);
  w.f64(config_.alpha);
  w.f64(config_.epsilon);
  w.i64(config_.warmup);
  w.i64(config_.replay_capacity);
  w.i64(config_.promotion_window);
  w.f64(config_.epsilon_promotion);

  w.params(classifier_);
  w.params(autoencoder_);

  w.f64(stats_.mu());
  w.f64(stats_.sigma());
  w.i64(stats_.count());

  w.u64(promotion_.flags().size());
  for (bool f : promotion_.flags()) w.u64(f ? 1 : 0);
  w.i64(trained_batches_);

  w.i64(replay_.seen());
  w.u64(replay_.items().size());
  for (const auto& b : replay_.items()) {
    w.u64(b->uid);
    w.i64(b->truth_task);
    w.matrix(b->inputs);
    w.u64(b->labels.size());
    for (int y : b->labels) w.i64(y);
  }
  w.str(replay_.rng().serialize());
  w.str(noise_rng_.serialize());
}

Expert Expert::load(std::istream& in) {
  Reader r(in);
  char magic[5];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IngestionError("expert snapshot: bad magic", 0);

  Expert e;
  e.id_ = static_cast<ExpertId>(r.i64());
  const bool promoted = r.i64() == 1;

  ExpertConfig& c = e.config_;
  c.input_dim = static_cast<int>(r.dim());
  c.classes = static_cast<int>(r.dim());
  const auto hidden = r.dim();
  c.classifier_hidden.clear();
  for (std::int64_t i = 0; i < hidden; ++i) c.classifier_hidden.push_back(static_cast<int>(r.dim()));
  c.ae_hidden = static_cast<int>(r.dim());
  c.latent = static_cast<int>(r.dim());
  c.alpha = r.f64();
  c.epsilon = r.f64();
  c.warmup = static_cast<int>(r.dim());
  c.replay_capacity = static_cast<int>(r.dim());
  c.promotion_window = static_cast<int>(r.dim());
  c.epsilon_promotion = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& err) {
    throw IngestionError(std::string("expert snapshot: ") + err.what(), r.offset());
  }

  e.classifier_ = r.params();
  e.autoencoder_ = r.params();
  c.classifier_optimizer = e.classifier_.optimizer();
  c.ae_optimizer = e.autoencoder_.optimizer();

  e.stats_ = LossStats(c.alpha, c.epsilon, c.warmup);
  const double mu = r.f64();
  const double sigma = r.f64();
  const auto count = r.i64();
  e.stats_.restore(mu, sigma, count);

  e.promotion_ = PromotionWindow(c.promotion_window);
  const auto flags = r.dim();
  for (std::int64_t i = 0; i < flags; ++i) e.promotion_.push(r.u64() != 0);
  e.trained_batches_ = r.i64();

  e.replay_ = ReplayBuffer(c.replay_capacity, mix_seed(static_cast<std::uint64_t>(e.id_), 2));
  const auto seen = r.i64();
  const auto items = r.dim();
  std::vector<BatchPtr> batches;
  for (std::int64_t i = 0; i < items; ++i) {
    auto b = std::make_shared<Batch>();
    b->uid = r.u64();
    b->truth_task = static_cast<int>(r.i64());
    b->inputs = r.matrix();
    const auto n = r.dim();
    for (std::int64_t j = 0; j < n; ++j) b->labels.push_back(static_cast<int>(r.i64()));
    batches.push_back(std::move(b));
  }
  Rng replay_rng = Rng::deserialize(r.str());
  e.noise_rng_ = Rng::deserialize(r.str());
  e.replay_.restore(std::move(batches), seen, std::move(replay_rng));
  e.state_ = promoted ? ExpertState::Promoted : ExpertState::New;
  return e;
}

}  // namespace hge
