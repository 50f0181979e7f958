#include "hge/controller.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "hge/errors.hpp"

namespace hge {

void GeConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("ge.alpha must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("ge.epsilon must be positive");
  if (!(epsilon_review > 0.0)) throw ConfigError("ge.epsilon_review must be positive");
  if (promotion_window < 1) throw ConfigError("ge.promotion_window must be at least 1");
  if (!(epsilon_promotion > 0.0 && epsilon_promotion < 1.0))
    throw ConfigError("ge.epsilon_promotion must lie in (0, 1)");
  if (hl_capacity < 2) throw ConfigError("ge.hl_capacity must be at least 2");
  if (replay_capacity < 1) throw ConfigError("ge.replay_capacity must be at least 1");
  if (new_expert_epochs < 1) throw ConfigError("ge.new_expert_epochs must be at least 1");
  if (warmup < 1) throw ConfigError("ge.warmup must be at least 1");
}

void ModelConfig::validate() const { make_expert_config(*this, GeConfig{}).validate(); }

ExpertConfig make_expert_config(const ModelConfig& model, const GeConfig& ge) {
  ExpertConfig c;
  c.input_dim = model.input_dim;
  c.classes = model.classes;
  c.classifier_hidden = model.classifier_hidden;
  c.ae_hidden = model.ae_hidden;
  c.latent = model.latent;
  c.classifier_optimizer = model.classifier_optimizer;
  c.ae_optimizer = model.ae_optimizer;
  c.alpha = ge.alpha;
  c.epsilon = ge.epsilon;
  c.warmup = ge.warmup;
  c.replay_capacity = ge.replay_capacity;
  c.promotion_window = ge.promotion_window;
  c.epsilon_promotion = ge.epsilon_promotion;
  return c;
}

Controller::Controller(const ControllerConfig& config, std::uint64_t model_seed)
    : config_(config),
      expert_config_(make_expert_config(config.model, config.ge)),
      model_seed_(model_seed),
      noise_(config.model.sampled_routing_noise ? NoiseSource::keyed(mix_seed(model_seed, 0x6e6f697365ULL))
                                                : NoiseSource::zero()),
      recent_(config.ge.hl_capacity) {
  config_.ge.validate();
  if (config_.routing == RoutingMode::Tree) expert_config_.epsilon_promotion = config_.hge.epsilon_promotion;
  expert_config_.validate();
  if (!(config_.hge.path_threshold > 0.0 && config_.hge.path_threshold <= 1.0))
    throw ConfigError("hge.path_threshold must lie in (0, 1]");
  if (!(config_.hge.epsilon_promotion > 0.0 && config_.hge.epsilon_promotion < 1.0))
    throw ConfigError("hge.epsilon_promotion must lie in (0, 1)");
  const ExpertId first = create_expert();
  promote(first);
}

ExpertId Controller::create_expert() {
  const auto id = static_cast<ExpertId>(experts_.size());
  experts_.emplace_back(id, expert_config_, mix_seed(model_seed_, static_cast<std::uint64_t>(id)));
  fresh_.push_back(id);
  return id;
}

void Controller::tally(ExpertId id, const std::vector<NodeId>& path) {
  if (config_.routing != RoutingMode::Tree || path.empty()) return;
  if (expert(id).state() != ExpertState::New) return;
  tallies_[id].add(path);
}

const PathTally& Controller::path_tally(ExpertId id) const {
  static const PathTally kEmpty;
  auto it = tallies_.find(id);
  return it == tallies_.end() ? kEmpty : it->second;
}

void Controller::promote(ExpertId id) {
  auto it = std::find(fresh_.begin(), fresh_.end(), id);
  if (it == fresh_.end()) throw std::logic_error("promote: expert is not new");
  fresh_.erase(it);
  expert(id).promote();
  promoted_.push_back(id);

  if (config_.routing == RoutingMode::Flat) {
    tree_.add_child(tree_.root(), id);
  } else {
    auto probes = [this](ExpertId masked) {
      std::vector<LossProbe> out;
      for (const auto& b : expert(masked).replay().items())
        out.push_back([this, b](ExpertId e) { return expert(e).autoencoding_loss(*b, noise_); });
      return out;
    };
    promote_into_tree(tree_, id, path_tally(id).paths(), config_.hge.path_threshold, probes,
                      config_.hge.pin_to_root);
    tallies_.erase(id);
  }
  tree_.validate();
}

RouteResult Controller::route(const Batch& batch) const {
  LossProbe probe = [&](ExpertId e) { return expert(e).autoencoding_loss(batch, noise_); };
  if (config_.routing == RoutingMode::Tree) return hge_forward(tree_, probe);

  if (promoted_.empty()) throw RoutingError("route: no promoted experts");
  RouteResult r;
  double best = std::numeric_limits<double>::infinity();
  for (ExpertId e : promoted_) {
    const double l = probe(e);
    if (r.expert < 0 || l < best || (l == best && e < r.expert)) {
      best = l;
      r.expert = e;
    }
  }
  r.experts_queried = static_cast<int>(promoted_.size());
  r.path = {tree_.root()};
  return r;
}

StepTrace Controller::step(const BatchPtr& batch, double lr_scale) {
  if (!batch) throw InputError("step: null batch");
  StepTrace t;
  t.step = steps_++;
  t.truth_task = batch->truth_task;

  RecentEntry entry;
  entry.batch = batch;
  entry.step = t.step;

  ExpertId best = -1;
  double loss = 0.0;
  if (config_.ge.fast_path && last_used_ && expert(*last_used_).state() == ExpertState::Promoted) {
    const double l = expert(*last_used_).classifier_loss(*batch);
    if (expert(*last_used_).accepts(l)) {
      best = *last_used_;
      loss = l;
    }
  }
  if (best < 0) {
    RouteResult r = route(*batch);
    best = r.expert;
    t.experts_queried = r.experts_queried;
    entry.path = std::move(r.path);
    loss = expert(best).classifier_loss(*batch);
  }
  t.routed_to = best;
  t.classifier_loss = loss;
  t.threshold = expert(best).threshold();

  if (expert(best).accepts(loss)) {
    expert(best).train(batch, lr_scale);
    entry.trained_on = best;
  } else {
    const std::vector<ExpertId> candidates = fresh_;
    for (ExpertId id : candidates) {
      const double l = expert(id).classifier_loss(*batch);
      if (!expert(id).accepts(l)) continue;
      expert(id).train(batch, lr_scale);
      entry.trained_on = id;
      tally(id, entry.path);
      if (expert(id).promotion_check(l < loss)) {
        promote(id);
        t.promoted = id;
      }
      break;
    }
    entry.high_loss = !entry.trained_on.has_value();
  }
  t.trained_on = entry.trained_on;
  t.high_loss = entry.high_loss;
  if (entry.trained_on) last_used_ = entry.trained_on;

  recent_.push(std::move(entry));
  if (!recent_.full()) return t;
  process_oldest(t);
  detect_and_expand(t);
  return t;
}

void Controller::process_oldest(StepTrace& trace) {
  if (!recent_.full()) return;
  RecentEntry old = recent_.pop_oldest();
  if (old.high_loss) {
    const ExpertId target = previous_trainer_ ? *previous_trainer_ : forward(*old.batch);
    expert(target).train(old.batch);
    tally(target, old.path);
    old.trained_on = target;
    trace.replays.push_back(TrainEvent{old.step, target, "outlier"});
  }
  previous_trainer_ = old.trained_on;
}

void Controller::detect_and_expand(StepTrace& trace) {
  if (recent_.empty() || !recent_.all_high_loss()) return;
  const ExpertId candidate = forward(*recent_.entries().front().batch);

  EpisodeResult ep;
  if (config_.ge.review) {
    ep = classify_high_loss_episode(recent_, expert(candidate), config_.ge.epsilon_review);
  } else {
    ep.kind = Episode::NewTask;
  }
  trace.episode = ep.kind;
  if (ep.verdict) trace.z_score = ep.verdict->z_score;

  if (ep.kind == Episode::NewTask) {
    const ExpertId id = create_expert();
    for (int epoch = 0; epoch < config_.ge.new_expert_epochs; ++epoch) {
      for (const auto& e : recent_.entries()) {
        expert(id).train(e.batch, 1.0, epoch == 0);
        if (epoch == 0) {
          tally(id, e.path);
          trace.replays.push_back(TrainEvent{e.step, id, "new_expert"});
        }
      }
    }
    trace.created = id;
    previous_trainer_ = id;
    last_used_ = id;
  } else {
    for (const auto& e : recent_.entries()) {
      expert(candidate).train(e.batch);
      trace.replays.push_back(TrainEvent{e.step, candidate, "instability"});
    }
    previous_trainer_ = candidate;
    last_used_ = candidate;
  }
  recent_.clear();
}

}  // namespace hge
