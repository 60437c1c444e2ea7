#include "ctxsense/engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ctxsense/error.hpp"

namespace ctxsense {

namespace {

std::string new_sense_id(TimeIndex t) { return "new@" + std::to_string(t); }

bool in_window(TimeIndex last_update, TimeIndex t, TimeIndex window) {
  return last_update != kNeverUpdated && last_update <= t && t - last_update <= window;
}

double euclidean_norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct ResolvedTokens {
  std::vector<std::string> plain;      // single-sense, non-target labels
  std::vector<std::string> branching;  // ambiguous or target labels
};

}  // namespace

// ---------------------------------------------------------------- config

void SessionConfig::validate() const {
  auto rate = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ConfigError(std::string(name) + " must lie in [0, 1]");
    }
  };
  auto nonneg = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string(name) + " must be >= 0");
  };
  auto positive = [](double v, const char* name) {
    if (!std::isfinite(v) || v <= 0.0) throw ConfigError(std::string(name) + " must be > 0");
  };
  rate(lambda_u, "lambda_u");
  rate(lambda_z, "lambda_z");
  rate(lambda_w, "lambda_w");
  nonneg(sigma_u, "sigma_u");
  nonneg(sigma_z, "sigma_z");
  nonneg(sigma_w, "sigma_w");
  if (t_alpha < 1) throw ConfigError("t_alpha must be >= 1");
  positive(epsilon, "epsilon");
  nonneg(lambda_w2, "lambda_w2");
  positive(eta_tau, "eta_tau");
  positive(gamma_tau, "gamma_tau");
  if (particle_multiplier < 1) throw ConfigError("particle_multiplier must be >= 1");
  positive(obs_var0, "obs_var0");
  positive(obs_var, "obs_var");
  nonneg(process_var, "process_var");
  if (max_branch_factor < 2) throw ConfigError("max_branch_factor must be >= 2");
}

void to_json(nlohmann::json& j, const SessionConfig& c) {
  j = nlohmann::json{{"dim", c.dim},
                     {"lambda_u", c.lambda_u},
                     {"lambda_z", c.lambda_z},
                     {"lambda_w", c.lambda_w},
                     {"sigma_u", c.sigma_u},
                     {"sigma_z", c.sigma_z},
                     {"sigma_w", c.sigma_w},
                     {"t_alpha", c.t_alpha},
                     {"epsilon", c.epsilon},
                     {"lambda_w2", c.lambda_w2},
                     {"eta_tau", c.eta_tau},
                     {"gamma_tau", c.gamma_tau},
                     {"particle_multiplier", c.particle_multiplier},
                     {"obs_var0", c.obs_var0},
                     {"obs_var", c.obs_var},
                     {"process_var", c.process_var},
                     {"max_branch_factor", c.max_branch_factor},
                     {"kalman_enabled", c.kalman_enabled},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SessionConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  nlohmann::json defaults = c;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  auto field = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
  };
  field("dim", c.dim);
  field("lambda_u", c.lambda_u);
  field("lambda_z", c.lambda_z);
  field("lambda_w", c.lambda_w);
  field("sigma_u", c.sigma_u);
  field("sigma_z", c.sigma_z);
  field("sigma_w", c.sigma_w);
  field("t_alpha", c.t_alpha);
  field("epsilon", c.epsilon);
  field("lambda_w2", c.lambda_w2);
  field("eta_tau", c.eta_tau);
  field("gamma_tau", c.gamma_tau);
  field("particle_multiplier", c.particle_multiplier);
  field("obs_var0", c.obs_var0);
  field("obs_var", c.obs_var);
  field("process_var", c.process_var);
  field("max_branch_factor", c.max_branch_factor);
  field("kalman_enabled", c.kalman_enabled);
  field("seed", c.seed);
}

std::string to_string(Role r) { return r == Role::own ? "own" : "other"; }

Role parse_role(std::string_view s) {
  if (s == "own" || s == "me" || s == "u") return Role::own;
  if (s == "other" || s == "them" || s == "z") return Role::other;
  throw Error("unknown role '" + std::string(s) + "'");
}

void to_json(nlohmann::json& j, const ConfidenceReport& r) {
  j = nlohmann::json{{"label", r.label}, {"per_sense", r.per_sense}, {"time", r.time}};
}

void from_json(const nlohmann::json& j, ConfidenceReport& r) {
  j.at("label").get_to(r.label);
  j.at("per_sense").get_to(r.per_sense);
  j.at("time").get_to(r.time);
}

// ---------------------------------------------------------------- weighting

double attenuation(TimeIndex staleness, double eta_tau) {
  return std::exp(-static_cast<double>(staleness) / eta_tau);
}

double novelty_ramp(TimeIndex t, double gamma_tau) {
  if (t <= 0) return 0.0;
  return 1.0 - std::exp(-static_cast<double>(t) / gamma_tau);
}

double compute_weight(const Particle& p, TimeIndex t, const SessionConfig& cfg) {
  const AngleVector here = to_nsphere(p.context);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [label, senses] : p.domain.landmarks) {
    for (const auto& land : senses) {
      if (!in_window(land.last_update, t, cfg.t_alpha)) continue;
      sum += attenuation(t - land.last_update, cfg.eta_tau) * mahalanobis(land.dist, here);
      ++n;
    }
  }
  if (n == 0) return 0.0;
  const double w = -std::log(sum / static_cast<double>(n) + cfg.epsilon);
  return std::max(0.0, w);
}

double compute_weight_new(const Particle& p, std::string_view label, TimeIndex t,
                          const SessionConfig& cfg) {
  auto assigned = p.assignments.find(label);
  if (assigned == p.assignments.end()) throw Error("particle has no hypothesis for the label");
  const SenseGaussian* fresh = p.domain.find(label, assigned->second);
  if (!fresh || !fresh->is_new) throw Error("particle's hypothesis for the label is not a new sense");

  const double gamma = novelty_ramp(t, cfg.gamma_tau);
  const double w = compute_weight(p, t, cfg);
  double kl_sum = 0.0;
  std::size_t existing = 0;
  for (const auto& land : p.domain.landmarks.find(label)->second) {
    if (land.is_new) continue;
    kl_sum += kl_divergence(land.dist, fresh->dist);
    ++existing;
  }
  if (existing == 0) return std::max(0.0, gamma * w);
  const double penalty = std::log(kl_sum / static_cast<double>(existing) + cfg.epsilon);
  return std::max(0.0, gamma * (w + cfg.lambda_w2 * penalty));
}

Particle spawn_new_sense(const Particle& p, const std::string& label, TimeIndex t,
                         const SessionConfig& cfg) {
  if (p.domain.has_new_sense(label)) {
    throw Error("particle already carries a new sense for '" + label + "'");
  }
  std::vector<AngleVector> means;
  Vec variance(p.context.size() - 1, 0.0);
  std::size_t recent = 0;
  for (const auto& [l, senses] : p.domain.landmarks) {
    for (const auto& land : senses) {
      if (!in_window(land.last_update, t, cfg.t_alpha)) continue;
      means.push_back(land.dist.mean);
      for (std::size_t i = 0; i < variance.size(); ++i) variance[i] += land.dist.variance[i];
      ++recent;
    }
  }
  means.push_back(to_nsphere(p.context));
  if (recent == 0) {
    std::fill(variance.begin(), variance.end(), cfg.obs_var0);
  } else {
    for (auto& v : variance) v /= static_cast<double>(recent);
  }

  Particle out = p;
  SenseGaussian land;
  land.sense_id = new_sense_id(t);
  land.dist = DiagonalGaussian{angular_mean(means), std::move(variance)};
  land.last_update = t;
  land.is_new = true;
  out.domain.landmarks[label].push_back(std::move(land));
  out.assignments[label] = new_sense_id(t);
  out.spawned_new = true;
  return out;
}

// ---------------------------------------------------------------- session

Session::Session(SessionConfig cfg, std::shared_ptr<const SenseInventory> inventory)
    : cfg_(std::move(cfg)), inventory_(std::move(inventory)) {
  if (!inventory_) throw Error("session needs an inventory");
  cfg_.validate();
  if (cfg_.dim == 0) cfg_.dim = inventory_->dim();
  if (cfg_.dim != inventory_->dim()) {
    throw ConfigError("dim " + std::to_string(cfg_.dim) + " does not match the inventory's " +
                      std::to_string(inventory_->dim()));
  }
  if (cfg_.dim < 2) throw ConfigError("dim must be at least 2");
  rng_.seed(cfg_.seed);
  noise_scale_ = inventory_->scale();
  obs_var_.assign(cfg_.dim - 1, cfg_.obs_var);
}

Session::Session(SessionConfig cfg, std::shared_ptr<const SenseInventory> inventory,
                 std::vector<std::string> target_labels)
    : Session(std::move(cfg), std::move(inventory)) {
  for (auto& label : target_labels) {
    if (!inventory_->contains(label)) throw ConfigError("unknown target label '" + label + "'");
    if (std::find(targets_.begin(), targets_.end(), label) == targets_.end()) {
      targets_.push_back(std::move(label));
    }
  }
  if (targets_.empty()) throw ConfigError("at least one target label is required");

  Particle seed;
  seed.context.assign(cfg_.dim, 0.0);
  std::size_t sense_total = 0;
  for (const auto& label : targets_) sense_total += inventory_->senses(label).size();
  const double share = 1.0 / static_cast<double>(sense_total);
  for (const auto& label : targets_) {
    auto& lands = seed.domain.landmarks[label];
    for (const auto& sense : inventory_->senses(label)) {
      for (std::size_t i = 0; i < cfg_.dim; ++i) seed.context[i] += share * sense.vector[i];
      lands.push_back({sense.id,
                       DiagonalGaussian{to_nsphere(sense.vector), Vec(cfg_.dim - 1, cfg_.obs_var0)},
                       kNeverUpdated, false});
    }
  }
  target_count_ = cfg_.particle_multiplier * sense_total;
  seed.weight = seed.last_weight = 1.0 / static_cast<double>(target_count_);
  particles_.assign(target_count_, seed);
}

void Session::process_turn(const Utterance& utt) {
  if (started_ && utt.t < time_) {
    throw Error("turn " + std::to_string(utt.t) + " arrives after turn " + std::to_string(time_));
  }
  // Fail before mutating anything.
  (void)utterance_mean(utt.tokens, *inventory_);
  time_ = utt.t;
  started_ = true;
  if (utt.role == Role::own) {
    step1_own(utt);
  } else {
    step2_observe(utt);
    step3_other(utt);
    step4_resample(utt.t);
  }
  ++turns_;
}

void Session::update_context(const Utterance& utt, double rate, double sigma) {
  const Vec mean = utterance_mean(utt.tokens, *inventory_);
  const double keep = 1.0 - rate;
  for (auto& p : particles_) {
    const Vec noise = gaussian_noise(sigma * noise_scale_, cfg_.dim, rng_);
    for (std::size_t i = 0; i < cfg_.dim; ++i) {
      p.context[i] = keep * p.context[i] + rate * mean[i] + noise[i];
    }
  }
}

void Session::step1_own(const Utterance& u) {
  if (u.role != Role::own) throw Error("step1 takes the interpreter's own utterance");
  update_context(u, cfg_.lambda_u, cfg_.sigma_u);
}

void Session::step3_other(const Utterance& z) {
  if (z.role != Role::other) throw Error("step3 takes the partner's utterance");
  update_context(z, cfg_.lambda_z, cfg_.sigma_z);
}

Vec Session::observation_point(const Vec& context, const Vec& anchor) {
  const Vec noise = gaussian_noise(cfg_.sigma_w * noise_scale_, cfg_.dim, rng_);
  Vec out(cfg_.dim);
  const double keep = 1.0 - cfg_.lambda_w;
  for (std::size_t i = 0; i < cfg_.dim; ++i) {
    out[i] = keep * context[i] + cfg_.lambda_w * anchor[i] + noise[i];
  }
  return out;
}

const SenseGaussian& Session::ensure_landmark(Particle& p, const std::string& label) {
  auto& lands = p.domain.landmarks[label];
  if (lands.empty()) {
    for (const auto& sense : inventory_->senses(label)) {
      lands.push_back({sense.id,
                       DiagonalGaussian{to_nsphere(sense.vector), Vec(cfg_.dim - 1, cfg_.obs_var0)},
                       kNeverUpdated, false});
    }
  }
  return lands.front();
}

Vec Session::anchor_for(const Particle& p, const std::string& label,
                        const SenseGaussian& land) const {
  if (!land.is_new) {
    if (const Sense* s = inventory_->find_sense(label, land.sense_id)) return s->vector;
  }
  // A created sense has no embedding of its own: use its current direction
  // at the context's radius.
  return from_nsphere(land.dist.mean, euclidean_norm(p.context));
}

void Session::observe(Particle& p, const std::string& label, const std::string& sense_id,
                      const Vec& anchor, TimeIndex t, TimeIndex stamp) {
  (void)t;
  SenseGaussian* land = p.domain.find(label, sense_id);
  if (!land) throw Error("no landmark '" + label + "#" + sense_id + "'");
  if (!cfg_.kalman_enabled) {
    land->last_update = stamp;
    return;
  }
  const Vec point = observation_point(p.context, anchor);
  if (!(euclidean_norm(point) > 0.0)) {
    land->last_update = stamp;
    return;
  }
  if (cfg_.process_var > 0.0) {
    for (auto& v : land->dist.variance) v += cfg_.process_var;
  }
  *land = kalman_observe(*land, to_nsphere(point), obs_var_, stamp);
}

void Session::refresh_new_flag(Particle& p) const {
  p.spawned_new = false;
  for (const auto& label : targets_) {
    auto it = p.assignments.find(label);
    if (it == p.assignments.end()) continue;
    const SenseGaussian* land = p.domain.find(label, it->second);
    if (land && land->is_new) p.spawned_new = true;
  }
}

void Session::step2_observe(const Utterance& z) {
  if (z.role != Role::other) throw Error("step2 takes the partner's utterance");
  const TimeIndex t = z.t;

  ResolvedTokens resolved;
  std::set<std::string, std::less<>> seen;
  for (const auto& tok : z.tokens) {
    if (!inventory_->contains(tok) || !seen.insert(tok).second) continue;
    bool target = std::find(targets_.begin(), targets_.end(), tok) != targets_.end();
    if (target || inventory_->ambiguous(tok)) {
      resolved.branching.push_back(tok);
    } else {
      resolved.plain.push_back(tok);
    }
  }

  // Unambiguous words: this turn's mentions, then re-observation of the
  // ones mentioned within the window (their mention time is kept).
  for (auto& p : particles_) {
    for (const auto& label : resolved.plain) {
      ensure_landmark(p, label);
      observe(p, label, "", inventory_->senses(label).front().vector, t, t);
    }
    for (auto& [label, lands] : p.domain.landmarks) {
      if (lands.size() != 1 || lands.front().is_new || seen.count(label)) continue;
      if (std::find(targets_.begin(), targets_.end(), label) != targets_.end()) continue;
      if (inventory_->ambiguous(label)) continue;
      const TimeIndex stamp = lands.front().last_update;
      if (!in_window(stamp, t, cfg_.t_alpha) || stamp == t) continue;
      observe(p, label, lands.front().sense_id, inventory_->senses(label).front().vector, t, stamp);
    }
  }

  // One new-interpretation branch per particle and target label.
  std::vector<Particle> population;
  population.reserve(particles_.size() * (1 + targets_.size()));
  for (const auto& p : particles_) {
    population.push_back(p);
    for (const auto& label : targets_) {
      if (!p.domain.has_new_sense(label)) population.push_back(spawn_new_sense(p, label, t, cfg_));
    }
  }
  particles_ = std::move(population);

  const std::string fresh_id = new_sense_id(t);
  const std::size_t cap = target_count_ * cfg_.max_branch_factor;
  for (const auto& label : resolved.branching) {
    std::vector<Particle> next;
    next.reserve(particles_.size() * 4);
    for (auto& p : particles_) {
      ensure_landmark(p, label);
      auto assigned = p.assignments.find(label);
      if (assigned != p.assignments.end() && assigned->second == fresh_id) {
        // Spawned this turn: the branch is already committed to its new sense.
        const SenseGaussian& land = *p.domain.find(label, fresh_id);
        observe(p, label, fresh_id, anchor_for(p, label, land), t, t);
        next.push_back(std::move(p));
        continue;
      }
      const auto senses = p.domain.landmarks.find(label)->second;
      for (const auto& land : senses) {
        Particle child = p;
        child.assignments[label] = land.sense_id;
        observe(child, label, land.sense_id, anchor_for(child, label, land), t, t);
        next.push_back(std::move(child));
      }
    }
    particles_ = std::move(next);
    for (auto& p : particles_) refresh_new_flag(p);
    if (particles_.size() > cap) interim_resample(t);
  }
  for (auto& p : particles_) refresh_new_flag(p);
}

void Session::assign_weights(TimeIndex t) {
  for (auto& p : particles_) {
    double w = compute_weight(p, t, cfg_);
    if (p.spawned_new) {
      for (const auto& label : targets_) {
        auto it = p.assignments.find(label);
        if (it == p.assignments.end()) continue;
        const SenseGaussian* land = p.domain.find(label, it->second);
        if (land && land->is_new) w = std::min(w, compute_weight_new(p, label, t, cfg_));
      }
    }
    p.weight = w;
  }
}

void Session::interim_resample(TimeIndex t) {
  assign_weights(t);
  try {
    normalize_weights(particles_);
  } catch (const DegenerateWeightsError&) {
    drop_unramped(t);
    reduce_uniformly();
    return;
  }
  particles_ = systematic_resample(particles_, target_count_, rng_);
}

void Session::drop_unramped(TimeIndex t) {
  // Before the ramp starts a new-sense branch has weight 0 by construction,
  // so a uniform reset must not hand it mass either.
  if (novelty_ramp(t, cfg_.gamma_tau) > 0.0) return;
  std::vector<Particle> kept;
  kept.reserve(particles_.size());
  for (auto& p : particles_) {
    if (!p.spawned_new) kept.push_back(p);
  }
  if (!kept.empty()) particles_ = std::move(kept);
}

void Session::reduce_uniformly() {
  if (particles_.size() < target_count_) {
    for (auto& p : particles_) p.weight = 1.0 / static_cast<double>(particles_.size());
    particles_ = systematic_resample(particles_, target_count_, rng_);
    return;
  }
  // Branch children sit in fixed per-parent blocks, so a strided pick would
  // keep the same hypothesis from every block.
  std::shuffle(particles_.begin(), particles_.end(), rng_);
  particles_.resize(target_count_);
  for (auto& p : particles_) p.weight = 1.0 / static_cast<double>(particles_.size());
}

void Session::step4_resample(TimeIndex t) {
  assign_weights(t);
  bool degenerate = false;
  try {
    normalize_weights(particles_);
  } catch (const DegenerateWeightsError&) {
    degenerate = true;
    drop_unramped(t);
    for (auto& p : particles_) p.weight = 1.0 / static_cast<double>(particles_.size());
  }
  for (auto& p : particles_) p.last_weight = p.weight;
  if (degenerate) {
    if (particles_.size() != target_count_) reduce_uniformly();
    return;
  }
  particles_ = systematic_resample(particles_, target_count_, rng_);
}

std::size_t Session::best_index() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < particles_.size(); ++i) {
    if (particles_[i].last_weight > particles_[best].last_weight) best = i;
  }
  return best;
}

ConfidenceReport Session::confidence(std::string_view label) const {
  if (std::find(targets_.begin(), targets_.end(), label) == targets_.end()) {
    throw Error("'" + std::string(label) + "' is not a target label");
  }
  ConfidenceReport report;
  report.label = std::string(label);
  report.time = time_;
  const auto& seeded = inventory_->senses(label);
  for (const auto& s : seeded) report.per_sense[s.id] = 0.0;

  std::map<std::string, double> group_max;
  for (const auto& p : particles_) {
    auto it = p.assignments.find(label);
    if (it == p.assignments.end()) continue;
    auto [slot, inserted] = group_max.try_emplace(it->second, p.last_weight);
    if (!inserted) slot->second = std::max(slot->second, p.last_weight);
  }

  if (group_max.empty()) {
    for (auto& [id, c] : report.per_sense) c = 1.0 / static_cast<double>(seeded.size());
    return report;
  }
  double total = 0.0;
  for (const auto& [id, w] : group_max) total += w;
  for (const auto& [id, w] : group_max) {
    report.per_sense[id] = total > 0.0 ? w / total : 1.0 / static_cast<double>(group_max.size());
  }
  return report;
}

std::map<std::string, SenseGaussian> Session::group_representatives(std::string_view label) const {
  std::map<std::string, std::size_t> best;
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    auto it = particles_[i].assignments.find(label);
    if (it == particles_[i].assignments.end()) continue;
    auto [slot, inserted] = best.try_emplace(it->second, i);
    if (!inserted && particles_[i].last_weight > particles_[slot->second].last_weight) {
      slot->second = i;
    }
  }
  std::map<std::string, SenseGaussian> out;
  for (const auto& [id, idx] : best) out.emplace(id, *particles_[idx].domain.find(label, id));
  return out;
}

Estimate Session::best_estimate() const {
  const Particle& p = particles_.at(best_index());
  return {p.context, p.domain, p.assignments};
}

// ---------------------------------------------------------------- snapshot

namespace {

nlohmann::json landmark_json(const SenseGaussian& s) {
  nlohmann::json j{{"sense_id", s.sense_id},
                   {"mean", s.dist.mean.values},
                   {"variance", s.dist.variance},
                   {"is_new", s.is_new}};
  j["last_update"] = s.last_update == kNeverUpdated ? nlohmann::json(nullptr)
                                                     : nlohmann::json(s.last_update);
  return j;
}

SenseGaussian landmark_from_json(const nlohmann::json& j) {
  SenseGaussian s;
  j.at("sense_id").get_to(s.sense_id);
  j.at("mean").get_to(s.dist.mean.values);
  j.at("variance").get_to(s.dist.variance);
  j.at("is_new").get_to(s.is_new);
  s.last_update = j.at("last_update").is_null() ? kNeverUpdated
                                                : j.at("last_update").get<TimeIndex>();
  if (!valid(s.dist)) throw Error("snapshot landmark '" + s.sense_id + "' is not a valid Gaussian");
  return s;
}

}  // namespace

nlohmann::json Session::snapshot() const {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : particles_) {
    nlohmann::json lands = nlohmann::json::object();
    for (const auto& [label, senses] : p.domain.landmarks) {
      auto& arr = lands[label] = nlohmann::json::array();
      for (const auto& s : senses) arr.push_back(landmark_json(s));
    }
    parts.push_back({{"weight", p.weight},
                     {"last_weight", p.last_weight},
                     {"context", p.context},
                     {"assignments", p.assignments},
                     {"spawned_new", p.spawned_new},
                     {"landmarks", std::move(lands)}});
  }
  std::ostringstream rng_state;
  rng_state << rng_;
  return {{"format", "ctxsense-session-1"},
          {"config", cfg_},
          {"targets", targets_},
          {"time", time_},
          {"turns", turns_},
          {"started", started_},
          {"particle_count", target_count_},
          {"rng", rng_state.str()},
          {"particles", std::move(parts)}};
}

Session Session::restore(const nlohmann::json& snap,
                         std::shared_ptr<const SenseInventory> inventory) {
  try {
    if (snap.at("format") != "ctxsense-session-1") throw Error("unknown snapshot format");
    Session s(snap.at("config").get<SessionConfig>(), std::move(inventory));
    for (const auto& label : snap.at("targets")) {
      auto name = label.get<std::string>();
      if (!s.inventory_->contains(name)) throw Error("snapshot target '" + name + "' not in inventory");
      s.targets_.push_back(std::move(name));
    }
    snap.at("time").get_to(s.time_);
    snap.at("turns").get_to(s.turns_);
    snap.at("started").get_to(s.started_);
    snap.at("particle_count").get_to(s.target_count_);
    std::istringstream rng_state(snap.at("rng").get<std::string>());
    rng_state >> s.rng_;
    if (!rng_state) throw Error("bad generator state in snapshot");
    for (const auto& jp : snap.at("particles")) {
      Particle p;
      jp.at("weight").get_to(p.weight);
      jp.at("last_weight").get_to(p.last_weight);
      jp.at("context").get_to(p.context);
      jp.at("assignments").get_to(p.assignments);
      jp.at("spawned_new").get_to(p.spawned_new);
      if (p.context.size() != s.cfg_.dim) throw Error("snapshot context has wrong dimension");
      for (const auto& [label, arr] : jp.at("landmarks").items()) {
        auto& lands = p.domain.landmarks[label];
        for (const auto& jl : arr) lands.push_back(landmark_from_json(jl));
      }
      s.particles_.push_back(std::move(p));
    }
    if (s.particles_.empty()) throw Error("snapshot has no particles");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed snapshot: ") + e.what());
  }
}

}  // namespace ctxsense
