#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxsense/filter.hpp"
#include "ctxsense/vecstore.hpp"

namespace ctxsense {

/// Tuning for one session. Noise levels (sigma_*) are expressed in units of
/// the inventory's mean vector norm, so they mean the same thing for any
/// embedding scale. Variances are in radians^2.
struct SessionConfig {
  std::size_t dim = 0;  // 0: take the inventory's dimension
  double lambda_u = 0.5;
  double lambda_z = 0.5;
  double lambda_w = 0.5;
  double sigma_u = 0.05;
  double sigma_z = 0.05;
  double sigma_w = 0.05;
  std::int64_t t_alpha = 3;
  double epsilon = 1e-6;
  double lambda_w2 = 0.1;
  double eta_tau = 3.0;
  double gamma_tau = 5.0;
  std::size_t particle_multiplier = 20;
  double obs_var0 = 0.05;
  double obs_var = 0.05;
  /// Variance added to a landmark before each observation (Kalman predict
  /// step). 0 keeps landmarks static between observations.
  double process_var = 0.0;
  std::size_t max_branch_factor = 64;
  bool kalman_enabled = true;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
  bool operator==(const SessionConfig&) const = default;
};

void to_json(nlohmann::json& j, const SessionConfig& c);
/// Missing fields keep their defaults; unknown fields are rejected.
void from_json(const nlohmann::json& j, SessionConfig& c);

enum class Role { own, other };

struct Utterance {
  Role role = Role::other;
  std::vector<std::string> tokens;
  TimeIndex t = 0;
};

std::string to_string(Role r);
Role parse_role(std::string_view s);

struct ConfidenceReport {
  std::string label;
  std::map<std::string, double> per_sense;
  TimeIndex time = 0;
};

void to_json(nlohmann::json& j, const ConfidenceReport& r);
void from_json(const nlohmann::json& j, ConfidenceReport& r);

struct Estimate {
  Vec context;
  InterpretationDomain domain;
  std::map<std::string, std::string, std::less<>> assignments;
};

double attenuation(TimeIndex staleness, double eta_tau);
double novelty_ramp(TimeIndex t, double gamma_tau);

/// Unnormalized particle weight from the landmarks updated in
/// [t - t_alpha, t]; 0 when there are none.
double compute_weight(const Particle& p, TimeIndex t, const SessionConfig& cfg);

/// Weight of a particle whose hypothesis for `label` is a newly created
/// sense: the normal weight plus a divergence bonus against the label's
/// existing senses, ramped in over time.
double compute_weight_new(const Particle& p, std::string_view label, TimeIndex t,
                          const SessionConfig& cfg);

/// Landmark for a never-seen sense of `label`, placed at the average of
/// recently updated landmarks and the particle's context.
Particle spawn_new_sense(const Particle& p, const std::string& label, TimeIndex t,
                         const SessionConfig& cfg);

/// One conversation being interpreted: M weighted particles over context
/// and interpretation domain.
class Session {
 public:
  Session(SessionConfig cfg, std::shared_ptr<const SenseInventory> inventory,
          std::vector<std::string> target_labels);

  /// Rebuilds a session from `snapshot()` output; `inventory` must be the
  /// one the snapshot was taken against.
  static Session restore(const nlohmann::json& snapshot,
                         std::shared_ptr<const SenseInventory> inventory);

  void process_turn(const Utterance& utt);

  // The individual steps are public so they can be driven and tested one
  // at a time; process_turn is the normal entry point.
  void step1_own(const Utterance& u);
  void step2_observe(const Utterance& z);
  void step3_other(const Utterance& z);
  void step4_resample(TimeIndex t);

  ConfidenceReport confidence(std::string_view label) const;
  /// For each sense group of `label`, the landmark of its best particle.
  std::map<std::string, SenseGaussian> group_representatives(std::string_view label) const;
  Estimate best_estimate() const;

  nlohmann::json snapshot() const;

  const SessionConfig& config() const noexcept { return cfg_; }
  const SenseInventory& inventory() const noexcept { return *inventory_; }
  const std::vector<std::string>& targets() const noexcept { return targets_; }
  const std::vector<Particle>& particles() const noexcept { return particles_; }
  std::vector<Particle>& mutable_particles() noexcept { return particles_; }
  std::size_t target_count() const noexcept { return target_count_; }
  TimeIndex time() const noexcept { return time_; }
  std::size_t turns() const noexcept { return turns_; }
  double noise_scale() const noexcept { return noise_scale_; }

 private:
  Session(SessionConfig cfg, std::shared_ptr<const SenseInventory> inventory);

  std::size_t best_index() const;
  Vec observation_point(const Vec& context, const Vec& anchor);
  const SenseGaussian& ensure_landmark(Particle& p, const std::string& label);
  void observe(Particle& p, const std::string& label, const std::string& sense_id,
               const Vec& anchor, TimeIndex t, TimeIndex stamp);
  Vec anchor_for(const Particle& p, const std::string& label, const SenseGaussian& land) const;
  void refresh_new_flag(Particle& p) const;
  void interim_resample(TimeIndex t);
  void drop_unramped(TimeIndex t);
  void reduce_uniformly();
  void assign_weights(TimeIndex t);
  void update_context(const Utterance& utt, double rate, double sigma);

  SessionConfig cfg_;
  std::shared_ptr<const SenseInventory> inventory_;
  std::vector<std::string> targets_;
  std::vector<Particle> particles_;
  std::size_t target_count_ = 0;
  Rng rng_;
  TimeIndex time_ = 0;
  std::size_t turns_ = 0;
  bool started_ = false;
  double noise_scale_ = 1.0;
  std::vector<double> obs_var_;
};

}  // namespace ctxsense
