#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ctxsense/geometry.hpp"

namespace ctxsense {

using TimeIndex = std::int64_t;

/// last_update value of a landmark that has never been observed.
inline constexpr TimeIndex kNeverUpdated = std::numeric_limits<TimeIndex>::min();

/// One sense of one label: where it is believed to sit in angle space.
struct SenseGaussian {
  std::string sense_id;
  DiagonalGaussian dist;
  TimeIndex last_update = kNeverUpdated;
  bool is_new = false;

  bool operator==(const SenseGaussian&) const = default;
};

/// label -> candidate senses. Each particle owns its own copy.
struct InterpretationDomain {
  std::map<std::string, std::vector<SenseGaussian>, std::less<>> landmarks;

  SenseGaussian* find(std::string_view label, std::string_view sense_id);
  const SenseGaussian* find(std::string_view label, std::string_view sense_id) const;
  bool has_new_sense(std::string_view label) const;
  bool operator==(const InterpretationDomain&) const = default;
};

struct Particle {
  Vec context;
  InterpretationDomain domain;
  double weight = 0.0;
  /// Normalized weight this particle (or the particle it was copied from)
  /// received at the most recent weighting; resampling resets `weight`
  /// but keeps this, and confidence reads it.
  double last_weight = 0.0;
  std::map<std::string, std::string, std::less<>> assignments;
  bool spawned_new = false;

  bool operator==(const Particle&) const = default;
};

/// Scalar-per-axis Kalman update with identity observation model. The
/// azimuth innovation is wrapped and the posterior azimuth re-wrapped.
SenseGaussian kalman_observe(const SenseGaussian& land, const AngleVector& obs,
                             std::span<const double> obs_var, TimeIndex t);

/// Scales weights to sum to 1. Throws DegenerateWeightsError when no
/// particle has positive weight.
void normalize_weights(std::span<Particle> particles);

/// Low-variance (systematic) resampling to exactly `count` particles,
/// each a copy of a survivor with weight 1/count. Weights must be normalized.
std::vector<Particle> systematic_resample(std::span<const Particle> particles, std::size_t count,
                                          Rng& rng);

/// Indices chosen by the systematic sampler for offset `u0` in [0, 1/count).
std::vector<std::size_t> systematic_indices(std::span<const double> weights, std::size_t count,
                                            double u0);

}  // namespace ctxsense
