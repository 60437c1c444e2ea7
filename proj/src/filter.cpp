#include "ctxsense/filter.hpp"

#include <cmath>

#include "ctxsense/error.hpp"

namespace ctxsense {

SenseGaussian* InterpretationDomain::find(std::string_view label, std::string_view sense_id) {
  auto it = landmarks.find(label);
  if (it == landmarks.end()) return nullptr;
  for (auto& s : it->second) {
    if (s.sense_id == sense_id) return &s;
  }
  return nullptr;
}

const SenseGaussian* InterpretationDomain::find(std::string_view label,
                                                std::string_view sense_id) const {
  return const_cast<InterpretationDomain*>(this)->find(label, sense_id);
}

bool InterpretationDomain::has_new_sense(std::string_view label) const {
  auto it = landmarks.find(label);
  if (it == landmarks.end()) return false;
  for (const auto& s : it->second) {
    if (s.is_new) return true;
  }
  return false;
}

SenseGaussian kalman_observe(const SenseGaussian& land, const AngleVector& obs,
                             std::span<const double> obs_var, TimeIndex t) {
  const std::size_t n = land.dist.mean.size();
  if (obs.size() != n || obs_var.size() != n) throw Error("Kalman update dimension mismatch");
  SenseGaussian out = land;
  const Vec innovation = angle_diff(obs, land.dist.mean);
  for (std::size_t i = 0; i < n; ++i) {
    const double prior = land.dist.variance[i];
    const double gain = prior / (prior + obs_var[i]);
    out.dist.mean[i] = land.dist.mean[i] + gain * innovation[i];
    out.dist.variance[i] = (1.0 - gain) * prior;
  }
  if (n > 0) out.dist.mean[n - 1] = wrap_two_pi(out.dist.mean[n - 1]);
  out.last_update = t;
  return out;
}

void normalize_weights(std::span<Particle> particles) {
  double total = 0.0;
  for (const auto& p : particles) {
    if (!std::isfinite(p.weight) || p.weight < 0.0) throw Error("invalid particle weight");
    total += p.weight;
  }
  if (!(total > 0.0)) throw DegenerateWeightsError("all particle weights are zero");
  for (auto& p : particles) p.weight /= total;
}

std::vector<std::size_t> systematic_indices(std::span<const double> weights, std::size_t count,
                                            double u0) {
  std::size_t last_live = weights.size();
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) {
      last_live = i;
      break;
    }
  }
  if (last_live == weights.size()) throw DegenerateWeightsError("no particle with positive weight");

  std::vector<std::size_t> out;
  out.reserve(count);
  const double step = 1.0 / static_cast<double>(count);
  std::size_t i = 0;
  double cumulative = weights[0];
  for (std::size_t m = 0; m < count; ++m) {
    const double u = u0 + static_cast<double>(m) * step;
    while (i < last_live && (cumulative <= u || weights[i] == 0.0)) cumulative += weights[++i];
    out.push_back(i);
  }
  return out;
}

std::vector<Particle> systematic_resample(std::span<const Particle> particles, std::size_t count,
                                          Rng& rng) {
  if (count == 0) throw Error("resample target must be at least 1");
  Vec weights;
  weights.reserve(particles.size());
  for (const auto& p : particles) weights.push_back(p.weight);
  std::uniform_real_distribution<double> offset(0.0, 1.0 / static_cast<double>(count));
  const double u0 = offset(rng);

  std::vector<Particle> out;
  out.reserve(count);
  const double reset = 1.0 / static_cast<double>(count);
  for (std::size_t idx : systematic_indices(weights, count, u0)) {
    out.push_back(particles[idx]);
    out.back().weight = reset;
  }
  return out;
}

}  // namespace ctxsense
