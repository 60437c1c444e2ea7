#include "ctxsense/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "ctxsense/error.hpp"

namespace ctxsense {

AngleVector to_nsphere(std::span<const double> v) {
  const std::size_t d = v.size();
  if (d < 2) throw Error("n-sphere coordinates need at least 2 dimensions");

  // prefix[j] = v0^2 + ... + v_{j-1}^2
  Vec prefix(d + 1, 0.0);
  for (std::size_t j = 0; j < d; ++j) prefix[j + 1] = prefix[j] + v[j] * v[j];
  if (!(prefix[d] > 0.0)) throw Error("direction of a zero vector is undefined");

  AngleVector out{Vec(d - 1, 0.0)};
  for (std::size_t k = 0; k + 2 < d; ++k) {
    const std::size_t head = d - 1 - k;  // components v0 .. v_{head-1} remain
    out[k] = std::atan2(std::sqrt(prefix[head]), v[head]);
    if (prefix[head] == 0.0) return out;
  }
  out[d - 2] = wrap_two_pi(std::atan2(v[1], v[0]));
  return out;
}

Vec from_nsphere(const AngleVector& angles, double radius) {
  const std::size_t d = angles.size() + 1;
  Vec v(d, 0.0);
  double rem = radius;
  for (std::size_t k = 0; k + 2 < d; ++k) {
    v[d - 1 - k] = rem * std::cos(angles[k]);
    rem *= std::sin(angles[k]);
  }
  v[0] = rem * std::cos(angles[d - 2]);
  v[1] = rem * std::sin(angles[d - 2]);
  return v;
}

double wrap_pi(double a) {
  double r = std::remainder(a, kTwoPi);  // [-pi, pi]
  if (r <= -kPi) r += kTwoPi;
  return r + 0.0;
}

double wrap_two_pi(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r + 0.0;
}

Vec angle_diff(const AngleVector& a, const AngleVector& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  if (!out.empty()) out.back() = wrap_pi(out.back());
  return out;
}

double mahalanobis(const DiagonalGaussian& g, const AngleVector& x) {
  const Vec diff = angle_diff(g.mean, x);
  double s = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) s += diff[i] * diff[i] / g.variance[i];
  return std::sqrt(s);
}

double kl_divergence(const DiagonalGaussian& p, const DiagonalGaussian& q) {
  if (p.mean.size() != q.mean.size() || p.variance.size() != q.variance.size() ||
      p.mean.size() != p.variance.size()) {
    throw Error("KL divergence between Gaussians of different dimension");
  }
  const Vec diff = angle_diff(p.mean, q.mean);
  double s = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    const double ratio = p.variance[i] / q.variance[i];
    s += ratio + diff[i] * diff[i] / q.variance[i] - 1.0 - std::log(ratio);
  }
  return std::max(0.0, 0.5 * s);
}

AngleVector angular_mean(std::span<const AngleVector> points) {
  if (points.empty()) throw Error("mean of no angle vectors");
  const std::size_t n = points.front().size();
  const double share = 1.0 / static_cast<double>(points.size());
  AngleVector out{Vec(n, 0.0)};
  double s = 0.0;
  double c = 0.0;
  for (const auto& p : points) {
    for (std::size_t i = 0; i + 1 < n; ++i) out[i] += share * p[i];
    s += std::sin(p[n - 1]);
    c += std::cos(p[n - 1]);
  }
  out[n - 1] = wrap_two_pi(std::atan2(s, c));
  return out;
}

double vector_angle(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double c = dot / std::sqrt(na * nb);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Vec gaussian_noise(double stddev, std::size_t dim, Rng& rng) {
  Vec out(dim, 0.0);
  if (stddev == 0.0) return out;
  // A fresh distribution per call keeps the generator the only state.
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& x : out) x = stddev * normal(rng);
  return out;
}

bool valid(const AngleVector& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    if (!std::isfinite(x) || x < 0.0) return false;
    if (i + 1 < a.size() ? x > kPi : x >= kTwoPi) return false;
  }
  return true;
}

bool valid(const DiagonalGaussian& g) {
  if (!valid(g.mean) || g.variance.size() != g.mean.size()) return false;
  return std::all_of(g.variance.begin(), g.variance.end(),
                     [](double v) { return std::isfinite(v) && v > 0.0; });
}

}  // namespace ctxsense
