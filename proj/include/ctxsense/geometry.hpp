#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ctxsense/vecstore.hpp"

namespace ctxsense {

using Rng = std::mt19937_64;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Hyperspherical direction of a d-vector: d-1 angles, the first d-2 polar
/// in [0, pi] and the last azimuthal in [0, 2pi).
struct AngleVector {
  Vec values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  bool operator==(const AngleVector&) const = default;
};

/// Axis-aligned Gaussian over angle coordinates.
struct DiagonalGaussian {
  AngleVector mean;
  Vec variance;  // strictly positive per axis

  bool operator==(const DiagonalGaussian&) const = default;
};

/// Direction of `v` in hyperspherical coordinates. The first angle is
/// measured from the last Cartesian axis; the azimuth lives in the (v0, v1)
/// plane. Once the remaining leading block is all zero, later angles are 0.
/// Throws Error on a zero vector.
AngleVector to_nsphere(std::span<const double> v);

/// Unit vector for `angles` scaled by `radius`; inverse of to_nsphere.
Vec from_nsphere(const AngleVector& angles, double radius = 1.0);

/// Wraps an angle into (-pi, pi].
double wrap_pi(double a);
/// Wraps an angle into [0, 2pi).
double wrap_two_pi(double a);

/// a - b per component, the last (periodic) component wrapped into (-pi, pi].
Vec angle_diff(const AngleVector& a, const AngleVector& b);

double mahalanobis(const DiagonalGaussian& g, const AngleVector& x);

/// KL(p || q) for diagonal Gaussians using wrapped mean differences.
double kl_divergence(const DiagonalGaussian& p, const DiagonalGaussian& q);

/// Mean of a set of angle vectors: arithmetic on polar axes, circular on
/// the azimuth.
AngleVector angular_mean(std::span<const AngleVector> points);

/// Angle between two Euclidean vectors, in radians.
double vector_angle(std::span<const double> a, std::span<const double> b);

Vec gaussian_noise(double stddev, std::size_t dim, Rng& rng);

bool valid(const AngleVector& a);
bool valid(const DiagonalGaussian& g);

}  // namespace ctxsense
