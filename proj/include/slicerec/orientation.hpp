#pragma once

// Orientation representations and conversions.
//
// Chain: Bunge ZXZ Euler angles -> unit quaternion -> axis/angle ->
// homochoric vector (ball of radius (3pi/4)^(1/3)) -> cubochoric vector (cube
// of edge pi^(2/3)). The ball <-> cube step is the equal-volume construction:
// each of the six pyramids of the cube is mapped onto the matching sixth of
// the ball, radius scaling with the pyramid height and the square cross
// sections mapped area-preservingly onto spherical squares.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "slicerec/error.hpp"

namespace slicerec {

using Vec3 = std::array<double, 3>;

inline constexpr double kPi = std::numbers::pi;

/// Half edge of the cubochoric cube, pi^(2/3) / 2.
inline const double kCubeHalfEdge = std::cbrt(kPi * kPi) / 2.0;
/// Radius of the homochoric ball, (3pi/4)^(1/3).
inline const double kHomochoricRadius = std::cbrt(0.75 * kPi);
inline constexpr double kCubeTolerance = 1e-9;

struct EulerAngles {
  double phi1 = 0.0;
  double Phi = 0.0;
  double phi2 = 0.0;

  /// phi1, phi2 wrapped to [0, 2pi); Phi folded into [0, pi] (rotation kept).
  EulerAngles canonical() const {
    auto wrap = [](double a) {
      double r = std::fmod(a, 2 * kPi);
      if (r < 0) r += 2 * kPi;
      if (r >= 2 * kPi) r = 0.0;
      return r;
    };
    double p1 = phi1, P = wrap(Phi), p2 = phi2;
    if (P > kPi) {
      // Rz(a) Rx(-b) Rz(c) == Rz(a + pi) Rx(b) Rz(c + pi)
      P = 2 * kPi - P;
      p1 += kPi;
      p2 += kPi;
    }
    return {wrap(p1), P, wrap(p2)};
  }
};

struct UnitQuaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static UnitQuaternion normalized(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    UnitQuaternion q{w / n, x / n, y / n, z / n};
    if (q.w < 0) q = {-q.w, -q.x, -q.y, -q.z};
    return q;
  }

  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    const double s = std::sin(angle / 2) / n;
    return normalized(std::cos(angle / 2), axis[0] * s, axis[1] * s, axis[2] * s);
  }

  UnitQuaternion conjugate() const { return {w, -x, -y, -z}; }

  double dot(const UnitQuaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
};

/// Hamilton product (composition: apply b, then a).
inline UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
  return UnitQuaternion::normalized(a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
                                    a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
                                    a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
                                    a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w);
}

/// Rotation Rz(phi1) Rx(Phi) Rz(phi2).
inline UnitQuaternion euler_to_quaternion(const EulerAngles& e) {
  const double c = std::cos(e.Phi / 2), s = std::sin(e.Phi / 2);
  const double sigma = (e.phi1 + e.phi2) / 2, delta = (e.phi1 - e.phi2) / 2;
  return UnitQuaternion::normalized(c * std::cos(sigma), s * std::cos(delta), s * std::sin(delta),
                                    c * std::sin(sigma));
}

inline EulerAngles quaternion_to_euler(const UnitQuaternion& q) {
  const double q03 = q.w * q.w + q.z * q.z;
  const double q12 = q.x * q.x + q.y * q.y;
  EulerAngles e;
  if (q12 < 1e-30) {
    e = {2 * std::atan2(q.z, q.w), 0.0, 0.0};
  } else if (q03 < 1e-30) {
    e = {2 * std::atan2(q.y, q.x), kPi, 0.0};
  } else {
    const double sigma = std::atan2(q.z, q.w);
    const double delta = std::atan2(q.y, q.x);
    e = {sigma + delta, std::atan2(2 * std::sqrt(q03 * q12), q03 - q12), sigma - delta};
  }
  return e.canonical();
}

/// Rotation angle of a^-1 b in [0, pi]; no crystal symmetry applied.
inline double misorientation_angle(const UnitQuaternion& a, const UnitQuaternion& b) {
  // atan2 form stays precise near zero where acos loses digits.
  const UnitQuaternion r = a.conjugate() * b;
  const double v = std::sqrt(r.x * r.x + r.y * r.y + r.z * r.z);
  return 2.0 * std::atan2(v, std::abs(r.w));
}

namespace detail {

// omega - sin(omega) without cancellation for small angles.
inline double omega_minus_sin(double omega) {
  if (omega > 0.5) return omega - std::sin(omega);
  const double w2 = omega * omega;
  double term = omega * w2 / 6.0, total = 0.0;
  for (int k = 1; k < 12; ++k) {
    total += term;
    term *= -w2 / static_cast<double>((2 * k + 2) * (2 * k + 3));
  }
  return total;
}

}  // namespace detail

inline Vec3 quaternion_to_homochoric(const UnitQuaternion& q) {
  const double v = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  if (v < 1e-300) return {0.0, 0.0, 0.0};
  const double omega = 2.0 * std::atan2(v, q.w);  // q.w >= 0 so omega in [0, pi]
  const double f = std::cbrt(0.75 * detail::omega_minus_sin(omega));
  return {f * q.x / v, f * q.y / v, f * q.z / v};
}

inline UnitQuaternion homochoric_to_quaternion(const Vec3& h) {
  const double r = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
  if (r < 1e-300) return {};
  const double target = 4.0 * r * r * r / 3.0;  // omega - sin(omega)
  // omega - sin(omega) is increasing on [0, pi]; Newton from a safe start,
  // with a series start for tiny angles.
  double omega = target < 1e-6 ? std::cbrt(6.0 * target) : std::min(kPi, std::cbrt(6.0 * target));
  for (int it = 0; it < 60; ++it) {
    const double f = detail::omega_minus_sin(omega) - target;
    const double df = 1.0 - std::cos(omega);
    if (df <= 0) break;
    double next = omega - f / df;
    if (next > kPi) next = (omega + kPi) / 2;
    if (next <= 0) next = omega / 2;
    if (std::abs(next - omega) <= 1e-16 * std::max(1.0, omega)) {
      omega = next;
      break;
    }
    omega = next;
  }
  const double s = std::sin(omega / 2) / r;
  return UnitQuaternion::normalized(std::cos(omega / 2), h[0] * s, h[1] * s, h[2] * s);
}

namespace detail {

// Axis that dominates in magnitude; ties resolved towards z, then y.
inline int dominant_axis(const Vec3& v) {
  const double ax = std::abs(v[0]), ay = std::abs(v[1]), az = std::abs(v[2]);
  if (az >= ax && az >= ay) return 2;
  if (ay >= ax) return 1;
  return 0;
}

// Reorders so that `axis` becomes the third component (cyclic).
inline Vec3 to_pyramid_frame(const Vec3& v, int axis) {
  switch (axis) {
    case 0: return {v[1], v[2], v[0]};
    case 1: return {v[2], v[0], v[1]};
    default: return v;
  }
}

inline Vec3 from_pyramid_frame(const Vec3& v, int axis) {
  switch (axis) {
    case 0: return {v[2], v[0], v[1]};
    case 1: return {v[1], v[2], v[0]};
    default: return v;
  }
}

// 1 - cos of the polar angle of the spherical-square edge at azimuth phi
// (phi in [0, pi/4]); the edge is the great circle x = z.
inline double edge_one_minus_cos(double phi) {
  const double c = std::cos(phi);
  return 1.0 - c / std::sqrt(1.0 + c * c);
}

}  // namespace detail

/// Equal-volume map from the cube onto the homochoric ball.
inline Vec3 cubochoric_to_homochoric(const Vec3& c) {
  const double lim = kCubeHalfEdge + kCubeTolerance;
  if (!(std::abs(c[0]) <= lim && std::abs(c[1]) <= lim && std::abs(c[2]) <= lim)) {
    throw DomainError("cubochoric point outside the cube");
  }
  const int axis = detail::dominant_axis(c);
  Vec3 p = detail::to_pyramid_frame(c, axis);
  const double zc = std::min(std::abs(p[2]), kCubeHalfEdge);
  if (zc == 0.0) return {0.0, 0.0, 0.0};
  const double zsign = p[2] < 0 ? -1.0 : 1.0;
  const double u = std::clamp(p[0] / zc, -1.0, 1.0);
  const double v = std::clamp(p[1] / zc, -1.0, 1.0);
  const bool swapped = std::abs(v) > std::abs(u);
  const double major = swapped ? std::abs(v) : std::abs(u);
  const double minor = swapped ? std::abs(u) : std::abs(v);
  double dx = 0.0, dy = 0.0, dz = 1.0;
  if (major > 0.0) {
    const double s = minor / major;
    const double g = kPi * s / 12.0;
    const double phi = std::atan2(std::sin(g), std::cos(g) - std::numbers::sqrt2 / 2.0);
    const double w = major * major * detail::edge_one_minus_cos(phi);  // 1 - cos(theta)
    const double sin_theta = std::sqrt(std::max(0.0, w * (2.0 - w)));
    dx = sin_theta * std::cos(phi);
    dy = sin_theta * std::sin(phi);
    dz = 1.0 - w;
  }
  if (swapped) std::swap(dx, dy);
  if (u < 0) dx = -dx;
  if (v < 0) dy = -dy;
  const double r = zc * std::cbrt(6.0 / kPi);
  return detail::from_pyramid_frame({r * dx, r * dy, zsign * r * dz}, axis);
}

/// Inverse of cubochoric_to_homochoric.
inline Vec3 homochoric_to_cubochoric(const Vec3& h) {
  const double r = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
  if (r > kHomochoricRadius + kCubeTolerance) throw DomainError("homochoric point outside the ball");
  if (r == 0.0) return {0.0, 0.0, 0.0};
  const int axis = detail::dominant_axis(h);
  const Vec3 p = detail::to_pyramid_frame(h, axis);
  const double dx = p[0] / r, dy = p[1] / r, dz = std::abs(p[2]) / r;
  const double zsign = p[2] < 0 ? -1.0 : 1.0;
  const double zc = std::min(kCubeHalfEdge, r * std::cbrt(kPi / 6.0));
  const double ax = std::abs(dx), ay = std::abs(dy);
  double major = 0.0, minor = 0.0;
  const bool swapped = ay > ax;
  if (ax > 0.0 || ay > 0.0) {
    const double phi = std::atan2(std::min(ax, ay), std::max(ax, ay));
    const double w = (dx * dx + dy * dy) / (1.0 + dz);  // 1 - cos(theta), stable
    major = std::min(1.0, std::sqrt(w / detail::edge_one_minus_cos(phi)));
    const double s = (12.0 / kPi) * (phi - std::asin(std::sin(phi) / std::numbers::sqrt2));
    minor = std::clamp(s, 0.0, 1.0) * major;
  }
  double u = swapped ? minor : major;
  double v = swapped ? major : minor;
  if (dx < 0) u = -u;
  if (dy < 0) v = -v;
  return detail::from_pyramid_frame({u * zc, v * zc, zsign * zc}, axis);
}

inline Vec3 quaternion_to_cubochoric(const UnitQuaternion& q) {
  return homochoric_to_cubochoric(quaternion_to_homochoric(q));
}

inline UnitQuaternion cubochoric_to_quaternion(const Vec3& c) {
  return homochoric_to_quaternion(cubochoric_to_homochoric(c));
}

inline Vec3 euler_to_cubochoric(const EulerAngles& e) {
  return quaternion_to_cubochoric(euler_to_quaternion(e));
}

/// Throws DomainError when c lies outside the cube (beyond tolerance).
inline EulerAngles cubochoric_to_euler(const Vec3& c) {
  return quaternion_to_euler(cubochoric_to_quaternion(c));
}

inline bool inside_cubochoric_cube(const Vec3& c, double tol = kCubeTolerance) {
  const double lim = kCubeHalfEdge + tol;
  return std::abs(c[0]) <= lim && std::abs(c[1]) <= lim && std::abs(c[2]) <= lim;
}

/// Uniformly distributed rotation (Shoemake's subgroup algorithm).
template <class Rng>
UnitQuaternion random_rotation(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
  const double a = std::sqrt(1 - u1), b = std::sqrt(u1);
  return UnitQuaternion::normalized(a * std::sin(2 * kPi * u2), a * std::cos(2 * kPi * u2),
                                    b * std::sin(2 * kPi * u3), b * std::cos(2 * kPi * u3));
}

}  // namespace slicerec
