#pragma once

// Sim(3) similarity transforms and their Lie algebra.
//
// Convention (fixed for the whole system, including serialization):
//   - A transform C = (s, R, t) acts on points as  C*p = s*R*p + t,  s > 0.
//   - Rotation is stored as a unit quaternion (w, x, y, z), renormalized after
//     every compose.
//   - Tangent vectors are ordered (nu, omega, lambda) in R^7: translational
//     part nu, rotational part omega, log-scale lambda.
//   - exp((nu, omega, lambda)) = (s = e^lambda, R = exp_so3(omega), t = W*nu)
//     with the scale-coupled matrix
//        W = int_0^1 e^{lambda u} exp(hat(omega) u) du
//          = A*hat(omega) + B*hat(omega)^2 + C*I.
//     log() inverts this (nu = W^-1 t) and returns the canonical tangent:
//     rotation angle in [0, pi], and at angle exactly pi the axis with
//     nonnegative leading nonzero component.
//   - Near-singular regions of A, B, C (small angle and/or small lambda) are
//     evaluated by a bivariate Taylor series instead of the closed forms; the
//     switch threshold is well above the spec'd 1e-6 so both branches are
//     machine-accurate where they meet.

#include <Eigen/Dense>

#include <array>

namespace mags {

using Vector7d = Eigen::Matrix<double, 7, 1>;
using Matrix7d = Eigen::Matrix<double, 7, 7>;

// hat: R^3 -> so(3), [v]x w = v x w.
Eigen::Matrix3d hat(const Eigen::Vector3d& v);

struct Sim3Tangent {
  Eigen::Vector3d nu = Eigen::Vector3d::Zero();
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
  double lambda = 0.0;

  Sim3Tangent() = default;
  Sim3Tangent(const Eigen::Vector3d& nu_, const Eigen::Vector3d& omega_, double lambda_)
      : nu(nu_), omega(omega_), lambda(lambda_) {}
  explicit Sim3Tangent(const Vector7d& v) : nu(v.head<3>()), omega(v.segment<3>(3)), lambda(v[6]) {}

  Vector7d vec() const {
    Vector7d v;
    v << nu, omega, lambda;
    return v;
  }
};

struct Sim3 {
  double scale = 1.0;
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Sim3() = default;
  Sim3(double s, const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
      : scale(s), rotation(q.normalized()), translation(t) {}

  static Sim3 identity() { return Sim3(); }

  // Group composition: (this o other), acting right-to-left on points.
  Sim3 compose(const Sim3& other) const;
  Sim3 operator*(const Sim3& other) const { return compose(other); }

  Sim3 inverse() const;

  // Point action s*R*p + t.
  Eigen::Vector3d act(const Eigen::Vector3d& p) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return act(p); }

  // Linear part s*R as a matrix.
  Eigen::Matrix3d linear() const { return scale * rotation.toRotationMatrix(); }

  // 4x4 homogeneous matrix [sR t; 0 1].
  Eigen::Matrix4d matrix() const;

  // Flat (scale, qw, qx, qy, qz, tx, ty, tz) form used by every export format.
  std::array<double, 8> to_array() const;
  static Sim3 from_array(const std::array<double, 8>& a);
};

// Exponential map, tangent ordering (nu, omega, lambda).
Sim3 exp(const Sim3Tangent& x);
inline Sim3 exp(const Vector7d& x) { return exp(Sim3Tangent(x)); }

// Logarithm map; canonical representative (angle in [0, pi], pi-axis sign rule).
Sim3Tangent log(const Sim3& t);

// Adjoint action Ad_T x, satisfying T o exp(x) o T^-1 = exp(Ad_T x).
Sim3Tangent adjoint(const Sim3& t, const Sim3Tangent& x);

// Matrix of the adjoint action: [sR  [t]x R  -t; 0 R 0; 0 0 1].
Matrix7d adjoint_matrix(const Sim3& t);

// Algebra adjoint ad_x (Lie bracket matrix), with Ad_{exp(x)} = exp(ad_x).
Matrix7d ad(const Sim3Tangent& x);

// Inverse right Jacobian of log at x: d/d eps log(exp(x) exp(eps)) | eps=0.
// Bernoulli series in ad_x; machine-accurate for the residual-sized tangents
// the solver feeds it.
Matrix7d jr_inv(const Sim3Tangent& x);

// W(omega, lambda) such that exp translation = W * nu. Exposed for tests.
Eigen::Matrix3d sim3_w_matrix(const Eigen::Vector3d& omega, double lambda);

}  // namespace mags
