#include "mags/sim3.hpp"

#include <cmath>
#include <stdexcept>

namespace mags {

namespace {

// Closed forms for the W coefficients develop 0/0 as theta -> 0 or lambda -> 0;
// below this threshold the bivariate series takes over (both branches agree to
// ~1e-13 at the seam, checked by tests).
constexpr double kSeriesThreshold = 1e-4;

struct WCoeffs {
  double a, b, c;  // W = a*Omega + b*Omega^2 + c*I
};

// Series form of the coefficients, from
//   W = sum_{m,n} sigma^m Omega^n / (m! n! (m+n+1))
// reduced by Omega^3 = -theta^2 Omega. Plain Taylor sums, no cancellation
// hazards for |sigma| <= ~5 and theta <= pi.
WCoeffs calc_w_series(double theta_sq, double sigma) {
  double c = 0.0;
  {
    double term = 1.0;  // sigma^m / m!
    for (int m = 0; m <= 30; ++m) {
      c += term / (m + 1);
      term *= sigma / (m + 1);
    }
  }
  double a = 0.0, b = 0.0;
  double sig_term = 1.0;  // sigma^m / m!
  for (int m = 0; m <= 30; ++m) {
    double odd = 1.0;   // (-theta^2)^j / (2j+1)!
    double even = 0.5;  // (-theta^2)^j / (2j+2)!
    for (int j = 0; j <= 18; ++j) {
      a += sig_term * odd / (m + 2 * j + 2);
      b += sig_term * even / (m + 2 * j + 3);
      odd *= -theta_sq / ((2 * j + 2) * (2 * j + 3));
      even *= -theta_sq / ((2 * j + 3) * (2 * j + 4));
    }
    sig_term *= sigma / (m + 1);
  }
  return {a, b, c};
}

WCoeffs calc_w_coeffs(double theta, double sigma) {
  if (theta < kSeriesThreshold || std::abs(sigma) < kSeriesThreshold) {
    return calc_w_series(theta * theta, sigma);
  }
  const double s = std::exp(sigma);
  const double c_big = theta * theta + sigma * sigma;
  const double sa = s * std::sin(theta);
  const double sb = s * std::cos(theta);
  const double c = (s - 1.0) / sigma;
  const double a = (sa * sigma + (1.0 - sb) * theta) / (theta * c_big);
  const double b = (c - ((sb - 1.0) * sigma + sa * theta) / c_big) / (theta * theta);
  return {a, b, c};
}

Eigen::Quaterniond exp_so3(const Eigen::Vector3d& omega) {
  const double theta_sq = omega.squaredNorm();
  const double theta = std::sqrt(theta_sq);
  double half_factor;  // sin(theta/2)/theta
  if (theta < 1e-4) {
    half_factor = 0.5 - theta_sq / 48.0 + theta_sq * theta_sq / 3840.0;
  } else {
    half_factor = std::sin(0.5 * theta) / theta;
  }
  Eigen::Quaterniond q(std::cos(0.5 * theta), half_factor * omega.x(),
                       half_factor * omega.y(), half_factor * omega.z());
  return q;
}

Eigen::Vector3d log_so3(const Eigen::Quaterniond& q_in) {
  // Canonicalize to the w >= 0 hemisphere so the angle lands in [0, pi].
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d v = q.vec();
  const double n = v.norm();
  if (q.w() == 0.0) {
    // Angle exactly pi: pick the axis with nonnegative leading nonzero entry.
    Eigen::Vector3d axis = v / n;
    for (int i = 0; i < 3; ++i) {
      if (axis[i] != 0.0) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
    return M_PI * axis;
  }
  double factor;  // 2*atan2(n, w)/n
  if (n < 1e-9) {
    factor = 2.0 / q.w() - 2.0 * n * n / (3.0 * q.w() * q.w() * q.w());
  } else {
    factor = 2.0 * std::atan2(n, q.w()) / n;
  }
  return factor * v;
}

}  // namespace

Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Sim3 Sim3::compose(const Sim3& other) const {
  Sim3 out;
  out.scale = scale * other.scale;
  out.rotation = (rotation * other.rotation).normalized();
  out.translation = scale * (rotation * other.translation) + translation;
  return out;
}

Sim3 Sim3::inverse() const {
  Sim3 out;
  out.scale = 1.0 / scale;
  out.rotation = rotation.conjugate();
  out.translation = -(out.scale * (out.rotation * translation));
  return out;
}

Eigen::Vector3d Sim3::act(const Eigen::Vector3d& p) const {
  return scale * (rotation * p) + translation;
}

Eigen::Matrix4d Sim3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = linear();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

std::array<double, 8> Sim3::to_array() const {
  return {scale,           rotation.w(),    rotation.x(),    rotation.y(),
          rotation.z(),    translation.x(), translation.y(), translation.z()};
}

Sim3 Sim3::from_array(const std::array<double, 8>& a) {
  Sim3 t;
  t.scale = a[0];
  t.rotation = Eigen::Quaterniond(a[1], a[2], a[3], a[4]);
  t.translation = Eigen::Vector3d(a[5], a[6], a[7]);
  return t;
}

Eigen::Matrix3d sim3_w_matrix(const Eigen::Vector3d& omega, double lambda) {
  const WCoeffs w = calc_w_coeffs(omega.norm(), lambda);
  const Eigen::Matrix3d om = hat(omega);
  return w.a * om + w.b * (om * om) + w.c * Eigen::Matrix3d::Identity();
}

Sim3 exp(const Sim3Tangent& x) {
  Sim3 t;
  t.scale = std::exp(x.lambda);
  t.rotation = exp_so3(x.omega);
  t.translation = sim3_w_matrix(x.omega, x.lambda) * x.nu;
  return t;
}

Sim3Tangent log(const Sim3& t) {
  if (!(t.scale > 0.0)) {
    throw std::invalid_argument("sim3 log: scale must be positive");
  }
  Sim3Tangent x;
  x.lambda = std::log(t.scale);
  x.omega = log_so3(t.rotation);
  const Eigen::Matrix3d w = sim3_w_matrix(x.omega, x.lambda);
  x.nu = w.partialPivLu().solve(t.translation);
  return x;
}

Sim3Tangent adjoint(const Sim3& t, const Sim3Tangent& x) {
  const Eigen::Matrix3d r = t.rotation.toRotationMatrix();
  Sim3Tangent out;
  out.omega = r * x.omega;
  out.lambda = x.lambda;
  out.nu = t.scale * (r * x.nu) + t.translation.cross(out.omega) - x.lambda * t.translation;
  return out;
}

Matrix7d adjoint_matrix(const Sim3& t) {
  const Eigen::Matrix3d r = t.rotation.toRotationMatrix();
  Matrix7d m = Matrix7d::Zero();
  m.block<3, 3>(0, 0) = t.scale * r;
  m.block<3, 3>(0, 3) = hat(t.translation) * r;
  m.block<3, 1>(0, 6) = -t.translation;
  m.block<3, 3>(3, 3) = r;
  m(6, 6) = 1.0;
  return m;
}

Matrix7d ad(const Sim3Tangent& x) {
  Matrix7d m = Matrix7d::Zero();
  const Eigen::Matrix3d om = hat(x.omega);
  m.block<3, 3>(0, 0) = om + x.lambda * Eigen::Matrix3d::Identity();
  m.block<3, 3>(0, 3) = hat(x.nu);
  m.block<3, 1>(0, 6) = -x.nu;
  m.block<3, 3>(3, 3) = om;
  return m;
}

Matrix7d jr_inv(const Sim3Tangent& x) {
  // Jr^-1 = I + ad/2 + sum_k B_2k/(2k)! ad^2k, truncated at ad^12.
  static const double kCoeff[6] = {1.0 / 12.0,       -1.0 / 720.0,      1.0 / 30240.0,
                                   -1.0 / 1209600.0, 1.0 / 47900160.0,  -691.0 / 1307674368000.0};
  const Matrix7d a = ad(x);
  const Matrix7d a2 = a * a;
  Matrix7d out = Matrix7d::Identity() + 0.5 * a;
  Matrix7d power = a2;
  for (double coeff : kCoeff) {
    out += coeff * power;
    power = power * a2;
  }
  return out;
}

}  // namespace mags
