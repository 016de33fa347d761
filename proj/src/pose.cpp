#include "ctcvo/pose.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "ctcvo/errors.hpp"

namespace ctcvo {

namespace {

constexpr double kMinQuatNorm = 1e-12;
constexpr double kOrthoTolerance = 1e-3;

Eigen::Quaterniond to_eigen(const QuatWxyz& q) {
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
}

}  // namespace

QuatWxyz canonicalize(const QuatWxyz& q) {
  const double n = q.norm();
  if (!(n > kMinQuatNorm)) {
    throw DegenerateQuaternion("quaternion norm " + std::to_string(n) +
                               " is below 1e-12");
  }
  QuatWxyz u = q / n;
  bool flip = u[0] < 0.0;
  if (u[0] == 0.0) {
    for (int i = 1; i < 4; ++i) {
      if (u[i] != 0.0) {
        flip = u[i] < 0.0;
        break;
      }
    }
  }
  if (flip) u = -u;
  return u;
}

Pose::Pose(const QuatWxyz& q, const Eigen::Vector3d& t)
    : q_(to_eigen(canonicalize(q))), t_(t) {}

Pose::Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
    : Pose(QuatWxyz(q.w(), q.x(), q.y(), q.z()), t) {}

Pose compose(const Pose& a, const Pose& b) {
  const Eigen::Quaterniond q = a.rotation() * b.rotation();
  return Pose(q, a.rotation() * b.translation() + a.translation());
}

Pose inverse(const Pose& p) {
  const Eigen::Quaterniond qi = p.rotation().conjugate();
  return Pose(qi, -(qi * p.translation()));
}

Pose relative(const Pose& from, const Pose& to) {
  return compose(to, inverse(from));
}

Pose ego_motion(const Pose& from, const Pose& to) {
  return relative(inverse(from), inverse(to));
}

double rotation_angle_deg(const Pose& a, const Pose& b) {
  // 2 acos(|<qa, qb>|), evaluated through atan2 of the difference rotation so
  // that nearly equal rotations keep full precision.
  const Eigen::Quaterniond d = a.rotation().conjugate() * b.rotation();
  const double angle = 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
  return std::clamp(angle, 0.0, M_PI) * 180.0 / M_PI;
}

Pose from_matrix(const PoseMatrix& m) {
  const Eigen::Matrix3d r = m.leftCols<3>();
  if (!r.allFinite() || !m.col(3).allFinite()) {
    throw NotARotation("matrix has non-finite entries");
  }
  const double deviation =
      (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (deviation > kOrthoTolerance) {
    throw NotARotation("R^T R deviates from identity by " +
                       std::to_string(deviation));
  }
  if (r.determinant() <= 0.0) {
    throw NotARotation("det(R) is not positive (reflection)");
  }
  // Nearest rotation in the Frobenius sense (polar factor).
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d projected = svd.matrixU() * svd.matrixV().transpose();
  return Pose(Eigen::Quaterniond(projected), m.col(3));
}

PoseMatrix to_matrix(const Pose& p) {
  PoseMatrix m;
  m.leftCols<3>() = p.rotation_matrix();
  m.col(3) = p.translation();
  return m;
}

Eigen::Matrix4d to_homogeneous(const Pose& p) {
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
  h.topRows<3>() = to_matrix(p);
  return h;
}

}  // namespace ctcvo
