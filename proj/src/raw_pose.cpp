#include "ctcvo/raw_pose.hpp"

#include <string>

#include "ctcvo/errors.hpp"

namespace ctcvo {

namespace {

QuatWxyz unit_or_throw(const QuatWxyz& q) {
  const double n = q.norm();
  if (!(n > 1e-12)) {
    throw DegenerateQuaternion("raw quaternion norm " + std::to_string(n));
  }
  return q / n;
}

Eigen::Matrix3d rotation_of(const QuatWxyz& u) {
  return Eigen::Quaterniond(u[0], u[1], u[2], u[3]).toRotationMatrix();
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

const Eigen::Matrix4d& conjugation() {
  static const Eigen::Matrix4d c = Eigen::Vector4d(1.0, -1.0, -1.0, -1.0).asDiagonal();
  return c;
}

}  // namespace

RawPose to_raw(const Pose& p) {
  RawPose r;
  r << p.translation(), p.wxyz();
  return r;
}

Pose from_raw(const RawPose& p) { return Pose(raw_quaternion(p), raw_translation(p)); }

Eigen::Matrix4d normalization_jacobian(const QuatWxyz& q) {
  const double n = q.norm();
  const QuatWxyz u = q / n;
  return (Eigen::Matrix4d::Identity() - u * u.transpose()) / n;
}

Eigen::Matrix<double, 3, 4> rotate_jacobian(const QuatWxyz& q, const Eigen::Vector3d& v) {
  const double w = q[0];
  const Eigen::Vector3d u = q.tail<3>();
  Eigen::Matrix<double, 3, 4> j;
  j.col(0) = 2.0 * u.cross(v);
  j.rightCols<3>() = -2.0 * w * skew(v) + 2.0 * u.dot(v) * Eigen::Matrix3d::Identity() +
                     2.0 * u * v.transpose() - 4.0 * v * u.transpose();
  return j;
}

Eigen::Matrix4d quat_left(const QuatWxyz& p) {
  Eigen::Matrix4d l;
  l << p[0], -p[1], -p[2], -p[3],
       p[1],  p[0], -p[3],  p[2],
       p[2],  p[3],  p[0], -p[1],
       p[3], -p[2],  p[1],  p[0];
  return l;
}

Eigen::Matrix4d quat_right(const QuatWxyz& q) {
  Eigen::Matrix4d r;
  r << q[0], -q[1], -q[2], -q[3],
       q[1],  q[0],  q[3], -q[2],
       q[2], -q[3],  q[0],  q[1],
       q[3],  q[2], -q[1],  q[0];
  return r;
}

RawPose compose_raw(const RawPose& a, const RawPose& b, ComposeJacobians* jac) {
  const QuatWxyz qa = unit_or_throw(raw_quaternion(a));
  const QuatWxyz qb = unit_or_throw(raw_quaternion(b));
  const Eigen::Vector3d tb = raw_translation(b);
  const Eigen::Matrix3d ra = rotation_of(qa);

  RawPose out;
  out.head<3>() = raw_translation(a) + ra * tb;
  out.tail<4>() = quat_left(qa) * qb;

  if (jac) {
    const Eigen::Matrix4d na = normalization_jacobian(raw_quaternion(a));
    const Eigen::Matrix4d nb = normalization_jacobian(raw_quaternion(b));
    jac->d_a.setZero();
    jac->d_b.setZero();
    jac->d_a.block<3, 3>(0, 0).setIdentity();
    jac->d_a.block<3, 4>(0, 3) = rotate_jacobian(qa, tb) * na;
    jac->d_a.block<4, 4>(3, 3) = quat_right(qb) * na;
    jac->d_b.block<3, 3>(0, 0) = ra;
    jac->d_b.block<4, 4>(3, 3) = quat_left(qa) * nb;
  }
  return out;
}

RawPose inverse_raw(const RawPose& p, RawJacobian* jac) {
  const QuatWxyz q = unit_or_throw(raw_quaternion(p));
  const QuatWxyz qi = conjugation() * q;
  const Eigen::Vector3d t = raw_translation(p);
  const Eigen::Matrix3d ri = rotation_of(qi);

  RawPose out;
  out.head<3>() = -(ri * t);
  out.tail<4>() = qi;

  if (jac) {
    const Eigen::Matrix4d dqi = conjugation() * normalization_jacobian(raw_quaternion(p));
    jac->setZero();
    jac->block<3, 3>(0, 0) = -ri;
    jac->block<3, 4>(0, 3) = -rotate_jacobian(qi, t) * dqi;
    jac->block<4, 4>(3, 3) = dqi;
  }
  return out;
}

}  // namespace ctcvo
