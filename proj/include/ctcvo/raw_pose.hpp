#pragma once

#include <Eigen/Core>

#include "ctcvo/pose.hpp"

namespace ctcvo {

/// Unconstrained 7-vector pose as emitted by a regression head:
/// [tx, ty, tz, qw, qx, qy, qz]. The quaternion part is not normalized.
using RawPose = Eigen::Matrix<double, 7, 1>;
using RawJacobian = Eigen::Matrix<double, 7, 7>;

inline Eigen::Vector3d raw_translation(const RawPose& p) { return p.head<3>(); }
inline QuatWxyz raw_quaternion(const RawPose& p) { return p.tail<4>(); }

RawPose to_raw(const Pose& p);

/// Canonicalizing conversion; throws DegenerateQuaternion on collapsed output.
Pose from_raw(const RawPose& p);

/// Jacobian of q / |q| with respect to q.
Eigen::Matrix4d normalization_jacobian(const QuatWxyz& q);

/// Jacobian of R(q) * v with respect to the quaternion q (unit q assumed).
Eigen::Matrix<double, 3, 4> rotate_jacobian(const QuatWxyz& q, const Eigen::Vector3d& v);

/// Left/right Hamilton product matrices: p*q == left(p) q == right(q) p.
Eigen::Matrix4d quat_left(const QuatWxyz& p);
Eigen::Matrix4d quat_right(const QuatWxyz& q);

struct ComposeJacobians {
  RawJacobian d_a;
  RawJacobian d_b;
};

/// Differentiable composition of two raw poses. Both quaternions are
/// normalized first; the output quaternion is unit but not hemisphere
/// canonicalized (losses downstream are sign-robust).
RawPose compose_raw(const RawPose& a, const RawPose& b, ComposeJacobians* jac = nullptr);

RawPose inverse_raw(const RawPose& p, RawJacobian* jac = nullptr);

}  // namespace ctcvo
