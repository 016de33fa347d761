#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctcvo {

/// 3x4 row-major rigid transform [R | t], the layout used by trajectory files.
using PoseMatrix = Eigen::Matrix<double, 3, 4, Eigen::RowMajor>;

/// Quaternion coefficients in (w, x, y, z) order.
using QuatWxyz = Eigen::Vector4d;

/// Rigid transform stored as a unit quaternion (Hamilton convention) and a
/// translation in meters. Every constructed Pose is normalized and lies on
/// the canonical hemisphere (w > 0, or w == 0 with the first nonzero vector
/// component positive), so two equal rotations compare equal componentwise.
///
/// Composition follows 4x4 homogeneous matrix semantics:
///   M(compose(a, b)) == M(a) * M(b).
class Pose {
 public:
  Pose() : q_(1.0, 0.0, 0.0, 0.0), t_(Eigen::Vector3d::Zero()) {}

  /// Canonicalizes `q`; throws DegenerateQuaternion on a (near) zero vector.
  Pose(const QuatWxyz& q, const Eigen::Vector3d& t);
  Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t);

  static Pose identity() { return Pose(); }

  const Eigen::Quaterniond& rotation() const { return q_; }
  const Eigen::Vector3d& translation() const { return t_; }
  QuatWxyz wxyz() const { return {q_.w(), q_.x(), q_.y(), q_.z()}; }
  Eigen::Matrix3d rotation_matrix() const { return q_.toRotationMatrix(); }

  Eigen::Vector3d transform_point(const Eigen::Vector3d& p) const {
    return q_ * p + t_;
  }

 private:
  Eigen::Quaterniond q_;
  Eigen::Vector3d t_;
};

/// Normalizes a raw quaternion onto the canonical hemisphere.
/// Throws DegenerateQuaternion when the norm is <= 1e-12.
QuatWxyz canonicalize(const QuatWxyz& q);

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// compose(to, inverse(from)); compose(relative(a, b), a) == b.
Pose relative(const Pose& from, const Pose& to);

/// Camera-frame motion between two camera-to-world poses: the relative
/// transform of their world-to-camera forms, relative(from^-1, to^-1).
/// It maps points from `from`'s camera frame into `to`'s camera frame and is
/// independent of where in the world the pair sits.
Pose ego_motion(const Pose& from, const Pose& to);

/// Geodesic angle between the two rotations, in degrees within [0, 180].
double rotation_angle_deg(const Pose& a, const Pose& b);

/// Accepts rotations within 1e-3 of orthonormal (max-abs deviation of R^T R
/// from identity) and projects them onto SO(3); throws NotARotation beyond
/// that or for reflections.
Pose from_matrix(const PoseMatrix& m);
PoseMatrix to_matrix(const Pose& p);
Eigen::Matrix4d to_homogeneous(const Pose& p);

}  // namespace ctcvo
