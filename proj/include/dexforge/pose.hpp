#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace dexforge {

/// Rigid transform in SE(3). Translation in meters.
class Pose {
 public:
  Pose() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}
  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose identity() { return Pose(); }
  static Pose from_translation(const Eigen::Vector3d& t) {
    return Pose(Eigen::Matrix3d::Identity(), t);
  }
  /// URDF convention: R = Rz(yaw) * Ry(pitch) * Rx(roll).
  static Pose from_xyz_rpy(const Eigen::Vector3d& xyz, const Eigen::Vector3d& rpy);
  /// Rotation of `angle` radians about the unit `axis` (Rodrigues).
  static Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  Eigen::Vector3d rpy() const;

  Pose inverse() const {
    Eigen::Matrix3d rt = rotation_.transpose();
    return Pose(rt, -rt * translation_);
  }

  Pose operator*(const Pose& other) const {
    return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

  Eigen::Matrix4d matrix() const;

  /// RᵀR = I and det R = +1 within `tol`.
  bool is_valid(double tol = 1e-9) const;

  bool operator==(const Pose& other) const {
    return rotation_ == other.rotation_ && translation_ == other.translation_;
  }

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

bool is_rotation(const Eigen::Matrix3d& r, double tol);

}  // namespace dexforge
