#pragma once

#include <vector>

#include <Eigen/Core>

#include "dexforge/hand_model.hpp"
#include "dexforge/pose.hpp"

namespace dexforge {

/// Fingertip positions, one column per fingertip (thumb→little), world frame, meters.
using FingertipSet = Eigen::Matrix3Xd;

inline constexpr double kLimitSlack = 1e-9;

struct MimicResult {
  Eigen::VectorXd q;
  std::vector<int> clamped;  // mimic joints whose k·q_master + c fell outside their limits
};

/// Sets every mimic joint to k·q_master + c, clamped to its limits. Other entries untouched.
MimicResult apply_mimic(const HandModel& model, const Eigen::VectorXd& q);

/// True when every entry lies within its limits widened by kLimitSlack.
bool within_limits(const HandModel& model, const Eigen::VectorXd& q);

struct FkResult {
  FingertipSet fingertips;
  std::vector<Pose> link_poses;   // world frame, indexed like model.links()
  std::vector<Pose> joint_frames; // moving frame of each joint, world frame
  bool limit_warning = false;     // some input exceeded its limits beyond kLimitSlack
};

/// x_i = Trans(world_dummy · offset · T_i(q)). Mimic entries of `q` are recomputed from
/// their masters before evaluation. Throws Error{kDimensionMismatch} on a wrong-length q.
FkResult forward_kinematics(const HandModel& model, const Eigen::VectorXd& q, const Pose& world_dummy,
                            const Pose& offset);

/// Evaluates `q` exactly as given, mimic entries included (independent-joint view).
FkResult forward_kinematics_unconstrained(const HandModel& model, const Eigen::VectorXd& q,
                                          const Pose& world_dummy, const Pose& offset);

/// 3m × full_dof positional Jacobian of the stacked fingertips. Mimic columns are folded into
/// their masters (column_master += k · column_slave) and then zeroed, so the matrix is the
/// derivative of forward_kinematics with mimic recomputation. A clamped slave contributes nothing.
Eigen::MatrixXd fingertip_jacobian(const HandModel& model, const Eigen::VectorXd& q, const Pose& world_dummy,
                                   const Pose& offset);

/// Same geometry with every joint treated as independent (no folding).
Eigen::MatrixXd fingertip_jacobian_unfolded(const HandModel& model, const Eigen::VectorXd& q,
                                            const Pose& world_dummy, const Pose& offset);

}  // namespace dexforge
