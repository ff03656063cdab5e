#include "dexforge/kinematics.hpp"

#include <algorithm>
#include <string>

#include "dexforge/error.hpp"

namespace dexforge {

namespace {

void check_length(const HandModel& model, const Eigen::VectorXd& q) {
  if (q.size() != model.full_dof()) {
    throw Error(ErrorCode::kDimensionMismatch, "joint state has " + std::to_string(q.size()) +
                                                   " entries, model '" + model.name() + "' needs " +
                                                   std::to_string(model.full_dof()));
  }
}

FkResult evaluate(const HandModel& model, const Eigen::VectorXd& q, const Pose& world_dummy, const Pose& offset) {
  const Pose base = world_dummy * offset;
  FkResult out;
  out.link_poses.resize(model.links().size());
  out.joint_frames.resize(model.joints().size());
  // Links are stored parents-first, and each joint's child link follows its parent link.
  for (std::size_t l = 0; l < model.links().size(); ++l) {
    const Link& link = model.links()[l];
    if (link.parent_joint < 0) {
      out.link_poses[l] = base * link.attach;
      continue;
    }
    const auto j = static_cast<std::size_t>(link.parent_joint);
    const Joint& joint = model.joints()[j];
    if (static_cast<std::size_t>(joint.child_link) == l) {
      const Pose& parent = out.link_poses[static_cast<std::size_t>(joint.parent_link)];
      out.joint_frames[j] = parent * joint.origin *
                            Pose(Pose::axis_angle(joint.axis, q[static_cast<Eigen::Index>(j)]), Eigen::Vector3d::Zero());
    }
    out.link_poses[l] = out.joint_frames[j] * link.attach;
  }
  out.fingertips.resize(3, model.fingertip_count());
  for (int i = 0; i < model.fingertip_count(); ++i) {
    out.fingertips.col(i) = out.link_poses[static_cast<std::size_t>(model.fingertips()[static_cast<std::size_t>(i)])].translation();
  }
  return out;
}

Eigen::MatrixXd geometric_jacobian(const HandModel& model, const FkResult& fk) {
  const int m = model.fingertip_count();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * m, model.full_dof());
  for (int j = 0; j < model.full_dof(); ++j) {
    const Pose& frame = fk.joint_frames[static_cast<std::size_t>(j)];
    const Eigen::Vector3d axis = frame.rotation() * model.joint(j).axis;
    for (int i = 0; i < m; ++i) {
      if (!model.moves_fingertip(j, i)) continue;
      jac.block<3, 1>(3 * i, j) = axis.cross(fk.fingertips.col(i) - frame.translation());
    }
  }
  return jac;
}

}  // namespace

MimicResult apply_mimic(const HandModel& model, const Eigen::VectorXd& q) {
  check_length(model, q);
  MimicResult r{q, {}};
  for (int s : model.mimic_joints()) {
    const Joint& slave = model.joint(s);
    const double value = slave.mimic->multiplier * q[slave.mimic->master] + slave.mimic->offset;
    const double clamped = std::clamp(value, slave.lower, slave.upper);
    if (clamped != value) r.clamped.push_back(s);
    r.q[s] = clamped;
  }
  return r;
}

bool within_limits(const HandModel& model, const Eigen::VectorXd& q) {
  for (int j = 0; j < model.full_dof(); ++j) {
    if (!(q[j] >= model.joint(j).lower - kLimitSlack && q[j] <= model.joint(j).upper + kLimitSlack)) return false;
  }
  return true;
}

FkResult forward_kinematics(const HandModel& model, const Eigen::VectorXd& q, const Pose& world_dummy,
                            const Pose& offset) {
  check_length(model, q);
  MimicResult mimic = apply_mimic(model, q);
  FkResult out = evaluate(model, mimic.q, world_dummy, offset);
  out.limit_warning = !within_limits(model, mimic.q);
  return out;
}

FkResult forward_kinematics_unconstrained(const HandModel& model, const Eigen::VectorXd& q,
                                          const Pose& world_dummy, const Pose& offset) {
  check_length(model, q);
  FkResult out = evaluate(model, q, world_dummy, offset);
  out.limit_warning = !within_limits(model, q);
  return out;
}

Eigen::MatrixXd fingertip_jacobian(const HandModel& model, const Eigen::VectorXd& q, const Pose& world_dummy,
                                   const Pose& offset) {
  check_length(model, q);
  MimicResult mimic = apply_mimic(model, q);
  Eigen::MatrixXd jac = geometric_jacobian(model, evaluate(model, mimic.q, world_dummy, offset));
  for (int s : model.mimic_joints()) {
    const MimicConstraint& c = *model.joint(s).mimic;
    const bool clamped = std::find(mimic.clamped.begin(), mimic.clamped.end(), s) != mimic.clamped.end();
    if (!clamped) jac.col(c.master) += c.multiplier * jac.col(s);
    jac.col(s).setZero();
  }
  return jac;
}

Eigen::MatrixXd fingertip_jacobian_unfolded(const HandModel& model, const Eigen::VectorXd& q,
                                            const Pose& world_dummy, const Pose& offset) {
  check_length(model, q);
  return geometric_jacobian(model, evaluate(model, q, world_dummy, offset));
}

}  // namespace dexforge
