#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dexforge/hand_model.hpp"
#include "dexforge/kinematics.hpp"
#include "dexforge/pose.hpp"

namespace dexforge {

/// Fingertip targets X* (world frame) and the human hand pose used as the dummy-base pose.
struct RetargetTarget {
  FingertipSet fingertips;
  Pose hand_pose;
};

/// How the primary solve treats mimic joints.
enum class MimicMode {
  kFolded,       // mimic columns folded into masters; Eq. k·q_m + c held every step
  kIndependent,  // every joint free; mimic restored afterwards by mimic_correction_loop
};

struct IkConfig {
  int max_iters = 200;
  double damping = 1e-3;
  double tol = 1e-3;  // fingertip RMS, meters
  double step_scale = 1.0;
  int mimic_iters = 5;
  /// Per-joint pull toward the rest pose (full_dof entries), empty to disable.
  Eigen::VectorXd joint_weight;
  MimicMode mimic_mode = MimicMode::kFolded;

  /// Throws Error{kInvalidArgument}.
  void validate() const;

  static IkConfig interactive() {
    IkConfig cfg;
    cfg.max_iters = 50;
    return cfg;
  }
};

struct RetargetResult {
  Eigen::VectorXd q;
  Eigen::VectorXd residual;  // per-fingertip error norm, meters
  double rms = 0.0;          // sqrt(mean_i ‖x_i − x_i*‖²)
  bool converged = false;
  int iters_used = 0;        // damped least-squares steps taken
  int mimic_passes = 0;      // correction-loop passes (0 when the loop did not run)
  std::vector<int> clamped_joints;
};

/// Per-dataset, per-hand dummy-base offset. `offset_xyz_rpy` is the stored form.
struct CalibrationProfile {
  std::string dataset_id;
  std::string hand_id;
  Eigen::Matrix<double, 6, 1> offset_xyz_rpy = Eigen::Matrix<double, 6, 1>::Zero();
  std::string notes;

  Pose offset() const;
  static CalibrationProfile identity(std::string dataset_id = "default", std::string hand_id = "");
};

std::string profile_to_json(const CalibrationProfile& profile);
CalibrationProfile profile_from_json(const std::string& text);
CalibrationProfile load_profile(const std::string& path);
void save_profile(const CalibrationProfile& profile, const std::string& path);

/// Fingertip residual of a joint state (mimic recomputed), as solve_ik reports it.
RetargetResult evaluate_residual(const HandModel& model, const RetargetTarget& target, const Pose& offset,
                                 const Eigen::VectorXd& q, double tol);

/// Damped least-squares fingertip IK with projected limit clamping and best-iterate tracking.
/// Unreachable targets come back with converged = false. Throws Error{kDimensionMismatch},
/// Error{kSingularUpdate} on a non-finite step.
RetargetResult solve_ik(const HandModel& model, const RetargetTarget& target, const Pose& offset,
                        const Eigen::VectorXd& q_init, const IkConfig& cfg);

/// Alternates exact mimic restoration with short re-solves, up to cfg.mimic_iters passes or until
/// the RMS change drops below tol/10.
RetargetResult mimic_correction_loop(const HandModel& model, const Eigen::VectorXd& q, const RetargetTarget& target,
                                     const Pose& offset, const IkConfig& cfg);

/// Projects onto the limits, then applies the mimic constraints once; no re-solve.
RetargetResult naive_mimic_projection(const HandModel& model, const Eigen::VectorXd& q, const RetargetTarget& target,
                                      const Pose& offset, double tol);

/// Warm-started (or mid-range) solve. In independent mode the mimic correction loop follows.
RetargetResult retarget_frame(const HandModel& model, const RetargetTarget& target, const CalibrationProfile& profile,
                              const std::optional<Eigen::VectorXd>& q_prev, const IkConfig& cfg);

struct TrajectoryRetarget {
  std::vector<RetargetResult> frames;
  std::vector<int> flagged;  // frames with converged = false
  double convergence_rate = 0.0;
};

/// Frame t warm-starts from frame t−1. Throws Error{kInvalidArgument} on an empty list.
TrajectoryRetarget retarget_trajectory(const HandModel& model, const std::vector<RetargetTarget>& targets,
                                       const CalibrationProfile& profile, const IkConfig& cfg);

/// P_out = extrinsic · P_in for every pose (capture-rig frame → camera frame).
std::vector<Pose> align_capture_frames(const std::vector<Pose>& poses, const Pose& extrinsic);

}  // namespace dexforge
