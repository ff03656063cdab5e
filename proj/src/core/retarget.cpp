#include "dexforge/retarget.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "dexforge/error.hpp"
#include "dexforge/json_util.hpp"

namespace dexforge {

using nlohmann::json;

namespace {

constexpr int kBacktracks = 3;
constexpr int kMaxDampingLevels = 12;
constexpr double kMinEscalatedDamping = 1e-6;

struct Bounds {
  Eigen::VectorXd lower, upper;
};

Bounds joint_bounds(const HandModel& model) { return {model.lower_limits(), model.upper_limits()}; }

// Joint limits with each master narrowed so that every slave following it stays inside its own
// limits unclamped, which keeps q_s = k·q_m + c exact.
Bounds exact_mimic_bounds(const HandModel& model) {
  Bounds b = joint_bounds(model);
  for (int s : model.mimic_joints()) {
    const Joint& slave = model.joint(s);
    const MimicConstraint& c = *slave.mimic;
    if (c.multiplier == 0.0) continue;
    double lo = (slave.lower - c.offset) / c.multiplier;
    double hi = (slave.upper - c.offset) / c.multiplier;
    if (lo > hi) std::swap(lo, hi);
    const double margin = 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
    b.lower[c.master] = std::max(b.lower[c.master], lo + margin);
    b.upper[c.master] = std::min(b.upper[c.master], hi - margin);
  }
  for (int j = 0; j < model.full_dof(); ++j) {
    if (b.lower[j] > b.upper[j]) b.lower[j] = b.upper[j] = 0.5 * (b.lower[j] + b.upper[j]);
  }
  return b;
}

struct Projected {
  Eigen::VectorXd q;
  std::vector<int> clamped;
};

Projected project(const HandModel& model, const Eigen::VectorXd& q, const Bounds& b, MimicMode mode) {
  Projected p{q, {}};
  for (int j = 0; j < model.full_dof(); ++j) {
    if (mode == MimicMode::kFolded && model.is_mimic(j)) continue;
    const double c = std::clamp(q[j], b.lower[j], b.upper[j]);
    if (c != q[j]) p.clamped.push_back(j);
    p.q[j] = c;
  }
  if (mode == MimicMode::kFolded) {
    MimicResult m = apply_mimic(model, p.q);
    p.q = std::move(m.q);
    p.clamped.insert(p.clamped.end(), m.clamped.begin(), m.clamped.end());
  }
  return p;
}

double rms_of(const Eigen::VectorXd& stacked, int m) { return std::sqrt(stacked.squaredNorm() / m); }

Eigen::VectorXd stacked_error(const FingertipSet& target, const FingertipSet& actual) {
  FingertipSet diff = target - actual;
  return Eigen::Map<const Eigen::VectorXd>(diff.data(), diff.size());
}

FkResult fk_for(const HandModel& model, const Eigen::VectorXd& q, const Pose& world, const Pose& offset,
                MimicMode mode) {
  return mode == MimicMode::kFolded ? forward_kinematics(model, q, world, offset)
                                    : forward_kinematics_unconstrained(model, q, world, offset);
}

void check_dimensions(const HandModel& model, const RetargetTarget& target, const Eigen::VectorXd& q) {
  if (target.fingertips.cols() != model.fingertip_count()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "target has " + std::to_string(target.fingertips.cols()) + " fingertips, model '" + model.name() +
                    "' has " + std::to_string(model.fingertip_count()));
  }
  if (q.size() != model.full_dof()) {
    throw Error(ErrorCode::kDimensionMismatch, "initial joint state has " + std::to_string(q.size()) +
                                                   " entries, model needs " + std::to_string(model.full_dof()));
  }
  if (!target.fingertips.allFinite() || !target.hand_pose.translation().allFinite() ||
      !target.hand_pose.rotation().allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "target contains non-finite coordinates");
  }
}

RetargetResult make_result(const HandModel& model, const Eigen::VectorXd& q, const FkResult& fk,
                           const FingertipSet& target, double tol) {
  RetargetResult r;
  r.q = q;
  const FingertipSet diff = fk.fingertips - target;
  r.residual = diff.colwise().norm().transpose();
  r.rms = std::sqrt(diff.squaredNorm() / model.fingertip_count());
  r.converged = r.rms <= tol;
  return r;
}

}  // namespace

void IkConfig::validate() const {
  if (max_iters < 1) throw Error(ErrorCode::kInvalidArgument, "IkConfig.max_iters must be ≥ 1");
  if (!(damping >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "IkConfig.damping must be ≥ 0");
  if (!(tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "IkConfig.tol must be > 0");
  if (!(step_scale > 0.0 && step_scale <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "IkConfig.step_scale must be in (0, 1]");
  }
  if (mimic_iters < 1) throw Error(ErrorCode::kInvalidArgument, "IkConfig.mimic_iters must be ≥ 1");
  if (joint_weight.size() > 0 && (joint_weight.array() < 0.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "IkConfig.joint_weight entries must be ≥ 0");
  }
}

Pose CalibrationProfile::offset() const {
  return Pose::from_xyz_rpy(offset_xyz_rpy.head<3>(), offset_xyz_rpy.tail<3>());
}

CalibrationProfile CalibrationProfile::identity(std::string dataset_id, std::string hand_id) {
  CalibrationProfile p;
  p.dataset_id = std::move(dataset_id);
  p.hand_id = std::move(hand_id);
  return p;
}

std::string profile_to_json(const CalibrationProfile& p) {
  const auto& o = p.offset_xyz_rpy;
  json j{{"dataset_id", p.dataset_id},
         {"hand_id", p.hand_id},
         {"offset", {{"xyz", {o[0], o[1], o[2]}}, {"rpy", {o[3], o[4], o[5]}}}},
         {"notes", p.notes}};
  return j.dump(2) + "\n";
}

CalibrationProfile profile_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("profile: syntax error: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kParse, "profile: expected a JSON object");
  CalibrationProfile p;
  auto str = [&](const char* key) -> std::string {
    if (!j.contains(key)) return {};
    if (!j[key].is_string()) throw Error(ErrorCode::kParse, std::string("profile.") + key + ": expected a string");
    return j[key].get<std::string>();
  };
  p.dataset_id = str("dataset_id");
  p.hand_id = str("hand_id");
  p.notes = str("notes");
  if (!j.contains("offset")) throw Error(ErrorCode::kParse, "profile: missing key 'offset'");
  const json& o = j["offset"];
  if (!o.is_object()) throw Error(ErrorCode::kParse, "profile.offset: expected {xyz, rpy}");
  if (o.contains("xyz")) p.offset_xyz_rpy.head<3>() = vec3_from_json(o["xyz"], "profile.offset.xyz");
  if (o.contains("rpy")) p.offset_xyz_rpy.tail<3>() = vec3_from_json(o["rpy"], "profile.offset.rpy");
  if (!p.offset_xyz_rpy.allFinite()) throw Error(ErrorCode::kValidation, "profile.offset: non-finite value");
  return p;
}

CalibrationProfile load_profile(const std::string& path) { return profile_from_json(read_text_file(path)); }

void save_profile(const CalibrationProfile& profile, const std::string& path) {
  write_text_file(path, profile_to_json(profile));
}

RetargetResult evaluate_residual(const HandModel& model, const RetargetTarget& target, const Pose& offset,
                                 const Eigen::VectorXd& q, double tol) {
  check_dimensions(model, target, q);
  return make_result(model, q, forward_kinematics(model, q, target.hand_pose, offset), target.fingertips, tol);
}

static RetargetResult solve_bounded(const HandModel& model, const RetargetTarget& target, const Pose& offset,
                             const Eigen::VectorXd& q_init, const IkConfig& cfg, const Bounds& bounds) {
  cfg.validate();
  check_dimensions(model, target, q_init);
  if (!offset.translation().allFinite() || !offset.rotation().allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "dummy-base offset contains non-finite values");
  }
  if (cfg.joint_weight.size() != 0 && cfg.joint_weight.size() != model.full_dof()) {
    throw Error(ErrorCode::kDimensionMismatch, "IkConfig.joint_weight must have full_dof entries");
  }
  const MimicMode mode = cfg.mimic_mode;
  const int m = model.fingertip_count();

  std::vector<int> free_joints;
  for (int j = 0; j < model.full_dof(); ++j) {
    if (mode == MimicMode::kIndependent || !model.is_mimic(j)) free_joints.push_back(j);
  }
  const auto n = static_cast<Eigen::Index>(free_joints.size());
  const Eigen::VectorXd rest = model.rest_pose();

  Projected start = project(model, q_init, bounds, mode);
  Eigen::VectorXd q = start.q;
  std::vector<int> clamped = start.clamped;
  FkResult fk = fk_for(model, q, target.hand_pose, offset, mode);
  Eigen::VectorXd err = stacked_error(target.fingertips, fk.fingertips);
  double rms = rms_of(err, m);

  int iters = 0;
  while (rms > cfg.tol && iters < cfg.max_iters) {
    ++iters;
    const Eigen::MatrixXd full_jac = mode == MimicMode::kFolded
                                         ? fingertip_jacobian(model, q, target.hand_pose, offset)
                                         : fingertip_jacobian_unfolded(model, q, target.hand_pose, offset);
    Eigen::MatrixXd jac(3 * m, n);
    for (Eigen::Index c = 0; c < n; ++c) jac.col(c) = full_jac.col(free_joints[static_cast<std::size_t>(c)]);

    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    Eigen::VectorXd rhs = jac.transpose() * err;
    Eigen::VectorXd prior = Eigen::VectorXd::Zero(n);
    if (cfg.joint_weight.size() != 0) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const int j = free_joints[static_cast<std::size_t>(c)];
        prior[c] = cfg.joint_weight[j];
        rhs[c] -= cfg.joint_weight[j] * (q[j] - rest[j]);
      }
    }

    // The configured damping is used for every step that improves the fit. A rejected step is
    // retried on a shortened step, then with damping raised tenfold (toward a gradient step).
    bool improved = false;
    double damping = cfg.damping;
    for (int level = 0; level <= kMaxDampingLevels && !improved; ++level) {
      if (level > 0) damping = std::max(damping, kMinEscalatedDamping) * 10.0;
      Eigen::MatrixXd normal = jtj;
      normal.diagonal() += prior;
      normal.diagonal().array() += damping;
      const Eigen::LLT<Eigen::MatrixXd> llt(normal);
      const Eigen::VectorXd step = llt.solve(rhs);
      if (llt.info() != Eigen::Success || !step.allFinite()) {
        throw Error(ErrorCode::kSingularUpdate, "singular or non-finite damped least-squares step at iteration " +
                                                    std::to_string(iters) +
                                                    " (damping too small or degenerate Jacobian)");
      }
      double scale = cfg.step_scale;
      for (int k = 0; k < kBacktracks; ++k, scale *= 0.5) {
        Eigen::VectorXd trial = q;
        for (Eigen::Index c = 0; c < n; ++c) trial[free_joints[static_cast<std::size_t>(c)]] += scale * step[c];
        Projected p = project(model, trial, bounds, mode);
        FkResult trial_fk = fk_for(model, p.q, target.hand_pose, offset, mode);
        Eigen::VectorXd trial_err = stacked_error(target.fingertips, trial_fk.fingertips);
        const double trial_rms = rms_of(trial_err, m);
        if (trial_rms < rms) {
          q = std::move(p.q);
          clamped = std::move(p.clamped);
          fk = std::move(trial_fk);
          err = std::move(trial_err);
          rms = trial_rms;
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;  // stationary under the projected step: local optimum or limit corner
  }

  RetargetResult r = make_result(model, q, fk, target.fingertips, cfg.tol);
  r.iters_used = iters;
  std::sort(clamped.begin(), clamped.end());
  clamped.erase(std::unique(clamped.begin(), clamped.end()), clamped.end());
  r.clamped_joints = std::move(clamped);
  return r;
}

RetargetResult solve_ik(const HandModel& model, const RetargetTarget& target, const Pose& offset,
                        const Eigen::VectorXd& q_init, const IkConfig& cfg) {
  return solve_bounded(model, target, offset, q_init, cfg, joint_bounds(model));
}

RetargetResult naive_mimic_projection(const HandModel& model, const Eigen::VectorXd& q, const RetargetTarget& target,
                                      const Pose& offset, double tol) {
  check_dimensions(model, target, q);
  Projected p = project(model, q, exact_mimic_bounds(model), MimicMode::kFolded);
  RetargetResult r = evaluate_residual(model, target, offset, p.q, tol);
  r.clamped_joints = p.clamped;
  return r;
}

RetargetResult mimic_correction_loop(const HandModel& model, const Eigen::VectorXd& q, const RetargetTarget& target,
                                     const Pose& offset, const IkConfig& cfg) {
  cfg.validate();
  check_dimensions(model, target, q);
  if (model.mimic_joints().empty()) {
    RetargetResult r = make_result(model, q, forward_kinematics_unconstrained(model, q, target.hand_pose, offset),
                                   target.fingertips, cfg.tol);
    r.mimic_passes = 1;
    return r;
  }

  const Bounds bounds = exact_mimic_bounds(model);
  IkConfig inner = cfg;
  inner.mimic_mode = MimicMode::kFolded;
  inner.max_iters = std::max(1, cfg.max_iters / cfg.mimic_iters);

  double previous = rms_of(stacked_error(target.fingertips,
                                         forward_kinematics_unconstrained(model, q, target.hand_pose, offset).fingertips),
                           model.fingertip_count());
  Eigen::VectorXd current = q;
  RetargetResult r;
  int total_iters = 0;
  for (int pass = 1; pass <= cfg.mimic_iters; ++pass) {
    // Each pass starts by projecting onto the narrowed limits and restoring k·q_m + c exactly.
    r = solve_bounded(model, target, offset, current, inner, bounds);
    total_iters += r.iters_used;
    r.mimic_passes = pass;
    current = r.q;
    if (std::abs(previous - r.rms) < cfg.tol / 10.0) break;
    previous = r.rms;
  }
  r.iters_used = total_iters;
  return r;
}

RetargetResult retarget_frame(const HandModel& model, const RetargetTarget& target, const CalibrationProfile& profile,
                              const std::optional<Eigen::VectorXd>& q_prev, const IkConfig& cfg) {
  const Pose offset = profile.offset();
  const Eigen::VectorXd q_init = q_prev ? *q_prev : model.rest_pose();
  RetargetResult primary = solve_ik(model, target, offset, q_init, cfg);
  // A folded solve already holds every slave at apply_mimic of its master.
  if (cfg.mimic_mode == MimicMode::kFolded) return primary;
  RetargetResult corrected = mimic_correction_loop(model, primary.q, target, offset, cfg);
  corrected.iters_used += primary.iters_used;
  for (int j : primary.clamped_joints) {
    if (std::find(corrected.clamped_joints.begin(), corrected.clamped_joints.end(), j) ==
        corrected.clamped_joints.end()) {
      corrected.clamped_joints.push_back(j);
    }
  }
  std::sort(corrected.clamped_joints.begin(), corrected.clamped_joints.end());
  return corrected;
}

TrajectoryRetarget retarget_trajectory(const HandModel& model, const std::vector<RetargetTarget>& targets,
                                       const CalibrationProfile& profile, const IkConfig& cfg) {
  if (targets.empty()) throw Error(ErrorCode::kInvalidArgument, "retarget_trajectory: empty target list");
  TrajectoryRetarget out;
  out.frames.reserve(targets.size());
  std::optional<Eigen::VectorXd> previous;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    RetargetResult r = retarget_frame(model, targets[t], profile, previous, cfg);
    if (!r.converged) out.flagged.push_back(static_cast<int>(t));
    previous = r.q;
    out.frames.push_back(std::move(r));
  }
  out.convergence_rate =
      static_cast<double>(targets.size() - out.flagged.size()) / static_cast<double>(targets.size());
  return out;
}

std::vector<Pose> align_capture_frames(const std::vector<Pose>& poses, const Pose& extrinsic) {
  std::vector<Pose> out;
  out.reserve(poses.size());
  for (const Pose& p : poses) out.push_back(extrinsic * p);
  return out;
}

}  // namespace dexforge
