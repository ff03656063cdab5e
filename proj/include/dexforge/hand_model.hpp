#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dexforge/pose.hpp"

namespace dexforge {

enum class Side { kLeft, kRight };

const char* side_name(Side side);
Side parse_side(std::string_view text);

inline constexpr int kFaasSlotsPerHand = 32;
inline constexpr int kFingerBlockWidth = 5;
inline constexpr int kFingerBlockEnd = 25;  // slots [0, 25) belong to the five finger blocks

enum class PrimitiveType { kSphere, kBox, kCapsule };

/// Visual stand-in for a link mesh. Capsules are aligned with the local z axis.
struct VisualPrimitive {
  PrimitiveType type = PrimitiveType::kSphere;
  double radius = 0.0;                              // sphere, capsule
  Eigen::Vector3d size = Eigen::Vector3d::Zero();   // box full extents
  double length = 0.0;                              // capsule cylinder length
  Pose origin;                                      // relative to the link frame
};

struct Link {
  std::string name;
  /// Revolute joint whose moving frame this link hangs off; -1 for the root frame.
  int parent_joint = -1;
  /// Rigid transform from that frame to this link (fixed joints are folded in here).
  Pose attach;
  std::optional<VisualPrimitive> visual;
  std::array<std::uint8_t, 3> color{200, 200, 200};
};

struct MimicConstraint {
  int master = -1;
  double multiplier = 1.0;
  double offset = 0.0;
};

/// Revolute joint. `origin` is the fixed transform from the parent link frame.
struct Joint {
  std::string name;
  int parent_link = -1;
  int child_link = -1;
  Pose origin;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  double lower = 0.0;
  double upper = 0.0;
  std::optional<MimicConstraint> mimic;
  int faas_slot = -1;

  double mid() const { return 0.5 * (lower + upper); }
};

/// Immutable kinematic description of one dexterous hand.
class HandModel {
 public:
  HandModel(std::string name, Side side, std::vector<Link> links, std::vector<Joint> joints,
            std::vector<int> fingertips);

  const std::string& name() const { return name_; }
  Side side() const { return side_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const Joint& joint(int j) const { return joints_[static_cast<std::size_t>(j)]; }
  /// Link indices of the fingertip frames, thumb→little.
  const std::vector<int>& fingertips() const { return fingertips_; }
  int fingertip_count() const { return static_cast<int>(fingertips_.size()); }

  int full_dof() const { return static_cast<int>(joints_.size()); }
  int active_dof() const { return static_cast<int>(active_joints_.size()); }
  const std::vector<int>& active_joints() const { return active_joints_; }
  const std::vector<int>& mimic_joints() const { return mimic_joints_; }
  bool is_mimic(int j) const { return joint(j).mimic.has_value(); }

  /// Joints on the chain from the base to fingertip `i`, base first.
  const std::vector<int>& chain(int i) const { return chains_[static_cast<std::size_t>(i)]; }
  /// Column `i` is true when joint `j` moves fingertip `i`.
  bool moves_fingertip(int j, int i) const;

  std::optional<int> find_link(std::string_view name) const;
  std::optional<int> find_joint(std::string_view name) const;

  Eigen::VectorXd lower_limits() const;
  Eigen::VectorXd upper_limits() const;
  /// Mid-range of every joint's limits, then mimic joints recomputed.
  Eigen::VectorXd rest_pose() const;

 private:
  std::string name_;
  Side side_;
  std::vector<Link> links_;
  std::vector<Joint> joints_;
  std::vector<int> fingertips_;
  std::vector<int> active_joints_;
  std::vector<int> mimic_joints_;
  std::vector<std::vector<int>> chains_;
  std::vector<std::vector<bool>> moves_;  // [joint][fingertip]
};

/// Parses a `.hand.json` document. Throws Error{kParse} or Error{kValidation}.
HandModel parse_hand_model(std::string_view text);
HandModel load_hand_model(const std::string& path);
std::string serialize_hand_model(const HandModel& model);

/// Field-by-field comparison; poses compared within `pose_tol`.
bool models_equal(const HandModel& a, const HandModel& b, double pose_tol = 1e-12);

struct HandSummary {
  std::string name;
  Side side = Side::kRight;
  int active_dof = 0;
  int full_dof = 0;
  int mimic_count = 0;
  std::vector<int> joints_per_finger;
  std::uint32_t slot_occupancy = 0;  // bit s set when FAAS slot s is mapped
};

HandSummary hand_summary(const HandModel& model);
std::string hand_summary_json(const HandSummary& summary);

}  // namespace dexforge
