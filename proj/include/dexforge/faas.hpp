#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dexforge/hand_model.hpp"
#include "dexforge/pose.hpp"

namespace dexforge {

inline constexpr int kFaasDim = 82;
inline constexpr int kWristDim = 9;
inline constexpr int kFaasMaskBytes = (kFaasDim + 7) / 8;
inline constexpr int kFaasWireBytes = 4 * kFaasDim + kFaasMaskBytes;

/// First index of a side's wrist block: (x-axis, y-axis, translation).
constexpr int faas_wrist_base(Side side) { return side == Side::kLeft ? 0 : kWristDim; }
/// First index of a side's 32 joint slots.
constexpr int faas_joint_base(Side side) {
  return side == Side::kLeft ? 2 * kWristDim : 2 * kWristDim + kFaasSlotsPerHand;
}

using FaasMask = std::bitset<kFaasDim>;
using Rotation6d = Eigen::Matrix<double, 6, 1>;

/// Unpopulated entries hold 0 with their mask bit cleared.
struct FaasVector {
  std::array<double, kFaasDim> values{};
  FaasMask mask;

  bool operator==(const FaasVector& other) const = default;
};

/// (R·e1, R·e2). Throws Error{kInvalidRotation} when R is off SO(3) by more than 1e-6.
Rotation6d encode_rotation_6d(const Eigen::Matrix3d& rotation);

/// Gram-Schmidt on the two 3-vectors. Throws Error{kDegenerateInput} when the first is near zero
/// or the second is parallel to it.
Eigen::Matrix3d decode_rotation_6d(const Rotation6d& v);

/// Absolute wrist and joint slots for one hand. `q` may hold full_dof entries or active_dof
/// entries (mimic joints then follow their masters). Throws Error{kDimensionMismatch}.
FaasVector encode_state(const HandModel& model, Side side, const Pose& wrist, const Eigen::VectorXd& q);

struct DecodedState {
  Pose wrist;
  bool wrist_present = false;
  Eigen::VectorXd q;
  std::vector<int> defaulted;  // joints whose slot was not populated; they take the rest pose
  std::vector<int> clamped;    // joints moved onto their limits
};

/// Slot values populated in `v` map onto `model`'s joints by slot index. Mimic joints are
/// recomputed from their masters.
DecodedState decode_state(const FaasVector& v, const HandModel& model, Side side);

struct ActionChunk {
  std::vector<FaasVector> actions;
  int horizon() const { return static_cast<int>(actions.size()); }
};

/// Step t carries wrist_0⁻¹ · wrist_t and absolute joint commands.
/// Throws Error{kDimensionMismatch} (length mismatch or H = 0).
ActionChunk encode_chunk(const std::vector<Pose>& wrists, const std::vector<Eigen::VectorXd>& joint_states,
                         const HandModel& model, Side side);

struct DecodedChunk {
  std::vector<Pose> wrists;
  std::vector<Eigen::VectorXd> joint_states;
  std::vector<int> defaulted;
  std::vector<int> clamped;  // union over steps
};

/// wrist_t = base · Δ_t. Throws Error{kDimensionMismatch} on an empty chunk or mixed masks.
DecodedChunk decode_chunk(const ActionChunk& chunk, const Pose& base, const HandModel& model, Side side);

/// FAAS slots mapped by both models, ascending.
std::vector<int> shared_slots(const HandModel& a, const HandModel& b);

/// 82 little-endian float32 values followed by the mask, LSB-first.
std::vector<std::uint8_t> faas_to_bytes(const FaasVector& v);
/// Throws Error{kParse} on a wrong length, or when a masked-out entry is nonzero.
FaasVector faas_from_bytes(const std::uint8_t* data, std::size_t size);

/// {"values": [...82], "mask": [...82 of 0/1]}
std::string faas_to_json(const FaasVector& v);
FaasVector faas_from_json(const std::string& text);

}  // namespace dexforge
