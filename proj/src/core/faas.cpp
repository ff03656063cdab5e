#include "dexforge/faas.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "json.hpp"

#include "dexforge/error.hpp"
#include "dexforge/kinematics.hpp"

namespace dexforge {

namespace {

constexpr double kRotationTol = 1e-6;
constexpr double kDegenerateTol = 1e-9;

Eigen::VectorXd full_state(const HandModel& model, const Eigen::VectorXd& q) {
  if (q.size() == model.full_dof()) return q;
  if (q.size() == model.active_dof()) {
    Eigen::VectorXd full = model.rest_pose();
    for (int a = 0; a < model.active_dof(); ++a) full[model.active_joints()[static_cast<std::size_t>(a)]] = q[a];
    return apply_mimic(model, full).q;
  }
  throw Error(ErrorCode::kDimensionMismatch, "joint state has " + std::to_string(q.size()) + " entries, model '" +
                                                 model.name() + "' needs " + std::to_string(model.full_dof()) +
                                                 " (or " + std::to_string(model.active_dof()) + " active)");
}

void put_wrist(FaasVector& v, Side side, const Pose& wrist) {
  const Rotation6d r6 = encode_rotation_6d(wrist.rotation());
  const int base = faas_wrist_base(side);
  for (int i = 0; i < 6; ++i) v.values[static_cast<std::size_t>(base + i)] = r6[i];
  for (int i = 0; i < 3; ++i) v.values[static_cast<std::size_t>(base + 6 + i)] = wrist.translation()[i];
  for (int i = 0; i < kWristDim; ++i) v.mask.set(static_cast<std::size_t>(base + i));
}

void merge_sorted(std::vector<int>& into, const std::vector<int>& more) {
  into.insert(into.end(), more.begin(), more.end());
  std::sort(into.begin(), into.end());
  into.erase(std::unique(into.begin(), into.end()), into.end());
}

}  // namespace

Rotation6d encode_rotation_6d(const Eigen::Matrix3d& rotation) {
  if (!rotation.allFinite() || !is_rotation(rotation, kRotationTol)) {
    throw Error(ErrorCode::kInvalidRotation, "matrix is not a rotation within 1e-6");
  }
  Rotation6d v;
  v << rotation.col(0), rotation.col(1);
  return v;
}

Eigen::Matrix3d decode_rotation_6d(const Rotation6d& v) {
  const Eigen::Vector3d a = v.head<3>();
  const Eigen::Vector3d b = v.tail<3>();
  if (!v.allFinite() || a.norm() <= kDegenerateTol) {
    throw Error(ErrorCode::kDegenerateInput, "6d rotation: first axis is degenerate");
  }
  const Eigen::Vector3d x = a.normalized();
  const Eigen::Vector3d rejected = b - b.dot(x) * x;
  if (rejected.norm() <= kDegenerateTol * std::max(1.0, b.norm())) {
    throw Error(ErrorCode::kDegenerateInput, "6d rotation: second axis is parallel to the first");
  }
  const Eigen::Vector3d y = rejected.normalized();
  Eigen::Matrix3d r;
  r << x, y, x.cross(y);
  return r;
}

FaasVector encode_state(const HandModel& model, Side side, const Pose& wrist, const Eigen::VectorXd& q) {
  const Eigen::VectorXd full = full_state(model, q);
  FaasVector v;
  put_wrist(v, side, wrist);
  const int base = faas_joint_base(side);
  for (int j = 0; j < model.full_dof(); ++j) {
    const auto index = static_cast<std::size_t>(base + model.joint(j).faas_slot);
    v.values[index] = full[j];
    v.mask.set(index);
  }
  return v;
}

DecodedState decode_state(const FaasVector& v, const HandModel& model, Side side) {
  DecodedState out;
  const int wbase = faas_wrist_base(side);
  out.wrist_present = v.mask.test(static_cast<std::size_t>(wbase));
  if (out.wrist_present) {
    Rotation6d r6;
    Eigen::Vector3d t;
    for (int i = 0; i < 6; ++i) r6[i] = v.values[static_cast<std::size_t>(wbase + i)];
    for (int i = 0; i < 3; ++i) t[i] = v.values[static_cast<std::size_t>(wbase + 6 + i)];
    out.wrist = Pose(decode_rotation_6d(r6), t);
  }

  const Eigen::VectorXd rest = model.rest_pose();
  const int base = faas_joint_base(side);
  out.q = rest;
  for (int j = 0; j < model.full_dof(); ++j) {
    const Joint& joint = model.joint(j);
    const auto index = static_cast<std::size_t>(base + joint.faas_slot);
    if (!v.mask.test(index)) {
      out.defaulted.push_back(j);
      continue;
    }
    const double value = v.values[index];
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kInvalidArgument, "FAAS slot " + std::to_string(joint.faas_slot) + " is not finite");
    }
    out.q[j] = std::clamp(value, joint.lower, joint.upper);
    if (out.q[j] != value && !joint.mimic) out.clamped.push_back(j);
  }
  MimicResult mimic = apply_mimic(model, out.q);
  out.q = std::move(mimic.q);
  merge_sorted(out.clamped, mimic.clamped);
  return out;
}

ActionChunk encode_chunk(const std::vector<Pose>& wrists, const std::vector<Eigen::VectorXd>& joint_states,
                         const HandModel& model, Side side) {
  if (wrists.empty()) throw Error(ErrorCode::kDimensionMismatch, "action chunk needs at least one step");
  if (wrists.size() != joint_states.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "chunk has " + std::to_string(wrists.size()) + " wrists but " +
                                                   std::to_string(joint_states.size()) + " joint states");
  }
  const Pose first_inv = wrists.front().inverse();
  ActionChunk chunk;
  chunk.actions.reserve(wrists.size());
  for (std::size_t t = 0; t < wrists.size(); ++t) {
    const Pose delta = t == 0 ? Pose() : first_inv * wrists[t];
    chunk.actions.push_back(encode_state(model, side, delta, joint_states[t]));
  }
  return chunk;
}

DecodedChunk decode_chunk(const ActionChunk& chunk, const Pose& base, const HandModel& model, Side side) {
  if (chunk.actions.empty()) throw Error(ErrorCode::kDimensionMismatch, "empty action chunk");
  DecodedChunk out;
  for (const FaasVector& step : chunk.actions) {
    if (step.mask != chunk.actions.front().mask) {
      throw Error(ErrorCode::kDimensionMismatch, "chunk steps carry different masks");
    }
    DecodedState s = decode_state(step, model, side);
    out.wrists.push_back(s.wrist_present ? base * s.wrist : base);
    out.joint_states.push_back(std::move(s.q));
    out.defaulted = std::move(s.defaulted);
    merge_sorted(out.clamped, s.clamped);
  }
  return out;
}

std::vector<int> shared_slots(const HandModel& a, const HandModel& b) {
  std::vector<int> slots;
  for (const Joint& ja : a.joints()) {
    for (const Joint& jb : b.joints()) {
      if (ja.faas_slot == jb.faas_slot) slots.push_back(ja.faas_slot);
    }
  }
  std::sort(slots.begin(), slots.end());
  return slots;
}

std::vector<std::uint8_t> faas_to_bytes(const FaasVector& v) {
  static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");
  std::vector<std::uint8_t> out(kFaasWireBytes, 0);
  for (int i = 0; i < kFaasDim; ++i) {
    const auto f = static_cast<float>(v.values[static_cast<std::size_t>(i)]);
    std::memcpy(out.data() + 4 * i, &f, 4);
  }
  for (int i = 0; i < kFaasDim; ++i) {
    if (v.mask.test(static_cast<std::size_t>(i))) out[static_cast<std::size_t>(4 * kFaasDim + i / 8)] |= 1u << (i % 8);
  }
  return out;
}

FaasVector faas_from_bytes(const std::uint8_t* data, std::size_t size) {
  if (size != static_cast<std::size_t>(kFaasWireBytes)) {
    throw Error(ErrorCode::kParse, "FAAS record is " + std::to_string(size) + " bytes, expected " +
                                       std::to_string(kFaasWireBytes));
  }
  FaasVector v;
  for (int i = 0; i < kFaasDim; ++i) {
    float f;
    std::memcpy(&f, data + 4 * i, 4);
    v.values[static_cast<std::size_t>(i)] = f;
    if (data[4 * kFaasDim + i / 8] & (1u << (i % 8))) v.mask.set(static_cast<std::size_t>(i));
  }
  if (data[kFaasWireBytes - 1] >> (kFaasDim % 8)) throw Error(ErrorCode::kParse, "FAAS mask has bits past 82");
  for (int i = 0; i < kFaasDim; ++i) {
    if (!v.mask.test(static_cast<std::size_t>(i)) && v.values[static_cast<std::size_t>(i)] != 0.0) {
      throw Error(ErrorCode::kParse, "FAAS entry " + std::to_string(i) + " is unpopulated but nonzero");
    }
  }
  return v;
}

std::string faas_to_json(const FaasVector& v) {
  nlohmann::json values = nlohmann::json::array();
  nlohmann::json mask = nlohmann::json::array();
  for (int i = 0; i < kFaasDim; ++i) {
    values.push_back(v.values[static_cast<std::size_t>(i)]);
    mask.push_back(v.mask.test(static_cast<std::size_t>(i)) ? 1 : 0);
  }
  return nlohmann::json{{"values", values}, {"mask", mask}}.dump();
}

FaasVector faas_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("FAAS json: ") + e.what());
  }
  if (!j.is_object() || !j.contains("values") || !j["values"].is_array() || j["values"].size() != kFaasDim ||
      !j.contains("mask") || !j["mask"].is_array() || j["mask"].size() != kFaasDim) {
    throw Error(ErrorCode::kParse, "FAAS json needs 82 values and 82 mask entries");
  }
  FaasVector v;
  for (std::size_t i = 0; i < kFaasDim; ++i) {
    if (!j["values"][i].is_number() || !j["mask"][i].is_number_integer()) {
      throw Error(ErrorCode::kParse, "FAAS json entry " + std::to_string(i) + " is not numeric");
    }
    v.values[i] = j["values"][i].get<double>();
    if (j["mask"][i].get<int>() != 0) v.mask.set(i);
    else if (v.values[i] != 0.0) throw Error(ErrorCode::kParse, "FAAS entry " + std::to_string(i) + " is unpopulated but nonzero");
  }
  return v;
}

}  // namespace dexforge
