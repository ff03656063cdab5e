#include "dexforge/session.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

#include <openssl/evp.h>

#include "dexforge/error.hpp"
#include "dexforge/json_util.hpp"
#include "dexforge/kinematics.hpp"

namespace dexforge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

[[noreturn]] void parse_error(const std::string& context, const std::string& what) {
  throw Error(ErrorCode::kParse, context + ": " + what);
}

FingertipSet fingertips_from_json(const json& j, const std::string& context) {
  if (!j.is_array() || j.empty()) parse_error(context, "expected a non-empty array of [x, y, z]");
  FingertipSet out(3, static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = vec3_from_json(j[i], context + "[" + std::to_string(i) + "]");
  }
  return out;
}

json fingertips_to_json(const FingertipSet& f) {
  json out = json::array();
  for (Eigen::Index i = 0; i < f.cols(); ++i) out.push_back(vec3_to_json(f.col(i)));
  return out;
}

json offset_to_json(const Offset6& o) { return json{o[0], o[1], o[2], o[3], o[4], o[5]}; }

Offset6 offset_from_json(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 6) parse_error(context, "expected 6 numbers (tx, ty, tz, roll, pitch, yaw)");
  Offset6 o;
  for (int k = 0; k < 6; ++k) {
    if (!j[k].is_number()) parse_error(context, "expected 6 numbers (tx, ty, tz, roll, pitch, yaw)");
    o[k] = j[k].get<double>();
  }
  return o;
}

const char* call_name(SessionCall::Kind kind) {
  switch (kind) {
    case SessionCall::Kind::kSetOffset: return "set_offset";
    case SessionCall::Kind::kStepFrame: return "step_frame";
    case SessionCall::Kind::kSolveAll: return "solve_all";
    case SessionCall::Kind::kSaveProfile: return "save_profile";
  }
  return "";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
    case ErrorCode::kParse:
    case ErrorCode::kValidation:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kShapeMismatch: return 400;
    case ErrorCode::kIo:
    case ErrorCode::kInternal: return 500;
    default: return 422;
  }
}

ServiceResponse error_response(ErrorCode code, const std::string& message) {
  return {http_status(code), json{{"error", error_code_name(code)}, {"message", message}}.dump()};
}

ServiceResponse ok(const json& body, int status = 200) { return {status, body.dump()}; }

json summary_json(const TrajectoryRetarget& t) {
  json frames = json::array();
  for (const RetargetResult& r : t.frames) frames.push_back({{"rms", r.rms}, {"converged", r.converged}});
  return json{{"convergence_rate", t.convergence_rate}, {"flagged", t.flagged}, {"frames", frames}};
}

}  // namespace

Recording load_recording(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    parse_error(path, std::string("syntax error: ") + e.what());
  }
  Recording rec;
  if (!j.is_object()) parse_error(path, "expected a JSON object");
  if (j.contains("dataset_id")) {
    if (!j["dataset_id"].is_string()) parse_error(path + ": dataset_id", "expected a string");
    rec.dataset_id = j["dataset_id"].get<std::string>();
  }
  if (j.contains("fps")) {
    if (!j["fps"].is_number() || !(j["fps"].get<double>() > 0.0)) parse_error(path + ": fps", "expected a positive number");
    rec.fps = j["fps"].get<double>();
  }
  if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
    parse_error(path + ": frames", "expected a non-empty array");
  }
  const fs::path dir = fs::path(path).parent_path();
  bool any_cloud = false;
  std::vector<PointCloud> clouds;
  for (std::size_t t = 0; t < j["frames"].size(); ++t) {
    const json& f = j["frames"][t];
    const std::string ctx = path + ": frames[" + std::to_string(t) + "]";
    if (!f.is_object()) parse_error(ctx, "expected an object");
    if (!f.contains("fingertips")) parse_error(ctx + ".fingertips", "missing");
    RetargetTarget target;
    target.fingertips = fingertips_from_json(f["fingertips"], ctx + ".fingertips");
    target.hand_pose = f.contains("hand_pose") ? pose_from_json(f["hand_pose"], ctx + ".hand_pose") : Pose();
    if (!rec.targets.empty() && target.fingertips.cols() != rec.targets.front().fingertips.cols()) {
      parse_error(ctx + ".fingertips", "fingertip count differs from frame 0");
    }
    rec.targets.push_back(std::move(target));
    PointCloud cloud;
    if (f.contains("scene_cloud")) {
      if (!f["scene_cloud"].is_string()) parse_error(ctx + ".scene_cloud", "expected a relative path");
      const std::string blob = read_text_file((dir / f["scene_cloud"].get<std::string>()).string());
      try {
        cloud = cloud_from_bytes(reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size());
      } catch (const Error& e) {
        parse_error(ctx + ".scene_cloud", e.what());
      }
      any_cloud = true;
    }
    clouds.push_back(std::move(cloud));
  }
  if (any_cloud) rec.scene_clouds = std::move(clouds);
  return rec;
}

void save_recording(const Recording& rec, const std::string& path) {
  json j{{"dataset_id", rec.dataset_id}, {"fps", rec.fps}, {"frames", json::array()}};
  const fs::path p(path);
  std::string stem = p.filename().string();
  if (const auto dot = stem.find('.'); dot != std::string::npos) stem = stem.substr(0, dot);
  for (std::size_t t = 0; t < rec.targets.size(); ++t) {
    json f{{"hand_pose", pose_to_json(rec.targets[t].hand_pose)},
           {"fingertips", fingertips_to_json(rec.targets[t].fingertips)}};
    if (t < rec.scene_clouds.size() && !rec.scene_clouds[t].empty()) {
      const std::string name = stem + "." + std::to_string(t) + ".dxpc";
      const std::vector<std::uint8_t> bytes = cloud_to_bytes(rec.scene_clouds[t]);
      write_text_file((p.parent_path() / name).string(), std::string(bytes.begin(), bytes.end()));
      f["scene_cloud"] = name;
    }
    j["frames"].push_back(std::move(f));
  }
  write_text_file(path, j.dump(1) + "\n");
}

Recording synthetic_recording(const HandModel& model, const SyntheticRecordingSpec& spec) {
  if (spec.frames < 1 || !(spec.period > 0.0)) throw Error(ErrorCode::kInvalidArgument, "synthetic recording spec");
  Recording rec;
  rec.dataset_id = "synthetic";
  const Pose offset = offset_pose(spec.true_offset);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < spec.frames; ++t) {
    const double w = 2.0 * std::numbers::pi * t / spec.period;
    Eigen::VectorXd q(model.full_dof());
    for (int j = 0; j < model.full_dof(); ++j) {
      const Joint& joint = model.joint(j);
      q[j] = joint.mid() + spec.amplitude * (joint.upper - joint.lower) * std::sin(w + spec.phase + 0.7 * j);
    }
    q = apply_mimic(model, q).q;
    RetargetTarget target;
    target.hand_pose = Pose::from_xyz_rpy(Eigen::Vector3d(0.3 + 0.02 * std::sin(w), 0.1, 0.2 + 0.01 * std::cos(w)),
                                          Eigen::Vector3d(0.1, -0.2, 0.3 + 0.05 * std::sin(w)));
    target.fingertips = forward_kinematics(model, q, target.hand_pose, offset).fingertips;
    if (spec.scene_points > 0) {
      PointCloud table;
      const Eigen::Vector3d center = target.hand_pose.translation() - Eigen::Vector3d(0.0, 0.0, 0.15);
      for (int i = 0; i < spec.scene_points; ++i) {
        Point p;
        p.xyz = center + Eigen::Vector3d(0.3 * u(rng), 0.3 * u(rng), 0.002 * u(rng));
        p.rgb = {120, 100, 80};
        table.points.push_back(p);
      }
      rec.scene_clouds.push_back(std::move(table));
    }
    rec.targets.push_back(std::move(target));
  }
  return rec;
}

json ik_config_to_json(const IkConfig& cfg) {
  json weights = json::array();
  for (Eigen::Index i = 0; i < cfg.joint_weight.size(); ++i) weights.push_back(cfg.joint_weight[i]);
  return json{{"max_iters", cfg.max_iters},
              {"damping", cfg.damping},
              {"tol", cfg.tol},
              {"step_scale", cfg.step_scale},
              {"mimic_iters", cfg.mimic_iters},
              {"joint_weight", weights},
              {"mimic_mode", cfg.mimic_mode == MimicMode::kFolded ? "folded" : "independent"}};
}

IkConfig ik_config_from_json(const json& j, const IkConfig& base) {
  if (!j.is_object()) parse_error("ik", "expected an object");
  IkConfig cfg = base;
  try {
    if (j.contains("max_iters")) cfg.max_iters = j.at("max_iters").get<int>();
    if (j.contains("damping")) cfg.damping = j.at("damping").get<double>();
    if (j.contains("tol")) cfg.tol = j.at("tol").get<double>();
    if (j.contains("step_scale")) cfg.step_scale = j.at("step_scale").get<double>();
    if (j.contains("mimic_iters")) cfg.mimic_iters = j.at("mimic_iters").get<int>();
    if (j.contains("joint_weight")) {
      const auto w = j.at("joint_weight").get<std::vector<double>>();
      cfg.joint_weight = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    }
    if (j.contains("mimic_mode")) {
      const std::string mode = j.at("mimic_mode").get<std::string>();
      if (mode == "folded") {
        cfg.mimic_mode = MimicMode::kFolded;
      } else if (mode == "independent") {
        cfg.mimic_mode = MimicMode::kIndependent;
      } else {
        parse_error("ik.mimic_mode", "expected 'folded' or 'independent'");
      }
    }
  } catch (const json::exception& e) {
    parse_error("ik", e.what());
  }
  cfg.validate();
  return cfg;
}

Offset6 normalize_offset(const Offset6& offset) {
  Offset6 o = offset;
  for (int k = 3; k < 6; ++k) {
    double a = std::remainder(o[k], 2.0 * std::numbers::pi);
    if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
    o[k] = a;
  }
  return o;
}

Pose offset_pose(const Offset6& offset) { return Pose::from_xyz_rpy(offset.head<3>(), offset.tail<3>()); }

json call_log_to_json(const std::vector<SessionCall>& log) {
  json out = json::array();
  for (const SessionCall& c : log) {
    json j{{"call", call_name(c.kind)}};
    if (c.kind == SessionCall::Kind::kSetOffset) j["offset"] = offset_to_json(c.offset);
    if (c.kind == SessionCall::Kind::kStepFrame) j["delta"] = c.delta;
    if (c.kind == SessionCall::Kind::kSaveProfile) j["path"] = c.path;
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<SessionCall> call_log_from_json(const json& j) {
  if (!j.is_array()) parse_error("call log", "expected an array");
  std::vector<SessionCall> log;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string ctx = "call log[" + std::to_string(i) + "]";
    const json& c = j[i];
    if (!c.is_object() || !c.contains("call") || !c["call"].is_string()) parse_error(ctx, "expected {call, ...}");
    SessionCall call;
    const std::string name = c["call"].get<std::string>();
    try {
      if (name == "set_offset") {
        call.kind = SessionCall::Kind::kSetOffset;
        call.offset = offset_from_json(c.at("offset"), ctx + ".offset");
      } else if (name == "step_frame") {
        call.kind = SessionCall::Kind::kStepFrame;
        call.delta = c.at("delta").get<int>();
      } else if (name == "solve_all") {
        call.kind = SessionCall::Kind::kSolveAll;
      } else if (name == "save_profile") {
        call.kind = SessionCall::Kind::kSaveProfile;
        call.path = c.at("path").get<std::string>();
      } else {
        parse_error(ctx + ".call", "unknown call '" + name + "'");
      }
    } catch (const json::exception& e) {
      parse_error(ctx, e.what());
    }
    log.push_back(std::move(call));
  }
  return log;
}

Session::Session(HandModel model, Recording recording, const CalibrationProfile& profile, IkConfig cfg,
                 RenderCaps caps)
    : model_(std::move(model)),
      recording_(std::move(recording)),
      cfg_(std::move(cfg)),
      caps_(caps),
      initial_profile_(profile),
      offset_(normalize_offset(profile.offset_xyz_rpy)) {
  cfg_.validate();
  if (recording_.targets.empty()) throw Error(ErrorCode::kInvalidArgument, "recording has no frames");
  if (!recording_.scene_clouds.empty() && recording_.scene_clouds.size() != recording_.targets.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "recording needs one scene cloud per frame or none");
  }
  if (caps_.max_scene_points < 1 || caps_.max_hand_points < 1 || !(caps_.hand_density > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "render caps must be positive");
  }
  show(solve_cursor(std::nullopt));
}

Session Session::open(const std::string& recording_path, const std::string& hand_path,
                      const std::optional<std::string>& profile_path, IkConfig cfg, RenderCaps caps) {
  HandModel model = load_hand_model(hand_path);
  Recording recording = load_recording(recording_path);
  CalibrationProfile profile = profile_path ? load_profile(*profile_path)
                                            : CalibrationProfile::identity(recording.dataset_id, model.name());
  return Session(std::move(model), std::move(recording), profile, std::move(cfg), caps);
}

RetargetResult Session::solve_cursor(const std::optional<Eigen::VectorXd>& warm) {
  return retarget_frame(model_, recording_.targets[static_cast<std::size_t>(cursor_)], profile(), warm, cfg_);
}

void Session::show(RetargetResult result) {
  last_ = std::move(result);
  solved_[cursor_] = {offset_, last_};
}

CalibrationProfile Session::profile() const {
  CalibrationProfile p;
  p.dataset_id = recording_.dataset_id;
  p.hand_id = model_.name();
  p.offset_xyz_rpy = offset_;
  p.notes = initial_profile_.notes;
  return p;
}

const RetargetResult& Session::set_offset(const Offset6& offset) {
  if (!offset.allFinite()) throw Error(ErrorCode::kInvalidArgument, "offset contains non-finite values");
  log_.push_back({SessionCall::Kind::kSetOffset, offset, 0, {}});
  const Offset6 next = normalize_offset(offset);
  dirty_ = true;
  if (next == offset_) return last_;
  offset_ = next;
  show(solve_cursor(last_.q));
  return last_;
}

const RetargetResult& Session::step_frame(int delta) {
  const int target = static_cast<int>(std::clamp<long long>(static_cast<long long>(cursor_) + delta, 0,
                                                            recording_.frame_count() - 1));
  if (target != cursor_) {
    const int previous = cursor_;
    cursor_ = target;
    const auto it = solved_.find(cursor_);
    if (it != solved_.end() && it->second.first == offset_) {
      last_ = it->second.second;
    } else {
      try {
        show(solve_cursor(last_.q));
      } catch (...) {
        cursor_ = previous;
        throw;
      }
    }
  }
  log_.push_back({SessionCall::Kind::kStepFrame, Offset6::Zero(), delta, {}});
  return last_;
}

TrajectoryRetarget Session::solve_all() {
  TrajectoryRetarget out = retarget_trajectory(model_, recording_.targets, profile(), cfg_);
  log_.push_back({SessionCall::Kind::kSolveAll, Offset6::Zero(), 0, {}});
  return out;
}

CalibrationProfile Session::save_profile(const std::string& path) {
  const CalibrationProfile p = profile();
  dexforge::save_profile(p, path);
  dirty_ = false;
  log_.push_back({SessionCall::Kind::kSaveProfile, Offset6::Zero(), 0, path});
  return p;
}

ViewState Session::render_state() const {
  ViewState v;
  v.frame = cursor_;
  v.frame_count = recording_.frame_count();
  v.offset = offset_;
  v.result = last_;
  v.dirty = dirty_;
  const RetargetTarget& target = recording_.targets[static_cast<std::size_t>(cursor_)];
  const Pose offset = offset_pose(offset_);
  v.targets = target.fingertips;
  v.fingertips = forward_kinematics(model_, last_.q, target.hand_pose, offset).fingertips;
  if (!recording_.scene_clouds.empty()) {
    const PointCloud& scene = recording_.scene_clouds[static_cast<std::size_t>(cursor_)];
    v.scene = static_cast<int>(scene.size()) > caps_.max_scene_points
                  ? downsample_fps(scene, caps_.max_scene_points, caps_.seed)
                  : scene;
  }
  SurfaceSampling sampling;
  sampling.density = caps_.hand_density;
  sampling.seed = caps_.seed;
  v.hand = sample_hand_surface(model_, last_.q, target.hand_pose, offset, sampling);
  if (static_cast<int>(v.hand.size()) > caps_.max_hand_points) {
    v.hand = downsample_fps(v.hand, caps_.max_hand_points, caps_.seed);
  }
  return v;
}

Session Session::replay(HandModel model, Recording recording, const CalibrationProfile& profile, IkConfig cfg,
                        RenderCaps caps, const std::vector<SessionCall>& log) {
  Session s(std::move(model), std::move(recording), profile, std::move(cfg), caps);
  for (const SessionCall& call : log) {
    switch (call.kind) {
      case SessionCall::Kind::kSetOffset:
        // A failed solve still moved the offset, exactly as in the original run.
        try {
          s.set_offset(call.offset);
        } catch (const Error&) {
        }
        break;
      case SessionCall::Kind::kStepFrame: s.step_frame(call.delta); break;
      case SessionCall::Kind::kSolveAll: s.log_.push_back(call); break;
      case SessionCall::Kind::kSaveProfile:
        // State effect only; the file was written by the original run.
        s.dirty_ = false;
        s.log_.push_back(call);
        break;
    }
  }
  return s;
}

json retarget_result_to_json(const RetargetResult& r) {
  return json{{"q", std::vector<double>(r.q.data(), r.q.data() + r.q.size())},
              {"residual", std::vector<double>(r.residual.data(), r.residual.data() + r.residual.size())},
              {"rms", r.rms},
              {"converged", r.converged},
              {"iters_used", r.iters_used},
              {"mimic_passes", r.mimic_passes},
              {"clamped_joints", r.clamped_joints}};
}

std::string base64_encode(const std::uint8_t* data, std::size_t size) {
  std::string out(4 * ((size + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(size));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::kParse, "base64 length must be a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::kParse, "invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

json cloud_payload(const PointCloud& cloud) {
  static_assert(std::endian::native == std::endian::little, "payload assumes a little-endian host");
  std::vector<std::uint8_t> xyz(cloud.size() * 12), rgb(cloud.size() * 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const auto f = static_cast<float>(cloud.points[i].xyz[k]);
      std::memcpy(&xyz[12 * i + 4 * static_cast<std::size_t>(k)], &f, 4);
    }
    std::memcpy(&rgb[3 * i], cloud.points[i].rgb.data(), 3);
  }
  return json{{"count", cloud.size()},
              {"xyz", base64_encode(xyz.data(), xyz.size())},
              {"rgb", base64_encode(rgb.data(), rgb.size())}};
}

PointCloud cloud_from_payload(const json& j) {
  try {
    const std::size_t n = j.at("count").get<std::size_t>();
    const std::vector<std::uint8_t> xyz = base64_decode(j.at("xyz").get<std::string>());
    const std::vector<std::uint8_t> rgb = base64_decode(j.at("rgb").get<std::string>());
    if (xyz.size() != 12 * n || rgb.size() != 3 * n) throw Error(ErrorCode::kParse, "cloud payload sizes disagree");
    PointCloud cloud;
    cloud.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) {
        float f;
        std::memcpy(&f, &xyz[12 * i + 4 * static_cast<std::size_t>(k)], 4);
        cloud.points[i].xyz[k] = f;
      }
      std::memcpy(cloud.points[i].rgb.data(), &rgb[3 * i], 3);
    }
    return cloud;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("cloud payload: ") + e.what());
  }
}

json view_state_to_json(const ViewState& v) {
  return json{{"frame", v.frame},
              {"frame_count", v.frame_count},
              {"offset", offset_to_json(v.offset)},
              {"dirty", v.dirty},
              {"result", retarget_result_to_json(v.result)},
              {"targets", fingertips_to_json(v.targets)},
              {"fingertips", fingertips_to_json(v.fingertips)},
              {"scene", cloud_payload(v.scene)},
              {"hand", cloud_payload(v.hand)}};
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

ServiceResponse SessionService::open(const std::string& body, const std::string& client) {
  const json j = json::parse(body.empty() ? "{}" : body);
  if (!j.is_object() || !j.contains("recording") || !j.contains("hand")) {
    return error_response(ErrorCode::kParse, "POST /session needs {recording, hand}");
  }
  std::optional<std::string> profile;
  if (j.contains("profile") && !j["profile"].is_null()) profile = j["profile"].get<std::string>();
  IkConfig cfg = IkConfig::interactive();
  if (j.contains("ik")) cfg = ik_config_from_json(j["ik"], cfg);
  RenderCaps caps;
  if (j.contains("caps")) {
    const json& c = j["caps"];
    caps.max_scene_points = c.value("max_scene_points", caps.max_scene_points);
    caps.max_hand_points = c.value("max_hand_points", caps.max_hand_points);
    caps.hand_density = c.value("hand_density", caps.hand_density);
    caps.seed = c.value("seed", caps.seed);
  }
  auto entry = std::make_shared<Entry>();
  entry->session = std::make_unique<Session>(
      Session::open(j["recording"].get<std::string>(), j["hand"].get<std::string>(), profile, cfg, caps));
  entry->latest = view_state_to_json(entry->session->render_state());
  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = "s" + std::to_string(next_id_);
    entry->owner = j.value("client", client.empty() ? "client-" + std::to_string(next_id_) : client);
    ++next_id_;
    sessions_[id] = entry;
  }
  return ok(json{{"id", id}, {"client", entry->owner}, {"state", entry->latest}}, 201);
}

ServiceResponse SessionService::handle(const std::string& method, const std::string& path, const std::string& body,
                                       const std::string& client) {
  std::vector<std::string> parts;
  for (std::size_t at = 0; at < path.size();) {
    const std::size_t next = path.find('/', at);
    const std::string part = path.substr(at, next == std::string::npos ? std::string::npos : next - at);
    if (!part.empty()) parts.push_back(part);
    if (next == std::string::npos) break;
    at = next + 1;
  }
  try {
    if (parts.empty() || parts[0] != "session" || parts.size() > 3) {
      return error_response(ErrorCode::kNotFound, "no route for " + path);
    }
    if (parts.size() == 1) {
      if (method != "POST") return error_response(ErrorCode::kNotFound, "no route for " + method + " " + path);
      return open(body, client);
    }
    const std::shared_ptr<Entry> entry = find(parts[1]);
    if (!entry) return error_response(ErrorCode::kNotFound, "no session '" + parts[1] + "'");
    const std::string action = parts.size() == 3 ? parts[2] : "";

    if (method == "GET" && action == "state") {
      std::lock_guard lock(entry->view);
      return ok(entry->latest);
    }
    if (method == "GET" && action == "log") {
      std::lock_guard lock(entry->write);
      return ok(call_log_to_json(entry->session->call_log()));
    }

    const bool known = (method == "PUT" && action == "offset") ||
                       (method == "POST" && (action == "frame" || action == "solve-all" || action == "profile")) ||
                       (method == "DELETE" && action.empty());
    if (!known) return error_response(ErrorCode::kNotFound, "no route for " + method + " " + path);
    if (client != entry->owner) {
      return error_response(ErrorCode::kConflict, "session '" + parts[1] + "' is driven by another client");
    }
    if (method == "DELETE") {
      std::lock_guard lock(mutex_);
      sessions_.erase(parts[1]);
      return ok(json{{"deleted", parts[1]}});
    }

    std::lock_guard write(entry->write);
    Session& s = *entry->session;
    const json j = json::parse(body.empty() ? "{}" : body);
    auto publish = [&] {
      json view = view_state_to_json(s.render_state());
      std::lock_guard lock(entry->view);
      entry->latest = std::move(view);
    };
    json reply;
    try {
      if (action == "offset") {
        if (!j.contains("offset")) return error_response(ErrorCode::kParse, "PUT offset needs {offset: [6]}");
        reply = retarget_result_to_json(s.set_offset(offset_from_json(j["offset"], "offset")));
      } else if (action == "frame") {
        if (!j.contains("delta") || !j["delta"].is_number_integer()) {
          return error_response(ErrorCode::kParse, "POST frame needs {delta: int}");
        }
        reply = retarget_result_to_json(s.step_frame(j["delta"].get<int>()));
        reply["frame"] = s.cursor();
      } else if (action == "solve-all") {
        reply = summary_json(s.solve_all());
      } else {
        if (!j.contains("path") || !j["path"].is_string()) return error_response(ErrorCode::kParse, "POST profile needs {path}");
        reply = json::parse(profile_to_json(s.save_profile(j["path"].get<std::string>())));
      }
    } catch (const Error&) {
      publish();
      throw;
    }
    publish();
    return ok(reply);
  } catch (const Error& e) {
    return error_response(e.code(), e.what());
  } catch (const json::exception& e) {
    return error_response(ErrorCode::kParse, e.what());
  } catch (const std::exception& e) {
    return error_response(ErrorCode::kInternal, e.what());
  }
}

}  // namespace dexforge
