#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "dexforge/hand_model.hpp"
#include "dexforge/pointcloud.hpp"
#include "dexforge/retarget.hpp"

namespace dexforge {

using Offset6 = Eigen::Matrix<double, 6, 1>;  // tx, ty, tz, roll, pitch, yaw

/// Captured fingertip targets with optional per-frame scene clouds.
struct Recording {
  std::string dataset_id = "default";
  double fps = 30.0;
  std::vector<RetargetTarget> targets;
  std::vector<PointCloud> scene_clouds;  // empty, or one per frame

  int frame_count() const { return static_cast<int>(targets.size()); }
};

/// `.rec.json`: {"dataset_id", "fps", "frames": [{"hand_pose": {xyz, rpy}, "fingertips": [[x, y, z], ...],
/// "scene_cloud": "<relative path to a DXPC blob>"?}]}. Throws Error{kParse} naming the element.
Recording load_recording(const std::string& path);
/// Clouds are written next to the file as <stem>.<frame>.dxpc.
void save_recording(const Recording& rec, const std::string& path);

struct SyntheticRecordingSpec {
  int frames = 60;
  double period = 360.0;     // frames per joint oscillation
  double amplitude = 0.25;   // fraction of each joint range
  double phase = 0.3;
  Offset6 true_offset = Offset6::Zero();  // dummy-base offset the targets were generated with
  int scene_points = 0;      // table-plane points per frame, 0 for none
  std::uint64_t seed = 0;
};

/// Forward-kinematics oracle recording: smooth joint motion, a slowly drifting hand pose, and
/// fingertips from forward_kinematics with the given offset.
Recording synthetic_recording(const HandModel& model, const SyntheticRecordingSpec& spec);

nlohmann::json ik_config_to_json(const IkConfig& cfg);
/// Missing keys keep `base`'s values. Throws Error{kParse}.
IkConfig ik_config_from_json(const nlohmann::json& j, const IkConfig& base);

/// Wraps every angle into (−π, π].
Offset6 normalize_offset(const Offset6& offset);
/// Translation then URDF roll-pitch-yaw.
Pose offset_pose(const Offset6& offset);

struct RenderCaps {
  int max_scene_points = 4096;
  int max_hand_points = 2048;
  double hand_density = 2e4;  // samples per square meter before the cap
  std::uint64_t seed = 0;
};

struct ViewState {
  int frame = 0;
  int frame_count = 0;
  Offset6 offset = Offset6::Zero();
  RetargetResult result;
  FingertipSet targets;
  FingertipSet fingertips;  // achieved, world frame
  PointCloud scene;
  PointCloud hand;
  bool dirty = false;
};

/// One state-changing request, as logged for replay.
struct SessionCall {
  enum class Kind { kSetOffset, kStepFrame, kSolveAll, kSaveProfile };
  Kind kind = Kind::kSetOffset;
  Offset6 offset = Offset6::Zero();
  int delta = 0;
  std::string path;
};

nlohmann::json call_log_to_json(const std::vector<SessionCall>& log);
std::vector<SessionCall> call_log_from_json(const nlohmann::json& j);

/// Live interactive calibration over one recording. Single writer.
class Session {
 public:
  /// Offset from `profile`, frame 0 solved from the rest pose.
  Session(HandModel model, Recording recording, const CalibrationProfile& profile,
          IkConfig cfg = IkConfig::interactive(), RenderCaps caps = {});

  /// Throws load/parse errors from the hand, recording or profile file.
  static Session open(const std::string& recording_path, const std::string& hand_path,
                      const std::optional<std::string>& profile_path, IkConfig cfg = IkConfig::interactive(),
                      RenderCaps caps = {});

  /// Re-solves the current frame warm-started from the last q. A value equal to the current
  /// offset returns the current result. A non-finite offset throws Error{kInvalidArgument} and
  /// changes nothing. On a solver error the new offset is kept, the previous result stays, and
  /// the error propagates.
  const RetargetResult& set_offset(const Offset6& offset);
  /// Moves the cursor with clamping. A frame already solved at the current offset shows its
  /// cached result; otherwise it is solved warm-started from the last q.
  const RetargetResult& step_frame(int delta);
  /// Whole recording with the current offset, frame-to-frame warm starts.
  TrajectoryRetarget solve_all();
  /// Writes the profile JSON and clears dirty. On failure the session is unchanged.
  CalibrationProfile save_profile(const std::string& path);
  ViewState render_state() const;

  /// Applies `log` in order to a fresh session.
  static Session replay(HandModel model, Recording recording, const CalibrationProfile& profile, IkConfig cfg,
                        RenderCaps caps, const std::vector<SessionCall>& log);

  const HandModel& model() const { return model_; }
  const Recording& recording() const { return recording_; }
  const IkConfig& config() const { return cfg_; }
  const RenderCaps& caps() const { return caps_; }
  const CalibrationProfile& initial_profile() const { return initial_profile_; }
  CalibrationProfile profile() const;
  const Offset6& offset() const { return offset_; }
  int cursor() const { return cursor_; }
  const RetargetResult& last() const { return last_; }
  bool dirty() const { return dirty_; }
  const std::vector<SessionCall>& call_log() const { return log_; }

 private:
  RetargetResult solve_cursor(const std::optional<Eigen::VectorXd>& warm);
  void show(RetargetResult result);

  HandModel model_;
  Recording recording_;
  IkConfig cfg_;
  RenderCaps caps_;
  CalibrationProfile initial_profile_;
  Offset6 offset_ = Offset6::Zero();
  int cursor_ = 0;
  RetargetResult last_;
  bool dirty_ = false;
  std::map<int, std::pair<Offset6, RetargetResult>> solved_;  // latest solve per frame
  std::vector<SessionCall> log_;
};

nlohmann::json retarget_result_to_json(const RetargetResult& r);
/// Clouds as {"count", "xyz": base64 little-endian float32 triplets, "rgb": base64 bytes}.
nlohmann::json view_state_to_json(const ViewState& view);
nlohmann::json cloud_payload(const PointCloud& cloud);
PointCloud cloud_from_payload(const nlohmann::json& j);
std::string base64_encode(const std::uint8_t* data, std::size_t size);
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct ServiceResponse {
  int status = 200;
  std::string body;  // JSON
};

/// Transport-independent request handling for the session API:
///   POST /session                  {recording, hand, profile?, ik?, caps?, client?} -> {id, client, state}
///   GET  /session/{id}/state       -> view payload
///   GET  /session/{id}/log         -> call log
///   PUT  /session/{id}/offset      {offset: [6]} -> result
///   POST /session/{id}/frame       {delta} -> result
///   POST /session/{id}/solve-all   -> convergence summary
///   POST /session/{id}/profile     {path} -> profile
///   DELETE /session/{id}
/// Mutating calls must carry the owning client id; any other client gets 409.
class SessionService {
 public:
  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body,
                         const std::string& client);
  std::size_t session_count() const;

 private:
  struct Entry {
    std::string owner;
    std::mutex write;         // serializes the owner's mutations
    mutable std::mutex view;  // guards `latest`
    std::unique_ptr<Session> session;
    nlohmann::json latest;  // view payload of the last completed call
  };
  std::shared_ptr<Entry> find(const std::string& id) const;
  ServiceResponse open(const std::string& body, const std::string& client);

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_id_ = 1;
};

inline constexpr const char* kClientHeader = "X-Dexforge-Client";

/// HTTP front end for SessionService on 127.0.0.1. bind(0) picks a free port and returns it;
/// listen() blocks until stop() is called from another thread.
class HttpServer {
 public:
  HttpServer();
  ~HttpServer();
  int bind(int port);
  void listen();
  void stop();
  SessionService& service();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dexforge
