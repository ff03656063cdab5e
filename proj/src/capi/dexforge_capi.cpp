#include "dexforge/dexforge.h"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <new>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "dexforge/dataset.hpp"
#include "dexforge/error.hpp"
#include "dexforge/faas.hpp"
#include "dexforge/flowmatch.hpp"
#include "dexforge/hand_model.hpp"
#include "dexforge/json_util.hpp"
#include "dexforge/kinematics.hpp"
#include "dexforge/pointcloud.hpp"
#include "dexforge/retarget.hpp"
#include "dexforge/session.hpp"

using nlohmann::json;
namespace df = dexforge;

struct dexforge_hand {
  df::HandModel model;
};

struct dexforge_session {
  df::Session session;
};

struct dexforge_policy {
  df::PolicyNet net;
};

struct dexforge_server {
  df::HttpServer server;
};

namespace {

thread_local std::string g_last_error;

struct ArgError {
  std::string message;
};

template <class F>
dexforge_status guard(F&& body) {
  try {
    body();
    g_last_error.clear();
    return DEXFORGE_OK;
  } catch (const ArgError& e) {
    g_last_error = e.message;
    return DEXFORGE_E_INVALID_ARGUMENT;
  } catch (const df::Error& e) {
    g_last_error = e.what();
    return static_cast<dexforge_status>(static_cast<int>(e.code()));
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return DEXFORGE_E_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DEXFORGE_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DEXFORGE_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return DEXFORGE_E_INTERNAL;
  }
}

void require(const void* ptr, const char* name) {
  if (ptr == nullptr) throw ArgError{std::string(name) + " must not be NULL"};
}

void require_capacity(std::size_t capacity, std::size_t needed, const char* name) {
  if (capacity < needed) {
    throw ArgError{std::string(name) + " holds " + std::to_string(capacity) + " values, " + std::to_string(needed) +
                   " needed"};
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const json& j) {
  if (out != nullptr) *out = dup_string(j.dump());
}

json parse_optional(const char* text) {
  if (text == nullptr || *text == '\0') return json::object();
  json j = json::parse(text);
  if (!j.is_object()) throw df::Error(df::ErrorCode::kParse, "expected a JSON object");
  return j;
}

df::Pose pose6(const double* v) {
  if (v == nullptr) return df::Pose::identity();
  return df::Pose::from_xyz_rpy(Eigen::Vector3d(v[0], v[1], v[2]), Eigen::Vector3d(v[3], v[4], v[5]));
}

void write_pose6(const df::Pose& p, double* out) {
  const Eigen::Vector3d t = p.translation();
  const Eigen::Vector3d r = p.rpy();
  for (int i = 0; i < 3; ++i) {
    out[i] = t[i];
    out[3 + i] = r[i];
  }
}

df::FaasVector faas_from_arrays(const double* values, const std::uint8_t* mask) {
  df::FaasVector v;
  for (int i = 0; i < df::kFaasDim; ++i) {
    v.values[static_cast<std::size_t>(i)] = values[i];
    v.mask[static_cast<std::size_t>(i)] = ((mask[i / 8] >> (i % 8)) & 1u) != 0;
  }
  return v;
}

void faas_to_arrays(const df::FaasVector& v, double* values, std::uint8_t* mask) {
  std::memset(mask, 0, df::kFaasMaskBytes);
  for (int i = 0; i < df::kFaasDim; ++i) {
    values[i] = v.values[static_cast<std::size_t>(i)];
    if (v.mask[static_cast<std::size_t>(i)]) mask[i / 8] = static_cast<std::uint8_t>(mask[i / 8] | (1u << (i % 8)));
  }
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& context) {
  if (!j.is_array()) throw df::Error(df::ErrorCode::kParse, context + " must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw df::Error(df::ErrorCode::kParse, context + "[" + std::to_string(i) + "] is not a number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json vector_to_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

struct StateInput {
  df::Pose wrist;
  Eigen::VectorXd q;
};

StateInput state_from_json(const df::HandModel& model, const json& j) {
  StateInput s;
  s.q = j.contains("q") ? vector_from_json(j["q"], "q") : model.rest_pose();
  if (j.contains("wrist")) s.wrist = df::pose_from_json(j["wrist"], "wrist");
  return s;
}

json decoded_to_json(const df::DecodedState& d) {
  json out{{"q", vector_to_json(d.q)}, {"defaulted", d.defaulted}, {"clamped", d.clamped}};
  if (d.wrist_present) out["wrist"] = df::pose_to_json(d.wrist);
  return out;
}

df::CalibrationProfile profile_or_identity(const char* path, const std::string& dataset_id, const std::string& hand) {
  if (path != nullptr && *path != '\0') return df::load_profile(path);
  return df::CalibrationProfile::identity(dataset_id, hand);
}

std::string frame_color(const std::string& prefix) { return prefix + ".color.ppm"; }
std::string frame_depth(const std::string& prefix) { return prefix + ".depth.pgm"; }
std::string frame_intrinsics(const std::string& prefix) { return prefix + ".intrinsics.json"; }

std::vector<std::uint8_t> read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw df::Error(df::ErrorCode::kIo, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_binary(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw df::Error(df::ErrorCode::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw df::Error(df::ErrorCode::kIo, "short write to " + path);
}

df::PointCloud read_cloud(const std::string& path) {
  const auto bytes = read_binary(path);
  return df::cloud_from_bytes(bytes.data(), bytes.size());
}

std::vector<df::Trajectory> read_shards(const char* const* dirs, std::size_t count, const char* name) {
  if (count > 0) require(dirs, name);
  std::vector<df::Trajectory> out;
  for (std::size_t i = 0; i < count; ++i) {
    require(dirs[i], name);
    out.push_back(df::read_trajectory(dirs[i]));
  }
  return out;
}

double mean_rms(const df::TrajectoryRetarget& t) {
  double sum = 0.0;
  for (const auto& f : t.frames) sum += f.rms;
  return t.frames.empty() ? 0.0 : sum / static_cast<double>(t.frames.size());
}

}  // namespace

extern "C" {

const char* dexforge_version(void) { return "0.1.0"; }

const char* dexforge_status_name(dexforge_status status) {
  return df::error_code_name(static_cast<df::ErrorCode>(static_cast<int>(status)));
}

const char* dexforge_last_error(void) { return g_last_error.c_str(); }

void dexforge_string_free(char* text) { std::free(text); }

// ---- hand models ----

dexforge_status dexforge_hand_load(const char* path, dexforge_hand** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new dexforge_hand{df::load_hand_model(path)};
  });
}

dexforge_status dexforge_hand_parse(const char* json_text, dexforge_hand** out) {
  return guard([&] {
    require(json_text, "json_text");
    require(out, "out");
    *out = new dexforge_hand{df::parse_hand_model(json_text)};
  });
}

void dexforge_hand_free(dexforge_hand* hand) { delete hand; }

int dexforge_hand_full_dof(const dexforge_hand* hand) { return hand ? hand->model.full_dof() : -1; }
int dexforge_hand_active_dof(const dexforge_hand* hand) { return hand ? hand->model.active_dof() : -1; }
int dexforge_hand_fingertip_count(const dexforge_hand* hand) { return hand ? hand->model.fingertip_count() : -1; }

dexforge_status dexforge_hand_summary_json(const dexforge_hand* hand, char** out_json) {
  return guard([&] {
    require(hand, "hand");
    require(out_json, "out_json");
    *out_json = dup_string(df::hand_summary_json(df::hand_summary(hand->model)));
  });
}

dexforge_status dexforge_hand_rest_pose(const dexforge_hand* hand, double* q_out, size_t capacity) {
  return guard([&] {
    require(hand, "hand");
    require(q_out, "q_out");
    const Eigen::VectorXd q = hand->model.rest_pose();
    require_capacity(capacity, static_cast<std::size_t>(q.size()), "q_out");
    std::copy(q.data(), q.data() + q.size(), q_out);
  });
}

dexforge_status dexforge_forward_kinematics(const dexforge_hand* hand, const double* q, size_t q_len,
                                           const double world_xyz_rpy[6], const double offset_xyz_rpy[6],
                                           double* fingertips_out, size_t capacity) {
  return guard([&] {
    require(hand, "hand");
    require(q, "q");
    require(fingertips_out, "fingertips_out");
    const Eigen::VectorXd qv = Eigen::Map<const Eigen::VectorXd>(q, static_cast<Eigen::Index>(q_len));
    const df::FkResult fk = df::forward_kinematics(hand->model, qv, pose6(world_xyz_rpy), pose6(offset_xyz_rpy));
    const std::size_t n = static_cast<std::size_t>(fk.fingertips.cols());
    require_capacity(capacity, 3 * n, "fingertips_out");
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) fingertips_out[3 * i + static_cast<std::size_t>(k)] = fk.fingertips(k, static_cast<Eigen::Index>(i));
    }
  });
}

// ---- retargeting ----

dexforge_status dexforge_retarget_recording(const dexforge_hand* hand, const char* recording_path,
                                           const char* profile_path, const char* ik_json, const char* out_path,
                                           char** summary_json) {
  return guard([&] {
    require(hand, "hand");
    require(recording_path, "recording_path");
    require(out_path, "out_path");
    const df::Recording rec = df::load_recording(recording_path);
    const df::CalibrationProfile profile = profile_or_identity(profile_path, rec.dataset_id, hand->model.name());
    const df::IkConfig cfg = df::ik_config_from_json(parse_optional(ik_json), df::IkConfig{});
    const df::TrajectoryRetarget solved = df::retarget_trajectory(hand->model, rec.targets, profile, cfg);
    json frames = json::array();
    for (const auto& f : solved.frames) frames.push_back(df::retarget_result_to_json(f));
    const json summary{{"frames", solved.frames.size()},
                       {"convergence_rate", solved.convergence_rate},
                       {"flagged", solved.flagged},
                       {"mean_rms", mean_rms(solved)}};
    const json doc{{"dataset_id", rec.dataset_id},
                   {"hand", hand->model.name()},
                   {"profile", json::parse(df::profile_to_json(profile))},
                   {"summary", summary},
                   {"frames", frames}};
    df::write_text_file(out_path, doc.dump(2));
    emit(summary_json, summary);
  });
}

dexforge_status dexforge_synthetic_recording(const dexforge_hand* hand, const char* spec_json, const char* out_path) {
  return guard([&] {
    require(hand, "hand");
    require(out_path, "out_path");
    const json j = parse_optional(spec_json);
    df::SyntheticRecordingSpec spec;
    spec.frames = j.value("frames", spec.frames);
    spec.period = j.value("period", spec.period);
    spec.amplitude = j.value("amplitude", spec.amplitude);
    spec.phase = j.value("phase", spec.phase);
    spec.seed = j.value("seed", spec.seed);
    spec.scene_points = j.value("scene_points", spec.scene_points);
    if (j.contains("true_offset")) {
      const Eigen::VectorXd o = vector_from_json(j["true_offset"], "true_offset");
      if (o.size() != 6) throw df::Error(df::ErrorCode::kParse, "true_offset needs 6 values");
      spec.true_offset = o;
    }
    df::save_recording(df::synthetic_recording(hand->model, spec), out_path);
  });
}

// ---- FAAS ----

dexforge_status dexforge_faas_encode(const dexforge_hand* hand, const double wrist_xyz_rpy[6], const double* q,
                                    size_t q_len, double values_out[82], uint8_t mask_out[11]) {
  return guard([&] {
    require(hand, "hand");
    require(q, "q");
    require(values_out, "values_out");
    require(mask_out, "mask_out");
    const Eigen::VectorXd qv = Eigen::Map<const Eigen::VectorXd>(q, static_cast<Eigen::Index>(q_len));
    const df::FaasVector v = df::encode_state(hand->model, hand->model.side(), pose6(wrist_xyz_rpy), qv);
    faas_to_arrays(v, values_out, mask_out);
  });
}

dexforge_status dexforge_faas_decode(const dexforge_hand* hand, const double values[82], const uint8_t mask[11],
                                    double* q_out, size_t capacity, double wrist_out[6], int* wrist_present) {
  return guard([&] {
    require(hand, "hand");
    require(values, "values");
    require(mask, "mask");
    require(q_out, "q_out");
    require_capacity(capacity, static_cast<std::size_t>(hand->model.full_dof()), "q_out");
    const df::DecodedState d = df::decode_state(faas_from_arrays(values, mask), hand->model, hand->model.side());
    std::copy(d.q.data(), d.q.data() + d.q.size(), q_out);
    if (wrist_out != nullptr) write_pose6(d.wrist, wrist_out);
    if (wrist_present != nullptr) *wrist_present = d.wrist_present ? 1 : 0;
  });
}

dexforge_status dexforge_faas_to_bytes(const double values[82], const uint8_t mask[11], uint8_t out[339]) {
  return guard([&] {
    require(values, "values");
    require(mask, "mask");
    require(out, "out");
    const auto bytes = df::faas_to_bytes(faas_from_arrays(values, mask));
    std::copy(bytes.begin(), bytes.end(), out);
  });
}

dexforge_status dexforge_faas_from_bytes(const uint8_t* data, size_t size, double values_out[82],
                                        uint8_t mask_out[11]) {
  return guard([&] {
    require(data, "data");
    require(values_out, "values_out");
    require(mask_out, "mask_out");
    faas_to_arrays(df::faas_from_bytes(data, size), values_out, mask_out);
  });
}

dexforge_status dexforge_faas_encode_json(const dexforge_hand* hand, const char* state_json, char** out_json) {
  return guard([&] {
    require(hand, "hand");
    require(out_json, "out_json");
    const StateInput s = state_from_json(hand->model, parse_optional(state_json));
    *out_json = dup_string(df::faas_to_json(df::encode_state(hand->model, hand->model.side(), s.wrist, s.q)));
  });
}

dexforge_status dexforge_faas_decode_json(const dexforge_hand* hand, const char* faas_json, char** out_json) {
  return guard([&] {
    require(hand, "hand");
    require(faas_json, "faas_json");
    require(out_json, "out_json");
    const df::FaasVector v = df::faas_from_json(faas_json);
    emit(out_json, decoded_to_json(df::decode_state(v, hand->model, hand->model.side())));
  });
}

dexforge_status dexforge_faas_transfer_json(const dexforge_hand* source, const dexforge_hand* target,
                                           const char* state_json, char** out_json) {
  return guard([&] {
    require(source, "source");
    require(target, "target");
    require(out_json, "out_json");
    const StateInput s = state_from_json(source->model, parse_optional(state_json));
    const df::FaasVector v = df::encode_state(source->model, source->model.side(), s.wrist, s.q);
    const df::DecodedState d = df::decode_state(v, target->model, source->model.side());
    json out = decoded_to_json(d);
    emit(out_json, json{{"faas", json::parse(df::faas_to_json(v))},
                        {"state", out},
                        {"shared_slots", df::shared_slots(source->model, target->model)},
                        {"defaulted", d.defaulted},
                        {"clamped", d.clamped}});
  });
}

// ---- point clouds ----

dexforge_status dexforge_pointcloud_unproject(const char* frame_prefix, const char* mask_path, const char* cloud_out,
                                             size_t* point_count) {
  return guard([&] {
    require(frame_prefix, "frame_prefix");
    require(cloud_out, "cloud_out");
    const std::string p = frame_prefix;
    const df::RgbdFrame frame = df::load_frame(frame_color(p), frame_depth(p), frame_intrinsics(p));
    std::optional<df::PixelMask> mask;
    if (mask_path != nullptr && *mask_path != '\0') mask = df::read_mask_pgm(mask_path);
    const df::PointCloud cloud = df::unproject(frame, mask ? &*mask : nullptr);
    write_binary(cloud_out, df::cloud_to_bytes(cloud));
    if (point_count != nullptr) *point_count = cloud.size();
  });
}

dexforge_status dexforge_pointcloud_reproject(const char* cloud_path, const char* intrinsics_path,
                                             const char* frame_prefix_out) {
  return guard([&] {
    require(cloud_path, "cloud_path");
    require(intrinsics_path, "intrinsics_path");
    require(frame_prefix_out, "frame_prefix_out");
    const df::CameraIntrinsics k = df::intrinsics_from_json(df::read_text_file(intrinsics_path));
    const df::RgbdFrame frame = df::reproject(read_cloud(cloud_path), k);
    const std::string p = frame_prefix_out;
    df::save_frame(frame, frame_color(p), frame_depth(p), frame_intrinsics(p));
  });
}

dexforge_status dexforge_pointcloud_attach(const dexforge_hand* hand, const char* frame_prefix, const char* mask_path,
                                          const char* state_json, const char* frame_prefix_out, const char* cloud_out,
                                          size_t* point_count) {
  return guard([&] {
    require(hand, "hand");
    require(frame_prefix, "frame_prefix");
    require(mask_path, "mask_path");
    require(frame_prefix_out, "frame_prefix_out");
    const json j = parse_optional(state_json);
    const std::string p = frame_prefix;
    const df::RgbdFrame frame = df::load_frame(frame_color(p), frame_depth(p), frame_intrinsics(p));
    const df::PixelMask mask = df::read_mask_pgm(mask_path);
    const df::PointCloud scene = df::unproject(frame, &mask);
    const Eigen::VectorXd q = j.contains("q") ? vector_from_json(j["q"], "q") : hand->model.rest_pose();
    const df::Pose hand_pose = j.contains("hand_pose") ? df::pose_from_json(j["hand_pose"], "hand_pose") : df::Pose();
    const df::Pose offset = j.contains("offset") ? df::pose_from_json(j["offset"], "offset") : df::Pose();
    df::SurfaceSampling sampling;
    sampling.density = j.value("density", sampling.density);
    sampling.seed = j.value("seed", sampling.seed);
    const df::PointCloud robot = df::sample_hand_surface(hand->model, q, hand_pose, offset, sampling);
    const df::PointCloud composed = df::compose_scene(scene, robot);
    const std::string out = frame_prefix_out;
    df::save_frame(df::reproject(composed, frame.intrinsics), frame_color(out), frame_depth(out), frame_intrinsics(out));
    if (cloud_out != nullptr) write_binary(cloud_out, df::cloud_to_bytes(composed));
    if (point_count != nullptr) *point_count = composed.size();
  });
}

// ---- flow matching ----

dexforge_status dexforge_train_toy(const char* config_json, const char* checkpoint_out, const char* curve_csv_out,
                                  char** report_json) {
  return guard([&] {
    const json j = parse_optional(config_json);
    const int n_train = j.value("train", 256);
    const int n_val = j.value("val", 64);
    const int horizon = j.value("horizon", 2);
    const std::uint64_t data_seed = j.value("data_seed", std::uint64_t{720});
    if (n_train < 1 || n_val < 1 || horizon < 1) throw ArgError{"train, val and horizon must be positive"};
    df::TrainConfig cfg;
    cfg.epochs = j.value("epochs", 60);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.max_norm = j.value("max_norm", cfg.max_norm);
    cfg.seed = j.value("seed", std::uint64_t{724});
    cfg.euler_delta = j.value("euler_delta", cfg.euler_delta);
    const auto train_set = df::reaching_task(n_train, horizon, data_seed);
    const auto val_set = df::reaching_task(n_val, horizon, data_seed + 1);
    df::NetShape shape;
    shape.action_dim = static_cast<int>(train_set.front().chunk.size());
    shape.obs_dim = static_cast<int>(train_set.front().obs.size());
    shape.hidden = j.value("hidden", std::vector<int>{128});
    df::PolicyNet net(shape, j.value("net_seed", std::uint64_t{722}));
    const auto start = std::chrono::steady_clock::now();
    const double initial = df::evaluate_loss(net, val_set, 4, 723);
    const df::TrainReport report = df::train(net, train_set, cfg);
    const double final_loss = df::evaluate_loss(net, val_set, 4, 723);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (checkpoint_out != nullptr) df::save_checkpoint(net, cfg, checkpoint_out);
    if (curve_csv_out != nullptr) df::write_text_file(curve_csv_out, df::loss_curve_csv(report));
    emit(report_json, json{{"initial_val_loss", initial},
                           {"final_val_loss", final_loss},
                           {"ratio", final_loss / initial},
                           {"epochs", cfg.epochs},
                           {"steps", report.steps},
                           {"seconds", seconds}});
  });
}

dexforge_status dexforge_policy_load(const char* checkpoint_path, dexforge_policy** out) {
  return guard([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    *out = new dexforge_policy{df::load_checkpoint(checkpoint_path)};
  });
}

void dexforge_policy_free(dexforge_policy* policy) { delete policy; }

int dexforge_policy_action_dim(const dexforge_policy* policy) { return policy ? policy->net.action_dim() : -1; }
int dexforge_policy_obs_dim(const dexforge_policy* policy) { return policy ? policy->net.obs_dim() : -1; }

dexforge_status dexforge_policy_sample(const dexforge_policy* policy, const double* obs, size_t obs_len, double delta,
                                      uint64_t seed, double* action_out, size_t capacity) {
  return guard([&] {
    require(policy, "policy");
    require(action_out, "action_out");
    if (obs_len > 0) require(obs, "obs");
    if (static_cast<int>(obs_len) != policy->net.obs_dim()) {
      throw df::Error(df::ErrorCode::kShapeMismatch, "observation has " + std::to_string(obs_len) + " values, " +
                                                         std::to_string(policy->net.obs_dim()) + " expected");
    }
    require_capacity(capacity, static_cast<std::size_t>(policy->net.action_dim()), "action_out");
    Eigen::VectorXd o(static_cast<Eigen::Index>(obs_len));
    for (std::size_t i = 0; i < obs_len; ++i) o[static_cast<Eigen::Index>(i)] = obs[i];
    std::mt19937_64 rng(seed);
    const Eigen::VectorXd a = df::euler_sample(policy->net, o, delta, rng);
    std::copy(a.data(), a.data() + a.size(), action_out);
  });
}

// ---- datasets ----

dexforge_status dexforge_dataset_pack(const dexforge_hand* hand, const char* recording_path, const char* profile_path,
                                     const char* config_json, const char* shard_out, char** summary_json) {
  return guard([&] {
    require(hand, "hand");
    require(recording_path, "recording_path");
    require(shard_out, "shard_out");
    const json j = parse_optional(config_json);
    const df::Recording rec = df::load_recording(recording_path);
    const df::CalibrationProfile profile = profile_or_identity(profile_path, rec.dataset_id, hand->model.name());
    const df::IkConfig cfg = df::ik_config_from_json(j.value("ik", json::object()), df::IkConfig{});
    const df::TrajectoryRetarget solved = df::retarget_trajectory(hand->model, rec.targets, profile, cfg);
    std::vector<df::Pose> wrists;
    for (const auto& t : rec.targets) wrists.push_back(t.hand_pose * profile.offset());
    std::vector<std::string> instructions;
    if (j.contains("instruction")) {
      instructions.assign(rec.targets.size(), j["instruction"].get<std::string>());
    }
    df::Trajectory traj = df::trajectory_from_retarget(
        hand->model, j.value("id", rec.dataset_id), df::parse_source(j.value("source", std::string("robot"))), rec.fps,
        wrists, solved, instructions);
    for (std::size_t t = 0; t < rec.scene_clouds.size() && t < traj.frames.size(); ++t) {
      if (!rec.scene_clouds[t].empty()) traj.frames[t].cloud_ref = traj.add_cloud(rec.scene_clouds[t]);
    }
    if (j.contains("target_fps")) traj = df::downsample_motion(traj, j["target_fps"].get<double>());
    df::write_trajectory(traj, shard_out);
    emit(summary_json, json{{"id", traj.id},
                            {"hand_id", traj.hand_id},
                            {"source", df::source_name(traj.source)},
                            {"fps", traj.fps},
                            {"frames", traj.frames.size()},
                            {"clouds", traj.clouds.size()},
                            {"convergence_rate", traj.convergence_rate()}});
  });
}

dexforge_status dexforge_dataset_stats(const char* const* shard_dirs, size_t count, char** out_json) {
  return guard([&] {
    require(out_json, "out_json");
    const auto trajs = read_shards(shard_dirs, count, "shard_dirs");
    *out_json = dup_string(df::dataset_stats_json(df::dataset_stats(trajs)));
  });
}

dexforge_status dexforge_dataset_mix_preview(const char* const* human_shards, size_t human_count,
                                            const char* const* robot_shards, size_t robot_count,
                                            const char* spec_json, char** out_json) {
  return guard([&] {
    require(out_json, "out_json");
    const json j = parse_optional(spec_json);
    const auto human = read_shards(human_shards, human_count, "human_shards");
    const auto robot = read_shards(robot_shards, robot_count, "robot_shards");
    df::MixSpec spec;
    spec.human_weight = j.value("human_weight", spec.human_weight);
    spec.robot_weight = j.value("robot_weight", spec.robot_weight);
    spec.seed = j.value("seed", spec.seed);
    spec.human_count = j.value("human_count", static_cast<int>(human.size()));
    spec.robot_count = j.value("robot_count", static_cast<int>(robot.size()));
    const int batch_size = j.value("batch_size", 4);
    const int batches = j.value("batches", 8);
    if (batches < 0) throw ArgError{"batches must be non-negative"};
    df::MixStream stream = df::mix_batches(human, robot, spec, batch_size);
    json drawn = json::array();
    long human_items = 0, total = 0;
    for (int b = 0; b < batches; ++b) {
      json batch = json::array();
      for (const df::MixItem& item : stream.next_batch()) {
        const auto& set = item.source == df::DataSource::kHuman ? human : robot;
        batch.push_back({{"source", df::source_name(item.source)},
                         {"index", item.index},
                         {"id", set[static_cast<std::size_t>(item.index)].id}});
        if (item.source == df::DataSource::kHuman) ++human_items;
        ++total;
      }
      drawn.push_back(batch);
    }
    const double human_fraction = total > 0 ? static_cast<double>(human_items) / static_cast<double>(total) : 0.0;
    emit(out_json, json{{"batches", drawn},
                        {"batches_per_epoch", stream.batches_per_epoch()},
                        {"human_fraction", human_fraction},
                        {"robot_fraction", total > 0 ? 1.0 - human_fraction : 0.0}});
  });
}

// ---- sessions ----

dexforge_status dexforge_session_open(const char* recording_path, const char* hand_path, const char* profile_path,
                                     const char* ik_json, dexforge_session** out) {
  return guard([&] {
    require(recording_path, "recording_path");
    require(hand_path, "hand_path");
    require(out, "out");
    std::optional<std::string> profile;
    if (profile_path != nullptr && *profile_path != '\0') profile = profile_path;
    const df::IkConfig cfg = df::ik_config_from_json(parse_optional(ik_json), df::IkConfig::interactive());
    *out = new dexforge_session{df::Session::open(recording_path, hand_path, profile, cfg)};
  });
}

void dexforge_session_free(dexforge_session* session) { delete session; }

dexforge_status dexforge_session_set_offset(dexforge_session* session, const double offset_xyz_rpy[6], double* rms_out,
                                           int* converged_out) {
  return guard([&] {
    require(session, "session");
    require(offset_xyz_rpy, "offset_xyz_rpy");
    const df::Offset6 o = Eigen::Map<const df::Offset6>(offset_xyz_rpy);
    const df::RetargetResult& r = session->session.set_offset(o);
    if (rms_out != nullptr) *rms_out = r.rms;
    if (converged_out != nullptr) *converged_out = r.converged ? 1 : 0;
  });
}

dexforge_status dexforge_session_step_frame(dexforge_session* session, int delta, int* frame_out) {
  return guard([&] {
    require(session, "session");
    session->session.step_frame(delta);
    if (frame_out != nullptr) *frame_out = session->session.cursor();
  });
}

dexforge_status dexforge_session_solve_all(dexforge_session* session, double* convergence_rate_out) {
  return guard([&] {
    require(session, "session");
    const df::TrajectoryRetarget t = session->session.solve_all();
    if (convergence_rate_out != nullptr) *convergence_rate_out = t.convergence_rate;
  });
}

dexforge_status dexforge_session_save_profile(dexforge_session* session, const char* path) {
  return guard([&] {
    require(session, "session");
    require(path, "path");
    session->session.save_profile(path);
  });
}

dexforge_status dexforge_session_state_json(const dexforge_session* session, char** out_json) {
  return guard([&] {
    require(session, "session");
    require(out_json, "out_json");
    emit(out_json, df::view_state_to_json(session->session.render_state()));
  });
}

dexforge_status dexforge_session_log_json(const dexforge_session* session, char** out_json) {
  return guard([&] {
    require(session, "session");
    require(out_json, "out_json");
    emit(out_json, df::call_log_to_json(session->session.call_log()));
  });
}

// ---- HTTP service ----

dexforge_status dexforge_server_create(dexforge_server** out) {
  return guard([&] {
    require(out, "out");
    *out = new dexforge_server{};
  });
}

void dexforge_server_free(dexforge_server* server) { delete server; }

dexforge_status dexforge_server_bind(dexforge_server* server, int port, int* bound_port) {
  return guard([&] {
    require(server, "server");
    if (port < 0 || port > 65535) throw ArgError{"port out of range"};
    const int bound = server->server.bind(port);
    if (bound_port != nullptr) *bound_port = bound;
  });
}

dexforge_status dexforge_server_listen(dexforge_server* server) {
  return guard([&] {
    require(server, "server");
    server->server.listen();
  });
}

void dexforge_server_stop(dexforge_server* server) {
  if (server != nullptr) server->server.stop();
}

}  // extern "C"
