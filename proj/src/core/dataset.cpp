#include "dexforge/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>

#include <openssl/evp.h>

#include "dexforge/error.hpp"
#include "dexforge/json_util.hpp"

namespace dexforge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kActionsMagic[4] = {'D', 'X', 'A', 'C'};

std::string percent(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g%%", 100.0 * rate);
  return buf;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in[at + k])) << (8 * k);
  return v;
}

std::string sha256_of(const std::string& bytes) {
  return sha256_hex(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
}

[[noreturn]] void corrupt(const std::string& dir, const std::string& what) {
  throw Error(ErrorCode::kCorruptShard, "shard " + dir + ": " + what);
}

std::string encode_actions(const Trajectory& traj) {
  std::string out(kActionsMagic, 4);
  put_u32(out, kShardVersion);
  put_u32(out, static_cast<std::uint32_t>(traj.frames.size()));
  auto append = [&](const FaasVector& v) {
    const std::vector<std::uint8_t> bytes = faas_to_bytes(v);
    out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  };
  for (const Frame& f : traj.frames) append(f.proprio);
  for (const FaasVector& a : traj.actions) append(a);
  return out;
}

}  // namespace

const char* source_name(DataSource source) { return source == DataSource::kHuman ? "human" : "robot"; }

DataSource parse_source(const std::string& text) {
  if (text == "human") return DataSource::kHuman;
  if (text == "robot") return DataSource::kRobot;
  throw Error(ErrorCode::kParse, "unknown data source '" + text + "'");
}

std::string sha256_hex(const std::uint8_t* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data, size, digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kInternal, "sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string Trajectory::add_cloud(const PointCloud& cloud) {
  const std::vector<std::uint8_t> bytes = cloud_to_bytes(cloud);
  std::string ref = sha256_hex(bytes.data(), bytes.size());
  // Stored as it reads back, so the in-memory store matches the shard exactly.
  clouds.try_emplace(ref, cloud_from_bytes(bytes.data(), bytes.size()));
  return ref;
}

double Trajectory::convergence_rate() const {
  if (frames.empty()) return 0.0;
  const auto ok = std::count_if(frames.begin(), frames.end(), [](const Frame& f) { return f.converged; });
  return static_cast<double>(ok) / static_cast<double>(frames.size());
}

void Trajectory::validate() const {
  auto fail = [&](const std::string& what) { throw Error(ErrorCode::kValidation, "trajectory '" + id + "': " + what); };
  if (frames.empty()) fail("has no frames");
  if (actions.size() != frames.size()) {
    fail(std::to_string(actions.size()) + " actions for " + std::to_string(frames.size()) + " frames");
  }
  if (!(fps > 0.0) || !std::isfinite(fps)) fail("fps must be positive");
  if (segment_start < 0 || segment_end < segment_start) fail("segment must satisfy 0 <= start <= end");
  const FaasMask& mask = frames.front().proprio.mask;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    if (i > 0 && f.t <= frames[i - 1].t) fail("frame indices must increase (frame " + std::to_string(i) + ")");
    if (!f.cloud_ref.empty() && !clouds.count(f.cloud_ref)) fail("cloud_ref " + f.cloud_ref + " does not resolve");
    if (f.action_chunk_ref < 0 || f.action_chunk_ref >= static_cast<int>(actions.size())) {
      fail("action_chunk_ref out of range at frame " + std::to_string(i));
    }
    if (f.proprio.mask != mask) fail("proprio mask differs at frame " + std::to_string(i));
  }
  for (const FaasVector& a : actions) {
    if (a.mask != mask) fail("action mask differs from the proprio mask");
  }
}

void write_trajectory(const Trajectory& traj, const std::string& dir) {
  traj.validate();
  const std::string actions = encode_actions(traj);
  json index;
  index["version"] = kShardVersion;
  index["id"] = traj.id;
  index["hand_id"] = traj.hand_id;
  index["source"] = source_name(traj.source);
  index["fps"] = traj.fps;
  index["valid"] = traj.valid;
  index["segment"] = {traj.segment_start, traj.segment_end};
  index["actions_sha256"] = sha256_of(actions);
  index["frames"] = json::array();
  for (const Frame& f : traj.frames) {
    index["frames"].push_back({{"t", f.t},
                               {"cloud_ref", f.cloud_ref},
                               {"instruction", f.instruction},
                               {"action_chunk_ref", f.action_chunk_ref},
                               {"converged", f.converged}});
  }
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "clouds", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create shard directory " + dir + ": " + ec.message());
  std::set<std::string> referenced;
  for (const Frame& f : traj.frames) {
    if (!f.cloud_ref.empty()) referenced.insert(f.cloud_ref);
  }
  for (const std::string& ref : referenced) {
    const std::vector<std::uint8_t> bytes = cloud_to_bytes(traj.clouds.at(ref));
    write_text_file((fs::path(dir) / "clouds" / ref).string(), std::string(bytes.begin(), bytes.end()));
  }
  write_text_file((fs::path(dir) / "actions.bin").string(), actions);
  write_text_file((fs::path(dir) / "index.json").string(), index.dump(1) + "\n");
}

Trajectory read_trajectory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, "shard directory " + dir + " does not exist");
  json index;
  try {
    index = json::parse(read_text_file((fs::path(dir) / "index.json").string()));
  } catch (const json::exception& e) {
    corrupt(dir, std::string("index.json: ") + e.what());
  }
  Trajectory traj;
  try {
    const int version = index.at("version").get<int>();
    if (version != kShardVersion) {
      throw Error(ErrorCode::kVersionMismatch, "shard " + dir + " has version " + std::to_string(version) +
                                                   ", expected " + std::to_string(kShardVersion));
    }
    traj.id = index.at("id").get<std::string>();
    traj.hand_id = index.at("hand_id").get<std::string>();
    traj.source = parse_source(index.at("source").get<std::string>());
    traj.fps = index.at("fps").get<double>();
    traj.valid = index.at("valid").get<bool>();
    traj.segment_start = index.at("segment").at(0).get<int>();
    traj.segment_end = index.at("segment").at(1).get<int>();
    for (const json& jf : index.at("frames")) {
      Frame f;
      f.t = jf.at("t").get<int>();
      f.cloud_ref = jf.at("cloud_ref").get<std::string>();
      f.instruction = jf.at("instruction").get<std::string>();
      f.action_chunk_ref = jf.at("action_chunk_ref").get<int>();
      f.converged = jf.at("converged").get<bool>();
      traj.frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    corrupt(dir, std::string("index.json: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParse) corrupt(dir, e.what());
    throw;
  }

  const std::string actions = read_text_file((fs::path(dir) / "actions.bin").string());
  if (sha256_of(actions) != index.at("actions_sha256").get<std::string>()) corrupt(dir, "actions.bin checksum mismatch");
  if (actions.size() < 12 || std::memcmp(actions.data(), kActionsMagic, 4) != 0) corrupt(dir, "actions.bin header");
  if (get_u32(actions, 4) != static_cast<std::uint32_t>(kShardVersion)) {
    throw Error(ErrorCode::kVersionMismatch, "shard " + dir + ": actions.bin version " + std::to_string(get_u32(actions, 4)));
  }
  const std::size_t n = get_u32(actions, 8);
  if (n != traj.frames.size() || actions.size() != 12 + 2 * n * kFaasWireBytes) corrupt(dir, "actions.bin length");
  try {
    const auto* base = reinterpret_cast<const std::uint8_t*>(actions.data()) + 12;
    for (std::size_t i = 0; i < n; ++i) traj.frames[i].proprio = faas_from_bytes(base + i * kFaasWireBytes, kFaasWireBytes);
    for (std::size_t i = 0; i < n; ++i) {
      traj.actions.push_back(faas_from_bytes(base + (n + i) * kFaasWireBytes, kFaasWireBytes));
    }
  } catch (const Error& e) {
    corrupt(dir, e.what());
  }

  for (const Frame& f : traj.frames) {
    if (f.cloud_ref.empty() || traj.clouds.count(f.cloud_ref)) continue;
    const fs::path blob = fs::path(dir) / "clouds" / f.cloud_ref;
    if (!fs::exists(blob)) corrupt(dir, "missing cloud blob " + f.cloud_ref);
    const std::string bytes = read_text_file(blob.string());
    if (sha256_of(bytes) != f.cloud_ref) corrupt(dir, "cloud blob " + f.cloud_ref + " checksum mismatch");
    try {
      traj.clouds.emplace(f.cloud_ref,
                          cloud_from_bytes(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
    } catch (const Error& e) {
      corrupt(dir, e.what());
    }
  }
  try {
    traj.validate();
  } catch (const Error& e) {
    corrupt(dir, e.what());
  }
  return traj;
}

Trajectory trajectory_from_retarget(const HandModel& model, const std::string& id, DataSource source, double fps,
                                    const std::vector<Pose>& wrists, const TrajectoryRetarget& solved,
                                    const std::vector<std::string>& instructions) {
  const std::size_t n = solved.frames.size();
  if (wrists.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::to_string(wrists.size()) + " wrist poses for " + std::to_string(n) + " solved frames");
  }
  if (!instructions.empty() && instructions.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "instruction count differs from the frame count");
  }
  Trajectory traj;
  traj.id = id;
  traj.hand_id = model.name();
  traj.source = source;
  traj.fps = fps;
  traj.segment_end = static_cast<int>(n);
  std::vector<FaasVector> states;
  for (std::size_t t = 0; t < n; ++t) states.push_back(encode_state(model, model.side(), wrists[t], solved.frames[t].q));
  for (std::size_t t = 0; t < n; ++t) {
    Frame f;
    f.t = static_cast<int>(t);
    f.instruction = instructions.empty() ? std::string() : instructions[t];
    f.proprio = states[t];
    f.action_chunk_ref = static_cast<int>(t);
    f.converged = solved.frames[t].converged;
    traj.frames.push_back(std::move(f));
    traj.actions.push_back(states[std::min(t + 1, n - 1)]);
  }
  return traj;
}

Trajectory downsample_motion(const Trajectory& traj, double target_fps) {
  if (!(target_fps > 0.0) || target_fps > traj.fps || !std::isfinite(target_fps)) {
    throw Error(ErrorCode::kInvalidRate, "target fps " + std::to_string(target_fps) + " is not in (0, " +
                                             std::to_string(traj.fps) + "]");
  }
  const double ratio = traj.fps / target_fps;
  Trajectory out = traj;
  out.fps = target_fps;
  out.frames.clear();
  out.actions.clear();
  out.clouds.clear();
  for (long k = 0;; ++k) {
    const long i = std::lround(static_cast<double>(k) * ratio);
    if (i >= static_cast<long>(traj.frames.size())) break;
    Frame f = traj.frames[static_cast<std::size_t>(i)];
    f.t = static_cast<int>(out.frames.size());
    f.action_chunk_ref = f.t;
    if (!f.cloud_ref.empty()) out.clouds.try_emplace(f.cloud_ref, traj.clouds.at(f.cloud_ref));
    out.actions.push_back(traj.actions[static_cast<std::size_t>(i)]);
    out.frames.push_back(std::move(f));
  }
  return out;
}

std::vector<ChunkTarget> build_chunks(const Trajectory& traj, int horizon, const HandModel& model) {
  if (horizon < 1) throw Error(ErrorCode::kInvalidArgument, "chunk horizon must be at least 1");
  const int n = static_cast<int>(traj.actions.size());
  std::vector<Pose> wrists;
  std::vector<Eigen::VectorXd> joints;
  for (const FaasVector& a : traj.actions) {
    DecodedState s = decode_state(a, model, model.side());
    wrists.push_back(s.wrist);
    joints.push_back(std::move(s.q));
  }
  std::vector<ChunkTarget> out;
  out.reserve(traj.frames.size());
  for (const Frame& f : traj.frames) {
    ChunkTarget target;
    std::vector<Pose> w;
    std::vector<Eigen::VectorXd> q;
    for (int k = 0; k < horizon; ++k) {
      const int row = f.action_chunk_ref + k;
      target.pad.push_back(row >= n);
      const int idx = std::min(row, n - 1);
      w.push_back(wrists[static_cast<std::size_t>(idx)]);
      q.push_back(joints[static_cast<std::size_t>(idx)]);
    }
    target.base = w.front();
    target.chunk = encode_chunk(w, q, model, model.side());
    out.push_back(std::move(target));
  }
  return out;
}

MixStream::MixStream(int human_count, int robot_count, const MixSpec& spec, int batch_size)
    : spec_(spec), batch_size_(batch_size), rng_(spec.seed) {
  spec_.human_count = human_count;
  spec_.robot_count = robot_count;
  batches_per_epoch_ = (human_count + robot_count + batch_size - 1) / batch_size;
  for (int i = 0; i < human_count; ++i) human_queue_.push_back(i);
  for (int i = 0; i < robot_count; ++i) robot_queue_.push_back(i);
  std::shuffle(human_queue_.begin(), human_queue_.end(), rng_);
  std::shuffle(robot_queue_.begin(), robot_queue_.end(), rng_);
}

MixItem MixStream::draw() {
  const double wh = spec_.human_weight * spec_.human_count;
  const double wr = spec_.robot_weight * spec_.robot_count;
  const bool human = std::uniform_real_distribution<double>(0.0, wh + wr)(rng_) < wh;
  std::vector<int>& queue = human ? human_queue_ : robot_queue_;
  std::size_t& pos = human ? human_pos_ : robot_pos_;
  if (pos == queue.size()) {
    std::shuffle(queue.begin(), queue.end(), rng_);
    pos = 0;
  }
  return {human ? DataSource::kHuman : DataSource::kRobot, queue[pos++]};
}

std::vector<MixItem> MixStream::next_batch() {
  std::vector<MixItem> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  for (int b = 0; b < batch_size_; ++b) {
    batch.push_back(draw());
    (batch.back().source == DataSource::kHuman ? current_.human : current_.robot)++;
  }
  if (++batches_in_epoch_ == batches_per_epoch_) {
    histograms_.push_back(current_);
    current_ = {};
    batches_in_epoch_ = 0;
  }
  return batch;
}

MixStream mix_batches(const std::vector<Trajectory>& human_set, const std::vector<Trajectory>& robot_set,
                      const MixSpec& spec, int batch_size) {
  if (spec.human_count < 0 || spec.robot_count < 0) throw Error(ErrorCode::kInvalidArgument, "mix counts must be >= 0");
  if (!(spec.human_weight >= 0.0) || !(spec.robot_weight >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "mix weights must be >= 0");
  }
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be at least 1");
  if (static_cast<int>(human_set.size()) < spec.human_count) {
    throw Error(ErrorCode::kInsufficientData, "mix asks for " + std::to_string(spec.human_count) +
                                                  " human trajectories but only " +
                                                  std::to_string(human_set.size()) + " are available");
  }
  if (static_cast<int>(robot_set.size()) < spec.robot_count) {
    throw Error(ErrorCode::kInsufficientData, "mix asks for " + std::to_string(spec.robot_count) +
                                                  " robot trajectories but only " +
                                                  std::to_string(robot_set.size()) + " are available");
  }
  if (spec.human_weight * spec.human_count + spec.robot_weight * spec.robot_count <= 0.0) {
    throw Error(ErrorCode::kInsufficientData, "mix has nothing to draw");
  }
  return MixStream(spec.human_count, spec.robot_count, spec, batch_size);
}

FilterResult filter_invalid(const std::vector<Trajectory>& trajs, const FilterConfig& cfg) {
  FilterResult out;
  for (const Trajectory& t : trajs) {
    std::vector<std::string> reasons;
    const int len = static_cast<int>(t.frames.size());
    if (!t.valid) reasons.push_back("marked invalid");
    if (len < cfg.min_length) reasons.push_back("length " + std::to_string(len) + " < " + std::to_string(cfg.min_length));
    if (cfg.max_length > 0 && len > cfg.max_length) {
      reasons.push_back("length " + std::to_string(len) + " > " + std::to_string(cfg.max_length));
    }
    const double rate = t.convergence_rate();
    if (len > 0 && rate < cfg.min_convergence) {
      reasons.push_back("convergence " + percent(rate) + " < " + percent(cfg.min_convergence));
    }
    if (reasons.empty()) {
      out.kept.push_back(t);
      continue;
    }
    std::string joined = reasons.front();
    for (std::size_t i = 1; i < reasons.size(); ++i) joined += "; " + reasons[i];
    out.dropped.push_back({t.id, joined});
  }
  return out;
}

DatasetStats dataset_stats(const std::vector<Trajectory>& trajs) {
  DatasetStats s;
  s.trajectories = static_cast<int>(trajs.size());
  double conv = 0.0;
  for (const Trajectory& t : trajs) {
    (t.source == DataSource::kHuman ? s.human : s.robot)++;
    s.frames += static_cast<int>(t.frames.size());
    s.clouds += static_cast<int>(t.clouds.size());
    conv += t.convergence_rate();
  }
  if (!trajs.empty()) s.mean_convergence = conv / static_cast<double>(trajs.size());
  return s;
}

std::string dataset_stats_json(const DatasetStats& stats) {
  return json{{"trajectories", stats.trajectories}, {"human", stats.human},
              {"robot", stats.robot},               {"frames", stats.frames},
              {"clouds", stats.clouds},             {"mean_convergence", stats.mean_convergence}}
      .dump(1);
}

}  // namespace dexforge
