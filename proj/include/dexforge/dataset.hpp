#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dexforge/faas.hpp"
#include "dexforge/hand_model.hpp"
#include "dexforge/pointcloud.hpp"
#include "dexforge/pose.hpp"
#include "dexforge/retarget.hpp"

namespace dexforge {

inline constexpr int kShardVersion = 1;

enum class DataSource { kHuman, kRobot };
const char* source_name(DataSource source);
DataSource parse_source(const std::string& text);

struct Frame {
  int t = 0;
  std::string cloud_ref;  // sha256 hex of the cloud's serialized bytes; empty when none
  std::string instruction;
  FaasVector proprio;
  int action_chunk_ref = 0;  // first row of this frame's chunk in the action table
  bool converged = true;     // retarget convergence flag

  bool operator==(const Frame&) const = default;
};

struct Trajectory {
  std::string id;
  std::string hand_id;
  DataSource source = DataSource::kHuman;
  double fps = 30.0;
  std::vector<Frame> frames;
  std::vector<FaasVector> actions;  // absolute FAAS targets, one per frame
  bool valid = true;
  int segment_start = 0;  // [start, end) in the parent recording
  int segment_end = 0;
  std::map<std::string, PointCloud> clouds;  // content-addressed store

  /// Serializes `cloud`, stores it under its hash and returns the reference.
  std::string add_cloud(const PointCloud& cloud);
  double convergence_rate() const;

  /// Throws Error{kValidation} naming the broken invariant.
  void validate() const;
};

std::string sha256_hex(const std::uint8_t* data, std::size_t size);

/// Shard directory: index.json, actions.bin, clouds/<sha256>. FAAS payloads are float32, so
/// values are stored rounded to float. Throws Error{kValidation}, Error{kIo}.
void write_trajectory(const Trajectory& traj, const std::string& dir);
/// Throws Error{kCorruptShard} on a checksum mismatch or malformed file, Error{kVersionMismatch},
/// Error{kIo} when the directory is missing.
Trajectory read_trajectory(const std::string& dir);

/// Builds a trajectory from a retargeted sequence: proprio_t encodes (wrist_t, q_t) and
/// action_t encodes the next state (the last frame repeats its own).
Trajectory trajectory_from_retarget(const HandModel& model, const std::string& id, DataSource source, double fps,
                                    const std::vector<Pose>& wrists, const TrajectoryRetarget& solved,
                                    const std::vector<std::string>& instructions = {});

/// Keeps frames lround(k · fps / target_fps) for k = 0, 1, ... Throws Error{kInvalidRate} when
/// target_fps is not in (0, fps].
Trajectory downsample_motion(const Trajectory& traj, double target_fps);

struct ChunkTarget {
  ActionChunk chunk;       // wrist relative to step 0
  std::vector<bool> pad;   // true for steps past the last action
  Pose base;               // absolute wrist of step 0
};

/// Frame t covers actions t..t+H−1, tail padded by repeating the last action.
/// Throws Error{kInvalidArgument} when H < 1.
std::vector<ChunkTarget> build_chunks(const Trajectory& traj, int horizon, const HandModel& model);

struct MixSpec {
  int human_count = 0;
  int robot_count = 0;
  double human_weight = 1.0;  // per-trajectory sampling weight
  double robot_weight = 1.0;
  std::uint64_t seed = 0;
};

struct MixItem {
  DataSource source;
  int index;  // into the corresponding input set

  bool operator==(const MixItem&) const = default;
};

struct SourceHistogram {
  int human = 0;
  int robot = 0;
};

/// Endless batch stream. Each draw picks a source with probability proportional to
/// weight × count, then pops that source's shuffled queue, reshuffling it when exhausted.
class MixStream {
 public:
  MixStream(int human_count, int robot_count, const MixSpec& spec, int batch_size);

  std::vector<MixItem> next_batch();
  /// ceil((h + r) / batch_size) batches.
  int batches_per_epoch() const { return batches_per_epoch_; }
  /// One entry per completed epoch.
  const std::vector<SourceHistogram>& epoch_histograms() const { return histograms_; }

 private:
  MixItem draw();

  MixSpec spec_;
  int batch_size_;
  int batches_per_epoch_;
  int batches_in_epoch_ = 0;
  SourceHistogram current_;
  std::vector<SourceHistogram> histograms_;
  std::mt19937_64 rng_;
  std::vector<int> human_queue_, robot_queue_;
  std::size_t human_pos_ = 0, robot_pos_ = 0;
};

/// Throws Error{kInsufficientData} when a set is smaller than its count or nothing can be drawn,
/// Error{kInvalidArgument} for negative counts or weights or batch_size < 1.
MixStream mix_batches(const std::vector<Trajectory>& human_set, const std::vector<Trajectory>& robot_set,
                      const MixSpec& spec, int batch_size);

struct FilterConfig {
  double min_convergence = 0.98;
  int min_length = 1;
  int max_length = 0;  // 0 disables
};

struct DroppedTrajectory {
  std::string id;
  std::string reason;
};

struct FilterResult {
  std::vector<Trajectory> kept;
  std::vector<DroppedTrajectory> dropped;
};

FilterResult filter_invalid(const std::vector<Trajectory>& trajs, const FilterConfig& cfg);

struct DatasetStats {
  int trajectories = 0;
  int human = 0;
  int robot = 0;
  int frames = 0;
  int clouds = 0;
  double mean_convergence = 0.0;
};

DatasetStats dataset_stats(const std::vector<Trajectory>& trajs);
std::string dataset_stats_json(const DatasetStats& stats);

}  // namespace dexforge
