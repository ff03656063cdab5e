#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dexforge/hand_model.hpp"
#include "dexforge/pose.hpp"

namespace dexforge {

inline constexpr double kDefaultDepthScale = 0.00025;  // meters per depth unit

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  double depth_scale = kDefaultDepthScale;

  /// Throws Error{kInvalidArgument}.
  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

using Rgb = std::array<std::uint8_t, 3>;

/// Row-major images; depth 0 marks an invalid pixel.
struct RgbdFrame {
  CameraIntrinsics intrinsics;
  std::vector<std::uint8_t> color;  // height × width × 3
  std::vector<std::uint16_t> depth; // height × width, depth units

  static RgbdFrame blank(const CameraIntrinsics& intrinsics);
  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * static_cast<std::size_t>(width()) + static_cast<std::size_t>(u); }
  Rgb rgb(int u, int v) const;
  void set_rgb(int u, int v, const Rgb& c);
  /// Throws Error{kDimensionMismatch} when buffer sizes disagree with the intrinsics.
  void validate() const;
};

/// true = human-hand pixel.
struct PixelMask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> data;  // 0 or 1, row-major

  static PixelMask empty(int width, int height);
  bool at(int u, int v) const { return data[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u)] != 0; }
  void set(int u, int v, bool value = true) {
    data[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u)] = value ? 1 : 0;
  }
};

enum class PointOrigin : std::uint8_t { kScene = 0, kRobotHand = 1 };

struct Point {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
  Rgb rgb{0, 0, 0};
  std::optional<std::array<int, 2>> pixel;  // (u, v) it was unprojected from
  PointOrigin origin = PointOrigin::kScene;
};

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// One point per pixel with depth > 0 and mask false. Throws Error{kDimensionMismatch}.
PointCloud unproject(const RgbdFrame& frame, const PixelMask* mask = nullptr);

/// Drops points whose source pixel is masked. Throws Error{kMissingProvenance} when a point has
/// no source pixel, Error{kDimensionMismatch} when a pixel lies outside the mask.
PointCloud remove_hand_points(const PointCloud& cloud, const PixelMask& mask);

struct SurfaceSampling {
  double density = 2.0e4;  // points per m²
  std::uint64_t seed = 0;
  bool strict = false;     // a link without a visual primitive raises Error{kNoGeometry}
};

/// Area-uniform samples on every link primitive, posed by forward_kinematics and colored per
/// link. `link_of`, when given, receives the link index of each point.
PointCloud sample_hand_surface(const HandModel& model, const Eigen::VectorXd& q, const Pose& world_dummy,
                               const Pose& offset, const SurfaceSampling& sampling,
                               std::vector<int>* link_of = nullptr);

/// Surface area of one primitive, m².
double primitive_area(const VisualPrimitive& primitive);

/// Pinhole projection with a z-buffer. Points with z <= 0, outside the image, or past the
/// 16-bit depth range are dropped.
RgbdFrame reproject(const PointCloud& cloud, const CameraIntrinsics& intrinsics);

PointCloud crop_box(const PointCloud& cloud, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi);

/// Farthest-point sampling, min(n, N) points in selection order. The start index is drawn from
/// `seed`. Throws Error{kInvalidArgument} when n < 1.
PointCloud downsample_fps(const PointCloud& cloud, int n, std::uint64_t seed);

/// Keeps the point nearest each occupied voxel's centroid, in first-occurrence order.
PointCloud downsample_voxel(const PointCloud& cloud, double voxel_size);

/// Scene points tagged kScene followed by hand points tagged kRobotHand.
PointCloud compose_scene(const PointCloud& scene, const PointCloud& hand_samples);

/// Rigid transform of every point (provenance and tags kept).
PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose);

// Fixture formats: PPM P6 color, PGM P5 16-bit big-endian depth, PGM P5 8-bit mask (255 = hand).
void write_ppm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_ppm(const std::string& path, int& width, int& height);
void write_pgm16(const std::string& path, int width, int height, const std::vector<std::uint16_t>& depth);
std::vector<std::uint16_t> read_pgm16(const std::string& path, int& width, int& height);
void write_mask_pgm(const std::string& path, const PixelMask& mask);
PixelMask read_mask_pgm(const std::string& path);

std::string intrinsics_to_json(const CameraIntrinsics& intrinsics);
CameraIntrinsics intrinsics_from_json(const std::string& text);

/// Color + depth + intrinsics sidecar; throws Error{kDimensionMismatch} on disagreeing sizes.
RgbdFrame load_frame(const std::string& color_ppm, const std::string& depth_pgm, const std::string& intrinsics_json);
void save_frame(const RgbdFrame& frame, const std::string& color_ppm, const std::string& depth_pgm,
                const std::string& intrinsics_json);

/// Compact binary cloud: "DXPC", version, count, flags, then per point xyz float32, rgb, origin
/// and (when every point has one) the source pixel as two int32.
std::vector<std::uint8_t> cloud_to_bytes(const PointCloud& cloud);
/// Throws Error{kParse}.
PointCloud cloud_from_bytes(const std::uint8_t* data, std::size_t size);

}  // namespace dexforge
