#include "dexforge/pointcloud.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include "json.hpp"

#include "dexforge/error.hpp"
#include "dexforge/json_util.hpp"
#include "dexforge/kinematics.hpp"

namespace dexforge {

namespace {

void write_binary(const std::string& path, const std::string& header, const std::uint8_t* data, std::size_t size) {
  std::string blob = header;
  blob.append(reinterpret_cast<const char*>(data), size);
  write_text_file(path, blob);
}

// Netpbm header: magic, then width, height, maxval separated by whitespace and #-comments,
// then exactly one whitespace byte before the raster.
struct NetpbmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  std::size_t raster = 0;
};

NetpbmHeader parse_netpbm(const std::string& blob, const std::string& path) {
  NetpbmHeader h;
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < blob.size()) {
      if (blob[pos] == '#') {
        while (pos < blob.size() && blob[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(blob[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip();
    const std::size_t start = pos;
    while (pos < blob.size() && !std::isspace(static_cast<unsigned char>(blob[pos])) && blob[pos] != '#') ++pos;
    return blob.substr(start, pos - start);
  };
  auto number = [&] {
    const std::string t = token();
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(ErrorCode::kParse, path + ": malformed netpbm header");
    }
    return std::stoi(t);
  };
  h.magic = token();
  h.width = number();
  h.height = number();
  h.maxval = number();
  if (pos >= blob.size()) throw Error(ErrorCode::kParse, path + ": truncated netpbm header");
  h.raster = pos + 1;
  if (h.width < 1 || h.height < 1 || h.maxval < 1 || h.maxval > 65535) {
    throw Error(ErrorCode::kParse, path + ": bad netpbm dimensions");
  }
  return h;
}

Eigen::Vector3d unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d d;
  do {
    d = Eigen::Vector3d(n(rng), n(rng), n(rng));
  } while (d.norm() < 1e-12);
  return d.normalized();
}

Eigen::Vector3d sample_primitive(const VisualPrimitive& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (p.type) {
    case PrimitiveType::kSphere:
      return p.radius * unit_vector(rng);
    case PrimitiveType::kBox: {
      const Eigen::Vector3d& s = p.size;
      const double areas[3] = {s.y() * s.z(), s.x() * s.z(), s.x() * s.y()};
      double pick = u(rng) * (areas[0] + areas[1] + areas[2]);
      int axis = 0;
      while (axis < 2 && pick >= areas[axis]) pick -= areas[axis++];
      Eigen::Vector3d point;
      for (int k = 0; k < 3; ++k) point[k] = (u(rng) - 0.5) * s[k];
      point[axis] = (u(rng) < 0.5 ? -0.5 : 0.5) * s[axis];
      return point;
    }
    case PrimitiveType::kCapsule: {
      const double side = 2.0 * std::numbers::pi * p.radius * p.length;
      const double caps = 4.0 * std::numbers::pi * p.radius * p.radius;
      if (u(rng) * (side + caps) < side) {
        const double theta = 2.0 * std::numbers::pi * u(rng);
        return {p.radius * std::cos(theta), p.radius * std::sin(theta), (u(rng) - 0.5) * p.length};
      }
      const Eigen::Vector3d d = unit_vector(rng);
      const double center = d.z() >= 0.0 ? 0.5 * p.length : -0.5 * p.length;
      return Eigen::Vector3d(0.0, 0.0, center) + p.radius * d;
    }
  }
  throw Error(ErrorCode::kInternal, "unknown primitive type");
}

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T take(const std::uint8_t*& cursor) {
  T value;
  std::memcpy(&value, cursor, sizeof(T));
  cursor += sizeof(T);
  return value;
}

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    throw Error(ErrorCode::kInvalidArgument, "intrinsics: fx and fy must be positive");
  }
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw Error(ErrorCode::kInvalidArgument, "intrinsics: non-finite principal point");
  if (width < 1 || height < 1) throw Error(ErrorCode::kInvalidArgument, "intrinsics: width and height must be >= 1");
  if (!(depth_scale > 0.0) || !std::isfinite(depth_scale)) {
    throw Error(ErrorCode::kInvalidArgument, "intrinsics: depth_scale must be positive");
  }
}

RgbdFrame RgbdFrame::blank(const CameraIntrinsics& intrinsics) {
  intrinsics.validate();
  RgbdFrame f;
  f.intrinsics = intrinsics;
  const auto n = static_cast<std::size_t>(intrinsics.width) * static_cast<std::size_t>(intrinsics.height);
  f.color.assign(3 * n, 0);
  f.depth.assign(n, 0);
  return f;
}

Rgb RgbdFrame::rgb(int u, int v) const {
  const std::size_t i = 3 * index(u, v);
  return {color[i], color[i + 1], color[i + 2]};
}

void RgbdFrame::set_rgb(int u, int v, const Rgb& c) {
  const std::size_t i = 3 * index(u, v);
  color[i] = c[0];
  color[i + 1] = c[1];
  color[i + 2] = c[2];
}

void RgbdFrame::validate() const {
  intrinsics.validate();
  const auto n = static_cast<std::size_t>(width()) * static_cast<std::size_t>(height());
  if (color.size() != 3 * n || depth.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "frame buffers do not match " + std::to_string(width()) + "x" +
                                                   std::to_string(height()));
  }
}

PixelMask PixelMask::empty(int width, int height) {
  PixelMask m;
  m.width = width;
  m.height = height;
  m.data.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  return m;
}

PointCloud unproject(const RgbdFrame& frame, const PixelMask* mask) {
  frame.validate();
  if (mask && (mask->width != frame.width() || mask->height != frame.height())) {
    throw Error(ErrorCode::kDimensionMismatch, "mask is " + std::to_string(mask->width) + "x" +
                                                   std::to_string(mask->height) + ", frame is " +
                                                   std::to_string(frame.width()) + "x" + std::to_string(frame.height()));
  }
  const CameraIntrinsics& k = frame.intrinsics;
  PointCloud cloud;
  for (int v = 0; v < frame.height(); ++v) {
    for (int u = 0; u < frame.width(); ++u) {
      const std::uint16_t d = frame.depth[frame.index(u, v)];
      if (d == 0 || (mask && mask->at(u, v))) continue;
      const double z = d * k.depth_scale;
      Point p;
      p.xyz = {z * (u - k.cx) / k.fx, z * (v - k.cy) / k.fy, z};
      p.rgb = frame.rgb(u, v);
      p.pixel = std::array<int, 2>{u, v};
      cloud.points.push_back(p);
    }
  }
  return cloud;
}

PointCloud remove_hand_points(const PointCloud& cloud, const PixelMask& mask) {
  PointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    if (!p.pixel) throw Error(ErrorCode::kMissingProvenance, "point " + std::to_string(i) + " has no source pixel");
    const auto [u, v] = *p.pixel;
    if (u < 0 || v < 0 || u >= mask.width || v >= mask.height) {
      throw Error(ErrorCode::kDimensionMismatch, "point " + std::to_string(i) + " source pixel lies outside the mask");
    }
    if (!mask.at(u, v)) out.points.push_back(p);
  }
  return out;
}

double primitive_area(const VisualPrimitive& p) {
  switch (p.type) {
    case PrimitiveType::kSphere:
      return 4.0 * std::numbers::pi * p.radius * p.radius;
    case PrimitiveType::kBox:
      return 2.0 * (p.size.x() * p.size.y() + p.size.y() * p.size.z() + p.size.x() * p.size.z());
    case PrimitiveType::kCapsule:
      return 2.0 * std::numbers::pi * p.radius * p.length + 4.0 * std::numbers::pi * p.radius * p.radius;
  }
  return 0.0;
}

PointCloud sample_hand_surface(const HandModel& model, const Eigen::VectorXd& q, const Pose& world_dummy,
                               const Pose& offset, const SurfaceSampling& sampling, std::vector<int>* link_of) {
  if (!(sampling.density >= 0.0) || !std::isfinite(sampling.density)) {
    throw Error(ErrorCode::kInvalidArgument, "surface density must be finite and non-negative");
  }
  const FkResult fk = forward_kinematics(model, q, world_dummy, offset);
  PointCloud cloud;
  if (link_of) link_of->clear();
  for (std::size_t l = 0; l < model.links().size(); ++l) {
    const Link& link = model.links()[l];
    if (!link.visual) {
      if (sampling.strict) throw Error(ErrorCode::kNoGeometry, "link '" + link.name + "' has no visual primitive");
      continue;
    }
    // Per-link stream so one link's samples do not depend on the others.
    std::mt19937_64 rng(sampling.seed ^ (0x9e3779b97f4a7c15ULL * (l + 1)));
    const Pose pose = fk.link_poses[l] * link.visual->origin;
    const auto count = std::lround(sampling.density * primitive_area(*link.visual));
    for (long i = 0; i < count; ++i) {
      Point p;
      p.xyz = pose * sample_primitive(*link.visual, rng);
      p.rgb = link.color;
      p.origin = PointOrigin::kRobotHand;
      cloud.points.push_back(p);
      if (link_of) link_of->push_back(static_cast<int>(l));
    }
  }
  return cloud;
}

RgbdFrame reproject(const PointCloud& cloud, const CameraIntrinsics& intrinsics) {
  RgbdFrame frame = RgbdFrame::blank(intrinsics);
  std::vector<double> zbuf(frame.depth.size(), std::numeric_limits<double>::infinity());
  for (const Point& p : cloud.points) {
    const double z = p.xyz.z();
    if (!(z > 0.0) || !p.xyz.allFinite()) continue;
    const double uf = intrinsics.fx * p.xyz.x() / z + intrinsics.cx;
    const double vf = intrinsics.fy * p.xyz.y() / z + intrinsics.cy;
    if (!(uf > -0.5 && vf > -0.5 && uf < intrinsics.width - 0.5 && vf < intrinsics.height - 0.5)) continue;
    const long units = std::lround(z / intrinsics.depth_scale);
    if (units < 1 || units > 65535) continue;
    const int u = static_cast<int>(std::lround(uf));
    const int v = static_cast<int>(std::lround(vf));
    const std::size_t i = frame.index(u, v);
    if (z < zbuf[i]) {
      zbuf[i] = z;
      frame.depth[i] = static_cast<std::uint16_t>(units);
      frame.set_rgb(u, v, p.rgb);
    }
  }
  return frame;
}

PointCloud crop_box(const PointCloud& cloud, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  PointCloud out;
  for (const Point& p : cloud.points) {
    if ((p.xyz.array() >= lo.array()).all() && (p.xyz.array() <= hi.array()).all()) out.points.push_back(p);
  }
  return out;
}

PointCloud downsample_fps(const PointCloud& cloud, int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "downsample_fps: n must be >= 1");
  const std::size_t total = cloud.size();
  PointCloud out;
  if (total == 0) return out;
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(n), total);
  std::mt19937_64 rng(seed);
  std::size_t current = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
  std::vector<double> nearest(total, std::numeric_limits<double>::infinity());
  out.points.reserve(want);
  for (std::size_t k = 0; k < want; ++k) {
    out.points.push_back(cloud.points[current]);
    nearest[current] = -1.0;
    std::size_t next = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < total; ++i) {
      if (nearest[i] < 0.0) continue;
      nearest[i] = std::min(nearest[i], (cloud.points[i].xyz - cloud.points[current].xyz).squaredNorm());
      if (nearest[i] > best) {
        best = nearest[i];
        next = i;
      }
    }
    current = next;
  }
  return out;
}

PointCloud downsample_voxel(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0)) throw Error(ErrorCode::kInvalidArgument, "voxel size must be positive");
  struct Cell {
    std::size_t first;
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    std::vector<std::size_t> members;
  };
  std::map<std::array<long long, 3>, Cell> cells;
  std::vector<std::array<long long, 3>> order;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3d& x = cloud.points[i].xyz;
    const std::array<long long, 3> key{static_cast<long long>(std::floor(x.x() / voxel_size)),
                                       static_cast<long long>(std::floor(x.y() / voxel_size)),
                                       static_cast<long long>(std::floor(x.z() / voxel_size))};
    auto [it, inserted] = cells.try_emplace(key, Cell{i, Eigen::Vector3d::Zero(), {}});
    if (inserted) order.push_back(key);
    it->second.sum += x;
    it->second.members.push_back(i);
  }
  PointCloud out;
  for (const auto& key : order) {
    const Cell& cell = cells.at(key);
    const Eigen::Vector3d centroid = cell.sum / static_cast<double>(cell.members.size());
    std::size_t best = cell.first;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i : cell.members) {
      const double d = (cloud.points[i].xyz - centroid).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    out.points.push_back(cloud.points[best]);
  }
  return out;
}

PointCloud compose_scene(const PointCloud& scene, const PointCloud& hand_samples) {
  PointCloud out;
  out.points.reserve(scene.size() + hand_samples.size());
  for (Point p : scene.points) {
    p.origin = PointOrigin::kScene;
    out.points.push_back(p);
  }
  for (Point p : hand_samples.points) {
    p.origin = PointOrigin::kRobotHand;
    out.points.push_back(p);
  }
  return out;
}

PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
  PointCloud out = cloud;
  for (Point& p : out.points) p.xyz = pose * p.xyz;
  return out;
}

void write_ppm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != 3 * static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorCode::kDimensionMismatch, "color buffer size does not match image size");
  }
  write_binary(path, "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n", rgb.data(), rgb.size());
}

std::vector<std::uint8_t> read_ppm(const std::string& path, int& width, int& height) {
  const std::string blob = read_text_file(path);
  const NetpbmHeader h = parse_netpbm(blob, path);
  if (h.magic != "P6" || h.maxval != 255) throw Error(ErrorCode::kParse, path + ": expected an 8-bit P6 image");
  const std::size_t n = 3 * static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height);
  if (blob.size() - h.raster < n) throw Error(ErrorCode::kParse, path + ": truncated raster");
  width = h.width;
  height = h.height;
  return std::vector<std::uint8_t>(blob.begin() + static_cast<std::ptrdiff_t>(h.raster),
                                   blob.begin() + static_cast<std::ptrdiff_t>(h.raster + n));
}

void write_pgm16(const std::string& path, int width, int height, const std::vector<std::uint16_t>& depth) {
  if (depth.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorCode::kDimensionMismatch, "depth buffer size does not match image size");
  }
  std::vector<std::uint8_t> raster(2 * depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    raster[2 * i] = static_cast<std::uint8_t>(depth[i] >> 8);
    raster[2 * i + 1] = static_cast<std::uint8_t>(depth[i] & 0xff);
  }
  write_binary(path, "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n", raster.data(),
               raster.size());
}

std::vector<std::uint16_t> read_pgm16(const std::string& path, int& width, int& height) {
  const std::string blob = read_text_file(path);
  const NetpbmHeader h = parse_netpbm(blob, path);
  if (h.magic != "P5" || h.maxval < 256) throw Error(ErrorCode::kParse, path + ": expected a 16-bit P5 image");
  const std::size_t n = static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height);
  if (blob.size() - h.raster < 2 * n) throw Error(ErrorCode::kParse, path + ": truncated raster");
  std::vector<std::uint16_t> depth(n);
  const auto* raster = reinterpret_cast<const std::uint8_t*>(blob.data() + h.raster);
  for (std::size_t i = 0; i < n; ++i) depth[i] = static_cast<std::uint16_t>((raster[2 * i] << 8) | raster[2 * i + 1]);
  width = h.width;
  height = h.height;
  return depth;
}

void write_mask_pgm(const std::string& path, const PixelMask& mask) {
  std::vector<std::uint8_t> raster(mask.data.size());
  for (std::size_t i = 0; i < raster.size(); ++i) raster[i] = mask.data[i] ? 255 : 0;
  write_binary(path, "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n",
               raster.data(), raster.size());
}

PixelMask read_mask_pgm(const std::string& path) {
  const std::string blob = read_text_file(path);
  const NetpbmHeader h = parse_netpbm(blob, path);
  if (h.magic != "P5" || h.maxval > 255) throw Error(ErrorCode::kParse, path + ": expected an 8-bit P5 mask");
  PixelMask m = PixelMask::empty(h.width, h.height);
  if (blob.size() - h.raster < m.data.size()) throw Error(ErrorCode::kParse, path + ": truncated raster");
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = blob[h.raster + i] != 0 ? 1 : 0;
  return m;
}

std::string intrinsics_to_json(const CameraIntrinsics& k) {
  return nlohmann::json{{"fx", k.fx},         {"fy", k.fy},         {"cx", k.cx},
                        {"cy", k.cy},         {"width", k.width},   {"height", k.height},
                        {"depth_scale", k.depth_scale}}
             .dump(2) +
         "\n";
}

CameraIntrinsics intrinsics_from_json(const std::string& text) {
  CameraIntrinsics k;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.depth_scale = j.value("depth_scale", kDefaultDepthScale);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("intrinsics: ") + e.what());
  }
  k.validate();
  return k;
}

RgbdFrame load_frame(const std::string& color_ppm, const std::string& depth_pgm, const std::string& intrinsics_json) {
  RgbdFrame f;
  f.intrinsics = intrinsics_from_json(read_text_file(intrinsics_json));
  int cw = 0, ch = 0, dw = 0, dh = 0;
  f.color = read_ppm(color_ppm, cw, ch);
  f.depth = read_pgm16(depth_pgm, dw, dh);
  if (cw != f.width() || ch != f.height() || dw != f.width() || dh != f.height()) {
    throw Error(ErrorCode::kDimensionMismatch, "color, depth and intrinsics disagree on the image size");
  }
  return f;
}

void save_frame(const RgbdFrame& frame, const std::string& color_ppm, const std::string& depth_pgm,
                const std::string& intrinsics_json) {
  frame.validate();
  write_ppm(color_ppm, frame.width(), frame.height(), frame.color);
  write_pgm16(depth_pgm, frame.width(), frame.height(), frame.depth);
  write_text_file(intrinsics_json, intrinsics_to_json(frame.intrinsics));
}

namespace {
constexpr char kCloudMagic[4] = {'D', 'X', 'P', 'C'};
constexpr std::uint32_t kCloudVersion = 1;
constexpr std::uint32_t kHasPixels = 1;
}  // namespace

std::vector<std::uint8_t> cloud_to_bytes(const PointCloud& cloud) {
  static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");
  const bool pixels = !cloud.empty() && std::all_of(cloud.points.begin(), cloud.points.end(),
                                                    [](const Point& p) { return p.pixel.has_value(); });
  std::vector<std::uint8_t> out(kCloudMagic, kCloudMagic + 4);
  put<std::uint32_t>(out, kCloudVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cloud.size()));
  put<std::uint32_t>(out, pixels ? kHasPixels : 0);
  for (const Point& p : cloud.points) {
    for (int k = 0; k < 3; ++k) put<float>(out, static_cast<float>(p.xyz[k]));
    out.insert(out.end(), p.rgb.begin(), p.rgb.end());
    out.push_back(static_cast<std::uint8_t>(p.origin));
    if (pixels) {
      put<std::int32_t>(out, (*p.pixel)[0]);
      put<std::int32_t>(out, (*p.pixel)[1]);
    }
  }
  return out;
}

PointCloud cloud_from_bytes(const std::uint8_t* data, std::size_t size) {
  if (size < 16 || std::memcmp(data, kCloudMagic, 4) != 0) throw Error(ErrorCode::kParse, "not a point cloud blob");
  const std::uint8_t* cursor = data + 4;
  const auto version = take<std::uint32_t>(cursor);
  if (version != kCloudVersion) throw Error(ErrorCode::kParse, "unsupported point cloud version " + std::to_string(version));
  const auto count = take<std::uint32_t>(cursor);
  const auto flags = take<std::uint32_t>(cursor);
  const bool pixels = (flags & kHasPixels) != 0;
  const std::size_t stride = 12 + 4 + (pixels ? 8 : 0);
  if (size != 16 + stride * count) throw Error(ErrorCode::kParse, "point cloud blob has the wrong length");
  PointCloud cloud;
  cloud.points.resize(count);
  for (Point& p : cloud.points) {
    for (int k = 0; k < 3; ++k) p.xyz[k] = take<float>(cursor);
    for (int k = 0; k < 3; ++k) p.rgb[static_cast<std::size_t>(k)] = *cursor++;
    const std::uint8_t origin = *cursor++;
    if (origin > 1) throw Error(ErrorCode::kParse, "point cloud blob has an unknown origin tag");
    p.origin = static_cast<PointOrigin>(origin);
    if (pixels) {
      const auto u = take<std::int32_t>(cursor);
      const auto v = take<std::int32_t>(cursor);
      p.pixel = std::array<int, 2>{u, v};
    }
    if (!p.xyz.allFinite()) throw Error(ErrorCode::kParse, "point cloud blob has non-finite coordinates");
  }
  return cloud;
}

}  // namespace dexforge
