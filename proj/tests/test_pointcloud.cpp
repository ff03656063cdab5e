#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <numeric>
#include <numbers>
#include <set>

#include "dexforge/json_util.hpp"
#include "dexforge/pointcloud.hpp"
#include "test_support.hpp"

namespace dexforge {
namespace {

using testing::error_of;
using testing::load_fixture;
using testing::random_pose;
using testing::random_q;

CameraIntrinsics cam100(double depth_scale = 0.001) {
  CameraIntrinsics k;
  k.fx = k.fy = 100.0;
  k.cx = k.cy = 50.0;
  k.width = 200;
  k.height = 100;
  k.depth_scale = depth_scale;
  return k;
}

// Synthetic scene: tilted plane with a bump, random colors, some invalid pixels.
RgbdFrame synthetic_frame(std::mt19937_64& rng, int width = 64, int height = 48) {
  CameraIntrinsics k;
  k.fx = 60.0;
  k.fy = 62.0;
  k.cx = 31.5;
  k.cy = 24.0;
  k.width = width;
  k.height = height;
  RgbdFrame f = RgbdFrame::blank(k);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int v = 0; v < height; ++v) {
    for (int x = 0; x < width; ++x) {
      const double z = 0.8 + 0.004 * x + 0.002 * v + 0.1 * std::exp(-0.01 * ((x - 30) * (x - 30) + (v - 20) * (v - 20)));
      f.depth[f.index(x, v)] = u(rng) < 0.05 ? 0 : static_cast<std::uint16_t>(std::lround(z / k.depth_scale));
      f.set_rgb(x, v, {static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
                       static_cast<std::uint8_t>(byte(rng))});
    }
  }
  return f;
}

PixelMask random_mask(std::mt19937_64& rng, int width, int height) {
  PixelMask m = PixelMask::empty(width, height);
  std::bernoulli_distribution b(0.3);
  for (auto& px : m.data) px = b(rng) ? 1 : 0;
  return m;
}

bool same_points(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.points[i].xyz != b.points[i].xyz || a.points[i].rgb != b.points[i].rgb ||
        a.points[i].pixel != b.points[i].pixel || a.points[i].origin != b.points[i].origin) {
      return false;
    }
  }
  return true;
}

Point at(double x, double y, double z, Rgb rgb = {0, 0, 0}) {
  Point p;
  p.xyz = {x, y, z};
  p.rgb = rgb;
  return p;
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dexforge_pointcloud_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// A hand whose only geometry is a unit sphere at the base origin.
constexpr const char* kSphereHand = R"({
  "name": "ball", "side": "right",
  "links": [
    {"name": "base", "visual": {"type": "sphere", "radius": 1.0}},
    {"name": "tip"}
  ],
  "joints": [
    {"name": "j", "parent": "base", "child": "tip", "origin": {"xyz": [0, 0, 1]}, "axis": [0, 0, 1],
     "limits": {"lower": -1, "upper": 1}}
  ],
  "fingertips": ["tip"],
  "faas_map": {"j": 0}
})";

constexpr const char* kBoxHand = R"({
  "name": "brick", "side": "right",
  "links": [
    {"name": "base", "visual": {"type": "box", "size": [0.2, 0.1, 0.05], "origin": {"xyz": [0.01, 0.02, 0.03], "rpy": [0.1, 0.2, 0.3]}}},
    {"name": "tip", "visual": {"type": "sphere", "radius": 0.01}}
  ],
  "joints": [
    {"name": "j", "parent": "base", "child": "tip", "origin": {"xyz": [0, 0, 0.1]}, "axis": [1, 0, 0],
     "limits": {"lower": -1, "upper": 1}}
  ],
  "fingertips": ["tip"],
  "faas_map": {"j": 0}
})";

TEST(Unproject, PrincipalPointAndSimilarTriangles) {
  RgbdFrame f = RgbdFrame::blank(cam100());
  f.depth[f.index(50, 50)] = 1000;
  f.depth[f.index(150, 50)] = 2000;
  f.set_rgb(150, 50, {1, 2, 3});
  const PointCloud c = unproject(f);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[0].xyz, Eigen::Vector3d(0, 0, 1));
  EXPECT_EQ(c.points[1].xyz, Eigen::Vector3d(2, 0, 2));
  EXPECT_EQ(c.points[1].rgb, (Rgb{1, 2, 3}));
  EXPECT_EQ(c.points[1].pixel, (std::array<int, 2>{150, 50}));
}

TEST(Unproject, MaskHandling) {
  std::mt19937_64 rng(601);
  const RgbdFrame f = synthetic_frame(rng);
  PixelMask all = PixelMask::empty(f.width(), f.height());
  std::fill(all.data.begin(), all.data.end(), 1);
  EXPECT_TRUE(unproject(f, &all).empty());
  const PixelMask wrong = PixelMask::empty(f.width() + 1, f.height());
  EXPECT_EQ(error_of([&] { unproject(f, &wrong); }), ErrorCode::kDimensionMismatch);
  RgbdFrame bad = f;
  bad.depth.pop_back();
  EXPECT_EQ(error_of([&] { unproject(bad); }), ErrorCode::kDimensionMismatch);
}

TEST(RemoveHandPoints, EmptyMaskIsIdentity) {
  std::mt19937_64 rng(602);
  const RgbdFrame f = synthetic_frame(rng);
  const PointCloud c = unproject(f);
  EXPECT_TRUE(same_points(remove_hand_points(c, PixelMask::empty(f.width(), f.height())), c));
}

TEST(RemoveHandPoints, LeftHalfMask) {
  std::mt19937_64 rng(603);
  const RgbdFrame f = synthetic_frame(rng);
  const PointCloud c = unproject(f);
  PixelMask m = PixelMask::empty(f.width(), f.height());
  for (int v = 0; v < f.height(); ++v) {
    for (int u = 0; u < f.width() / 2; ++u) m.set(u, v);
  }
  const PointCloud kept = remove_hand_points(c, m);
  std::size_t right = 0;
  for (const Point& p : c.points) right += (*p.pixel)[0] >= f.width() / 2;
  EXPECT_EQ(kept.size(), right);
  for (const Point& p : kept.points) EXPECT_GE((*p.pixel)[0], f.width() / 2);
}

TEST(RemoveHandPoints, EqualsUnprojectWithMask) {
  std::mt19937_64 rng(604);
  for (int trial = 0; trial < 20; ++trial) {
    const RgbdFrame f = synthetic_frame(rng);
    const PixelMask m = random_mask(rng, f.width(), f.height());
    EXPECT_TRUE(same_points(remove_hand_points(unproject(f), m), unproject(f, &m)));
  }
}

TEST(RemoveHandPoints, MissingProvenance) {
  PointCloud c;
  c.points.push_back(at(0, 0, 1));
  EXPECT_EQ(error_of([&] { remove_hand_points(c, PixelMask::empty(4, 4)); }), ErrorCode::kMissingProvenance);
}

TEST(SampleHandSurface, UnitSphere) {
  const HandModel ball = parse_hand_model(kSphereHand);
  SurfaceSampling s;
  s.density = 1000.0;
  s.seed = 7;
  const PointCloud c = sample_hand_surface(ball, ball.rest_pose(), Pose(), Pose(), s);
  const double expected = 1000.0 * 4.0 * std::numbers::pi;
  EXPECT_NEAR(static_cast<double>(c.size()), expected, 0.05 * expected);
  for (const Point& p : c.points) {
    EXPECT_NEAR(p.xyz.norm(), 1.0, 1e-9);
    EXPECT_EQ(p.origin, PointOrigin::kRobotHand);
    EXPECT_FALSE(p.pixel.has_value());
  }
  // Uniform on the sphere: the mean is near the center and each octant holds about 1/8.
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  std::map<int, int> octants;
  for (const Point& p : c.points) {
    mean += p.xyz;
    ++octants[(p.xyz.x() > 0) + 2 * (p.xyz.y() > 0) + 4 * (p.xyz.z() > 0)];
  }
  EXPECT_LT((mean / static_cast<double>(c.size())).norm(), 0.05);
  for (const auto& [octant, n] : octants) EXPECT_NEAR(n, expected / 8.0, 0.1 * expected / 8.0) << octant;
}

TEST(SampleHandSurface, StrictModeNeedsGeometry) {
  const HandModel ball = parse_hand_model(kSphereHand);
  SurfaceSampling s;
  s.density = 10.0;
  s.strict = true;
  EXPECT_EQ(error_of([&] { sample_hand_surface(ball, ball.rest_pose(), Pose(), Pose(), s); }), ErrorCode::kNoGeometry);
}

TEST(SampleHandSurface, BoxCentroidFollowsTranslation) {
  const HandModel brick = parse_hand_model(kBoxHand);
  SurfaceSampling s;
  s.density = 2.0e5;
  s.seed = 11;
  const Eigen::Vector3d t(0.3, -1.2, 2.5);
  std::vector<int> link_a, link_b;
  const PointCloud a = sample_hand_surface(brick, brick.rest_pose(), Pose(), Pose(), s, &link_a);
  const PointCloud b = sample_hand_surface(brick, brick.rest_pose(), Pose::from_translation(t), Pose(), s, &link_b);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(link_a, link_b);
  Eigen::Vector3d ca = Eigen::Vector3d::Zero(), cb = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca += a.points[i].xyz;
    cb += b.points[i].xyz;
  }
  EXPECT_LT(((cb - ca) / static_cast<double>(a.size()) - t).norm(), 1e-12);
  // Box samples lie on the surface of the posed box.
  const Pose box = brick.links()[0].visual->origin;
  const Eigen::Vector3d half = 0.5 * brick.links()[0].visual->size;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (link_a[i] != 0) continue;
    const Eigen::Vector3d local = box.inverse() * a.points[i].xyz;
    EXPECT_LE((local.cwiseAbs() - half).maxCoeff(), 1e-12);
    EXPECT_NEAR((local.cwiseAbs() - half).maxCoeff(), 0.0, 1e-12);
  }
}

TEST(SampleHandSurface, CountsFollowPrimitiveAreas) {
  const HandModel model = load_fixture("inspire12");
  SurfaceSampling s;
  s.density = 5.0e4;
  std::vector<int> link_of;
  const PointCloud c = sample_hand_surface(model, model.rest_pose(), Pose(), Pose(), s, &link_of);
  for (std::size_t l = 0; l < model.links().size(); ++l) {
    const auto n = std::count(link_of.begin(), link_of.end(), static_cast<int>(l));
    const long expected = model.links()[l].visual ? std::lround(s.density * primitive_area(*model.links()[l].visual)) : 0;
    EXPECT_EQ(n, expected) << model.links()[l].name;
  }
}

TEST(SampleHandSurface, DistalLinkMovesByRelativeTransform) {
  const HandModel planar = load_fixture("planar2");
  SurfaceSampling s;
  s.density = 3000.0;
  s.seed = 5;
  std::mt19937_64 rng(605);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd q = random_q(planar, rng), q2 = random_q(planar, rng);
    const Pose hand = random_pose(rng);
    std::vector<int> links;
    const PointCloud a = sample_hand_surface(planar, q, hand, Pose(), s, &links);
    const PointCloud b = sample_hand_surface(planar, q2, hand, Pose(), s);
    const FkResult fa = forward_kinematics(planar, q, hand, Pose());
    const FkResult fb = forward_kinematics(planar, q2, hand, Pose());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto l = static_cast<std::size_t>(links[i]);
      const Pose relative = fb.link_poses[l] * fa.link_poses[l].inverse();
      EXPECT_LT((relative * a.points[i].xyz - b.points[i].xyz).norm(), 1e-12);
    }
  }
}

TEST(SampleHandSurface, DeterministicAndSeeded) {
  const HandModel model = load_fixture("twig");
  SurfaceSampling s;
  s.density = 1e5;
  s.seed = 3;
  const PointCloud a = sample_hand_surface(model, model.rest_pose(), Pose(), Pose(), s);
  EXPECT_TRUE(same_points(a, sample_hand_surface(model, model.rest_pose(), Pose(), Pose(), s)));
  s.seed = 4;
  EXPECT_FALSE(same_points(a, sample_hand_surface(model, model.rest_pose(), Pose(), Pose(), s)));
}

TEST(Reproject, ZBufferKeepsNearest) {
  PointCloud c;
  c.points.push_back(at(0.2, 0.1, 2.0, {9, 9, 9}));
  c.points.push_back(at(0.1, 0.05, 1.0, {1, 2, 3}));  // same ray, nearer
  c.points.push_back(at(0.0, 0.0, -1.0, {7, 7, 7}));  // behind the camera
  const RgbdFrame f = reproject(c, cam100());
  EXPECT_EQ(f.depth[f.index(60, 55)], 1000);
  EXPECT_EQ(f.rgb(60, 55), (Rgb{1, 2, 3}));
  int valid = 0;
  for (std::uint16_t d : f.depth) valid += d != 0;
  EXPECT_EQ(valid, 1);
}

TEST(Reproject, RoundTripWithinOneStep) {
  std::mt19937_64 rng(606);
  for (int trial = 0; trial < 10; ++trial) {
    const RgbdFrame f = synthetic_frame(rng);
    const PixelMask m = random_mask(rng, f.width(), f.height());
    const RgbdFrame back = reproject(unproject(f, &m), f.intrinsics);
    for (int v = 0; v < f.height(); ++v) {
      for (int u = 0; u < f.width(); ++u) {
        const std::size_t i = f.index(u, v);
        if (f.depth[i] == 0 || m.at(u, v)) {
          EXPECT_EQ(back.depth[i], 0);  // holes stay invalid
          continue;
        }
        EXPECT_LE(std::abs(back.depth[i] - f.depth[i]), 1);
        EXPECT_EQ(back.rgb(u, v), f.rgb(u, v));
      }
    }
  }
}

TEST(Reproject, DepthIsMinimumOverProjectingPoints) {
  std::mt19937_64 rng(607);
  std::uniform_real_distribution<double> xy(-1.0, 1.0), z(0.5, 3.0);
  const CameraIntrinsics k = cam100(0.00025);
  PointCloud c;
  for (int i = 0; i < 20000; ++i) c.points.push_back(at(xy(rng), 0.5 * xy(rng), z(rng)));
  const RgbdFrame f = reproject(c, k);
  std::map<std::size_t, double> nearest;
  for (const Point& p : c.points) {
    const double u = k.fx * p.xyz.x() / p.xyz.z() + k.cx, v = k.fy * p.xyz.y() / p.xyz.z() + k.cy;
    const long ui = std::lround(u), vi = std::lround(v);
    if (ui < 0 || vi < 0 || ui >= k.width || vi >= k.height) continue;
    const std::size_t i = static_cast<std::size_t>(vi) * static_cast<std::size_t>(k.width) + static_cast<std::size_t>(ui);
    auto [it, fresh] = nearest.try_emplace(i, p.xyz.z());
    if (!fresh) it->second = std::min(it->second, p.xyz.z());
  }
  for (std::size_t i = 0; i < f.depth.size(); ++i) {
    const auto it = nearest.find(i);
    if (it == nearest.end()) {
      EXPECT_EQ(f.depth[i], 0);
    } else {
      EXPECT_EQ(f.depth[i], std::lround(it->second / k.depth_scale));
    }
  }
}

TEST(CropBox, Examples) {
  std::mt19937_64 rng(608);
  const PointCloud c = unproject(synthetic_frame(rng));
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_TRUE(same_points(crop_box(c, Eigen::Vector3d::Constant(-inf), Eigen::Vector3d::Constant(inf)), c));
  EXPECT_TRUE(crop_box(c, Eigen::Vector3d::Constant(50), Eigen::Vector3d::Constant(50)).empty());
  const double split = 0.02;
  const std::size_t below = crop_box(c, Eigen::Vector3d(-inf, -inf, -inf), Eigen::Vector3d(split, inf, inf)).size();
  const std::size_t above =
      crop_box(c, Eigen::Vector3d(std::nextafter(split, inf), -inf, -inf), Eigen::Vector3d::Constant(inf)).size();
  std::size_t count = 0;
  for (const Point& p : c.points) count += p.xyz.x() <= split;
  EXPECT_EQ(below, count);
  EXPECT_EQ(below + above, c.size());
}

double min_pairwise(const PointCloud& c) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j) best = std::min(best, (c.points[i].xyz - c.points[j].xyz).norm());
  }
  return best;
}

TEST(DownsampleFps, SmallInputsAndSquare) {
  PointCloud square;
  for (auto [x, y] : std::vector<std::pair<double, double>>{{0, 0}, {1, 0}, {1, 1}, {0, 1}}) square.points.push_back(at(x, y, 0));
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const PointCloud two = downsample_fps(square, 2, seed);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_NEAR((two.points[0].xyz - two.points[1].xyz).norm(), std::sqrt(2.0), 1e-15);
    const PointCloud all = downsample_fps(square, 10, seed);
    EXPECT_EQ(all.size(), 4u);
    std::set<std::pair<double, double>> seen;
    for (const Point& p : all.points) seen.insert({p.xyz.x(), p.xyz.y()});
    EXPECT_EQ(seen.size(), 4u);
  }
  EXPECT_TRUE(downsample_fps(PointCloud{}, 3, 0).empty());
  EXPECT_EQ(error_of([&] { downsample_fps(square, 0, 0); }), ErrorCode::kInvalidArgument);
}

TEST(DownsampleFps, BeatsUniformSubsample) {
  std::mt19937_64 rng(609);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    PointCloud c;
    for (int i = 0; i < 400; ++i) c.points.push_back(at(u(rng), u(rng), u(rng)));
    const PointCloud fps = downsample_fps(c, 32, static_cast<std::uint64_t>(trial));
    PointCloud uniform;
    std::vector<std::size_t> idx(c.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int i = 0; i < 32; ++i) uniform.points.push_back(c.points[idx[static_cast<std::size_t>(i)]]);
    EXPECT_GE(min_pairwise(fps), min_pairwise(uniform));
  }
}

TEST(DownsampleFps, Deterministic) {
  std::mt19937_64 rng(610);
  const PointCloud c = unproject(synthetic_frame(rng));
  EXPECT_TRUE(same_points(downsample_fps(c, 100, 42), downsample_fps(c, 100, 42)));
}

TEST(DownsampleVoxel, OnePointPerOccupiedVoxel) {
  std::mt19937_64 rng(611);
  const PointCloud c = unproject(synthetic_frame(rng));
  const double size = 0.05;
  std::set<std::array<long long, 3>> voxels;
  for (const Point& p : c.points) {
    voxels.insert({static_cast<long long>(std::floor(p.xyz.x() / size)), static_cast<long long>(std::floor(p.xyz.y() / size)),
                   static_cast<long long>(std::floor(p.xyz.z() / size))});
  }
  const PointCloud d = downsample_voxel(c, size);
  EXPECT_EQ(d.size(), voxels.size());
  EXPECT_EQ(error_of([&] { downsample_voxel(c, 0.0); }), ErrorCode::kInvalidArgument);
}

TEST(ComposeScene, ConcatenatesWithTags) {
  std::mt19937_64 rng(612);
  const PointCloud scene = unproject(synthetic_frame(rng));
  const PointCloud none = compose_scene(scene, PointCloud{});
  EXPECT_TRUE(same_points(none, scene));
  PointCloud hand;
  hand.points.push_back(at(0, 0, 0.5));
  hand.points.push_back(at(0.1, 0, 0.5));
  const PointCloud both = compose_scene(scene, hand);
  EXPECT_EQ(both.size(), scene.size() + 2);
  EXPECT_EQ(both.points[scene.size()].origin, PointOrigin::kRobotHand);
  EXPECT_EQ(both.points[0].origin, PointOrigin::kScene);
}

TEST(ComposeScene, NearerHandOccludesScene) {
  // Scene: a wall at z = 2 m. Hand: a sphere 1 m away covering the image center.
  const CameraIntrinsics k = cam100(0.00025);
  RgbdFrame wall = RgbdFrame::blank(k);
  for (auto& d : wall.depth) d = 8000;
  for (std::size_t i = 0; i < wall.color.size(); i += 3) wall.color[i] = 255;
  const HandModel ball = parse_hand_model(kSphereHand);
  SurfaceSampling s;
  s.density = 2.0e5;
  std::vector<int> link_of;
  PointCloud hand = sample_hand_surface(ball, ball.rest_pose(), Pose::from_xyz_rpy({0, 0, 1}, {0, 0, 0}),
                                        Pose(), s, &link_of);
  // Shrink the unit sphere to 0.1 m around its center.
  for (Point& p : hand.points) p.xyz = Eigen::Vector3d(0, 0, 1) + 0.1 * (p.xyz - Eigen::Vector3d(0, 0, 1));
  const RgbdFrame out = reproject(compose_scene(unproject(wall), hand), k);
  const Rgb hand_color = ball.links()[0].color;
  int occluded = 0;
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const double ray = std::hypot((u - k.cx) / k.fx, (v - k.cy) / k.fy);
      if (ray < 0.08) {  // well inside the sphere's silhouette
        EXPECT_LT(out.depth[out.index(u, v)], 8000);
        EXPECT_EQ(out.rgb(u, v), hand_color);
        ++occluded;
      } else if (ray > 0.12) {
        EXPECT_EQ(out.depth[out.index(u, v)], 8000);
        EXPECT_EQ(out.rgb(u, v), (Rgb{255, 0, 0}));
      }
    }
  }
  EXPECT_GT(occluded, 50);
}

TEST(ComposeScene, RigidMotionEquivariance) {
  std::mt19937_64 rng(613);
  const HandModel model = load_fixture("wuji20");
  SurfaceSampling s;
  s.density = 2e4;
  const Eigen::VectorXd q = random_q(model, rng);
  const Pose hand = random_pose(rng), g = random_pose(rng);
  const PointCloud scene = unproject(synthetic_frame(rng));
  const PointCloud a = compose_scene(transform_cloud(scene, g), sample_hand_surface(model, q, g * hand, Pose(), s));
  const PointCloud b = transform_cloud(compose_scene(scene, sample_hand_surface(model, q, hand, Pose(), s)), g);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT((a.points[i].xyz - b.points[i].xyz).norm(), 1e-12);
}

TEST(FrameIo, RoundTrip) {
  std::mt19937_64 rng(614);
  const RgbdFrame f = synthetic_frame(rng, 37, 23);
  const std::string c = temp_path("f.ppm"), d = temp_path("f.pgm"), k = temp_path("f.json");
  save_frame(f, c, d, k);
  const RgbdFrame back = load_frame(c, d, k);
  EXPECT_EQ(back.color, f.color);
  EXPECT_EQ(back.depth, f.depth);
  EXPECT_EQ(back.intrinsics, f.intrinsics);
  // 16-bit samples are stored big-endian.
  const std::string blob = read_text_file(d);
  const std::size_t raster = blob.size() - 2 * f.depth.size();
  EXPECT_EQ(static_cast<std::uint8_t>(blob[raster]), f.depth[0] >> 8);
  EXPECT_EQ(static_cast<std::uint8_t>(blob[raster + 1]), f.depth[0] & 0xff);
  EXPECT_EQ(blob.substr(0, 3), "P5\n");

  int w = 0, h = 0;
  write_ppm(c, 2, 1, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(read_ppm(c, w, h), (std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6}));
  write_pgm16(d, 2, 1, {1, 2});
  EXPECT_EQ(error_of([&] { load_frame(c, d, k); }), ErrorCode::kDimensionMismatch);
  EXPECT_EQ(error_of([&] { load_frame(temp_path("missing.ppm"), d, k); }), ErrorCode::kIo);
}

TEST(FrameIo, HeaderCommentsAndMask) {
  const std::string p = temp_path("comment.pgm");
  write_text_file(p, std::string("P5\n# made by hand\n2 2\n# depth\n65535\n") + std::string("\x01\x02\x00\x00\xff\xff\x00\x10", 8));
  int w = 0, h = 0;
  EXPECT_EQ(read_pgm16(p, w, h), (std::vector<std::uint16_t>{0x0102, 0, 0xffff, 0x0010}));
  EXPECT_EQ(w, 2);
  EXPECT_EQ(h, 2);
  write_text_file(p, "P2\n1 1\n255\n0");
  EXPECT_EQ(error_of([&] { read_pgm16(p, w, h); }), ErrorCode::kParse);

  std::mt19937_64 rng(615);
  const PixelMask m = random_mask(rng, 13, 7);
  const std::string mp = temp_path("mask.pgm");
  write_mask_pgm(mp, m);
  const PixelMask back = read_mask_pgm(mp);
  EXPECT_EQ(back.data, m.data);
  EXPECT_EQ(back.width, 13);
}

TEST(FrameIo, IntrinsicsJson) {
  const CameraIntrinsics k = cam100(0.0005);
  EXPECT_EQ(intrinsics_from_json(intrinsics_to_json(k)), k);
  EXPECT_EQ(intrinsics_from_json(R"({"fx":1,"fy":1,"cx":0,"cy":0,"width":2,"height":2})").depth_scale, kDefaultDepthScale);
  EXPECT_EQ(error_of([] { intrinsics_from_json(R"({"fx":0,"fy":1,"cx":0,"cy":0,"width":2,"height":2})"); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_of([] { intrinsics_from_json(R"({"fx":1})"); }), ErrorCode::kParse);
}

TEST(CloudBytes, RoundTrip) {
  std::mt19937_64 rng(616);
  const PointCloud scene = unproject(synthetic_frame(rng));
  const std::vector<std::uint8_t> bytes = cloud_to_bytes(scene);
  const PointCloud back = cloud_from_bytes(bytes.data(), bytes.size());
  ASSERT_EQ(back.size(), scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    EXPECT_EQ(back.points[i].xyz, scene.points[i].xyz.cast<float>().cast<double>());
    EXPECT_EQ(back.points[i].rgb, scene.points[i].rgb);
    EXPECT_EQ(back.points[i].pixel, scene.points[i].pixel);
  }
  EXPECT_EQ(cloud_to_bytes(back), bytes);
  PointCloud hand;
  hand.points.push_back(at(1, 2, 3, {4, 5, 6}));
  hand = compose_scene(PointCloud{}, hand);
  const auto hb = cloud_to_bytes(hand);
  EXPECT_EQ(cloud_from_bytes(hb.data(), hb.size()).points[0].origin, PointOrigin::kRobotHand);
  EXPECT_EQ(error_of([&] { cloud_from_bytes(hb.data(), hb.size() - 1); }), ErrorCode::kParse);
}

}  // namespace
}  // namespace dexforge
