#include <gtest/gtest.h>

#include <numbers>

#include "dexforge/error.hpp"
#include "dexforge/kinematics.hpp"
#include "test_support.hpp"

namespace dexforge {
namespace {

using testing::load_fixture;
using testing::random_pose;
using testing::random_q;

// Master + slave on one finger; slave follows k·q_m + c.
HandModel mimic_pair(double k, double c, double slave_upper = 3.0) {
  return parse_hand_model(R"({"name": "pair", "side": "right",
    "links": [{"name": "p"}, {"name": "a"}, {"name": "b"}, {"name": "tip"}],
    "joints": [
      {"name": "m", "parent": "p", "child": "a", "axis": [1,0,0], "limits": {"lower": -1, "upper": 1}},
      {"name": "s", "parent": "a", "child": "b", "origin": {"xyz": [0,0,0.05]}, "axis": [1,0,0],
       "limits": {"lower": -3, "upper": )" + std::to_string(slave_upper) + R"(},
       "mimic": {"master": "m", "multiplier": )" + std::to_string(k) + R"(, "offset": )" + std::to_string(c) + R"(}},
      {"name": "f", "type": "fixed", "parent": "b", "child": "tip", "origin": {"xyz": [0,0,0.04]}}],
    "fingertips": ["tip"], "faas_map": {"m": 5, "s": 6}})");
}

Eigen::MatrixXd finite_difference_jacobian(const HandModel& model, const Eigen::VectorXd& q, const Pose& world,
                                           const Pose& offset, double h) {
  const int m = model.fingertip_count();
  Eigen::MatrixXd jac(3 * m, model.full_dof());
  for (int j = 0; j < model.full_dof(); ++j) {
    Eigen::VectorXd plus = q, minus = q;
    plus[j] += h;
    minus[j] -= h;
    const FingertipSet d = (forward_kinematics(model, plus, world, offset).fingertips -
                            forward_kinematics(model, minus, world, offset).fingertips) /
                           (2.0 * h);
    jac.col(j) = Eigen::Map<const Eigen::VectorXd>(d.data(), d.size());
  }
  return jac;
}

TEST(ForwardKinematics, PlanarStraightChain) {
  const HandModel planar = load_fixture("planar2");
  const FkResult fk = forward_kinematics(planar, Eigen::Vector2d(0, 0), Pose(), Pose());
  EXPECT_TRUE(fk.fingertips.col(0).isApprox(Eigen::Vector3d(2, 0, 0), 1e-15));
  EXPECT_FALSE(fk.limit_warning);
}

TEST(ForwardKinematics, PlanarRigidRotation) {
  const HandModel planar = load_fixture("planar2");
  const FkResult fk = forward_kinematics(planar, Eigen::Vector2d(std::numbers::pi / 2, 0), Pose(), Pose());
  EXPECT_NEAR((fk.fingertips.col(0) - Eigen::Vector3d(0, 2, 0)).norm(), 0.0, 1e-15);
}

TEST(ForwardKinematics, WrongLengthIsDimensionMismatch) {
  const HandModel planar = load_fixture("planar2");
  try {
    forward_kinematics(planar, Eigen::Vector3d::Zero(), Pose(), Pose());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(ForwardKinematics, OutOfLimitInputRaisesWarning) {
  const HandModel planar = load_fixture("planar2");
  EXPECT_TRUE(forward_kinematics(planar, Eigen::Vector2d(3.0, 0), Pose(), Pose()).limit_warning);
  EXPECT_FALSE(forward_kinematics(planar, Eigen::Vector2d(2.5 + 1e-10, 0), Pose(), Pose()).limit_warning);
}

TEST(ForwardKinematics, TranslationOffsetShiftsFingertips) {
  const HandModel twig = load_fixture("twig");
  std::mt19937_64 rng(7);
  const Eigen::Vector3d t(0.013, -0.021, 0.034);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd q = random_q(twig, rng);
    const Pose world = random_pose(rng);
    const FingertipSet base = forward_kinematics(twig, q, world, Pose()).fingertips;
    const FingertipSet shifted = forward_kinematics(twig, q, world, Pose::from_translation(t)).fingertips;
    // offset sits after the world pose, so the shift is expressed in the dummy frame
    for (int i = 0; i < base.cols(); ++i) {
      EXPECT_LT((shifted.col(i) - base.col(i) - world.rotation() * t).norm(), 1e-14);
    }
  }
}

TEST(ForwardKinematics, IdentityWorldTranslationOffsetIsExactShift) {
  const HandModel twig = load_fixture("twig");
  std::mt19937_64 rng(8);
  const Eigen::Vector3d t(0.25, 0.5, -0.125);
  const Eigen::VectorXd q = random_q(twig, rng);
  const FingertipSet base = forward_kinematics(twig, q, Pose(), Pose()).fingertips;
  const FingertipSet shifted = forward_kinematics(twig, q, Pose(), Pose::from_translation(t)).fingertips;
  EXPECT_LT(((shifted - base).colwise() - t).cwiseAbs().maxCoeff(), 1e-15);
}

class FixtureKinematics : public ::testing::TestWithParam<const char*> {};

TEST_P(FixtureKinematics, FrameEquivariance) {
  const HandModel model = load_fixture(GetParam());
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd q = random_q(model, rng);
    const Pose world = random_pose(rng), offset = random_pose(rng, 0.05), g = random_pose(rng, 2.0);
    const FingertipSet a = forward_kinematics(model, q, world, offset).fingertips;
    const FingertipSet b = forward_kinematics(model, q, g * world, offset).fingertips;
    for (int i = 0; i < a.cols(); ++i) EXPECT_LT((b.col(i) - g * Eigen::Vector3d(a.col(i))).norm(), 1e-12);
  }
}

TEST_P(FixtureKinematics, JacobianMatchesFiniteDifferences) {
  const HandModel model = load_fixture(GetParam());
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd q = random_q(model, rng);
    const Pose world = random_pose(rng), offset = random_pose(rng, 0.05);
    const Eigen::MatrixXd analytic = fingertip_jacobian(model, q, world, offset);
    const Eigen::MatrixXd numeric = finite_difference_jacobian(model, q, world, offset, 1e-6);
    EXPECT_LT((analytic - numeric).cwiseAbs().maxCoeff(), 1e-5) << "trial " << trial;
  }
}

TEST_P(FixtureKinematics, LinkPosesAreConsistentDownTheTree) {
  const HandModel model = load_fixture(GetParam());
  std::mt19937_64 rng(13);
  const Eigen::VectorXd q = random_q(model, rng);
  const FkResult fk = forward_kinematics(model, q, random_pose(rng), Pose());
  for (int j = 0; j < model.full_dof(); ++j) {
    const Joint& joint = model.joint(j);
    const Pose expected = fk.link_poses[static_cast<std::size_t>(joint.parent_link)] * joint.origin *
                          Pose(Pose::axis_angle(joint.axis, q[j]), Eigen::Vector3d::Zero());
    const Pose& child = fk.link_poses[static_cast<std::size_t>(joint.child_link)];
    EXPECT_LT((child.matrix() - expected.matrix()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_TRUE(child.is_valid(1e-9));
  }
}

INSTANTIATE_TEST_SUITE_P(Fixtures, FixtureKinematics,
                         ::testing::Values("planar2", "twig", "inspire12", "oymo11", "wuji20"));

TEST(Jacobian, PlanarTextbookColumns) {
  const HandModel planar = load_fixture("planar2");
  const Eigen::MatrixXd jac = fingertip_jacobian(planar, Eigen::Vector2d(0, 0), Pose(), Pose());
  EXPECT_TRUE(jac.col(0).isApprox(Eigen::Vector3d(0, 2, 0)));
  EXPECT_TRUE(jac.col(1).isApprox(Eigen::Vector3d(0, 1, 0)));
}

TEST(Jacobian, MimicColumnFoldsWithMultiplier) {
  const HandModel pair = mimic_pair(0.5, 0.0);
  const Eigen::VectorXd q = apply_mimic(pair, Eigen::Vector2d(0.4, 0.0)).q;
  const Eigen::MatrixXd raw = fingertip_jacobian_unfolded(pair, q, Pose(), Pose());
  const Eigen::MatrixXd folded = fingertip_jacobian(pair, q, Pose(), Pose());
  EXPECT_LT((folded.col(0) - (raw.col(0) + 0.5 * raw.col(1))).norm(), 1e-15);
  EXPECT_EQ(folded.col(1).norm(), 0.0);
}

TEST(ApplyMimic, Formula) {
  {
    const MimicResult r = apply_mimic(mimic_pair(1.0, 0.0), Eigen::Vector2d(0.3, -2.0));
    EXPECT_EQ(r.q[0], 0.3);
    EXPECT_EQ(r.q[1], 0.3);
    EXPECT_TRUE(r.clamped.empty());
  }
  {
    const MimicResult r = apply_mimic(mimic_pair(1.2, 0.1), Eigen::Vector2d(0.5, 0.0));
    EXPECT_DOUBLE_EQ(r.q[1], 0.7);
  }
  {
    const MimicResult r = apply_mimic(mimic_pair(2.0, 0.0, 1.5), Eigen::Vector2d(1.0, 0.0));
    EXPECT_EQ(r.q[1], 1.5);
    EXPECT_EQ(r.clamped, std::vector<int>{1});
  }
}

TEST(ApplyMimic, Idempotent) {
  for (const char* name : {"twig", "inspire12", "oymo11"}) {
    const HandModel model = load_fixture(name);
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      Eigen::VectorXd q(model.full_dof());
      for (int j = 0; j < model.full_dof(); ++j) q[j] = std::uniform_real_distribution<double>(-2, 2)(rng);
      const Eigen::VectorXd once = apply_mimic(model, q).q;
      EXPECT_EQ(apply_mimic(model, once).q, once);
    }
  }
}

}  // namespace
}  // namespace dexforge
