// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Geometry>
#include <fstream>
#include <random>

#include "close/body_model.hpp"
#include "close/error.hpp"
#include "support.hpp"

using namespace closenet;
using namespace closenet::testing;

namespace {

BodyParams random_params(std::mt19937_64& rng, const BodyModel& m, double pose_scale = 0.8) {
  BodyParams p;
  p.pose.resize(3 * m.num_joints());
  for (double& v : p.pose) v = pose_scale * (2 * unit(rng) - 1);
  p.shape.resize(m.num_shape());
  for (double& v : p.shape) v = 2 * unit(rng) - 1;
  p.translation = {unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5};
  return p;
}

// Linear blend skinning written with Eigen affine transforms: G_j is the
// parent chain of [R_j | J_j - J_parent], the skinning transform is
// G_j · T(-J_j), and the root translation is applied last.
Matrix lbs_oracle(const BodyModel& m, const BodyParams& p) {
  const std::size_t V = m.num_vertices(), J = m.num_joints();
  std::vector<Eigen::Vector3d> verts(V), joints(J);
  for (std::size_t v = 0; v < V; ++v) {
    verts[v] = {m.template_vertices(v, 0), m.template_vertices(v, 1), m.template_vertices(v, 2)};
    for (std::size_t b = 0; b < p.shape.size(); ++b) {
      verts[v] += p.shape[b] * Eigen::Vector3d(m.shape_dirs[b](v, 0), m.shape_dirs[b](v, 1), m.shape_dirs[b](v, 2));
    }
  }
  for (std::size_t j = 0; j < J; ++j) {
    joints[j] = {m.joints(j, 0), m.joints(j, 1), m.joints(j, 2)};
    for (std::size_t b = 0; b < p.shape.size(); ++b) {
      joints[j] += p.shape[b] *
                   Eigen::Vector3d(m.joint_shape_dirs[b](j, 0), m.joint_shape_dirs[b](j, 1), m.joint_shape_dirs[b](j, 2));
    }
  }
  std::vector<Eigen::Affine3d> global(J);
  for (std::size_t j = 0; j < J; ++j) {
    const Eigen::Vector3d aa(p.pose[3 * j], p.pose[3 * j + 1], p.pose[3 * j + 2]);
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    if (aa.norm() > 0) r = Eigen::AngleAxisd(aa.norm(), aa.normalized()).toRotationMatrix();
    Eigen::Affine3d local = Eigen::Affine3d::Identity();
    local.linear() = r;
    const int parent = m.parents[j];
    local.translation() = parent < 0 ? joints[j] : Eigen::Vector3d(joints[j] - joints[parent]);
    global[j] = parent < 0 ? local : global[parent] * local;
  }
  const Eigen::Vector3d trans(p.translation[0], p.translation[1], p.translation[2]);
  Matrix out(V, 3);
  for (std::size_t v = 0; v < V; ++v) {
    Eigen::Matrix4d blend = Eigen::Matrix4d::Zero();
    for (std::size_t j = 0; j < J; ++j) {
      Eigen::Affine3d skin = global[j] * Eigen::Translation3d(-joints[j]);
      blend += m.skin_weights(v, j) * skin.matrix();
    }
    const Eigen::Vector4d h = blend * Eigen::Vector4d(verts[v].x(), verts[v].y(), verts[v].z(), 1.0);
    for (int a = 0; a < 3; ++a) out(v, a) = h[a] + trans[a];
  }
  return out;
}

}  // namespace

TEST_CASE("toy body model is well formed") {
  const BodyModel& m = toy_body_model();
  CHECK_NOTHROW(m.validate());
  CHECK(m.num_vertices() == 64);
  CHECK(m.num_joints() == 16);
  CHECK(m.parents[0] == -1);
  for (std::size_t v = 0; v < m.num_vertices(); ++v) {
    double s = 0;
    for (std::size_t j = 0; j < m.num_joints(); ++j) s += m.skin_weights(v, j);
    CHECK(s == doctest::Approx(1.0));
  }
  for (const char* region : {"head", "hands", "feet"}) CHECK(m.regions.contains(region));
}

TEST_CASE("posing matches an independent skinning oracle") {
  std::mt19937_64 rng(17);
  const BodyModel& m = toy_body_model();
  for (int trial = 0; trial < 25; ++trial) {
    const BodyParams p = random_params(rng, m);
    const Matrix got = pose_body(m, p);
    const Matrix want = lbs_oracle(m, p);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("zero pose and shape reproduce the template shifted by the translation") {
  const BodyModel& m = toy_body_model();
  BodyParams p;
  p.translation = {0.5, -1.0, 2.0};
  const Matrix posed = pose_body(m, p);
  for (std::size_t v = 0; v < m.num_vertices(); ++v) {
    for (int a = 0; a < 3; ++a) CHECK(posed(v, a) == doctest::Approx(m.template_vertices(v, a) + p.translation[a]));
  }
}

TEST_CASE("body encoding picks the nearest posed vertex") {
  std::mt19937_64 rng(23);
  const BodyModel& m = toy_body_model();
  for (int trial = 0; trial < 20; ++trial) {
    const BodyParams p = random_params(rng, m, 0.5);
    const Matrix posed = pose_body(m, p);
    Matrix pts = random_matrix(rng, 200, 3, -1.0, 1.0);
    for (std::size_t i = 0; i < pts.rows(); ++i) pts(i, 1) += 0.9;
    const BodyFeatureField f = encode_body(pts, m, p);
    for (std::size_t i = 0; i < pts.rows(); ++i) {
      const double q[3] = {pts(i, 0), pts(i, 1), pts(i, 2)};
      const auto v = brute_nearest(posed, q);
      CHECK(f.vertex[i] == v);
      for (int a = 0; a < 3; ++a) CHECK(f.coords(i, a) == m.template_vertices(v, a));
    }
  }
}

TEST_CASE("body model container round trip") {
  TempDir dir("body");
  const BodyModel& m = toy_body_model();
  save_body_model(m, dir / "toy.json");
  const BodyModel back = load_body_model(dir / "toy.json");
  CHECK(back.hash() == m.hash());
  CHECK(back.regions == m.regions);
  std::ofstream(dir / "bad.json") << R"({"schema": 1, "template": [[0,0,0]]})";
  CHECK_THROWS_AS(load_body_model(dir / "bad.json"), ValidationError);
}

TEST_CASE("parameter validation") {
  const BodyModel& m = toy_body_model();
  BodyParams p;
  p.pose = {0.1, 0.2};
  CHECK_THROWS_AS(pose_body(m, p), ValidationError);
  p.pose.clear();
  p.shape = {1, 2, 3};
  CHECK_THROWS_AS(pose_body(m, p), ValidationError);
  ScanSample s = synthetic_scan(1, 50);
  CHECK_THROWS_AS(encode_body_hybrid(s, m), Error);
  s.body.reset();
  CHECK_THROWS_AS(encode_body(s, m), ValidationError);
}

TEST_CASE("body feature cache memoizes and persists") {
  TempDir dir("cache");
  const ScanSample scan = synthetic_scan(4, 300);
  const BodyFeatureField direct = encode_body(scan, toy_body_model());
  {
    BodyFeatureCache cache(dir.path);
    const auto a = cache.get(scan, toy_body_model());
    const auto b = cache.get(scan, toy_body_model());
    CHECK(a.get() == b.get());
    CHECK(a->vertex == direct.vertex);
    CHECK(cache.size() == 1);
  }
  std::size_t files = 0;
  for (const auto& f : std::filesystem::directory_iterator(dir.path)) files += f.path().extension() == ".bodyfeat";
  CHECK(files == 1);
  BodyFeatureCache reopened(dir.path);
  const auto c = reopened.get(scan, toy_body_model());
  CHECK(c->vertex == direct.vertex);
  CHECK(squared_distance(c->coords, direct.coords) == 0.0);

  // Different body parameters give a different key.
  ScanSample moved = scan;
  moved.body->translation[0] += 0.1;
  const auto d = reopened.get(moved, toy_body_model());
  CHECK(reopened.size() == 2);
  CHECK(d.get() != c.get());
}
