// SPDX-License-Identifier: Apache-2.0
#include "close/toy_humanoid.hpp"

#include <cmath>
#include <numbers>

#include "close/body_model.hpp"

namespace closenet::toy {
namespace {

constexpr double kPi = std::numbers::pi;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

enum class Axis { X, Y, Z };

// Elliptic cylinder along one axis, or a sphere when `sphere` is set.
struct Primitive {
  Part part;
  int side;
  int joint;
  Axis axis;
  double from, to;  // axial coordinate at t = 0 and t = 1
  double c1, c2;    // centre on the two remaining axes
  double r1, r2;    // radii on the two remaining axes
  bool sphere = false;
  bool cap = false;  // horizontal annulus on top of the torso

  double area() const {
    if (sphere) return 4.0 * kPi * r1 * r1;
    if (cap) return kPi * (r1 * r2 - 0.055 * 0.055);
    const double h = std::pow(r1 - r2, 2) / std::pow(r1 + r2, 2);
    const double perimeter = kPi * (r1 + r2) * (1.0 + 3.0 * h / (10.0 + std::sqrt(4.0 - 3.0 * h)));
    return perimeter * std::abs(to - from);
  }
};

std::vector<Primitive> primitives() {
  std::vector<Primitive> out;
  // Torso: pelvis and chest share one elliptic cylinder, split at the waist.
  out.push_back({Part::Pelvis, 0, Root, Axis::Y, kWaist, kTorsoBottom, 0.0, 0.0, kTorsoRadiusX, kTorsoRadiusZ});
  out.push_back({Part::Chest, 0, Spine, Axis::Y, kWaist, kShoulderHeight, 0.0, 0.0, kTorsoRadiusX, kTorsoRadiusZ});
  {
    Primitive cap{Part::ShoulderCap, 0, Spine, Axis::Y, kShoulderHeight, kShoulderHeight, 0.0, 0.0,
                  kTorsoRadiusX, kTorsoRadiusZ};
    cap.cap = true;
    out.push_back(cap);
  }
  out.push_back({Part::Neck, 0, Neck, Axis::Y, kShoulderHeight, 1.53, 0.0, 0.0, 0.055, 0.055});
  {
    Primitive head{Part::Head, 0, HeadJoint, Axis::Y, 1.53, 1.73, 0.0, 0.0, kHeadRadius, kHeadRadius};
    head.sphere = true;
    out.push_back(head);
  }
  for (int side : {+1, -1}) {
    const double s = side;
    const bool left = side > 0;
    out.push_back({Part::UpperArm, side, left ? LShoulder : RShoulder, Axis::X, s * 0.16, s * 0.46, 1.40, 0.0, 0.05, 0.05});
    out.push_back({Part::Forearm, side, left ? LElbow : RElbow, Axis::X, s * 0.46, s * 0.71, 1.40, 0.0, 0.04, 0.04});
    out.push_back({Part::Hand, side, left ? LWrist : RWrist, Axis::X, s * 0.71, s * 0.82, 1.40, 0.0, 0.033, 0.033});
    out.push_back({Part::Thigh, side, left ? LHip : RHip, Axis::Y, 0.90, 0.50, s * 0.085, 0.0, 0.07, 0.07});
    out.push_back({Part::Shin, side, left ? LKnee : RKnee, Axis::Y, 0.50, 0.08, s * 0.085, 0.0, 0.05, 0.05});
    out.push_back({Part::Foot, side, left ? LAnkle : RAnkle, Axis::Z, -0.05, 0.16, s * 0.085, 0.04, 0.04, 0.04});
  }
  return out;
}

// Maps (axial, u, v) to xyz for a cylinder along `axis` where u, v are the
// coordinates on the remaining axes in (x, y, z) order.
std::array<double, 3> compose(Axis axis, double axial, double u, double v) {
  switch (axis) {
    case Axis::X: return {axial, u, v};
    case Axis::Y: return {u, axial, v};
    case Axis::Z: return {u, v, axial};
  }
  return {};
}

SurfaceSample sample_on(const Primitive& p, std::mt19937_64& rng) {
  SurfaceSample s;
  s.part = p.part;
  s.side = p.side;
  s.joint = p.joint;
  if (p.sphere) {
    const double zc = 2.0 * uniform01(rng) - 1.0;
    const double phi = 2.0 * kPi * uniform01(rng);
    const double rxy = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    s.normal = {rxy * std::cos(phi), zc, rxy * std::sin(phi)};
    s.position = {p.c1 + p.r1 * s.normal[0], kHeadCenterY + p.r1 * s.normal[1], p.c2 + p.r1 * s.normal[2]};
    s.t = (s.position[1] - p.from) / (p.to - p.from);
    return s;
  }
  if (p.cap) {
    while (true) {
      const double u = (2.0 * uniform01(rng) - 1.0) * p.r1;
      const double v = (2.0 * uniform01(rng) - 1.0) * p.r2;
      const double e = (u * u) / (p.r1 * p.r1) + (v * v) / (p.r2 * p.r2);
      if (e > 1.0 || u * u + v * v < 0.055 * 0.055) continue;
      s.position = {u, p.from, v};
      s.normal = {0.0, 1.0, 0.0};
      s.t = 0.0;
      return s;
    }
  }
  const double t = uniform01(rng);
  const double phi = 2.0 * kPi * uniform01(rng);
  const double axial = p.from + t * (p.to - p.from);
  const double cu = std::cos(phi), sv = std::sin(phi);
  s.position = compose(p.axis, axial, p.c1 + p.r1 * cu, p.c2 + p.r2 * sv);
  const double nu = cu / p.r1, nv = sv / p.r2;
  const double len = std::sqrt(nu * nu + nv * nv);
  s.normal = compose(p.axis, 0.0, nu / len, nv / len);
  s.t = t;
  return s;
}

}  // namespace

std::vector<SurfaceSample> sample_surface(std::size_t count, std::mt19937_64& rng) {
  const auto prims = primitives();
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& p : prims) {
    total += p.area();
    cumulative.push_back(total);
  }
  std::vector<SurfaceSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = uniform01(rng) * total;
    std::size_t which = 0;
    while (which + 1 < cumulative.size() && u >= cumulative[which]) ++which;
    out.push_back(sample_on(prims[which], rng));
  }
  return out;
}

BodyModel build_body_model() {
  struct Vertex {
    std::array<double, 3> p;
    std::vector<std::pair<int, double>> weights;
    const char* region;
  };
  std::vector<Vertex> vs;
  // Head (6) and neck (2).
  vs.push_back({{0.0, 1.73, 0.0}, {{HeadJoint, 1.0}}, "head"});
  vs.push_back({{0.0, 1.63, 0.10}, {{HeadJoint, 1.0}}, "head"});
  vs.push_back({{0.0, 1.63, -0.10}, {{HeadJoint, 1.0}}, "head"});
  vs.push_back({{0.10, 1.63, 0.0}, {{HeadJoint, 1.0}}, "head"});
  vs.push_back({{-0.10, 1.63, 0.0}, {{HeadJoint, 1.0}}, "head"});
  vs.push_back({{0.0, 1.55, 0.07}, {{HeadJoint, 1.0}}, "head"});
  vs.push_back({{0.0, 1.49, 0.055}, {{Neck, 1.0}}, "neck"});
  vs.push_back({{0.0, 1.49, -0.055}, {{Neck, 1.0}}, "neck"});
  // Torso: three rings of six (18).
  for (int ring = 0; ring < 3; ++ring) {
    const double y = std::array{0.93, 1.17, 1.40}[ring];
    for (int a = 0; a < 6; ++a) {
      const double phi = kPi / 3.0 * a;
      const std::array<double, 3> p{kTorsoRadiusX * std::cos(phi), y, kTorsoRadiusZ * std::sin(phi)};
      std::vector<std::pair<int, double>> w;
      if (ring == 0) w = {{Root, 1.0}};
      else if (ring == 1) w = {{Root, 0.5}, {Spine, 0.5}};
      else w = {{Spine, 1.0}};
      vs.push_back({p, w, "torso"});
    }
  }
  for (int side : {+1, -1}) {
    const double s = side;
    const bool left = side > 0;
    const int shoulder = left ? LShoulder : RShoulder, elbow = left ? LElbow : RElbow,
              wrist = left ? LWrist : RWrist, hip = left ? LHip : RHip, knee = left ? LKnee : RKnee,
              ankle = left ? LAnkle : RAnkle;
    // Arm (9): upper arm 4, forearm 3, hand 2.
    const double ua = 0.16, fa = 0.46, ha = 0.71;
    vs.push_back({{s * (ua + 0.25 * 0.30), 1.45, 0.0}, {{shoulder, 0.8}, {Spine, 0.2}}, "upper_arms"});
    vs.push_back({{s * (ua + 0.25 * 0.30), 1.35, 0.0}, {{shoulder, 0.8}, {Spine, 0.2}}, "upper_arms"});
    vs.push_back({{s * (ua + 0.75 * 0.30), 1.40, 0.05}, {{shoulder, 1.0}}, "upper_arms"});
    vs.push_back({{s * (ua + 0.75 * 0.30), 1.40, -0.05}, {{shoulder, 1.0}}, "upper_arms"});
    vs.push_back({{s * (fa + 0.2 * 0.25), 1.44, 0.0}, {{elbow, 0.8}, {shoulder, 0.2}}, "forearms"});
    vs.push_back({{s * (fa + 0.6 * 0.25), 1.36, 0.0}, {{elbow, 1.0}}, "forearms"});
    vs.push_back({{s * (fa + 0.9 * 0.25), 1.40, 0.04}, {{elbow, 1.0}}, "forearms"});
    vs.push_back({{s * (ha + 0.4 * 0.11), 1.433, 0.0}, {{wrist, 1.0}}, "hands"});
    vs.push_back({{s * (ha + 0.9 * 0.11), 1.367, 0.0}, {{wrist, 1.0}}, "hands"});
    // Leg (10): thigh 4, shin 3, foot 3.
    const double x = s * 0.085;
    vs.push_back({{x, 0.90 - 0.2 * 0.40, 0.07}, {{hip, 0.8}, {Root, 0.2}}, "thighs"});
    vs.push_back({{x, 0.90 - 0.2 * 0.40, -0.07}, {{hip, 0.8}, {Root, 0.2}}, "thighs"});
    vs.push_back({{x + s * 0.07, 0.90 - 0.7 * 0.40, 0.0}, {{hip, 1.0}}, "thighs"});
    vs.push_back({{x - s * 0.07, 0.90 - 0.7 * 0.40, 0.0}, {{hip, 1.0}}, "thighs"});
    vs.push_back({{x, 0.50 - 0.25 * 0.42, 0.05}, {{knee, 0.8}, {hip, 0.2}}, "shins"});
    vs.push_back({{x, 0.50 - 0.6 * 0.42, -0.05}, {{knee, 1.0}}, "shins"});
    vs.push_back({{x + s * 0.05, 0.50 - 0.9 * 0.42, 0.0}, {{knee, 1.0}}, "shins"});
    vs.push_back({{x, 0.08, 0.14}, {{ankle, 1.0}}, "feet"});
    vs.push_back({{x, 0.04, -0.05}, {{ankle, 1.0}}, "feet"});
    vs.push_back({{x + s * 0.04, 0.04, 0.06}, {{ankle, 1.0}}, "feet"});
  }

  BodyModel m;
  const std::size_t V = vs.size();
  m.template_vertices.resize(V, 3);
  m.skin_weights.resize(V, NumJoints);
  for (std::size_t v = 0; v < V; ++v) {
    for (int a = 0; a < 3; ++a) m.template_vertices(v, a) = vs[v].p[a];
    for (const auto& [j, w] : vs[v].weights) m.skin_weights(v, j) = w;
    m.regions[vs[v].region].push_back(static_cast<std::uint32_t>(v));
  }
  const std::array<std::array<double, 3>, NumJoints> joints{{
      {0.0, 0.95, 0.0},    {0.0, 1.15, 0.0},    {0.0, 1.45, 0.0},    {0.0, 1.53, 0.0},
      {0.17, 1.40, 0.0},   {-0.17, 1.40, 0.0},  {0.46, 1.40, 0.0},   {-0.46, 1.40, 0.0},
      {0.71, 1.40, 0.0},   {-0.71, 1.40, 0.0},  {0.085, 0.90, 0.0},  {-0.085, 0.90, 0.0},
      {0.085, 0.50, 0.0},  {-0.085, 0.50, 0.0}, {0.085, 0.08, 0.0},  {-0.085, 0.08, 0.0},
  }};
  m.joints.resize(NumJoints, 3);
  for (int j = 0; j < NumJoints; ++j) {
    for (int a = 0; a < 3; ++a) m.joints(j, a) = joints[j][a];
  }
  m.parents = {-1, Root, Spine, Neck, Spine, Spine, LShoulder, RShoulder, LElbow, RElbow,
               Root, Root, LHip, RHip, LKnee, RKnee};
  // Two linear shape directions: height (scales y) and girth (scales x, z).
  for (int b = 0; b < 2; ++b) {
    Matrix dv(V, 3), dj(NumJoints, 3);
    for (std::size_t v = 0; v < V; ++v) {
      if (b == 0) dv(v, 1) = 0.05 * m.template_vertices(v, 1);
      else {
        dv(v, 0) = 0.05 * m.template_vertices(v, 0);
        dv(v, 2) = 0.05 * m.template_vertices(v, 2);
      }
    }
    for (int j = 0; j < NumJoints; ++j) {
      if (b == 0) dj(j, 1) = 0.05 * m.joints(j, 1);
      else {
        dj(j, 0) = 0.05 * m.joints(j, 0);
        dj(j, 2) = 0.05 * m.joints(j, 2);
      }
    }
    m.shape_dirs.push_back(std::move(dv));
    m.joint_shape_dirs.push_back(std::move(dj));
  }
  return m;
}

}  // namespace closenet::toy
