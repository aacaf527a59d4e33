// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace closenet {
struct BodyModel;
}

namespace closenet::toy {

/// Joint order of the toy humanoid's kinematic tree.
enum Joint : int {
  Root, Spine, Neck, HeadJoint, LShoulder, RShoulder, LElbow, RElbow, LWrist, RWrist,
  LHip, RHip, LKnee, RKnee, LAnkle, RAnkle, NumJoints
};

enum class Part : std::uint8_t {
  Pelvis, Chest, ShoulderCap, Neck, Head, UpperArm, Forearm, Hand, Thigh, Shin, Foot
};

/// A point on the canonical (T-pose) body surface with the coordinates the
/// garment recipes are written in.
struct SurfaceSample {
  Part part;
  int side = 0;      // +1 left (+x), -1 right, 0 midline
  int joint = Root;  // rigidly attached joint
  double t = 0.0;    // 0 at the proximal end of a limb, 1 at the distal end
  std::array<double, 3> position{};
  std::array<double, 3> normal{};
};

/// Area-weighted uniform samples over capsule torso, limb cylinders and head.
std::vector<SurfaceSample> sample_surface(std::size_t count, std::mt19937_64& rng);

BodyModel build_body_model();

inline constexpr double kTorsoRadiusX = 0.16;
inline constexpr double kTorsoRadiusZ = 0.11;
inline constexpr double kTorsoBottom = 0.88;
inline constexpr double kWaist = 1.08;
inline constexpr double kShoulderHeight = 1.45;
inline constexpr double kHeadCenterY = 1.63;
inline constexpr double kHeadRadius = 0.10;

}  // namespace closenet::toy
