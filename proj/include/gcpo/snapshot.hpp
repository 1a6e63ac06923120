#pragma once

#include <array>

#include <Eigen/Dense>

namespace gcpo {

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;

inline constexpr int kLegs = 2;
inline constexpr int kJoints = 4;  // hip, knee of the front leg, then of the hind leg

/// Full kinematic state after one control step. World frame: x forward, z up,
/// ground at z = 0. Foot positions relative to the base are "base frame".
struct EnvSnapshot {
  double time = 0.0;
  double dt = 0.0;
  double base_x = 0.0;
  double base_z = 0.0;
  double pitch = 0.0;
  Vec2 base_vel = Vec2::Zero();
  Vec2 base_vel_prev = Vec2::Zero();
  double pitch_rate = 0.0;
  double command = 0.0;

  Vec4 joints = Vec4::Zero();
  Vec4 joints_prev = Vec4::Zero();
  Vec4 joint_vel = Vec4::Zero();
  Vec4 joint_acc = Vec4::Zero();
  Vec4 torque = Vec4::Zero();

  std::array<Vec2, kLegs> foot_world{};    // f_i
  std::array<Vec2, kLegs> foot_rel{};      // f_i - base, base frame
  std::array<Vec2, kLegs> foot_anchor{};   // f_i^0, base frame
  std::array<Vec2, kLegs> foot_vel{};      // world-frame foot velocity
  std::array<Vec2, kLegs> foot_vel_prev{};
  std::array<double, kLegs> contact_force{};  // F_{f_i} proxy, >= 0
  std::array<bool, kLegs> contact{};

  double body_weight = 0.0;   // m g
  double gravity = 9.81;
  Vec2 com = Vec2::Zero();    // C
  double com_acc = 0.0;       // filtered horizontal CoM acceleration used for u
  double zmp = 0.0;           // u, world x
  bool support_empty = true;  // S
  double support_lo = 0.0;
  double support_hi = 0.0;

  int contact_count() const { return int(contact[0]) + int(contact[1]); }
};

}  // namespace gcpo
