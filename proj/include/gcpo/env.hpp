#pragma once

#include <array>
#include <deque>
#include <iosfwd>
#include <vector>

#include "gcpo/constraints.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rng.hpp"
#include "gcpo/snapshot.hpp"

namespace gcpo {

struct LegGeometry {
  double hip_x = 0.0;  // hip position along the body, base frame
  double l1 = 0.25;
  double l2 = 0.25;
};

/// Foot position relative to the base for hip angle q1 and knee angle q2
/// (angles measured from straight down, positive swings the foot forward).
Vec2 foot_position(const LegGeometry& leg, double q1, double q2);
Eigen::Matrix2d foot_jacobian(const LegGeometry& leg, double q1, double q2);

struct FootKinematics {
  std::array<Vec2, kLegs> position;  // world
  std::array<Vec2, kLegs> velocity;  // world, base translation included
};

/// World foot positions and analytic velocities for a base at `base`
/// translating with `base_vel`.
FootKinematics forward_kinematics(const Vec4& joints, const Vec4& joint_vel,
                                  const std::array<LegGeometry, kLegs>& legs, const Vec2& base,
                                  const Vec2& base_vel);

/// Closed-form two-link IK (knee bent backward, q2 <= 0). Targets beyond reach
/// are pulled onto the workspace boundary; returns false in that case.
bool inverse_kinematics(const LegGeometry& leg, const Vec2& target, double& q1, double& q2);

/// u = x_C - (z_C / g) * xdd_C
double compute_zmp(double com_x, double com_z, double com_x_acc, double gravity);

/// x + s_c * spread .* N(0, 1)
Vector add_noise(const Vector& x, const Vector& spread, double noise_scale, Rng& rng);

struct RandomizationToggles {
  bool gravity = false;
  bool torque = false;
  bool mass = false;
  bool size = false;
  bool damping = false;
  bool step_time = false;

  bool any() const { return gravity || torque || mass || size || damping || step_time; }
};

struct EnvParams {
  double link1 = 0.25;
  double link2 = 0.25;
  double hip_offset = 0.25;       // hips at +/- hip_offset from the base point
  double nominal_height = 0.45;
  double gravity = 9.81;
  double body_mass = 30.0;
  double joint_inertia = 0.05;
  double kp = 20.0;
  double kd = 1.6;
  double torque_limit = 35.0;
  double dt = 0.0025;
  double substep = 0.00025;       // physics integration step inside one control step
  double contact_tolerance = 0.002;
  double stance_blend = 1e-4;     // height band over which feet share the no-slip constraint
  double foot_half_length = 0.05;
  double accel_filter_time = 0.05;  // low-pass time constant of the base acceleration (0: raw)
  double reset_joint_noise = 0.05;
  double noise_scale = 0.0;       // s_c
  int max_steps = 1000;

  // per-episode scales, resampled on reset when the matching toggle is on
  double torque_scale = 1.0;                  // s_t
  Vec4 mass_scale = Vec4::Ones();             // per link
  Vec4 size_scale = Vec4::Ones();             // per link
  double damping = 1.0;                       // K_damp
  RandomizationToggles randomize;

  void validate() const;
};

inline constexpr int kObsDim = 38;
inline constexpr int kActDim = 4;

/// Observation index map.
namespace obs_index {
inline constexpr int kHeight = 0;
inline constexpr int kPitch = 1;
inline constexpr int kLinVel = 2;        // vx, vz
inline constexpr int kPitchRate = 4;
inline constexpr int kJoints = 5;        // 4 entries
inline constexpr int kDesiredHistory = 9;  // J^des_{t-1} .. J^des_{t-4}, 16 entries
inline constexpr int kVelHistory = 25;   // Jdot_t, Jdot_{t-1}, Jdot_{t-2}, 12 entries
inline constexpr int kCommand = 37;
}  // namespace obs_index

struct NoiseSpreads {
  Vector observation = default_observation();
  Vector action = Vector::Constant(kActDim, 0.04);

  static Vector default_observation();
};

struct EnvConfig {
  EnvParams params;
  std::vector<ConstraintSpec> constraints = default_constraints();
  RewardWeights reward;
  double recovery_bonus = 0.05;   // per kappa-constraint
  double terminal_penalty = -1.0;
  NoiseSpreads noise;

  static std::vector<ConstraintSpec> default_constraints();
  int kappa_count() const;
  void validate() const;
};

struct StepResult {
  Vector obs;            // noisy observation (what the policy sees)
  double reward = 0.0;
  double penalty = 0.0;  // scaled penalty part already subtracted in reward
  Vector costs;          // weighted kappa costs
  ConstraintReport rho;
  ConstraintReport kappa;
  ConstraintReport eta;
  bool kappa_violated = false;
  bool terminated = false;  // eta trigger
  bool truncated = false;   // step cap
};

class PlanarQuadEnv {
 public:
  explicit PlanarQuadEnv(EnvConfig cfg);

  /// Starts an episode tracking `command`. Randomized scales are drawn from
  /// `rng` when their toggles are on.
  Vector reset(double command, Rng& rng);
  StepResult step(const Vector& action, Rng& rng);

  const EnvSnapshot& snapshot() const { return snap_; }
  const EnvConfig& config() const { return cfg_; }
  EnvConfig& mutable_config() { return cfg_; }
  const EnvParams& episode_params() const { return ep_; }
  const std::array<LegGeometry, kLegs>& legs() const { return legs_; }
  Vec4 nominal_joints() const { return nominal_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }
  /// Noise-free observation of the current state.
  Vector clean_observation() const;
  int kappa_count() const { return kappa_count_; }

  /// Fixed input normalization matching the observation layout.
  static InputNormalizer observation_normalizer(const EnvParams& p, double command_center);
  static Vec4 nominal_joint_targets(const EnvParams& p);

 private:
  void update_kinematics(const Vec4& prev_rel_x, double dt);
  double accel_blend(double dt) const;

  EnvConfig cfg_;
  EnvParams ep_;
  std::array<LegGeometry, kLegs> legs_{};
  Vec4 nominal_ = Vec4::Zero();
  EnvSnapshot snap_;
  Vec4 filtered_target_ = Vec4::Zero();
  std::deque<Vec4> desired_history_;  // most recent first, 4 entries
  std::deque<Vec4> velocity_history_; // most recent first, 3 entries
  ConstraintReport prev_kappa_;
  double vz_ = 0.0;
  double z_acc_ = 0.0;  // filtered vertical acceleration
  int steps_ = 0;
  int kappa_count_ = 0;
  bool done_ = true;
};

/// One JSON object per line: time, base, joints, feet, contacts, ZMP, reward,
/// costs and the ids of every violated constraint per tier.
void write_trajectory_record(std::ostream& os, const EnvSnapshot& s, const StepResult& r);

}  // namespace gcpo
