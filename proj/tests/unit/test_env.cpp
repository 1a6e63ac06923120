#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gcpo/env.hpp"
#include "gcpo/errors.hpp"
#include "gcpo/expert.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

namespace gcpo {
namespace {

constexpr double kPi = std::numbers::pi;

EnvConfig quiet_config() {
  EnvConfig c;
  c.params.noise_scale = 0.0;
  return c;
}

Vector random_action(PlanarQuadEnv& env, Rng& rng, double spread) {
  Vector a = Vector(env.nominal_joints());
  for (int j = 0; j < kActDim; ++j) a[j] += rng.uniform(-spread, spread);
  return a;
}

TEST(Kinematics, StraightLegsPointDown) {
  const std::array<LegGeometry, kLegs> legs{LegGeometry{0.25}, LegGeometry{-0.25}};
  const Vec2 base(1.5, 0.7);
  const auto k = forward_kinematics(Vec4::Zero(), Vec4::Zero(), legs, base, Vec2::Zero());
  EXPECT_NEAR((k.position[0] - Vec2(1.75, 0.2)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((k.position[1] - Vec2(1.25, 0.2)).norm(), 0.0, 1e-15);
}

TEST(Kinematics, KneeAtRightAngle) {
  const LegGeometry leg{0.0, 0.25, 0.25};
  // thigh straight down, shin swung forward by 90 degrees
  const Vec2 f = foot_position(leg, 0.0, kPi / 2);
  EXPECT_NEAR(f.x(), 0.25, 1e-15);
  EXPECT_NEAR(f.y(), -0.25, 1e-15);
  // thigh forward 90 degrees, shin bent back 90 degrees: points straight down again
  const Vec2 g = foot_position(leg, kPi / 2, -kPi / 2);
  EXPECT_NEAR(g.x(), 0.25, 1e-15);
  EXPECT_NEAR(g.y(), -0.25, 1e-15);
}

TEST(Kinematics, JacobianVelocityMatchesFiniteDifferences) {
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    std::array<LegGeometry, kLegs> legs{LegGeometry{0.25, rng.uniform(0.2, 0.3), rng.uniform(0.2, 0.3)},
                                        LegGeometry{-0.25, rng.uniform(0.2, 0.3), rng.uniform(0.2, 0.3)}};
    Vec4 q, qd;
    for (int j = 0; j < 4; ++j) {
      q[j] = rng.uniform(-1.2, 1.2);
      qd[j] = rng.uniform(-5, 5);
    }
    const Vec2 base(rng.uniform(-1, 1), 0.45), vb(rng.uniform(-1, 1), rng.uniform(-1, 1));
    const auto k0 = forward_kinematics(q, qd, legs, base, vb);
    const double h = 1e-6;
    const auto kp = forward_kinematics(Vec4(q + h * qd), qd, legs, Vec2(base + h * vb), vb);
    const auto km = forward_kinematics(Vec4(q - h * qd), qd, legs, Vec2(base - h * vb), vb);
    for (int i = 0; i < kLegs; ++i) {
      const Vec2 fd = (kp.position[i] - km.position[i]) / (2 * h);
      EXPECT_LE((fd - k0.velocity[i]).norm() / std::max(1e-3, k0.velocity[i].norm()), 1e-6);
    }
  }
}

TEST(Kinematics, InverseKinematicsRoundTrip) {
  Rng rng(2);
  const LegGeometry leg{0.0, 0.25, 0.25};
  for (int k = 0; k < 1000; ++k) {
    const double r = rng.uniform(0.05, 0.49), th = rng.uniform(-1.0, 1.0);
    const Vec2 target(r * std::sin(th), -r * std::cos(th));
    double q1 = 0, q2 = 0;
    ASSERT_TRUE(inverse_kinematics(leg, target, q1, q2));
    EXPECT_LE(q2, 0.0);
    EXPECT_NEAR((foot_position(leg, q1, q2) - target).norm(), 0.0, 1e-9);
  }
  double q1 = 0, q2 = 0;
  EXPECT_FALSE(inverse_kinematics(leg, Vec2(0.0, -0.8), q1, q2));
  EXPECT_NEAR(foot_position(leg, q1, q2).norm(), 0.5, 1e-6);
}

TEST(Zmp, StaticAndHandExamples) {
  EXPECT_EQ(compute_zmp(0.3, 0.45, 0.0, 9.81), 0.3);
  EXPECT_NEAR(compute_zmp(0.3, 0.4, 0.981, 9.81), 0.26, 1e-15);
}

// velocities sampled under constant acceleration, differenced back to the
// acceleration the cart-table formula needs
TEST(Zmp, ConstantAccelerationFromDifferences) {
  const double a = 1.7, dt = 0.0025, z = 0.42, g = 9.81;
  double x = 0.1, v_prev = 0.3;
  for (int k = 1; k < 400; ++k) {
    const double v = 0.3 + a * k * dt;
    x += v * dt;
    const double xdd = (v - v_prev) / dt;
    v_prev = v;
    EXPECT_NEAR(compute_zmp(x, z, xdd, g), x - z / g * a, 1e-9);
  }
}

// with the acceleration filter off, the environment's ZMP is the cart-table
// point of its own consecutive base velocities
TEST(Zmp, EnvironmentUsesConsecutiveVelocities) {
  EnvConfig c = quiet_config();
  c.params.accel_filter_time = 0.0;
  PlanarQuadEnv env(c);
  Rng rng(3);
  env.reset(0.3, rng);
  const ExpertConfig ex = ExpertConfig::from_env(c.params, 0.06);
  for (int t = 0; t < 300 && !env.done(); ++t) {
    env.step(expert_controller(env.snapshot(), 0.3, ex).action, rng);
    const auto& s = env.snapshot();
    const double xdd = (s.base_vel.x() - s.base_vel_prev.x()) / s.dt;
    EXPECT_NEAR(s.zmp, s.com.x() - s.com.y() / s.gravity * xdd, 1e-9);
    EXPECT_EQ(s.support_empty, s.contact_count() == 0);
  }
}

TEST(Noise, DefaultSpreads) {
  const NoiseSpreads n;
  ASSERT_EQ(n.observation.size(), kObsDim);
  EXPECT_EQ(n.observation[obs_index::kHeight], 0.02);
  EXPECT_EQ(n.observation[obs_index::kPitch], 0.1);
  EXPECT_EQ(n.observation[obs_index::kLinVel], 0.05);
  EXPECT_EQ(n.observation[obs_index::kLinVel + 1], 0.05);
  EXPECT_EQ(n.observation[obs_index::kPitchRate], 0.07);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(n.observation[obs_index::kJoints + j], 0.02);
  for (int j = 0; j < 16; ++j) EXPECT_EQ(n.observation[obs_index::kDesiredHistory + j], 0.0);
  for (int j = 0; j < 12; ++j) EXPECT_EQ(n.observation[obs_index::kVelHistory + j], 0.05);
  EXPECT_EQ(n.observation[obs_index::kCommand], 0.0);
  EXPECT_EQ(n.action, Vector::Constant(kActDim, 0.04));
}

TEST(Noise, ZeroScaleIsIdentity) {
  Rng rng(4);
  const Vector x = test::random_vector(rng, kObsDim, 3.0);
  EXPECT_EQ(add_noise(x, NoiseSpreads{}.observation, 0.0, rng), x);
}

TEST(Noise, EmpiricalSpreadMatches) {
  Rng rng(5);
  const Vector spread = NoiseSpreads{}.observation;
  const double sc = 1.5;
  const int n = 100000;
  const Vector x = Vector::Constant(kObsDim, 2.0);
  Vector sum = Vector::Zero(kObsDim), sq = Vector::Zero(kObsDim);
  for (int k = 0; k < n; ++k) {
    const Vector d = add_noise(x, spread, sc, rng) - x;
    sum += d;
    sq += d.cwiseProduct(d);
  }
  for (int i = 0; i < kObsDim; ++i) {
    const double sd = std::sqrt(sq[i] / n - (sum[i] / n) * (sum[i] / n));
    if (spread[i] == 0.0) {
      EXPECT_EQ(sd, 0.0);
    } else {
      EXPECT_NEAR(sd, sc * spread[i], 0.05 * sc * spread[i]) << "dim " << i;
    }
  }
}

TEST(Noise, BadSpreadsRejected) {
  Rng rng(6);
  EXPECT_THROW(add_noise(Vector::Zero(3), Vector::Constant(3, -0.1), 1.0, rng), InvalidInput);
  EXPECT_THROW(add_noise(Vector::Zero(3), Vector::Zero(2), 1.0, rng), InvalidInput);
}

TEST(Env, ObservationLayout) {
  PlanarQuadEnv env(quiet_config());
  Rng rng(7);
  const Vector o = env.reset(0.4, rng);
  ASSERT_EQ(o.size(), kObsDim);
  const auto& s = env.snapshot();
  EXPECT_EQ(o[obs_index::kHeight], s.base_z);
  EXPECT_EQ(o[obs_index::kCommand], 0.4);
  EXPECT_EQ(Vector(o.segment(obs_index::kJoints, 4)), Vector(s.joints));
  for (int k = 0; k < 4; ++k)
    EXPECT_EQ(Vector(o.segment(obs_index::kDesiredHistory + 4 * k, 4)), Vector(s.joints));
  EXPECT_TRUE(o.segment(obs_index::kVelHistory, 12).isZero());
  for (int j = 0; j < kJoints; ++j)
    EXPECT_LE(std::abs(s.joints[j] - env.nominal_joints()[j]), 0.05);
  // histories shift by one each step
  const Vector a1 = random_action(env, rng, 0.05);
  env.step(a1, rng);
  const Vector a2 = random_action(env, rng, 0.05);
  const Vector o2 = env.step(a2, rng).obs;
  EXPECT_EQ(Vector(o2.segment(obs_index::kDesiredHistory, 4)), a2);
  EXPECT_EQ(Vector(o2.segment(obs_index::kDesiredHistory + 4, 4)), a1);
  EXPECT_EQ(Vector(o2.segment(obs_index::kVelHistory, 4)), Vector(env.snapshot().joint_vel));
}

TEST(Env, DeterministicUnderAFixedSeed) {
  EnvConfig c;
  c.params.noise_scale = 1.0;
  auto run = [&]() {
    PlanarQuadEnv env(c);
    Rng rng(8);
    std::vector<Vector> out{env.reset(0.5, rng)};
    Rng act(9);
    for (int t = 0; t < 200 && !env.done(); ++t) out.push_back(env.step(random_action(env, act, 0.2), rng).obs);
    return out;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a[t], b[t]);
}

TEST(Env, HoldingTheStanceEarnsTheKernelPeaks) {
  EnvConfig c = quiet_config();
  c.params.reset_joint_noise = 0.0;
  PlanarQuadEnv env(c);
  Rng rng(10);
  env.reset(0.0, rng);
  for (int t = 0; t < 10; ++t) {
    const auto r = env.step(Vector(env.nominal_joints()), rng);
    EXPECT_NEAR(env.snapshot().torque.norm(), 0.0, 1e-9);
    EXPECT_NEAR(r.reward, c.reward.linear_velocity * 0.25 + c.reward.angular_velocity * 0.25, 1e-9);
    EXPECT_TRUE(r.costs.isZero());
    EXPECT_FALSE(r.terminated);
  }
}

double tracking_of(const EnvSnapshot& s, const EnvConfig& c) {
  return c.reward.linear_velocity *
             logistic_kernel(c.reward.velocity_kernel_scale * (s.base_vel.x() - s.command)) +
         c.reward.angular_velocity * logistic_kernel(s.pitch_rate);
}

TEST(Env, RewardDecomposesAlongAnExpertRollout) {
  EnvConfig c = quiet_config();
  PlanarQuadEnv env(c);
  Rng rng(11);
  env.reset(0.5, rng);
  const ExpertConfig ex = ExpertConfig::from_env(c.params, 0.06);
  ConstraintReport prev = eval_kappa(env.snapshot(), c.constraints);
  for (int t = 0; t < 400 && !env.done(); ++t) {
    const auto r = env.step(expert_controller(env.snapshot(), 0.5, ex).action, rng);
    const auto& s = env.snapshot();
    int recovered = 0;
    for (std::size_t k = 0; k < r.kappa.entries.size(); ++k)
      recovered += prev.entries[k].violated && !r.kappa.entries[k].violated;
    prev = r.kappa;
    EXPECT_NEAR(r.reward, tracking_of(s, c) - r.penalty + recovered * c.recovery_bonus, 1e-12);
    const double tracking =
        c.reward.linear_velocity * logistic_kernel(c.reward.velocity_kernel_scale * (s.base_vel.x() - 0.5)) +
        c.reward.angular_velocity * logistic_kernel(s.pitch_rate);
    EXPECT_LE(tracking, 0.25 * (c.reward.linear_velocity + c.reward.angular_velocity));
    EXPECT_NEAR(r.penalty, reward_penalty(s, r.rho, c.constraints, c.reward), 1e-12);
    EXPECT_GE(r.penalty, 0.0);
    // no recovery bonus unless some kappa constraint just recovered
    if (r.reward > tracking - r.penalty + 1e-12) { EXPECT_GT(recovered, 0); }
  }
}

// one physics substep per control step makes the applied torque readable off
// the joints before the step and the filtered target
TEST(Env, DampingFilterAndTorque) {
  for (double damping : {1.0, 0.6}) {
    EnvConfig c = quiet_config();
    c.params.substep = c.params.dt;
    c.params.damping = damping;
    PlanarQuadEnv env(c);
    Rng rng(12);
    env.reset(0.0, rng);
    Vec4 filtered = env.snapshot().joints;
    Rng act(13);
    for (int t = 0; t < 30 && !env.done(); ++t) {
      const Vec4 q = env.snapshot().joints, qd = env.snapshot().joint_vel;
      const Vector a = random_action(env, act, 0.1);
      filtered = damping * Vec4(a) + (1 - damping) * filtered;
      env.step(a, rng);
      for (int j = 0; j < kJoints; ++j) {
        const double tau = std::clamp(c.params.kp * (filtered[j] - q[j]) - c.params.kd * qd[j],
                                      -c.params.torque_limit, c.params.torque_limit);
        EXPECT_NEAR(env.snapshot().torque[j], tau, 1e-12);
      }
    }
  }
}

TEST(Env, TorqueStaysClamped) {
  EnvConfig c = quiet_config();
  c.params.randomize.torque = true;
  c.params.max_steps = 60;
  PlanarQuadEnv env(c);
  Rng rng(14);
  for (int e = 0; e < 20; ++e) {
    env.reset(0.0, rng);
    const double cap = c.params.torque_limit * env.episode_params().torque_scale;
    while (!env.done()) {
      env.step(random_action(env, rng, 2.0), rng);
      EXPECT_LE(env.snapshot().torque.cwiseAbs().maxCoeff(), cap + 1e-12);
    }
  }
}

TEST(Env, RandomizationRanges) {
  EnvConfig c;
  c.params.noise_scale = 1.0;
  c.params.randomize = {true, true, true, true, true, true};
  c.params.max_steps = 5;
  PlanarQuadEnv env(c);
  Rng rng(15);
  double g_lo = 1e9, g_hi = 0, t_lo = 1e9, t_hi = 0, dt_lo = 1, dt_hi = 0;
  for (int e = 0; e < 500; ++e) {
    env.reset(0.0, rng);
    const auto& p = env.episode_params();
    g_lo = std::min(g_lo, p.gravity);
    g_hi = std::max(g_hi, p.gravity);
    t_lo = std::min(t_lo, p.torque_scale);
    t_hi = std::max(t_hi, p.torque_scale);
    EXPECT_GE(p.gravity, 0.95 * 9.81);
    EXPECT_LE(p.gravity, 1.05 * 9.81);
    EXPECT_GE(p.torque_scale, 0.5);
    EXPECT_LE(p.torque_scale, 2.0);
    EXPECT_GE(p.mass_scale.minCoeff(), 0.93);
    EXPECT_LE(p.mass_scale.maxCoeff(), 1.07);
    EXPECT_GE(p.size_scale.minCoeff(), 0.97);
    EXPECT_LE(p.size_scale.maxCoeff(), 1.05);
    EXPECT_GE(p.damping, 1.0 - 1.0 / 4.0);
    EXPECT_LE(p.damping, 1.0);
    while (!env.done()) {
      env.step(Vector(env.nominal_joints()), rng);
      dt_lo = std::min(dt_lo, env.snapshot().dt);
      dt_hi = std::max(dt_hi, env.snapshot().dt);
    }
  }
  EXPECT_GE(dt_lo, 0.00225);
  EXPECT_LE(dt_hi, 0.00275);
  // the draws actually spread over their ranges
  EXPECT_LT(g_lo, 0.96 * 9.81);
  EXPECT_GT(g_hi, 1.04 * 9.81);
  EXPECT_LT(t_lo, 0.6);
  EXPECT_GT(t_hi, 1.9);
  EXPECT_LT(dt_lo, 0.0023);
  EXPECT_GT(dt_hi, 0.0027);
}

TEST(Env, StepAfterTheEndRejected) {
  EnvConfig c = quiet_config();
  c.params.max_steps = 3;
  PlanarQuadEnv env(c);
  Rng rng(16);
  const Vector hold = Vector(PlanarQuadEnv::nominal_joint_targets(c.params));
  EXPECT_THROW(env.step(hold, rng), InvalidState);
  env.reset(0.0, rng);
  for (int t = 0; t < 3; ++t) EXPECT_EQ(env.step(hold, rng).truncated, t == 2);
  EXPECT_THROW(env.step(hold, rng), InvalidState);
  env.reset(0.0, rng);
  EXPECT_THROW(env.step(Vector::Zero(3), rng), InvalidInput);
  Vector bad = hold;
  bad[0] = std::nan("");
  EXPECT_THROW(env.step(bad, rng), InvalidInput);
}

TEST(Env, EtaEndsTheEpisode) {
  PlanarQuadEnv env(quiet_config());
  Rng rng(17);
  env.reset(0.0, rng);
  Vector kick = Vector(env.nominal_joints());
  kick[0] += 1.5;
  kick[2] -= 1.5;
  StepResult r;
  while (!env.done()) r = env.step(kick, rng);
  EXPECT_TRUE(r.terminated);
  EXPECT_FALSE(r.truncated);
  EXPECT_TRUE(r.eta.eta_triggered);
  EXPECT_LT(env.steps(), EnvParams{}.max_steps);
}

// the same commands at half the control step, each applied twice
TEST(Env, HalvingTheStepKeepsTheTrajectory) {
  EnvConfig a_cfg = quiet_config(), b_cfg = quiet_config();
  b_cfg.params.dt = a_cfg.params.dt / 2;
  b_cfg.params.max_steps = 2 * a_cfg.params.max_steps;
  PlanarQuadEnv a(a_cfg), b(b_cfg);
  Rng ra(18), rb(18);
  a.reset(0.4, ra);
  b.reset(0.4, rb);
  const ExpertConfig ex = ExpertConfig::from_env(a_cfg.params, 0.06);
  for (int t = 0; t < 400 && !a.done() && !b.done(); ++t) {
    const Vector act = expert_controller(a.snapshot(), 0.4, ex).action;
    a.step(act, ra);
    b.step(act, rb);
    b.step(act, rb);
    EXPECT_NEAR((a.snapshot().joints - b.snapshot().joints).norm(), 0.0, 1e-3);
    EXPECT_NEAR(a.snapshot().base_x, b.snapshot().base_x, 1e-3);
    EXPECT_NEAR(a.snapshot().base_z, b.snapshot().base_z, 1e-3);
  }
  EXPECT_GT(a.snapshot().base_x, 0.1);  // it actually walked
}

TEST(Env, SingleStanceFootDoesNotSlip) {
  EnvConfig c = quiet_config();
  PlanarQuadEnv env(c);
  Rng rng(19);
  env.reset(0.5, rng);
  const ExpertConfig ex = ExpertConfig::from_env(c.params, 0.06);
  auto sole_stance = [&](const EnvSnapshot& s) {
    int foot = -1;
    for (int i = 0; i < kLegs; ++i) {
      const double h = s.foot_world[i].y();
      if (h <= 1e-12) foot = foot < 0 ? i : -2;
      else if (h < c.params.stance_blend) return -2;
    }
    return foot;
  };
  int checked = 0;
  for (int t = 0; t < 1000 && !env.done(); ++t) {
    const int before = sole_stance(env.snapshot());
    env.step(expert_controller(env.snapshot(), 0.5, ex).action, rng);
    const int after = sole_stance(env.snapshot());
    if (before >= 0 && before == after) {
      EXPECT_LE(env.snapshot().foot_vel[after].norm(), 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Env, ContactInvariants) {
  EnvConfig c = quiet_config();
  c.params.noise_scale = 1.0;
  PlanarQuadEnv env(c);
  Rng rng(20);
  for (int e = 0; e < 5; ++e) {
    env.reset(0.3, rng);
    while (!env.done()) {
      env.step(random_action(env, rng, 0.3), rng);
      const auto& s = env.snapshot();
      for (int i = 0; i < kLegs; ++i) {
        if (s.contact[i]) { EXPECT_LE(s.foot_world[i].y(), c.params.contact_tolerance); }
        EXPECT_GE(s.contact_force[i], 0.0);
      }
      EXPECT_EQ(s.support_empty, s.contact_count() == 0);
    }
  }
}

TEST(Env, TrajectoryRecordFields) {
  PlanarQuadEnv env(quiet_config());
  Rng rng(21);
  env.reset(0.2, rng);
  const auto r = env.step(Vector(env.nominal_joints()), rng);
  std::ostringstream os;
  write_trajectory_record(os, env.snapshot(), r);
  const auto j = nlohmann::json::parse(os.str());
  for (const char* key : {"time", "dt", "command", "base", "base_vel", "joints", "joint_vel",
                          "joint_acc", "torque", "feet", "foot_vel", "contact_force", "zmp",
                          "support", "com", "reward", "costs", "violated", "kappa_violated",
                          "terminated"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["reward"].get<double>(), r.reward);
  EXPECT_EQ(j["costs"].size(), 5u);
}

TEST(EnvParams, Validation) {
  auto rejects = [](auto mutate) {
    EnvParams p;
    mutate(p);
    EXPECT_THROW(p.validate(), InvalidInput);
  };
  EXPECT_NO_THROW(EnvParams{}.validate());
  rejects([](EnvParams& p) { p.dt = 0.0; });
  rejects([](EnvParams& p) { p.torque_limit = 0.0; });
  rejects([](EnvParams& p) { p.gravity = -9.81; });
  rejects([](EnvParams& p) { p.damping = 0.0; });
  rejects([](EnvParams& p) { p.nominal_height = 0.6; });
  rejects([](EnvParams& p) { p.max_steps = 0; });
}

}  // namespace
}  // namespace gcpo
