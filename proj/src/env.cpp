#include "gcpo/env.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "gcpo/errors.hpp"

namespace gcpo {

Vec2 foot_position(const LegGeometry& leg, double q1, double q2) {
  return {leg.hip_x + leg.l1 * std::sin(q1) + leg.l2 * std::sin(q1 + q2),
          -leg.l1 * std::cos(q1) - leg.l2 * std::cos(q1 + q2)};
}

Eigen::Matrix2d foot_jacobian(const LegGeometry& leg, double q1, double q2) {
  const double c1 = std::cos(q1), s1 = std::sin(q1);
  const double c12 = std::cos(q1 + q2), s12 = std::sin(q1 + q2);
  Eigen::Matrix2d j;
  j << leg.l1 * c1 + leg.l2 * c12, leg.l2 * c12,
       leg.l1 * s1 + leg.l2 * s12, leg.l2 * s12;
  return j;
}

FootKinematics forward_kinematics(const Vec4& joints, const Vec4& joint_vel,
                                  const std::array<LegGeometry, kLegs>& legs, const Vec2& base,
                                  const Vec2& base_vel) {
  FootKinematics k;
  for (int i = 0; i < kLegs; ++i) {
    const double q1 = joints[2 * i], q2 = joints[2 * i + 1];
    k.position[i] = base + foot_position(legs[i], q1, q2);
    k.velocity[i] =
        base_vel + foot_jacobian(legs[i], q1, q2) * Vec2(joint_vel[2 * i], joint_vel[2 * i + 1]);
  }
  return k;
}

bool inverse_kinematics(const LegGeometry& leg, const Vec2& target, double& q1, double& q2) {
  Vec2 p = target - Vec2(leg.hip_x, 0.0);
  const double reach_max = leg.l1 + leg.l2 - 1e-9;
  const double reach_min = std::abs(leg.l1 - leg.l2) + 1e-9;
  double r = p.norm();
  bool ok = true;
  if (r > reach_max || r < reach_min) {
    ok = false;
    const double clamped = std::clamp(r, reach_min, reach_max);
    p = r > 0.0 ? Vec2(p * (clamped / r)) : Vec2(0.0, -clamped);
    r = clamped;
  }
  const double c2 = (r * r - leg.l1 * leg.l1 - leg.l2 * leg.l2) / (2.0 * leg.l1 * leg.l2);
  q2 = -std::acos(std::clamp(c2, -1.0, 1.0));
  q1 = std::atan2(p.x(), -p.y()) - std::atan2(leg.l2 * std::sin(q2), leg.l1 + leg.l2 * std::cos(q2));
  return ok;
}

double compute_zmp(double com_x, double com_z, double com_x_acc, double gravity) {
  return com_x - (com_z / gravity) * com_x_acc;
}

Vector add_noise(const Vector& x, const Vector& spread, double noise_scale, Rng& rng) {
  if (spread.size() != x.size()) throw InvalidInput("noise spread does not match the vector layout");
  if ((spread.array() < 0.0).any() || noise_scale < 0.0)
    throw InvalidInput("noise spreads must be non-negative");
  Vector out = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double draw = rng.normal();
    out[i] += noise_scale * spread[i] * draw;
  }
  return out;
}

void EnvParams::validate() const {
  if (!(dt > 0.0) || !(substep > 0.0)) throw InvalidInput("control and physics steps must be positive");
  if (!(torque_limit > 0.0)) throw InvalidInput("torque limit must be positive");
  if (!(gravity > 0.0)) throw InvalidInput("gravity must be positive");
  if (!(link1 > 0.0 && link2 > 0.0)) throw InvalidInput("link lengths must be positive");
  if (!(nominal_height > std::abs(link1 - link2) && nominal_height < link1 + link2))
    throw InvalidInput("nominal height is outside the leg workspace");
  if (!(joint_inertia > 0.0) || kp < 0.0 || kd < 0.0) throw InvalidInput("bad joint dynamics");
  if (!(contact_tolerance > 0.0) || !(stance_blend > 0.0) || stance_blend > contact_tolerance)
    throw InvalidInput("contact tolerance and stance band must be positive, band <= tolerance");
  if (noise_scale < 0.0) throw InvalidInput("noise scale must be >= 0");
  if (!(damping > 0.0 && damping <= 1.0)) throw InvalidInput("damping factor must lie in (0, 1]");
  if (!(torque_scale > 0.0)) throw InvalidInput("torque scale must be positive");
  if (max_steps <= 0) throw InvalidInput("episode step cap must be positive");
  if (accel_filter_time < 0.0) throw InvalidInput("acceleration filter time must be >= 0");
}

Vector NoiseSpreads::default_observation() {
  Vector s(kObsDim);
  s << 0.02, 0.1, 0.05, 0.05, 0.07, Vector::Constant(4, 0.02), Vector::Zero(16),
      Vector::Constant(12, 0.05), 0.0;
  return s;
}

std::vector<ConstraintSpec> EnvConfig::default_constraints() {
  using T = Tier;
  using C = CostTerm;
  return {
      {"joint_speed_rho", C::kJointSpeed, T::kRho, 7.5, 0.01, std::nullopt, false},
      {"joint_acc_rho", C::kJointAcceleration, T::kRho, 150.0, 1e-5, std::nullopt, false},
      {"foot_clearance_rho", C::kFootClearance, T::kRho, 0.06, 5.0, std::nullopt, false},
      {"foot_region_rho", C::kFootRegion, T::kRho, 0.10, 1.0, std::nullopt, false},
      {"joint_speed", C::kJointSpeed, T::kKappa, 15.0, 0.1, 2.0, true},
      {"joint_acc", C::kJointAcceleration, T::kKappa, 300.0, 1e-4, 2.0, true},
      {"foot_region", C::kFootRegion, T::kKappa, 0.15, 25.0, 2.0, true},
      {"zmp", C::kZmp, T::kKappa, 0.3, 10.0, 2.0, false},
      {"foot_contacts", C::kFootContacts, T::kKappa, 0.25, 1.0, 2.0, true},
      {"joint_speed_eta", C::kJointSpeed, T::kEta, 20.0, 1.0, std::nullopt, false},
      {"joint_acc_eta", C::kJointAcceleration, T::kEta, 450.0, 1.0, std::nullopt, false},
      {"foot_region_eta", C::kFootRegion, T::kEta, 0.20, 1.0, std::nullopt, false},
      {"zmp_eta", C::kZmp, T::kEta, 1.0, 1.0, std::nullopt, false},
      {"foot_contacts_eta", C::kFootContacts, T::kEta, 1.0, 1.0, std::nullopt, false},
  };
}

int EnvConfig::kappa_count() const {
  return static_cast<int>(std::count_if(constraints.begin(), constraints.end(),
                                        [](const auto& s) { return s.tier == Tier::kKappa; }));
}

void EnvConfig::validate() const {
  params.validate();
  validate_specs(constraints);
  if (noise.observation.size() != kObsDim || noise.action.size() != kActDim)
    throw InvalidInput("noise spread vectors do not match the observation/action layout");
  if ((noise.observation.array() < 0.0).any() || (noise.action.array() < 0.0).any())
    throw InvalidInput("noise spreads must be non-negative");
  if (!(terminal_penalty < 0.0)) throw InvalidInput("terminal penalty must be negative");
  if (recovery_bonus < 0.0) throw InvalidInput("recovery bonus must be >= 0");
}

Vec4 PlanarQuadEnv::nominal_joint_targets(const EnvParams& p) {
  Vec4 q;
  for (int i = 0; i < kLegs; ++i) {
    const LegGeometry leg{0.0, p.link1 * p.size_scale[2 * i], p.link2 * p.size_scale[2 * i + 1]};
    inverse_kinematics(leg, Vec2(0.0, -p.nominal_height), q[2 * i], q[2 * i + 1]);
  }
  return q;
}

InputNormalizer PlanarQuadEnv::observation_normalizer(const EnvParams& p, double command_center) {
  const Vec4 q0 = nominal_joint_targets(p);
  InputNormalizer n;
  n.offset = Vector::Zero(kObsDim);
  n.scale = Vector::Ones(kObsDim);
  n.offset[obs_index::kHeight] = p.nominal_height;
  n.scale[obs_index::kHeight] = 1.0 / 0.05;
  n.scale.segment(obs_index::kLinVel, 2).setConstant(1.0 / 0.5);
  for (int k = 0; k < 5; ++k) {
    const int at = k == 0 ? obs_index::kJoints : obs_index::kDesiredHistory + 4 * (k - 1);
    n.offset.segment(at, 4) = q0;
    n.scale.segment(at, 4).setConstant(1.0 / 0.3);
  }
  n.scale.segment(obs_index::kVelHistory, 12).setConstant(1.0 / 3.0);
  n.offset[obs_index::kCommand] = command_center;
  n.scale[obs_index::kCommand] = 1.0 / 0.5;
  return n;
}

PlanarQuadEnv::PlanarQuadEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  kappa_count_ = cfg_.kappa_count();
}

Vector PlanarQuadEnv::reset(double command, Rng& rng) {
  ep_ = cfg_.params;
  const auto& tog = ep_.randomize;
  if (tog.gravity) ep_.gravity = cfg_.params.gravity * rng.uniform(0.95, 1.05);
  if (tog.torque) ep_.torque_scale = rng.uniform(0.5, 2.0);
  if (tog.mass)
    for (int j = 0; j < kJoints; ++j) ep_.mass_scale[j] = rng.uniform(0.93, 1.07);
  if (tog.size)
    for (int j = 0; j < kJoints; ++j) ep_.size_scale[j] = rng.uniform(0.97, 1.05);
  if (tog.damping) ep_.damping = rng.uniform(1.0 - ep_.noise_scale / 4.0, 1.0);

  for (int i = 0; i < kLegs; ++i) {
    legs_[i].hip_x = i == 0 ? ep_.hip_offset : -ep_.hip_offset;
    legs_[i].l1 = ep_.link1 * ep_.size_scale[2 * i];
    legs_[i].l2 = ep_.link2 * ep_.size_scale[2 * i + 1];
  }
  nominal_ = nominal_joint_targets(ep_);

  snap_ = EnvSnapshot{};
  snap_.command = command;
  snap_.gravity = ep_.gravity;
  snap_.body_weight = ep_.body_mass * ep_.mass_scale.mean() * ep_.gravity;
  snap_.dt = ep_.dt;
  for (int j = 0; j < kJoints; ++j)
    snap_.joints[j] = nominal_[j] + rng.uniform(-ep_.reset_joint_noise, ep_.reset_joint_noise);
  snap_.joints_prev = snap_.joints;
  for (int i = 0; i < kLegs; ++i) {
    snap_.foot_anchor[i] = foot_position(legs_[i], nominal_[2 * i], nominal_[2 * i + 1]);
    snap_.foot_rel[i] = foot_position(legs_[i], snap_.joints[2 * i], snap_.joints[2 * i + 1]);
  }
  snap_.base_z = std::max(-snap_.foot_rel[0].y(), -snap_.foot_rel[1].y());
  vz_ = 0.0;
  z_acc_ = 0.0;
  steps_ = 0;
  update_kinematics(Vec4(snap_.foot_rel[0].x(), 0, snap_.foot_rel[1].x(), 0), ep_.dt);
  snap_.base_vel.setZero();
  snap_.base_vel_prev.setZero();
  for (int i = 0; i < kLegs; ++i) {
    snap_.foot_vel[i].setZero();
    snap_.foot_vel_prev[i].setZero();
  }
  snap_.zmp = snap_.com.x();

  filtered_target_ = snap_.joints;
  desired_history_.assign(4, snap_.joints);
  velocity_history_.assign(3, Vec4::Zero());
  prev_kappa_ = eval_kappa(snap_, cfg_.constraints);
  steps_ = 0;
  done_ = false;
  const Vector clean = clean_observation();
  return add_noise(clean, cfg_.noise.observation, ep_.noise_scale, rng);
}

// The kinematic base has no inertia of its own, so a raw one-step velocity
// difference reflects every joint jerk. Both the ZMP and the force proxy see
// the base acceleration through a first-order low-pass instead.
double PlanarQuadEnv::accel_blend(double dt) const {
  return ep_.accel_filter_time > 0.0 ? std::min(1.0, dt / ep_.accel_filter_time) : 1.0;
}

// Recomputes feet, base height, contacts, force proxy, CoM and support
// interval from the current joints. `prev_rel_x` holds the previous relative
// foot x positions at indices 0 and 2 for the no-slip base update.
void PlanarQuadEnv::update_kinematics(const Vec4& prev_rel_x, double dt) {
  const double tol = ep_.contact_tolerance;
  double reach = -1e9;
  for (int i = 0; i < kLegs; ++i) {
    snap_.foot_rel[i] = foot_position(legs_[i], snap_.joints[2 * i], snap_.joints[2 * i + 1]);
    reach = std::max(reach, -snap_.foot_rel[i].y());
  }

  // vertical: supported at full leg reach unless the ballistic arc clears it
  const double z_old = snap_.base_z;
  const double vz_old = vz_;
  const double ballistic = z_old + vz_old * dt - 0.5 * ep_.gravity * dt * dt;
  const bool flight = steps_ > 0 && ballistic > reach + tol;
  if (flight) {
    snap_.base_z = ballistic;
    vz_ = vz_old - ep_.gravity * dt;
  } else {
    snap_.base_z = reach;
    vz_ = steps_ > 0 ? (reach - z_old) / dt : 0.0;
  }
  if (steps_ > 0) z_acc_ += accel_blend(dt) * ((vz_ - vz_old) / dt - z_acc_);

  // contact (force, support) uses the contact tolerance; the no-slip
  // constraint belongs to the load-bearing foot, blended over a thin band
  std::array<double, kLegs> w{}, stance{};
  double w_sum = 0.0, stance_sum = 0.0;
  for (int i = 0; i < kLegs; ++i) {
    const double h = snap_.base_z + snap_.foot_rel[i].y();
    w[i] = h < tol ? 1.0 - std::max(h, 0.0) / tol : 0.0;
    stance[i] = h < ep_.stance_blend ? 1.0 - std::max(h, 0.0) / ep_.stance_blend : 0.0;
    w_sum += w[i];
    stance_sum += stance[i];
  }

  double dx = snap_.base_vel.x() * dt;
  if (stance_sum > 0.0 && steps_ > 0) {
    dx = 0.0;
    for (int i = 0; i < kLegs; ++i) dx -= stance[i] * (snap_.foot_rel[i].x() - prev_rel_x[2 * i]);
    dx /= stance_sum;
  }
  if (steps_ > 0) {
    snap_.base_x += dx;
    snap_.base_vel = Vec2(dx / dt, vz_);
  }

  const double support_force =
      w_sum > 0.0 ? std::max(0.0, ep_.body_mass * ep_.mass_scale.mean() * (ep_.gravity + z_acc_))
                  : 0.0;
  snap_.support_empty = true;
  for (int i = 0; i < kLegs; ++i) {
    snap_.foot_world[i] = Vec2(snap_.base_x, snap_.base_z) + snap_.foot_rel[i];
    snap_.contact[i] = w[i] > 0.0;
    snap_.contact_force[i] = w_sum > 0.0 ? support_force * w[i] / w_sum : 0.0;
    if (!snap_.contact[i]) continue;
    const double lo = snap_.foot_world[i].x() - ep_.foot_half_length;
    const double hi = snap_.foot_world[i].x() + ep_.foot_half_length;
    if (snap_.support_empty) {
      snap_.support_lo = lo;
      snap_.support_hi = hi;
      snap_.support_empty = false;
    } else {
      snap_.support_lo = std::min(snap_.support_lo, lo);
      snap_.support_hi = std::max(snap_.support_hi, hi);
    }
  }
  snap_.com = Vec2(snap_.base_x, snap_.base_z);
}

StepResult PlanarQuadEnv::step(const Vector& action, Rng& rng) {
  if (done_) throw InvalidState("step called on a finished episode; call reset first");
  if (action.size() != kActDim) throw InvalidInput("action must hold 4 joint targets");
  if (!action.allFinite()) throw InvalidInput("action is not finite");

  const Vector applied = add_noise(action, cfg_.noise.action, ep_.noise_scale, rng);
  const double dt = ep_.randomize.step_time ? rng.uniform(0.00225, 0.00275) : ep_.dt;

  // complementary damping filter on the desired joints
  filtered_target_ = ep_.damping * Vec4(applied) + (1.0 - ep_.damping) * filtered_target_;

  const Vec4 prev_rel_x(snap_.foot_rel[0].x(), 0.0, snap_.foot_rel[1].x(), 0.0);
  const std::array<Vec2, kLegs> prev_world = snap_.foot_world;
  snap_.joints_prev = snap_.joints;
  snap_.base_vel_prev = snap_.base_vel;
  snap_.foot_vel_prev = snap_.foot_vel;
  const Vec4 vel_before = snap_.joint_vel;

  const int substeps = std::max(1, static_cast<int>(std::ceil(dt / ep_.substep - 1e-9)));
  const double h = dt / substeps;
  const double limit = ep_.torque_limit;
  Vec4 torque_sum = Vec4::Zero();
  for (int k = 0; k < substeps; ++k) {
    for (int j = 0; j < kJoints; ++j) {
      const double pd =
          ep_.kp * (filtered_target_[j] - snap_.joints[j]) - ep_.kd * snap_.joint_vel[j];
      const double tau = std::clamp(pd, -limit, limit) * ep_.torque_scale;
      torque_sum[j] += tau;
      const double inertia = ep_.joint_inertia * ep_.mass_scale[j] * ep_.size_scale[j] *
                             ep_.size_scale[j];
      snap_.joint_vel[j] += tau / inertia * h;
      snap_.joints[j] += snap_.joint_vel[j] * h;
    }
  }
  snap_.torque = torque_sum / substeps;
  snap_.joint_acc = (snap_.joint_vel - vel_before) / dt;

  ++steps_;
  snap_.dt = dt;
  snap_.time += dt;
  update_kinematics(prev_rel_x, dt);
  for (int i = 0; i < kLegs; ++i) snap_.foot_vel[i] = (snap_.foot_world[i] - prev_world[i]) / dt;
  const double x_acc = (snap_.base_vel.x() - snap_.base_vel_prev.x()) / dt;
  snap_.com_acc += accel_blend(dt) * (x_acc - snap_.com_acc);
  snap_.zmp = compute_zmp(snap_.com.x(), snap_.com.y(), snap_.com_acc, ep_.gravity);

  StepResult r;
  r.rho = eval_rho(snap_, cfg_.constraints);
  r.kappa = eval_kappa(snap_, cfg_.constraints);
  r.eta = eval_eta(snap_, cfg_.constraints);
  const std::vector<double> bonus(r.kappa.entries.size(), cfg_.recovery_bonus);
  const double recovery = recovery_bonus(prev_kappa_, r.kappa, bonus);
  r.reward = assemble_reward(snap_, snap_.command, r.rho, cfg_.constraints, recovery, cfg_.reward);
  r.penalty = cfg_.reward.penalty_scale * reward_penalty(snap_, r.rho, cfg_.constraints, cfg_.reward);
  r.costs = kappa_cost_vector(r.kappa, cfg_.constraints);
  r.kappa_violated = std::any_of(r.kappa.entries.begin(), r.kappa.entries.end(),
                                 [](const auto& e) { return e.violated; });
  r.terminated = r.eta.eta_triggered;
  r.truncated = !r.terminated && steps_ >= ep_.max_steps;
  prev_kappa_ = r.kappa;
  done_ = r.terminated || r.truncated;

  desired_history_.pop_back();
  desired_history_.push_front(Vec4(action));
  velocity_history_.pop_back();
  velocity_history_.push_front(snap_.joint_vel);
  r.obs = add_noise(clean_observation(), cfg_.noise.observation, ep_.noise_scale, rng);
  return r;
}

Vector PlanarQuadEnv::clean_observation() const {
  Vector o(kObsDim);
  o[obs_index::kHeight] = snap_.base_z;
  o[obs_index::kPitch] = snap_.pitch;
  o.segment(obs_index::kLinVel, 2) = snap_.base_vel;
  o[obs_index::kPitchRate] = snap_.pitch_rate;
  o.segment(obs_index::kJoints, 4) = snap_.joints;
  for (int k = 0; k < 4; ++k) o.segment(obs_index::kDesiredHistory + 4 * k, 4) = desired_history_[k];
  for (int k = 0; k < 3; ++k) o.segment(obs_index::kVelHistory + 4 * k, 4) = velocity_history_[k];
  o[obs_index::kCommand] = snap_.command;
  return o;
}

void write_trajectory_record(std::ostream& os, const EnvSnapshot& s, const StepResult& r) {
  auto vec = [](const auto& v) {
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = v[i];
    return out;
  };
  nlohmann::ordered_json j;
  j["time"] = s.time;
  j["dt"] = s.dt;
  j["command"] = s.command;
  j["base"] = {s.base_x, s.base_z, s.pitch};
  j["base_vel"] = {s.base_vel.x(), s.base_vel.y(), s.pitch_rate};
  j["joints"] = vec(s.joints);
  j["joint_vel"] = vec(s.joint_vel);
  j["joint_acc"] = vec(s.joint_acc);
  j["torque"] = vec(s.torque);
  j["feet"] = {vec(s.foot_world[0]), vec(s.foot_world[1])};
  j["foot_vel"] = {vec(s.foot_vel[0]), vec(s.foot_vel[1])};
  j["contact_force"] = {s.contact_force[0], s.contact_force[1]};
  j["zmp"] = s.zmp;
  j["support"] = s.support_empty ? nlohmann::ordered_json(nullptr)
                                  : nlohmann::ordered_json({s.support_lo, s.support_hi});
  j["com"] = vec(s.com);
  j["reward"] = r.reward;
  j["costs"] = vec(r.costs);
  auto violated = [](const ConstraintReport& rep) {
    std::vector<std::string> ids;
    for (const auto& e : rep.entries)
      if (e.violated) ids.push_back(e.id);
    return ids;
  };
  j["violated"] = {{"rho", violated(r.rho)}, {"kappa", violated(r.kappa)}, {"eta", violated(r.eta)}};
  j["kappa_violated"] = r.kappa_violated;
  j["terminated"] = r.terminated;
  os << j.dump() << '\n';
}

}  // namespace gcpo
