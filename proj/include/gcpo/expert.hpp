#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "gcpo/env.hpp"
#include "gcpo/policy.hpp"

namespace gcpo {

/// Alternating two-leg gait: each leg spends half the period in stance,
/// sweeping backward at the commanded speed, and half in swing.
struct ExpertConfig {
  double period = 0.6;
  double clearance = 0.06;   // swing apex above the ground
  double ramp_time = 0.6;    // speed ramp, after a half period stepping in place
  double nominal_height = 0.45;
  std::array<LegGeometry, kLegs> legs{};
  double kp = 20.0;
  double kd = 1.6;
  Vec4 inertia = Vec4::Constant(0.05);
  double dt = 0.0025;

  static ExpertConfig from_env(const EnvParams& p, double clearance);
};

struct ExpertAction {
  Vector action;
  bool clamped = false;  // some foot target lay outside the leg workspace
};

/// Base-frame foot targets at time t.
std::array<Vec2, kLegs> expert_foot_targets(double t, double command, const ExpertConfig& cfg);

/// Joint targets for the next control step, with PD feed-forward so the joints
/// follow the inverse-kinematics trajectory.
ExpertAction expert_controller(const EnvSnapshot& s, double command, const ExpertConfig& cfg);

struct DatasetMeta {
  double command_lo = 0.0;
  double command_hi = 0.0;
  std::uint64_t seed = 0;
  int episodes = 0;
  int steps_per_episode = 0;
  int discarded = 0;          // eta-terminated episodes that were regenerated
  double exec_noise = 0.0;    // spread of the perturbation applied while recording
};

struct ExpertDataset {
  std::vector<Vector> obs;
  std::vector<Vector> actions;
  DatasetMeta meta;

  std::size_t size() const { return obs.size(); }
};

/// Rolls the expert with randomization and noise off. With exec_noise > 0 the
/// executed joint targets are perturbed while the recorded label stays the
/// clean expert action.
ExpertDataset generate_dataset(const EnvConfig& env_cfg, double command_lo, double command_hi,
                               int episodes, int steps_per_episode, std::uint64_t seed,
                               double exec_noise = 0.0, double clearance = 0.06);

/// Line-delimited JSON: one header object, then one {"obs":[...],"action":[...]} per pair.
void save_dataset(const ExpertDataset& d, std::ostream& os);
ExpertDataset load_dataset(std::istream& is);

struct GpuSettings {
  int minibatch = 64;
  double learning_rate = 1e-3;
  double entropy_factor = 0.85;
};

struct GpuResult {
  std::size_t pairs_used = 0;
  double mse_before = 0.0;
  double mse_after = 0.0;
  bool empty_dataset = false;
};

/// Draws l_batch = it_max / n_batch pairs without replacement, removes them
/// from `data`, runs n_batch minibatched Adam passes on the mean-action MSE,
/// then shrinks the policy spread by `entropy_factor`.
GpuResult guided_policy_update(PolicyParams& policy, ExpertDataset& data, long it_max,
                               int n_batch, const GpuSettings& settings, nn::AdamState& opt,
                               Rng& rng);

/// Mean over pairs of ||mean(obs) - a*||^2.
double imitation_mse(const PolicyParams& policy, const std::vector<Vector>& obs,
                     const std::vector<Vector>& actions);

}  // namespace gcpo
