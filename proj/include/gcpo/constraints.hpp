#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcpo/returns.hpp"
#include "gcpo/snapshot.hpp"

namespace gcpo {

enum class Tier { kRho, kKappa, kEta };

enum class CostTerm {
  kJointSpeed,
  kJointAcceleration,
  kFootClearance,
  kFootRegion,
  kZmp,
  kFootContacts,
};

std::string to_string(Tier t);
std::string to_string(CostTerm c);
Tier tier_from_string(const std::string& s);
CostTerm cost_term_from_string(const std::string& s);

/// `limit` meaning per term:
///   joint_speed / joint_acceleration: per-joint magnitude limit
///   foot_clearance: desired swing height
///   foot_region: half-width of the square around the nominal foot anchor
///   zmp: kappa: ZMP-to-CoM distance tolerated outside the support interval; eta: u^eta
///   foot_contacts: kappa: minimum total contact force as a fraction of body weight;
///                  eta: minimum number of feet in contact
struct ConstraintSpec {
  std::string id;
  CostTerm term = CostTerm::kJointSpeed;
  Tier tier = Tier::kKappa;
  double limit = 0.0;
  double weight = 1.0;
  std::optional<double> d_bound;  // kappa only
  bool hard = true;               // kappa only: enforced by hcppo_update
};

/// Throws InvalidInput on missing/extra d_bound, duplicate ids or broken tier nesting.
void validate_specs(const std::vector<ConstraintSpec>& specs);
std::vector<ConstraintSpec> specs_of_tier(const std::vector<ConstraintSpec>& specs, Tier tier);

struct ConstraintEntry {
  std::string id;
  Tier tier = Tier::kKappa;
  double cost = 0.0;
  bool violated = false;
};

struct ConstraintReport {
  std::vector<ConstraintEntry> entries;
  bool eta_triggered = false;
  std::vector<std::string> triggers;
};

/// Raw (unweighted) cost expressions for the rho-tier specs.
ConstraintReport eval_rho(const EnvSnapshot& s, const std::vector<ConstraintSpec>& specs);
ConstraintReport eval_kappa(const EnvSnapshot& s, const std::vector<ConstraintSpec>& specs);
ConstraintReport eval_eta(const EnvSnapshot& s, const std::vector<ConstraintSpec>& specs);

/// Weighted kappa cost vector in spec order.
Vector kappa_cost_vector(const ConstraintReport& kappa, const std::vector<ConstraintSpec>& specs);

/// Sum over kappa entries of bonus_i * [violated before and satisfied now].
double recovery_bonus(const ConstraintReport& prev, const ConstraintReport& curr,
                      std::span<const double> bonus);

/// Drops the steps explored between the onset of the kappa-violation run that
/// leads into the eta trigger and the trigger itself, then closes the episode
/// with `terminal_penalty` on its last kept step.
std::vector<StepRecord> reformat_episode(const std::vector<StepRecord>& raw,
                                         double terminal_penalty);

/// K(x) = 1 / (e^x + 2 + e^-x)
double logistic_kernel(double x);

struct RewardWeights {
  double linear_velocity = 1.0;
  double angular_velocity = 0.05;
  double torque = 2e-5;
  double foot_acceleration = 1e-4;
  double foot_slip = 0.02;
  double smoothness = 0.5;
  double orientation = 0.1;
  double velocity_kernel_scale = 4.0;  // K(scale * (v - v_cmd))
  double penalty_scale = 1.0;          // curriculum factor on every penalty term
};

/// Weighted penalty terms and rho costs, before penalty_scale.
double reward_penalty(const EnvSnapshot& s, const ConstraintReport& rho,
                      const std::vector<ConstraintSpec>& rho_specs, const RewardWeights& w);

/// Tracking kernels minus weighted penalty terms and
/// weighted rho costs, plus the recovery bonus.
double assemble_reward(const EnvSnapshot& s, double command, const ConstraintReport& rho,
                       const std::vector<ConstraintSpec>& rho_specs, double recovery,
                       const RewardWeights& w);

}  // namespace gcpo
