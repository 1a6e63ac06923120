#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gcpo/cppo.hpp"
#include "gcpo/env.hpp"
#include "gcpo/expert.hpp"
#include "gcpo/metrics.hpp"

namespace gcpo {

enum class TrainMode { kGcpo, kCppoOnly, kUnconstrained };
std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainerConfig {
  double decay_rate = -0.35;        // lambda_d
  long supervised_budget = 20000;   // s_max, 0 disables the supervised phase
  long acppo_budget = 200000;       // c_max
  long hcppo_budget = 100000;       // c_max^h
  int rollout_steps = 1000;         // n_steps
  int gpu_passes = 10;              // n_batch
  int acppo_rounds = 10;            // H_a
  int hcppo_rounds = 5;             // H_h
  long batch_steps = 20000;         // samples collected per policy update
  double gae_lambda = 0.95;
  ObjectiveConfig objective;        // zeta / limits / hard mask are filled from the constraints
  double penalty_ramp = 0.5;        // share of the RL budget over which reward penalties grow to full weight
  double zeta_default = 1e-3;
  std::map<std::string, double> zeta;  // per kappa id, overrides the default
  double policy_lr = 3e-4;
  double value_lr = 1e-3;
  int policy_hidden = 64;
  int value_hidden = 64;
  double initial_spread = 0.3;
  double cost_value_scale = 1.0;    // output scale of the cost value heads
  GpuSettings gpu;
  double command_lo = 0.0;          // commands are drawn uniformly from [lo, hi]
  double command_hi = 0.8;
  int dataset_episodes = 10;
  int dataset_steps = 1000;
  double dataset_exec_noise = 0.1;  // perturbs the executed expert targets, labels stay clean
  double expert_clearance = 0.06;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::kGcpo;
  int workers = 1;
  EnvConfig env;

  void validate() const;
  /// Objective with zeta, cost limits and hard mask aligned to the kappa specs.
  ObjectiveConfig resolved_objective() const;
  std::vector<std::string> kappa_ids() const;
  /// Environment steps of all policy-optimization rounds together.
  long rl_budget() const;
  /// Penalty weight factor after `env_steps` RL steps: linear from 0 to 1.
  double penalty_factor(long env_steps) const;
};

/// Per-round budgets of the guided schedule: alpha_t = exp(lambda_d * t).
struct RoundBudget {
  double alpha = 1.0;
  long supervised = 0;  // alpha * s_max
  long rl = 0;          // (1 - alpha) * c_max
};
std::vector<RoundBudget> gcpo_schedule(const TrainerConfig& cfg);

/// What the rollout loop needs from an environment.
struct Transition {
  Vector obs;
  double reward = 0.0;
  Vector costs;
  std::vector<bool> kappa_flags;  // per kappa-constraint
  bool rho_violated = false;
  double score = 0.0;             // reward at full penalty weight, used for reporting
  bool terminated = false;        // eta trigger
  bool truncated = false;
  bool done = false;              // natural end: terminal, not reformatted
};

class StepEnv {
 public:
  virtual ~StepEnv() = default;
  virtual Vector reset(double command, Rng& rng) = 0;
  virtual Transition step(const Vector& action, Rng& rng) = 0;
  virtual void set_penalty_factor(double) {}
};

using EnvFactory = std::function<std::unique_ptr<StepEnv>()>;

/// Adapts PlanarQuadEnv; the episode cap is raised to at least `min_steps`.
EnvFactory quad_env_factory(EnvConfig cfg, int min_steps);

struct RolloutSettings {
  long samples = 0;          // environment steps to simulate
  int rollout_steps = 1000;  // episode length cap
  int workers = 1;
  double command_lo = 0.0;
  double command_hi = 0.0;
  bool reformat = true;      // cut eta episodes back and attach the penalty
  double terminal_penalty = -1.0;
  double penalty_factor = 1.0;
  int cost_dim = 0;
  std::uint64_t stream = 0;  // seeds every episode slot
};

struct RolloutStats {
  long env_steps = 0;
  long episodes = 0;
  long eta_terminations = 0;
  double reward_sum = 0.0;
  long rho_steps = 0;
  long kappa_steps = 0;
  std::vector<long> kappa_counts;
};

struct Rollout {
  RolloutBatch batch;
  RolloutStats stats;
};

/// Simulates exactly `samples` steps split into fixed slots of rollout_steps.
/// Every slot has its own seed, so the result does not depend on the worker
/// count. Values come from one batched pass over the collected observations.
Rollout collect_rollouts(const EnvFactory& factory, const PolicyParams& policy,
                         const ValueParams& value, const RolloutSettings& s);

struct IterationHooks {
  std::function<void(const TrainRecord&)> on_record;
};

struct OptimizationState {
  long iteration = 0;
  long env_steps = 0;
  int nonfinite_streak = 0;
};

/// Collects batches and updates until `budget` environment steps are spent.
/// hard selects hcppo_update; unconstrained mode always uses ppo_update.
/// Throws PolicyDiverged after two consecutive non-finite updates.
void policy_optimization(Learner& learner, const EnvFactory& factory, const TrainerConfig& cfg,
                         long budget, bool hard, double alpha, OptimizationState& state,
                         Rng& rng, const IterationHooks& hooks);

struct TrainResult {
  Learner learner;
  nn::AdamState gpu_opt;
  std::vector<TrainRecord> records;
  long env_steps = 0;
  int discarded_expert_episodes = 0;
};

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_record;
  std::string checkpoint_path;  // written after every round when non-empty
};

/// Alternates guided policy updates with constrained RL rounds, then runs the
/// hCPPO rounds. On divergence the last good state is written to the checkpoint
/// path before PolicyDiverged propagates.
TrainResult gcpo_train(const TrainerConfig& cfg, const TrainHooks& hooks = {});

/// Fresh policy and value nets for the quadruped task.
Learner make_learner(const TrainerConfig& cfg, Rng& rng);

struct Checkpoint {
  Learner learner;
  nn::AdamState gpu_opt;
  long iteration = 0;
  long env_steps = 0;
  int round = 0;
  std::string rng_state;
};
void save_checkpoint(const Checkpoint& c, std::ostream& os);
Checkpoint load_checkpoint(std::istream& is);

struct EvalSettings {
  int episodes = 1;
  int steps = 1000;
  double command = 0.5;
  std::uint64_t seed = 0;
};

struct EvalSummary {
  long steps = 0;
  int episodes = 0;
  int eta_terminations = 0;
  double rms_tracking_error = 0.0;
  double mean_velocity = 0.0;
  double rho_violation = 0.0;
  double kappa_violation = 0.0;
  double eta_violation = 0.0;
  std::vector<std::string> kappa_ids;
  std::vector<double> kappa_violations;
  // mean |tau| per measured-velocity bin of width 0.1 m/s, keyed by bin centre
  std::map<double, double> torque_by_velocity;
};

/// Deterministic-mean rollouts. Writes one trajectory record per step to
/// `trajectory` when given.
EvalSummary evaluate_policy(const PolicyParams& policy, const EnvConfig& env,
                            const EvalSettings& s, std::ostream* trajectory = nullptr);

/// Mean per-step reward of the scripted expert under the training
/// distribution: commands drawn from [command_lo, command_hi], episodes of
/// rollout_steps, the configured noise and randomization.
double expert_mean_reward(const TrainerConfig& cfg, int episodes, std::uint64_t seed);

/// Same statistics as evaluate_policy for the scripted expert.
EvalSummary evaluate_expert(const EnvConfig& env, const EvalSettings& s, double clearance = 0.06);

}  // namespace gcpo
