#pragma once

#include <span>
#include <vector>

#include "gcpo/policy.hpp"
#include "gcpo/returns.hpp"

namespace gcpo {

struct ObjectiveConfig {
  double clip_epsilon = 0.2;
  double value_coef = 0.5;     // c1
  double entropy_coef = 0.0;   // c2
  double kl_bound = 0.02;      // delta
  double gamma = 0.998;
  Vector zeta;                 // penalty weight per kappa-constraint
  Vector cost_limits;          // d_i per kappa-constraint
  std::vector<bool> hard_mask; // constraints enforced by hcppo_update (all if empty)
  int epochs = 4;
  int minibatch_size = 256;
  int kl_sample = 1024;        // observations used for the per-step KL check
  int max_halvings = 10;
  bool normalize_advantages = true;

  int cost_dim() const { return static_cast<int>(zeta.size()); }
  bool is_hard(int i) const { return hard_mask.empty() || hard_mask[i]; }
  /// Throws InvalidInput on any out-of-range field.
  void validate() const;
};

/// min(r A, clamp(r, 1-eps, 1+eps) A)
double clip_term(double ratio, double advantage, double clip_epsilon);

/// mean(clip_values) - sum_i zeta_i * cost_terms_i
double cclip_loss(std::span<const double> clip_values, std::span<const double> cost_terms,
                  std::span<const double> zeta);

/// cclip - c1 * vf + c2 * entropy (maximization sense).
double total_loss(double cclip, double vf_loss, double entropy_value, double c1, double c2);

/// Column-major training arrays built from a RolloutBatch.
struct UpdateBatch {
  Matrix obs;              // obs_dim x N
  Matrix actions;          // act_dim x N
  Vector old_log_prob;     // N
  Vector advantages;       // N, normalized when requested
  Vector returns;          // N
  Matrix cost_advantages;  // m x N, mean-centered
  Matrix cost_returns;     // m x N
  Vector cost_return_estimates;  // J_Ci(pi_k)

  Eigen::Index size() const { return obs.cols(); }
  int cost_dim() const { return static_cast<int>(cost_advantages.rows()); }
};

UpdateBatch make_update_batch(const RolloutBatch& batch, const AdvantageTargets& targets,
                              bool normalize_advantages);

enum class ObjectiveMode {
  kPenalized,      // clip - sum zeta * surrogate + c2 * entropy
  kClipOnly,       // clip + c2 * entropy
  kCostReduction,  // -sum over `reduce` of surrogate
};

struct ObjectiveEval {
  double value = 0.0;
  double clip_mean = 0.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  Vector surrogates;  // constraint_surrogate per cost channel
  Vector gradient;    // d value / d policy.flat(), filled when requested
};

/// Policy objective over the given columns (all columns if `cols` is empty).
ObjectiveEval evaluate_objective(const PolicyParams& policy, const UpdateBatch& batch,
                                 std::span<const Eigen::Index> cols, const ObjectiveConfig& cfg,
                                 ObjectiveMode mode, const std::vector<bool>& reduce,
                                 bool want_gradient);

/// Mean over samples of the summed squared head errors; gradient w.r.t. value.net parameters.
double value_loss(const ValueParams& value, const UpdateBatch& batch,
                  std::span<const Eigen::Index> cols, Vector* gradient);

struct Learner {
  PolicyParams policy;
  ValueParams value;
  nn::AdamState policy_opt;
  nn::AdamState value_opt;

  static Learner create(PolicyParams policy, ValueParams value, double policy_lr, double value_lr);
};

struct UpdateDiagnostics {
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  double objective = 0.0;
  double value_loss = 0.0;
  Vector surrogate;   // per cost channel, after the update
  bool accepted = true;
  bool infeasible_start = false;
  bool aborted_nonfinite = false;
  bool kl_stopped = false;
  int line_search_depth = 0;  // total halvings performed
  int epochs_run = 0;
};

/// Minibatch ascent on the penalized objective; stops when a step would push
/// the mean KL past kl_bound. Restores everything on non-finite values.
UpdateDiagnostics acppo_update(Learner& learner, const UpdateBatch& batch,
                               const ObjectiveConfig& cfg, Rng& rng);

/// Ascent on the unpenalized objective with per-epoch backtracking until every
/// hard surrogate is within its limit and KL <= kl_bound. Starts with a pure
/// cost-reduction step when the batch is already infeasible.
UpdateDiagnostics hcppo_update(Learner& learner, const UpdateBatch& batch,
                               const ObjectiveConfig& cfg, Rng& rng);

/// Plain PPO: acppo_update with all penalty weights zero.
UpdateDiagnostics ppo_update(Learner& learner, const UpdateBatch& batch,
                             const ObjectiveConfig& cfg, Rng& rng);

}  // namespace gcpo
