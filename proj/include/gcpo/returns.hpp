#pragma once

#include <span>
#include <vector>

#include "gcpo/nn.hpp"

namespace gcpo {

/// One environment step as stored for training.
struct StepRecord {
  Vector obs;
  Vector action;
  double log_prob = 0.0;   // under the behavior policy
  double value = 0.0;      // reward value estimate V(s_t)
  Vector cost_values;      // per kappa-constraint cost value estimates
  double reward = 0.0;
  Vector costs;            // per kappa-constraint cost
  bool kappa_violated = false;
  bool eta_triggered = false;
  bool terminal = false;   // true end of the episode: V(s_{T+1}) = 0
};

/// Contiguous episode inside a RolloutBatch. A truncated episode (terminal ==
/// false) bootstraps from the value estimates of the state after its last step.
struct EpisodeSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the last step
  bool terminal = false;
  double bootstrap_value = 0.0;
  Vector bootstrap_cost_values;
  std::size_t size() const { return end - begin; }
};

/// Ordered transitions grouped by episode.
struct RolloutBatch {
  int cost_dim = 0;
  std::vector<StepRecord> steps;
  std::vector<EpisodeSpan> episodes;

  std::size_t size() const { return steps.size(); }
  /// Appends one episode. Its steps must already be closed (last step terminal
  /// or `bootstrap` provided for truncation).
  void add_episode(std::vector<StepRecord> episode, bool terminal, double bootstrap_value,
                   Vector bootstrap_cost_values);
  /// Throws InvalidInput if episodes are not contiguous or cost vectors have the wrong length.
  void validate() const;
};

/// G_t = r_t + gamma * G_{t+1}; the step past the end contributes `bootstrap`
/// (0 for a terminal episode).
Vector discounted_returns(std::span<const double> rewards, double gamma, double bootstrap = 0.0);

/// GAE over one episode. `values` has rewards.size() + 1 entries; the last is
/// the bootstrap value (0 at a terminal).
Vector gae(std::span<const double> rewards, std::span<const double> values, double gamma,
           double lambda);

/// Mean over episodes of sum_t gamma^t c_t.
double cost_return_estimate(const std::vector<std::vector<double>>& episode_costs, double gamma);

/// J_C(pi_k) + 1/(1-gamma) * mean(ratio .* cost_advantage).
double constraint_surrogate(double current_cost_return, std::span<const double> cost_advantages,
                            std::span<const double> importance_ratios, double gamma);

/// Per-step training targets derived from a batch.
struct AdvantageTargets {
  Vector advantages;        // reward GAE (not normalized)
  Vector returns;           // advantages + V(s)
  Matrix cost_advantages;   // cost_dim x N
  Matrix cost_returns;      // cost_dim x N
  Vector cost_return_estimates;  // J_Ci(pi_k), one per cost channel
};

/// Runs the same GAE machinery over rewards and each cost channel.
AdvantageTargets compute_targets(const RolloutBatch& batch, double gamma, double lambda);

/// Zero mean, unit spread (no-op spread for constant inputs).
void normalize_in_place(Vector& v);

}  // namespace gcpo
