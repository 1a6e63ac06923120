#include "gcpo/cppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gcpo/errors.hpp"

namespace gcpo {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

void ObjectiveConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw InvalidInput("clip epsilon must be positive");
  if (!(kl_bound > 0.0)) throw InvalidInput("KL bound must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidInput("discount must lie in [0, 1)");
  if (value_coef < 0.0 || entropy_coef < 0.0) throw InvalidInput("loss coefficients must be >= 0");
  if (cost_limits.size() != zeta.size())
    throw InvalidInput("penalty weights and cost limits differ in length");
  if ((zeta.array() < 0.0).any()) throw InvalidInput("penalty weights must be >= 0");
  if ((cost_limits.array() < 0.0).any()) throw InvalidInput("cost limits must be >= 0");
  if (!hard_mask.empty() && static_cast<Eigen::Index>(hard_mask.size()) != zeta.size())
    throw InvalidInput("hard-constraint mask has the wrong length");
  if (epochs <= 0 || minibatch_size <= 0 || kl_sample <= 0 || max_halvings < 0)
    throw InvalidInput("epoch, minibatch and line-search counts must be positive");
}

double clip_term(double ratio, double advantage, double clip_epsilon) {
  const double clamped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return std::min(ratio * advantage, clamped * advantage);
}

double cclip_loss(std::span<const double> clip_values, std::span<const double> cost_terms,
                  std::span<const double> zeta) {
  if (cost_terms.size() != zeta.size())
    throw InvalidInput("cclip_loss: one penalty weight per constraint term is required");
  if (clip_values.empty()) throw InvalidInput("cclip_loss: empty batch");
  double mean = std::accumulate(clip_values.begin(), clip_values.end(), 0.0) /
                static_cast<double>(clip_values.size());
  for (std::size_t i = 0; i < zeta.size(); ++i) mean -= zeta[i] * cost_terms[i];
  return mean;
}

double total_loss(double cclip, double vf_loss, double entropy_value, double c1, double c2) {
  return cclip - c1 * vf_loss + c2 * entropy_value;
}

UpdateBatch make_update_batch(const RolloutBatch& batch, const AdvantageTargets& targets,
                              bool normalize_advantages) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw InvalidInput("make_update_batch: empty rollout batch");
  UpdateBatch u;
  const auto obs_dim = batch.steps[0].obs.size();
  const auto act_dim = batch.steps[0].action.size();
  u.obs.resize(obs_dim, n);
  u.actions.resize(act_dim, n);
  u.old_log_prob.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = batch.steps[i];
    u.obs.col(i) = s.obs;
    u.actions.col(i) = s.action;
    u.old_log_prob[i] = s.log_prob;
  }
  u.advantages = targets.advantages;
  if (normalize_advantages) normalize_in_place(u.advantages);
  u.returns = targets.returns;
  u.cost_advantages = targets.cost_advantages;
  // centered only: the cost scale is compared against d_i
  for (Eigen::Index k = 0; k < u.cost_advantages.rows(); ++k)
    u.cost_advantages.row(k).array() -= u.cost_advantages.row(k).mean();
  u.cost_returns = targets.cost_returns;
  u.cost_return_estimates = targets.cost_return_estimates;
  return u;
}

ObjectiveEval evaluate_objective(const PolicyParams& policy, const UpdateBatch& batch,
                                 std::span<const Eigen::Index> cols, const ObjectiveConfig& cfg,
                                 ObjectiveMode mode, const std::vector<bool>& reduce,
                                 bool want_gradient) {
  const int m = batch.cost_dim();
  if (cfg.cost_dim() != m) throw InvalidInput("objective: penalty weights do not match the batch");
  if (mode == ObjectiveMode::kCostReduction && static_cast<int>(reduce.size()) != m)
    throw InvalidInput("objective: cost-reduction mask does not match the batch");
  std::vector<Eigen::Index> all;
  if (cols.empty()) {
    all.resize(static_cast<std::size_t>(batch.size()));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    cols = all;
  }
  const auto n = static_cast<Eigen::Index>(cols.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  const double horizon = 1.0 / (1.0 - cfg.gamma);

  Matrix x(batch.obs.rows(), n);
  for (Eigen::Index c = 0; c < n; ++c) x.col(c) = batch.obs.col(cols[c]);
  const nn::ForwardTape tape = policy.mean_net.forward_tape(policy.input.apply(x));
  const Matrix& mu = tape.output();
  const Vector ls = policy.log_spread.cwiseMax(policy.log_spread_floor);
  const Vector inv_var = (-2.0 * ls).array().exp().matrix();

  ObjectiveEval out;
  out.surrogates = batch.cost_return_estimates;
  out.entropy = 0.5 * (kLog2Pi + 1.0) * static_cast<double>(ls.size()) + ls.sum();
  Vector ratio(n), weight(n);
  Vector cost_acc = Vector::Zero(m);
  double clip_acc = 0.0;
  int clipped = 0;
  for (Eigen::Index c = 0; c < n; ++c) {
    const Eigen::Index i = cols[c];
    double lp = 0.0;
    for (Eigen::Index j = 0; j < ls.size(); ++j) {
      const double d = batch.actions(j, i) - mu(j, c);
      lp += -0.5 * d * d * inv_var[j] - ls[j] - 0.5 * kLog2Pi;
    }
    const double r = std::exp(lp - batch.old_log_prob[i]);
    ratio[c] = r;
    const double a = batch.advantages[i];
    const double clamped = std::clamp(r, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    clip_acc += std::min(r * a, clamped * a);
    if (std::abs(r - 1.0) > cfg.clip_epsilon) ++clipped;
    const double dclip = r * a <= clamped * a ? a : 0.0;
    double w = 0.0;
    switch (mode) {
      case ObjectiveMode::kPenalized:
        w = dclip;
        for (int k = 0; k < m; ++k) w -= cfg.zeta[k] * batch.cost_advantages(k, i) * horizon;
        break;
      case ObjectiveMode::kClipOnly: w = dclip; break;
      case ObjectiveMode::kCostReduction:
        for (int k = 0; k < m; ++k)
          if (reduce[k]) w -= batch.cost_advantages(k, i) * horizon;
        break;
    }
    weight[c] = w;
    for (int k = 0; k < m; ++k) cost_acc[k] += r * batch.cost_advantages(k, i);
  }
  out.clip_mean = clip_acc * inv_n;
  out.clip_fraction = clipped * inv_n;
  for (int k = 0; k < m; ++k) out.surrogates[k] += cost_acc[k] * inv_n * horizon;

  switch (mode) {
    case ObjectiveMode::kPenalized:
      out.value = out.clip_mean - cfg.zeta.dot(out.surrogates) + cfg.entropy_coef * out.entropy;
      break;
    case ObjectiveMode::kClipOnly:
      out.value = out.clip_mean + cfg.entropy_coef * out.entropy;
      break;
    case ObjectiveMode::kCostReduction:
      for (int k = 0; k < m; ++k)
        if (reduce[k]) out.value -= out.surrogates[k];
      break;
  }
  if (!want_gradient) return out;

  // d r / d mu = r (a - mu) / sigma^2 ; d r / d ls = r (z^2 - 1)
  Matrix d_mu(mu.rows(), n);
  Vector d_ls = Vector::Zero(ls.size());
  for (Eigen::Index c = 0; c < n; ++c) {
    const double g = weight[c] * ratio[c] * inv_n;
    for (Eigen::Index j = 0; j < ls.size(); ++j) {
      const double d = batch.actions(j, cols[c]) - mu(j, c);
      d_mu(j, c) = g * d * inv_var[j];
      d_ls[j] += g * (d * d * inv_var[j] - 1.0);
    }
  }
  if (mode != ObjectiveMode::kCostReduction) d_ls.array() += cfg.entropy_coef;
  for (Eigen::Index j = 0; j < ls.size(); ++j)
    if (policy.log_spread[j] < policy.log_spread_floor) d_ls[j] = 0.0;
  const nn::Gradients g = policy.mean_net.backward(tape, d_mu);
  out.gradient.resize(policy.flat_size());
  out.gradient << g.parameters, d_ls;
  return out;
}

double value_loss(const ValueParams& value, const UpdateBatch& batch,
                  std::span<const Eigen::Index> cols, Vector* gradient) {
  const int m = batch.cost_dim();
  if (value.heads() != m + 1) throw InvalidInput("value heads do not match the cost channels");
  std::vector<Eigen::Index> all;
  if (cols.empty()) {
    all.resize(static_cast<std::size_t>(batch.size()));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    cols = all;
  }
  const auto n = static_cast<Eigen::Index>(cols.size());
  Matrix x(batch.obs.rows(), n), target(m + 1, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    x.col(c) = batch.obs.col(cols[c]);
    target(0, c) = batch.returns[cols[c]];
    for (int k = 0; k < m; ++k) target(k + 1, c) = batch.cost_returns(k, cols[c]);
  }
  const nn::ForwardTape tape = value.net.forward_tape(value.input.apply(x));
  const Matrix err = value.output_scale.asDiagonal() * tape.output() - target;
  const double loss = err.squaredNorm() / static_cast<double>(n);
  if (gradient) {
    const Matrix d_out = (2.0 / static_cast<double>(n)) * (value.output_scale.asDiagonal() * err);
    *gradient = value.net.backward(tape, d_out).parameters;
  }
  return loss;
}

Learner Learner::create(PolicyParams policy, ValueParams value, double policy_lr,
                        double value_lr) {
  Learner l;
  l.policy_opt = nn::AdamState::zeros(policy.flat_size(), policy_lr);
  l.value_opt = nn::AdamState::zeros(value.net.parameter_count(), value_lr);
  l.policy = std::move(policy);
  l.value = std::move(value);
  return l;
}

namespace {

std::vector<Eigen::Index> shuffled(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Eigen::Index{0});
  for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
  return p;
}

// Evenly spaced subset used for the per-step KL check.
Matrix kl_observations(const UpdateBatch& batch, int limit) {
  const Eigen::Index n = batch.size();
  if (n <= limit) return batch.obs;
  Matrix out(batch.obs.rows(), limit);
  for (int c = 0; c < limit; ++c) out.col(c) = batch.obs.col(c * n / limit);
  return out;
}

struct EpochContext {
  const UpdateBatch& batch;
  const ObjectiveConfig& cfg;
  const PolicyParams& reference;  // pi_k
  Matrix kl_obs;
  ObjectiveMode mode;
  std::vector<bool> reduce;
};

// One pass of minibatch steps. Returns false once a step would cross the KL
// bound; that step is undone.
bool run_epoch(Learner& learner, EpochContext& ctx, Rng& rng, UpdateDiagnostics& diag) {
  const auto order = shuffled(ctx.batch.size(), rng);
  const auto mb = static_cast<std::size_t>(ctx.cfg.minibatch_size);
  for (std::size_t start = 0; start < order.size(); start += mb) {
    const std::span<const Eigen::Index> cols(order.data() + start,
                                             std::min(mb, order.size() - start));
    Vector vgrad;
    diag.value_loss = value_loss(learner.value, ctx.batch, cols, &vgrad);
    if (!std::isfinite(diag.value_loss)) throw NonFiniteError("value loss is not finite", 0);
    nn::adam_step(learner.value.net.parameters(), vgrad, learner.value_opt);

    const ObjectiveEval ev =
        evaluate_objective(learner.policy, ctx.batch, cols, ctx.cfg, ctx.mode, ctx.reduce, true);
    if (!std::isfinite(ev.value)) throw NonFiniteError("policy objective is not finite", 0);
    const Vector before = learner.policy.flat();
    const nn::AdamState opt_before = learner.policy_opt;
    Vector params = before;
    nn::adam_step(params, -ev.gradient, learner.policy_opt);
    learner.policy.set_flat(params);
    learner.policy.project();
    const double kl = mean_kl(ctx.reference, learner.policy, ctx.kl_obs);
    if (!std::isfinite(kl)) throw NonFiniteError("KL divergence is not finite", 0);
    if (kl > ctx.cfg.kl_bound) {
      learner.policy.set_flat(before);
      learner.policy_opt = opt_before;
      diag.kl_stopped = true;
      return false;
    }
  }
  return true;
}

void finish(const Learner& learner, const PolicyParams& reference, const UpdateBatch& batch,
            const ObjectiveConfig& cfg, ObjectiveMode mode, const std::vector<bool>& reduce,
            UpdateDiagnostics& diag) {
  const ObjectiveEval ev = evaluate_objective(learner.policy, batch, {}, cfg, mode, reduce, false);
  diag.mean_kl = mean_kl(reference, learner.policy, batch.obs);
  diag.clip_fraction = ev.clip_fraction;
  diag.entropy = ev.entropy;
  diag.objective = ev.value;
  diag.surrogate = ev.surrogates;
}

}  // namespace

UpdateDiagnostics acppo_update(Learner& learner, const UpdateBatch& batch,
                               const ObjectiveConfig& cfg, Rng& rng) {
  cfg.validate();
  if (batch.size() == 0) throw InvalidInput("acppo_update: empty batch");
  const Learner snapshot = learner;
  UpdateDiagnostics diag;
  EpochContext ctx{batch, cfg, snapshot.policy, kl_observations(batch, cfg.kl_sample),
                   ObjectiveMode::kPenalized, {}};
  try {
    for (int e = 0; e < cfg.epochs; ++e) {
      const bool go_on = run_epoch(learner, ctx, rng, diag);
      ++diag.epochs_run;
      if (!go_on) break;
    }
    finish(learner, snapshot.policy, batch, cfg, ObjectiveMode::kPenalized, {}, diag);
  } catch (const NonFiniteError&) {
    learner = snapshot;
    diag = UpdateDiagnostics{};
    diag.accepted = false;
    diag.aborted_nonfinite = true;
  }
  return diag;
}

UpdateDiagnostics ppo_update(Learner& learner, const UpdateBatch& batch,
                             const ObjectiveConfig& cfg, Rng& rng) {
  ObjectiveConfig plain = cfg;
  plain.zeta.setZero();
  return acppo_update(learner, batch, plain, rng);
}

UpdateDiagnostics hcppo_update(Learner& learner, const UpdateBatch& batch,
                               const ObjectiveConfig& cfg, Rng& rng) {
  cfg.validate();
  if (batch.size() == 0) throw InvalidInput("hcppo_update: empty batch");
  const int m = batch.cost_dim();
  const Learner snapshot = learner;
  UpdateDiagnostics diag;

  std::vector<bool> violated(m, false);
  for (int k = 0; k < m; ++k)
    if (cfg.is_hard(k) && batch.cost_return_estimates[k] > cfg.cost_limits[k]) {
      violated[k] = true;
      diag.infeasible_start = true;
    }
  EpochContext ctx{batch, cfg, snapshot.policy, kl_observations(batch, cfg.kl_sample),
                   diag.infeasible_start ? ObjectiveMode::kCostReduction : ObjectiveMode::kClipOnly,
                   violated};

  auto violated_sum = [&](const PolicyParams& p) {
    const ObjectiveEval ev = evaluate_objective(p, batch, {}, cfg, ObjectiveMode::kCostReduction,
                                                violated, false);
    return -ev.value;
  };
  auto feasible = [&](const PolicyParams& p, double start_violation) {
    if (!(mean_kl(snapshot.policy, p, ctx.kl_obs) <= cfg.kl_bound)) return false;
    if (diag.infeasible_start) return violated_sum(p) < start_violation;
    const ObjectiveEval ev =
        evaluate_objective(p, batch, {}, cfg, ObjectiveMode::kClipOnly, {}, false);
    for (int k = 0; k < m; ++k)
      if (cfg.is_hard(k) && !(ev.surrogates[k] <= cfg.cost_limits[k])) return false;
    return true;
  };

  int accepted_epochs = 0;
  try {
    for (int e = 0; e < cfg.epochs; ++e) {
      const Vector pre = learner.policy.flat();
      const nn::AdamState pre_opt = learner.policy_opt;
      const double start_violation =
          diag.infeasible_start ? violated_sum(learner.policy) : 0.0;
      const bool go_on = run_epoch(learner, ctx, rng, diag);
      ++diag.epochs_run;

      bool ok = feasible(learner.policy, start_violation);
      if (!ok) {
        const Vector candidate = learner.policy.flat();
        double step = 1.0;
        for (int h = 1; h <= cfg.max_halvings && !ok; ++h) {
          step *= 0.5;
          ++diag.line_search_depth;
          learner.policy.set_flat(pre + step * (candidate - pre));
          learner.policy.project();
          ok = feasible(learner.policy, start_violation);
        }
      }
      if (!ok) {
        learner.policy.set_flat(pre);
        learner.policy_opt = pre_opt;
        break;
      }
      ++accepted_epochs;
      if (!go_on) break;
    }
    diag.accepted = accepted_epochs > 0;
    finish(learner, snapshot.policy, batch, cfg, ctx.mode, violated, diag);
  } catch (const NonFiniteError&) {
    learner = snapshot;
    diag = UpdateDiagnostics{};
    diag.accepted = false;
    diag.aborted_nonfinite = true;
  }
  return diag;
}

}  // namespace gcpo
