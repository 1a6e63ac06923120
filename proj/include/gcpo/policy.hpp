#pragma once

#include <iosfwd>

#include "gcpo/nn.hpp"
#include "gcpo/rng.hpp"

namespace gcpo {

/// Fixed affine map applied to raw observations before any network sees them:
/// x_net = (obs - offset) .* scale. Not trained.
struct InputNormalizer {
  Vector offset;
  Vector scale;

  static InputNormalizer identity(int dim);
  Vector apply(const Vector& obs) const;
  Matrix apply(const Matrix& obs) const;
};

/// Diagonal Gaussian policy with a state-independent log spread.
struct PolicyParams {
  InputNormalizer input;
  nn::DenseNet mean_net;
  Vector log_spread;
  double log_spread_floor = -6.907755278982137;  // ln(1e-3)

  int obs_dim() const { return mean_net.input_size(); }
  int act_dim() const { return mean_net.output_size(); }

  /// Per-dimension standard deviation, clamped below at exp(log_spread_floor).
  Vector spread() const;
  Vector mean(const Vector& obs) const;
  Matrix mean(const Matrix& obs) const;

  /// Trainable parameters: mean-net weights followed by log_spread.
  Eigen::Index flat_size() const { return mean_net.parameter_count() + log_spread.size(); }
  Vector flat() const;
  void set_flat(const Vector& flat);
  /// Re-imposes log_spread >= log_spread_floor.
  void project();
};

/// State-value function; head 0 estimates the reward value, heads 1..m the
/// discounted cost value of each kappa-constraint. Each head is the net output
/// times a fixed per-head scale, so returns of very different magnitude share
/// one well-conditioned net.
struct ValueParams {
  InputNormalizer input;
  nn::DenseNet net;
  Vector output_scale;

  int heads() const { return net.output_size(); }
  Matrix evaluate(const Matrix& obs) const;
  Vector evaluate(const Vector& obs) const;
};

struct PolicyInit {
  int hidden = 64;
  double initial_spread = 0.05;
  double spread_floor = 1e-3;
  double output_weight_scale = 0.01;
  Vector action_center;  // initial output bias; zeros if empty
};

PolicyParams make_policy(int obs_dim, int act_dim, const PolicyInit& init, Rng& rng);
ValueParams make_value(int obs_dim, int heads, int hidden, Rng& rng);
/// Same, with per-head output scales.
ValueParams make_value(int obs_dim, const Vector& head_scales, int hidden, Rng& rng);

Vector sample_action(const PolicyParams& p, const Vector& obs, Rng& rng);
double log_prob(const PolicyParams& p, const Vector& obs, const Vector& action);
/// Diagonal-Gaussian log density for an already evaluated mean.
double gaussian_log_prob(const Vector& mean, const Vector& log_spread, const Vector& action);
double entropy(const PolicyParams& p);

/// Shrinks the spread by `factor` in (0, 1], stopping at the floor. Mean net untouched.
PolicyParams reduce_entropy(const PolicyParams& p, double factor);

/// KL(new || old) for one state, both diagonal Gaussians.
double gaussian_kl(const Vector& mean_new, const Vector& log_spread_new, const Vector& mean_old,
                   const Vector& log_spread_old);
/// Batch mean of KL(pi_new(.|s) || pi_old(.|s)) over the columns of `obs`.
double mean_kl(const PolicyParams& old_policy, const PolicyParams& new_policy, const Matrix& obs);

/// Policy file: "policy 1", dims, floor, normalizer, log spread, then the densenet record.
void save_policy(const PolicyParams& p, std::ostream& os);
PolicyParams load_policy(std::istream& is);
void save_value(const ValueParams& v, std::ostream& os);
ValueParams load_value(std::istream& is);

}  // namespace gcpo
