#include "gcpo/returns.hpp"

#include <cmath>

#include "gcpo/errors.hpp"

namespace gcpo {

namespace {
void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidInput("discount must lie in [0, 1)");
}
}  // namespace

void RolloutBatch::add_episode(std::vector<StepRecord> episode, bool terminal,
                               double bootstrap_value, Vector bootstrap_cost_values) {
  if (episode.empty()) return;
  EpisodeSpan span;
  span.begin = steps.size();
  span.end = steps.size() + episode.size();
  span.terminal = terminal;
  span.bootstrap_value = terminal ? 0.0 : bootstrap_value;
  span.bootstrap_cost_values =
      terminal ? Vector::Zero(cost_dim) : std::move(bootstrap_cost_values);
  episode.back().terminal = terminal;
  for (auto& s : episode) steps.push_back(std::move(s));
  episodes.push_back(std::move(span));
}

void RolloutBatch::validate() const {
  std::size_t expected = 0;
  for (const auto& e : episodes) {
    if (e.begin != expected || e.end <= e.begin) throw InvalidInput("episodes are not contiguous");
    if (e.bootstrap_cost_values.size() != cost_dim)
      throw InvalidInput("bootstrap cost vector has the wrong length");
    for (std::size_t t = e.begin; t < e.end; ++t) {
      if (steps[t].costs.size() != cost_dim || steps[t].cost_values.size() != cost_dim)
        throw InvalidInput("cost vector length differs from the registered kappa-constraints");
      const bool last = t + 1 == e.end;
      if (steps[t].terminal && !last) throw InvalidInput("terminal flag inside an episode");
    }
    expected = e.end;
  }
  if (expected != steps.size()) throw InvalidInput("steps outside any episode");
}

Vector discounted_returns(std::span<const double> rewards, double gamma, double bootstrap) {
  check_gamma(gamma);
  const auto n = static_cast<Eigen::Index>(rewards.size());
  Vector g(n);
  double running = bootstrap;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    running = rewards[t] + gamma * running;
    g[t] = running;
  }
  return g;
}

Vector gae(std::span<const double> rewards, std::span<const double> values, double gamma,
           double lambda) {
  check_gamma(gamma);
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("GAE lambda must lie in [0, 1]");
  if (values.size() != rewards.size() + 1)
    throw InvalidInput("GAE: values must hold one bootstrap entry past the episode end");
  const auto n = static_cast<Eigen::Index>(rewards.size());
  Vector adv(n);
  double running = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double delta = rewards[t] + gamma * values[t + 1] - values[t];
    running = delta + gamma * lambda * running;
    adv[t] = running;
  }
  return adv;
}

double cost_return_estimate(const std::vector<std::vector<double>>& episode_costs, double gamma) {
  check_gamma(gamma);
  if (episode_costs.empty()) throw InvalidInput("cost_return_estimate: empty batch");
  double total = 0.0;
  for (const auto& ep : episode_costs) {
    double disc = 1.0, sum = 0.0;
    for (double c : ep) {
      sum += disc * c;
      disc *= gamma;
    }
    total += sum;
  }
  return total / static_cast<double>(episode_costs.size());
}

double constraint_surrogate(double current_cost_return, std::span<const double> cost_advantages,
                            std::span<const double> importance_ratios, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw InvalidInput("constraint_surrogate: discount must lie in [0, 1)");
  if (cost_advantages.size() != importance_ratios.size())
    throw InvalidInput("constraint_surrogate: advantage and ratio lengths differ");
  if (cost_advantages.empty()) return current_cost_return;
  double acc = 0.0;
  for (std::size_t i = 0; i < cost_advantages.size(); ++i)
    acc += importance_ratios[i] * cost_advantages[i];
  return current_cost_return +
         acc / static_cast<double>(cost_advantages.size()) / (1.0 - gamma);
}

AdvantageTargets compute_targets(const RolloutBatch& batch, double gamma, double lambda) {
  batch.validate();
  const auto n = static_cast<Eigen::Index>(batch.size());
  const int m = batch.cost_dim;
  AdvantageTargets out;
  out.advantages.resize(n);
  out.returns.resize(n);
  out.cost_advantages.resize(m, n);
  out.cost_returns.resize(m, n);
  out.cost_return_estimates = Vector::Zero(m);
  if (batch.episodes.empty()) return out;

  std::vector<double> signal, values;
  // channel -1 is the reward, 0..m-1 the cost channels; one code path for all
  for (int ch = -1; ch < m; ++ch) {
    double start_return_sum = 0.0;
    for (const auto& ep : batch.episodes) {
      signal.clear();
      values.clear();
      for (std::size_t t = ep.begin; t < ep.end; ++t) {
        const auto& s = batch.steps[t];
        signal.push_back(ch < 0 ? s.reward : s.costs[ch]);
        values.push_back(ch < 0 ? s.value : s.cost_values[ch]);
      }
      values.push_back(ch < 0 ? ep.bootstrap_value : ep.bootstrap_cost_values[ch]);
      const Vector a = gae(signal, values, gamma, lambda);
      for (std::size_t k = 0; k < ep.size(); ++k) {
        const auto t = static_cast<Eigen::Index>(ep.begin + k);
        if (ch < 0) {
          out.advantages[t] = a[k];
          out.returns[t] = a[k] + values[k];
        } else {
          out.cost_advantages(ch, t) = a[k];
          out.cost_returns(ch, t) = a[k] + values[k];
        }
      }
      if (ch >= 0) {
        double disc = 1.0;
        for (double c : signal) {
          start_return_sum += disc * c;
          disc *= gamma;
        }
      }
    }
    if (ch >= 0)
      out.cost_return_estimates[ch] =
          start_return_sum / static_cast<double>(batch.episodes.size());
  }
  return out;
}

void normalize_in_place(Vector& v) {
  if (v.size() == 0) return;
  const double mean = v.mean();
  v.array() -= mean;
  const double sd = std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
  if (sd > 1e-12) v /= sd;
}

}  // namespace gcpo
