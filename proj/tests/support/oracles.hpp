#pragma once

// Independent reference computations. Deliberately naive: direct sums and
// explicit loops, sharing no code with the library.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace gcpo::test {

// G_t = sum_{k >= t} gamma^{k-t} r_k + gamma^{T-t} * bootstrap
inline std::vector<double> returns_oracle(const std::vector<double>& r, double gamma,
                                          double bootstrap) {
  const std::size_t n = r.size();
  std::vector<double> g(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t k = t; k < n; ++k) acc += std::pow(gamma, double(k - t)) * r[k];
    acc += std::pow(gamma, double(n - t)) * bootstrap;
    g[t] = acc;
  }
  return g;
}

// A_t = sum_{k >= t} (gamma lambda)^{k-t} delta_k, values has n + 1 entries
inline std::vector<double> gae_oracle(const std::vector<double>& r, const std::vector<double>& v,
                                      double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> delta(n), a(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) delta[t] = r[t] + gamma * v[t + 1] - v[t];
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = t; k < n; ++k) a[t] += std::pow(gamma * lambda, double(k - t)) * delta[k];
  return a;
}

inline double cost_return_oracle(const std::vector<std::vector<double>>& eps, double gamma) {
  double total = 0.0;
  for (const auto& c : eps) {
    double s = 0.0;
    for (std::size_t t = 0; t < c.size(); ++t) s += std::pow(gamma, double(t)) * c[t];
    total += s;
  }
  return total / double(eps.size());
}

// Central differences of a scalar function of a parameter vector.
inline Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                         const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// |a - b| / max(|a|, |b|), with an absolute floor below which values count as equal
inline double relative_error(double a, double b, double floor = 1e-8) {
  const double d = std::abs(a - b);
  if (d <= floor) return 0.0;
  return d / std::max(std::abs(a), std::abs(b));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace gcpo::test
