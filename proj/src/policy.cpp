#include "gcpo/policy.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>

#include "gcpo/errors.hpp"

namespace gcpo {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)

void write_vector(std::ostream& os, const char* tag, const Vector& v) {
  os << tag << ' ' << v.size();
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << v[i];
  os << '\n';
}

Vector read_vector(std::istream& is, const char* tag) {
  std::string t;
  Eigen::Index n = 0;
  if (!(is >> t >> n) || t != tag) throw InvalidInput(std::string("expected '") + tag + "' record");
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) is >> v[i];
  if (!is) throw InvalidInput(std::string("truncated '") + tag + "' record");
  return v;
}
}  // namespace

InputNormalizer InputNormalizer::identity(int dim) {
  return {Vector::Zero(dim), Vector::Ones(dim)};
}

Vector InputNormalizer::apply(const Vector& obs) const {
  if (obs.size() != offset.size())
    throw InvalidInput("observation length " + std::to_string(obs.size()) + " != expected " +
                       std::to_string(offset.size()));
  return (obs - offset).cwiseProduct(scale);
}

Matrix InputNormalizer::apply(const Matrix& obs) const {
  if (obs.rows() != offset.size()) throw InvalidInput("observation batch has the wrong row count");
  return (obs.colwise() - offset).array().colwise() * scale.array();
}

Vector PolicyParams::spread() const {
  return log_spread.cwiseMax(log_spread_floor).array().exp().matrix();
}

Vector PolicyParams::mean(const Vector& obs) const { return mean_net.forward(input.apply(obs)); }
Matrix PolicyParams::mean(const Matrix& obs) const { return mean_net.forward(input.apply(obs)); }

Vector PolicyParams::flat() const {
  Vector f(flat_size());
  f << mean_net.parameters(), log_spread;
  return f;
}

void PolicyParams::set_flat(const Vector& f) {
  if (f.size() != flat_size()) throw InvalidInput("policy parameter vector has the wrong length");
  mean_net.parameters() = f.head(mean_net.parameter_count());
  log_spread = f.tail(log_spread.size());
}

void PolicyParams::project() { log_spread = log_spread.cwiseMax(log_spread_floor); }

PolicyParams make_policy(int obs_dim, int act_dim, const PolicyInit& init, Rng& rng) {
  PolicyParams p;
  p.input = InputNormalizer::identity(obs_dim);
  p.mean_net = nn::DenseNet::glorot({obs_dim, init.hidden, init.hidden, act_dim},
                                    nn::Activation::kTanh, rng);
  const int last = p.mean_net.layer_count() - 1;
  p.mean_net.weight(last) *= init.output_weight_scale;
  if (init.action_center.size() == act_dim) p.mean_net.bias(last) = init.action_center;
  p.log_spread_floor = std::log(init.spread_floor);
  p.log_spread = Vector::Constant(act_dim, std::log(init.initial_spread));
  p.project();
  return p;
}

Matrix ValueParams::evaluate(const Matrix& obs) const {
  return output_scale.asDiagonal() * net.forward(input.apply(obs));
}

Vector ValueParams::evaluate(const Vector& obs) const {
  return net.forward(input.apply(obs)).cwiseProduct(output_scale);
}

ValueParams make_value(int obs_dim, int heads, int hidden, Rng& rng) {
  return make_value(obs_dim, Vector::Ones(heads), hidden, rng);
}

ValueParams make_value(int obs_dim, const Vector& head_scales, int hidden, Rng& rng) {
  if (head_scales.size() < 1 || (head_scales.array() <= 0.0).any())
    throw InvalidInput("value head scales must be positive");
  ValueParams v;
  v.input = InputNormalizer::identity(obs_dim);
  v.net = nn::DenseNet::glorot({obs_dim, hidden, hidden, static_cast<int>(head_scales.size())},
                               nn::Activation::kTanh, rng);
  v.output_scale = head_scales;
  return v;
}

Vector sample_action(const PolicyParams& p, const Vector& obs, Rng& rng) {
  if (!obs.allFinite()) throw InvalidInput("sample_action: observation is not finite");
  Vector mu = p.mean(obs);
  if (!mu.allFinite()) throw PolicyDiverged("sample_action: policy mean is not finite");
  const Vector sigma = p.spread();
  for (Eigen::Index j = 0; j < mu.size(); ++j) mu[j] += sigma[j] * rng.normal();
  return mu;
}

double gaussian_log_prob(const Vector& mean, const Vector& log_spread, const Vector& action) {
  if (mean.size() != action.size() || log_spread.size() != action.size())
    throw InvalidInput("log_prob: action length does not match the policy");
  double lp = 0.0;
  for (Eigen::Index j = 0; j < action.size(); ++j) {
    const double z = (action[j] - mean[j]) * std::exp(-log_spread[j]);
    lp += -0.5 * z * z - log_spread[j] - 0.5 * kLog2Pi;
  }
  return lp;
}

double log_prob(const PolicyParams& p, const Vector& obs, const Vector& action) {
  return gaussian_log_prob(p.mean(obs), p.log_spread.cwiseMax(p.log_spread_floor), action);
}

double entropy(const PolicyParams& p) {
  const double per_dim = 0.5 * (kLog2Pi + 1.0);
  return per_dim * static_cast<double>(p.act_dim()) +
         p.log_spread.cwiseMax(p.log_spread_floor).sum();
}

PolicyParams reduce_entropy(const PolicyParams& p, double factor) {
  if (!(factor > 0.0 && factor <= 1.0))
    throw InvalidInput("reduce_entropy: factor must lie in (0, 1]");
  PolicyParams out = p;
  out.log_spread = (p.log_spread.array() + std::log(factor)).matrix().cwiseMax(p.log_spread_floor);
  return out;
}

double gaussian_kl(const Vector& mean_new, const Vector& ls_new, const Vector& mean_old,
                   const Vector& ls_old) {
  double kl = 0.0;
  for (Eigen::Index j = 0; j < mean_new.size(); ++j) {
    const double var_new = std::exp(2.0 * ls_new[j]);
    const double var_old = std::exp(2.0 * ls_old[j]);
    const double d = mean_new[j] - mean_old[j];
    kl += ls_old[j] - ls_new[j] + (var_new + d * d) / (2.0 * var_old) - 0.5;
  }
  return kl;
}

double mean_kl(const PolicyParams& old_policy, const PolicyParams& new_policy, const Matrix& obs) {
  if (obs.cols() == 0) throw InvalidInput("mean_kl: empty observation batch");
  const Matrix mu_old = old_policy.mean(obs);
  const Matrix mu_new = new_policy.mean(obs);
  const Vector ls_old = old_policy.log_spread.cwiseMax(old_policy.log_spread_floor);
  const Vector ls_new = new_policy.log_spread.cwiseMax(new_policy.log_spread_floor);
  double total = 0.0;
  for (Eigen::Index c = 0; c < obs.cols(); ++c)
    total += gaussian_kl(mu_new.col(c), ls_new, mu_old.col(c), ls_old);
  return total / static_cast<double>(obs.cols());
}

void save_policy(const PolicyParams& p, std::ostream& os) {
  os << std::setprecision(17);
  os << "policy 1\nobs_dim " << p.obs_dim() << "\nact_dim " << p.act_dim() << "\nlog_spread_floor "
     << p.log_spread_floor << '\n';
  write_vector(os, "input_offset", p.input.offset);
  write_vector(os, "input_scale", p.input.scale);
  write_vector(os, "log_spread", p.log_spread);
  p.mean_net.save(os);
}

PolicyParams load_policy(std::istream& is) {
  std::string tag;
  int version = 0, obs_dim = 0, act_dim = 0;
  if (!(is >> tag >> version) || tag != "policy" || version != 1)
    throw InvalidInput("not a policy v1 file");
  PolicyParams p;
  is >> tag >> obs_dim >> tag >> act_dim >> tag >> p.log_spread_floor;
  if (!is) throw InvalidInput("bad policy header");
  p.input.offset = read_vector(is, "input_offset");
  p.input.scale = read_vector(is, "input_scale");
  p.log_spread = read_vector(is, "log_spread");
  p.mean_net = nn::DenseNet::load(is);
  if (p.obs_dim() != obs_dim || p.act_dim() != act_dim || p.log_spread.size() != act_dim ||
      p.input.offset.size() != obs_dim || p.input.scale.size() != obs_dim)
    throw InvalidInput("policy file dimensions are inconsistent with its header");
  return p;
}

void save_value(const ValueParams& v, std::ostream& os) {
  os << std::setprecision(17) << "value 1\n";
  write_vector(os, "input_offset", v.input.offset);
  write_vector(os, "input_scale", v.input.scale);
  write_vector(os, "output_scale", v.output_scale);
  v.net.save(os);
}

ValueParams load_value(std::istream& is) {
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "value" || version != 1)
    throw InvalidInput("not a value v1 file");
  ValueParams v;
  v.input.offset = read_vector(is, "input_offset");
  v.input.scale = read_vector(is, "input_scale");
  v.output_scale = read_vector(is, "output_scale");
  v.net = nn::DenseNet::load(is);
  if (v.output_scale.size() != v.heads() || v.input.offset.size() != v.net.input_size())
    throw InvalidInput("value file dimensions are inconsistent");
  return v;
}

}  // namespace gcpo
