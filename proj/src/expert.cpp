#include "gcpo/expert.hpp"

#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "gcpo/errors.hpp"

namespace gcpo {

namespace {

constexpr double kPi = 3.14159265358979323846;

double smoothstep(double x) { return x * x * (3.0 - 2.0 * x); }

// Commanded base speed: zero for the first half period (the first swing
// steps in place), then a smoothstep ramp to the command.
double speed_at(double t, double command, const ExpertConfig& cfg) {
  const double x = (t - 0.5 * cfg.period) / cfg.ramp_time;
  if (x <= 0.0) return 0.0;
  return x >= 1.0 ? command : command * smoothstep(x);
}

// Distance travelled by the base up to t (integral of speed_at).
double travel(double t, double command, const ExpertConfig& cfg) {
  const double r = cfg.ramp_time;
  const double x = (t - 0.5 * cfg.period) / r;
  if (x <= 0.0) return 0.0;
  if (x < 1.0) return command * r * (x * x * x - 0.5 * x * x * x * x);
  return command * r * 0.5 + command * (t - 0.5 * cfg.period - r);
}

// Touchdown point for a stance starting at t0: the sweep is centred under the hip.
double touchdown_x(double t0, double command, const ExpertConfig& cfg) {
  return 0.5 * (travel(t0 + 0.5 * cfg.period, command, cfg) - travel(t0, command, cfg));
}

// Quintic Hermite on [0, 1] with zero end accelerations; v0, v1 per unit u.
double hermite5(double u, double p0, double v0, double p1, double v1) {
  const double u3 = u * u * u, u4 = u3 * u, u5 = u4 * u;
  return p0 * (1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5) + v0 * (u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5) +
         v1 * (-4.0 * u3 + 7.0 * u4 - 3.0 * u5) + p1 * (10.0 * u3 - 15.0 * u4 + 6.0 * u5);
}

Vec4 joint_targets_at(double t, double command, const ExpertConfig& cfg, bool& clamped) {
  const auto feet = expert_foot_targets(t, command, cfg);
  Vec4 q;
  for (int i = 0; i < kLegs; ++i)
    if (!inverse_kinematics(cfg.legs[i], feet[i], q[2 * i], q[2 * i + 1])) clamped = true;
  return q;
}

}  // namespace

ExpertConfig ExpertConfig::from_env(const EnvParams& p, double clearance) {
  ExpertConfig c;
  c.clearance = clearance;
  c.nominal_height = p.nominal_height;
  for (int i = 0; i < kLegs; ++i) {
    c.legs[i].hip_x = i == 0 ? p.hip_offset : -p.hip_offset;
    c.legs[i].l1 = p.link1 * p.size_scale[2 * i];
    c.legs[i].l2 = p.link2 * p.size_scale[2 * i + 1];
  }
  c.kp = p.kp * p.torque_scale;
  c.kd = p.kd * p.torque_scale;
  for (int j = 0; j < kJoints; ++j)
    c.inertia[j] = p.joint_inertia * p.mass_scale[j] * p.size_scale[j] * p.size_scale[j];
  c.dt = p.dt;
  return c;
}

std::array<Vec2, kLegs> expert_foot_targets(double t, double command, const ExpertConfig& cfg) {
  std::array<Vec2, kLegs> feet;
  const double half = 0.5 * cfg.period;
  const double lift = command == 0.0 ? 0.0 : cfg.clearance;
  for (int i = 0; i < kLegs; ++i) {
    double phase = t / cfg.period + 0.5 * i;
    phase -= std::floor(phase);
    double x = 0.0, z = -cfg.nominal_height;
    if (phase < 0.5) {
      const double t0 = t - phase * cfg.period;
      x = touchdown_x(t0, command, cfg) - (travel(t, command, cfg) - travel(t0, command, cfg));
    } else {
      const double t1 = t - (phase - 0.5) * cfg.period;  // liftoff
      const double t2 = t1 + half;                        // touchdown
      const double u = (t - t1) / half;
      const double p0 = touchdown_x(t1 - half, command, cfg) -
                        (travel(t1, command, cfg) - travel(t1 - half, command, cfg));
      const double p1 = touchdown_x(t2, command, cfg);
      x = hermite5(u, p0, -speed_at(t1, command, cfg) * half, p1,
                   -speed_at(t2, command, cfg) * half);
      z += lift * 0.5 * (1.0 - std::cos(2.0 * kPi * u));
    }
    feet[i] = Vec2(cfg.legs[i].hip_x + x, z);
  }
  return feet;
}

ExpertAction expert_controller(const EnvSnapshot& s, double command, const ExpertConfig& cfg) {
  ExpertAction out;
  const double t = s.time + cfg.dt;
  const double h = cfg.dt;
  const Vec4 q = joint_targets_at(t, command, cfg, out.clamped);
  bool ignored = false;
  const Vec4 q_next = joint_targets_at(t + h, command, cfg, ignored);
  const Vec4 q_prev = joint_targets_at(std::max(0.0, t - h), command, cfg, ignored);
  const Vec4 qd = (q_next - q_prev) / (t + h - std::max(0.0, t - h));
  const Vec4 qdd = (q_next - 2.0 * q + q_prev) / (h * h);
  Vec4 target = q;
  if (cfg.kp > 0.0)
    target += (cfg.kd * qd + cfg.inertia.cwiseProduct(qdd)) / cfg.kp;
  out.action = target;
  return out;
}

ExpertDataset generate_dataset(const EnvConfig& env_cfg, double command_lo, double command_hi,
                               int episodes, int steps_per_episode, std::uint64_t seed,
                               double exec_noise, double clearance) {
  if (episodes < 0 || steps_per_episode <= 0) throw InvalidInput("dataset size must be positive");
  if (command_hi < command_lo) throw InvalidInput("command range is empty");
  if (exec_noise < 0.0) throw InvalidInput("execution noise must be >= 0");
  EnvConfig cfg = env_cfg;
  cfg.params.randomize = RandomizationToggles{};
  cfg.params.noise_scale = 0.0;
  cfg.params.max_steps = std::max(cfg.params.max_steps, steps_per_episode);
  PlanarQuadEnv env(cfg);
  const ExpertConfig expert = ExpertConfig::from_env(cfg.params, clearance);

  ExpertDataset d;
  d.meta = {command_lo, command_hi, seed, episodes, steps_per_episode, 0, exec_noise};
  Rng rng(seed);
  const int max_attempts = 10 * std::max(1, episodes);
  int attempts = 0;
  for (int ep = 0; ep < episodes;) {
    if (++attempts > max_attempts)
      throw InvalidState("expert keeps triggering eta-termination; dataset generation aborted");
    const double command = rng.uniform(command_lo, command_hi);
    Vector obs = env.reset(command, rng);
    std::vector<Vector> ep_obs, ep_act;
    bool failed = false;
    for (int t = 0; t < steps_per_episode; ++t) {
      const ExpertAction a = expert_controller(env.snapshot(), command, expert);
      ep_obs.push_back(obs);
      ep_act.push_back(a.action);
      Vector exec = a.action;
      if (exec_noise > 0.0)
        for (Eigen::Index j = 0; j < exec.size(); ++j) exec[j] += exec_noise * rng.normal();
      const StepResult r = env.step(exec, rng);
      if (r.terminated) {
        failed = true;
        break;
      }
      obs = r.obs;
      if (r.truncated) break;
    }
    if (failed) {
      ++d.meta.discarded;
      continue;
    }
    for (std::size_t k = 0; k < ep_obs.size(); ++k) {
      d.obs.push_back(std::move(ep_obs[k]));
      d.actions.push_back(std::move(ep_act[k]));
    }
    ++ep;
  }
  return d;
}

namespace {
std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }
Vector from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}
}  // namespace

void save_dataset(const ExpertDataset& d, std::ostream& os) {
  nlohmann::ordered_json header;
  header["format"] = "expert_dataset";
  header["version"] = 1;
  header["pairs"] = d.size();
  header["command_lo"] = d.meta.command_lo;
  header["command_hi"] = d.meta.command_hi;
  header["seed"] = d.meta.seed;
  header["episodes"] = d.meta.episodes;
  header["steps_per_episode"] = d.meta.steps_per_episode;
  header["discarded"] = d.meta.discarded;
  header["exec_noise"] = d.meta.exec_noise;
  os << header.dump() << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    nlohmann::ordered_json row;
    row["obs"] = to_std(d.obs[i]);
    row["action"] = to_std(d.actions[i]);
    os << row.dump() << '\n';
  }
}

ExpertDataset load_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("dataset file is empty");
  ExpertDataset d;
  std::size_t pairs = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "expert_dataset" || header.at("version") != 1)
      throw InvalidInput("not an expert_dataset v1 file");
    pairs = header.at("pairs").get<std::size_t>();
    d.meta.command_lo = header.at("command_lo");
    d.meta.command_hi = header.at("command_hi");
    d.meta.seed = header.at("seed");
    d.meta.episodes = header.at("episodes");
    d.meta.steps_per_episode = header.at("steps_per_episode");
    d.meta.discarded = header.at("discarded");
    d.meta.exec_noise = header.at("exec_noise");
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto row = nlohmann::json::parse(line);
      d.obs.push_back(from_json(row.at("obs")));
      d.actions.push_back(from_json(row.at("action")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed dataset: ") + e.what());
  }
  if (d.size() != pairs) throw IoError("dataset is truncated: header promises more pairs");
  return d;
}

double imitation_mse(const PolicyParams& policy, const std::vector<Vector>& obs,
                     const std::vector<Vector>& actions) {
  if (obs.size() != actions.size()) throw InvalidInput("observation/action counts differ");
  if (obs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) total += (policy.mean(obs[i]) - actions[i]).squaredNorm();
  return total / static_cast<double>(obs.size());
}

GpuResult guided_policy_update(PolicyParams& policy, ExpertDataset& data, long it_max,
                               int n_batch, const GpuSettings& settings, nn::AdamState& opt,
                               Rng& rng) {
  if (n_batch <= 0) throw InvalidInput("n_batch must be positive");
  if (it_max < 0) throw InvalidInput("supervised budget must be >= 0");
  if (settings.minibatch <= 0) throw InvalidInput("minibatch size must be positive");
  GpuResult res;
  if (data.size() == 0) {
    res.empty_dataset = true;
    return res;
  }
  if (opt.first_moment.size() != policy.mean_net.parameter_count())
    throw InvalidInput("GPU optimizer state does not match the policy mean net");
  const std::size_t l_batch =
      std::min<std::size_t>(data.size(), std::max<long>(1, it_max / n_batch));

  // partial Fisher-Yates: the first l_batch entries of `order` are the sample
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < l_batch; ++i) std::swap(order[i], order[i + rng.index(order.size() - i)]);
  std::vector<Vector> obs, act;
  std::vector<bool> taken(data.size(), false);
  for (std::size_t i = 0; i < l_batch; ++i) {
    obs.push_back(data.obs[order[i]]);
    act.push_back(data.actions[order[i]]);
    taken[order[i]] = true;
  }
  ExpertDataset rest;
  rest.meta = data.meta;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!taken[i]) {
      rest.obs.push_back(std::move(data.obs[i]));
      rest.actions.push_back(std::move(data.actions[i]));
    }
  data = std::move(rest);

  res.pairs_used = l_batch;
  res.mse_before = imitation_mse(policy, obs, act);
  const auto mb = static_cast<std::size_t>(settings.minibatch);
  std::vector<std::size_t> idx(l_batch);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (int pass = 0; pass < n_batch; ++pass) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    for (std::size_t start = 0; start < l_batch; start += mb) {
      const std::size_t n = std::min(mb, l_batch - start);
      Matrix x(policy.obs_dim(), static_cast<Eigen::Index>(n));
      Matrix y(policy.act_dim(), static_cast<Eigen::Index>(n));
      for (std::size_t c = 0; c < n; ++c) {
        x.col(static_cast<Eigen::Index>(c)) = obs[idx[start + c]];
        y.col(static_cast<Eigen::Index>(c)) = act[idx[start + c]];
      }
      const nn::ForwardTape tape = policy.mean_net.forward_tape(policy.input.apply(x));
      const Matrix d_out = (2.0 / static_cast<double>(n)) * (tape.output() - y);
      const nn::Gradients g = policy.mean_net.backward(tape, d_out);
      nn::adam_step(policy.mean_net.parameters(), g.parameters, opt);
    }
  }
  res.mse_after = imitation_mse(policy, obs, act);
  policy = reduce_entropy(policy, settings.entropy_factor);
  return res;
}

}  // namespace gcpo
