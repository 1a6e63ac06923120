#include "gcpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <thread>

#include "gcpo/errors.hpp"

namespace gcpo {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kGcpo: return "gcpo";
    case TrainMode::kCppoOnly: return "cppo_only";
    case TrainMode::kUnconstrained: return "unconstrained";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "gcpo") return TrainMode::kGcpo;
  if (s == "cppo_only") return TrainMode::kCppoOnly;
  if (s == "unconstrained") return TrainMode::kUnconstrained;
  throw InvalidInput("unknown mode '" + s + "' (expected gcpo, cppo_only or unconstrained)");
}

void TrainerConfig::validate() const {
  if (!(decay_rate < 0.0)) throw InvalidInput("decay rate lambda_d must be negative");
  if (supervised_budget < 0) throw InvalidInput("supervised budget must be >= 0");
  if (acppo_budget <= 0 || hcppo_budget <= 0) throw InvalidInput("RL budgets must be positive");
  if (rollout_steps <= 0 || gpu_passes <= 0 || batch_steps <= 0)
    throw InvalidInput("rollout length, GPU passes and batch size must be positive");
  if (acppo_rounds < 0 || hcppo_rounds < 0) throw InvalidInput("round counts must be >= 0");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw InvalidInput("GAE lambda must lie in [0, 1]");
  if (!(policy_lr > 0.0 && value_lr > 0.0 && gpu.learning_rate > 0.0))
    throw InvalidInput("learning rates must be positive");
  if (policy_hidden <= 0 || value_hidden <= 0) throw InvalidInput("hidden sizes must be positive");
  if (!(initial_spread > 0.0)) throw InvalidInput("initial spread must be positive");
  if (!(cost_value_scale > 0.0)) throw InvalidInput("cost value scale must be positive");
  if (gpu.minibatch <= 0 || !(gpu.entropy_factor > 0.0 && gpu.entropy_factor <= 1.0))
    throw InvalidInput("GPU minibatch must be positive and entropy factor in (0, 1]");
  if (!(command_lo <= command_hi)) throw InvalidInput("command range is empty");
  if (dataset_episodes <= 0 || dataset_steps <= 0) throw InvalidInput("dataset size must be positive");
  if (dataset_exec_noise < 0.0 || expert_clearance < 0.0)
    throw InvalidInput("expert noise and clearance must be >= 0");
  if (workers <= 0) throw InvalidInput("worker count must be positive");
  if (!(penalty_ramp >= 0.0 && penalty_ramp <= 1.0))
    throw InvalidInput("penalty ramp must lie in [0, 1]");
  if (zeta_default < 0.0) throw InvalidInput("penalty weight zeta must be >= 0");
  env.validate();
  const auto ids = kappa_ids();
  for (const auto& [id, z] : zeta) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end())
      throw InvalidInput("zeta given for '" + id + "', which is not a kappa constraint");
    if (z < 0.0) throw InvalidInput("penalty weight zeta must be >= 0");
  }
  resolved_objective().validate();
}

std::vector<std::string> TrainerConfig::kappa_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : env.constraints)
    if (s.tier == Tier::kKappa) ids.push_back(s.id);
  return ids;
}

ObjectiveConfig TrainerConfig::resolved_objective() const {
  ObjectiveConfig o = objective;
  std::vector<const ConstraintSpec*> kappa;
  for (const auto& s : env.constraints)
    if (s.tier == Tier::kKappa) kappa.push_back(&s);
  const auto m = static_cast<Eigen::Index>(kappa.size());
  o.zeta.resize(m);
  o.cost_limits.resize(m);
  o.hard_mask.assign(kappa.size(), true);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& s = *kappa[k];
    auto it = zeta.find(s.id);
    o.zeta[k] = it == zeta.end() ? zeta_default : it->second;
    o.cost_limits[k] = s.d_bound.value_or(0.0);
    o.hard_mask[k] = s.hard;
  }
  return o;
}

long TrainerConfig::rl_budget() const {
  long total = static_cast<long>(hcppo_rounds) * hcppo_budget;
  for (const auto& b : gcpo_schedule(*this)) total += b.rl;
  return total;
}

double TrainerConfig::penalty_factor(long env_steps) const {
  const double ramp = penalty_ramp * static_cast<double>(rl_budget());
  if (ramp <= 0.0) return 1.0;
  return std::min(1.0, static_cast<double>(env_steps) / ramp);
}

std::vector<RoundBudget> gcpo_schedule(const TrainerConfig& cfg) {
  std::vector<RoundBudget> rounds;
  for (int t = 0; t < cfg.acppo_rounds; ++t) {
    RoundBudget b;
    b.alpha = std::exp(cfg.decay_rate * t);
    b.supervised = std::lround(b.alpha * static_cast<double>(cfg.supervised_budget));
    b.rl = std::lround((1.0 - b.alpha) * static_cast<double>(cfg.acppo_budget));
    rounds.push_back(b);
  }
  return rounds;
}

namespace {

class QuadStepEnv : public StepEnv {
 public:
  explicit QuadStepEnv(const EnvConfig& cfg) : env_(cfg) {}

  Vector reset(double command, Rng& rng) override { return env_.reset(command, rng); }
  void set_penalty_factor(double f) override { factor_ = f; }

  Transition step(const Vector& action, Rng& rng) override {
    StepResult r = env_.step(action, rng);
    Transition t;
    t.obs = std::move(r.obs);
    t.score = r.reward;
    t.reward = r.reward + (1.0 - factor_) * r.penalty;
    t.costs = std::move(r.costs);
    for (const auto& e : r.kappa.entries) t.kappa_flags.push_back(e.violated);
    t.rho_violated = std::any_of(r.rho.entries.begin(), r.rho.entries.end(),
                                 [](const auto& e) { return e.violated; });
    t.terminated = r.terminated;
    t.truncated = r.truncated;
    return t;
  }

 private:
  PlanarQuadEnv env_;
  double factor_ = 1.0;
};

struct RawEpisode {
  std::vector<StepRecord> steps;
  bool terminal = false;
  Vector bootstrap_obs;  // next observation of a truncated episode
};

struct SlotResult {
  std::vector<RawEpisode> episodes;
  RolloutStats stats;
};

SlotResult run_slot(const EnvFactory& factory, const PolicyParams& policy, const RolloutSettings& s,
                    long quota, std::uint64_t seed) {
  SlotResult out;
  out.stats.kappa_counts.assign(static_cast<std::size_t>(s.cost_dim), 0);
  Rng rng(seed);
  auto env = factory();
  env->set_penalty_factor(s.penalty_factor);
  long remaining = quota;
  while (remaining > 0) {
    const double command = s.command_hi > s.command_lo ? rng.uniform(s.command_lo, s.command_hi)
                                                       : s.command_lo;
    Vector obs = env->reset(command, rng);
    const long length = std::min<long>(remaining, s.rollout_steps);
    RawEpisode ep;
    bool eta = false;
    for (long t = 0; t < length; ++t) {
      StepRecord rec;
      rec.action = sample_action(policy, obs, rng);
      if (!rec.action.allFinite()) throw PolicyDiverged("policy produced a non-finite action");
      rec.log_prob = log_prob(policy, obs, rec.action);
      rec.obs = std::move(obs);
      Transition tr = env->step(rec.action, rng);
      if (tr.costs.size() != s.cost_dim)
        throw InvalidInput("environment cost vector does not match the kappa constraint set");
      rec.reward = tr.reward;
      rec.costs = std::move(tr.costs);
      rec.kappa_violated = std::find(tr.kappa_flags.begin(), tr.kappa_flags.end(), true) !=
                           tr.kappa_flags.end();
      rec.eta_triggered = tr.terminated;

      ++out.stats.env_steps;
      out.stats.reward_sum += tr.score;
      out.stats.rho_steps += tr.rho_violated;
      out.stats.kappa_steps += rec.kappa_violated;
      for (std::size_t k = 0; k < tr.kappa_flags.size() && k < out.stats.kappa_counts.size(); ++k)
        out.stats.kappa_counts[k] += tr.kappa_flags[k];
      ep.steps.push_back(std::move(rec));
      obs = std::move(tr.obs);
      --remaining;
      if (tr.terminated) {
        eta = true;
        break;
      }
      if (tr.done) {
        ep.steps.back().terminal = true;
        ep.terminal = true;
        break;
      }
      if (tr.truncated) break;
    }
    ++out.stats.episodes;
    if (eta) {
      ++out.stats.eta_terminations;
      if (s.reformat) {
        ep.steps = reformat_episode(ep.steps, s.terminal_penalty);
      } else {
        ep.steps.back().eta_triggered = false;
        ep.steps.back().terminal = true;
      }
      ep.terminal = true;
    } else if (!ep.terminal) {
      ep.bootstrap_obs = std::move(obs);
    }
    out.episodes.push_back(std::move(ep));
  }
  return out;
}

}  // namespace

EnvFactory quad_env_factory(EnvConfig cfg, int min_steps) {
  cfg.params.max_steps = std::max(cfg.params.max_steps, min_steps);
  cfg.validate();
  return [cfg]() -> std::unique_ptr<StepEnv> { return std::make_unique<QuadStepEnv>(cfg); };
}

Rollout collect_rollouts(const EnvFactory& factory, const PolicyParams& policy,
                         const ValueParams& value, const RolloutSettings& s) {
  if (s.samples < 0 || s.rollout_steps <= 0 || s.workers <= 0)
    throw InvalidInput("rollout settings out of range");
  if (value.heads() != s.cost_dim + 1) throw InvalidInput("value heads do not match the cost channels");
  const long slots = (s.samples + s.rollout_steps - 1) / s.rollout_steps;
  std::vector<SlotResult> results(static_cast<std::size_t>(slots));
  auto quota = [&](long k) { return std::min<long>(s.rollout_steps, s.samples - k * s.rollout_steps); };

  const int workers = static_cast<int>(std::min<long>(s.workers, std::max<long>(1, slots)));
  if (workers <= 1) {
    for (long k = 0; k < slots; ++k)
      results[k] = run_slot(factory, policy, s, quota(k), mix_seed(s.stream, k));
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (long k = w; k < slots; k += workers)
            results[k] = run_slot(factory, policy, s, quota(k), mix_seed(s.stream, k));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  Rollout out;
  out.stats.kappa_counts.assign(static_cast<std::size_t>(s.cost_dim), 0);
  std::vector<RawEpisode*> episodes;
  for (auto& r : results) {
    out.stats.env_steps += r.stats.env_steps;
    out.stats.episodes += r.stats.episodes;
    out.stats.eta_terminations += r.stats.eta_terminations;
    out.stats.reward_sum += r.stats.reward_sum;
    out.stats.rho_steps += r.stats.rho_steps;
    out.stats.kappa_steps += r.stats.kappa_steps;
    for (int k = 0; k < s.cost_dim; ++k) out.stats.kappa_counts[k] += r.stats.kappa_counts[k];
    for (auto& ep : r.episodes) episodes.push_back(&ep);
  }

  // one value pass over every stored observation plus the bootstrap states
  Eigen::Index n = 0;
  for (const auto* ep : episodes) n += static_cast<Eigen::Index>(ep->steps.size()) + !ep->terminal;
  if (n == 0) {
    out.batch.cost_dim = s.cost_dim;
    return out;
  }
  Matrix obs(policy.obs_dim(), n);
  Eigen::Index c = 0;
  for (const auto* ep : episodes) {
    for (const auto& st : ep->steps) obs.col(c++) = st.obs;
    if (!ep->terminal) obs.col(c++) = ep->bootstrap_obs;
  }
  const Matrix v = value.evaluate(obs);
  out.batch.cost_dim = s.cost_dim;
  c = 0;
  for (auto* ep : episodes) {
    for (auto& st : ep->steps) {
      st.value = v(0, c);
      st.cost_values = v.col(c).tail(s.cost_dim);
      ++c;
    }
    double boot = 0.0;
    Vector boot_costs = Vector::Zero(s.cost_dim);
    if (!ep->terminal) {
      boot = v(0, c);
      boot_costs = v.col(c).tail(s.cost_dim);
      ++c;
    }
    out.batch.add_episode(std::move(ep->steps), ep->terminal, boot, boot_costs);
  }
  return out;
}

void policy_optimization(Learner& learner, const EnvFactory& factory, const TrainerConfig& cfg,
                         long budget, bool hard, double alpha, OptimizationState& state, Rng& rng,
                         const IterationHooks& hooks) {
  if (budget < 0) throw InvalidInput("policy optimization budget must be >= 0");
  const ObjectiveConfig objective = cfg.resolved_objective();
  const bool constrained = cfg.mode != TrainMode::kUnconstrained;
  long spent = 0;
  while (spent < budget) {
    RolloutSettings rs;
    rs.samples = std::min(cfg.batch_steps, budget - spent);
    rs.rollout_steps = cfg.rollout_steps;
    rs.workers = cfg.workers;
    rs.command_lo = cfg.command_lo;
    rs.command_hi = cfg.command_hi;
    rs.reformat = constrained;
    rs.terminal_penalty = cfg.env.terminal_penalty;
    rs.penalty_factor = cfg.penalty_factor(state.env_steps);
    rs.cost_dim = objective.cost_dim();
    rs.stream = mix_seed(cfg.seed, 0x726f6c6cULL, static_cast<std::uint64_t>(state.iteration));
    Rollout ro = collect_rollouts(factory, learner.policy, learner.value, rs);
    spent += ro.stats.env_steps;
    state.env_steps += ro.stats.env_steps;

    TrainRecord rec;
    rec.iteration = state.iteration++;
    rec.env_steps = state.env_steps;
    rec.phase = hard ? Phase::kHcppo : Phase::kAcppo;
    rec.alpha = alpha;
    const double steps = static_cast<double>(std::max<long>(1, ro.stats.env_steps));
    rec.mean_reward = ro.stats.reward_sum / steps;
    rec.rho_violation = static_cast<double>(ro.stats.rho_steps) / steps;
    rec.kappa_violation = static_cast<double>(ro.stats.kappa_steps) / steps;
    rec.eta_violation = static_cast<double>(ro.stats.eta_terminations) / steps;
    rec.kappa_violations.resize(rs.cost_dim);
    for (int k = 0; k < rs.cost_dim; ++k)
      rec.kappa_violations[k] = static_cast<double>(ro.stats.kappa_counts[k]) / steps;

    const AdvantageTargets targets =
        compute_targets(ro.batch, objective.gamma, cfg.gae_lambda);
    rec.cost_returns = targets.cost_return_estimates;
    const UpdateBatch batch =
        make_update_batch(ro.batch, targets, objective.normalize_advantages);
    UpdateDiagnostics diag;
    if (!constrained)
      diag = ppo_update(learner, batch, objective, rng);
    else if (hard)
      diag = hcppo_update(learner, batch, objective, rng);
    else
      diag = acppo_update(learner, batch, objective, rng);
    rec.mean_kl = diag.mean_kl;
    rec.entropy = entropy(learner.policy);
    if (diag.aborted_nonfinite) {
      if (++state.nonfinite_streak >= 2)
        throw PolicyDiverged("non-finite loss in two consecutive updates");
    } else {
      state.nonfinite_streak = 0;
    }
    if (hooks.on_record) hooks.on_record(rec);
  }
}

Learner make_learner(const TrainerConfig& cfg, Rng& rng) {
  const double command_center = 0.5 * (cfg.command_lo + cfg.command_hi);
  PolicyInit init;
  init.hidden = cfg.policy_hidden;
  init.initial_spread = cfg.initial_spread;
  init.action_center = PlanarQuadEnv::nominal_joint_targets(cfg.env.params);
  PolicyParams policy = make_policy(kObsDim, kActDim, init, rng);
  policy.input = PlanarQuadEnv::observation_normalizer(cfg.env.params, command_center);

  const int m = cfg.env.kappa_count();
  Vector scales(m + 1);
  // the reward value is of order (typical step reward) / (1 - gamma)
  scales[0] = 0.25 / (1.0 - cfg.objective.gamma);
  scales.tail(m).setConstant(cfg.cost_value_scale);
  ValueParams value = make_value(kObsDim, scales, cfg.value_hidden, rng);
  value.input = policy.input;
  return Learner::create(std::move(policy), std::move(value), cfg.policy_lr, cfg.value_lr);
}

namespace {

void save_adam(const nn::AdamState& a, std::ostream& os) {
  os << "adam " << a.first_moment.size() << ' ' << a.step_count << ' ' << a.learning_rate << ' '
     << a.beta1 << ' ' << a.beta2 << ' ' << a.epsilon << '\n';
  for (Eigen::Index i = 0; i < a.first_moment.size(); ++i)
    os << a.first_moment[i] << ' ' << a.second_moment[i] << '\n';
}

nn::AdamState load_adam(std::istream& is) {
  std::string tag;
  Eigen::Index n = 0;
  nn::AdamState a;
  if (!(is >> tag >> n >> a.step_count >> a.learning_rate >> a.beta1 >> a.beta2 >> a.epsilon) ||
      tag != "adam" || n < 0)
    throw IoError("checkpoint: malformed optimizer record");
  a.first_moment.resize(n);
  a.second_moment.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(is >> a.first_moment[i] >> a.second_moment[i]))
      throw IoError("checkpoint: optimizer record is truncated");
  return a;
}

template <typename T>
T read_field(std::istream& is, const char* name) {
  std::string tag;
  T v{};
  if (!(is >> tag >> v) || tag != name)
    throw IoError(std::string("checkpoint: expected field '") + name + "'");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, std::ostream& os) {
  os << std::setprecision(17) << "gcpo_checkpoint 1\n"
     << "iteration " << c.iteration << "\nenv_steps " << c.env_steps << "\nround " << c.round
     << "\nrng " << c.rng_state << '\n';
  save_policy(c.learner.policy, os);
  save_value(c.learner.value, os);
  os << std::setprecision(17);
  save_adam(c.learner.policy_opt, os);
  save_adam(c.learner.value_opt, os);
  save_adam(c.gpu_opt, os);
  if (!os) throw IoError("checkpoint: write failed");
}

Checkpoint load_checkpoint(std::istream& is) {
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "gcpo_checkpoint")
    throw IoError("not a checkpoint file");
  if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.iteration = read_field<long>(is, "iteration");
  c.env_steps = read_field<long>(is, "env_steps");
  c.round = read_field<int>(is, "round");
  if (!(is >> tag) || tag != "rng") throw IoError("checkpoint: expected field 'rng'");
  std::getline(is >> std::ws, c.rng_state);
  try {
    c.learner.policy = load_policy(is);
    c.learner.value = load_value(is);
  } catch (const InvalidInput& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  c.learner.policy_opt = load_adam(is);
  c.learner.value_opt = load_adam(is);
  c.gpu_opt = load_adam(is);
  if (c.learner.policy_opt.first_moment.size() != c.learner.policy.flat_size() ||
      c.learner.value_opt.first_moment.size() != c.learner.value.net.parameter_count())
    throw IoError("checkpoint: optimizer state does not match the networks");
  return c;
}

TrainResult gcpo_train(const TrainerConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  Rng init_rng(mix_seed(cfg.seed, 0x696e6974ULL));
  TrainResult res;
  res.learner = make_learner(cfg, init_rng);
  res.gpu_opt = nn::AdamState::zeros(res.learner.policy.mean_net.parameter_count(),
                                     cfg.gpu.learning_rate);
  Rng rng(mix_seed(cfg.seed, 0x75706474ULL));
  const EnvFactory factory = quad_env_factory(cfg.env, cfg.rollout_steps);
  OptimizationState state;
  int round = 0;

  auto checkpoint = [&] {
    if (hooks.checkpoint_path.empty()) return;
    std::ofstream f(hooks.checkpoint_path);
    if (!f) throw IoError("cannot write checkpoint " + hooks.checkpoint_path);
    save_checkpoint({res.learner, res.gpu_opt, state.iteration, state.env_steps, round, rng.state()},
                    f);
  };
  IterationHooks it_hooks;
  it_hooks.on_record = [&](const TrainRecord& r) {
    res.records.push_back(r);
    if (hooks.on_record) hooks.on_record(r);
  };

  const auto schedule = gcpo_schedule(cfg);
  ExpertDataset dataset;
  // s_max = 0 turns the supervised phase off entirely, spread shrink included
  const bool guided =
      cfg.mode != TrainMode::kCppoOnly && cfg.supervised_budget > 0 && !schedule.empty();
  if (guided) {
    dataset = generate_dataset(cfg.env, cfg.command_lo, cfg.command_hi, cfg.dataset_episodes,
                               cfg.dataset_steps, mix_seed(cfg.seed, 0x64617461ULL),
                               cfg.dataset_exec_noise, cfg.expert_clearance);
    res.discarded_expert_episodes = dataset.meta.discarded;
  }

  try {
    for (; round < static_cast<int>(schedule.size()); ++round) {
      const RoundBudget& b = schedule[round];
      if (guided) {
        guided_policy_update(res.learner.policy, dataset, b.supervised, cfg.gpu_passes, cfg.gpu,
                             res.gpu_opt, rng);
        TrainRecord r;
        r.iteration = state.iteration++;
        r.env_steps = state.env_steps;
        r.phase = Phase::kGpu;
        r.alpha = b.alpha;
        const double nan = std::nan("");
        r.mean_reward = r.rho_violation = r.kappa_violation = r.eta_violation = nan;
        r.cost_returns = Vector::Constant(cfg.env.kappa_count(), nan);
        r.kappa_violations = r.cost_returns;
        r.mean_kl = nan;
        r.entropy = entropy(res.learner.policy);
        it_hooks.on_record(r);
      }
      policy_optimization(res.learner, factory, cfg, b.rl, false, b.alpha, state, rng, it_hooks);
      checkpoint();
    }
    for (int h = 0; h < cfg.hcppo_rounds; ++h, ++round) {
      policy_optimization(res.learner, factory, cfg, cfg.hcppo_budget, true, 0.0, state, rng,
                          it_hooks);
      checkpoint();
    }
  } catch (const PolicyDiverged&) {
    checkpoint();
    throw;
  }
  res.env_steps = state.env_steps;
  return res;
}

namespace {

using ActionFn = std::function<Vector(const PlanarQuadEnv&, const Vector& obs)>;

EvalSummary run_eval(const EnvConfig& env_cfg, const EvalSettings& s, const ActionFn& act,
                     std::ostream* trajectory) {
  if (s.episodes <= 0) throw InvalidInput("evaluation needs at least one episode");
  if (s.steps <= 0) throw InvalidInput("evaluation episode length must be positive");
  EnvConfig cfg = env_cfg;
  cfg.params.max_steps = std::max(cfg.params.max_steps, s.steps);
  PlanarQuadEnv env(cfg);
  Rng rng(s.seed);
  EvalSummary out;
  for (const auto& spec : cfg.constraints)
    if (spec.tier == Tier::kKappa) out.kappa_ids.push_back(spec.id);
  out.kappa_violations.assign(out.kappa_ids.size(), 0.0);
  std::map<double, std::pair<double, long>> bins;
  double sq_err = 0.0, vel_sum = 0.0;
  long rho = 0, kappa = 0;
  for (int ep = 0; ep < s.episodes; ++ep) {
    Vector obs = env.reset(s.command, rng);
    ++out.episodes;
    for (int t = 0; t < s.steps; ++t) {
      const Vector a = act(env, obs);
      if (!a.allFinite()) throw PolicyDiverged("policy produced a non-finite action");
      const StepResult r = env.step(a, rng);
      const EnvSnapshot& snap = env.snapshot();
      if (trajectory) write_trajectory_record(*trajectory, snap, r);
      ++out.steps;
      const double v = snap.base_vel.x();
      sq_err += (v - s.command) * (v - s.command);
      vel_sum += v;
      rho += std::any_of(r.rho.entries.begin(), r.rho.entries.end(),
                         [](const auto& e) { return e.violated; });
      kappa += r.kappa_violated;
      for (std::size_t k = 0; k < r.kappa.entries.size(); ++k)
        out.kappa_violations[k] += r.kappa.entries[k].violated;
      const double centre = 0.1 * std::round(v / 0.1) + 0.0;  // + 0.0 folds -0 into 0
      auto& bin = bins[centre];
      bin.first += snap.torque.cwiseAbs().mean();
      ++bin.second;
      obs = r.obs;
      if (r.terminated) {
        ++out.eta_terminations;
        break;
      }
      if (r.truncated) break;
    }
  }
  const double n = static_cast<double>(out.steps);
  out.rms_tracking_error = std::sqrt(sq_err / n);
  out.mean_velocity = vel_sum / n;
  out.rho_violation = static_cast<double>(rho) / n;
  out.kappa_violation = static_cast<double>(kappa) / n;
  out.eta_violation = static_cast<double>(out.eta_terminations) / n;
  for (auto& f : out.kappa_violations) f /= n;
  for (const auto& [centre, acc] : bins) out.torque_by_velocity[centre] = acc.first / acc.second;
  return out;
}

}  // namespace

EvalSummary evaluate_policy(const PolicyParams& policy, const EnvConfig& env,
                            const EvalSettings& s, std::ostream* trajectory) {
  if (policy.obs_dim() != kObsDim || policy.act_dim() != kActDim)
    throw InvalidInput("policy dimensions (" + std::to_string(policy.obs_dim()) + " -> " +
                       std::to_string(policy.act_dim()) + ") do not match the environment (" +
                       std::to_string(kObsDim) + " -> " + std::to_string(kActDim) + ")");
  return run_eval(env, s, [&](const PlanarQuadEnv&, const Vector& obs) { return policy.mean(obs); },
                  trajectory);
}

EvalSummary evaluate_expert(const EnvConfig& env, const EvalSettings& s, double clearance) {
  return run_eval(
      env, s,
      [&](const PlanarQuadEnv& e, const Vector&) {
        const ExpertConfig ec = ExpertConfig::from_env(e.episode_params(), clearance);
        return expert_controller(e.snapshot(), s.command, ec).action;
      },
      nullptr);
}

double expert_mean_reward(const TrainerConfig& cfg, int episodes, std::uint64_t seed) {
  if (episodes <= 0) throw InvalidInput("expert reference needs at least one episode");
  EnvConfig env_cfg = cfg.env;
  env_cfg.params.max_steps = std::max(env_cfg.params.max_steps, cfg.rollout_steps);
  PlanarQuadEnv env(env_cfg);
  Rng rng(seed);
  double total = 0.0;
  long steps = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    const double command =
        cfg.command_hi > cfg.command_lo ? rng.uniform(cfg.command_lo, cfg.command_hi) : cfg.command_lo;
    env.reset(command, rng);
    const ExpertConfig ec = ExpertConfig::from_env(env.episode_params(), cfg.expert_clearance);
    for (int t = 0; t < cfg.rollout_steps; ++t) {
      const StepResult r = env.step(expert_controller(env.snapshot(), command, ec).action, rng);
      total += r.reward;
      ++steps;
      if (r.terminated || r.truncated) break;
    }
  }
  return total / static_cast<double>(steps);
}

}  // namespace gcpo
