#include "gcpo/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "gcpo/errors.hpp"

namespace gcpo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw InvalidInput("'" + s + "' is not a number");
  return v;
}

template <typename I>
I to_integer(const std::string& s) {
  I v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw InvalidInput("'" + s + "' is not an integer");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw InvalidInput("'" + s + "' is not a boolean (true/false)");
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

struct Key {
  std::string name;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

Key real(std::string name, double& x) {
  return {std::move(name), [&x](const std::string& s) { x = to_double(s); },
          [&x] { return fmt(x); }};
}

template <typename I>
Key integer(std::string name, I& x) {
  return {std::move(name), [&x](const std::string& s) { x = to_integer<I>(s); },
          [&x] { return std::to_string(x); }};
}

Key boolean(std::string name, bool& x) {
  return {std::move(name), [&x](const std::string& s) { x = to_bool(s); },
          [&x] { return std::string(x ? "true" : "false"); }};
}

Key vec(std::string name, Vector& x, Eigen::Index size) {
  return {std::move(name),
          [&x, size](const std::string& s) {
            const auto items = split_list(s);
            if (static_cast<Eigen::Index>(items.size()) != size)
              throw InvalidInput("expected " + std::to_string(size) + " comma-separated values, got " +
                                 std::to_string(items.size()));
            Vector v(size);
            for (Eigen::Index i = 0; i < size; ++i) v[i] = to_double(items[i]);
            x = v;
          },
          [&x] { return fmt(x); }};
}

template <int N>
Key fixed_vec(std::string name, Eigen::Matrix<double, N, 1>& x) {
  return {std::move(name),
          [&x](const std::string& s) {
            const auto items = split_list(s);
            if (items.size() != N)
              throw InvalidInput("expected " + std::to_string(N) + " comma-separated values");
            for (int i = 0; i < N; ++i) x[i] = to_double(items[i]);
          },
          [&x] { return fmt(Vector(x)); }};
}

std::vector<Key> keys(RunConfig& c) {
  TrainerConfig& t = c.trainer;
  EnvParams& p = t.env.params;
  RewardWeights& w = t.env.reward;
  ObjectiveConfig& o = t.objective;
  return {
      integer("run.seed", t.seed),
      {"run.mode", [&t](const std::string& s) { t.mode = train_mode_from_string(s); },
       [&t] { return to_string(t.mode); }},
      {"run.out", [&c](const std::string& s) { c.out_dir = s; }, [&c] { return c.out_dir; }},
      integer("run.workers", t.workers),

      real("schedule.decay_rate", t.decay_rate),
      integer("schedule.supervised_budget", t.supervised_budget),
      integer("schedule.acppo_budget", t.acppo_budget),
      integer("schedule.hcppo_budget", t.hcppo_budget),
      integer("schedule.rollout_steps", t.rollout_steps),
      integer("schedule.gpu_passes", t.gpu_passes),
      integer("schedule.acppo_rounds", t.acppo_rounds),
      integer("schedule.hcppo_rounds", t.hcppo_rounds),
      integer("schedule.batch_steps", t.batch_steps),

      real("task.command_lo", t.command_lo),
      real("task.command_hi", t.command_hi),

      real("cppo.clip_epsilon", o.clip_epsilon),
      real("cppo.value_coef", o.value_coef),
      real("cppo.entropy_coef", o.entropy_coef),
      real("cppo.kl_bound", o.kl_bound),
      real("cppo.gamma", o.gamma),
      real("cppo.gae_lambda", t.gae_lambda),
      integer("cppo.epochs", o.epochs),
      integer("cppo.minibatch_size", o.minibatch_size),
      integer("cppo.kl_sample", o.kl_sample),
      integer("cppo.max_halvings", o.max_halvings),
      boolean("cppo.normalize_advantages", o.normalize_advantages),
      real("cppo.zeta", t.zeta_default),
      real("cppo.policy_lr", t.policy_lr),
      real("cppo.value_lr", t.value_lr),

      integer("network.policy_hidden", t.policy_hidden),
      integer("network.value_hidden", t.value_hidden),
      real("network.initial_spread", t.initial_spread),
      real("network.cost_value_scale", t.cost_value_scale),

      integer("gpu.minibatch", t.gpu.minibatch),
      real("gpu.learning_rate", t.gpu.learning_rate),
      real("gpu.entropy_factor", t.gpu.entropy_factor),

      integer("expert.dataset_episodes", t.dataset_episodes),
      integer("expert.dataset_steps", t.dataset_steps),
      real("expert.exec_noise", t.dataset_exec_noise),
      real("expert.clearance", t.expert_clearance),

      real("env.link1", p.link1),
      real("env.link2", p.link2),
      real("env.hip_offset", p.hip_offset),
      real("env.nominal_height", p.nominal_height),
      real("env.gravity", p.gravity),
      real("env.body_mass", p.body_mass),
      real("env.joint_inertia", p.joint_inertia),
      real("env.kp", p.kp),
      real("env.kd", p.kd),
      real("env.torque_limit", p.torque_limit),
      real("env.dt", p.dt),
      real("env.substep", p.substep),
      real("env.contact_tolerance", p.contact_tolerance),
      real("env.stance_blend", p.stance_blend),
      real("env.foot_half_length", p.foot_half_length),
      real("env.accel_filter_time", p.accel_filter_time),
      real("env.reset_joint_noise", p.reset_joint_noise),
      real("env.noise_scale", p.noise_scale),
      integer("env.max_steps", p.max_steps),
      real("env.torque_scale", p.torque_scale),
      fixed_vec<4>("env.mass_scale", p.mass_scale),
      fixed_vec<4>("env.size_scale", p.size_scale),
      real("env.damping", p.damping),
      boolean("env.randomize_gravity", p.randomize.gravity),
      boolean("env.randomize_torque", p.randomize.torque),
      boolean("env.randomize_mass", p.randomize.mass),
      boolean("env.randomize_size", p.randomize.size),
      boolean("env.randomize_damping", p.randomize.damping),
      boolean("env.randomize_step_time", p.randomize.step_time),
      real("env.recovery_bonus", t.env.recovery_bonus),
      real("env.terminal_penalty", t.env.terminal_penalty),

      real("reward.linear_velocity", w.linear_velocity),
      real("reward.angular_velocity", w.angular_velocity),
      real("reward.torque", w.torque),
      real("reward.foot_acceleration", w.foot_acceleration),
      real("reward.foot_slip", w.foot_slip),
      real("reward.smoothness", w.smoothness),
      real("reward.orientation", w.orientation),
      real("reward.velocity_kernel_scale", w.velocity_kernel_scale),
      real("reward.penalty_scale", w.penalty_scale),
      real("reward.penalty_ramp", t.penalty_ramp),

      vec("noise.observation", t.env.noise.observation, kObsDim),
      vec("noise.action", t.env.noise.action, kActDim),

      integer("eval.episodes", c.eval.episodes),
      integer("eval.steps", c.eval.steps),
      real("eval.command", c.eval.command),
      integer("eval.seed", c.eval.seed),

      {"ablate.modes",
       [&c](const std::string& s) {
         c.ablate_modes = split_list(s);
         for (const auto& m : c.ablate_modes) train_mode_from_string(m);
       },
       [&c] {
         std::string s;
         for (const auto& m : c.ablate_modes) s += (s.empty() ? "" : ", ") + m;
         return s;
       }},
      {"ablate.seeds",
       [&c](const std::string& s) {
         c.ablate_seeds.clear();
         for (const auto& item : split_list(s)) c.ablate_seeds.push_back(to_integer<std::uint64_t>(item));
       },
       [&c] {
         std::string s;
         for (auto v : c.ablate_seeds) s += (s.empty() ? "" : ", ") + std::to_string(v);
         return s;
       }},
      real("ablate.threshold_fraction", c.threshold_fraction),
  };
}

const std::vector<std::string> kRequired{"run.seed", "run.mode"};

// Sets one field of a constraint spec (or its zeta, kept in the trainer map).
void set_constraint_field(RunConfig& c, ConstraintSpec& spec, const std::string& field,
                          const std::string& value) {
  if (field == "term") spec.term = cost_term_from_string(value);
  else if (field == "tier") spec.tier = tier_from_string(value);
  else if (field == "limit") spec.limit = to_double(value);
  else if (field == "weight") spec.weight = to_double(value);
  else if (field == "d") spec.d_bound = to_double(value);
  else if (field == "hard") spec.hard = to_bool(value);
  else if (field == "zeta") c.trainer.zeta[spec.id] = to_double(value);
  else throw InvalidInput("unknown constraint field '" + field + "'");
}

bool set_key(RunConfig& c, const std::string& name, const std::string& value) {
  for (auto& k : keys(c))
    if (k.name == name) {
      k.set(value);
      return true;
    }
  return false;
}

void validate_run(const RunConfig& c) {
  if (c.out_dir.empty()) throw InvalidInput("run.out must not be empty");
  if (c.eval.episodes <= 0) throw InvalidInput("eval.episodes must be positive");
  if (c.eval.steps <= 0) throw InvalidInput("eval.steps must be positive");
  if (c.ablate_modes.empty() || c.ablate_seeds.empty())
    throw InvalidInput("ablate.modes and ablate.seeds must not be empty");
  if (!(c.threshold_fraction > 0.0 && c.threshold_fraction <= 1.0))
    throw InvalidInput("ablate.threshold_fraction must lie in (0, 1]");
  c.trainer.validate();
}

}  // namespace

void RunConfig::validate() const {
  try {
    validate_run(*this);
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  try {
    if (key.rfind("constraint.", 0) == 0) {
      const auto dot = key.rfind('.');
      const std::string id = key.substr(11, dot - 11);
      auto& specs = cfg.trainer.env.constraints;
      auto it = std::find_if(specs.begin(), specs.end(), [&](const auto& s) { return s.id == id; });
      if (dot <= 11 || it == specs.end()) throw InvalidInput("unknown constraint '" + id + "'");
      set_constraint_field(cfg, *it, key.substr(dot + 1), value);
      return;
    }
    if (!set_key(cfg, key, value)) throw InvalidInput("unknown key '" + key + "'");
  } catch (const InvalidInput& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
}

RunConfig parse_config(std::istream& is, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string section;
  int current = -1;  // index of the constraint section being read
  bool custom_constraints = false;
  struct Pending {
    int line = 0;
    std::set<std::string> fields;
  };
  std::map<std::string, Pending> pending;

  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      current = -1;
      if (section.rfind("constraint.", 0) == 0) {
        const std::string id = section.substr(11);
        if (id.empty()) throw ConfigError("constraint section without an id", line_no);
        if (!custom_constraints) {
          cfg.trainer.env.constraints.clear();
          custom_constraints = true;
        }
        if (pending.count(id)) throw ConfigError("constraint '" + id + "' defined twice", line_no);
        pending[id].line = line_no;
        ConstraintSpec spec;
        spec.id = id;
        cfg.trainer.env.constraints.push_back(spec);
        current = static_cast<int>(cfg.trainer.env.constraints.size()) - 1;
      } else {
        bool known = false;
        for (const auto& k : keys(cfg))
          if (k.name.rfind(section + ".", 0) == 0) known = true;
        if (!known) throw ConfigError("unknown section [" + section + "]", line_no);
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' outside any section", line_no);
    try {
      if (current >= 0) {
        auto& spec = cfg.trainer.env.constraints[current];
        if (!pending[spec.id].fields.insert(key).second)
          throw InvalidInput("field '" + key + "' given twice");
        set_constraint_field(cfg, spec, key, value);
        continue;
      }
      const std::string name = section + "." + key;
      if (!seen.insert(name).second) throw InvalidInput("key '" + name + "' given twice");
      if (!set_key(cfg, name, value)) throw InvalidInput("unknown key '" + name + "'");
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
  for (const auto& [id, p] : pending)
    for (const char* f : {"term", "tier", "limit"})
      if (!p.fields.count(f))
        throw ConfigError("constraint '" + id + "' is missing required field '" + f + "'", p.line);

  for (const auto& o : overrides) {
    apply_override(cfg, o);
    seen.insert(trim(o.substr(0, o.find('='))));
  }
  for (const auto& k : kRequired)
    if (!seen.count(k)) throw ConfigError("missing required key '" + k + "'");
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  try {
    return parse_config(f, overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string resolved_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::ostringstream os;
  std::string section;
  for (const auto& k : keys(copy)) {
    const auto dot = k.name.find('.');
    const std::string s = k.name.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    os << k.name.substr(dot + 1) << " = " << k.get() << '\n';
  }
  for (const auto& spec : cfg.trainer.env.constraints) {
    os << "\n[constraint." << spec.id << "]\nterm = " << to_string(spec.term)
       << "\ntier = " << to_string(spec.tier) << "\nlimit = " << fmt(spec.limit)
       << "\nweight = " << fmt(spec.weight) << '\n';
    if (spec.d_bound) os << "d = " << fmt(*spec.d_bound) << '\n';
    if (spec.tier == Tier::kKappa) os << "hard = " << (spec.hard ? "true" : "false") << '\n';
    auto z = cfg.trainer.zeta.find(spec.id);
    if (z != cfg.trainer.zeta.end()) os << "zeta = " << fmt(z->second) << '\n';
  }
  return os.str();
}

}  // namespace gcpo
