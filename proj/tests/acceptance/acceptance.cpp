// Acceptance run: one PASS/FAIL line per criterion. The comparative criteria
// train full runs through the CLI commands and take most of an hour on one
// core. Usage: acceptance [--work DIR] [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gcpo/commands.hpp"
#include "gcpo/constraints.hpp"
#include "gcpo/cppo.hpp"
#include "gcpo/metrics.hpp"
#include "gcpo/nn.hpp"
#include "gcpo/returns.hpp"
#include "support/bandit.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace gcpo;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

fs::path g_work;
const fs::path kConfigs = GCPO_CONFIG_DIR;

int quiet_command(const std::string& name, const CommandOptions& opt) {
  std::ostringstream out, err;
  const int rc = run_command(name, opt, out, err);
  if (rc != kExitOk) std::cerr << name << " failed (" << rc << "): " << err.str();
  return rc;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0, worst_abs = 0.0;
  for (int k = 0; k < 10; ++k) {
    Rng rng(mix_seed(0xacce, k));
    nn::DenseNet net = test::random_net(rng);
    const Vector x = test::random_vector(rng, net.input_size());
    const Vector go = test::random_vector(rng, net.output_size());
    const auto g = net.backward(x, go);
    auto by_params = [&](const Vector& p) {
      nn::DenseNet n2 = net;
      n2.parameters() = p;
      return n2.forward(x).dot(go);
    };
    auto by_input = [&](const Vector& xi) { return net.forward(xi).dot(go); };
    const Vector fd = test::finite_difference(by_params, net.parameters());
    const Vector fdx = test::finite_difference(by_input, x);
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      worst = std::max(worst, test::relative_error(g.parameters[i], fd[i]));
      worst_abs = std::max(worst_abs, std::abs(g.parameters[i] - fd[i]));
    }
    for (Eigen::Index i = 0; i < fdx.size(); ++i) {
      worst = std::max(worst, test::relative_error(g.input(i, 0), fdx[i]));
      worst_abs = std::max(worst_abs, std::abs(g.input(i, 0) - fdx[i]));
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-4 && t < 10.0,
          "max relative error " + fmt(worst) + " (<= 1e-4, absolute " + fmt(worst_abs, 2) + "), " + fmt(t, 3) + " s (< 10 s)"};
}

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(0x0ac1e);
  double worst = 0.0;
  int terminal = 0;
  for (int k = 0; k < 100; ++k) {
    const double gamma = rng.uniform(0.0, 0.999);
    const double lambda = rng.uniform(0.0, 1.0);
    const auto e = test::random_episode(rng, 1);
    terminal += e.terminal;
    const Vector g = discounted_returns(e.rewards, gamma, e.values.back());
    const auto g_ref = test::returns_oracle(e.rewards, gamma, e.values.back());
    const Vector a = gae(e.rewards, e.values, gamma, lambda);
    const auto a_ref = test::gae_oracle(e.rewards, e.values, gamma, lambda);
    for (std::size_t t = 0; t < e.rewards.size(); ++t)
      worst = std::max({worst, std::abs(g[t] - g_ref[t]), std::abs(a[t] - a_ref[t])});
    std::vector<std::vector<double>> costs(3);
    for (auto& c : costs) c = test::random_values(rng, test::uniform_int(rng, 1, 50), 0.0, 2.0);
    worst = std::max(worst, std::abs(cost_return_estimate(costs, gamma) -
                                     test::cost_return_oracle(costs, gamma)));
  }
  const double t = seconds_since(t0);
  const bool mixed = terminal > 0 && terminal < 100;
  return {worst <= 1e-10 && mixed && t < 10.0,
          "max abs error " + fmt(worst) + " (<= 1e-10), " + std::to_string(terminal) +
              "/100 terminal, " + fmt(t, 3) + " s (< 10 s)"};
}

Outcome objective_values() {
  const std::vector<double> clip{0.5, 1.5, 1.0}, j{0.3}, z{2.0};
  const double c1 = clip_term(1.3, 1.0, 0.2);
  const double c2 = clip_term(0.5, -1.0, 0.2);
  const double l = cclip_loss(clip, j, z);
  const double tl = total_loss(1.0, 0.5, 2.0, 0.5, 0.01);
  const double k0 = logistic_kernel(0.0);
  const bool pass = c1 == 1.2 && c2 == -0.8 && l == 0.4 && tl == 0.77 && k0 == 0.25;
  return {pass, "clip " + fmt(c1, 17) + ", " + fmt(c2, 17) + "; cclip " + fmt(l, 17) +
                    "; total " + fmt(tl, 17) + "; K(0) " + fmt(k0, 17)};
}

Outcome bandit_optimum() {
  const auto t0 = Clock::now();
  int hits = 0;
  std::string ps;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Learner l = test::train_bandit(seed, 50000, true);
    const double p = test::costly_arm_probability(l.policy);
    hits += std::abs(p - 0.2) <= 0.1;
    ps += (ps.empty() ? "" : " ") + fmt(p, 3);
  }
  const double t = seconds_since(t0);
  return {hits >= 4 && t < 120.0, "P(costly) per seed " + ps + ", " + std::to_string(hits) +
                                      "/5 within 0.1 of 0.2, " + fmt(t, 3) + " s (< 120 s)"};
}

std::vector<StepRecord> flagged(int n, const std::vector<int>& kappa, int eta) {
  std::vector<StepRecord> v(n);
  for (int t = 0; t < n; ++t) {
    v[t].obs = Vector::Constant(1, t);
    v[t].reward = 0.1 * t;
  }
  for (int t : kappa) v[t].kappa_violated = true;
  if (eta >= 0) v[eta].eta_triggered = true;
  return v;
}

bool same_records(const std::vector<StepRecord>& a, const std::vector<StepRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t t = 0; t < a.size(); ++t)
    if (a[t].obs != b[t].obs || a[t].reward != b[t].reward || a[t].terminal != b[t].terminal)
      return false;
  return true;
}

Outcome reformat_contract() {
  const auto t0 = Clock::now();
  bool examples = true;
  {
    const auto raw = flagged(12, {}, -1);
    examples &= same_records(reformat_episode(raw, -1.0), raw);
  }
  {
    const auto raw = flagged(10, {5, 6, 7, 8, 9}, 9);
    const auto out = reformat_episode(raw, -1.0);
    examples &= out.size() == 6 && out[5].terminal && out[5].reward == raw[5].reward - 1.0;
    for (int t = 0; t < 5 && examples; ++t)
      examples &= out[t].reward == raw[t].reward && !out[t].terminal;
  }
  {
    const auto raw = flagged(10, {}, 7);
    const auto out = reformat_episode(raw, -1.0);
    examples &= out.size() == 7 && out[6].terminal && out[6].reward == raw[6].reward - 1.0;
  }

  Rng rng(0xf022);
  int bad = 0, cut = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto raw = test::random_violation_episode(rng);
    const double penalty = -rng.uniform(0.1, 5.0);
    const auto out = reformat_episode(raw, penalty);
    std::size_t t_eta = raw.size();
    for (std::size_t t = 0; t < raw.size(); ++t)
      if (raw[t].eta_triggered) {
        t_eta = t;
        break;
      }
    bool ok = !out.empty() && out.size() <= raw.size();
    if (ok && t_eta == raw.size()) {
      ok = same_records(out, raw);
    } else if (ok) {
      ++cut;
      const std::size_t kept = out.size();
      if (t_eta > 0) ok &= kept <= t_eta;
      for (const auto& r : out) ok &= !r.eta_triggered;
      for (std::size_t t = 0; t < kept; ++t) {
        ok &= out[t].obs[0] == raw[t].obs[0] && out[t].terminal == (t + 1 == kept);
        if (t + 1 < kept) ok &= out[t].reward == raw[t].reward;
      }
      ok &= out.back().reward == raw[kept - 1].reward + penalty;
      for (std::size_t t = kept; t < t_eta; ++t) ok &= raw[t].kappa_violated;
      // kept + dropped explored steps + the trigger and beyond
      ok &= kept + (t_eta - std::min(kept, t_eta)) + (raw.size() - t_eta) ==
            raw.size() + (t_eta == 0 ? 1 : 0);
    }
    bad += !ok;
  }
  const double t = seconds_since(t0);
  return {examples && bad == 0 && cut > 0 && t < 5.0,
          std::string("examples ") + (examples ? "exact" : "WRONG") + ", fuzz " +
              std::to_string(1000 - bad) + "/1000 patterns hold (" + std::to_string(cut) +
              " cut), " + fmt(t, 3) + " s (< 5 s)"};
}

// Step-weighted share of training steps violating `id` over a run's RL rows.
struct RunViolation {
  double fraction = 0.0;
  long steps = 0;
};

RunViolation training_violation(const fs::path& metrics, const std::string& id) {
  std::ifstream f(metrics);
  std::vector<TrainRecord> rows;
  const MetricsSchema schema = MetricsSchema::read(f, rows);
  const auto& ids = schema.kappa_ids();
  const auto k = std::find(ids.begin(), ids.end(), id) - ids.begin();
  if (k == Eigen::Index(ids.size())) throw std::runtime_error("no column for " + id);
  long prev = 0;
  double weighted = 0.0;
  RunViolation v;
  for (const auto& r : rows) {
    if (r.phase == Phase::kGpu) continue;
    const long n = r.env_steps - prev;
    prev = r.env_steps;
    v.steps += n;
    weighted += double(n) * r.kappa_violations[k];
  }
  v.fraction = v.steps > 0 ? weighted / double(v.steps) : 0.0;
  return v;
}

Outcome constrained_vs_unconstrained() {
  const auto t0 = Clock::now();
  CommandOptions opt;
  opt.config = (kConfigs / "acceptance" / "constrained_vs_unconstrained.ini").string();
  opt.out = (g_work / "constrained_vs_unconstrained").string();
  opt.modes = {"gcpo", "unconstrained"};
  opt.seeds = {1, 2, 3, 4, 5};
  if (quiet_command("ablate", opt) != kExitOk) return {false, "ablate run failed"};
  int hits = 0;
  bool budgets = true;
  std::string detail;
  for (auto seed : opt.seeds) {
    const fs::path dir = *opt.out;
    const auto c = training_violation(dir / ("gcpo_s" + std::to_string(seed)) / "metrics.csv",
                                      "foot_region");
    const auto u = training_violation(
        dir / ("unconstrained_s" + std::to_string(seed)) / "metrics.csv", "foot_region");
    budgets &= c.steps == u.steps && c.steps <= 2000000;
    hits += c.fraction <= u.fraction / 5.0;
    detail += " s" + std::to_string(seed) + " " + fmt(c.fraction, 3) + "/" + fmt(u.fraction, 3);
    if (seed == opt.seeds.front()) detail = " at " + std::to_string(c.steps) + " steps;" + detail;
  }
  const double t = seconds_since(t0);
  return {hits >= 4 && budgets && t < 1800.0,
          "foot-region fraction constrained/unconstrained" + detail + ", " + std::to_string(hits) +
              "/5 at <= 1/5, " + fmt(t / 60.0, 3) + " min (< 30 min)"};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome gpu_benefit() {
  const auto t0 = Clock::now();
  CommandOptions opt;
  opt.config = (kConfigs / "acceptance" / "gpu_benefit.ini").string();
  opt.out = (g_work / "gpu_benefit").string();
  opt.modes = {"gcpo", "cppo_only"};
  opt.seeds = {1, 2, 3, 4, 5};
  if (quiet_command("ablate", opt) != kExitOk) return {false, "ablate run failed"};
  std::ifstream table(fs::path(*opt.out) / "ablation.csv");
  std::string line;
  std::getline(table, line);
  std::map<std::string, std::vector<double>> steps;
  std::string threshold;
  while (std::getline(table, line)) {
    std::istringstream ls(line);
    std::string mode, seed, hit;
    std::getline(ls, mode, ',');
    std::getline(ls, seed, ',');
    std::getline(ls, hit, ',');
    std::getline(ls, threshold, ',');
    steps[mode].push_back(hit == "none" ? std::numeric_limits<double>::infinity() : std::stod(hit));
  }
  const double g = median(steps["gcpo"]), c = median(steps["cppo_only"]);
  const double t = seconds_since(t0);
  const bool pass = steps["gcpo"].size() == 5 && steps["cppo_only"].size() == 5 &&
                    std::isfinite(g) && g <= 0.7 * c && t < 2700.0;
  return {pass, "median steps to reward " + threshold + ": gcpo " + fmt(g, 7) + ", cppo_only " +
                    fmt(c, 7) + ", ratio " + fmt(g / c, 3) + " (<= 0.7), " + fmt(t / 60.0, 3) +
                    " min (< 45 min)"};
}

// Fully trained gcpo policy: the seed-1 run of the guided-update comparison,
// trained here when that run is not on disk.
std::string trained_policy() {
  const fs::path p = g_work / "gpu_benefit" / "gcpo_s1" / "policy.txt";
  if (fs::exists(p)) return p.string();
  CommandOptions opt;
  opt.config = (kConfigs / "acceptance" / "gpu_benefit.ini").string();
  opt.out = (g_work / "trained_policy").string();
  opt.seed = 1;
  if (quiet_command("train", opt) != kExitOk) return {};
  return (g_work / "trained_policy" / "policy.txt").string();
}

nlohmann::json evaluate(const std::string& policy, const std::string& tag, int episodes,
                        const std::vector<std::string>& overrides = {}) {
  CommandOptions opt;
  opt.config = (kConfigs / "acceptance" / "gpu_benefit.ini").string();
  opt.out = (g_work / ("eval_" + tag)).string();
  opt.policy = policy;
  opt.episodes = episodes;
  opt.overrides = overrides;
  if (quiet_command("eval", opt) != kExitOk) return {};
  return read_json(fs::path(*opt.out) / "eval_summary.json");
}

Outcome violation_rates() {
  const std::string policy = trained_policy();
  if (policy.empty()) return {false, "training failed"};
  const auto t0 = Clock::now();
  const auto s = evaluate(policy, "violation_rates", 100);
  if (s.is_null()) return {false, "eval failed"};
  const double js = s["violation_per_kappa"]["joint_speed"].get<double>();
  const double ja = s["violation_per_kappa"]["joint_acc"].get<double>();
  const long steps = s["steps"].get<long>();
  const double t = seconds_since(t0);
  return {steps >= 100000 && js <= 0.005 && ja <= 0.005 && t < 600.0,
          "over " + std::to_string(steps) + " steps: joint speed " + fmt(js) + ", joint acc " +
              fmt(ja) + " (each <= 0.005), " + fmt(t, 3) + " s (< 10 min)"};
}

Outcome robustness() {
  const std::string policy = trained_policy();
  if (policy.empty()) return {false, "training failed"};
  const auto t0 = Clock::now();
  const auto nominal = evaluate(policy, "nominal", 20);
  const auto dt = evaluate(policy, "step_time", 20, {"env.randomize_step_time=true"});
  const auto g = evaluate(policy, "gravity", 20, {"env.randomize_gravity=true"});
  if (nominal.is_null() || dt.is_null() || g.is_null()) return {false, "eval failed"};
  const double e0 = nominal["rms_tracking_error"].get<double>();
  const double r_dt = dt["rms_tracking_error"].get<double>() / e0;
  const double r_g = g["rms_tracking_error"].get<double>() / e0;
  const double t = seconds_since(t0);
  return {r_dt <= 2.0 && r_g <= 2.0 && t < 600.0,
          "nominal rms " + fmt(e0) + " m/s; ratio with dt resampling " + fmt(r_dt, 3) +
              ", with gravity scaling " + fmt(r_g, 3) + " (each <= 2), " + fmt(t, 3) +
              " s (< 10 min)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome determinism() {
  std::string logs[2];
  for (int k = 0; k < 2; ++k) {
    CommandOptions opt;
    opt.config = (kConfigs / "smoke.ini").string();
    opt.out = (g_work / ("determinism_" + std::to_string(k))).string();
    if (quiet_command("train", opt) != kExitOk) return {false, "train failed"};
    logs[k] = slurp(fs::path(*opt.out) / "metrics.csv");
  }
  return {!logs[0].empty() && logs[0] == logs[1],
          "two runs of the smoke config: metrics logs of " + std::to_string(logs[0].size()) +
              " and " + std::to_string(logs[1].size()) + " bytes, " +
              (logs[0] == logs[1] ? "byte-identical" : "DIFFERENT")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  g_work = fs::current_path() / "acceptance_runs";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::istringstream ls(argv[++i]);
      std::string item;
      while (std::getline(ls, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria{
      {1, "gradient correctness", gradient_correctness},
      {2, "return and advantage oracles", oracle_equivalence},
      {3, "objective unit values", objective_values},
      {4, "constrained bandit optimum", bandit_optimum},
      {5, "episode reformatting", reformat_contract},
      {6, "constrained vs unconstrained exploration", constrained_vs_unconstrained},
      {7, "guided update sample efficiency", gpu_benefit},
      {8, "hard-constraint violation rates", violation_rates},
      {9, "robustness to step time and gravity", robustness},
      {10, "determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " C" << c.id << " " << c.name << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
