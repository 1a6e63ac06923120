#include "gcpo/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gcpo/config.hpp"
#include "gcpo/errors.hpp"

namespace gcpo {

namespace fs = std::filesystem;

namespace {

RunConfig resolve(const CommandOptions& opt) {
  if (opt.config.empty()) throw ConfigError("--config is required");
  std::vector<std::string> overrides = opt.overrides;
  if (opt.seed) overrides.push_back("run.seed=" + std::to_string(*opt.seed));
  if (opt.out) overrides.push_back("run.out=" + *opt.out);
  if (opt.workers) overrides.push_back("run.workers=" + std::to_string(*opt.workers));
  return load_config(opt.config, overrides);
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  return f;
}

void write_text(const fs::path& p, const std::string& text) {
  auto f = open_out(p);
  f << text;
  if (!f) throw IoError("write failed: " + p.string());
}

// Accepts either a bare policy file or a checkpoint.
PolicyParams read_policy(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open policy '" + path + "'");
  std::string tag;
  f >> tag;
  f.seekg(0);
  try {
    if (tag == "gcpo_checkpoint") return load_checkpoint(f).learner.policy;
    return load_policy(f);
  } catch (const InvalidInput& e) {
    throw IoError(path + ": " + e.what());
  }
}

TrainResult train_into(const RunConfig& cfg, const fs::path& dir) {
  write_text(dir / "resolved.ini", resolved_config(cfg));
  const MetricsSchema schema(cfg.trainer.kappa_ids());
  auto metrics = open_out(dir / "metrics.csv");
  metrics << schema.header() << '\n';
  TrainHooks hooks;
  hooks.checkpoint_path = (dir / "checkpoint.txt").string();
  hooks.on_record = [&](const TrainRecord& r) {
    metrics << schema.format(r) << '\n';
    metrics.flush();
  };
  TrainResult res = gcpo_train(cfg.trainer, hooks);
  auto pf = open_out(dir / "policy.txt");
  save_policy(res.learner.policy, pf);
  auto vf = open_out(dir / "value.txt");
  save_value(res.learner.value, vf);
  if (!metrics || !pf || !vf) throw IoError("write failed in " + dir.string());
  return res;
}

int cmd_train(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  const fs::path dir = prepare_dir(cfg.out_dir);
  const TrainResult res = train_into(cfg, dir);
  out << "trained " << to_string(cfg.trainer.mode) << " seed " << cfg.trainer.seed << ": "
      << res.env_steps << " env steps, " << res.records.size() << " iterations -> "
      << dir.string() << '\n';
  return kExitOk;
}

nlohmann::ordered_json summary_json(const EvalSummary& s, double command) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["episodes"] = s.episodes;
  j["steps"] = s.steps;
  j["eta_terminations"] = s.eta_terminations;
  j["rms_tracking_error"] = s.rms_tracking_error;
  j["mean_velocity"] = s.mean_velocity;
  j["violation_rho"] = s.rho_violation;
  j["violation_kappa"] = s.kappa_violation;
  j["violation_eta"] = s.eta_violation;
  nlohmann::ordered_json per;
  for (std::size_t k = 0; k < s.kappa_ids.size(); ++k) per[s.kappa_ids[k]] = s.kappa_violations[k];
  j["violation_per_kappa"] = per;
  return j;
}

int cmd_eval(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  if (opt.policy.empty()) throw ConfigError("eval needs --policy");
  EvalSettings es = cfg.eval;
  if (opt.episodes) es.episodes = *opt.episodes;
  if (opt.command) es.command = *opt.command;
  if (es.episodes <= 0) throw ConfigError("number of evaluation episodes must be positive");
  const PolicyParams policy = read_policy(opt.policy);
  const fs::path dir = prepare_dir(cfg.out_dir);
  auto traj = open_out(dir / "trajectory.jsonl");
  const EvalSummary s = evaluate_policy(policy, cfg.trainer.env, es, &traj);
  write_text(dir / "eval_summary.json", summary_json(s, es.command).dump(2) + "\n");
  auto tv = open_out(dir / "torque_velocity.csv");
  tv << "velocity,mean_abs_torque\n";
  for (const auto& [v, tau] : s.torque_by_velocity) tv << v << ',' << tau << '\n';
  if (!traj || !tv) throw IoError("write failed in " + dir.string());
  out << std::setprecision(6) << "eval: " << s.steps << " steps, rms tracking error "
      << s.rms_tracking_error << " m/s, violations rho " << s.rho_violation << " kappa "
      << s.kappa_violation << " eta " << s.eta_violation << '\n';
  return kExitOk;
}

int cmd_ablate(const CommandOptions& opt, std::ostream& out) {
  const RunConfig base = resolve(opt);
  const auto modes = opt.modes.empty() ? base.ablate_modes : opt.modes;
  const auto seeds = opt.seeds.empty() ? base.ablate_seeds : opt.seeds;
  if (modes.size() < 2) throw ConfigError("ablate needs at least two modes");
  for (const auto& m : modes) train_mode_from_string(m);
  const fs::path dir = prepare_dir(base.out_dir);
  const double expert = expert_mean_reward(base.trainer, 4, mix_seed(base.trainer.seed, 0x65787274ULL));
  const double threshold = base.threshold_fraction * expert;

  const MetricsSchema schema(base.trainer.kappa_ids());
  auto table = open_out(dir / "ablation.csv");
  auto curves = open_out(dir / "curves.csv");
  table << "mode,seed,steps_to_threshold,threshold,final_reward,final_viol_rho,final_viol_kappa,"
           "final_viol_eta";
  for (const auto& id : schema.kappa_ids()) table << ",final_viol_" << id;
  table << '\n';
  curves << "mode,seed,iteration,env_steps,phase,mean_reward\n";
  table << std::setprecision(12);
  curves << std::setprecision(12);
  for (const auto& mode : modes)
    for (auto seed : seeds) {
      RunConfig cfg = base;
      apply_override(cfg, "run.mode=" + mode);
      apply_override(cfg, "run.seed=" + std::to_string(seed));
      cfg.validate();
      const fs::path run_dir = prepare_dir((dir / (mode + "_s" + std::to_string(seed))).string());
      const TrainResult res = train_into(cfg, run_dir);
      const auto hit = steps_to_threshold(res.records, threshold);
      const TrainRecord* last = nullptr;
      for (const auto& r : res.records)
        if (r.phase != Phase::kGpu) last = &r;
      table << mode << ',' << seed << ',' << (hit ? std::to_string(*hit) : "none") << ','
            << threshold;
      if (last) {
        table << ',' << last->mean_reward << ',' << last->rho_violation << ','
              << last->kappa_violation << ',' << last->eta_violation;
        for (Eigen::Index k = 0; k < last->kappa_violations.size(); ++k)
          table << ',' << last->kappa_violations[k];
      } else {
        for (std::size_t k = 0; k < 4 + schema.kappa_ids().size(); ++k) table << ",nan";
      }
      table << '\n';
      for (const auto& r : res.records)
        curves << mode << ',' << seed << ',' << r.iteration << ',' << r.env_steps << ','
               << to_string(r.phase) << ',' << r.mean_reward << '\n';
      out << mode << " seed " << seed << ": steps to threshold "
          << (hit ? std::to_string(*hit) : "none") << '\n';
    }
  if (!table || !curves) throw IoError("write failed in " + dir.string());
  return kExitOk;
}

int cmd_replay(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  if (opt.policy.empty()) throw ConfigError("replay needs --policy");
  EvalSettings es = cfg.eval;
  if (opt.episodes) es.episodes = *opt.episodes;
  if (opt.command) es.command = *opt.command;
  const PolicyParams policy = read_policy(opt.policy);
  std::ostringstream fresh;
  const EvalSummary s = evaluate_policy(policy, cfg.trainer.env, es, &fresh);
  if (opt.trajectory.empty()) {
    const fs::path dir = prepare_dir(cfg.out_dir);
    write_text(dir / "replay.jsonl", fresh.str());
    out << "replayed " << s.steps << " steps -> " << (dir / "replay.jsonl").string() << '\n';
    return kExitOk;
  }
  std::ifstream recorded(opt.trajectory);
  if (!recorded) throw IoError("cannot open trajectory '" + opt.trajectory + "'");
  std::istringstream replayed(fresh.str());
  std::string a, b;
  long line = 0;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(recorded, a));
    const bool gb = static_cast<bool>(std::getline(replayed, b));
    if (!ga && !gb) break;
    ++line;
    if (ga != gb || a != b) {
      out << "replay diverges from " << opt.trajectory << " at line " << line << '\n';
      return kExitFailure;
    }
  }
  out << "replay matches " << opt.trajectory << " (" << line << " steps)\n";
  return kExitOk;
}

int cmd_gen_dataset(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve(opt);
  const TrainerConfig& t = cfg.trainer;
  const ExpertDataset d =
      generate_dataset(t.env, t.command_lo, t.command_hi, t.dataset_episodes, t.dataset_steps,
                       mix_seed(t.seed, 0x64617461ULL), t.dataset_exec_noise, t.expert_clearance);
  const fs::path dir = prepare_dir(cfg.out_dir);
  auto f = open_out(dir / "dataset.jsonl");
  save_dataset(d, f);
  if (!f) throw IoError("write failed: " + (dir / "dataset.jsonl").string());
  out << "dataset: " << d.size() << " pairs, " << d.meta.discarded << " discarded episodes -> "
      << (dir / "dataset.jsonl").string() << '\n';
  return kExitOk;
}

}  // namespace

int run_command(const std::string& name, const CommandOptions& opt, std::ostream& out,
                std::ostream& err) {
  try {
    if (name == "train") return cmd_train(opt, out);
    if (name == "eval") return cmd_eval(opt, out);
    if (name == "ablate") return cmd_ablate(opt, out);
    if (name == "replay") return cmd_replay(opt, out);
    if (name == "gen-dataset") return cmd_gen_dataset(opt, out);
    err << "unknown command '" << name << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const PolicyDiverged& e) {
    err << "training diverged: " << e.what() << " (last good state kept in the checkpoint)\n";
    return kExitDiverged;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const InvalidInput& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace gcpo
