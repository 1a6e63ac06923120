#include <iostream>

#include <CLI11.hpp>

#include "gcpo/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Guided constrained policy optimization on a planar quadruped"};
  app.require_subcommand(1);
  gcpo::CommandOptions opt;
  std::uint64_t seed = 0;
  std::string out;
  int workers = 1;
  int episodes = 0;
  double command = 0.0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "run configuration file")->required();
    sub->add_option("--seed", seed, "overrides run.seed");
    sub->add_option("--out", out, "overrides run.out");
    sub->add_option("--override", opt.overrides, "section.key=value, repeatable");
    sub->add_option("--workers", workers, "rollout worker threads")->check(CLI::PositiveNumber);
  };
  auto* train = app.add_subcommand("train", "run GCPO training");
  common(train);
  auto* eval = app.add_subcommand("eval", "deterministic evaluation of a policy");
  common(eval);
  auto* ablate = app.add_subcommand("ablate", "train every (mode, seed) pair and compare");
  common(ablate);
  auto* replay = app.add_subcommand("replay", "re-simulate an evaluation and compare to a dump");
  common(replay);
  auto* gen = app.add_subcommand("gen-dataset", "roll the scripted expert into a dataset");
  common(gen);
  for (auto* sub : {eval, replay}) {
    sub->add_option("--policy", opt.policy, "policy or checkpoint file")->required();
    sub->add_option("--episodes", episodes, "number of episodes");
    sub->add_option("--command", command, "constant forward-velocity command (m/s)");
  }
  replay->add_option("--trajectory", opt.trajectory, "recorded trajectory to compare against");
  ablate->add_option("--modes", opt.modes, "modes to compare")->delimiter(',');
  ablate->add_option("--seeds", opt.seeds, "seeds per mode")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : gcpo::kExitConfig;
  }
  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--out")) opt.out = out;
  if (sub->count("--workers")) opt.workers = workers;
  if (sub->get_option_no_throw("--episodes") && sub->count("--episodes")) opt.episodes = episodes;
  if (sub->get_option_no_throw("--command") && sub->count("--command")) opt.command = command;
  return gcpo::run_command(sub->get_name(), opt, std::cout, std::cerr);
}
