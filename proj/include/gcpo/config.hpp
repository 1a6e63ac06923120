#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gcpo/trainer.hpp"

namespace gcpo {

/// Everything a CLI run needs. Text form: `[section]` headers followed by
/// `key = value` lines; `#` starts a comment. Constraint sections are named
/// `[constraint.<id>]`; the first one replaces the built-in constraint set.
struct RunConfig {
  TrainerConfig trainer;
  std::string out_dir = "run";
  EvalSettings eval;
  std::vector<std::string> ablate_modes{"gcpo", "cppo_only"};
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};
  double threshold_fraction = 0.8;  // steps-to-threshold: fraction of the expert's mean reward

  void validate() const;
};

/// Parses a config, then applies `overrides`. run.seed and run.mode are
/// required, either in the text or as overrides.
RunConfig parse_config(std::istream& is, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Applies one `section.key=value` (or `constraint.<id>.field=value`) override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Canonical text form; parse_config(resolved_config(c)) reproduces c.
std::string resolved_config(const RunConfig& cfg);

}  // namespace gcpo
