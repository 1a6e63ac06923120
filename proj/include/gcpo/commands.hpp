#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gcpo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;   // replay mismatch, unexpected errors
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitIo = 4;

struct CommandOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
  std::optional<int> workers;

  // eval / replay
  std::string policy;                 // policy file or checkpoint
  std::optional<int> episodes;
  std::optional<double> command;
  std::string trajectory;             // replay: recorded dump to check against
  // ablate
  std::vector<std::string> modes;
  std::vector<std::uint64_t> seeds;
};

/// Runs train / eval / ablate / replay / gen-dataset and maps failures to exit
/// codes. Progress goes to `out`, diagnostics to `err`.
int run_command(const std::string& name, const CommandOptions& opt, std::ostream& out,
                std::ostream& err);

}  // namespace gcpo
