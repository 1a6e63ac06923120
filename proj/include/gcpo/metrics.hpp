#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gcpo/nn.hpp"

namespace gcpo {

enum class Phase { kGpu, kAcppo, kHcppo };
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

/// One row of the metrics log. GPU rows carry no rollout statistics; their
/// rollout columns are NaN.
struct TrainRecord {
  long iteration = 0;
  long env_steps = 0;         // cumulative RL environment steps
  Phase phase = Phase::kAcppo;
  double alpha = 0.0;
  double mean_reward = 0.0;   // per simulated step, before reformatting
  Vector cost_returns;        // J_Ci per kappa-constraint
  double rho_violation = 0.0;     // fraction of steps with any rho term violated
  double kappa_violation = 0.0;   // fraction of steps with any kappa term violated
  double eta_violation = 0.0;     // fraction of steps that triggered termination
  Vector kappa_violations;        // per kappa-constraint step fraction
  double mean_kl = 0.0;
  double entropy = 0.0;
};

/// Column layout shared by every writer and reader of the metrics log:
/// iteration, env_steps, phase, alpha, mean_reward, J_<id>..., viol_rho,
/// viol_kappa, viol_eta, viol_<id>..., mean_kl, entropy.
class MetricsSchema {
 public:
  explicit MetricsSchema(std::vector<std::string> kappa_ids);

  const std::vector<std::string>& kappa_ids() const { return ids_; }
  std::vector<std::string> columns() const;
  std::string header() const;
  std::string format(const TrainRecord& r) const;
  /// Throws IoError on a row that does not match the layout.
  TrainRecord parse(const std::string& row) const;
  /// Index of `column`, or -1.
  int column_index(const std::string& column) const;

  /// Reads the header, reconstructs the schema, then every row.
  static MetricsSchema read(std::istream& is, std::vector<TrainRecord>& rows);

 private:
  std::vector<std::string> ids_;
};

/// First RL row whose mean reward reaches `threshold`, as its env-step count.
std::optional<long> steps_to_threshold(const std::vector<TrainRecord>& rows, double threshold);

}  // namespace gcpo
