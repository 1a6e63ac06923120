#include "gcpo/metrics.hpp"

#include <cmath>
#include <istream>
#include <sstream>

#include "gcpo/errors.hpp"

namespace gcpo {

std::string to_string(Phase p) {
  switch (p) {
    case Phase::kGpu: return "gpu";
    case Phase::kAcppo: return "acppo";
    case Phase::kHcppo: return "hcppo";
  }
  return "?";
}

Phase phase_from_string(const std::string& s) {
  if (s == "gpu") return Phase::kGpu;
  if (s == "acppo") return Phase::kAcppo;
  if (s == "hcppo") return Phase::kHcppo;
  throw InvalidInput("unknown phase '" + s + "'");
}

MetricsSchema::MetricsSchema(std::vector<std::string> kappa_ids) : ids_(std::move(kappa_ids)) {
  for (const auto& id : ids_)
    if (id.empty() || id.find(',') != std::string::npos)
      throw InvalidInput("constraint id '" + id + "' cannot be used as a metrics column");
}

std::vector<std::string> MetricsSchema::columns() const {
  std::vector<std::string> c{"iteration", "env_steps", "phase", "alpha", "mean_reward"};
  for (const auto& id : ids_) c.push_back("J_" + id);
  c.insert(c.end(), {"viol_rho", "viol_kappa", "viol_eta"});
  for (const auto& id : ids_) c.push_back("viol_" + id);
  c.insert(c.end(), {"mean_kl", "entropy"});
  return c;
}

std::string MetricsSchema::header() const {
  std::string h;
  for (const auto& c : columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

int MetricsSchema::column_index(const std::string& column) const {
  const auto cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (cols[i] == column) return static_cast<int>(i);
  return -1;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

double parse_num(const std::string& s) {
  if (s == "nan") return std::nan("");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw IoError("metrics: '" + s + "' is not a number");
  }
  if (used != s.size()) throw IoError("metrics: '" + s + "' is not a number");
  return v;
}

}  // namespace

std::string MetricsSchema::format(const TrainRecord& r) const {
  const auto m = static_cast<Eigen::Index>(ids_.size());
  if (r.cost_returns.size() != m || r.kappa_violations.size() != m)
    throw InvalidInput("metrics record does not match the kappa constraint set");
  std::ostringstream os;
  os << r.iteration << ',' << r.env_steps << ',' << to_string(r.phase) << ',' << num(r.alpha)
     << ',' << num(r.mean_reward);
  for (Eigen::Index k = 0; k < m; ++k) os << ',' << num(r.cost_returns[k]);
  os << ',' << num(r.rho_violation) << ',' << num(r.kappa_violation) << ','
     << num(r.eta_violation);
  for (Eigen::Index k = 0; k < m; ++k) os << ',' << num(r.kappa_violations[k]);
  os << ',' << num(r.mean_kl) << ',' << num(r.entropy);
  return os.str();
}

TrainRecord MetricsSchema::parse(const std::string& row) const {
  std::vector<std::string> f;
  std::stringstream ss(row);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  const auto m = static_cast<Eigen::Index>(ids_.size());
  if (f.size() != columns().size())
    throw IoError("metrics row has " + std::to_string(f.size()) + " fields, expected " +
                  std::to_string(columns().size()));
  TrainRecord r;
  std::size_t i = 0;
  r.iteration = static_cast<long>(parse_num(f[i++]));
  r.env_steps = static_cast<long>(parse_num(f[i++]));
  try {
    r.phase = phase_from_string(f[i++]);
  } catch (const InvalidInput& e) {
    throw IoError(std::string("metrics: ") + e.what());
  }
  r.alpha = parse_num(f[i++]);
  r.mean_reward = parse_num(f[i++]);
  r.cost_returns.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) r.cost_returns[k] = parse_num(f[i++]);
  r.rho_violation = parse_num(f[i++]);
  r.kappa_violation = parse_num(f[i++]);
  r.eta_violation = parse_num(f[i++]);
  r.kappa_violations.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) r.kappa_violations[k] = parse_num(f[i++]);
  r.mean_kl = parse_num(f[i++]);
  r.entropy = parse_num(f[i++]);
  return r;
}

MetricsSchema MetricsSchema::read(std::istream& is, std::vector<TrainRecord>& rows) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("metrics log is empty");
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cols.push_back(cell);
  std::vector<std::string> ids;
  for (std::size_t i = 5; i < cols.size() && cols[i].rfind("J_", 0) == 0; ++i)
    ids.push_back(cols[i].substr(2));
  MetricsSchema schema(ids);
  if (schema.header() != line) throw IoError("metrics header does not match the known layout");
  rows.clear();
  while (std::getline(is, line))
    if (!line.empty()) rows.push_back(schema.parse(line));
  return schema;
}

std::optional<long> steps_to_threshold(const std::vector<TrainRecord>& rows, double threshold) {
  for (const auto& r : rows)
    if (r.phase != Phase::kGpu && r.mean_reward >= threshold) return r.env_steps;
  return std::nullopt;
}

}  // namespace gcpo
