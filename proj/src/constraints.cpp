#include "gcpo/constraints.hpp"

#include <cmath>
#include <map>
#include <set>

#include "gcpo/errors.hpp"

namespace gcpo {

std::string to_string(Tier t) {
  switch (t) {
    case Tier::kRho: return "rho";
    case Tier::kKappa: return "kappa";
    case Tier::kEta: return "eta";
  }
  return "?";
}

std::string to_string(CostTerm c) {
  switch (c) {
    case CostTerm::kJointSpeed: return "joint_speed";
    case CostTerm::kJointAcceleration: return "joint_acceleration";
    case CostTerm::kFootClearance: return "foot_clearance";
    case CostTerm::kFootRegion: return "foot_region";
    case CostTerm::kZmp: return "zmp";
    case CostTerm::kFootContacts: return "foot_contacts";
  }
  return "?";
}

Tier tier_from_string(const std::string& s) {
  if (s == "rho") return Tier::kRho;
  if (s == "kappa") return Tier::kKappa;
  if (s == "eta") return Tier::kEta;
  throw InvalidInput("unknown constraint tier '" + s + "'");
}

CostTerm cost_term_from_string(const std::string& s) {
  for (auto c : {CostTerm::kJointSpeed, CostTerm::kJointAcceleration, CostTerm::kFootClearance,
                 CostTerm::kFootRegion, CostTerm::kZmp, CostTerm::kFootContacts})
    if (to_string(c) == s) return c;
  throw InvalidInput("unknown cost term '" + s + "'");
}

void validate_specs(const std::vector<ConstraintSpec>& specs) {
  std::set<std::string> ids;
  std::map<std::pair<CostTerm, Tier>, double> limits;
  for (const auto& s : specs) {
    if (s.id.empty()) throw InvalidInput("constraint without an id");
    if (!ids.insert(s.id).second) throw InvalidInput("duplicate constraint id '" + s.id + "'");
    if (s.d_bound.has_value() != (s.tier == Tier::kKappa))
      throw InvalidInput("constraint '" + s.id + "': d_bound is required for kappa and only kappa");
    if (s.d_bound && *s.d_bound < 0.0)
      throw InvalidInput("constraint '" + s.id + "': d_bound must be >= 0");
    if (!(s.limit >= 0.0) || !std::isfinite(s.limit))
      throw InvalidInput("constraint '" + s.id + "': limit must be finite and >= 0");
    if (!(s.weight >= 0.0)) throw InvalidInput("constraint '" + s.id + "': weight must be >= 0");
    if (s.term == CostTerm::kFootClearance && s.tier != Tier::kRho)
      throw InvalidInput("constraint '" + s.id + "': foot clearance is a rho-only term");
    if (s.term == CostTerm::kZmp && s.tier == Tier::kRho)
      throw InvalidInput("constraint '" + s.id + "': zmp has no rho form");
    if (!limits.emplace(std::make_pair(s.term, s.tier), s.limit).second)
      throw InvalidInput("constraint '" + s.id + "': two specs share a term and tier");
  }
  // ZMP and contact limits measure different things per tier; the rest nest.
  for (auto term : {CostTerm::kJointSpeed, CostTerm::kJointAcceleration, CostTerm::kFootRegion,
                    CostTerm::kZmp}) {
    double prev = -1.0;
    std::string prev_tier;
    for (auto tier : {Tier::kRho, Tier::kKappa, Tier::kEta}) {
      auto it = limits.find({term, tier});
      if (it == limits.end()) continue;
      if (it->second < prev)
        throw InvalidInput(to_string(term) + ": " + to_string(tier) + " limit is below the " +
                           prev_tier + " limit");
      prev = it->second;
      prev_tier = to_string(tier);
    }
  }
}

std::vector<ConstraintSpec> specs_of_tier(const std::vector<ConstraintSpec>& specs, Tier tier) {
  std::vector<ConstraintSpec> out;
  for (const auto& s : specs)
    if (s.tier == tier) out.push_back(s);
  return out;
}

namespace {

double squared_excess(const Vec4& v, double limit) {
  return (v.cwiseAbs().array() - limit).max(0.0).square().sum();
}

bool outside_region(const EnvSnapshot& s, int leg, double half_width) {
  const Vec2 d = s.foot_rel[leg] - s.foot_anchor[leg];
  return std::abs(d.x()) > half_width || std::abs(d.y()) > half_width;
}

bool zmp_outside_support(const EnvSnapshot& s) {
  return s.support_empty || s.zmp < s.support_lo || s.zmp > s.support_hi;
}

ConstraintEntry evaluate(const EnvSnapshot& s, const ConstraintSpec& spec) {
  ConstraintEntry e{spec.id, spec.tier, 0.0, false};
  switch (spec.term) {
    case CostTerm::kJointSpeed:
      e.cost = squared_excess(s.joint_vel, spec.limit);
      e.violated = e.cost > 0.0;
      break;
    case CostTerm::kJointAcceleration:
      e.cost = squared_excess(s.joint_acc, spec.limit);
      e.violated = e.cost > 0.0;
      break;
    case CostTerm::kFootClearance:
      for (int i = 0; i < kLegs; ++i) {
        const double dh = s.foot_world[i].y() - spec.limit;
        e.cost += dh * dh * s.foot_vel[i].squaredNorm();
      }
      break;
    case CostTerm::kFootRegion:
      for (int i = 0; i < kLegs; ++i)
        if (outside_region(s, i, spec.limit)) {
          e.cost += (s.foot_anchor[i] - s.foot_rel[i]).squaredNorm();
          e.violated = true;
        }
      break;
    case CostTerm::kZmp: {
      const double dist = std::abs(s.zmp - s.com.x());
      if (zmp_outside_support(s)) e.cost = dist * dist;
      e.violated = spec.tier == Tier::kEta ? dist > spec.limit
                                           : (e.cost > 0.0 && dist > spec.limit);
      break;
    }
    case CostTerm::kFootContacts:
      if (spec.tier == Tier::kEta) {
        // feet within the contact band count even while the force proxy is
        // momentarily zero (body dropping at free fall onto a retracting leg)
        e.violated = s.contact_count() < spec.limit;
      } else {
        const double total = s.contact_force[0] + s.contact_force[1];
        e.violated = total < spec.limit * s.body_weight;
      }
      e.cost = e.violated ? 1.0 : 0.0;
      break;
  }
  return e;
}

ConstraintReport eval_tier(const EnvSnapshot& s, const std::vector<ConstraintSpec>& specs,
                           Tier tier) {
  ConstraintReport r;
  for (const auto& spec : specs) {
    if (spec.tier != tier) continue;
    r.entries.push_back(evaluate(s, spec));
  }
  return r;
}

}  // namespace

ConstraintReport eval_rho(const EnvSnapshot& s, const std::vector<ConstraintSpec>& specs) {
  return eval_tier(s, specs, Tier::kRho);
}

ConstraintReport eval_kappa(const EnvSnapshot& s, const std::vector<ConstraintSpec>& specs) {
  return eval_tier(s, specs, Tier::kKappa);
}

ConstraintReport eval_eta(const EnvSnapshot& s, const std::vector<ConstraintSpec>& specs) {
  ConstraintReport r = eval_tier(s, specs, Tier::kEta);
  for (const auto& e : r.entries)
    if (e.violated) {
      r.eta_triggered = true;
      r.triggers.push_back(e.id);
    }
  return r;
}

Vector kappa_cost_vector(const ConstraintReport& kappa, const std::vector<ConstraintSpec>& specs) {
  std::vector<double> weights;
  for (const auto& s : specs)
    if (s.tier == Tier::kKappa) weights.push_back(s.weight);
  if (weights.size() != kappa.entries.size())
    throw InvalidInput("kappa report does not match the registered kappa specs");
  Vector c(static_cast<Eigen::Index>(weights.size()));
  for (std::size_t i = 0; i < weights.size(); ++i) c[i] = weights[i] * kappa.entries[i].cost;
  return c;
}

double recovery_bonus(const ConstraintReport& prev, const ConstraintReport& curr,
                      std::span<const double> bonus) {
  if (prev.entries.size() != curr.entries.size() || bonus.size() != curr.entries.size())
    throw InvalidInput("recovery_bonus: reports cover different constraint sets");
  double total = 0.0;
  for (std::size_t i = 0; i < curr.entries.size(); ++i) {
    if (prev.entries[i].id != curr.entries[i].id)
      throw InvalidInput("recovery_bonus: constraint '" + curr.entries[i].id +
                         "' does not line up with '" + prev.entries[i].id + "'");
    if (curr.entries[i].tier != Tier::kKappa) continue;
    if (prev.entries[i].violated && !curr.entries[i].violated) total += bonus[i];
  }
  return total;
}

std::vector<StepRecord> reformat_episode(const std::vector<StepRecord>& raw,
                                         double terminal_penalty) {
  if (!(terminal_penalty < 0.0)) throw InvalidInput("terminal penalty must be negative");
  std::size_t t_eta = raw.size();
  for (std::size_t t = 0; t < raw.size(); ++t)
    if (raw[t].eta_triggered) {
      t_eta = t;
      break;
    }
  if (t_eta == raw.size()) return raw;

  std::size_t last_kept = 0;
  if (t_eta > 0 && raw[t_eta - 1].kappa_violated) {
    std::size_t onset = t_eta - 1;
    while (onset > 0 && raw[onset - 1].kappa_violated) --onset;
    last_kept = onset;
  } else if (t_eta > 0) {
    last_kept = t_eta - 1;
  }
  std::vector<StepRecord> out(raw.begin(), raw.begin() + static_cast<long>(last_kept) + 1);
  out.back().reward += terminal_penalty;
  out.back().terminal = true;
  out.back().eta_triggered = false;
  return out;
}

double logistic_kernel(double x) {
  const double e = std::exp(-std::abs(x));
  // 1/(e^x + 2 + e^-x) = e^-|x| / (1 + e^-|x|)^2, overflow-free
  return e / ((1.0 + e) * (1.0 + e));
}

double reward_penalty(const EnvSnapshot& s, const ConstraintReport& rho,
                      const std::vector<ConstraintSpec>& rho_specs, const RewardWeights& w) {
  double penalty = w.torque * s.torque.squaredNorm() + w.smoothness * (s.joints - s.joints_prev).squaredNorm() +
                   w.orientation * s.pitch * s.pitch;
  for (int i = 0; i < kLegs; ++i) {
    penalty += w.foot_acceleration * (s.foot_vel[i] - s.foot_vel_prev[i]).squaredNorm();
    if (s.contact[i]) penalty += w.foot_slip * s.foot_vel[i].squaredNorm();
  }
  std::size_t k = 0;
  for (const auto& spec : rho_specs) {
    if (spec.tier != Tier::kRho) continue;
    if (k >= rho.entries.size() || rho.entries[k].id != spec.id)
      throw InvalidInput("assemble_reward: rho report does not match the rho specs");
    penalty += spec.weight * rho.entries[k].cost;
    ++k;
  }
  return penalty;
}

double assemble_reward(const EnvSnapshot& s, double command, const ConstraintReport& rho,
                       const std::vector<ConstraintSpec>& rho_specs, double recovery,
                       const RewardWeights& w) {
  const double tracking =
      w.linear_velocity * logistic_kernel(w.velocity_kernel_scale * (s.base_vel.x() - command)) +
      w.angular_velocity * logistic_kernel(s.pitch_rate);
  return tracking - w.penalty_scale * reward_penalty(s, rho, rho_specs, w) + recovery;
}

}  // namespace gcpo
