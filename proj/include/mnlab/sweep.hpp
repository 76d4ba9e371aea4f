#pragma once

/// Radii sweep: fine-tune one copy of a checkpoint per (ε∞, ε1) pair with
/// E-AT and record its l2 robustness curve next to the hull-predicted ε2.

#include <vector>

#include "mnlab/evaluation.hpp"
#include "mnlab/geometry.hpp"
#include "mnlab/training.hpp"

namespace mnlab {

struct RadiiPair {
  double epsinf = 0.0;
  double eps1 = 0.0;
};

struct SweepResult {
  RadiiPair pair;
  double predicted_eps2 = 0.0;  ///< largest l2 ball inside conv(B1 ∪ B∞)
  std::vector<CurvePoint> curve;
};

/// Predicted l2 radius for each pair in dimension d. Degenerate pairs
/// (ε1 ≤ ε∞ or ε1 ≥ d·ε∞) raise DomainError.
inline std::vector<double> predicted_l2_radii(const std::vector<RadiiPair>& pairs, int d) {
  std::vector<double> out;
  for (const auto& pr : pairs) {
    out.push_back(geometry::min_lp_outside_hull({pr.eps1, pr.epsinf, d}, 2.0).radius);
  }
  return out;
}

/// `finetune_cfg.threats` is replaced per pair; its scheme is forced to E-AT.
inline std::vector<SweepResult> radii_sweep(const Network& checkpoint, const Batch& train_data,
                                            const Batch& eval_data, const std::vector<RadiiPair>& pairs,
                                            const TrainConfig& finetune_cfg,
                                            const std::vector<double>& l2_grid,
                                            const AttackConfig& curve_cfg) {
  if (pairs.empty()) throw InvalidConfig("radii sweep needs at least one pair");
  const auto predicted = predicted_l2_radii(pairs, static_cast<int>(checkpoint.input_dim()));
  std::vector<SweepResult> out;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    TrainConfig cfg = finetune_cfg;
    cfg.scheme = {SchemeKind::EAT};
    cfg.threats = ThreatUnion{{Norm::Linf, pairs[k].epsinf}, {Norm::L1, pairs[k].eps1}};
    const TrainResult tuned = finetune(checkpoint, train_data, cfg);
    out.push_back({pairs[k], predicted[k],
                   robustness_curve(tuned.net, eval_data, Norm::L2, l2_grid, curve_cfg)});
  }
  return out;
}

}  // namespace mnlab
