#pragma once

#include <cmath>
#include <stdexcept>

#include "cdx/math.hpp"

namespace cdx {

struct RewardCoefficients {
  double c1 = 1.0;   // grasp-reward weight
  double c2 = 2.0;   // target-proximity weight
  double c3 = 5.0;   // force-penalty weight
  double c4 = 1.0;   // grasp-reward outer scale
  double c5 = 10.0;  // goal-distance weight
  double c6 = 2.0;   // midpoint weight

  // The printed formulas add the raw distances |d_pos| and |d_mid|, which
  // rewards being far away. Default mode flips both so proximity pays:
  // the d_pos term becomes (d_ref - d_pos_min) and the d_mid term -|d_mid|.
  bool literal_dpos_term = false;
  bool literal_dmid_term = false;
  double d_ref = 0.2;

  bool valid() const {
    return c1 > 0 && c2 > 0 && c3 > 0 && c4 > 0 && c5 > 0 && c6 > 0;
  }
};

struct RewardInputs {
  Vec3 p_current = Vec3::Zero();  // target object position
  Vec3 p_goal = Vec3::Zero();     // lift goal position
  double d_mid = 0.0;             // |grasp midpoint - object center|
  double d_pos_min = 0.0;         // min_k |d_pos_k|
  double d_neg_min_abs = 0.0;     // episode-running min distance to clutter
  double max_fingertip_force = 0.0;  // sim force units
};

/// r_grasp = c4 * (c5 * (0.2 - ||p_current - p_goal||) + c6 * |d_mid| term).
inline double r_grasp(const RewardInputs& in, const RewardCoefficients& c) {
  if (!c.valid()) throw std::invalid_argument("reward coefficients must be positive");
  const double goal_term = 0.2 - (in.p_current - in.p_goal).norm();
  const double mid_term =
      c.literal_dmid_term ? std::abs(in.d_mid) : -std::abs(in.d_mid);
  return c.c4 * (c.c5 * goal_term + c.c6 * mid_term);
}

inline double dpos_term(const RewardInputs& in, const RewardCoefficients& c) {
  return c.literal_dpos_term ? in.d_pos_min : (c.d_ref - in.d_pos_min);
}

/// Stage 1: single-object grasping; representation terms zero-padded.
inline double reward_stage1(const RewardInputs& in,
                            const RewardCoefficients& c) {
  return c.c1 * r_grasp(in, c) + c.c2 * dpos_term(in, c);
}

/// Stage 2: stage-1 value scaled by (1 - clamp(d_neg_min, 0, 1)).
inline double reward_stage2(const RewardInputs& in,
                            const RewardCoefficients& c) {
  const double d = clampd(in.d_neg_min_abs, 0.0, 1.0);
  return reward_stage1(in, c) * (1.0 - d);
}

/// Sparse force-violation indicator: 1 iff max fingertip z-force > f.
inline double r_force(double max_fingertip_force, double f_threshold) {
  if (f_threshold <= 0.0)
    throw std::invalid_argument("force threshold must be positive");
  return max_fingertip_force > f_threshold ? 1.0 : 0.0;
}

/// Stage 3: stage-2 value minus the sparse safety penalty.
inline double reward_stage3(const RewardInputs& in,
                            const RewardCoefficients& c, double f_threshold) {
  return reward_stage2(in, c) -
         c.c3 * r_force(in.max_fingertip_force, f_threshold);
}

}  // namespace cdx
