#include <catch2/catch_amalgamated.hpp>

#include "cdx/reward.hpp"
#include "cdx/rng.hpp"

using namespace cdx;
using Catch::Approx;

namespace {

RewardInputs random_inputs(Rng& rng) {
  RewardInputs in;
  in.p_current = Vec3(rng.uniform(0, 0.6), rng.uniform(-0.3, 0.3),
                      rng.uniform(0, 0.3));
  in.p_goal = in.p_current + Vec3(rng.uniform(-0.2, 0.2),
                                  rng.uniform(-0.2, 0.2),
                                  rng.uniform(-0.2, 0.3));
  in.d_mid = rng.uniform(0, 0.4);
  in.d_pos_min = rng.uniform(0, 0.4);
  in.d_neg_min_abs = rng.uniform(0, 1.5);
  in.max_fingertip_force = rng.uniform(0, 300);
  return in;
}

RewardCoefficients random_coeffs(Rng& rng) {
  RewardCoefficients c;
  c.c1 = rng.uniform(0.1, 3);
  c.c2 = rng.uniform(0.1, 3);
  c.c3 = rng.uniform(0.1, 8);
  c.c4 = rng.uniform(0.1, 3);
  c.c5 = rng.uniform(0.1, 12);
  c.c6 = rng.uniform(0.1, 3);
  return c;
}

// independent re-derivation used as the oracle
double oracle_r_grasp(const RewardInputs& in, const RewardCoefficients& c) {
  const double goal = 0.2 - std::sqrt((in.p_current - in.p_goal).squaredNorm());
  const double mid = c.literal_dmid_term ? std::abs(in.d_mid)
                                         : -std::abs(in.d_mid);
  return c.c4 * (c.c5 * goal + c.c6 * mid);
}

double oracle_stage2(const RewardInputs& in, const RewardCoefficients& c) {
  const double dpos =
      c.literal_dpos_term ? in.d_pos_min : (c.d_ref - in.d_pos_min);
  const double inner = c.c1 * oracle_r_grasp(in, c) + c.c2 * dpos;
  const double d = std::min(std::max(in.d_neg_min_abs, 0.0), 1.0);
  return inner * (1.0 - d);
}

}  // namespace

TEST_CASE("r_grasp at the goal with zero midpoint distance") {
  RewardInputs in;
  in.p_current = in.p_goal = Vec3(0.4, 0.0, 0.2);
  in.d_mid = 0.0;
  RewardCoefficients c;
  c.c4 = c.c5 = c.c6 = 1.0;
  REQUIRE(r_grasp(in, c) == Approx(0.2).epsilon(1e-12));
  c.literal_dmid_term = true;  // both modes agree when d_mid = 0
  REQUIRE(r_grasp(in, c) == Approx(0.2).epsilon(1e-12));
}

TEST_CASE("r_grasp vanishes 0.2 m from the goal") {
  RewardInputs in;
  in.p_current = Vec3(0.4, 0.0, 0.0);
  in.p_goal = Vec3(0.4, 0.0, 0.2);
  in.d_mid = 0.0;
  RewardCoefficients c;
  c.c4 = c.c5 = c.c6 = 1.0;
  REQUIRE(r_grasp(in, c) == Approx(0.0).margin(1e-15));
}

TEST_CASE("r_grasp matches an independent derivation on random inputs") {
  Rng rng(41);
  for (int i = 0; i < 2000; ++i) {
    RewardInputs in = random_inputs(rng);
    RewardCoefficients c = random_coeffs(rng);
    c.literal_dmid_term = rng.uniform() < 0.5;
    REQUIRE(r_grasp(in, c) == Approx(oracle_r_grasp(in, c)).margin(1e-12));
  }
}

TEST_CASE("invalid coefficients are rejected") {
  RewardInputs in;
  RewardCoefficients c;
  c.c5 = 0.0;
  REQUIRE_THROWS_AS(r_grasp(in, c), std::invalid_argument);
}

TEST_CASE("stage1 composition and c2=0 reduction") {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    RewardInputs in = random_inputs(rng);
    RewardCoefficients c = random_coeffs(rng);
    const double dpos = c.d_ref - in.d_pos_min;
    REQUIRE(reward_stage1(in, c) ==
            Approx(c.c1 * r_grasp(in, c) + c.c2 * dpos).margin(1e-12));
  }
  RewardInputs in = random_inputs(rng);
  RewardCoefficients c;
  c.c2 = 1e-300;  // positive but negligible
  REQUIRE(reward_stage1(in, c) == Approx(c.c1 * r_grasp(in, c)).margin(1e-9));
}

TEST_CASE("stage2 equals stage1 at zero clutter distance") {
  Rng rng(43);
  for (int i = 0; i < 10000; ++i) {
    RewardInputs in = random_inputs(rng);
    RewardCoefficients c = random_coeffs(rng);
    in.d_neg_min_abs = 0.0;
    REQUIRE(reward_stage2(in, c) == reward_stage1(in, c));  // exact equality
  }
}

TEST_CASE("stage2 multiplier endpoints and a direct value") {
  RewardInputs in;
  in.p_current = in.p_goal = Vec3::Zero();
  in.d_mid = 0.0;
  RewardCoefficients c;
  c.c1 = c.c2 = c.c4 = c.c5 = c.c6 = 1.0;
  c.literal_dpos_term = true;

  in.d_neg_min_abs = 1.0;
  REQUIRE(reward_stage2(in, c) == 0.0);

  // inner term = c1*0.2 + c2*2.8 = 3, multiplier 0.75 -> 2.25
  in.d_pos_min = 2.8;
  in.d_neg_min_abs = 0.25;
  REQUIRE(reward_stage2(in, c) == Approx(2.25).epsilon(1e-12));
}

TEST_CASE("stage2 is non-increasing in the clutter distance") {
  Rng rng(44);
  for (int trial = 0; trial < 200; ++trial) {
    RewardInputs in = random_inputs(rng);
    RewardCoefficients c = random_coeffs(rng);
    in.d_pos_min = rng.uniform(0, 0.15);
    in.p_current = in.p_goal;  // keep the inner term positive
    in.d_mid = 0.0;
    double prev = std::numeric_limits<double>::infinity();
    for (double d = 0.0; d <= 1.2; d += 0.1) {
      in.d_neg_min_abs = d;
      const double r = reward_stage2(in, c);
      REQUIRE(r <= prev + 1e-12);
      prev = r;
    }
  }
}

TEST_CASE("r_force indicator is a strict threshold") {
  REQUIRE(r_force(201.0, 200.0) == 1.0);
  REQUIRE(r_force(50.0, 50.0) == 0.0);
  REQUIRE(r_force(49.999, 50.0) == 0.0);
  REQUIRE_THROWS_AS(r_force(10.0, 0.0), std::invalid_argument);

  // threshold sweep steps exactly at the max force
  const double fmax = 123.456;
  for (double f = 1.0; f < 300.0; f += 0.5) {
    REQUIRE(r_force(fmax, f) == (fmax > f ? 1.0 : 0.0));
  }
}

TEST_CASE("stage3 equals stage2 minus the sparse penalty") {
  RewardInputs in;
  in.p_current = in.p_goal = Vec3::Zero();
  in.d_mid = 0.0;
  in.d_pos_min = 2.8;
  in.d_neg_min_abs = 0.25;
  RewardCoefficients c;
  c.c1 = c.c2 = c.c4 = c.c5 = c.c6 = 1.0;
  c.c3 = 5.0;
  c.literal_dpos_term = true;

  in.max_fingertip_force = 10.0;
  REQUIRE(reward_stage3(in, c, 200.0) == reward_stage2(in, c));
  in.max_fingertip_force = 250.0;
  REQUIRE(reward_stage3(in, c, 200.0) == Approx(-2.75).epsilon(1e-12));
}

TEST_CASE("stage identities hold on 1e4 random inputs") {
  Rng rng(45);
  for (int i = 0; i < 10000; ++i) {
    RewardInputs in = random_inputs(rng);
    RewardCoefficients c = random_coeffs(rng);
    c.literal_dpos_term = rng.uniform() < 0.5;
    c.literal_dmid_term = rng.uniform() < 0.5;
    const double f = rng.uniform(1.0, 300.0);

    // stage-2 with zero running distance equals stage-1 exactly
    RewardInputs zeroed = in;
    zeroed.d_neg_min_abs = 0.0;
    REQUIRE(reward_stage2(zeroed, c) == reward_stage1(zeroed, c));

    // stage-3 never exceeds stage-2; the gap is exactly 0 or c3
    const double s2 = reward_stage2(in, c);
    const double s3 = reward_stage3(in, c, f);
    REQUIRE(s3 <= s2);
    const double gap = s2 - s3;
    const bool zero_gap = gap == 0.0;
    const bool c3_gap = std::abs(gap - c.c3) < 1e-12;
    REQUIRE((zero_gap || c3_gap));

    // all values finite, and the stage-2 oracle agrees
    REQUIRE(std::isfinite(s2));
    REQUIRE(std::isfinite(s3));
    REQUIRE(s2 == Approx(oracle_stage2(in, c)).margin(1e-12));
  }
}

TEST_CASE("expected stage3 reward decreases as the threshold tightens") {
  Rng rng(46);
  RewardCoefficients c;
  std::vector<double> forces(2000);
  for (auto& f : forces) f = rng.uniform(0.0, 300.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double threshold : {250.0, 200.0, 150.0, 100.0, 50.0}) {
    double total = 0.0;
    Rng inner(7);
    for (double f : forces) {
      RewardInputs in = random_inputs(inner);
      in.max_fingertip_force = f;
      total += reward_stage3(in, c, threshold);
    }
    REQUIRE(total <= prev + 1e-9);
    prev = total;
  }
}
