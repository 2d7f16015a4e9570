#include <catch2/catch_amalgamated.hpp>

using Catch::Approx;

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "cdx/cloud.hpp"
#include "cdx/gs.hpp"
#include "cdx/kdtree.hpp"
#include "cdx/robot.hpp"
#include "cdx/shape.hpp"

using namespace cdx;

namespace {

// independent brute-force oracle for nearest-neighbor queries
int brute_nearest(const Vec3& q, const std::vector<Vec3>& pts) {
  int best = 0;
  double best_d = (pts[0] - q).squaredNorm();
  for (size_t i = 1; i < pts.size(); ++i) {
    const double d = (pts[i] - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::vector<Vec3> random_points(Rng& rng, int n, double scale = 1.0) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts)
    p = Vec3(rng.uniform(-scale, scale), rng.uniform(-scale, scale),
             rng.uniform(-scale, scale));
  return pts;
}

}  // namespace

TEST_CASE("sphere surface samples lie on the sphere") {
  const Shape s = Shape::sphere(0.05);
  const auto surf =
      sample_surface_points(s, RigidTransform::identity(), 200, 42);
  REQUIRE(surf.count() == 200);
  for (const auto& p : surf.points)
    REQUIRE(std::abs(p.norm() - 0.05) < 1e-6);
}

TEST_CASE("surface sampling is deterministic given seed") {
  const Shape s = Shape::box(0.02, 0.03, 0.04);
  RigidTransform pose{Quat(Eigen::AngleAxisd(0.7, Vec3(1, 1, 0).normalized())),
                      Vec3(0.1, -0.2, 0.3)};
  const auto a = sample_surface_points(s, pose, 50, 7);
  const auto b = sample_surface_points(s, pose, 7, 7);
  for (int i = 0; i < 7; ++i) REQUIRE(a.points[i] == b.points[i]);
}

TEST_CASE("all samples lie on shape surfaces within 1e-6") {
  Rng rng(3);
  const std::vector<Shape> shapes = {Shape::sphere(0.03),
                                     Shape::box(0.02, 0.03, 0.04),
                                     Shape::cylinder(0.025, 0.03)};
  for (const auto& s : shapes) {
    const auto surf =
        sample_surface_points(s, RigidTransform::identity(), 500, rng.next_u64());
    for (const auto& p : surf.points) REQUIRE(std::abs(s.sdf(p)) < 1e-6);
  }
}

TEST_CASE("box sampling is area-weighted per face (chi-square)") {
  const Shape s = Shape::box(0.02, 0.03, 0.04);
  const int n = 10000;
  const auto surf = sample_surface_points(s, RigidTransform::identity(), n, 11);

  // classify each sample by its face
  double counts[6] = {0, 0, 0, 0, 0, 0};
  for (const auto& p : surf.points) {
    int axis = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      const double d = s.dims[i] - std::abs(p[i]);
      if (d < best) {
        best = d;
        axis = i;
      }
    }
    counts[2 * axis + (p[axis] > 0 ? 1 : 0)] += 1;
  }
  const double areas[3] = {s.dims.y() * s.dims.z(), s.dims.z() * s.dims.x(),
                           s.dims.x() * s.dims.y()};
  const double total_area = 2.0 * (areas[0] + areas[1] + areas[2]);
  double chi2 = 0.0;
  for (int f = 0; f < 6; ++f) {
    const double expected = n * areas[f / 2] / total_area;
    chi2 += (counts[f] - expected) * (counts[f] - expected) / expected;
    // per-face count within 3 sigma of the binomial expectation
    const double p = areas[f / 2] / total_area;
    const double sigma = std::sqrt(n * p * (1 - p));
    REQUIRE(std::abs(counts[f] - expected) < 3.0 * sigma);
  }
  REQUIRE(chi2 < 20.5);  // chi-square 5 dof, ~0.999 quantile
}

TEST_CASE("invalid shape dims are rejected") {
  Shape s = Shape::sphere(-0.1);
  REQUIRE_THROWS_AS(
      sample_surface_points(s, RigidTransform::identity(), 10, 0),
      std::invalid_argument);
}

TEST_CASE("nearest_displacement basic cases") {
  const std::vector<Vec3> targets = {Vec3(1, 0, 0), Vec3(0, 2, 0)};
  const auto out = nearest_displacement({Vec3(0, 0, 0)}, targets);
  REQUIRE(out.size() == 1);
  REQUIRE(out[0].offset == Vec3(1, 0, 0));
  REQUIRE(out[0].distance == 1.0);

  const auto zero = nearest_displacement({Vec3(0, 2, 0)}, targets);
  REQUIRE(zero[0].distance == 0.0);

  REQUIRE_THROWS_AS(nearest_displacement({Vec3(0, 0, 0)}, std::vector<Vec3>{}),
                    std::invalid_argument);
}

TEST_CASE("nearest_displacement matches brute force on random configs") {
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    const auto targets = random_points(rng, 4096);
    const auto queries = random_points(rng, 64);
    const auto out = nearest_displacement(queries, targets);
    for (size_t q = 0; q < queries.size(); ++q) {
      const int bi = brute_nearest(queries[q], targets);
      REQUIRE(out[q].offset == targets[bi] - queries[q]);
    }
  }
}

TEST_CASE("kdtree equals brute force under the cutoff too") {
  Rng rng(9);
  const auto targets = random_points(rng, 100);  // brute-force path
  KdTree3 tree(targets);
  for (int i = 0; i < 50; ++i) {
    const Vec3 q(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    REQUIRE(tree.nearest(q) == brute_nearest(q, targets));
  }
}

TEST_CASE("compute_gs zero-pads d_neg without non-target objects") {
  const auto target =
      sample_surface_points(Shape::sphere(0.03), RigidTransform::identity(), 50, 1);
  std::vector<Vec3> keypoints = {Vec3(0.1, 0, 0), Vec3(0, 0.1, 0)};
  const auto gs = compute_gs(keypoints, target, {},
                             std::numeric_limits<double>::infinity());
  REQUIRE(gs.d_neg.size() == 2);
  REQUIRE(gs.d_neg[0] == Vec3::Zero());
  REQUIRE(gs.d_neg[1] == Vec3::Zero());
  REQUIRE(std::isinf(gs.d_neg_min_abs));
}

TEST_CASE("compute_gs single candidate d_neg_min") {
  const auto target =
      sample_surface_points(Shape::sphere(0.03), RigidTransform::identity(), 10, 1);
  SampledSurface nontarget;
  nontarget.points = {Vec3(0, 0, 0.1)};
  const auto gs =
      compute_gs({Vec3(0, 0, 0)}, target, {nontarget},
                 std::numeric_limits<double>::infinity());
  REQUIRE(gs.d_neg_min_abs == Approx(0.1).epsilon(1e-12));
}

TEST_CASE("compute_gs equals brute-force recomputation on random scenes") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    SampledSurface target;
    target.points = random_points(rng, 200, 0.5);
    std::vector<SampledSurface> nontargets(3);
    for (auto& s : nontargets) s.points = random_points(rng, 50, 0.5);
    const auto keypoints = random_points(rng, 11, 0.4);
    const double prior = rng.uniform(0.05, 0.5);

    const auto gs = compute_gs(keypoints, target, nontargets, prior);

    std::vector<Vec3> pooled;
    for (const auto& s : nontargets)
      pooled.insert(pooled.end(), s.points.begin(), s.points.end());
    double min_neg = prior;
    for (size_t k = 0; k < keypoints.size(); ++k) {
      const int bt = brute_nearest(keypoints[k], target.points);
      REQUIRE(gs.d_pos[k] == target.points[bt] - keypoints[k]);
      const int bn = brute_nearest(keypoints[k], pooled);
      REQUIRE(gs.d_neg[k] == pooled[bn] - keypoints[k]);
      min_neg = std::min(min_neg, (pooled[bn] - keypoints[k]).norm());
    }
    REQUIRE(gs.d_neg_min_abs == min_neg);
  }
}

TEST_CASE("compute_gs is permutation invariant in surface ordering") {
  Rng rng(5);
  SampledSurface target;
  target.points = random_points(rng, 100, 0.3);
  std::vector<SampledSurface> nontargets(4);
  for (auto& s : nontargets) s.points = random_points(rng, 30, 0.3);
  const auto keypoints = random_points(rng, 11, 0.3);

  const auto a = compute_gs(keypoints, target, nontargets, 1.0);
  std::reverse(nontargets.begin(), nontargets.end());
  for (auto& s : nontargets) std::reverse(s.points.begin(), s.points.end());
  const auto b = compute_gs(keypoints, target, nontargets, 1.0);
  for (int k = 0; k < 11; ++k) {
    REQUIRE(a.d_neg[k] == b.d_neg[k]);
  }
  REQUIRE(a.d_neg_min_abs == b.d_neg_min_abs);
}

TEST_CASE("d_neg_min_abs is monotone non-increasing across calls") {
  Rng rng(6);
  SampledSurface target;
  target.points = random_points(rng, 50, 0.3);
  std::vector<SampledSurface> nontargets(2);
  for (auto& s : nontargets) s.points = random_points(rng, 20, 0.3);

  double prior = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 30; ++step) {
    const auto keypoints = random_points(rng, 11, 0.5);
    const auto gs = compute_gs(keypoints, target, nontargets, prior);
    REQUIRE(gs.d_neg_min_abs <= prior);
    prior = gs.d_neg_min_abs;
  }
}

TEST_CASE("crop_cloud keeps exactly the inside points") {
  Rng rng(8);
  MaskedPointCloud cloud(500);
  for (int i = 0; i < 500; ++i)
    cloud.set(i, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
              rng.uniform() < 0.5 ? 1.0 : 0.0);
  const Aabb box{{-0.3, -0.2, -0.5}, {0.4, 0.6, 0.1}};
  const auto cropped = crop_cloud(cloud, box);

  int expected = 0;
  for (int i = 0; i < 500; ++i)
    if (box.contains(cloud.point(i))) ++expected;
  REQUIRE(cropped.size() == expected);
  for (int i = 0; i < cropped.size(); ++i)
    REQUIRE(box.contains(cropped.point(i)));

  // identity when everything is inside
  const Aabb big{{-2, -2, -2}, {2, 2, 2}};
  const auto same = crop_cloud(cloud, big);
  REQUIRE(same.pts == cloud.pts);

  // empty result allowed
  const Aabb far_box{{5, 5, 5}, {6, 6, 6}};
  REQUIRE(crop_cloud(cloud, far_box).size() == 0);
}

TEST_CASE("downsample random: n == input size gives a permutation") {
  Rng rng(10);
  MaskedPointCloud cloud(64);
  for (int i = 0; i < 64; ++i)
    cloud.set(i, Vec3(i, 2 * i, 3 * i), i % 2);
  const auto out = downsample(cloud, 64, DownsampleMethod::Random, 99);
  REQUIRE(out.size() == 64);
  std::set<double> in_x, out_x;
  for (int i = 0; i < 64; ++i) {
    in_x.insert(cloud.pts(i, 0));
    out_x.insert(out.pts(i, 0));
  }
  REQUIRE(in_x == out_x);
}

TEST_CASE("downsample selects a subset and pads small inputs") {
  Rng rng(12);
  MaskedPointCloud cloud(20000);
  for (int i = 0; i < 20000; ++i)
    cloud.set(i, Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)),
              0.0);
  const auto out = downsample(cloud, 3584, DownsampleMethod::Random, 4);
  REQUIRE(out.size() == 3584);
  // subset check on a sample of rows
  std::set<std::pair<double, double>> input_keys;
  for (int i = 0; i < 20000; ++i)
    input_keys.insert({cloud.pts(i, 0), cloud.pts(i, 1)});
  for (int i = 0; i < 3584; i += 97)
    REQUIRE(input_keys.count({out.pts(i, 0), out.pts(i, 1)}) == 1);

  MaskedPointCloud small(3);
  for (int i = 0; i < 3; ++i) small.set(i, Vec3(i, i, i), 1.0);
  const auto padded = downsample(small, 10, DownsampleMethod::Random, 5);
  REQUIRE(padded.size() == 10);
  for (int i = 0; i < 10; ++i) REQUIRE(padded.pts(i, 0) < 3.0);
}

TEST_CASE("farthest-point downsample picks a square diagonal") {
  MaskedPointCloud corners(4);
  corners.set(0, Vec3(0, 0, 0), 0);
  corners.set(1, Vec3(1, 0, 0), 0);
  corners.set(2, Vec3(1, 1, 0), 0);
  corners.set(3, Vec3(0, 1, 0), 0);
  // oracle: enumerate all pairs, the max-min-distance pairs are diagonals
  for (uint64_t seed = 0; seed < 8; ++seed) {
    const auto out =
        downsample(corners, 2, DownsampleMethod::FarthestPoint, seed);
    const double d = (out.point(0) - out.point(1)).norm();
    REQUIRE(d == Approx(std::sqrt(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("transform_cloud round-trips within 1e-9") {
  Rng rng(14);
  MaskedPointCloud cloud(256);
  for (int i = 0; i < 256; ++i)
    cloud.set(i, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
              i % 2);
  const RigidTransform xf{
      Quat(Eigen::AngleAxisd(rng.uniform(0, 3.0), Vec3(1, 2, 3).normalized())),
      Vec3(0.3, -0.7, 1.1)};
  const auto forth = transform_cloud(cloud, xf);
  const auto back = transform_cloud(forth, xf.inverse());
  double max_err = 0.0;
  for (int i = 0; i < 256; ++i) {
    max_err = std::max(max_err, (back.point(i) - cloud.point(i)).norm());
    REQUIRE(back.mask(i) == cloud.mask(i));
  }
  REQUIRE(max_err < 1e-9);

  // pure translation shifts z
  const auto lifted = transform_cloud(cloud, translate({0, 0, 1}));
  for (int i = 0; i < 256; ++i)
    REQUIRE(lifted.point(i).z() == Approx(cloud.point(i).z() + 1.0));
}

TEST_CASE("synth_ground_cloud is on z=0 and uniform") {
  const auto g = synth_ground_cloud({0.0, -0.5}, {1.0, 0.5}, 512, 3);
  REQUIRE(g.size() == 512);
  for (int i = 0; i < 512; ++i) {
    REQUIRE(g.point(i).z() == 0.0);
    REQUIRE(g.mask(i) == 1.0);
  }
  // chi-square over a 4x4 grid
  const auto big = synth_ground_cloud({0.0, -0.5}, {1.0, 0.5}, 8000, 17);
  int cells[16] = {0};
  for (int i = 0; i < big.size(); ++i) {
    const int cx = std::min(3, static_cast<int>(big.point(i).x() * 4));
    const int cy = std::min(3, static_cast<int>((big.point(i).y() + 0.5) * 4));
    cells[4 * cx + cy] += 1;
  }
  double chi2 = 0.0;
  const double expected = 8000.0 / 16.0;
  for (int c = 0; c < 16; ++c)
    chi2 += (cells[c] - expected) * (cells[c] - expected) / expected;
  REQUIRE(chi2 < 37.7);  // 15 dof, ~0.999 quantile
}

TEST_CASE("synth_robot_cloud covers links area-weighted") {
  RobotParams params;
  const RobotState state = home_state(params);
  const auto cloud = synth_robot_cloud(params, state, 1024, 21);
  REQUIRE(cloud.size() == 1024);
  for (int i = 0; i < cloud.size(); ++i) REQUIRE(cloud.mask(i) == 1.0);

  const auto frame = forward_kinematics(params, state, true);
  // containment: every point on some link surface
  int on_surface = 0;
  for (int i = 0; i < cloud.size(); ++i) {
    for (const auto& link : frame.links) {
      const Vec3 local = link.pose.inverse().apply(cloud.point(i));
      if (std::abs(link.shape.sdf(local)) < 1e-6) {
        ++on_surface;
        break;
      }
    }
  }
  REQUIRE(on_surface == cloud.size());

  // per-link share approximates the analytic area ratio (big sample);
  // links overlap at joints, so classify by nearest surface and compare
  // with a relative band on the larger links
  const auto big = synth_robot_cloud(params, state, 40000, 22);
  double total_area = 0.0;
  for (const auto& link : frame.links) total_area += link.shape.surface_area();
  std::vector<int> counts(frame.links.size(), 0);
  for (int i = 0; i < big.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    size_t best_li = 0;
    for (size_t li = 0; li < frame.links.size(); ++li) {
      const Vec3 local = frame.links[li].pose.inverse().apply(big.point(i));
      const double d = std::abs(frame.links[li].shape.sdf(local));
      if (d < best) {
        best = d;
        best_li = li;
      }
    }
    counts[best_li] += 1;
  }
  for (size_t li = 0; li < frame.links.size(); ++li) {
    const double expected =
        40000.0 * frame.links[li].shape.surface_area() / total_area;
    if (expected < 800.0) continue;
    REQUIRE(std::abs(counts[li] - expected) < 0.2 * expected);
  }
}

TEST_CASE("assemble_student_cloud enforces segment sizes and order") {
  MaskedPointCloud obs(kObservedPoints), ground(kGroundPoints),
      robot(kRobotPoints);
  for (int i = 0; i < obs.size(); ++i) obs.set(i, Vec3(1, 0, 0), 0);
  for (int i = 0; i < ground.size(); ++i) ground.set(i, Vec3(2, 0, 0), 1);
  for (int i = 0; i < robot.size(); ++i) robot.set(i, Vec3(3, 0, 0), 1);
  const auto cloud = assemble_student_cloud(obs, ground, robot);
  REQUIRE(cloud.size() == kStudentCloudPoints);
  REQUIRE(cloud.pts(0, 0) == 1.0);
  REQUIRE(cloud.pts(kObservedPoints, 0) == 2.0);
  REQUIRE(cloud.pts(kObservedPoints + kGroundPoints, 0) == 3.0);
  REQUIRE(cloud.masks_binary());

  MaskedPointCloud wrong(10);
  REQUIRE_THROWS_AS(assemble_student_cloud(wrong, ground, robot),
                    std::invalid_argument);
}

TEST_CASE("cloud binary round-trip (MPC1)") {
  Rng rng(31);
  MaskedPointCloud cloud(777);
  for (int i = 0; i < cloud.size(); ++i)
    cloud.set(i, Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
              i % 2);
  const std::string path =
      (std::filesystem::temp_directory_path() / "cdx_cloud_test.mpc").string();
  save_cloud(cloud, path);
  const auto loaded = load_cloud(path);
  REQUIRE(loaded.size() == cloud.size());
  for (int i = 0; i < cloud.size(); ++i) {
    // f32 persistence: mask exact, xyz within float precision
    REQUIRE(loaded.mask(i) == cloud.mask(i));
    REQUIRE((loaded.point(i) - cloud.point(i)).norm() < 1e-6);
  }
  std::filesystem::remove(path);
}
