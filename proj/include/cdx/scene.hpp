#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdx/math.hpp"
#include "cdx/rng.hpp"
#include "cdx/shape.hpp"

namespace cdx {

using Json = nlohmann::json;

enum class DensityClass { Single, Sparse, Dense, UltraDense };

inline const char* to_string(DensityClass c) {
  switch (c) {
    case DensityClass::Single: return "single";
    case DensityClass::Sparse: return "sparse";
    case DensityClass::Dense: return "dense";
    case DensityClass::UltraDense: return "ultra_dense";
  }
  return "?";
}

inline DensityClass density_class_from_string(const std::string& s) {
  if (s == "single") return DensityClass::Single;
  if (s == "sparse") return DensityClass::Sparse;
  if (s == "dense") return DensityClass::Dense;
  if (s == "ultra_dense") return DensityClass::UltraDense;
  throw std::invalid_argument("unknown density class: " + s);
}

/// Object-count range for a class; single-object scenes are the stage-1
/// training set, the other three follow the evaluation taxonomy.
struct ClassRange {
  int lo, hi;
};

inline ClassRange class_range(DensityClass c) {
  switch (c) {
    case DensityClass::Single: return {1, 1};
    case DensityClass::Sparse: return {4, 8};
    case DensityClass::Dense: return {9, 15};
    case DensityClass::UltraDense: return {16, 25};
  }
  return {1, 1};
}

inline DensityClass classify_count(int n) {
  if (n <= 1) return DensityClass::Single;
  if (n <= 8) return DensityClass::Sparse;
  if (n <= 15) return DensityClass::Dense;
  return DensityClass::UltraDense;
}

struct RigidObject {
  Shape shape;
  RigidTransform pose;
  Vec3 lin_vel = Vec3::Zero();
  Vec3 ang_vel = Vec3::Zero();
  double mass = 0.1;
  bool is_target = false;
};

/// A settled cluttered layout plus the default grasp target.
struct SceneSpec {
  std::vector<RigidObject> objects;
  int target_index = 0;
  DensityClass density_class = DensityClass::Single;
  uint64_t seed = 0;

  const RigidObject& target() const { return objects.at(target_index); }
};

/// Sampling distribution over primitive objects. Ranges in meters.
struct ObjectPool {
  bool spheres = true, boxes = true, cylinders = true;
  double sphere_r_min = 0.022, sphere_r_max = 0.032;
  double box_h_min = 0.018, box_h_max = 0.032;
  double cyl_r_min = 0.018, cyl_r_max = 0.028;
  double cyl_h_min = 0.020, cyl_h_max = 0.035;
  double density = 500.0;  // kg/m^3
  double mass_min = 0.05, mass_max = 0.12;

  Shape sample_shape(Rng& rng) const {
    std::vector<ShapeKind> kinds;
    if (spheres) kinds.push_back(ShapeKind::Sphere);
    if (boxes) kinds.push_back(ShapeKind::Box);
    if (cylinders) kinds.push_back(ShapeKind::Cylinder);
    if (kinds.empty()) throw std::invalid_argument("object pool has no shapes");
    switch (kinds[rng.uniform_index(kinds.size())]) {
      case ShapeKind::Sphere:
        return Shape::sphere(rng.uniform(sphere_r_min, sphere_r_max));
      case ShapeKind::Box:
        return Shape::box(rng.uniform(box_h_min, box_h_max),
                          rng.uniform(box_h_min, box_h_max),
                          rng.uniform(box_h_min, box_h_max));
      case ShapeKind::Cylinder:
        return Shape::cylinder(rng.uniform(cyl_r_min, cyl_r_max),
                               rng.uniform(cyl_h_min, cyl_h_max));
    }
    return Shape::sphere(sphere_r_min);
  }

  RigidObject sample_object(Rng& rng) const {
    RigidObject obj;
    obj.shape = sample_shape(rng);
    obj.mass = clampd(density * obj.shape.volume(), mass_min, mass_max);
    return obj;
  }
};

// ---------------------------------------------------------------------------
// Scene serialization, schema "scene/v1".
// ---------------------------------------------------------------------------

inline Json to_json(const RigidTransform& t) {
  return Json{{"pos", {t.translation.x(), t.translation.y(), t.translation.z()}},
              {"quat",
               {t.rotation.x(), t.rotation.y(), t.rotation.z(), t.rotation.w()}}};
}

inline RigidTransform transform_from_json(const Json& j) {
  const auto& p = j.at("pos");
  const auto& q = j.at("quat");
  RigidTransform t;
  t.translation = Vec3(p.at(0), p.at(1), p.at(2));
  t.rotation = Quat(q.at(3), q.at(0), q.at(1), q.at(2));  // (w, x, y, z) ctor
  t.rotation.normalize();
  return t;
}

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Box: return "box";
    case ShapeKind::Cylinder: return "cylinder";
  }
  return "?";
}

inline ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "sphere") return ShapeKind::Sphere;
  if (s == "box") return ShapeKind::Box;
  if (s == "cylinder") return ShapeKind::Cylinder;
  throw std::invalid_argument("unknown shape kind: " + s);
}

inline Json scene_to_json(const SceneSpec& scene) {
  Json objs = Json::array();
  for (const auto& o : scene.objects) {
    objs.push_back(Json{
        {"kind", to_string(o.shape.kind)},
        {"dims", {o.shape.dims.x(), o.shape.dims.y(), o.shape.dims.z()}},
        {"pose", to_json(o.pose)},
        {"mass", o.mass},
        {"is_target", o.is_target}});
  }
  return Json{{"schema", "scene/v1"},
              {"seed", scene.seed},
              {"density_class", to_string(scene.density_class)},
              {"target_index", scene.target_index},
              {"objects", objs}};
}

inline SceneSpec scene_from_json(const Json& j) {
  if (j.at("schema").get<std::string>() != "scene/v1")
    throw std::runtime_error("unsupported scene schema");
  SceneSpec scene;
  scene.seed = j.at("seed").get<uint64_t>();
  scene.density_class =
      density_class_from_string(j.at("density_class").get<std::string>());
  scene.target_index = j.at("target_index").get<int>();
  for (const auto& oj : j.at("objects")) {
    RigidObject o;
    o.shape.kind = shape_kind_from_string(oj.at("kind").get<std::string>());
    const auto& d = oj.at("dims");
    o.shape.dims = Vec3(d.at(0), d.at(1), d.at(2));
    o.pose = transform_from_json(oj.at("pose"));
    o.mass = oj.at("mass").get<double>();
    o.is_target = oj.at("is_target").get<bool>();
    scene.objects.push_back(o);
  }
  return scene;
}

inline void save_scene(const SceneSpec& scene, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write scene file: " + path);
  f << scene_to_json(scene).dump(2) << "\n";
}

inline SceneSpec load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read scene file: " + path);
  Json j;
  f >> j;
  return scene_from_json(j);
}

}  // namespace cdx
