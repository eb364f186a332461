#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "panodream/classes.hpp"
#include "panodream/cloud.hpp"
#include "panodream/geom.hpp"

namespace panodream::world {

inline constexpr double kCeilingHeight = 2.7;
inline constexpr double kWallThickness = 0.1;
inline constexpr double kCameraHeight = 1.5;
inline constexpr double kDoorHeight = 2.1;
inline constexpr double kMinDoorWidth = 0.9;
inline constexpr double kMinEdgeLength = 1.0;
inline constexpr double kMaxEdgeLength = 3.5;

// Axis-aligned rectangle on the ground plane (x, z), meters.
struct Rect {
  double x0 = 0, z0 = 0, x1 = 0, z1 = 0;
  double width() const { return x1 - x0; }
  double depth() const { return z1 - z0; }
  bool contains(double x, double z, double margin = 0.0) const {
    return x > x0 + margin && x < x1 - margin && z > z0 + margin && z < z1 - margin;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct Room {
  Rect rect;
  Rgb8 wall_color;
  Rgb8 floor_color;
  double brightness = 1.0;
  friend bool operator==(const Room&, const Room&) = default;
};

// Door opening on a shared wall. axis 0: wall along z at x = coord;
// axis 1: wall along x at z = coord. The clear span is [lo, hi].
struct Opening {
  int room_a = 0;
  int room_b = 0;
  int axis = 0;
  double coord = 0;
  double lo = 0;
  double hi = 0;
  Eigen::Vector3d midpoint() const;
  friend bool operator==(const Opening&, const Opening&) = default;
};

// Axis-aligned 3D box with one class label.
struct Box {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();
  std::int32_t class_id = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

struct Furniture {
  Box box;
  int room = 0;
  friend bool operator==(const Furniture&, const Furniture&) = default;
};

// Exterior wall span carrying a window panel.
struct Window {
  int axis = 0;
  double coord = 0;
  double lo = 0;
  double hi = 0;
  double bottom = 0.9;
  double top = 2.0;
  friend bool operator==(const Window&, const Window&) = default;
};

struct SceneSpec {
  std::vector<Room> rooms;
  std::vector<Opening> openings;
  std::vector<Window> windows;
  std::vector<Furniture> furniture;
  double ceiling_height = kCeilingHeight;
  int class_count = kDefaultClassCount;

  // Solid geometry derived from rooms/openings/windows/furniture. Rebuilt by
  // build_geometry(); not serialized.
  std::vector<Box> solids;

  void build_geometry();
  bool operator==(const SceneSpec& o) const;
};

struct NavGraph {
  std::vector<geom::Pose> nodes;
  std::vector<std::pair<int, int>> edges;

  std::vector<std::vector<int>> adjacency() const;
  bool connected() const;
  friend bool operator==(const NavGraph&, const NavGraph&) = default;
};

struct WorldParams {
  int room_count_min = 3;
  int room_count_max = 6;
  // Expected furniture pieces per square meter of floor.
  double furniture_density = 0.08;
  friend bool operator==(const WorldParams&, const WorldParams&) = default;
};

struct World {
  SceneSpec scene;
  NavGraph graph;
};

World generate_world(std::uint64_t seed, const WorldParams& params = {});

// Returns a list of violated invariants (empty when valid).
std::vector<std::string> validate(const SceneSpec& scene);
std::vector<std::string> validate(const SceneSpec& scene, const NavGraph& graph);

struct Hit {
  double distance = 0;
  std::int32_t class_id = 0;
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

// Nearest surface along the ray; throws GeometryError when nothing is hit.
Hit raycast(const SceneSpec& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

// True when there is no solid between a and b (floor and ceiling ignored).
bool line_of_sight(const SceneSpec& scene, const Eigen::Vector3d& a, const Eigen::Vector3d& b);

// Inside a room interior, below the ceiling, above the floor and outside every
// solid, all with the given clearance.
bool in_free_space(const SceneSpec& scene, const Eigen::Vector3d& p, double clearance = 0.1);

// Index of the room whose footprint contains (x, z), or -1.
int room_at(const SceneSpec& scene, double x, double z);

inline const Eigen::Vector3d& light_direction() {
  static const Eigen::Vector3d l = Eigen::Vector3d(1.0, 2.0, 1.0).normalized();
  return l;
}

cloud::PanoFrame render_pano(const SceneSpec& scene, const geom::Pose& pose,
                             const geom::PanoGeometry& g,
                             double max_depth = geom::kDefaultMaxDepth);

// Random walk of 5-8 poses; avoids stepping straight back when possible.
std::vector<geom::Pose> sample_trajectory(const NavGraph& graph, std::uint64_t seed);
// Same walk rule with a fixed length.
std::vector<geom::Pose> sample_trajectory(const NavGraph& graph, std::uint64_t seed, int length);

struct PerturbOptions {
  double sigma = 0.2;
  int max_retries = 100;
  double clearance = 0.1;
};

// Gaussian jitter of the position, yaw untouched; resampled until the pose
// is in free space.
geom::Pose perturb_viewpoint(const SceneSpec& scene, const geom::Pose& pose, std::uint64_t seed,
                             const PerturbOptions& options = {});

}  // namespace panodream::world
