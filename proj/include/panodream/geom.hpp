#pragma once

#include <Eigen/Core>

namespace panodream::geom {

inline constexpr double kPi = 3.14159265358979323846;

// Fixed metric bound used to normalize depth into (0, 1) at model boundaries.
inline constexpr double kDefaultMaxDepth = 10.0;

// Wraps an angle into [-pi, pi).
double normalize_yaw(double yaw);

// Gravity-aligned camera pose. World frame: x east, y up, z north.
// Yaw rotates about +y; zero faces +z, positive turns toward +x.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double yaw = 0.0;

  Pose() = default;
  Pose(const Eigen::Vector3d& p, double y) : position(p), yaw(normalize_yaw(y)) {}

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.position == b.position && a.yaw == b.yaw;
  }
};

Eigen::Matrix3d yaw_rotation(double yaw);

// compose(a, b) applies b in a's frame: x -> a(b(x)).
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

// Maps a camera-frame point into the world frame and back.
Eigen::Vector3d to_world(const Pose& pose, const Eigen::Vector3d& camera_point);
Eigen::Vector3d to_camera(const Pose& pose, const Eigen::Vector3d& world_point);

// Equirectangular full-sphere image geometry (width = 2 * height).
class PanoGeometry {
 public:
  PanoGeometry(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  int pixel_count() const { return width_ * height_; }

  friend bool operator==(const PanoGeometry&, const PanoGeometry&) = default;

 private:
  int width_;
  int height_;
};

struct PixelCoord {
  double x = 0.0;
  double y = 0.0;
};

struct Projection {
  double x = 0.0;
  double y = 0.0;
  double depth = 0.0;
};

// Continuous pixel coordinates: integer pixel i is sampled at i + 0.5.
// Longitude theta = 2*pi*x/W - pi, latitude phi = pi/2 - pi*y/H.
Eigen::Vector3d pixel_to_ray(const PanoGeometry& g, double x, double y);

// Inverse of pixel_to_ray. x is wrapped into [0, W). Longitude at the poles
// is defined as zero (x = W/2).
PixelCoord ray_to_pixel(const PanoGeometry& g, const Eigen::Vector3d& d);

// depth is the Euclidean ray length in meters.
Eigen::Vector3d backproject(const PanoGeometry& g, double x, double y, double depth,
                            const Pose& pose);

Projection project(const PanoGeometry& g, const Eigen::Vector3d& point, const Pose& pose);

}  // namespace panodream::geom
