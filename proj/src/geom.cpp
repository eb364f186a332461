#include "panodream/geom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "panodream/errors.hpp"

namespace panodream::geom {

double normalize_yaw(double yaw) {
  if (!std::isfinite(yaw)) throw DomainError("yaw must be finite");
  double r = std::fmod(yaw + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  r -= kPi;
  // fmod can round up to exactly +pi.
  if (r >= kPi) r -= 2.0 * kPi;
  return r;
}

Eigen::Matrix3d yaw_rotation(double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Eigen::Matrix3d r;
  r << c, 0.0, s,
       0.0, 1.0, 0.0,
       -s, 0.0, c;
  return r;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.position + yaw_rotation(a.yaw) * b.position, a.yaw + b.yaw);
}

Pose inverse(const Pose& p) {
  return Pose(-(yaw_rotation(-p.yaw) * p.position), -p.yaw);
}

Eigen::Vector3d to_world(const Pose& pose, const Eigen::Vector3d& camera_point) {
  return pose.position + yaw_rotation(pose.yaw) * camera_point;
}

Eigen::Vector3d to_camera(const Pose& pose, const Eigen::Vector3d& world_point) {
  return yaw_rotation(-pose.yaw) * (world_point - pose.position);
}

PanoGeometry::PanoGeometry(int width, int height) : width_(width), height_(height) {
  if (width != 2 * height || width < 8 || height < 4 || width % 2 != 0 || height % 2 != 0) {
    throw DomainError("invalid panorama geometry " + std::to_string(width) + "x" +
                      std::to_string(height) + " (need W = 2H, W >= 8, H >= 4, both even)");
  }
}

Eigen::Vector3d pixel_to_ray(const PanoGeometry& g, double x, double y) {
  if (!(x >= 0.0 && x < g.width() && y >= 0.0 && y < g.height())) {
    throw DomainError("pixel coordinate out of range");
  }
  const double theta = 2.0 * kPi * x / g.width() - kPi;
  const double phi = 0.5 * kPi - kPi * y / g.height();
  const double cp = std::cos(phi);
  return {cp * std::sin(theta), std::sin(phi), cp * std::cos(theta)};
}

PixelCoord ray_to_pixel(const PanoGeometry& g, const Eigen::Vector3d& d) {
  const double n = d.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("ray direction must be non-zero");
  const Eigen::Vector3d u = d / n;
  const double horizontal = std::hypot(u.x(), u.z());
  const double theta = horizontal > 0.0 ? std::atan2(u.x(), u.z()) : 0.0;
  const double phi = std::asin(std::clamp(u.y(), -1.0, 1.0));
  double x = g.width() * (theta + kPi) / (2.0 * kPi);
  if (x >= g.width()) x -= g.width();
  if (x < 0.0) x += g.width();
  const double y = g.height() * (0.5 * kPi - phi) / kPi;
  return {x, y};
}

Eigen::Vector3d backproject(const PanoGeometry& g, double x, double y, double depth,
                            const Pose& pose) {
  if (!(depth > 0.0)) throw DomainError("backproject requires depth > 0");
  return to_world(pose, depth * pixel_to_ray(g, x, y));
}

Projection project(const PanoGeometry& g, const Eigen::Vector3d& point, const Pose& pose) {
  const Eigen::Vector3d local = to_camera(pose, point);
  const double depth = local.norm();
  if (!(depth > 0.0)) throw DegenerateProjectionError("point coincides with camera center");
  const PixelCoord px = ray_to_pixel(g, local / depth);
  return {px.x, px.y, depth};
}

}  // namespace panodream::geom
