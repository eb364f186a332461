#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "panodream/geom.hpp"
#include "panodream/image.hpp"

namespace panodream::cloud {

// Aligned equirectangular observation at one pose. Depth is Euclidean ray
// length in meters.
struct PanoFrame {
  geom::PanoGeometry geometry{8, 4};
  ClassMap sem;
  DepthMap depth;
  RgbImage rgb;
  geom::Pose pose;

  PanoFrame() = default;
  PanoFrame(const geom::PanoGeometry& g, const geom::Pose& p)
      : geometry(g),
        sem(g.width(), g.height(), 0),
        depth(g.width(), g.height(), 0.0),
        rgb(g.width(), g.height()),
        pose(p) {}
};

// Sparse re-projection of the point cloud at a query pose. Invalid pixels
// carry kInvalidClass, zero depth and black color.
struct GuidanceImage {
  ClassMap sem;
  DepthMap depth;
  RgbImage rgb;
  Mask valid;

  GuidanceImage() = default;
  explicit GuidanceImage(const geom::PanoGeometry& g)
      : sem(g.width(), g.height(), kInvalidClass),
        depth(g.width(), g.height(), 0.0),
        rgb(g.width(), g.height()),
        valid(g.width(), g.height(), 0) {}

  int width() const { return sem.width(); }
  int height() const { return sem.height(); }
  std::size_t valid_count() const;
  double valid_fraction() const;
};

struct CloudPoint {
  Eigen::Vector3d position;
  std::int32_t class_id = 0;
  Rgb8 color;
  std::int64_t frame_index = 0;
};

class PointCloud {
 public:
  explicit PointCloud(int class_count);

  int class_count() const { return class_count_; }
  const std::vector<CloudPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  // Back-projects every stride-th row and column of the frame. The frame
  // receives the next frame index. Returns the number of points added.
  std::size_t insert_frame(const PanoFrame& frame, int stride = 1);

  // Low-level append; frame_index must not decrease.
  void append(const CloudPoint& point);

  std::int64_t next_frame_index() const { return next_frame_index_; }

 private:
  int class_count_;
  std::int64_t next_frame_index_ = 0;
  std::vector<CloudPoint> points_;
};

// Z-buffered single-pixel splatting of the cloud at the given pose. Points
// beyond max_depth are dropped. Ties on depth go to the smaller frame index,
// then to the earlier inserted point.
GuidanceImage render_guidance(const PointCloud& cloud, const geom::Pose& pose,
                              const geom::PanoGeometry& g,
                              double max_depth = geom::kDefaultMaxDepth);

struct DenseStructure {
  ClassMap sem;
  DepthMap depth;
  friend bool operator==(const DenseStructure&, const DenseStructure&) = default;
};

// Fills every invalid pixel from the nearest valid pixel. Distance wraps
// along x and not along y; ties go to smaller |dy|, then smaller wrapped
// |dx|, then smaller source x, then smaller source y.
DenseStructure nn_fill(const GuidanceImage& guide);

}  // namespace panodream::cloud
