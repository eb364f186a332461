#include "panodream/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "panodream/errors.hpp"

namespace panodream::cloud {

std::size_t GuidanceImage::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.pixels().begin(), valid.pixels().end(), 1));
}

double GuidanceImage::valid_fraction() const {
  return valid.empty() ? 0.0 : static_cast<double>(valid_count()) / valid.size();
}

PointCloud::PointCloud(int class_count) : class_count_(class_count) {
  if (class_count < 1) throw DomainError("class count must be positive");
}

void PointCloud::append(const CloudPoint& point) {
  if (point.class_id < 0 || point.class_id >= class_count_) {
    throw DataError("class id " + std::to_string(point.class_id) + " outside [0, " +
                    std::to_string(class_count_) + ")");
  }
  if (!points_.empty() && point.frame_index < points_.back().frame_index) {
    throw DataError("frame_index must be non-decreasing");
  }
  points_.push_back(point);
  next_frame_index_ = std::max(next_frame_index_, point.frame_index + 1);
}

std::size_t PointCloud::insert_frame(const PanoFrame& frame, int stride) {
  if (stride < 1) throw DomainError("stride must be >= 1");
  const auto& g = frame.geometry;
  if (!frame.sem.same_size(g.width(), g.height()) || !frame.depth.same_size(frame.sem) ||
      !frame.rgb.same_size(frame.sem)) {
    throw ShapeError("frame images do not share the panorama geometry");
  }
  // Validate the whole frame before mutating the cloud.
  for (int y = 0; y < g.height(); y += stride) {
    for (int x = 0; x < g.width(); x += stride) {
      const auto c = frame.sem(x, y);
      if (c < 0 || c >= class_count_) {
        throw DataError("class id " + std::to_string(c) + " at (" + std::to_string(x) + ", " +
                        std::to_string(y) + ") outside [0, " + std::to_string(class_count_) + ")");
      }
    }
  }
  const std::int64_t tag = next_frame_index_;
  std::size_t added = 0;
  for (int y = 0; y < g.height(); y += stride) {
    for (int x = 0; x < g.width(); x += stride) {
      const double d = frame.depth(x, y);
      if (!(d > 0.0)) continue;
      CloudPoint p;
      p.position = geom::backproject(g, x + 0.5, y + 0.5, d, frame.pose);
      p.class_id = frame.sem(x, y);
      p.color = frame.rgb(x, y);
      p.frame_index = tag;
      points_.push_back(p);
      ++added;
    }
  }
  next_frame_index_ = tag + 1;
  return added;
}

GuidanceImage render_guidance(const PointCloud& cloud, const geom::Pose& pose,
                              const geom::PanoGeometry& g, double max_depth) {
  GuidanceImage out(g);
  const int w = g.width();
  const int h = g.height();
  std::vector<std::int64_t> winner(static_cast<std::size_t>(w) * h, -1);
  std::vector<double> zbuf(winner.size(), std::numeric_limits<double>::infinity());
  const auto& pts = cloud.points();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::Vector3d local = geom::to_camera(pose, pts[i].position);
    const double depth = local.norm();
    if (!(depth > 0.0) || depth > max_depth) continue;
    const geom::PixelCoord pc = geom::ray_to_pixel(g, local / depth);
    int px = static_cast<int>(std::floor(pc.x));
    int py = static_cast<int>(std::floor(pc.y));
    px = std::clamp(px, 0, w - 1);
    py = std::clamp(py, 0, h - 1);
    const std::size_t idx = static_cast<std::size_t>(py) * w + px;
    const std::int64_t cur = winner[idx];
    // Points arrive in insertion order, so strict comparison keeps the
    // earlier point on a full tie.
    if (cur < 0 || depth < zbuf[idx] ||
        (depth == zbuf[idx] && pts[i].frame_index < pts[cur].frame_index)) {
      zbuf[idx] = depth;
      winner[idx] = static_cast<std::int64_t>(i);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int64_t k = winner[static_cast<std::size_t>(y) * w + x];
      if (k < 0) continue;
      const auto& p = pts[static_cast<std::size_t>(k)];
      out.sem(x, y) = p.class_id;
      out.depth(x, y) = zbuf[static_cast<std::size_t>(y) * w + x];
      out.rgb(x, y) = p.color;
      out.valid(x, y) = 1;
    }
  }
  return out;
}

namespace {

struct Candidate {
  long dist2 = std::numeric_limits<long>::max();
  int dy = 0;
  int dx = 0;
  int src_x = 0;
  int src_y = 0;

  bool better_than(const Candidate& o) const {
    if (dist2 != o.dist2) return dist2 < o.dist2;
    if (dy != o.dy) return dy < o.dy;
    if (dx != o.dx) return dx < o.dx;
    if (src_x != o.src_x) return src_x < o.src_x;
    return src_y < o.src_y;
  }
};

}  // namespace

DenseStructure nn_fill(const GuidanceImage& guide) {
  const int w = guide.width();
  const int h = guide.height();
  if (guide.valid_count() == 0) throw NoContextError("guidance image has no valid pixels");

  // Sorted valid columns per row.
  std::vector<std::vector<int>> rows(h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (guide.valid(x, y)) rows[y].push_back(x);
    }
  }

  // Best candidate within one row for query column x: smallest wrapped dx,
  // then smallest source column.
  auto best_in_row = [w](const std::vector<int>& cols, int x, int& out_dx, int& out_src) {
    auto it = std::lower_bound(cols.begin(), cols.end(), x);
    int probes[4];
    int n = 0;
    probes[n++] = it != cols.end() ? *it : cols.front();
    probes[n++] = it != cols.begin() ? *(it - 1) : cols.back();
    probes[n++] = cols.front();
    probes[n++] = cols.back();
    out_dx = w + 1;
    out_src = w + 1;
    for (int i = 0; i < n; ++i) {
      const int c = probes[i];
      const int ad = std::abs(c - x);
      const int d = std::min(ad, w - ad);
      if (d < out_dx || (d == out_dx && c < out_src)) {
        out_dx = d;
        out_src = c;
      }
    }
  };

  DenseStructure out{guide.sem, guide.depth};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (guide.valid(x, y)) continue;
      Candidate best;
      for (int dy = 0; dy < h; ++dy) {
        if (static_cast<long>(dy) * dy > best.dist2) break;
        for (int sy : {y - dy, y + dy}) {
          if (sy < 0 || sy >= h || rows[sy].empty()) continue;
          Candidate c;
          best_in_row(rows[sy], x, c.dx, c.src_x);
          c.dy = dy;
          c.src_y = sy;
          c.dist2 = static_cast<long>(dy) * dy + static_cast<long>(c.dx) * c.dx;
          if (c.better_than(best)) best = c;
        }
      }
      out.sem(x, y) = guide.sem(best.src_x, best.src_y);
      out.depth(x, y) = guide.depth(best.src_x, best.src_y);
    }
  }
  return out;
}

}  // namespace panodream::cloud
