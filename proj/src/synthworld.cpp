#include "panodream/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "panodream/errors.hpp"

namespace panodream::world {

namespace {

constexpr double kHalfWall = 0.5 * kWallThickness;
constexpr double kGrid = 0.5;
constexpr double kMinRoomSide = 2.5;
constexpr double kNodeSpacing = 1.0;
constexpr double kNodeClearance = 0.3;
constexpr double kMinSharedSpan = 2.0;
constexpr double kDoorEndMargin = 0.3;
constexpr double kDoorKeepout = 1.0;
constexpr int kGenerationAttempts = 40;

double snap(double v) { return std::round(v / kGrid) * kGrid; }

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Rgb8 jitter(std::mt19937_64& rng, Rgb8 c, int amount) {
  auto j = [&](std::uint8_t v) {
    return static_cast<std::uint8_t>(std::clamp(v + uniform_int(rng, -amount, amount), 0, 255));
  };
  return {j(c.r), j(c.g), j(c.b)};
}

Box make_box(double x0, double y0, double z0, double x1, double y1, double z1, std::int32_t cls) {
  Box b;
  b.min = {x0, y0, z0};
  b.max = {x1, y1, z1};
  b.class_id = cls;
  return b;
}

// Box spanning [lo, hi] along a wall line.
Box wall_box(int axis, double coord, double lo, double hi, double y0, double y1, std::int32_t cls) {
  if (axis == 0) return make_box(coord - kHalfWall, y0, lo, coord + kHalfWall, y1, hi, cls);
  return make_box(lo, y0, coord - kHalfWall, hi, y1, coord + kHalfWall, cls);
}

// Slab test. Returns entry distance in (t_min, t_max) and the entry axis.
bool intersect_box(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double t_min,
                   double t_max, double& t_hit, int& axis_hit) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int entry_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < b.min[a] || o[a] > b.max[a]) return false;
      continue;
    }
    const double inv = 1.0 / d[a];
    double ta = (b.min[a] - o[a]) * inv;
    double tb = (b.max[a] - o[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      entry_axis = a;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (entry_axis < 0 || t0 <= t_min || t0 >= t_max) return false;
  t_hit = t0;
  axis_hit = entry_axis;
  return true;
}

struct Span {
  double lo, hi;
};

std::vector<Span> merge_spans(std::vector<Span> spans) {
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.lo < b.lo; });
  std::vector<Span> out;
  for (const auto& s : spans) {
    if (!out.empty() && s.lo <= out.back().hi + 1e-9) {
      out.back().hi = std::max(out.back().hi, s.hi);
    } else {
      out.push_back(s);
    }
  }
  return out;
}

struct Shared {
  int a, b, axis;
  double coord, lo, hi;
};

std::vector<Shared> shared_walls(const std::vector<Room>& rooms) {
  std::vector<Shared> out;
  for (int i = 0; i < static_cast<int>(rooms.size()); ++i) {
    for (int j = i + 1; j < static_cast<int>(rooms.size()); ++j) {
      const Rect& a = rooms[i].rect;
      const Rect& b = rooms[j].rect;
      auto try_axis0 = [&](double ca, double cb) {
        if (std::abs(ca - cb) > 1e-9) return;
        const double lo = std::max(a.z0, b.z0);
        const double hi = std::min(a.z1, b.z1);
        if (hi - lo > 1e-9) out.push_back({i, j, 0, ca, lo, hi});
      };
      auto try_axis1 = [&](double ca, double cb) {
        if (std::abs(ca - cb) > 1e-9) return;
        const double lo = std::max(a.x0, b.x0);
        const double hi = std::min(a.x1, b.x1);
        if (hi - lo > 1e-9) out.push_back({i, j, 1, ca, lo, hi});
      };
      try_axis0(a.x1, b.x0);
      try_axis0(a.x0, b.x1);
      try_axis1(a.z1, b.z0);
      try_axis1(a.z0, b.z1);
    }
  }
  return out;
}

struct FurnitureKind {
  SemanticClass cls;
  double sx, sz, height;
};

constexpr FurnitureKind kFurnitureKinds[] = {
    {SemanticClass::kTable, 1.2, 0.8, 0.75},   {SemanticClass::kChair, 0.5, 0.5, 0.9},
    {SemanticClass::kBed, 2.0, 1.5, 0.6},      {SemanticClass::kSofa, 1.9, 0.9, 0.85},
    {SemanticClass::kCabinet, 1.0, 0.5, 1.9},  {SemanticClass::kLamp, 0.4, 0.4, 1.6},
    {SemanticClass::kAppliance, 0.7, 0.7, 0.9},
};

bool boxes_overlap_xz(const Box& a, const Box& b, double gap) {
  return a.min.x() < b.max.x() + gap && b.min.x() < a.max.x() + gap &&
         a.min.z() < b.max.z() + gap && b.min.z() < a.max.z() + gap;
}

// Ground footprint kept clear around a door, reaching into both rooms.
Box door_keepout(const Opening& o) {
  if (o.axis == 0) {
    return make_box(o.coord - kDoorKeepout, 0, o.lo - 0.2, o.coord + kDoorKeepout, kCeilingHeight,
                    o.hi + 0.2, 0);
  }
  return make_box(o.lo - 0.2, 0, o.coord - kDoorKeepout, o.hi + 0.2, kCeilingHeight,
                  o.coord + kDoorKeepout, 0);
}

bool standable(const SceneSpec& scene, double x, double z, double clearance) {
  const Eigen::Vector3d p(x, kCameraHeight, z);
  if (!in_free_space(scene, p, 0.0)) return false;
  for (const auto& s : scene.solids) {
    if (s.min.y() > kCameraHeight) continue;
    if (x > s.min.x() - clearance && x < s.max.x() + clearance && z > s.min.z() - clearance &&
        z < s.max.z() + clearance) {
      return false;
    }
  }
  return true;
}

NavGraph build_nav_graph(const SceneSpec& scene) {
  NavGraph g;
  double bx0 = std::numeric_limits<double>::infinity(), bz0 = bx0;
  double bx1 = -bx0, bz1 = -bx0;
  for (const auto& r : scene.rooms) {
    bx0 = std::min(bx0, r.rect.x0);
    bz0 = std::min(bz0, r.rect.z0);
    bx1 = std::max(bx1, r.rect.x1);
    bz1 = std::max(bz1, r.rect.z1);
  }
  for (double z = bz0 + 0.75; z < bz1; z += kNodeSpacing) {
    for (double x = bx0 + 0.75; x < bx1; x += kNodeSpacing) {
      if (standable(scene, x, z, kNodeClearance)) {
        g.nodes.emplace_back(Eigen::Vector3d(x, kCameraHeight, z), 0.0);
      }
    }
  }
  for (const auto& o : scene.openings) g.nodes.emplace_back(o.midpoint(), 0.0);
  for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
    for (int j = i + 1; j < static_cast<int>(g.nodes.size()); ++j) {
      const double d = (g.nodes[i].position - g.nodes[j].position).norm();
      if (d < kMinEdgeLength || d > kMaxEdgeLength) continue;
      if (line_of_sight(scene, g.nodes[i].position, g.nodes[j].position)) g.edges.emplace_back(i, j);
    }
  }
  return g;
}

std::vector<Room> split_rooms(std::mt19937_64& rng, int count) {
  const double area = count * uniform(rng, 9.0, 16.0);
  const double aspect = uniform(rng, 0.75, 1.33);
  double w = std::max(snap(std::sqrt(area * aspect)), 3.0);
  double d = std::max(snap(area / w), 3.0);
  std::vector<Rect> rects{{snap(-0.5 * w), snap(-0.5 * d), snap(-0.5 * w) + w, snap(-0.5 * d) + d}};
  while (static_cast<int>(rects.size()) < count) {
    // Split the largest splittable rectangle along its longer side.
    int pick = -1;
    double best_area = 0;
    for (int i = 0; i < static_cast<int>(rects.size()); ++i) {
      const Rect& r = rects[i];
      const double longest = std::max(r.width(), r.depth());
      if (longest >= 2 * kMinRoomSide && r.width() * r.depth() > best_area) {
        best_area = r.width() * r.depth();
        pick = i;
      }
    }
    if (pick < 0) return {};
    Rect r = rects[pick];
    const bool along_x = r.width() >= r.depth();
    const double lo = (along_x ? r.x0 : r.z0) + kMinRoomSide;
    const double hi = (along_x ? r.x1 : r.z1) - kMinRoomSide;
    const int steps = static_cast<int>(std::floor((hi - lo) / kGrid + 1e-9));
    const double cut = lo + kGrid * uniform_int(rng, 0, steps);
    Rect a = r, b = r;
    if (along_x) {
      a.x1 = cut;
      b.x0 = cut;
    } else {
      a.z1 = cut;
      b.z0 = cut;
    }
    rects[pick] = a;
    rects.push_back(b);
  }
  std::vector<Room> rooms;
  const auto& palette = default_palette();
  for (const auto& r : rects) {
    Room room;
    room.rect = r;
    room.wall_color = jitter(rng, palette[class_id(SemanticClass::kWall)], 24);
    room.floor_color = jitter(rng, palette[class_id(SemanticClass::kFloor)], 24);
    room.brightness = std::round(uniform(rng, 0.75, 1.0) * 1000.0) / 1000.0;
    rooms.push_back(room);
  }
  return rooms;
}

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) i = parent[i] = parent[parent[i]];
  return i;
}

std::vector<Opening> place_openings(std::mt19937_64& rng, const std::vector<Room>& rooms) {
  auto shared = shared_walls(rooms);
  std::vector<Shared> candidates;
  for (const auto& s : shared) {
    if (s.hi - s.lo >= kMinSharedSpan) candidates.push_back(s);
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<int> parent(rooms.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<Opening> out;
  for (const auto& s : candidates) {
    const int ra = find_root(parent, s.a);
    const int rb = find_root(parent, s.b);
    const bool joins = ra != rb;
    if (!joins && uniform(rng, 0.0, 1.0) > 0.25) continue;
    if (joins) parent[ra] = rb;
    const double width = std::round(uniform(rng, kMinDoorWidth, 1.2) * 100.0) / 100.0;
    const double c_lo = s.lo + kDoorEndMargin + 0.5 * width;
    const double c_hi = s.hi - kDoorEndMargin - 0.5 * width;
    const double center = std::round(uniform(rng, c_lo, c_hi) * 100.0) / 100.0;
    Opening o;
    o.room_a = s.a;
    o.room_b = s.b;
    o.axis = s.axis;
    o.coord = s.coord;
    o.lo = center - 0.5 * width;
    o.hi = center + 0.5 * width;
    out.push_back(o);
  }
  std::sort(out.begin(), out.end(), [](const Opening& a, const Opening& b) {
    return std::tie(a.room_a, a.room_b, a.axis, a.lo) < std::tie(b.room_a, b.room_b, b.axis, b.lo);
  });
  return out;
}

std::vector<Window> place_windows(std::mt19937_64& rng, const std::vector<Room>& rooms) {
  double bx0 = std::numeric_limits<double>::infinity(), bz0 = bx0;
  double bx1 = -bx0, bz1 = -bx0;
  for (const auto& r : rooms) {
    bx0 = std::min(bx0, r.rect.x0);
    bz0 = std::min(bz0, r.rect.z0);
    bx1 = std::max(bx1, r.rect.x1);
    bz1 = std::max(bz1, r.rect.z1);
  }
  std::vector<Window> out;
  for (const auto& room : rooms) {
    const Rect& r = room.rect;
    struct Edge {
      int axis;
      double coord, lo, hi;
      bool exterior;
    };
    const Edge edges[] = {{0, r.x0, r.z0, r.z1, r.x0 == bx0}, {0, r.x1, r.z0, r.z1, r.x1 == bx1},
                          {1, r.z0, r.x0, r.x1, r.z0 == bz0}, {1, r.z1, r.x0, r.x1, r.z1 == bz1}};
    for (const auto& e : edges) {
      if (!e.exterior) continue;
      const double width = std::round(uniform(rng, 0.8, 1.6) * 100.0) / 100.0;
      const bool place = uniform(rng, 0.0, 1.0) < 0.5;
      if (!place || e.hi - e.lo < width + 1.0) continue;
      const double lo = e.lo + 0.5;
      const double hi = e.hi - 0.5 - width;
      const double start = std::round(uniform(rng, lo, hi) * 100.0) / 100.0;
      Window w;
      w.axis = e.axis;
      w.coord = e.coord;
      w.lo = start;
      w.hi = start + width;
      out.push_back(w);
    }
  }
  return out;
}

std::vector<Furniture> place_furniture(std::mt19937_64& rng, const std::vector<Room>& rooms,
                                       const std::vector<Opening>& openings, double density) {
  std::vector<Furniture> out;
  std::vector<Box> keepouts;
  for (const auto& o : openings) keepouts.push_back(door_keepout(o));
  for (int ri = 0; ri < static_cast<int>(rooms.size()); ++ri) {
    const Rect& r = rooms[ri].rect;
    const double mean = density * r.width() * r.depth();
    const int count = std::min(6, static_cast<int>(std::poisson_distribution<int>(mean)(rng)));
    for (int k = 0; k < count; ++k) {
      const auto& kind = kFurnitureKinds[uniform_int(rng, 0, std::size(kFurnitureKinds) - 1)];
      const bool rotate = uniform(rng, 0.0, 1.0) < 0.5;
      const double sx = rotate ? kind.sz : kind.sx;
      const double sz = rotate ? kind.sx : kind.sz;
      const double margin = kHalfWall + 0.1;
      if (sx + 2 * margin >= r.width() || sz + 2 * margin >= r.depth()) continue;
      for (int attempt = 0; attempt < 30; ++attempt) {
        const double x0 =
            std::round(uniform(rng, r.x0 + margin, r.x1 - margin - sx) * 100.0) / 100.0;
        const double z0 =
            std::round(uniform(rng, r.z0 + margin, r.z1 - margin - sz) * 100.0) / 100.0;
        Box b = make_box(x0, 0.0, z0, x0 + sx, kind.height, z0 + sz, class_id(kind.cls));
        bool ok = true;
        for (const auto& f : out) ok = ok && !boxes_overlap_xz(b, f.box, 0.3);
        for (const auto& kbox : keepouts) ok = ok && !boxes_overlap_xz(b, kbox, 0.0);
        if (!ok) continue;
        out.push_back({b, ri});
        break;
      }
    }
  }
  return out;
}

}  // namespace

Eigen::Vector3d Opening::midpoint() const {
  const double c = 0.5 * (lo + hi);
  return axis == 0 ? Eigen::Vector3d(coord, kCameraHeight, c) : Eigen::Vector3d(c, kCameraHeight, coord);
}

bool SceneSpec::operator==(const SceneSpec& o) const {
  return rooms == o.rooms && openings == o.openings && windows == o.windows &&
         furniture == o.furniture && ceiling_height == o.ceiling_height &&
         class_count == o.class_count;
}

void SceneSpec::build_geometry() {
  solids.clear();
  const auto wall = class_id(SemanticClass::kWall);
  const auto door = class_id(SemanticClass::kDoor);
  const auto window = class_id(SemanticClass::kWindow);
  const double h = ceiling_height;
  for (int axis = 0; axis < 2; ++axis) {
    std::map<double, std::vector<Span>> lines;
    for (const auto& room : rooms) {
      const Rect& r = room.rect;
      if (axis == 0) {
        lines[r.x0].push_back({r.z0, r.z1});
        lines[r.x1].push_back({r.z0, r.z1});
      } else {
        lines[r.z0].push_back({r.x0, r.x1});
        lines[r.z1].push_back({r.x0, r.x1});
      }
    }
    for (auto& [coord, spans] : lines) {
      struct Cut {
        double lo, hi;
        const Window* window;
      };
      std::vector<Cut> cuts;
      for (const auto& o : openings) {
        if (o.axis == axis && o.coord == coord) cuts.push_back({o.lo, o.hi, nullptr});
      }
      for (const auto& w : windows) {
        if (w.axis == axis && w.coord == coord) cuts.push_back({w.lo, w.hi, &w});
      }
      std::sort(cuts.begin(), cuts.end(), [](const Cut& a, const Cut& b) { return a.lo < b.lo; });
      for (const auto& span : merge_spans(spans)) {
        double start = span.lo - kHalfWall;
        const double end = span.hi + kHalfWall;
        for (const auto& c : cuts) {
          if (c.hi <= span.lo || c.lo >= span.hi) continue;
          if (c.window == nullptr) {
            const double jamb_lo = c.lo - kHalfWall;
            const double jamb_hi = c.hi + kHalfWall;
            if (jamb_lo > start) solids.push_back(wall_box(axis, coord, start, jamb_lo, 0, h, wall));
            solids.push_back(wall_box(axis, coord, jamb_lo, c.lo, 0, kDoorHeight, door));
            solids.push_back(wall_box(axis, coord, c.hi, jamb_hi, 0, kDoorHeight, door));
            solids.push_back(wall_box(axis, coord, jamb_lo, jamb_hi, kDoorHeight, h, door));
            start = jamb_hi;
          } else {
            const Window& w = *c.window;
            if (c.lo > start) solids.push_back(wall_box(axis, coord, start, c.lo, 0, h, wall));
            solids.push_back(wall_box(axis, coord, c.lo, c.hi, 0, w.bottom, wall));
            solids.push_back(wall_box(axis, coord, c.lo, c.hi, w.bottom, w.top, window));
            solids.push_back(wall_box(axis, coord, c.lo, c.hi, w.top, h, wall));
            start = c.hi;
          }
        }
        if (end > start) solids.push_back(wall_box(axis, coord, start, end, 0, h, wall));
      }
    }
  }
  for (const auto& f : furniture) solids.push_back(f.box);
}

std::vector<std::vector<int>> NavGraph::adjacency() const {
  std::vector<std::vector<int>> adj(nodes.size());
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& v : adj) std::sort(v.begin(), v.end());
  return adj;
}

bool NavGraph::connected() const {
  if (nodes.empty()) return false;
  const auto adj = adjacency();
  std::vector<char> seen(nodes.size(), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    for (int m : adj[n]) {
      if (!seen[m]) {
        seen[m] = 1;
        ++count;
        stack.push_back(m);
      }
    }
  }
  return count == nodes.size();
}

int room_at(const SceneSpec& scene, double x, double z) {
  for (int i = 0; i < static_cast<int>(scene.rooms.size()); ++i) {
    const Rect& r = scene.rooms[i].rect;
    if (x >= r.x0 && x <= r.x1 && z >= r.z0 && z <= r.z1) return i;
  }
  return -1;
}

bool in_free_space(const SceneSpec& scene, const Eigen::Vector3d& p, double clearance) {
  if (!(p.y() > clearance && p.y() < scene.ceiling_height - clearance)) return false;
  if (room_at(scene, p.x(), p.z()) < 0) return false;
  for (const auto& s : scene.solids) {
    if ((p.array() > s.min.array() - clearance).all() &&
        (p.array() < s.max.array() + clearance).all()) {
      return false;
    }
  }
  return true;
}

Hit raycast(const SceneSpec& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  Hit best;
  best.distance = std::numeric_limits<double>::infinity();
  bool found = false;
  if (dir.y() < -1e-15) {
    const double t = -origin.y() / dir.y();
    if (t > 0.0 && t < best.distance) {
      best.distance = t;
      best.class_id = class_id(SemanticClass::kFloor);
      best.normal = Eigen::Vector3d::UnitY();
      found = true;
    }
  } else if (dir.y() > 1e-15) {
    const double t = (scene.ceiling_height - origin.y()) / dir.y();
    if (t > 0.0 && t < best.distance) {
      best.distance = t;
      best.class_id = class_id(SemanticClass::kCeiling);
      best.normal = -Eigen::Vector3d::UnitY();
      found = true;
    }
  }
  for (const auto& s : scene.solids) {
    double t = 0;
    int axis = 0;
    if (intersect_box(s, origin, dir, 0.0, best.distance, t, axis)) {
      best.distance = t;
      best.class_id = s.class_id;
      best.normal = Eigen::Vector3d::Zero();
      best.normal[axis] = dir[axis] > 0 ? -1.0 : 1.0;
      found = true;
    }
  }
  if (!found) throw GeometryError("ray escaped the scene");
  best.point = origin + best.distance * dir;
  return best;
}

bool line_of_sight(const SceneSpec& scene, const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const Eigen::Vector3d d = b - a;
  for (const auto& s : scene.solids) {
    double t = 0;
    int axis = 0;
    if (intersect_box(s, a, d, 0.0, 1.0, t, axis)) return false;
    // A segment starting inside a solid is blocked as well.
    if ((a.array() > s.min.array()).all() && (a.array() < s.max.array()).all()) return false;
  }
  return true;
}

cloud::PanoFrame render_pano(const SceneSpec& scene, const geom::Pose& pose,
                             const geom::PanoGeometry& g, double max_depth) {
  if (!in_free_space(scene, pose.position, 0.0)) {
    throw GeometryError("render pose is not in free space");
  }
  cloud::PanoFrame frame(g, pose);
  const auto& palette = default_palette();
  const auto rot = geom::yaw_rotation(pose.yaw);
  const Eigen::Vector3d& light = light_direction();
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      const Eigen::Vector3d dir = rot * geom::pixel_to_ray(g, x + 0.5, y + 0.5);
      const Hit hit = raycast(scene, pose.position, dir);
      frame.depth(x, y) = std::min(hit.distance, max_depth);
      frame.sem(x, y) = hit.class_id;
      const Eigen::Vector3d probe = hit.point + 0.06 * hit.normal;
      const int room = room_at(scene, probe.x(), probe.z());
      Rgb8 base = palette[static_cast<std::size_t>(hit.class_id)];
      double brightness = 1.0;
      if (room >= 0) {
        const Room& r = scene.rooms[room];
        brightness = r.brightness;
        if (hit.class_id == class_id(SemanticClass::kWall)) base = r.wall_color;
        if (hit.class_id == class_id(SemanticClass::kFloor)) base = r.floor_color;
      }
      const double shade = brightness * std::max(0.2, std::abs(hit.normal.dot(light)));
      auto channel = [shade](std::uint8_t c) {
        return static_cast<std::uint8_t>(std::clamp(std::round(c * shade), 0.0, 255.0));
      };
      frame.rgb(x, y) = {channel(base.r), channel(base.g), channel(base.b)};
    }
  }
  return frame;
}

std::vector<std::string> validate(const SceneSpec& scene) {
  std::vector<std::string> errors;
  const int n = static_cast<int>(scene.rooms.size());
  if (n == 0) errors.push_back("scene has no rooms");
  if (scene.ceiling_height != kCeilingHeight) errors.push_back("ceiling height must be 2.7");
  for (int i = 0; i < n; ++i) {
    const Rect& a = scene.rooms[i].rect;
    if (!(a.width() > 0 && a.depth() > 0)) errors.push_back("room " + std::to_string(i) + " is empty");
    for (int j = i + 1; j < n; ++j) {
      const Rect& b = scene.rooms[j].rect;
      const double ox = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
      const double oz = std::min(a.z1, b.z1) - std::max(a.z0, b.z0);
      if (ox > 1e-9 && oz > 1e-9) {
        errors.push_back("rooms " + std::to_string(i) + " and " + std::to_string(j) + " overlap");
      }
    }
  }
  const auto shared = shared_walls(scene.rooms);
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t k = 0; k < scene.openings.size(); ++k) {
    const Opening& o = scene.openings[k];
    const std::string tag = "opening " + std::to_string(k);
    if (o.room_a < 0 || o.room_a >= n || o.room_b < 0 || o.room_b >= n) {
      errors.push_back(tag + " references a missing room");
      continue;
    }
    if (o.hi - o.lo < kMinDoorWidth - 1e-9) errors.push_back(tag + " narrower than 0.9 m");
    bool on_wall = false;
    for (const auto& s : shared) {
      const bool same = (s.a == std::min(o.room_a, o.room_b) && s.b == std::max(o.room_a, o.room_b));
      if (same && s.axis == o.axis && std::abs(s.coord - o.coord) < 1e-9 && o.lo >= s.lo - 1e-9 &&
          o.hi <= s.hi + 1e-9) {
        on_wall = true;
      }
    }
    if (!on_wall) errors.push_back(tag + " does not lie on a shared wall");
    parent[find_root(parent, o.room_a)] = find_root(parent, o.room_b);
  }
  for (int i = 1; i < n; ++i) {
    if (find_root(parent, i) != find_root(parent, 0)) {
      errors.push_back("room adjacency graph is not connected");
      break;
    }
  }
  for (std::size_t k = 0; k < scene.furniture.size(); ++k) {
    const Furniture& f = scene.furniture[k];
    const std::string tag = "furniture " + std::to_string(k);
    if (f.box.class_id < class_id(SemanticClass::kTable) || f.box.class_id >= scene.class_count) {
      errors.push_back(tag + " has a non-furniture class");
    }
    int inside = 0;
    for (const auto& room : scene.rooms) {
      const Rect& r = room.rect;
      if (f.box.min.x() > r.x0 + kHalfWall && f.box.max.x() < r.x1 - kHalfWall &&
          f.box.min.z() > r.z0 + kHalfWall && f.box.max.z() < r.z1 - kHalfWall) {
        ++inside;
      }
    }
    if (inside != 1) errors.push_back(tag + " is not strictly inside exactly one room");
    for (const auto& o : scene.openings) {
      if (boxes_overlap_xz(f.box, door_keepout(o), 0.0)) {
        errors.push_back(tag + " blocks an opening");
        break;
      }
    }
  }
  return errors;
}

std::vector<std::string> validate(const SceneSpec& scene, const NavGraph& graph) {
  auto errors = validate(scene);
  SceneSpec built = scene;
  if (built.solids.empty()) built.build_geometry();
  if (graph.nodes.empty()) errors.push_back("navigation graph has no nodes");
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (!in_free_space(built, graph.nodes[i].position, 0.0)) {
      errors.push_back("node " + std::to_string(i) + " is not in free space");
    }
  }
  for (const auto& [a, b] : graph.edges) {
    const std::string tag = "edge " + std::to_string(a) + "-" + std::to_string(b);
    if (a < 0 || b < 0 || a >= static_cast<int>(graph.nodes.size()) ||
        b >= static_cast<int>(graph.nodes.size()) || a == b) {
      errors.push_back(tag + " references invalid nodes");
      continue;
    }
    const double d = (graph.nodes[a].position - graph.nodes[b].position).norm();
    if (d < kMinEdgeLength - 1e-9 || d > kMaxEdgeLength + 1e-9) {
      errors.push_back(tag + " length outside [1.0, 3.5] m");
    }
    if (!line_of_sight(built, graph.nodes[a].position, graph.nodes[b].position)) {
      errors.push_back(tag + " has no line of sight");
    }
  }
  if (!graph.nodes.empty() && !graph.connected()) errors.push_back("navigation graph is not connected");
  return errors;
}

World generate_world(std::uint64_t seed, const WorldParams& params) {
  if (params.room_count_min < 1 || params.room_count_max > 12 ||
      params.room_count_min > params.room_count_max) {
    throw DomainError("room_count_range must lie within [1, 12]");
  }
  if (!(params.furniture_density >= 0.0)) throw DomainError("furniture_density must be >= 0");
  for (int attempt = 0; attempt < kGenerationAttempts; ++attempt) {
    auto rng = make_rng(seed, static_cast<std::uint64_t>(attempt));
    const int count = uniform_int(rng, params.room_count_min, params.room_count_max);
    World w;
    w.scene.rooms = split_rooms(rng, count);
    if (static_cast<int>(w.scene.rooms.size()) != count) continue;
    w.scene.openings = place_openings(rng, w.scene.rooms);
    w.scene.windows = place_windows(rng, w.scene.rooms);
    w.scene.furniture = place_furniture(rng, w.scene.rooms, w.scene.openings, params.furniture_density);
    w.scene.build_geometry();
    w.graph = build_nav_graph(w.scene);
    if (w.graph.nodes.size() < 2) continue;
    if (validate(w.scene, w.graph).empty()) return w;
  }
  throw GenerationError("world generation failed invariants for seed " + std::to_string(seed));
}

namespace {

std::vector<geom::Pose> random_walk(const NavGraph& graph, std::mt19937_64& rng, int length) {
  const auto adj = graph.adjacency();
  int current = uniform_int(rng, 0, static_cast<int>(graph.nodes.size()) - 1);
  int previous = -1;
  std::vector<geom::Pose> out{graph.nodes[current]};
  while (static_cast<int>(out.size()) < length) {
    const auto& nbrs = adj[current];
    if (nbrs.empty()) throw DomainError("trajectory reached an isolated node");
    std::vector<int> options;
    for (int n : nbrs) {
      if (n != previous) options.push_back(n);
    }
    if (options.empty()) options = nbrs;
    const int next = options[uniform_int(rng, 0, static_cast<int>(options.size()) - 1)];
    previous = current;
    current = next;
    out.push_back(graph.nodes[current]);
  }
  return out;
}

}  // namespace

std::vector<geom::Pose> sample_trajectory(const NavGraph& graph, std::uint64_t seed) {
  if (graph.nodes.size() < 2) throw DomainError("trajectory sampling needs at least 2 nodes");
  auto rng = make_rng(seed, 0x7261'6a65'6374ULL);
  const int length = uniform_int(rng, 5, 8);
  return random_walk(graph, rng, length);
}

std::vector<geom::Pose> sample_trajectory(const NavGraph& graph, std::uint64_t seed, int length) {
  if (graph.nodes.size() < 2) throw DomainError("trajectory sampling needs at least 2 nodes");
  if (length < 1) throw DomainError("trajectory length must be positive");
  auto rng = make_rng(seed, 0x6669'7865'646cULL);
  return random_walk(graph, rng, length);
}

geom::Pose perturb_viewpoint(const SceneSpec& scene, const geom::Pose& pose, std::uint64_t seed,
                             const PerturbOptions& options) {
  auto rng = make_rng(seed, 0x7065'7274ULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int attempt = 0; attempt < options.max_retries; ++attempt) {
    const Eigen::Vector3d eps(noise(rng), noise(rng), noise(rng));
    geom::Pose candidate = pose;
    candidate.position += options.sigma * eps;
    if (in_free_space(scene, candidate.position, options.clearance)) return candidate;
  }
  throw AugmentationError("no free-space viewpoint after " + std::to_string(options.max_retries) +
                          " retries");
}

}  // namespace panodream::world
