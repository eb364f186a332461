#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "panodream/cloud.hpp"
#include "panodream/geom.hpp"
#include "panodream/image.hpp"
#include "panodream/synthworld.hpp"

namespace panodream::io {

// All failures throw IoError naming the path.
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);
nlohmann::json read_json(const std::string& path);
// Two-space indent and a trailing newline.
void write_json(const std::string& path, const nlohmann::json& j);
std::string dump(const nlohmann::json& j);

nlohmann::json pose_to_json(const geom::Pose& p);
geom::Pose pose_from_json(const nlohmann::json& j);
nlohmann::json poses_to_json(const std::vector<geom::Pose>& poses);
std::vector<geom::Pose> poses_from_json(const nlohmann::json& j);

// Solids are derived and not stored; scene_from_json rebuilds them. Unknown
// keys throw SchemaError.
nlohmann::json scene_to_json(const world::SceneSpec& scene);
world::SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json graph_to_json(const world::NavGraph& graph);
world::NavGraph graph_from_json(const nlohmann::json& j);

struct WorldFiles {
  std::string scene;
  std::string graph;
};

WorldFiles world_paths(const std::string& dir, std::uint64_t seed);
void save_world(const WorldFiles& files, const world::World& w, std::uint64_t seed);
world::World load_world(const WorldFiles& files);
// Every world_<seed>.json in dir with its graph, sorted by seed.
std::vector<std::pair<std::uint64_t, world::World>> load_world_dir(const std::string& dir);

// Millimeters, rounded. Non-positive or non-finite depth maps to 0.
std::uint16_t depth_to_mm(double meters);

void write_rgb_png(const std::string& path, const RgbImage& img);
RgbImage read_rgb_png(const std::string& path);
// 16-bit grayscale in millimeters, 0 = invalid.
void write_depth_png(const std::string& path, const DepthMap& depth);
DepthMap read_depth_png(const std::string& path);
// 8-bit grayscale class ids; every id must lie in [0, classes).
void write_class_png(const std::string& path, const ClassMap& sem, int classes);
ClassMap read_class_png(const std::string& path);

struct FrameFiles {
  std::string rgb;
  std::string depth;
  std::string sem;
  std::string meta;
};

FrameFiles frame_paths(const std::string& dir, const std::string& stem);

// Writes the three images and a sidecar with pose and geometry. extra is
// merged into the sidecar.
void write_frame(const FrameFiles& files, const cloud::PanoFrame& frame, int classes,
                 double max_depth, const nlohmann::json& extra = {});
// Depth comes back quantized to millimeters.
cloud::PanoFrame read_frame(const FrameFiles& files);

void ensure_dir(const std::string& dir);

}  // namespace panodream::io
