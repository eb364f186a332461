#pragma once

#include <string>
#include <vector>

#include "panodream/config.hpp"

namespace panodream::cli {

// Entry point of the panodream tool. Returns the process exit code; errors
// are reported on stderr.
int main(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

// Worlds of a seed range, read from cfg.world_dir when set.
std::vector<world::World> load_worlds(const RunConfig& cfg, const WorldSet& set,
                                      std::vector<std::uint64_t>* seeds = nullptr);

// "x,y,z,yaw".
geom::Pose parse_pose(const std::string& text);

// graph_<seed>.json next to a world_<seed>.json path.
std::string graph_path_for(const std::string& world_path);

}  // namespace panodream::cli
