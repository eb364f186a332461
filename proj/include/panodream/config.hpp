#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "panodream/eval.hpp"
#include "panodream/imggen.hpp"
#include "panodream/structgen.hpp"
#include "panodream/synthworld.hpp"

namespace panodream {

inline constexpr int kRunConfigSchemaVersion = 1;

struct WorldSet {
  std::uint64_t first_seed = 0;
  int count = 50;
  friend bool operator==(const WorldSet&, const WorldSet&) = default;
};

// One document drives every command. Sections mirror the module configs and
// reject unknown keys; schema_version is required.
struct RunConfig {
  int schema_version = kRunConfigSchemaVersion;
  world::WorldParams world;
  WorldSet train_worlds{0, 50};
  WorldSet test_worlds{100000, 15};
  // Generated worlds are read from here when set, else built from the seeds.
  std::string world_dir;
  // Poses per rendered or dreamed trajectory; 0 keeps the sampled length.
  int trajectory_length = 0;
  std::uint64_t trajectory_seed = 0;
  structgen::StructConfig structure;
  structgen::TrainConfig structure_train;
  imggen::ImageConfig image;
  imggen::ImageTrainConfig image_train;
  // Image-stage samples drawn per training world.
  int image_samples_per_world = 4;
  eval::EvalOptions eval;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  // Throws SchemaError when sections disagree on classes, depth range or
  // evaluation resolution.
  void check() const;
  std::string fingerprint() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace panodream
