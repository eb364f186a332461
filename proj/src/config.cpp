#include "panodream/config.hpp"

#include "panodream/errors.hpp"
#include "panodream/io.hpp"

namespace panodream {

using nlohmann::json;

namespace {

json world_set_json(const WorldSet& s) { return {{"first_seed", s.first_seed}, {"count", s.count}}; }

WorldSet world_set_from_json(const json& j, const char* what) {
  WorldSet s;
  for (const auto& [key, value] : j.items()) {
    if (key == "first_seed") s.first_seed = value.get<std::uint64_t>();
    else if (key == "count") s.count = value.get<int>();
    else throw SchemaError(std::string("unknown ") + what + " key: " + key);
  }
  if (s.count < 1) throw SchemaError(std::string(what) + ".count must be positive");
  return s;
}

json world_params_json(const world::WorldParams& p) {
  return {{"room_count_min", p.room_count_min},
          {"room_count_max", p.room_count_max},
          {"furniture_density", p.furniture_density}};
}

world::WorldParams world_params_from_json(const json& j) {
  world::WorldParams p;
  for (const auto& [key, value] : j.items()) {
    if (key == "room_count_min") p.room_count_min = value.get<int>();
    else if (key == "room_count_max") p.room_count_max = value.get<int>();
    else if (key == "furniture_density") p.furniture_density = value.get<double>();
    else throw SchemaError("unknown world key: " + key);
  }
  return p;
}

}  // namespace

json RunConfig::to_json() const {
  return {{"schema_version", schema_version},
          {"world", world_params_json(world)},
          {"train_worlds", world_set_json(train_worlds)},
          {"test_worlds", world_set_json(test_worlds)},
          {"world_dir", world_dir},
          {"trajectory_length", trajectory_length},
          {"trajectory_seed", trajectory_seed},
          {"structure", structure.to_json()},
          {"structure_train", structure_train.to_json()},
          {"image", image.to_json()},
          {"image_train", image_train.to_json()},
          {"image_samples_per_world", image_samples_per_world},
          {"eval", eval.to_json()}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("run config must be a JSON object");
  if (!j.contains("schema_version")) throw SchemaError("run config lacks schema_version");
  RunConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "schema_version") {
        c.schema_version = value.get<int>();
        if (c.schema_version != kRunConfigSchemaVersion) {
          throw SchemaError("unsupported run config schema_version " +
                            std::to_string(c.schema_version) + " (expected " +
                            std::to_string(kRunConfigSchemaVersion) + ")");
        }
      } else if (key == "world") c.world = world_params_from_json(value);
      else if (key == "train_worlds") c.train_worlds = world_set_from_json(value, "train_worlds");
      else if (key == "test_worlds") c.test_worlds = world_set_from_json(value, "test_worlds");
      else if (key == "world_dir") c.world_dir = value.get<std::string>();
      else if (key == "trajectory_length") c.trajectory_length = value.get<int>();
      else if (key == "trajectory_seed") c.trajectory_seed = value.get<std::uint64_t>();
      else if (key == "structure") c.structure = structgen::StructConfig::from_json(value);
      else if (key == "structure_train") c.structure_train = structgen::TrainConfig::from_json(value);
      else if (key == "image") c.image = imggen::ImageConfig::from_json(value);
      else if (key == "image_train") c.image_train = imggen::ImageTrainConfig::from_json(value);
      else if (key == "image_samples_per_world") c.image_samples_per_world = value.get<int>();
      else if (key == "eval") c.eval = eval::EvalOptions::from_json(value);
      else throw SchemaError("unknown run config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("run config: ") + e.what());
  }
  c.check();
  return c;
}

void RunConfig::check() const {
  if (structure.classes != image.classes || structure.classes != eval.classes) {
    throw SchemaError("structure, image and eval sections disagree on the class count");
  }
  if (structure.max_depth != image.max_depth || structure.max_depth != eval.max_depth) {
    throw SchemaError("structure, image and eval sections disagree on max_depth");
  }
  if (structure.width != eval.width || structure.height != eval.height) {
    throw SchemaError("eval resolution must match the structure model");
  }
  if (trajectory_length < 0) throw SchemaError("trajectory_length must be non-negative");
  if (image_samples_per_world < 1) throw SchemaError("image_samples_per_world must be positive");
}

std::string RunConfig::fingerprint() const { return eval::fingerprint(to_json()); }

RunConfig load_run_config(const std::string& path) {
  try {
    return RunConfig::from_json(io::read_json(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

}  // namespace panodream
