#include <unistd.h>

#include <filesystem>
#include <map>

#include "doctest.h"
#include "panodream/cli.hpp"
#include "panodream/errors.hpp"
#include "panodream/io.hpp"

using namespace panodream;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("panodream_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "panodream");
  return cli::run(args);
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_text(e.path().string());
  }
  return out;
}

std::size_t count_files(const fs::path& dir, const std::string& suffix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    n += name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  }
  return n;
}

RunConfig small_config(const std::string& world_dir) {
  RunConfig c;
  c.world_dir = world_dir;
  c.train_worlds = {0, 4};
  c.test_worlds = {4, 2};
  c.trajectory_length = 6;
  c.structure_train.steps = 6;
  c.structure_train.batch = 2;
  c.eval.trajectories_per_world = 1;
  c.eval.steps = 3;
  c.image = {};
  c.image.width = 32;
  c.image.height = 16;
  c.image.widths = {4, 4, 3, 3};
  c.image.spade_hidden = 4;
  c.image_train.steps = 3;
  c.image_train.batch = 2;
  c.image_samples_per_world = 1;
  return c;
}

}  // namespace

TEST_CASE("worldgen writes deterministic, valid world files") {
  TempDir tmp("worldgen");
  REQUIRE(run({"worldgen", "--seed", "10", "--count", "5", "--out", tmp / "a"}) == 0);
  REQUIRE(run({"worldgen", "--seed", "10", "--count", "5", "--out", tmp / "b"}) == 0);
  CHECK(count_files(tmp.path / "a", ".json") == 10);
  CHECK(count_files(tmp.path / "a", ".json") == count_files(tmp.path / "a", ""));
  CHECK(snapshot(tmp.path / "a") == snapshot(tmp.path / "b"));
  for (int s = 10; s < 15; ++s) {
    CHECK(run({"validate", "--world", tmp / ("a/world_" + std::to_string(s) + ".json")}) == 0);
  }
  const auto w = io::load_world(io::world_paths(tmp / "a", 12));
  CHECK(w.scene == world::generate_world(12).scene);
  CHECK(w.graph == world::generate_world(12).graph);

  // Reformatted but equivalent JSON fails the byte round trip.
  const auto path = tmp / "a/world_11.json";
  io::write_text(path, io::read_json(path).dump());
  CHECK(run({"validate", "--world", path}) == 1);
  // Broken invariants are reported.
  auto scene = io::read_json(tmp / "a/world_12.json");
  scene["rooms"][0]["rect"] = {0.0, 0.0, 0.2, 0.2};
  io::write_json(tmp / "a/world_12.json", scene);
  CHECK(run({"validate", "--world", tmp / "a/world_12.json"}) == 1);
  CHECK(run({"validate", "--world", tmp / "a/world_99.json"}) == 2);
}

TEST_CASE("render writes the documented formats") {
  TempDir tmp("render");
  REQUIRE(run({"worldgen", "--seed", "3", "--out", tmp / "w"}) == 0);
  const auto world_file = tmp / "w/world_3.json";
  REQUIRE(run({"render", "--world", world_file, "--traj-seed", "1", "--out", tmp / "r"}) == 0);
  const auto traj = io::poses_from_json(io::read_json(tmp / "r/trajectory.json").at("poses"));
  CHECK(count_files(tmp.path / "r", ".sem.png") == traj.size());

  const auto w = world::generate_world(3);
  const auto f = world::render_pano(w.scene, traj[0], geom::PanoGeometry(64, 32));
  const auto back = io::read_frame(io::frame_paths(tmp / "r", "frame_000"));
  CHECK(back.sem == f.sem);
  CHECK(back.rgb == f.rgb);
  CHECK(back.pose == traj[0]);
  for (std::size_t i = 0; i < f.depth.size(); ++i) {
    CHECK(io::depth_to_mm(back.depth.pixels()[i]) == io::depth_to_mm(f.depth.pixels()[i]));
  }

  // Same trajectory file, explicit geometry.
  REQUIRE(run({"render", "--world", world_file, "--traj", tmp / "r/trajectory.json", "--width", "32",
               "--height", "16", "--out", tmp / "r2"}) == 0);
  CHECK(io::read_rgb_png(tmp / "r2/frame_001.rgb.png").width() == 32);

  const auto& p = w.graph.nodes[0].position;
  const std::string pose = std::to_string(p.x()) + "," + std::to_string(p.y()) + "," + std::to_string(p.z()) + ",0.5";
  REQUIRE(run({"render", "--world", world_file, "--pose", pose, "--out", tmp / "r3"}) == 0);
  CHECK(count_files(tmp.path / "r3", ".rgb.png") == 1);

  // Inside a wall, and outside the house.
  const auto& room = w.scene.rooms[0].rect;
  const std::string in_wall = std::to_string(room.x0) + ",1.5," + std::to_string((room.z0 + room.z1) / 2) + ",0";
  CHECK(run({"render", "--world", world_file, "--pose", in_wall, "--out", tmp / "bad"}) == 2);
  CHECK(run({"render", "--world", world_file, "--pose", "-100,1.5,-100,0", "--out", tmp / "bad"}) == 2);
  CHECK(run({"render", "--world", world_file, "--pose", "1,2", "--out", tmp / "bad"}) == 2);
  CHECK(run({"render", "--world", world_file, "--out", tmp / "bad"}) == 2);
}

TEST_CASE("dream outputs") {
  TempDir tmp("dream");
  const auto cfg = small_config(tmp / "w");
  io::write_json(tmp / "config.json", cfg.to_json());
  REQUIRE(run({"worldgen", "--seed", "0", "--count", "6", "--out", tmp / "w"}) == 0);
  const auto world_file = tmp / "w/world_4.json";

  SUBCASE("nearest neighbor needs no checkpoint") {
    REQUIRE(run({"dream", "--config", tmp / "config.json", "--world", world_file, "--traj-seed", "2",
                 "--context", "2", "--out", tmp / "nn"}) == 0);
    CHECK(count_files(tmp.path / "nn/nn", ".sem.png") == 4);
    const auto m = io::read_json(tmp / "nn/metrics.json");
    CHECK(m.at("steps") == 4);
    CHECK(m.at("runs")[0].at("steps").size() == 4);
  }

  SUBCASE("struct samples") {
    const structgen::StructureGenerator model(cfg.structure, 1);
    structgen::save_model(tmp / "m.ckpt", model);
    const std::vector<std::string> args{"dream", "--config", tmp / "config.json", "--world", world_file,
                                        "--traj-seed", "2", "--model", "struct", "--checkpoint", tmp / "m.ckpt",
                                        "--zmode", "sample:7", "--samples", "3", "--out"};
    auto a = args, b = args;
    a.push_back(tmp / "s1");
    b.push_back(tmp / "s2");
    REQUIRE(run(a) == 0);
    REQUIRE(run(b) == 0);
    for (const char* d : {"sample_7", "sample_8", "sample_9"}) {
      CHECK(fs::is_directory(tmp.path / "s1" / d));
      CHECK(count_files(tmp.path / "s1" / d, ".sem.png") == 5);
    }
    CHECK(snapshot(tmp.path / "s1") == snapshot(tmp.path / "s2"));
    CHECK(io::read_text(tmp / "s1/sample_7/step_01.sem.png") != io::read_text(tmp / "s1/sample_8/step_01.sem.png"));
    CHECK(io::read_json(tmp / "s1/metrics.json").at("diversity").size() == 5);

    REQUIRE(run({"dream", "--config", tmp / "config.json", "--world", world_file, "--traj-seed", "2",
                 "--model", "struct", "--checkpoint", tmp / "m.ckpt", "--out", tmp / "mean"}) == 0);
    CHECK(count_files(tmp.path / "mean/mean", ".rgb.png") == 5);

    CHECK(run({"dream", "--config", tmp / "config.json", "--world", world_file, "--traj-seed", "2",
               "--model", "struct", "--out", tmp / "x"}) == 2);
    CHECK(run({"dream", "--config", tmp / "config.json", "--world", world_file, "--traj-seed", "2",
               "--samples", "2", "--out", tmp / "x"}) == 2);
    // A checkpoint trained under a different config is refused.
    auto other = cfg.structure;
    other.latent_channels = 4;
    structgen::save_model(tmp / "other.ckpt", structgen::StructureGenerator(other, 1));
    CHECK(run({"dream", "--config", tmp / "config.json", "--world", world_file, "--traj-seed", "2",
               "--model", "struct", "--checkpoint", tmp / "other.ckpt", "--out", tmp / "x"}) == 2);
  }
}

TEST_CASE("train and eval commands") {
  TempDir tmp("train");
  const auto cfg = small_config(tmp / "w");
  io::write_json(tmp / "config.json", cfg.to_json());
  REQUIRE(run({"worldgen", "--seed", "0", "--count", "6", "--out", tmp / "w"}) == 0);

  REQUIRE(run({"eval", "--config", tmp / "config.json", "--out", tmp / "e_nn"}) == 0);
  const auto csv = io::read_text(tmp / "e_nn/report.csv");
  CHECK(csv.substr(0, csv.find('\n')) == eval::kEvalCsvHeader);
  CHECK(io::read_json(tmp / "e_nn/report.json").at("rows").size() == 3 * 3);

  REQUIRE(run({"train", "--stage", "structure", "--config", tmp / "config.json", "--out", tmp / "t"}) == 0);
  CHECK(fs::exists(tmp.path / "t/structure.ckpt"));
  CHECK(io::read_text(tmp / "t/loss.csv").find('\n') != std::string::npos);
  REQUIRE(run({"eval", "--config", tmp / "config.json", "--checkpoint", "struct_tf=" + (tmp / "t/structure.ckpt"),
               "--out", tmp / "e"}) == 0);
  const auto report = io::read_json(tmp / "e/report.json");
  CHECK(report.at("rows").size() == 2 * 3 * 3);
  CHECK(report.at("model_fingerprints").contains("struct_tf"));

  REQUIRE(run({"train", "--stage", "image", "--config", tmp / "config.json", "--out", tmp / "ti"}) == 0);
  CHECK(fs::exists(tmp.path / "ti/image.ckpt"));
  REQUIRE(run({"dream", "--config", tmp / "config.json", "--world", tmp / "w/world_4.json", "--traj-seed", "1",
               "--model", "struct", "--checkpoint", tmp / "t/structure.ckpt", "--image-checkpoint",
               tmp / "ti/image.ckpt", "--out", tmp / "d"}) == 0);
  CHECK(io::read_rgb_png(tmp / "d/mean/step_01.rgb.png").width() == cfg.structure.width);

  CHECK(run({"train", "--stage", "both", "--config", tmp / "config.json", "--out", tmp / "x"}) != 0);
  CHECK(run({"eval", "--config", tmp / "config.json", "--checkpoint", "nopath", "--out", tmp / "x"}) == 2);
  io::write_json(tmp / "bad.json", {{"schema_version", 1}, {"unknown", 0}});
  CHECK(run({"train", "--stage", "structure", "--config", tmp / "bad.json", "--out", tmp / "x"}) == 2);
  CHECK(run({"frobnicate"}) != 0);
}

TEST_CASE("pipeline is byte-reproducible") {
  TempDir tmp("pipeline");
  // Both runs use the same paths; each result is moved aside afterwards.
  const auto r = tmp / "run";
  const auto cfg = small_config(r + "/worlds");
  const auto pipeline = [&](const std::string& keep) {
    io::ensure_dir(r);
    io::write_json(r + "/config.json", cfg.to_json());
    REQUIRE(run({"worldgen", "--seed", "0", "--count", "6", "--out", r + "/worlds"}) == 0);
    REQUIRE(run({"render", "--config", r + "/config.json", "--world", r + "/worlds/world_4.json", "--traj-seed",
                 "3", "--out", r + "/frames"}) == 0);
    REQUIRE(run({"train", "--stage", "structure", "--config", r + "/config.json", "--out", r + "/train"}) == 0);
    REQUIRE(run({"dream", "--config", r + "/config.json", "--world", r + "/worlds/world_4.json", "--traj",
                 r + "/frames/trajectory.json", "--model", "struct", "--checkpoint", r + "/train/structure.ckpt",
                 "--zmode", "sample:1", "--samples", "2", "--out", r + "/dream"}) == 0);
    REQUIRE(run({"eval", "--config", r + "/config.json", "--checkpoint",
                 "struct_tf=" + r + "/train/structure.ckpt", "--out", r + "/eval"}) == 0);
    fs::rename(r, tmp / keep);
  };
  pipeline("a");
  pipeline("b");
  const auto a = snapshot(tmp.path / "a");
  const auto b = snapshot(tmp.path / "b");
  CHECK(a.size() > 30);
  REQUIRE(a.size() == b.size());
  for (const auto& [k, v] : a) {
    REQUIRE(b.count(k) == 1);
    CHECK_MESSAGE(b.at(k) == v, k);
  }
}
