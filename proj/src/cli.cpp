#include "panodream/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "panodream/errors.hpp"
#include "panodream/io.hpp"

namespace panodream::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<world::World> load_worlds(const RunConfig& cfg, const WorldSet& set,
                                      std::vector<std::uint64_t>* seeds) {
  std::vector<world::World> out;
  for (int i = 0; i < set.count; ++i) {
    const std::uint64_t s = set.first_seed + static_cast<std::uint64_t>(i);
    if (cfg.world_dir.empty()) out.push_back(world::generate_world(s, cfg.world));
    else out.push_back(io::load_world(io::world_paths(cfg.world_dir, s)));
    if (seeds) seeds->push_back(s);
  }
  return out;
}

geom::Pose parse_pose(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad pose component '" + item + "' in '" + text + "'");
    }
  }
  if (v.size() != 4) throw UsageError("pose must be x,y,z,yaw: " + text);
  return {Eigen::Vector3d(v[0], v[1], v[2]), v[3]};
}

std::string graph_path_for(const std::string& world_path) {
  const fs::path p(world_path);
  std::string name = p.filename().string();
  if (name.rfind("world_", 0) != 0) {
    throw UsageError("cannot derive a graph path from " + world_path + "; pass --graph");
  }
  name.replace(0, 6, "graph_");
  return (p.parent_path() / name).string();
}

namespace {

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

world::World load_world_arg(const std::string& world, const std::string& graph) {
  return io::load_world({world, graph.empty() ? graph_path_for(world) : graph});
}

std::vector<geom::Pose> load_trajectory(const std::string& path) {
  const json j = io::read_json(path);
  return io::poses_from_json(j.is_object() ? j.at("poses") : j);
}

std::string step_stem(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%02d", step);
  return buf;
}

// Nearest-neighbor resample of an image to (w, h).
template <typename T>
Image<T> resample(const Image<T>& src, int w, int h) {
  if (src.same_size(w, h)) return src;
  Image<T> out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      out(x, y) = src(static_cast<int>(static_cast<long long>(x) * src.width() / w),
                      static_cast<int>(static_cast<long long>(y) * src.height() / h));
    }
  return out;
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- commands --------------------------------------------------------------

int cmd_worldgen(std::uint64_t seed, int count, const std::string& out, const std::string& config) {
  if (count < 1) throw UsageError("--count must be positive");
  const RunConfig cfg = config_or_default(config);
  io::ensure_dir(out);
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    io::save_world(io::world_paths(out, s), world::generate_world(s, cfg.world), s);
  }
  log("wrote " + std::to_string(count) + " worlds to " + out);
  return 0;
}

int cmd_validate(const std::string& world_path, const std::string& graph_arg) {
  const std::string graph_path = graph_arg.empty() ? graph_path_for(world_path) : graph_arg;
  const world::World w = io::load_world({world_path, graph_path});
  auto problems = world::validate(w.scene, w.graph);
  // Parsing then re-serializing must reproduce the files byte for byte.
  const json scene_file = io::read_json(world_path);
  const json graph_file = io::read_json(graph_path);
  json scene = io::scene_to_json(w.scene);
  json graph = io::graph_to_json(w.graph);
  if (scene_file.contains("seed")) scene["seed"] = scene_file["seed"];
  if (graph_file.contains("seed")) graph["seed"] = graph_file["seed"];
  if (io::dump(scene) != io::read_text(world_path)) problems.push_back("scene does not round-trip: " + world_path);
  if (io::dump(graph) != io::read_text(graph_path)) problems.push_back("graph does not round-trip: " + graph_path);
  for (const auto& p : problems) std::cout << "invalid: " << p << '\n';
  if (problems.empty()) std::cout << "valid: " << world_path << '\n';
  return problems.empty() ? 0 : 1;
}

int cmd_render(const std::string& world_path, const std::string& graph, const std::string& pose,
               const std::string& traj, std::optional<std::uint64_t> traj_seed,
               const std::string& config, int width, int height, const std::string& out) {
  const RunConfig cfg = config_or_default(config);
  const int n_sources = !pose.empty() + !traj.empty() + traj_seed.has_value();
  if (n_sources != 1) throw UsageError("render needs exactly one of --pose, --traj, --traj-seed");
  const world::World w = load_world_arg(world_path, graph);
  std::vector<geom::Pose> poses;
  if (!pose.empty()) poses.push_back(parse_pose(pose));
  else if (!traj.empty()) poses = load_trajectory(traj);
  else if (cfg.trajectory_length > 0) poses = world::sample_trajectory(w.graph, *traj_seed, cfg.trajectory_length);
  else poses = world::sample_trajectory(w.graph, *traj_seed);
  for (const auto& p : poses) {
    if (!world::in_free_space(w.scene, p.position)) {
      throw GeometryError("pose (" + std::to_string(p.position.x()) + ", " +
                          std::to_string(p.position.y()) + ", " + std::to_string(p.position.z()) +
                          ") is inside geometry or outside the rooms");
    }
  }
  const int wd = width > 0 ? width : cfg.structure.width;
  const int ht = height > 0 ? height : cfg.structure.height;
  const geom::PanoGeometry g(wd, ht);
  io::ensure_dir(out);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto f = world::render_pano(w.scene, poses[i], g, cfg.structure.max_depth);
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%03zu", i);
    io::write_frame(io::frame_paths(out, stem), f, w.scene.class_count, cfg.structure.max_depth,
                    {{"index", i}});
  }
  io::write_json((fs::path(out) / "trajectory.json").string(), {{"poses", io::poses_to_json(poses)}});
  log("rendered " + std::to_string(poses.size()) + " frames to " + out);
  return 0;
}

struct DreamArgs {
  std::string config, world, graph, traj, model = "nn", checkpoint, image_checkpoint;
  std::string zmode = "mean", out;
  std::optional<std::uint64_t> traj_seed;
  int context = 1;
  int samples = 1;
};

json step_metrics(const cloud::DenseStructure& truth, const cloud::DenseStructure& pred, int classes) {
  return {{"miou", eval::miou(truth.sem, pred.sem, classes)},
          {"depth_mae", eval::depth_mae(truth.depth, pred.depth)},
          {"pixel_accuracy", eval::pixel_accuracy(truth.sem, pred.sem)}};
}

int cmd_dream(const DreamArgs& a) {
  const RunConfig cfg = config_or_default(a.config);
  const auto& sc = cfg.structure;
  if (a.model != "nn" && a.model != "struct") throw UsageError("--model must be nn or struct");
  if (a.model == "struct" && a.checkpoint.empty()) throw UsageError("--model struct needs --checkpoint");
  if (a.samples < 1) throw UsageError("--samples must be positive");

  std::optional<std::uint64_t> sample_seed;
  if (a.zmode.rfind("sample:", 0) == 0) {
    try {
      sample_seed = std::stoull(a.zmode.substr(7));
    } catch (const std::exception&) {
      throw UsageError("bad --zmode " + a.zmode);
    }
  } else if (a.zmode != "mean") {
    throw UsageError("--zmode must be mean or sample:<seed>");
  }
  if (!sample_seed && a.samples != 1) throw UsageError("--samples > 1 needs --zmode sample:<seed>");

  std::optional<structgen::StructureGenerator> model;
  if (a.model == "struct") model.emplace(structgen::load_model(a.checkpoint, sc));
  std::optional<imggen::ImageGenerator> painter;
  if (!a.image_checkpoint.empty()) {
    painter.emplace(imggen::load_image_model(a.image_checkpoint));
    if (painter->config().classes != sc.classes || painter->config().max_depth != sc.max_depth) {
      throw SchemaError("image checkpoint disagrees with the structure config");
    }
  }

  const world::World w = load_world_arg(a.world, a.graph);
  std::vector<geom::Pose> poses;
  if (!a.traj.empty() && a.traj_seed) throw UsageError("pass only one of --traj and --traj-seed");
  if (!a.traj.empty()) poses = load_trajectory(a.traj);
  else if (a.traj_seed && cfg.trajectory_length > 0) poses = world::sample_trajectory(w.graph, *a.traj_seed, cfg.trajectory_length);
  else if (a.traj_seed) poses = world::sample_trajectory(w.graph, *a.traj_seed);
  else throw UsageError("dream needs --traj or --traj-seed");
  if (a.context < 1 || a.context >= static_cast<int>(poses.size())) {
    throw UsageError("--context must lie in [1, " + std::to_string(poses.size() - 1) + "]");
  }

  const geom::PanoGeometry g = sc.geometry();
  std::vector<cloud::PanoFrame> context, truth;
  std::vector<geom::Pose> targets;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    auto f = world::render_pano(w.scene, poses[i], g, sc.max_depth);
    if (static_cast<int>(i) < a.context) {
      context.push_back(std::move(f));
    } else {
      targets.push_back(poses[i]);
      truth.push_back(std::move(f));
    }
  }

  io::ensure_dir(a.out);
  json runs = json::array();
  std::vector<std::vector<structgen::RolloutStep>> all;
  for (int k = 0; k < a.samples; ++k) {
    const auto policy = sample_seed ? structgen::ZPolicy::prior_sample(*sample_seed + static_cast<std::uint64_t>(k))
                                    : structgen::ZPolicy::prior_mean();
    const structgen::Predictor predictor = model ? structgen::model_predictor(*model, policy)
                                                 : structgen::nearest_neighbor_predictor();
    auto steps = structgen::rollout(predictor, context, targets, structgen::RolloutMode::kRecurrent);
    const std::string name = a.model == "nn" ? "nn"
                             : sample_seed     ? "sample_" + std::to_string(*sample_seed + static_cast<std::uint64_t>(k))
                                               : "mean";
    const std::string dir = (fs::path(a.out) / name).string();
    io::ensure_dir(dir);
    json metrics = json::array();
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const auto& s = steps[t];
      cloud::PanoFrame f(g, targets[t]);
      f.sem = s.prediction.sem;
      f.depth = s.prediction.depth;
      if (painter) {
        const auto& pc = painter->config();
        f.rgb = resample(imggen::generate_rgb(*painter, s.prediction, resample(s.guide.rgb, pc.width, pc.height),
                                              resample(s.guide.valid, pc.width, pc.height)),
                         g.width(), g.height());
      } else {
        f.rgb = imggen::colorize(f.sem, f.depth, sc.max_depth, sc.classes);
      }
      const int step = static_cast<int>(t) + 1;
      io::write_frame(io::frame_paths(dir, step_stem(step)), f, sc.classes, sc.max_depth,
                      {{"step", step}, {"guidance_valid", s.guide.valid_fraction()}});
      json m = step_metrics({truth[t].sem, truth[t].depth}, s.prediction, sc.classes);
      m["step"] = step;
      metrics.push_back(m);
    }
    runs.push_back({{"name", name}, {"steps", metrics}});
    all.push_back(std::move(steps));
  }

  json diversity = json::array();
  if (all.size() >= 2) {
    for (std::size_t t = 0; t < targets.size(); ++t) {
      std::vector<ClassMap> sems;
      for (const auto& run : all) sems.push_back(run[t].prediction.sem);
      Mask unobserved(g.width(), g.height());
      for (std::size_t i = 0; i < unobserved.size(); ++i) {
        unobserved.pixels()[i] = all[0][t].guide.valid.pixels()[i] ? 0 : 1;
      }
      const auto d = eval::diversity_score(sems, unobserved);
      diversity.push_back({{"step", t + 1}, {"unobserved", d.unobserved}, {"observed", d.observed}});
    }
  }
  io::write_json((fs::path(a.out) / "metrics.json").string(),
                 {{"model", a.model},
                  {"zmode", a.zmode},
                  {"context", a.context},
                  {"steps", targets.size()},
                  {"config_fingerprint", cfg.fingerprint()},
                  {"runs", runs},
                  {"diversity", diversity}});
  log("dreamed " + std::to_string(targets.size()) + " steps x " + std::to_string(a.samples) +
      " runs to " + a.out);
  return 0;
}

int cmd_train(const std::string& stage, const std::string& config, const std::string& out) {
  const RunConfig cfg = load_run_config(config);
  io::ensure_dir(out);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::uint64_t> seeds;
  const auto worlds = load_worlds(cfg, cfg.train_worlds, &seeds);
  json summary = {{"stage", stage}, {"config_fingerprint", cfg.fingerprint()}, {"world_seeds", seeds}};
  if (stage == "structure") {
    auto tc = cfg.structure_train;
    tc.out_dir = out;
    structgen::StructureGenerator model(cfg.structure, tc.seed);
    const auto r = structgen::train_structure(model, worlds, tc, [&](const structgen::LossRecord& l) {
      if (l.step % 50 == 0) {
        std::ostringstream os;
        os << "step " << l.step << " loss " << l.loss.total << " ce " << l.loss.ce << " kl " << l.loss.kl;
        log(os.str());
      }
    });
    structgen::write_loss_csv((fs::path(out) / "loss.csv").string(), r.curve);
    structgen::save_model((fs::path(out) / "structure.ckpt").string(), model,
                          {{"train", tc.to_json()}, {"config_fingerprint", cfg.fingerprint()}});
    summary["checksum"] = r.checksum;
    summary["steps"] = r.curve.size();
    summary["final_loss"] = r.curve.empty() ? 0.0 : r.curve.back().loss.total;
  } else if (stage == "image") {
    const auto& tc = cfg.image_train;
    const auto data = imggen::image_samples(worlds, cfg.image, cfg.structure.geometry(),
                                            cfg.image_samples_per_world, tc.seed);
    imggen::ImageGenerator gen(cfg.image, tc.seed);
    imggen::Discriminator disc(cfg.image.struct_channels() + 3, tc.seed + 1);
    const imggen::FeatureExtractor fx(tc.seed + 2);
    const auto r = imggen::train_image_generator(gen, disc, fx, data, tc, [&](const imggen::ImageLossRecord& l) {
      if (l.step % 50 == 0) {
        std::ostringstream os;
        os << "step " << l.step << " g " << l.g_total << " d " << l.d_loss << " l1 " << l.l1;
        log(os.str());
      }
    });
    imggen::write_image_loss_csv((fs::path(out) / "image_loss.csv").string(), r.curve);
    imggen::save_image_model((fs::path(out) / "image.ckpt").string(), gen,
                             {{"train", tc.to_json()}, {"config_fingerprint", cfg.fingerprint()}});
    summary["checksum"] = r.checksum;
    summary["steps"] = r.curve.size();
    summary["samples"] = data.size();
  } else {
    throw UsageError("--stage must be structure or image");
  }
  io::write_json((fs::path(out) / (stage + "_train.json")).string(), summary);
  std::ostringstream os;
  os << "trained " << stage << " in " << seconds_since(t0) << " s";
  log(os.str());
  return 0;
}

int cmd_eval(const std::string& config, const std::vector<std::string>& checkpoints, bool with_nn,
             const std::string& out) {
  const RunConfig cfg = load_run_config(config);
  std::vector<std::pair<std::string, structgen::StructureGenerator>> loaded;
  for (const auto& spec : checkpoints) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--checkpoint takes name=path: " + spec);
    loaded.emplace_back(spec.substr(0, eq), structgen::load_model(spec.substr(eq + 1), cfg.structure));
  }
  std::vector<eval::EvalModel> models;
  if (with_nn) models.push_back({"nearest_neighbor", nullptr});
  for (const auto& [name, m] : loaded) models.push_back({name, &m});
  if (models.empty()) throw UsageError("nothing to evaluate");
  std::vector<std::uint64_t> seeds;
  const auto worlds = load_worlds(cfg, cfg.test_worlds, &seeds);
  const auto t0 = std::chrono::steady_clock::now();
  auto report = eval::run_eval_grid(models, worlds, seeds, cfg.eval);
  report.config_fingerprint = cfg.fingerprint();
  io::ensure_dir(out);
  io::write_json((fs::path(out) / "report.json").string(), report.to_json());
  io::write_text((fs::path(out) / "report.csv").string(), report.to_csv());
  std::ostringstream os;
  os << "evaluated " << models.size() << " models in " << seconds_since(t0) << " s";
  log(os.str());
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return main(static_cast<int>(argv.size()), argv.data());
}

int main(int argc, const char* const* argv) {
  CLI::App app{"panodream: synthetic panorama world model"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int count = 1;
  std::string out, config, world_path, graph;
  auto* worldgen = app.add_subcommand("worldgen", "Generate scene and navigation graph files");
  worldgen->add_option("--seed", seed, "First world seed");
  worldgen->add_option("--count", count, "Number of worlds");
  worldgen->add_option("--out", out, "Output directory")->required();
  worldgen->add_option("--config", config, "Run config (world parameters)");

  auto* validate = app.add_subcommand("validate", "Check world invariants and file round trip");
  validate->add_option("--world", world_path, "Scene file")->required();
  validate->add_option("--graph", graph, "Graph file (default: next to the scene)");

  std::string pose, traj;
  std::optional<std::uint64_t> traj_seed;
  int width = 0, height = 0;
  auto* render = app.add_subcommand("render", "Render ground-truth panoramas");
  render->add_option("--world", world_path, "Scene file")->required();
  render->add_option("--graph", graph, "Graph file (default: next to the scene)");
  render->add_option("--pose", pose, "x,y,z,yaw");
  render->add_option("--traj", traj, "Trajectory JSON");
  render->add_option("--traj-seed", traj_seed, "Sample a trajectory from the graph");
  render->add_option("--config", config, "Run config");
  render->add_option("--width", width, "Panorama width (default: structure model width)");
  render->add_option("--height", height, "Panorama height");
  render->add_option("--out", out, "Output directory")->required();

  DreamArgs da;
  auto* dream = app.add_subcommand("dream", "Roll a model out along a trajectory");
  dream->add_option("--config", da.config, "Run config");
  dream->add_option("--world", da.world, "Scene file")->required();
  dream->add_option("--graph", da.graph, "Graph file (default: next to the scene)");
  dream->add_option("--traj", da.traj, "Trajectory JSON");
  dream->add_option("--traj-seed", da.traj_seed, "Sample a trajectory from the graph");
  dream->add_option("--context", da.context, "Context frames taken from the trajectory start");
  dream->add_option("--model", da.model, "nn or struct")->check(CLI::IsMember({"nn", "struct"}));
  dream->add_option("--checkpoint", da.checkpoint, "Structure checkpoint");
  dream->add_option("--image-checkpoint", da.image_checkpoint, "Image generator checkpoint");
  dream->add_option("--zmode", da.zmode, "mean or sample:<seed>");
  dream->add_option("--samples", da.samples, "Number of z samples");
  dream->add_option("--out", da.out, "Output directory")->required();

  std::string stage;
  auto* train = app.add_subcommand("train", "Train the structure or image stage");
  train->add_option("--stage", stage, "structure or image")->required()->check(CLI::IsMember({"structure", "image"}));
  train->add_option("--config", config, "Run config")->required();
  train->add_option("--out", out, "Output directory")->required();

  std::vector<std::string> checkpoints;
  bool no_nn = false;
  auto* evalc = app.add_subcommand("eval", "Evaluation grid report");
  evalc->add_option("--config", config, "Run config")->required();
  evalc->add_option("--checkpoint", checkpoints, "name=path of a structure checkpoint");
  evalc->add_flag("--no-nn", no_nn, "Skip the nearest-neighbor baseline");
  evalc->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*worldgen) return cmd_worldgen(seed, count, out, config);
    if (*validate) return cmd_validate(world_path, graph);
    if (*render) return cmd_render(world_path, graph, pose, traj, traj_seed, config, width, height, out);
    if (*dream) return cmd_dream(da);
    if (*train) return cmd_train(stage, config, out);
    if (*evalc) return cmd_eval(config, checkpoints, !no_nn, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace panodream::cli
