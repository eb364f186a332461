#include "panodream/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "panodream/errors.hpp"

namespace panodream::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_json(const std::string& path, const json& j) { write_text(path, dump(j)); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// --- json ------------------------------------------------------------------

namespace {

json vec3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3(const json& j) {
  const auto a = j.get<std::array<double, 3>>();
  return {a[0], a[1], a[2]};
}

json rgb(const Rgb8& c) { return json::array({c.r, c.g, c.b}); }

Rgb8 rgb(const json& j) {
  const auto a = j.get<std::array<int, 3>>();
  for (int v : a) {
    if (v < 0 || v > 255) throw SchemaError("color component out of range");
  }
  return {static_cast<std::uint8_t>(a[0]), static_cast<std::uint8_t>(a[1]),
          static_cast<std::uint8_t>(a[2])};
}

json rect(const world::Rect& r) { return json::array({r.x0, r.z0, r.x1, r.z1}); }

world::Rect rect(const json& j) {
  const auto a = j.get<std::array<double, 4>>();
  return {a[0], a[1], a[2], a[3]};
}

// Calls fn(key, value) for every key and throws on keys outside `allowed`.
template <typename Fn>
void read_object(const json& j, const char* what, std::initializer_list<const char*> allowed, Fn fn) {
  if (!j.is_object()) throw SchemaError(std::string(what) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw SchemaError(std::string("unknown ") + what + " key: " + key);
    }
    fn(key, value);
  }
}

}  // namespace

json pose_to_json(const geom::Pose& p) { return {{"position", vec3(p.position)}, {"yaw", p.yaw}}; }

geom::Pose pose_from_json(const json& j) {
  geom::Pose p;
  read_object(j, "pose", {"position", "yaw"}, [&](const std::string& k, const json& v) {
    if (k == "position") p.position = vec3(v);
    else p.yaw = v.get<double>();
  });
  // Stored yaw is already normalized; keep it bit-exact.
  return p;
}

json poses_to_json(const std::vector<geom::Pose>& poses) {
  json a = json::array();
  for (const auto& p : poses) a.push_back(pose_to_json(p));
  return a;
}

std::vector<geom::Pose> poses_from_json(const json& j) {
  if (!j.is_array()) throw SchemaError("poses must be an array");
  std::vector<geom::Pose> out;
  for (const auto& p : j) out.push_back(pose_from_json(p));
  return out;
}

json scene_to_json(const world::SceneSpec& s) {
  json rooms = json::array();
  for (const auto& r : s.rooms) {
    rooms.push_back({{"rect", rect(r.rect)},
                     {"wall_color", rgb(r.wall_color)},
                     {"floor_color", rgb(r.floor_color)},
                     {"brightness", r.brightness}});
  }
  json openings = json::array();
  for (const auto& o : s.openings) {
    openings.push_back({{"room_a", o.room_a},
                        {"room_b", o.room_b},
                        {"axis", o.axis},
                        {"coord", o.coord},
                        {"lo", o.lo},
                        {"hi", o.hi}});
  }
  json windows = json::array();
  for (const auto& w : s.windows) {
    windows.push_back({{"axis", w.axis},
                       {"coord", w.coord},
                       {"lo", w.lo},
                       {"hi", w.hi},
                       {"bottom", w.bottom},
                       {"top", w.top}});
  }
  json furniture = json::array();
  for (const auto& f : s.furniture) {
    furniture.push_back({{"min", vec3(f.box.min)},
                         {"max", vec3(f.box.max)},
                         {"class_id", f.box.class_id},
                         {"room", f.room}});
  }
  return {{"rooms", rooms},
          {"openings", openings},
          {"windows", windows},
          {"furniture", furniture},
          {"ceiling_height", s.ceiling_height},
          {"class_count", s.class_count}};
}

world::SceneSpec scene_from_json(const json& j) {
  world::SceneSpec s;
  read_object(j, "scene",
              {"rooms", "openings", "windows", "furniture", "ceiling_height", "class_count"},
              [&](const std::string& k, const json& v) {
                if (k == "rooms") {
                  for (const auto& e : v) {
                    world::Room r;
                    read_object(e, "room", {"rect", "wall_color", "floor_color", "brightness"},
                                [&](const std::string& rk, const json& rv) {
                                  if (rk == "rect") r.rect = rect(rv);
                                  else if (rk == "wall_color") r.wall_color = rgb(rv);
                                  else if (rk == "floor_color") r.floor_color = rgb(rv);
                                  else r.brightness = rv.get<double>();
                                });
                    s.rooms.push_back(r);
                  }
                } else if (k == "openings") {
                  for (const auto& e : v) {
                    world::Opening o;
                    read_object(e, "opening", {"room_a", "room_b", "axis", "coord", "lo", "hi"},
                                [&](const std::string& ok, const json& ov) {
                                  if (ok == "room_a") o.room_a = ov.get<int>();
                                  else if (ok == "room_b") o.room_b = ov.get<int>();
                                  else if (ok == "axis") o.axis = ov.get<int>();
                                  else if (ok == "coord") o.coord = ov.get<double>();
                                  else if (ok == "lo") o.lo = ov.get<double>();
                                  else o.hi = ov.get<double>();
                                });
                    s.openings.push_back(o);
                  }
                } else if (k == "windows") {
                  for (const auto& e : v) {
                    world::Window w;
                    read_object(e, "window", {"axis", "coord", "lo", "hi", "bottom", "top"},
                                [&](const std::string& wk, const json& wv) {
                                  if (wk == "axis") w.axis = wv.get<int>();
                                  else if (wk == "coord") w.coord = wv.get<double>();
                                  else if (wk == "lo") w.lo = wv.get<double>();
                                  else if (wk == "hi") w.hi = wv.get<double>();
                                  else if (wk == "bottom") w.bottom = wv.get<double>();
                                  else w.top = wv.get<double>();
                                });
                    s.windows.push_back(w);
                  }
                } else if (k == "furniture") {
                  for (const auto& e : v) {
                    world::Furniture f;
                    read_object(e, "furniture", {"min", "max", "class_id", "room"},
                                [&](const std::string& fk, const json& fv) {
                                  if (fk == "min") f.box.min = vec3(fv);
                                  else if (fk == "max") f.box.max = vec3(fv);
                                  else if (fk == "class_id") f.box.class_id = fv.get<std::int32_t>();
                                  else f.room = fv.get<int>();
                                });
                    s.furniture.push_back(f);
                  }
                } else if (k == "ceiling_height") {
                  s.ceiling_height = v.get<double>();
                } else {
                  s.class_count = v.get<int>();
                }
              });
  s.build_geometry();
  return s;
}

json graph_to_json(const world::NavGraph& g) {
  json edges = json::array();
  for (const auto& [a, b] : g.edges) edges.push_back(json::array({a, b}));
  return {{"nodes", poses_to_json(g.nodes)}, {"edges", edges}};
}

world::NavGraph graph_from_json(const json& j) {
  world::NavGraph g;
  read_object(j, "graph", {"nodes", "edges"}, [&](const std::string& k, const json& v) {
    if (k == "nodes") {
      g.nodes = poses_from_json(v);
    } else {
      for (const auto& e : v) {
        const auto ab = e.get<std::array<int, 2>>();
        g.edges.emplace_back(ab[0], ab[1]);
      }
    }
  });
  const int n = static_cast<int>(g.nodes.size());
  for (const auto& [a, b] : g.edges) {
    if (a < 0 || a >= n || b < 0 || b >= n) throw SchemaError("graph edge references a missing node");
  }
  return g;
}

WorldFiles world_paths(const std::string& dir, std::uint64_t seed) {
  const std::string s = std::to_string(seed);
  return {(fs::path(dir) / ("world_" + s + ".json")).string(),
          (fs::path(dir) / ("graph_" + s + ".json")).string()};
}

void save_world(const WorldFiles& files, const world::World& w, std::uint64_t seed) {
  json scene = scene_to_json(w.scene);
  scene["seed"] = seed;
  write_json(files.scene, scene);
  json graph = graph_to_json(w.graph);
  graph["seed"] = seed;
  write_json(files.graph, graph);
}

namespace {

json without_seed(json j) {
  if (j.is_object()) j.erase("seed");
  return j;
}

}  // namespace

world::World load_world(const WorldFiles& files) {
  world::World w;
  try {
    w.scene = scene_from_json(without_seed(read_json(files.scene)));
  } catch (const SchemaError& e) {
    throw SchemaError(files.scene + ": " + e.what());
  }
  try {
    w.graph = graph_from_json(without_seed(read_json(files.graph)));
  } catch (const SchemaError& e) {
    throw SchemaError(files.graph + ": " + e.what());
  }
  return w;
}

std::vector<std::pair<std::uint64_t, world::World>> load_world_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::uint64_t> seeds;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("world_", 0) != 0 || entry.path().extension() != ".json") continue;
    const std::string digits = name.substr(6, name.size() - 11);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) continue;
    seeds.push_back(std::stoull(digits));
  }
  std::sort(seeds.begin(), seeds.end());
  std::vector<std::pair<std::uint64_t, world::World>> out;
  for (auto s : seeds) out.emplace_back(s, load_world(world_paths(dir, s)));
  return out;
}

// --- png -------------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// rows: height rows of width * channels samples, each `depth` bits.
void write_png(const std::string& path, int width, int height, int color_type, int bit_depth,
               const std::vector<std::uint8_t>& data) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png init failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png init failed: " + path);
  }
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data.data() + stride * y);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct RawPng {
  int width = 0;
  int height = 0;
  int color_type = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> data;
};

RawPng read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png init failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png init failed: " + path);
  }
  RawPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed: " + path + ": " + err);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.color_type = png_get_color_type(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  if (out.color_type != PNG_COLOR_TYPE_RGB && out.color_type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported png color type: " + path);
  }
  if (out.bit_depth != 8 && out.bit_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported png bit depth: " + path);
  }
  const std::size_t stride = png_get_rowbytes(png, info);
  out.data.resize(stride * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.data.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

std::uint16_t depth_to_mm(double meters) {
  if (!std::isfinite(meters) || meters <= 0.0) return 0;
  const double mm = std::round(meters * 1000.0);
  if (mm > 65535.0) throw DataError("depth " + std::to_string(meters) + " m exceeds the 16-bit range");
  return static_cast<std::uint16_t>(mm);
}

void write_rgb_png(const std::string& path, const RgbImage& img) {
  std::vector<std::uint8_t> data;
  data.reserve(img.size() * 3);
  for (const auto& p : img.pixels()) {
    data.push_back(p.r);
    data.push_back(p.g);
    data.push_back(p.b);
  }
  write_png(path, img.width(), img.height(), PNG_COLOR_TYPE_RGB, 8, data);
}

RgbImage read_rgb_png(const std::string& path) {
  const RawPng raw = read_png(path);
  if (raw.color_type != PNG_COLOR_TYPE_RGB || raw.bit_depth != 8) {
    throw IoError("expected 8-bit RGB png: " + path);
  }
  RgbImage img(raw.width, raw.height);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.pixels()[i] = {raw.data[3 * i], raw.data[3 * i + 1], raw.data[3 * i + 2]};
  }
  return img;
}

void write_depth_png(const std::string& path, const DepthMap& depth) {
  std::vector<std::uint8_t> data;
  data.reserve(depth.size() * 2);
  for (double d : depth.pixels()) {
    const std::uint16_t mm = depth_to_mm(d);
    // PNG samples are big-endian.
    data.push_back(static_cast<std::uint8_t>(mm >> 8));
    data.push_back(static_cast<std::uint8_t>(mm & 0xff));
  }
  write_png(path, depth.width(), depth.height(), PNG_COLOR_TYPE_GRAY, 16, data);
}

DepthMap read_depth_png(const std::string& path) {
  const RawPng raw = read_png(path);
  if (raw.color_type != PNG_COLOR_TYPE_GRAY || raw.bit_depth != 16) {
    throw IoError("expected 16-bit grayscale png: " + path);
  }
  DepthMap d(raw.width, raw.height);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int mm = (raw.data[2 * i] << 8) | raw.data[2 * i + 1];
    d.pixels()[i] = mm / 1000.0;
  }
  return d;
}

void write_class_png(const std::string& path, const ClassMap& sem, int classes) {
  if (classes < 1 || classes > 256) throw DomainError("class count must be in [1, 256]");
  std::vector<std::uint8_t> data;
  data.reserve(sem.size());
  for (auto c : sem.pixels()) {
    if (c < 0 || c >= classes) {
      throw DataError("class id " + std::to_string(c) + " out of range writing " + path);
    }
    data.push_back(static_cast<std::uint8_t>(c));
  }
  write_png(path, sem.width(), sem.height(), PNG_COLOR_TYPE_GRAY, 8, data);
}

ClassMap read_class_png(const std::string& path) {
  const RawPng raw = read_png(path);
  if (raw.color_type != PNG_COLOR_TYPE_GRAY || raw.bit_depth != 8) {
    throw IoError("expected 8-bit grayscale png: " + path);
  }
  ClassMap sem(raw.width, raw.height);
  for (std::size_t i = 0; i < sem.size(); ++i) sem.pixels()[i] = raw.data[i];
  return sem;
}

// --- frames ----------------------------------------------------------------

FrameFiles frame_paths(const std::string& dir, const std::string& stem) {
  const fs::path base = fs::path(dir) / stem;
  return {base.string() + ".rgb.png", base.string() + ".depth.png", base.string() + ".sem.png",
          base.string() + ".json"};
}

void write_frame(const FrameFiles& files, const cloud::PanoFrame& frame, int classes,
                 double max_depth, const json& extra) {
  write_rgb_png(files.rgb, frame.rgb);
  write_depth_png(files.depth, frame.depth);
  write_class_png(files.sem, frame.sem, classes);
  json meta = {{"pose", pose_to_json(frame.pose)},
               {"geometry", {{"width", frame.geometry.width()}, {"height", frame.geometry.height()}}},
               {"classes", classes},
               {"max_depth", max_depth},
               {"depth_unit", "mm"},
               {"files",
                {{"rgb", fs::path(files.rgb).filename().string()},
                 {"depth", fs::path(files.depth).filename().string()},
                 {"sem", fs::path(files.sem).filename().string()}}}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  write_json(files.meta, meta);
}

cloud::PanoFrame read_frame(const FrameFiles& files) {
  const json meta = read_json(files.meta);
  const auto& g = meta.at("geometry");
  cloud::PanoFrame f;
  f.geometry = geom::PanoGeometry(g.at("width").get<int>(), g.at("height").get<int>());
  f.pose = pose_from_json(meta.at("pose"));
  f.rgb = read_rgb_png(files.rgb);
  f.depth = read_depth_png(files.depth);
  f.sem = read_class_png(files.sem);
  const int classes = meta.at("classes").get<int>();
  for (auto c : f.sem.pixels()) {
    if (c >= classes) throw DataError("class id out of range in " + files.sem);
  }
  if (!f.rgb.same_size(f.geometry.width(), f.geometry.height()) || !f.depth.same_size(f.rgb) ||
      !f.sem.same_size(f.rgb)) {
    throw ShapeError("frame images disagree with the sidecar geometry: " + files.meta);
  }
  return f;
}

}  // namespace panodream::io
