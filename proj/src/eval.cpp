#include "panodream/eval.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>

#include "panodream/cloud.hpp"
#include "panodream/errors.hpp"

namespace panodream::eval {

namespace {

template <typename A, typename B>
void require_same(const Image<A>& a, const Image<B>& b, const char* what) {
  if (!a.same_size(b)) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.width()) + "x" +
                     std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                     std::to_string(b.height()));
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

double miou(const ClassMap& gt, const ClassMap& pred, int classes) {
  require_same(gt, pred, "miou");
  if (gt.empty()) throw DomainError("miou of empty images");
  std::vector<std::int64_t> inter(static_cast<std::size_t>(classes), 0);
  std::vector<std::int64_t> uni(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto a = gt.pixels()[i], b = pred.pixels()[i];
    if (a < 0 || a >= classes || b < 0 || b >= classes) {
      throw DataError("miou: class id out of range [0, " + std::to_string(classes) + ")");
    }
    if (a == b) {
      ++inter[static_cast<std::size_t>(a)];
      ++uni[static_cast<std::size_t>(a)];
    } else {
      ++uni[static_cast<std::size_t>(a)];
      ++uni[static_cast<std::size_t>(b)];
    }
  }
  double total = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (uni[static_cast<std::size_t>(c)] == 0) continue;
    total += static_cast<double>(inter[static_cast<std::size_t>(c)]) /
             static_cast<double>(uni[static_cast<std::size_t>(c)]);
    ++present;
  }
  return total / present;
}

double depth_mae(const DepthMap& gt, const DepthMap& pred) {
  require_same(gt, pred, "depth_mae");
  if (gt.empty()) throw DomainError("depth_mae of empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) s += std::abs(gt.pixels()[i] - pred.pixels()[i]);
  return s / static_cast<double>(gt.size());
}

double pixel_accuracy(const ClassMap& gt, const ClassMap& pred) {
  require_same(gt, pred, "pixel_accuracy");
  if (gt.empty()) throw DomainError("pixel_accuracy of empty images");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hits += gt.pixels()[i] == pred.pixels()[i];
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

Diversity diversity_score(const std::vector<ClassMap>& samples, const Mask& unobserved) {
  if (samples.size() < 2) throw DomainError("diversity needs at least 2 samples");
  for (const auto& s : samples) require_same(s, unobserved, "diversity_score");
  std::size_t inside = 0;
  for (auto m : unobserved.pixels()) inside += m != 0;
  const std::size_t outside = unobserved.size() - inside;
  double in_sum = 0.0, out_sum = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < samples.size(); ++a) {
    for (std::size_t b = a + 1; b < samples.size(); ++b) {
      std::size_t din = 0, dout = 0;
      for (std::size_t i = 0; i < unobserved.size(); ++i) {
        if (samples[a].pixels()[i] == samples[b].pixels()[i]) continue;
        if (unobserved.pixels()[i] != 0) ++din;
        else ++dout;
      }
      if (inside > 0) in_sum += static_cast<double>(din) / static_cast<double>(inside);
      if (outside > 0) out_sum += static_cast<double>(dout) / static_cast<double>(outside);
      ++pairs;
    }
  }
  return {in_sum / pairs, out_sum / pairs};
}

nlohmann::json EvalOptions::to_json() const {
  return {{"contexts", contexts},
          {"steps", steps},
          {"trajectories_per_world", trajectories_per_world},
          {"seed", seed},
          {"width", width},
          {"height", height},
          {"classes", classes},
          {"max_depth", max_depth},
          {"diversity", diversity},
          {"diversity_seed_a", diversity_seed_a},
          {"diversity_seed_b", diversity_seed_b}};
}

EvalOptions EvalOptions::from_json(const nlohmann::json& j) {
  EvalOptions o;
  for (const auto& [key, value] : j.items()) {
    if (key == "contexts") o.contexts = value.get<std::vector<int>>();
    else if (key == "steps") o.steps = value.get<int>();
    else if (key == "trajectories_per_world") o.trajectories_per_world = value.get<int>();
    else if (key == "seed") o.seed = value.get<std::uint64_t>();
    else if (key == "width") o.width = value.get<int>();
    else if (key == "height") o.height = value.get<int>();
    else if (key == "classes") o.classes = value.get<int>();
    else if (key == "max_depth") o.max_depth = value.get<double>();
    else if (key == "diversity") o.diversity = value.get<bool>();
    else if (key == "diversity_seed_a") o.diversity_seed_a = value.get<std::uint64_t>();
    else if (key == "diversity_seed_b") o.diversity_seed_b = value.get<std::uint64_t>();
    else throw SchemaError("unknown eval key: " + key);
  }
  return o;
}

const EvalRow& EvalReport::at(const std::string& model, int context, int step) const {
  for (const auto& r : rows) {
    if (r.model == model && r.context == context && r.step == step) return r;
  }
  throw DomainError("no eval row for " + model + " context " + std::to_string(context) + " step " +
                    std::to_string(step));
}

double EvalReport::mean_over_steps(const std::string& model, int context, int first, int last,
                                   double EvalRow::*metric) const {
  double s = 0.0;
  for (int t = first; t <= last; ++t) s += at(model, context, t).*metric;
  return s / (last - first + 1);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"model", r.model},
                      {"context", r.context},
                      {"step", r.step},
                      {"count", r.count},
                      {"miou", r.miou},
                      {"depth_mae", r.depth_mae},
                      {"pixel_accuracy", r.pixel_accuracy},
                      {"diversity_unobserved", r.diversity_unobserved},
                      {"diversity_observed", r.diversity_observed},
                      {"guidance_valid", r.guidance_valid}});
  }
  nlohmann::json models = nlohmann::json::object();
  for (const auto& [name, fp] : model_fingerprints) models[name] = fp;
  return {{"schema_version", kEvalSchemaVersion},
          {"seed", seed},
          {"config_fingerprint", config_fingerprint},
          {"model_fingerprints", models},
          {"world_seeds", world_seeds},
          {"rows", rows_j}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << kEvalCsvHeader << '\n';
  for (const auto& r : rows) {
    const std::pair<const char*, double> metrics[] = {
        {"miou", r.miou},
        {"depth_mae", r.depth_mae},
        {"pixel_accuracy", r.pixel_accuracy},
        {"diversity_unobserved", r.diversity_unobserved},
        {"diversity_observed", r.diversity_observed},
        {"guidance_valid", r.guidance_valid}};
    for (const auto& [name, value] : metrics) {
      os << r.model << ',' << r.context << ',' << r.step << ',' << name << ',' << fmt(value) << '\n';
    }
  }
  return os.str();
}

std::string fingerprint(const nlohmann::json& j) {
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvalReport run_eval_grid(const std::vector<EvalModel>& models,
                         const std::vector<world::World>& worlds,
                         const std::vector<std::uint64_t>& world_seeds,
                         const EvalOptions& opt) {
  if (worlds.empty()) throw DomainError("evaluation needs at least one world");
  if (models.empty()) throw DomainError("evaluation needs at least one model");
  if (opt.contexts.empty() || opt.steps < 1 || opt.trajectories_per_world < 1) {
    throw DomainError("evaluation grid needs contexts, steps >= 1 and trajectories >= 1");
  }
  int max_context = 0;
  for (int c : opt.contexts) {
    if (c < 1) throw DomainError("context counts must be positive");
    max_context = std::max(max_context, c);
  }
  const geom::PanoGeometry g(opt.width, opt.height);
  const int length = max_context + opt.steps;

  struct Acc {
    int count = 0;
    double miou = 0, mae = 0, acc = 0, div_u = 0, div_o = 0, valid = 0;
  };
  // (model index, context, step) -> sums
  std::map<std::tuple<std::size_t, int, int>, Acc> acc;

  for (std::size_t wi = 0; wi < worlds.size(); ++wi) {
    const auto& w = worlds[wi];
    if (w.graph.nodes.size() < 2) continue;
    for (int ti = 0; ti < opt.trajectories_per_world; ++ti) {
      const std::uint64_t traj_seed = opt.seed * 1000003ULL + wi * 1009ULL + static_cast<std::uint64_t>(ti);
      const auto poses = world::sample_trajectory(w.graph, traj_seed, length);
      std::vector<cloud::PanoFrame> frames;
      frames.reserve(poses.size());
      for (const auto& p : poses) frames.push_back(world::render_pano(w.scene, p, g, opt.max_depth));
      const std::vector<geom::Pose> targets(poses.begin() + max_context, poses.end());
      const std::vector<cloud::PanoFrame> truth(frames.begin() + max_context, frames.end());

      for (int c : opt.contexts) {
        const std::vector<cloud::PanoFrame> context(frames.begin() + (max_context - c),
                                                    frames.begin() + max_context);
        // Unobserved = invalid in context-only guidance.
        std::vector<Mask> unobserved;
        if (opt.diversity) {
          cloud::PointCloud pc(opt.classes);
          for (const auto& f : context) pc.insert_frame(f, 1);
          for (const auto& p : targets) {
            const auto guide = cloud::render_guidance(pc, p, g, opt.max_depth);
            Mask m(g.width(), g.height(), 0);
            for (std::size_t i = 0; i < m.size(); ++i) m.pixels()[i] = guide.valid.pixels()[i] ? 0 : 1;
            unobserved.push_back(std::move(m));
          }
        }
        for (std::size_t mi = 0; mi < models.size(); ++mi) {
          const auto* model = models[mi].model;
          const auto steps =
              model == nullptr
                  ? structgen::rollout(structgen::nearest_neighbor_predictor(), context, targets,
                                       structgen::RolloutMode::kRecurrent)
                  : structgen::rollout(*model, context, targets, structgen::RolloutMode::kRecurrent,
                                       structgen::ZPolicy::prior_mean());
          std::vector<structgen::RolloutStep> sample_a, sample_b;
          if (opt.diversity && model != nullptr) {
            sample_a = structgen::rollout(*model, context, targets, structgen::RolloutMode::kRecurrent,
                                          structgen::ZPolicy::prior_sample(opt.diversity_seed_a + traj_seed));
            sample_b = structgen::rollout(*model, context, targets, structgen::RolloutMode::kRecurrent,
                                          structgen::ZPolicy::prior_sample(opt.diversity_seed_b + traj_seed));
          }
          for (int t = 0; t < opt.steps; ++t) {
            const auto& pred = steps[static_cast<std::size_t>(t)];
            const auto& gt = truth[static_cast<std::size_t>(t)];
            auto& a = acc[{mi, c, t + 1}];
            ++a.count;
            a.miou += miou(gt.sem, pred.prediction.sem, opt.classes);
            a.mae += depth_mae(gt.depth, pred.prediction.depth);
            a.acc += pixel_accuracy(gt.sem, pred.prediction.sem);
            a.valid += pred.guide.valid_fraction();
            if (!sample_a.empty()) {
              const auto d = diversity_score({sample_a[static_cast<std::size_t>(t)].prediction.sem,
                                              sample_b[static_cast<std::size_t>(t)].prediction.sem},
                                             unobserved[static_cast<std::size_t>(t)]);
              a.div_u += d.unobserved;
              a.div_o += d.observed;
            }
          }
        }
      }
    }
  }

  EvalReport report;
  report.seed = opt.seed;
  report.world_seeds = world_seeds;
  report.config_fingerprint = fingerprint(opt.to_json());
  for (const auto& m : models) {
    report.model_fingerprints.emplace_back(
        m.name, m.model == nullptr ? "nearest_neighbor"
                                   : fingerprint({{"config", m.model->config().to_json()},
                                                  {"checksum", m.model->params().checksum()}}));
  }
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    for (int c : opt.contexts) {
      for (int t = 1; t <= opt.steps; ++t) {
        const auto it = acc.find({mi, c, t});
        EvalRow row;
        row.model = models[mi].name;
        row.context = c;
        row.step = t;
        if (it != acc.end() && it->second.count > 0) {
          const auto& a = it->second;
          const double n = a.count;
          row.count = a.count;
          row.miou = a.miou / n;
          row.depth_mae = a.mae / n;
          row.pixel_accuracy = a.acc / n;
          row.diversity_unobserved = a.div_u / n;
          row.diversity_observed = a.div_o / n;
          row.guidance_valid = a.valid / n;
        }
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

}  // namespace panodream::eval
