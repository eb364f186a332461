#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "panodream/image.hpp"
#include "panodream/structgen.hpp"
#include "panodream/synthworld.hpp"

namespace panodream::eval {

// Mean over classes with nonzero union of |gt=c and pred=c| / |gt=c or pred=c|.
double miou(const ClassMap& gt, const ClassMap& pred, int classes);
double depth_mae(const DepthMap& gt, const DepthMap& pred);
double pixel_accuracy(const ClassMap& gt, const ClassMap& pred);

struct Diversity {
  double unobserved = 0.0;
  double observed = 0.0;
};

// Mean pairwise disagreement rate over all sample pairs, inside and outside
// the mask (nonzero = unobserved). A region with no pixels scores 0.
Diversity diversity_score(const std::vector<ClassMap>& samples, const Mask& unobserved);

struct EvalModel {
  std::string name;
  // nullptr selects the nearest-neighbor baseline.
  const structgen::StructureGenerator* model = nullptr;
};

struct EvalOptions {
  std::vector<int> contexts{1, 2, 3};
  int steps = 6;
  int trajectories_per_world = 4;
  std::uint64_t seed = 0;
  int width = 64;
  int height = 32;
  int classes = kDefaultClassCount;
  double max_depth = geom::kDefaultMaxDepth;
  // Two prior-sample rollouts per trajectory for stochastic models.
  bool diversity = true;
  std::uint64_t diversity_seed_a = 1;
  std::uint64_t diversity_seed_b = 2;

  nlohmann::json to_json() const;
  static EvalOptions from_json(const nlohmann::json& j);
};

struct EvalRow {
  std::string model;
  int context = 0;
  int step = 0;
  int count = 0;
  double miou = 0.0;
  double depth_mae = 0.0;
  double pixel_accuracy = 0.0;
  double diversity_unobserved = 0.0;
  double diversity_observed = 0.0;
  double guidance_valid = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::uint64_t> world_seeds;
  std::uint64_t seed = 0;
  std::string config_fingerprint;
  std::vector<std::pair<std::string, std::string>> model_fingerprints;

  const EvalRow& at(const std::string& model, int context, int step) const;
  // Mean of a metric over steps [first, last] for one model and context.
  double mean_over_steps(const std::string& model, int context, int first, int last,
                         double EvalRow::*metric) const;

  nlohmann::json to_json() const;
  // Long layout: model,context,step,metric,value.
  std::string to_csv() const;
};

inline constexpr const char* kEvalCsvHeader = "model,context,step,metric,value";
inline constexpr int kEvalSchemaVersion = 1;

// Each trajectory has max(contexts) + steps poses. The last `steps` poses
// are predicted for every context count; context c uses the c poses right
// before them, so larger contexts see a superset of frames. Every model
// feeds back its own predictions.
EvalReport run_eval_grid(const std::vector<EvalModel>& models,
                         const std::vector<world::World>& worlds,
                         const std::vector<std::uint64_t>& world_seeds,
                         const EvalOptions& options);

std::string fingerprint(const nlohmann::json& j);

}  // namespace panodream::eval
