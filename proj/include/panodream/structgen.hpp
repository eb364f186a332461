#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "panodream/classes.hpp"
#include "panodream/cloud.hpp"
#include "panodream/nn/layers.hpp"
#include "panodream/nn/params.hpp"
#include "panodream/synthworld.hpp"

namespace panodream::structgen {

using nn::Tensor;

struct StructConfig {
  int classes = kDefaultClassCount;
  int width = 64;
  int height = 32;
  int latent_channels = 8;
  // Encoder widths for the four stride-2 levels.
  std::array<int, 4> widths{16, 32, 64, 64};
  int head_hidden = 32;
  // Width of the full-resolution decoder stage.
  int decoder_full = 16;
  double lambda_ce = 1.0;
  double lambda_depth = 100.0;
  double lambda_kl = 0.5;
  double max_depth = geom::kDefaultMaxDepth;
  double log_var_clamp = 10.0;

  int input_channels() const { return classes + 2; }
  // Latent sits at the third encoder level (H/8 x W/8).
  int latent_h() const { return height / 8; }
  int latent_w() const { return width / 8; }
  geom::PanoGeometry geometry() const { return {width, height}; }

  nlohmann::json to_json() const;
  static StructConfig from_json(const nlohmann::json& j);
  friend bool operator==(const StructConfig&, const StructConfig&) = default;
};

struct GaussianParams {
  Tensor mu;
  Tensor log_var;
};

// One-hot semantics (invalid pixels all-zero), depth / D_max and the
// validity mask, stacked as an (N, C+2, H, W) tensor.
Tensor guidance_tensor(const std::vector<const cloud::GuidanceImage*>& guides,
                       const StructConfig& cfg);
// Ground truth as fully valid guidance.
Tensor truth_tensor(const std::vector<const cloud::DenseStructure*>& truth, const StructConfig& cfg);

struct Encoding {
  Tensor input;
  // Pre-activations and activations per level.
  std::array<Tensor, 4> pre;
  std::array<Tensor, 4> act;
  const Tensor& bottleneck() const { return act[3]; }
  const Tensor& latent_features() const { return act[2]; }
};

struct HeadCache {
  Tensor features, h1_pre, h1, h2_pre, h2, raw;
};

struct DecodeCache {
  Tensor z;
  std::array<Tensor, 4> up_pre, up, cat, fuse_pre, fuse;
};

struct DecodeOutput {
  Tensor logits;  // (N, C, H, W)
  Tensor depth;   // (N, 1, H, W) in (0, 1)
};

class StructureGenerator {
 public:
  StructureGenerator(const StructConfig& cfg, std::uint64_t seed);

  const StructConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  Encoding encode(const Tensor& input) const;
  // Accumulates parameter gradients; input gradients are not needed.
  void encode_backward(const Encoding& enc, std::array<Tensor, 4> grad_act);

  GaussianParams prior(const Encoding& enc, HeadCache* cache = nullptr) const;
  GaussianParams posterior(const Encoding& enc, HeadCache* cache = nullptr) const;
  // Returns the gradient with respect to the latent-level features.
  Tensor prior_backward(const HeadCache& cache, const Tensor& d_mu, const Tensor& d_log_var);
  Tensor posterior_backward(const HeadCache& cache, const Tensor& d_mu, const Tensor& d_log_var);

  DecodeOutput decode(const Encoding& enc, const Tensor& z, DecodeCache* cache = nullptr) const;
  // Returns gradients for the encoder activations and for z.
  struct DecodeGrads {
    std::array<Tensor, 4> act;
    Tensor z;
  };
  DecodeGrads decode_backward(const Encoding& enc, const DecodeCache& cache,
                              const DecodeOutput& out, const Tensor& d_logits,
                              const Tensor& d_depth);

 private:
  GaussianParams head(const std::string& prefix, const Tensor& features, HeadCache* cache) const;
  Tensor head_backward(const std::string& prefix, const HeadCache& cache, const Tensor& d_mu,
                       const Tensor& d_log_var);

  StructConfig cfg_;
  nn::ParamStore params_;
};

// z = mu + exp(log_var / 2) * eps.
Tensor sample_z(const GaussianParams& gp, const Tensor& eps);
Tensor standard_normal(const nn::Shape& shape, std::mt19937_64& rng);

// KL(q || p) for diagonal Gaussians, summed over latent elements and
// averaged over the batch.
double kl_diag_gauss(const GaussianParams& q, const GaussianParams& p);

struct KlGrads {
  Tensor mu_q, log_var_q, mu_p, log_var_p;
};
KlGrads kl_diag_gauss_backward(const GaussianParams& q, const GaussianParams& p);

struct LossComponents {
  double total = 0.0;
  double ce = 0.0;
  double depth = 0.0;
  double kl = 0.0;
};

struct StructureLoss {
  LossComponents value;
  Tensor d_logits;
  Tensor d_depth;
  KlGrads kl;
};

// lambda_ce * CE + lambda_depth * mean|d - d_hat| + lambda_kl * KL(q || p).
// Labels are N*H*W class ids; gt_depth is normalized by D_max.
StructureLoss structure_loss(const DecodeOutput& pred, const std::vector<std::int32_t>& labels,
                             const Tensor& gt_depth, const GaussianParams& q,
                             const GaussianParams& p, const StructConfig& cfg);

// Training batch: guidance inputs plus ground truth.
struct StructBatch {
  Tensor input;
  Tensor truth_input;
  std::vector<std::int32_t> labels;
  Tensor gt_depth;  // normalized
  int size() const { return input.n(); }
};

StructBatch make_batch(const std::vector<const cloud::GuidanceImage*>& guides,
                       const std::vector<const cloud::DenseStructure*>& truth,
                       const StructConfig& cfg);

// Full forward pass with posterior-sampled z (given eps); gradients are
// accumulated into the model's store when accumulate is true. Samples whose
// KL is below kl_free_nats get no KL gradient; the reported loss is unchanged.
struct StepResult {
  LossComponents loss;
  DecodeOutput output;
  Encoding encoding;
  GaussianParams prior;
};
StepResult loss_and_grad(StructureGenerator& model, const StructBatch& batch, const Tensor& eps,
                         bool accumulate, double kl_free_nats = 0.0);

// --- inference -------------------------------------------------------------

// Argmax semantics (ties to the lower class) and depth in meters for batch
// element n.
cloud::DenseStructure to_structure(const DecodeOutput& out, int n, double max_depth);

struct ZPolicy {
  enum class Kind { kPriorMean, kPriorSample, kPosterior };
  Kind kind = Kind::kPriorMean;
  std::uint64_t seed = 0;

  static ZPolicy prior_mean() { return {}; }
  static ZPolicy prior_sample(std::uint64_t seed) { return {Kind::kPriorSample, seed}; }
  static ZPolicy posterior() { return {Kind::kPosterior, 0}; }
};

// Single-frame prediction in meters. The posterior policy needs truth;
// sample policies draw eps from (seed, step).
cloud::DenseStructure predict(const StructureGenerator& model, const cloud::GuidanceImage& guide,
                              const ZPolicy& policy, int step = 0,
                              const cloud::DenseStructure* truth = nullptr);

enum class RolloutMode { kTeacherForcing, kRecurrent };

struct RolloutStep {
  cloud::DenseStructure prediction;
  cloud::GuidanceImage guide;
};

// Maps (guidance, step index, optional truth at that step) to a dense
// prediction. Both the learned model and the nearest-neighbor baseline fit.
using Predictor = std::function<cloud::DenseStructure(const cloud::GuidanceImage&, int,
                                                      const cloud::DenseStructure*)>;
// Colors points inserted from predictions.
using Painter = std::function<RgbImage(const cloud::DenseStructure&)>;

RgbImage palette_painter(const cloud::DenseStructure& d);

// Seeds a cloud with the context frames, then per pose renders guidance,
// predicts, and inserts either the prediction (recurrent) or the matching
// truth frame (teacher forcing) before the next pose.
std::vector<RolloutStep> rollout(const Predictor& predictor,
                                 const std::vector<cloud::PanoFrame>& context,
                                 const std::vector<geom::Pose>& trajectory, RolloutMode mode,
                                 const std::vector<cloud::PanoFrame>* truth = nullptr,
                                 const Painter& painter = palette_painter);

std::vector<RolloutStep> rollout(const StructureGenerator& model,
                                 const std::vector<cloud::PanoFrame>& context,
                                 const std::vector<geom::Pose>& trajectory, RolloutMode mode,
                                 const ZPolicy& policy,
                                 const std::vector<cloud::PanoFrame>* truth = nullptr);

Predictor nearest_neighbor_predictor();
Predictor model_predictor(const StructureGenerator& model, const ZPolicy& policy);

// --- training --------------------------------------------------------------

struct TrainConfig {
  RolloutMode mode = RolloutMode::kTeacherForcing;
  double lr = 3e-3;
  int batch = 8;
  int steps = 3000;
  std::uint64_t seed = 0;
  int context_min = 1;
  int context_max = 3;
  // Position jitter applied to every training pose; 0 disables.
  double perturb_sigma = 0.2;
  // Per-sample KL floor in the training objective; 0 optimizes the plain loss.
  double kl_free_nats = 8.0;
  // Cosine schedule from lr down to 0 over the run.
  bool cosine_decay = true;
  // 0 disables periodic checkpoints.
  int checkpoint_every = 0;
  std::string out_dir;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossRecord {
  int step = 0;
  LossComponents loss;
};

struct TrainResult {
  std::vector<LossRecord> curve;
  std::uint64_t checksum = 0;
};

// Streams of trajectories through the given worlds. Each batch slot walks
// its own trajectory; after every step the slot's cloud receives either the
// truth frame or the model's own detached prediction.
TrainResult train_structure(StructureGenerator& model, const std::vector<world::World>& worlds,
                            const TrainConfig& cfg,
                            const std::function<void(const LossRecord&)>& on_step = {});

// One Adam step on a fixed batch.
LossComponents train_step(StructureGenerator& model, const StructBatch& batch,
                          nn::AdamOptions adam, std::mt19937_64& rng);

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& curve);

void save_model(const std::string& path, const StructureGenerator& model,
                const nlohmann::json& extra = {});
StructureGenerator load_model(const std::string& path);
// Loads and checks that the stored config equals cfg.
StructureGenerator load_model(const std::string& path, const StructConfig& cfg);

}  // namespace panodream::structgen
