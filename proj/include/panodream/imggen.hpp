#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "panodream/classes.hpp"
#include "panodream/cloud.hpp"
#include "panodream/image.hpp"
#include "panodream/nn/layers.hpp"
#include "panodream/nn/params.hpp"
#include "panodream/synthworld.hpp"

namespace panodream::imggen {

using nn::Tensor;

// Palette color shaded by (1 - 0.5 * depth / max_depth).
RgbImage colorize(const ClassMap& sem, const DepthMap& depth, double max_depth = geom::kDefaultMaxDepth,
                  int classes = kDefaultClassCount);

// RGB images as (N, 3, H, W) tensors in [0, 1].
Tensor rgb_tensor(const std::vector<const RgbImage*>& images);
RgbImage to_rgb_image(const Tensor& t, int n);
Tensor mask_tensor(const std::vector<const Mask*>& masks);
// One-hot semantics plus depth / max_depth: (N, C+1, H, W).
Tensor structure_tensor(const std::vector<const cloud::DenseStructure*>& s, int classes,
                        double max_depth);

struct ImageConfig {
  int classes = kDefaultClassCount;
  int width = 128;
  int height = 64;
  // Channel width per Multi-SPADE block; blocks 0 and 1 are followed by a
  // 2x upsample, so block 0 runs at a quarter of the output resolution.
  std::array<int, 4> widths{32, 32, 16, 16};
  int spade_hidden = 16;
  double max_depth = geom::kDefaultMaxDepth;

  int struct_channels() const { return classes + 1; }
  nlohmann::json to_json() const;
  static ImageConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ImageConfig&, const ImageConfig&) = default;
};

struct BlockCache {
  Tensor input;
  nn::Spade::Cache s1, s2;
  Tensor n1, a1, c1, n2, a2, c2;
  Tensor output;
};

struct GenCache {
  Tensor structure, guide, mask;
  Tensor stem_in, stem;
  std::array<BlockCache, 4> blocks;
  // Input to each block (after any upsample).
  std::array<Tensor, 4> block_in;
  Tensor out_pre;
  Tensor out;
};

// Stem conv over the downsampled structure, four residual blocks each with a
// structure-conditioned and a mask-aware RGB-conditioned modulation site, and
// a sigmoid RGB head.
class ImageGenerator {
 public:
  ImageGenerator(const ImageConfig& cfg, std::uint64_t seed);

  const ImageConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // structure: (N, C+1, h, w) at any size; guide: (N, 3, H, W); mask: (N, 1, H, W).
  Tensor forward(const Tensor& structure, const Tensor& guide, const Tensor& mask,
                 GenCache* cache = nullptr) const;
  void backward(const GenCache& cache, const Tensor& d_out);

  static std::string structure_site(int block) { return "block" + std::to_string(block) + ".s1"; }
  static std::string guide_site(int block) { return "block" + std::to_string(block) + ".s2"; }

 private:
  nn::Spade structure_spade(int block) const;
  nn::Spade guide_spade(int block) const;

  ImageConfig cfg_;
  nn::ParamStore params_;
};

RgbImage generate_rgb(const ImageGenerator& gen, const cloud::DenseStructure& structure,
                      const RgbImage& guide_rgb, const Mask& guide_mask);

// Frozen random conv+relu stack standing in for a pretrained perceptual net.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed, std::array<int, 3> widths = {8, 16, 16});

  std::vector<Tensor> forward(const Tensor& rgb, std::vector<Tensor>* pre = nullptr) const;
  // Gradient with respect to the input image.
  Tensor backward(const Tensor& rgb, const std::vector<Tensor>& pre,
                  const std::vector<Tensor>& d_features) const;
  const nn::ParamStore& params() const { return params_; }

 private:
  std::array<nn::Conv, 3> stages_;
  nn::ParamStore params_;
};

// Intermediate outputs and final score map of a critic.
struct CriticPass {
  Tensor input;
  std::vector<Tensor> pre;
  std::vector<Tensor> features;
  Tensor score;
};

class Critic {
 public:
  virtual ~Critic() = default;
  // input = concat(rgb, structure) at image resolution.
  virtual CriticPass forward(const Tensor& input) const = 0;
  // Returns the input gradient; parameter gradients accumulate when asked.
  virtual Tensor backward(const CriticPass& pass, const std::vector<Tensor>& d_features,
                          const Tensor& d_score, bool param_grads) = 0;
};

// Three stride-2 conv+relu layers and a 3x3 score conv.
class Discriminator : public Critic {
 public:
  Discriminator(int input_channels, std::uint64_t seed, std::array<int, 3> widths = {16, 32, 32});

  CriticPass forward(const Tensor& input) const override;
  Tensor backward(const CriticPass& pass, const std::vector<Tensor>& d_features,
                  const Tensor& d_score, bool param_grads) override;
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  std::array<nn::Conv, 3> layers_;
  nn::Conv score_;
  nn::ParamStore params_;
};

Tensor critic_input(const Tensor& rgb, const Tensor& structure);

struct GanWeights {
  double gan = 1.0;
  double vgg = 10.0;
  double fm = 10.0;
};

struct GeneratorLoss {
  double total = 0.0;
  double gan = 0.0;
  double vgg = 0.0;
  double fm = 0.0;
  Tensor d_gen;  // gradient with respect to gen_out
};

// -w.gan * mean D(fake) + w.vgg * mean_i |phi_i(real) - phi_i(fake)|
//   + w.fm * mean_i |D_i(real) - D_i(fake)|, each L1 a mean over elements.
// structure is the critic's conditioning at image resolution.
GeneratorLoss generator_loss(const Tensor& gen_out, const Tensor& real, const Tensor& structure,
                             Critic& disc, const FeatureExtractor& fx, const GanWeights& w = {});

// Hinge loss -mean(min(0, -1 + D(real))) - mean(min(0, -1 - D(fake))).
// Accumulates the critic's parameter gradients when accumulate is true.
double discriminator_loss(Critic& disc, const Tensor& real, const Tensor& fake,
                          const Tensor& structure, bool accumulate = false);

struct ImageSample {
  cloud::DenseStructure structure;
  RgbImage guide_rgb;
  Mask guide_mask;
  RgbImage real;
};

struct ImageBatch {
  Tensor structure;       // generator conditioning
  Tensor structure_full;  // resized to image resolution for the critic
  Tensor guide;
  Tensor mask;
  Tensor real;
};

ImageBatch make_image_batch(const std::vector<const ImageSample*>& samples, const ImageConfig& cfg);

// Per world, two-pose walks: the first frame seeds a cloud whose RGB
// guidance is rendered at the second pose. The structure is the second
// pose's truth at structure_geometry and the target its rendered RGB.
std::vector<ImageSample> image_samples(const std::vector<world::World>& worlds, const ImageConfig& cfg,
                                       const geom::PanoGeometry& structure_geometry, int per_world,
                                       std::uint64_t seed);

struct ImageTrainConfig {
  int steps = 1000;
  int batch = 4;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  std::uint64_t seed = 0;
  GanWeights weights;

  nlohmann::json to_json() const;
  static ImageTrainConfig from_json(const nlohmann::json& j);
};

struct ImageLossRecord {
  int step = 0;
  double g_total = 0.0;
  double gan = 0.0;
  double vgg = 0.0;
  double fm = 0.0;
  double d_loss = 0.0;
  double l1 = 0.0;  // mean |gen_out - real|, for monitoring
};

struct ImageTrainResult {
  std::vector<ImageLossRecord> curve;
  std::uint64_t checksum = 0;
};

// Alternating single G and D Adam steps over seeded minibatches.
ImageTrainResult train_image_generator(ImageGenerator& gen, Discriminator& disc,
                                       const FeatureExtractor& fx,
                                       const std::vector<ImageSample>& data,
                                       const ImageTrainConfig& cfg,
                                       const std::function<void(const ImageLossRecord&)>& on_step = {});

void write_image_loss_csv(const std::string& path, const std::vector<ImageLossRecord>& curve);

void save_image_model(const std::string& path, const ImageGenerator& gen,
                      const nlohmann::json& extra = {});
ImageGenerator load_image_model(const std::string& path);

}  // namespace panodream::imggen
