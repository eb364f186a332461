#include "panodream/imggen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "panodream/errors.hpp"
#include "panodream/nn/checkpoint.hpp"
#include "panodream/nn/ops.hpp"
#include "panodream/synthworld.hpp"

namespace panodream::imggen {

using nn::Conv;
using nn::Shape;

namespace {

std::mt19937_64 seeded(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

int block_in_width(const ImageConfig& c, int b) { return b == 0 ? c.widths[0] : c.widths[b - 1]; }
int block_scale(int b) { return b == 0 ? 4 : (b == 1 ? 2 : 1); }

Conv stem_conv(const ImageConfig& c) { return {"stem", c.struct_channels(), c.widths[0], 3, 1, false}; }
Conv block_conv(const ImageConfig& c, int b, int i) {
  const int in = i == 1 ? block_in_width(c, b) : c.widths[b];
  return {"block" + std::to_string(b) + ".conv" + std::to_string(i), in, c.widths[b], 3, 1, false};
}
Conv skip_conv(const ImageConfig& c, int b) {
  return {"block" + std::to_string(b) + ".skip", block_in_width(c, b), c.widths[b], 1, 1, false};
}
bool has_skip_conv(const ImageConfig& c, int b) { return block_in_width(c, b) != c.widths[b]; }
Conv out_conv(const ImageConfig& c) { return {"out", c.widths[3], 3, 3, 1, false}; }

void validate(const ImageConfig& c) {
  if (c.classes < 2) throw DomainError("image config: need at least 2 classes");
  if (c.height % 4 != 0 || c.width % 4 != 0 || c.height < 4) {
    throw DomainError("image config: geometry must be divisible by 4");
  }
  for (int w : c.widths) {
    if (w < 1) throw DomainError("image config: widths must be positive");
  }
  if (c.spade_hidden < 1 || !(c.max_depth > 0.0)) {
    throw DomainError("image config: spade_hidden and max_depth must be positive");
  }
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return static_cast<double>(s) / static_cast<double>(a.size());
}

}  // namespace

RgbImage colorize(const ClassMap& sem, const DepthMap& depth, double max_depth, int classes) {
  if (!sem.same_size(depth)) throw ShapeError("colorize: semantic and depth sizes differ");
  const auto& pal = default_palette();
  RgbImage out(sem.width(), sem.height());
  for (std::size_t i = 0; i < sem.size(); ++i) {
    const std::int32_t k = sem.pixels()[i];
    if (k < 0 || k >= classes || static_cast<std::size_t>(k) >= pal.size()) {
      throw DataError("colorize: class " + std::to_string(k) + " outside the palette");
    }
    const double shade = 1.0 - 0.5 * std::clamp(depth.pixels()[i] / max_depth, 0.0, 1.0);
    const Rgb8 c = pal[static_cast<std::size_t>(k)];
    out.pixels()[i] = {static_cast<std::uint8_t>(std::lround(c.r * shade)),
                       static_cast<std::uint8_t>(std::lround(c.g * shade)),
                       static_cast<std::uint8_t>(std::lround(c.b * shade))};
  }
  return out;
}

Tensor rgb_tensor(const std::vector<const RgbImage*>& images) {
  if (images.empty()) throw ShapeError("rgb_tensor: empty batch");
  const int w = images[0]->width(), h = images[0]->height();
  Tensor t(static_cast<int>(images.size()), 3, h, w);
  for (int n = 0; n < t.n(); ++n) {
    const RgbImage& im = *images[static_cast<std::size_t>(n)];
    if (!im.same_size(w, h)) throw ShapeError("rgb_tensor: image sizes differ");
    for (std::size_t i = 0; i < im.size(); ++i) {
      t.plane_ptr(n, 0)[i] = im.pixels()[i].r / 255.0;
      t.plane_ptr(n, 1)[i] = im.pixels()[i].g / 255.0;
      t.plane_ptr(n, 2)[i] = im.pixels()[i].b / 255.0;
    }
  }
  return t;
}

RgbImage to_rgb_image(const Tensor& t, int n) {
  if (t.c() != 3) throw ShapeError("to_rgb_image: expected 3 channels");
  RgbImage im(t.w(), t.h());
  for (std::size_t i = 0; i < im.size(); ++i) {
    im.pixels()[i] = {to_byte(t.plane_ptr(n, 0)[i]), to_byte(t.plane_ptr(n, 1)[i]),
                      to_byte(t.plane_ptr(n, 2)[i])};
  }
  return im;
}

Tensor mask_tensor(const std::vector<const Mask*>& masks) {
  if (masks.empty()) throw ShapeError("mask_tensor: empty batch");
  const int w = masks[0]->width(), h = masks[0]->height();
  Tensor t(static_cast<int>(masks.size()), 1, h, w);
  for (int n = 0; n < t.n(); ++n) {
    const Mask& m = *masks[static_cast<std::size_t>(n)];
    if (!m.same_size(w, h)) throw ShapeError("mask_tensor: mask sizes differ");
    for (std::size_t i = 0; i < m.size(); ++i) t.plane_ptr(n, 0)[i] = m.pixels()[i] ? 1.0 : 0.0;
  }
  return t;
}

Tensor structure_tensor(const std::vector<const cloud::DenseStructure*>& s, int classes,
                        double max_depth) {
  if (s.empty()) throw ShapeError("structure_tensor: empty batch");
  const int w = s[0]->sem.width(), h = s[0]->sem.height();
  Tensor t(static_cast<int>(s.size()), classes + 1, h, w);
  for (int n = 0; n < t.n(); ++n) {
    const auto& d = *s[static_cast<std::size_t>(n)];
    if (!d.sem.same_size(w, h) || !d.depth.same_size(w, h)) {
      throw ShapeError("structure_tensor: sizes differ");
    }
    for (std::size_t i = 0; i < d.sem.size(); ++i) {
      const std::int32_t k = d.sem.pixels()[i];
      if (k < 0 || k >= classes) {
        throw DataError("structure_tensor: class " + std::to_string(k) + " outside [0, " +
                        std::to_string(classes) + ")");
      }
      t.plane_ptr(n, k)[i] = 1.0;
      t.plane_ptr(n, classes)[i] = d.depth.pixels()[i] / max_depth;
    }
  }
  return t;
}

// --- config ----------------------------------------------------------------

nlohmann::json ImageConfig::to_json() const {
  return {{"classes", classes}, {"width", width},       {"height", height},
          {"widths", widths},   {"spade_hidden", spade_hidden}, {"max_depth", max_depth}};
}

ImageConfig ImageConfig::from_json(const nlohmann::json& j) {
  ImageConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "classes") c.classes = value.get<int>();
    else if (key == "width") c.width = value.get<int>();
    else if (key == "height") c.height = value.get<int>();
    else if (key == "widths") c.widths = value.get<std::array<int, 4>>();
    else if (key == "spade_hidden") c.spade_hidden = value.get<int>();
    else if (key == "max_depth") c.max_depth = value.get<double>();
    else throw SchemaError("unknown image config key: " + key);
  }
  validate(c);
  return c;
}

// --- generator -------------------------------------------------------------

nn::Spade ImageGenerator::structure_spade(int b) const {
  return {structure_site(b), block_in_width(cfg_, b), cfg_.struct_channels(), cfg_.spade_hidden, false};
}

nn::Spade ImageGenerator::guide_spade(int b) const {
  return {guide_site(b), cfg_.widths[b], 3, cfg_.spade_hidden, true};
}

ImageGenerator::ImageGenerator(const ImageConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  auto rng = seeded(seed, 0x696d'6167'65ULL);
  stem_conv(cfg_).init(params_, rng);
  for (int b = 0; b < 4; ++b) {
    structure_spade(b).init(params_, rng);
    block_conv(cfg_, b, 1).init(params_, rng);
    guide_spade(b).init(params_, rng);
    block_conv(cfg_, b, 2).init(params_, rng);
    if (has_skip_conv(cfg_, b)) skip_conv(cfg_, b).init(params_, rng);
  }
  out_conv(cfg_).init(params_, rng);
}

Tensor ImageGenerator::forward(const Tensor& structure, const Tensor& guide, const Tensor& mask,
                               GenCache* cache) const {
  if (structure.c() != cfg_.struct_channels()) {
    throw ShapeError("image generator: expected " + std::to_string(cfg_.struct_channels()) +
                     " structure channels, got " + std::to_string(structure.c()));
  }
  const Shape gs{structure.n(), 3, cfg_.height, cfg_.width};
  nn::require_shape(guide, gs, "image generator guide");
  nn::require_shape(mask, Shape{structure.n(), 1, cfg_.height, cfg_.width}, "image generator mask");

  GenCache local;
  GenCache& c = cache != nullptr ? *cache : local;
  c.structure = structure;
  c.guide = guide;
  c.mask = mask;
  c.stem_in = nn::nearest_resize(structure, cfg_.height / 4, cfg_.width / 4);
  c.stem = stem_conv(cfg_).forward(params_, c.stem_in);

  Tensor x = c.stem;
  for (int b = 0; b < 4; ++b) {
    if (b > 0 && block_scale(b) != block_scale(b - 1)) x = nn::nearest_upsample(x, 2);
    c.block_in[b] = x;
    BlockCache& bc = c.blocks[b];
    bc.input = x;
    bc.n1 = structure_spade(b).forward(params_, x, structure, nullptr, &bc.s1);
    bc.a1 = nn::relu(bc.n1);
    bc.c1 = block_conv(cfg_, b, 1).forward(params_, bc.a1);
    bc.n2 = guide_spade(b).forward(params_, bc.c1, guide, &mask, &bc.s2);
    bc.a2 = nn::relu(bc.n2);
    bc.c2 = block_conv(cfg_, b, 2).forward(params_, bc.a2);
    bc.output = bc.c2;
    bc.output += has_skip_conv(cfg_, b) ? skip_conv(cfg_, b).forward(params_, x) : x;
    x = bc.output;
  }
  c.out_pre = out_conv(cfg_).forward(params_, x);
  c.out = nn::sigmoid(c.out_pre);
  return c.out;
}

void ImageGenerator::backward(const GenCache& c, const Tensor& d_out) {
  nn::require_same_shape(d_out, c.out, "image generator grad");
  Tensor d = out_conv(cfg_).backward(params_, c.blocks[3].output, nn::sigmoid_backward(c.out, d_out));
  for (int b = 3; b >= 0; --b) {
    const BlockCache& bc = c.blocks[b];
    Tensor dx = has_skip_conv(cfg_, b) ? skip_conv(cfg_, b).backward(params_, bc.input, d) : d;
    Tensor g = block_conv(cfg_, b, 2).backward(params_, bc.a2, d);
    g = guide_spade(b).backward(params_, bc.s2, nn::relu_backward(bc.n2, g));
    g = block_conv(cfg_, b, 1).backward(params_, bc.a1, g);
    dx += structure_spade(b).backward(params_, bc.s1, nn::relu_backward(bc.n1, g));
    d = (b > 0 && block_scale(b) != block_scale(b - 1)) ? nn::nearest_upsample_backward(dx, 2)
                                                         : std::move(dx);
  }
  stem_conv(cfg_).backward(params_, c.stem_in, d, false);
}

RgbImage generate_rgb(const ImageGenerator& gen, const cloud::DenseStructure& structure,
                      const RgbImage& guide_rgb, const Mask& guide_mask) {
  const auto& cfg = gen.config();
  if (!guide_rgb.same_size(cfg.width, cfg.height) || !guide_mask.same_size(guide_rgb)) {
    throw ShapeError("generate_rgb: guidance must be " + std::to_string(cfg.width) + "x" +
                     std::to_string(cfg.height));
  }
  const Tensor s = structure_tensor({&structure}, cfg.classes, cfg.max_depth);
  Tensor guide = rgb_tensor({&guide_rgb});
  const Tensor mask = mask_tensor({&guide_mask});
  for (int ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < mask.size(); ++i) guide.plane_ptr(0, ch)[i] *= mask[i];
  return to_rgb_image(gen.forward(s, guide, mask), 0);
}

// --- feature extractor -----------------------------------------------------

FeatureExtractor::FeatureExtractor(std::uint64_t seed, std::array<int, 3> widths)
    : stages_{Conv{"fx0", 3, widths[0], 3, 1, false}, Conv{"fx1", widths[0], widths[1], 3, 2, false},
              Conv{"fx2", widths[1], widths[2], 3, 2, false}} {
  auto rng = seeded(seed, 0x6678ULL);
  for (const auto& s : stages_) s.init(params_, rng);
  // Small random biases so every stage has active and inactive units.
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& p : params_.params()) {
    if (p.name.ends_with(".b")) {
      for (auto& v : p.value.values()) v = u(rng);
    }
  }
}

std::vector<Tensor> FeatureExtractor::forward(const Tensor& rgb, std::vector<Tensor>* pre) const {
  if (rgb.c() != 3) throw ShapeError("feature extractor: expected 3 channels");
  std::vector<Tensor> out;
  if (pre != nullptr) pre->clear();
  const Tensor* x = &rgb;
  for (const auto& s : stages_) {
    Tensor p = s.forward(params_, *x);
    out.push_back(nn::relu(p));
    if (pre != nullptr) pre->push_back(std::move(p));
    x = &out.back();
  }
  return out;
}

Tensor FeatureExtractor::backward(const Tensor& rgb, const std::vector<Tensor>& pre,
                                  const std::vector<Tensor>& d_features) const {
  Tensor d;
  for (int i = 2; i >= 0; --i) {
    const auto u = static_cast<std::size_t>(i);
    Tensor g = d_features[u];
    if (!d.empty()) g += d;
    g = nn::relu_backward(pre[u], g);
    const Tensor x = i == 0 ? rgb : nn::relu(pre[u - 1]);
    d = nn::conv2d_circx_backward(x, params_.value(stages_[u].weight()), stages_[u].stride, g, true)
            .input;
  }
  return d;
}

// --- discriminator ---------------------------------------------------------

Discriminator::Discriminator(int input_channels, std::uint64_t seed, std::array<int, 3> widths)
    : layers_{Conv{"d0", input_channels, widths[0], 3, 2, false},
              Conv{"d1", widths[0], widths[1], 3, 2, false},
              Conv{"d2", widths[1], widths[2], 3, 2, false}},
      score_{"score", widths[2], 1, 3, 1, false} {
  auto rng = seeded(seed, 0x6469'7363ULL);
  for (const auto& l : layers_) l.init(params_, rng);
  score_.init(params_, rng);
}

CriticPass Discriminator::forward(const Tensor& input) const {
  if (input.c() != layers_[0].in) {
    throw ShapeError("discriminator: expected " + std::to_string(layers_[0].in) + " channels, got " +
                     std::to_string(input.c()));
  }
  CriticPass p;
  p.input = input;
  const Tensor* x = &input;
  for (const auto& l : layers_) {
    p.pre.push_back(l.forward(params_, *x));
    p.features.push_back(nn::relu(p.pre.back()));
    x = &p.features.back();
  }
  p.score = score_.forward(params_, *x);
  return p;
}

Tensor Discriminator::backward(const CriticPass& p, const std::vector<Tensor>& d_features,
                               const Tensor& d_score, bool param_grads) {
  auto back = [&](const Conv& c, const Tensor& x, const Tensor& g) {
    if (param_grads) return c.backward(params_, x, g);
    return nn::conv2d_circx_backward(x, params_.value(c.weight()), c.stride, g, true).input;
  };
  Tensor d = back(score_, p.features[2], d_score);
  for (int i = 2; i >= 0; --i) {
    const auto u = static_cast<std::size_t>(i);
    if (!d_features.empty() && !d_features[u].empty()) d += d_features[u];
    d = back(layers_[u], i == 0 ? p.input : p.features[u - 1], nn::relu_backward(p.pre[u], d));
  }
  return d;
}

Tensor critic_input(const Tensor& rgb, const Tensor& structure) {
  if (structure.h() == rgb.h() && structure.w() == rgb.w()) {
    return nn::concat_channels({&rgb, &structure});
  }
  const Tensor resized = nn::nearest_resize(structure, rgb.h(), rgb.w());
  return nn::concat_channels({&rgb, &resized});
}

// --- losses ----------------------------------------------------------------

GeneratorLoss generator_loss(const Tensor& gen_out, const Tensor& real, const Tensor& structure,
                             Critic& disc, const FeatureExtractor& fx, const GanWeights& w) {
  nn::require_same_shape(gen_out, real, "generator_loss");
  GeneratorLoss r;

  // Perceptual term.
  std::vector<Tensor> fx_pre;
  const auto phi_fake = fx.forward(gen_out, &fx_pre);
  const auto phi_real = fx.forward(real);
  const double n_fx = static_cast<double>(phi_fake.size());
  std::vector<Tensor> d_phi;
  for (std::size_t i = 0; i < phi_fake.size(); ++i) {
    auto l = nn::l1_mean(phi_fake[i], phi_real[i]);
    r.vgg += l.value / n_fx;
    l.grad *= w.vgg / n_fx;
    d_phi.push_back(std::move(l.grad));
  }
  r.d_gen = fx.backward(gen_out, fx_pre, d_phi);

  // Adversarial and feature-matching terms through the critic.
  const CriticPass fake = disc.forward(critic_input(gen_out, structure));
  const CriticPass real_pass = disc.forward(critic_input(real, structure));
  if (fake.features.size() != real_pass.features.size()) {
    throw ShapeError("generator_loss: critic feature counts differ");
  }
  // A critic without intermediate outputs contributes no matching term.
  const double n_d = static_cast<double>(std::max<std::size_t>(1, fake.features.size()));
  std::vector<Tensor> d_feat;
  for (std::size_t i = 0; i < fake.features.size(); ++i) {
    auto l = nn::l1_mean(fake.features[i], real_pass.features[i]);
    r.fm += l.value / n_d;
    l.grad *= w.fm / n_d;
    d_feat.push_back(std::move(l.grad));
  }
  auto ms = nn::mean(fake.score);
  r.gan = -ms.value;
  ms.grad *= -w.gan;
  const Tensor d_in = disc.backward(fake, d_feat, ms.grad, false);
  r.d_gen += nn::slice_channels(d_in, 0, 3);

  r.total = w.gan * r.gan + w.vgg * r.vgg + w.fm * r.fm;
  return r;
}

double discriminator_loss(Critic& disc, const Tensor& real, const Tensor& fake,
                          const Tensor& structure, bool accumulate) {
  nn::require_same_shape(real, fake, "discriminator_loss");
  const CriticPass pr = disc.forward(critic_input(real, structure));
  const CriticPass pf = disc.forward(critic_input(fake, structure));
  const double nr = static_cast<double>(pr.score.size());
  const double nf = static_cast<double>(pf.score.size());
  long double lr = 0.0L, lf = 0.0L;
  Tensor dr(pr.score.shape()), df(pf.score.shape());
  for (std::size_t i = 0; i < pr.score.size(); ++i) {
    const double v = std::min(0.0, -1.0 + pr.score[i]);
    lr -= v;
    if (v < 0.0) dr[i] = -1.0 / nr;
  }
  for (std::size_t i = 0; i < pf.score.size(); ++i) {
    const double v = std::min(0.0, -1.0 - pf.score[i]);
    lf -= v;
    if (v < 0.0) df[i] = 1.0 / nf;
  }
  if (accumulate) {
    disc.backward(pr, {}, dr, true);
    disc.backward(pf, {}, df, true);
  }
  return static_cast<double>(lr) / nr + static_cast<double>(lf) / nf;
}

// --- training --------------------------------------------------------------

ImageBatch make_image_batch(const std::vector<const ImageSample*>& samples, const ImageConfig& cfg) {
  if (samples.empty()) throw DomainError("image batch: no samples");
  std::vector<const cloud::DenseStructure*> s;
  std::vector<const RgbImage*> guides, reals;
  std::vector<const Mask*> masks;
  for (const auto* p : samples) {
    s.push_back(&p->structure);
    guides.push_back(&p->guide_rgb);
    reals.push_back(&p->real);
    masks.push_back(&p->guide_mask);
  }
  ImageBatch b;
  b.structure = structure_tensor(s, cfg.classes, cfg.max_depth);
  b.structure_full = nn::nearest_resize(b.structure, cfg.height, cfg.width);
  b.guide = rgb_tensor(guides);
  b.mask = mask_tensor(masks);
  b.real = rgb_tensor(reals);
  nn::require_shape(b.real, Shape{b.real.n(), 3, cfg.height, cfg.width}, "image batch real");
  for (int n = 0; n < b.guide.n(); ++n)
    for (int ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < b.guide.plane(); ++i) {
        b.guide.plane_ptr(n, ch)[i] *= b.mask.plane_ptr(n, 0)[i];
      }
  return b;
}

std::vector<ImageSample> image_samples(const std::vector<world::World>& worlds, const ImageConfig& cfg,
                                       const geom::PanoGeometry& structure_geometry, int per_world,
                                       std::uint64_t seed) {
  if (per_world < 1) throw DomainError("image_samples: per_world must be positive");
  const geom::PanoGeometry image_geometry(cfg.width, cfg.height);
  std::vector<ImageSample> out;
  for (std::size_t w = 0; w < worlds.size(); ++w) {
    const auto& wd = worlds[w];
    for (int i = 0; i < per_world; ++i) {
      auto rng = seeded(seed, w * 1000003ULL + static_cast<std::uint64_t>(i));
      const auto traj = world::sample_trajectory(wd.graph, rng(), 2);
      const auto context = world::render_pano(wd.scene, traj[0], image_geometry, cfg.max_depth);
      const auto target = world::render_pano(wd.scene, traj[1], image_geometry, cfg.max_depth);
      const auto truth = world::render_pano(wd.scene, traj[1], structure_geometry, cfg.max_depth);
      cloud::PointCloud pc(cfg.classes);
      pc.insert_frame(context);
      const auto guide = cloud::render_guidance(pc, traj[1], image_geometry, cfg.max_depth);
      out.push_back({{truth.sem, truth.depth}, guide.rgb, guide.valid, target.rgb});
    }
  }
  return out;
}

nlohmann::json ImageTrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch", batch},
          {"lr_g", lr_g},
          {"lr_d", lr_d},
          {"beta1", beta1},
          {"seed", seed},
          {"lambda_gan", weights.gan},
          {"lambda_vgg", weights.vgg},
          {"lambda_fm", weights.fm}};
}

ImageTrainConfig ImageTrainConfig::from_json(const nlohmann::json& j) {
  ImageTrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "steps") c.steps = value.get<int>();
    else if (key == "batch") c.batch = value.get<int>();
    else if (key == "lr_g") c.lr_g = value.get<double>();
    else if (key == "lr_d") c.lr_d = value.get<double>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "lambda_gan") c.weights.gan = value.get<double>();
    else if (key == "lambda_vgg") c.weights.vgg = value.get<double>();
    else if (key == "lambda_fm") c.weights.fm = value.get<double>();
    else throw SchemaError("unknown image training key: " + key);
  }
  return c;
}

ImageTrainResult train_image_generator(ImageGenerator& gen, Discriminator& disc,
                                       const FeatureExtractor& fx,
                                       const std::vector<ImageSample>& data,
                                       const ImageTrainConfig& tc,
                                       const std::function<void(const ImageLossRecord&)>& on_step) {
  if (data.empty()) throw DomainError("image training needs at least one sample");
  if (tc.batch < 1 || tc.steps < 0) throw DomainError("image training needs batch >= 1 and steps >= 0");
  auto rng = seeded(tc.seed, 0x7267'62ULL);
  nn::AdamOptions adam_g{tc.lr_g, tc.beta1, 0.999, 1e-8};
  nn::AdamOptions adam_d{tc.lr_d, tc.beta1, 0.999, 1e-8};

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  ImageTrainResult result;
  for (int step = 1; step <= tc.steps; ++step) {
    std::vector<const ImageSample*> picked;
    for (int i = 0; i < tc.batch && i < static_cast<int>(data.size()); ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picked.push_back(&data[order[cursor++]]);
    }
    const ImageBatch b = make_image_batch(picked, gen.config());

    GenCache cache;
    const Tensor out = gen.forward(b.structure, b.guide, b.mask, &cache);
    gen.params().zero_grad();
    const auto gl = generator_loss(out, b.real, b.structure_full, disc, fx, tc.weights);

    ImageLossRecord rec{step, gl.total, gl.gan, gl.vgg, gl.fm, 0.0, mean_abs_diff(out, b.real)};
    if (!std::isfinite(gl.total)) {
      std::ostringstream msg;
      msg << "non-finite generator loss at step " << step << ": gan " << gl.gan << " vgg " << gl.vgg
          << " fm " << gl.fm;
      throw NumericError(msg.str());
    }
    gen.backward(cache, gl.d_gen);
    nn::adam_step(gen.params(), adam_g);

    if (tc.weights.gan != 0.0 || tc.weights.fm != 0.0) {
      disc.params().zero_grad();
      rec.d_loss = discriminator_loss(disc, b.real, out, b.structure_full, true);
      if (!std::isfinite(rec.d_loss)) {
        throw NumericError("non-finite discriminator loss at step " + std::to_string(step));
      }
      nn::adam_step(disc.params(), adam_d);
    }
    result.curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  result.checksum = gen.params().checksum();
  return result;
}

void write_image_loss_csv(const std::string& path, const std::vector<ImageLossRecord>& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss curve: " + path);
  out << "step,g_total,gan,vgg,fm,d_loss,l1\n" << std::setprecision(17);
  for (const auto& r : curve) {
    out << r.step << ',' << r.g_total << ',' << r.gan << ',' << r.vgg << ',' << r.fm << ','
        << r.d_loss << ',' << r.l1 << '\n';
  }
  if (!out) throw IoError("failed writing loss curve: " + path);
}

void save_image_model(const std::string& path, const ImageGenerator& gen,
                      const nlohmann::json& extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["model"] = "image";
  meta["config"] = gen.config().to_json();
  nn::save_checkpoint(path, gen.params(), meta);
}

ImageGenerator load_image_model(const std::string& path) {
  auto ckpt = nn::load_checkpoint(path);
  if (ckpt.meta.value("model", "") != "image") {
    throw SchemaError("checkpoint " + path + " does not hold an image model");
  }
  ImageGenerator gen(ImageConfig::from_json(ckpt.meta.at("config")), 0);
  nn::restore_values(gen.params(), ckpt.store);
  return gen;
}

}  // namespace panodream::imggen
