#include "panodream/structgen.hpp"

#include <cmath>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "panodream/errors.hpp"
#include "panodream/nn/checkpoint.hpp"
#include "panodream/nn/ops.hpp"

namespace panodream::structgen {

using nn::Conv;
using nn::Shape;

namespace {

Conv enc_conv(const StructConfig& c, int level) {
  const int in = level == 0 ? c.input_channels() : c.widths[level - 1];
  return {"enc" + std::to_string(level), in, c.widths[level], 3, 2, false};
}

// Decoder stage s upsamples from level s+1 (or the bottleneck) to level s
// resolution; stage 0 ends at full resolution.
int stage_out(const StructConfig& c, int s) { return s == 0 ? c.decoder_full : c.widths[s - 1]; }
int stage_in(const StructConfig& c, int s) { return s == 3 ? c.widths[3] : stage_out(c, s + 1); }
int skip_channels(const StructConfig& c, int s) {
  return s == 0 ? c.input_channels() : c.widths[s - 1];
}

Conv up_conv(const StructConfig& c, int s) {
  return {"dec" + std::to_string(s) + ".up", stage_in(c, s), stage_out(c, s), 3, 2, true};
}

Conv fuse_conv(const StructConfig& c, int s) {
  int in = stage_out(c, s) + skip_channels(c, s);
  if (s == 3) in += c.latent_channels;
  return {"dec" + std::to_string(s) + ".fuse", in, stage_out(c, s), 3, 1, false};
}

// 1x1 output conv: C semantic logits plus one depth channel.
Conv out_head(const StructConfig& c) { return {"head.out", c.decoder_full, c.classes + 1, 1, 1, false}; }

std::array<Conv, 3> gauss_head(const StructConfig& c, const std::string& prefix) {
  return {Conv{prefix + ".c1", c.widths[2], c.head_hidden, 3, 1, false},
          Conv{prefix + ".c2", c.head_hidden, c.head_hidden, 3, 1, false},
          Conv{prefix + ".c3", c.head_hidden, 2 * c.latent_channels, 3, 1, false}};
}

void validate_config(const StructConfig& c) {
  if (c.classes < 2) throw DomainError("structure config: need at least 2 classes");
  if (c.width != 2 * c.height || c.height % 16 != 0) {
    throw DomainError("structure config: geometry must be W = 2H with H divisible by 16");
  }
  for (int w : c.widths) {
    if (w < 1) throw DomainError("structure config: encoder widths must be positive");
  }
  if (c.latent_channels < 1 || c.head_hidden < 1 || c.decoder_full < 1) {
    throw DomainError("structure config: channel counts must be positive");
  }
  if (!(c.max_depth > 0.0) || !(c.log_var_clamp > 0.0)) {
    throw DomainError("structure config: max_depth and log_var_clamp must be positive");
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
  } else {
    dst += src;
  }
}

std::mt19937_64 seeded(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

namespace {

std::int32_t argmax_channel(const Tensor& logits, int n, int y, int x) {
  std::int32_t best = 0;
  double best_v = logits(n, 0, y, x);
  for (int c = 1; c < logits.c(); ++c) {
    if (logits(n, c, y, x) > best_v) {
      best_v = logits(n, c, y, x);
      best = c;
    }
  }
  return best;
}

}  // namespace

cloud::DenseStructure to_structure(const DecodeOutput& out, int n, double max_depth) {
  const int h = out.logits.h(), w = out.logits.w();
  cloud::DenseStructure d{ClassMap(w, h), DepthMap(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      d.sem(x, y) = argmax_channel(out.logits, n, y, x);
      d.depth(x, y) = out.depth(n, 0, y, x) * max_depth;
    }
  }
  return d;
}

nlohmann::json StructConfig::to_json() const {
  return {{"classes", classes},
          {"width", width},
          {"height", height},
          {"latent_channels", latent_channels},
          {"widths", widths},
          {"head_hidden", head_hidden},
          {"decoder_full", decoder_full},
          {"lambda_ce", lambda_ce},
          {"lambda_depth", lambda_depth},
          {"lambda_kl", lambda_kl},
          {"max_depth", max_depth},
          {"log_var_clamp", log_var_clamp}};
}

StructConfig StructConfig::from_json(const nlohmann::json& j) {
  StructConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "classes") c.classes = value.get<int>();
    else if (key == "width") c.width = value.get<int>();
    else if (key == "height") c.height = value.get<int>();
    else if (key == "latent_channels") c.latent_channels = value.get<int>();
    else if (key == "widths") c.widths = value.get<std::array<int, 4>>();
    else if (key == "head_hidden") c.head_hidden = value.get<int>();
    else if (key == "decoder_full") c.decoder_full = value.get<int>();
    else if (key == "lambda_ce") c.lambda_ce = value.get<double>();
    else if (key == "lambda_depth") c.lambda_depth = value.get<double>();
    else if (key == "lambda_kl") c.lambda_kl = value.get<double>();
    else if (key == "max_depth") c.max_depth = value.get<double>();
    else if (key == "log_var_clamp") c.log_var_clamp = value.get<double>();
    else throw SchemaError("unknown structure model key: " + key);
  }
  validate_config(c);
  return c;
}

Tensor guidance_tensor(const std::vector<const cloud::GuidanceImage*>& guides,
                       const StructConfig& cfg) {
  const int n = static_cast<int>(guides.size());
  const int c = cfg.classes;
  Tensor t(n, cfg.input_channels(), cfg.height, cfg.width);
  for (int i = 0; i < n; ++i) {
    const auto& g = *guides[static_cast<std::size_t>(i)];
    if (!g.sem.same_size(cfg.width, cfg.height)) {
      throw ShapeError("guidance " + std::to_string(g.width()) + "x" + std::to_string(g.height()) +
                       " does not match model geometry " + std::to_string(cfg.width) + "x" +
                       std::to_string(cfg.height));
    }
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        if (!g.valid(x, y)) continue;
        const std::int32_t k = g.sem(x, y);
        if (k < 0 || k >= c) throw DataError("guidance class " + std::to_string(k) + " out of range");
        t(i, k, y, x) = 1.0;
        t(i, c, y, x) = g.depth(x, y) / cfg.max_depth;
        t(i, c + 1, y, x) = 1.0;
      }
    }
  }
  return t;
}

Tensor truth_tensor(const std::vector<const cloud::DenseStructure*>& truth, const StructConfig& cfg) {
  std::vector<cloud::GuidanceImage> guides;
  guides.reserve(truth.size());
  for (const auto* d : truth) {
    cloud::GuidanceImage g;
    g.sem = d->sem;
    g.depth = d->depth;
    g.valid = Mask(d->sem.width(), d->sem.height(), 1);
    guides.push_back(std::move(g));
  }
  std::vector<const cloud::GuidanceImage*> ptrs;
  for (const auto& g : guides) ptrs.push_back(&g);
  return guidance_tensor(ptrs, cfg);
}

StructureGenerator::StructureGenerator(const StructConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate_config(cfg_);
  auto rng = seeded(seed, 0x7374'7275'6374ULL);
  for (int l = 0; l < 4; ++l) enc_conv(cfg_, l).init(params_, rng);
  for (const auto& c : gauss_head(cfg_, "prior")) c.init(params_, rng);
  for (const auto& c : gauss_head(cfg_, "post")) c.init(params_, rng);
  for (int s = 3; s >= 0; --s) {
    up_conv(cfg_, s).init(params_, rng);
    fuse_conv(cfg_, s).init(params_, rng);
  }
  out_head(cfg_).init(params_, rng);
}

Encoding StructureGenerator::encode(const Tensor& input) const {
  nn::require_shape(input, Shape{input.n(), cfg_.input_channels(), cfg_.height, cfg_.width},
                    "structure encoder input");
  Encoding e;
  e.input = input;
  for (int l = 0; l < 4; ++l) {
    e.pre[l] = enc_conv(cfg_, l).forward(params_, l == 0 ? input : e.act[l - 1]);
    e.act[l] = nn::relu(e.pre[l]);
  }
  return e;
}

void StructureGenerator::encode_backward(const Encoding& enc, std::array<Tensor, 4> grad_act) {
  for (int l = 3; l >= 0; --l) {
    if (grad_act[l].empty()) continue;
    const Tensor d_pre = nn::relu_backward(enc.pre[l], grad_act[l]);
    const Tensor& x = l == 0 ? enc.input : enc.act[l - 1];
    Tensor dx = enc_conv(cfg_, l).backward(params_, x, d_pre, l > 0);
    if (l > 0) add_into(grad_act[l - 1], dx);
  }
}

GaussianParams StructureGenerator::head(const std::string& prefix, const Tensor& features,
                                        HeadCache* cache) const {
  const auto convs = gauss_head(cfg_, prefix);
  HeadCache local;
  HeadCache& c = cache != nullptr ? *cache : local;
  c.features = features;
  c.h1_pre = convs[0].forward(params_, features);
  c.h1 = nn::relu(c.h1_pre);
  c.h2_pre = convs[1].forward(params_, c.h1);
  c.h2 = nn::relu(c.h2_pre);
  c.raw = convs[2].forward(params_, c.h2);
  const int z = cfg_.latent_channels;
  return {nn::slice_channels(c.raw, 0, z),
          nn::clamp(nn::slice_channels(c.raw, z, z), -cfg_.log_var_clamp, cfg_.log_var_clamp)};
}

Tensor StructureGenerator::head_backward(const std::string& prefix, const HeadCache& c,
                                         const Tensor& d_mu, const Tensor& d_log_var) {
  const auto convs = gauss_head(cfg_, prefix);
  const int z = cfg_.latent_channels;
  const Tensor raw_lv = nn::slice_channels(c.raw, z, z);
  const Tensor d_lv = nn::clamp_backward(raw_lv, -cfg_.log_var_clamp, cfg_.log_var_clamp, d_log_var);
  const Tensor d_raw = nn::concat_channels({&d_mu, &d_lv});
  Tensor d = convs[2].backward(params_, c.h2, d_raw);
  d = convs[1].backward(params_, c.h1, nn::relu_backward(c.h2_pre, d));
  return convs[0].backward(params_, c.features, nn::relu_backward(c.h1_pre, d));
}

GaussianParams StructureGenerator::prior(const Encoding& enc, HeadCache* cache) const {
  return head("prior", enc.latent_features(), cache);
}

GaussianParams StructureGenerator::posterior(const Encoding& enc, HeadCache* cache) const {
  return head("post", enc.latent_features(), cache);
}

Tensor StructureGenerator::prior_backward(const HeadCache& cache, const Tensor& d_mu,
                                          const Tensor& d_log_var) {
  return head_backward("prior", cache, d_mu, d_log_var);
}

Tensor StructureGenerator::posterior_backward(const HeadCache& cache, const Tensor& d_mu,
                                              const Tensor& d_log_var) {
  return head_backward("post", cache, d_mu, d_log_var);
}

DecodeOutput StructureGenerator::decode(const Encoding& enc, const Tensor& z,
                                        DecodeCache* cache) const {
  const Tensor& feat = enc.latent_features();
  nn::require_shape(z, Shape{feat.n(), cfg_.latent_channels, cfg_.latent_h(), cfg_.latent_w()},
                    "latent z");
  DecodeCache local;
  DecodeCache& c = cache != nullptr ? *cache : local;
  c.z = z;
  for (int s = 3; s >= 0; --s) {
    const Tensor& x = s == 3 ? enc.bottleneck() : c.fuse[s + 1];
    c.up_pre[s] = up_conv(cfg_, s).forward(params_, x);
    c.up[s] = nn::relu(c.up_pre[s]);
    const Tensor& skip = s == 0 ? enc.input : enc.act[s - 1];
    c.cat[s] = s == 3 ? nn::concat_channels({&c.up[s], &skip, &z})
                      : nn::concat_channels({&c.up[s], &skip});
    c.fuse_pre[s] = fuse_conv(cfg_, s).forward(params_, c.cat[s]);
    c.fuse[s] = nn::relu(c.fuse_pre[s]);
  }
  const Tensor raw = out_head(cfg_).forward(params_, c.fuse[0]);
  DecodeOutput out;
  out.logits = nn::slice_channels(raw, 0, cfg_.classes);
  out.depth = nn::sigmoid(nn::slice_channels(raw, cfg_.classes, 1));
  return out;
}

StructureGenerator::DecodeGrads StructureGenerator::decode_backward(const Encoding& enc,
                                                                    const DecodeCache& c,
                                                                    const DecodeOutput& out,
                                                                    const Tensor& d_logits,
                                                                    const Tensor& d_depth) {
  DecodeGrads g;
  const Tensor d_sig = nn::sigmoid_backward(out.depth, d_depth);
  Tensor d = out_head(cfg_).backward(params_, c.fuse[0], nn::concat_channels({&d_logits, &d_sig}));
  for (int s = 0; s <= 3; ++s) {
    const Tensor d_cat =
        fuse_conv(cfg_, s).backward(params_, c.cat[s], nn::relu_backward(c.fuse_pre[s], d));
    std::vector<int> parts{stage_out(cfg_, s), skip_channels(cfg_, s)};
    if (s == 3) parts.push_back(cfg_.latent_channels);
    auto split = nn::split_channels(d_cat, parts);
    if (s > 0) add_into(g.act[s - 1], split[1]);
    if (s == 3) g.z = std::move(split[2]);
    const Tensor& x = s == 3 ? enc.bottleneck() : c.fuse[s + 1];
    d = up_conv(cfg_, s).backward(params_, x, nn::relu_backward(c.up_pre[s], split[0]));
  }
  add_into(g.act[3], d);
  return g;
}

Tensor sample_z(const GaussianParams& gp, const Tensor& eps) {
  nn::require_same_shape(gp.mu, gp.log_var, "gaussian params");
  nn::require_same_shape(eps, gp.mu, "latent noise");
  Tensor z(gp.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = gp.mu[i] + std::exp(0.5 * gp.log_var[i]) * eps[i];
  return z;
}

Tensor standard_normal(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t(shape);
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

double kl_diag_gauss(const GaussianParams& q, const GaussianParams& p) {
  nn::require_same_shape(q.mu, p.mu, "kl mu");
  nn::require_same_shape(q.log_var, p.log_var, "kl log_var");
  nn::require_same_shape(q.mu, q.log_var, "kl q");
  long double total = 0.0L;
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    const double dm = q.mu[i] - p.mu[i];
    const double dlv = q.log_var[i] - p.log_var[i];
    total += 0.5 * (std::exp(dlv) - dlv - 1.0 + dm * dm * std::exp(-p.log_var[i]));
  }
  return static_cast<double>(total) / q.mu.n();
}

KlGrads kl_diag_gauss_backward(const GaussianParams& q, const GaussianParams& p) {
  KlGrads g{Tensor(q.mu.shape()), Tensor(q.mu.shape()), Tensor(q.mu.shape()), Tensor(q.mu.shape())};
  const double inv_n = 1.0 / q.mu.n();
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    const double dm = q.mu[i] - p.mu[i];
    const double inv_vp = std::exp(-p.log_var[i]);
    const double vq = std::exp(q.log_var[i]);
    g.mu_q[i] = dm * inv_vp * inv_n;
    g.mu_p[i] = -g.mu_q[i];
    g.log_var_q[i] = 0.5 * (vq * inv_vp - 1.0) * inv_n;
    g.log_var_p[i] = 0.5 * (1.0 - (vq + dm * dm) * inv_vp) * inv_n;
  }
  return g;
}

StructureLoss structure_loss(const DecodeOutput& pred, const std::vector<std::int32_t>& labels,
                             const Tensor& gt_depth, const GaussianParams& q,
                             const GaussianParams& p, const StructConfig& cfg) {
  if (pred.logits.c() != cfg.classes) {
    throw ShapeError("structure loss: expected " + std::to_string(cfg.classes) + " logit channels");
  }
  StructureLoss r;
  auto ce = nn::softmax_cross_entropy(pred.logits, labels);
  auto l1 = nn::l1_mean(pred.depth, gt_depth);
  r.value.ce = ce.value;
  r.value.depth = l1.value;
  r.value.kl = kl_diag_gauss(q, p);
  r.value.total = cfg.lambda_ce * r.value.ce + cfg.lambda_depth * r.value.depth +
                  cfg.lambda_kl * r.value.kl;
  r.d_logits = std::move(ce.grad);
  r.d_logits *= cfg.lambda_ce;
  r.d_depth = std::move(l1.grad);
  r.d_depth *= cfg.lambda_depth;
  r.kl = kl_diag_gauss_backward(q, p);
  r.kl.mu_q *= cfg.lambda_kl;
  r.kl.log_var_q *= cfg.lambda_kl;
  r.kl.mu_p *= cfg.lambda_kl;
  r.kl.log_var_p *= cfg.lambda_kl;
  return r;
}

StructBatch make_batch(const std::vector<const cloud::GuidanceImage*>& guides,
                       const std::vector<const cloud::DenseStructure*>& truth,
                       const StructConfig& cfg) {
  if (guides.empty() || guides.size() != truth.size()) {
    throw ShapeError("batch needs matching, non-empty guidance and truth lists");
  }
  StructBatch b;
  b.input = guidance_tensor(guides, cfg);
  b.truth_input = truth_tensor(truth, cfg);
  const int n = static_cast<int>(truth.size());
  b.gt_depth = Tensor(n, 1, cfg.height, cfg.width);
  b.labels.reserve(static_cast<std::size_t>(n) * cfg.height * cfg.width);
  for (int i = 0; i < n; ++i) {
    const auto& d = *truth[static_cast<std::size_t>(i)];
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        b.labels.push_back(d.sem(x, y));
        b.gt_depth(i, 0, y, x) = std::min(d.depth(x, y), cfg.max_depth) / cfg.max_depth;
      }
    }
  }
  return b;
}

StepResult loss_and_grad(StructureGenerator& model, const StructBatch& batch, const Tensor& eps,
                         bool accumulate, double kl_free_nats) {
  const auto& cfg = model.config();
  StepResult r;
  r.encoding = model.encode(batch.input);
  const Encoding enc_gt = model.encode(batch.truth_input);
  HeadCache prior_cache, post_cache;
  r.prior = model.prior(r.encoding, &prior_cache);
  const GaussianParams q = model.posterior(enc_gt, &post_cache);
  const Tensor z = sample_z(q, eps);
  DecodeCache dec_cache;
  r.output = model.decode(r.encoding, z, &dec_cache);
  auto loss = structure_loss(r.output, batch.labels, batch.gt_depth, q, r.prior, cfg);
  r.loss = loss.value;
  if (!accumulate) return r;

  if (kl_free_nats > 0.0) {
    // Samples under the floor contribute no KL gradient.
    const std::size_t per = q.mu.size() / static_cast<std::size_t>(q.mu.n());
    for (int n = 0; n < q.mu.n(); ++n) {
      const std::size_t lo = static_cast<std::size_t>(n) * per;
      long double kl_n = 0.0L;
      for (std::size_t i = lo; i < lo + per; ++i) {
        const double dm = q.mu[i] - r.prior.mu[i];
        const double dlv = q.log_var[i] - r.prior.log_var[i];
        kl_n += 0.5 * (std::exp(dlv) - dlv - 1.0 + dm * dm * std::exp(-r.prior.log_var[i]));
      }
      if (kl_n >= kl_free_nats) continue;
      for (Tensor* t : {&loss.kl.mu_q, &loss.kl.log_var_q, &loss.kl.mu_p, &loss.kl.log_var_p}) {
        std::fill(t->data() + lo, t->data() + lo + per, 0.0);
      }
    }
  }
  auto dg = model.decode_backward(r.encoding, dec_cache, r.output, loss.d_logits, loss.d_depth);
  // Reparameterization: dz flows to the posterior mean and log-variance.
  Tensor d_mu_q = loss.kl.mu_q;
  Tensor d_lv_q = loss.kl.log_var_q;
  d_mu_q += dg.z;
  for (std::size_t i = 0; i < d_lv_q.size(); ++i) {
    d_lv_q[i] += dg.z[i] * 0.5 * std::exp(0.5 * q.log_var[i]) * eps[i];
  }
  add_into(dg.act[2], model.prior_backward(prior_cache, loss.kl.mu_p, loss.kl.log_var_p));
  std::array<Tensor, 4> gt_grads;
  gt_grads[2] = model.posterior_backward(post_cache, d_mu_q, d_lv_q);
  model.encode_backward(r.encoding, std::move(dg.act));
  model.encode_backward(enc_gt, std::move(gt_grads));
  return r;
}

cloud::DenseStructure predict(const StructureGenerator& model, const cloud::GuidanceImage& guide,
                              const ZPolicy& policy, int step, const cloud::DenseStructure* truth) {
  const auto& cfg = model.config();
  const Encoding enc = model.encode(guidance_tensor({&guide}, cfg));
  Tensor z;
  switch (policy.kind) {
    case ZPolicy::Kind::kPriorMean:
      z = model.prior(enc).mu;
      break;
    case ZPolicy::Kind::kPriorSample: {
      const auto p = model.prior(enc);
      auto rng = seeded(policy.seed, static_cast<std::uint64_t>(step));
      z = sample_z(p, standard_normal(p.mu.shape(), rng));
      break;
    }
    case ZPolicy::Kind::kPosterior: {
      if (truth == nullptr) throw UsageError("posterior z policy needs ground truth");
      z = model.posterior(model.encode(truth_tensor({truth}, cfg))).mu;
      break;
    }
  }
  return to_structure(model.decode(enc, z), 0, cfg.max_depth);
}

RgbImage palette_painter(const cloud::DenseStructure& d) {
  const auto& pal = default_palette();
  RgbImage rgb(d.sem.width(), d.sem.height());
  for (std::size_t i = 0; i < rgb.pixels().size(); ++i) {
    const auto k = static_cast<std::size_t>(d.sem.pixels()[i]);
    rgb.pixels()[i] = pal[k % pal.size()];
  }
  return rgb;
}

std::vector<RolloutStep> rollout(const Predictor& predictor,
                                 const std::vector<cloud::PanoFrame>& context,
                                 const std::vector<geom::Pose>& trajectory, RolloutMode mode,
                                 const std::vector<cloud::PanoFrame>* truth,
                                 const Painter& painter) {
  if (context.empty()) throw DomainError("rollout needs at least one context frame");
  if (trajectory.empty()) throw DomainError("rollout needs a non-empty trajectory");
  if (mode == RolloutMode::kTeacherForcing && truth == nullptr) {
    throw UsageError("teacher forcing rollout needs ground-truth frames");
  }
  if (truth != nullptr && truth->size() != trajectory.size()) {
    throw ShapeError("ground truth has " + std::to_string(truth->size()) + " frames for " +
                     std::to_string(trajectory.size()) + " poses");
  }
  const auto& g = context.front().geometry;
  int classes = kDefaultClassCount;
  for (const auto& f : context) {
    for (auto k : f.sem.pixels()) classes = std::max(classes, k + 1);
  }
  cloud::PointCloud pc(classes);
  for (const auto& f : context) pc.insert_frame(f, 1);

  std::vector<RolloutStep> out;
  out.reserve(trajectory.size());
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    RolloutStep step;
    step.guide = cloud::render_guidance(pc, trajectory[t], g);
    std::optional<cloud::DenseStructure> gt;
    if (truth != nullptr) gt = cloud::DenseStructure{(*truth)[t].sem, (*truth)[t].depth};
    step.prediction = predictor(step.guide, static_cast<int>(t), gt ? &*gt : nullptr);
    if (t + 1 < trajectory.size()) {
      if (mode == RolloutMode::kTeacherForcing) {
        pc.insert_frame((*truth)[t], 1);
      } else {
        cloud::PanoFrame f(g, trajectory[t]);
        f.sem = step.prediction.sem;
        f.depth = step.prediction.depth;
        f.rgb = painter(step.prediction);
        pc.insert_frame(f, 1);
      }
    }
    out.push_back(std::move(step));
  }
  return out;
}

Predictor nearest_neighbor_predictor() {
  return [](const cloud::GuidanceImage& guide, int, const cloud::DenseStructure*) {
    return cloud::nn_fill(guide);
  };
}

Predictor model_predictor(const StructureGenerator& model, const ZPolicy& policy) {
  return [&model, policy](const cloud::GuidanceImage& guide, int step,
                          const cloud::DenseStructure* truth) {
    return predict(model, guide, policy, step, truth);
  };
}

std::vector<RolloutStep> rollout(const StructureGenerator& model,
                                 const std::vector<cloud::PanoFrame>& context,
                                 const std::vector<geom::Pose>& trajectory, RolloutMode mode,
                                 const ZPolicy& policy,
                                 const std::vector<cloud::PanoFrame>* truth) {
  if (policy.kind == ZPolicy::Kind::kPosterior && truth == nullptr) {
    throw UsageError("posterior z policy needs ground truth");
  }
  return rollout(model_predictor(model, policy), context, trajectory, mode, truth);
}

// --- training --------------------------------------------------------------

nlohmann::json TrainConfig::to_json() const {
  return {{"mode", mode == RolloutMode::kRecurrent ? "recurrent" : "teacher_forcing"},
          {"lr", lr},
          {"batch", batch},
          {"steps", steps},
          {"seed", seed},
          {"context_min", context_min},
          {"context_max", context_max},
          {"perturb_sigma", perturb_sigma},
          {"kl_free_nats", kl_free_nats},
          {"cosine_decay", cosine_decay},
          {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") {
      const auto m = value.get<std::string>();
      if (m == "recurrent") c.mode = RolloutMode::kRecurrent;
      else if (m == "teacher_forcing") c.mode = RolloutMode::kTeacherForcing;
      else throw SchemaError("unknown training mode: " + m);
    } else if (key == "lr") c.lr = value.get<double>();
    else if (key == "batch") c.batch = value.get<int>();
    else if (key == "steps") c.steps = value.get<int>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "context_min") c.context_min = value.get<int>();
    else if (key == "context_max") c.context_max = value.get<int>();
    else if (key == "perturb_sigma") c.perturb_sigma = value.get<double>();
    else if (key == "kl_free_nats") c.kl_free_nats = value.get<double>();
    else if (key == "cosine_decay") c.cosine_decay = value.get<bool>();
    else if (key == "checkpoint_every") c.checkpoint_every = value.get<int>();
    else throw SchemaError("unknown training key: " + key);
  }
  return c;
}

namespace {

// One batch slot walking a trajectory.
struct Stream {
  const world::World* world = nullptr;
  std::vector<geom::Pose> poses;
  std::size_t next = 0;
  std::optional<cloud::PointCloud> cloud;
};

void start_episode(Stream& s, const std::vector<world::World>& worlds, const StructConfig& mc,
                   const TrainConfig& tc, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, worlds.size() - 1);
  std::uniform_int_distribution<int> ctx(tc.context_min, tc.context_max);
  const auto g = mc.geometry();
  for (;;) {
    s.world = &worlds[pick(rng)];
    if (s.world->graph.nodes.size() >= 2) break;
  }
  const int context = ctx(rng);
  s.poses = world::sample_trajectory(s.world->graph, rng());
  if (static_cast<int>(s.poses.size()) <= context) {
    s.poses = world::sample_trajectory(s.world->graph, rng(), context + 1);
  }
  if (tc.perturb_sigma > 0.0) {
    world::PerturbOptions opt;
    opt.sigma = tc.perturb_sigma;
    for (auto& p : s.poses) {
      try {
        p = world::perturb_viewpoint(s.world->scene, p, rng(), opt);
      } catch (const AugmentationError&) {
        // Keep the unperturbed node pose.
      }
    }
  }
  s.cloud.emplace(mc.classes);
  for (int i = 0; i < context; ++i) {
    s.cloud->insert_frame(world::render_pano(s.world->scene, s.poses[static_cast<std::size_t>(i)], g, mc.max_depth), 1);
  }
  s.next = static_cast<std::size_t>(context);
}

std::string fmt_loss(const LossComponents& l) {
  std::ostringstream os;
  os << "total=" << l.total << " ce=" << l.ce << " depth=" << l.depth << " kl=" << l.kl;
  return os.str();
}

void check_finite(const LossComponents& l, int step) {
  if (!std::isfinite(l.total) || !std::isfinite(l.ce) || !std::isfinite(l.depth) ||
      !std::isfinite(l.kl)) {
    throw NumericError("non-finite structure loss at step " + std::to_string(step) + ": " +
                       fmt_loss(l));
  }
}

}  // namespace

LossComponents train_step(StructureGenerator& model, const StructBatch& batch,
                          nn::AdamOptions adam, std::mt19937_64& rng) {
  const auto& cfg = model.config();
  model.params().zero_grad();
  const Tensor eps =
      standard_normal(Shape{batch.size(), cfg.latent_channels, cfg.latent_h(), cfg.latent_w()}, rng);
  const auto r = loss_and_grad(model, batch, eps, true);
  check_finite(r.loss, 0);
  nn::adam_step(model.params(), adam);
  return r.loss;
}

TrainResult train_structure(StructureGenerator& model, const std::vector<world::World>& worlds,
                            const TrainConfig& tc,
                            const std::function<void(const LossRecord&)>& on_step) {
  if (worlds.empty()) throw DomainError("training needs at least one world");
  if (tc.batch < 1 || tc.steps < 0) throw DomainError("training needs batch >= 1 and steps >= 0");
  if (tc.context_min < 1 || tc.context_max < tc.context_min) {
    throw DomainError("training context range must satisfy 1 <= min <= max");
  }
  const auto& mc = model.config();
  const auto g = mc.geometry();
  auto rng = seeded(tc.seed, 0x7472'6169'6eULL);
  nn::AdamOptions adam;
  adam.lr = tc.lr;

  std::vector<Stream> streams(static_cast<std::size_t>(tc.batch));
  for (auto& s : streams) start_episode(s, worlds, mc, tc, rng);

  TrainResult result;
  for (int step = 1; step <= tc.steps; ++step) {
    std::vector<cloud::GuidanceImage> guides;
    std::vector<cloud::PanoFrame> frames;
    guides.reserve(streams.size());
    frames.reserve(streams.size());
    for (auto& s : streams) {
      const auto& pose = s.poses[s.next];
      guides.push_back(cloud::render_guidance(*s.cloud, pose, g, mc.max_depth));
      frames.push_back(world::render_pano(s.world->scene, pose, g, mc.max_depth));
    }
    std::vector<cloud::DenseStructure> truth;
    truth.reserve(frames.size());
    for (const auto& f : frames) truth.push_back({f.sem, f.depth});
    std::vector<const cloud::GuidanceImage*> gp;
    std::vector<const cloud::DenseStructure*> tp;
    for (std::size_t i = 0; i < streams.size(); ++i) {
      gp.push_back(&guides[i]);
      tp.push_back(&truth[i]);
    }
    const StructBatch batch = make_batch(gp, tp, mc);

    model.params().zero_grad();
    const Tensor eps =
        standard_normal(Shape{batch.size(), mc.latent_channels, mc.latent_h(), mc.latent_w()}, rng);
    const auto r = loss_and_grad(model, batch, eps, true, tc.kl_free_nats);
    check_finite(r.loss, step);

    // Recurrent slots feed back the prior-mean prediction, as at test time.
    std::optional<DecodeOutput> fed;
    if (tc.mode == RolloutMode::kRecurrent) fed = model.decode(r.encoding, r.prior.mu);
    if (tc.cosine_decay) {
      adam.lr = tc.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (step - 1) / tc.steps));
    }
    nn::adam_step(model.params(), adam);

    for (std::size_t i = 0; i < streams.size(); ++i) {
      auto& s = streams[i];
      if (tc.mode == RolloutMode::kRecurrent) {
        cloud::PanoFrame f(g, s.poses[s.next]);
        auto d = to_structure(*fed, static_cast<int>(i), mc.max_depth);
        f.rgb = palette_painter(d);
        f.sem = std::move(d.sem);
        f.depth = std::move(d.depth);
        s.cloud->insert_frame(f, 1);
      } else {
        s.cloud->insert_frame(frames[i], 1);
      }
      if (++s.next >= s.poses.size()) start_episode(s, worlds, mc, tc, rng);
    }

    LossRecord rec{step, r.loss};
    result.curve.push_back(rec);
    if (on_step) on_step(rec);
    if (tc.checkpoint_every > 0 && !tc.out_dir.empty() && step % tc.checkpoint_every == 0) {
      std::ostringstream name;
      name << "structure_step" << std::setw(6) << std::setfill('0') << step << ".ckpt";
      save_model((std::filesystem::path(tc.out_dir) / name.str()).string(), model,
                 {{"step", step}, {"train", tc.to_json()}});
    }
  }
  result.checksum = model.params().checksum();
  return result;
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss curve: " + path);
  out << "step,total,ce,depth,kl\n";
  out << std::setprecision(17);
  for (const auto& r : curve) {
    out << r.step << ',' << r.loss.total << ',' << r.loss.ce << ',' << r.loss.depth << ','
        << r.loss.kl << '\n';
  }
  if (!out) throw IoError("failed writing loss curve: " + path);
}

void save_model(const std::string& path, const StructureGenerator& model,
                const nlohmann::json& extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["model"] = "structure";
  meta["config"] = model.config().to_json();
  nn::save_checkpoint(path, model.params(), meta);
}

StructureGenerator load_model(const std::string& path) {
  auto ckpt = nn::load_checkpoint(path);
  if (ckpt.meta.value("model", "") != "structure") {
    throw SchemaError("checkpoint " + path + " does not hold a structure model");
  }
  StructureGenerator model(StructConfig::from_json(ckpt.meta.at("config")), 0);
  nn::restore_values(model.params(), ckpt.store);
  return model;
}

StructureGenerator load_model(const std::string& path, const StructConfig& cfg) {
  auto model = load_model(path);
  if (!(model.config() == cfg)) {
    throw SchemaError("checkpoint " + path + " was trained with a different structure config");
  }
  return model;
}

}  // namespace panodream::structgen
