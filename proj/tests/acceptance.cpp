// Acceptance run: one PASS/FAIL line per criterion. Trained checkpoints are
// cached in the work directory and reused on later runs.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "panodream/cli.hpp"
#include "panodream/config.hpp"
#include "panodream/eval.hpp"
#include "panodream/imggen.hpp"
#include "panodream/io.hpp"
#include "panodream/synthworld.hpp"

using namespace panodream;
using namespace panodream::oracle;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  std::string work = "acceptance_work";
  int steps = structgen::TrainConfig{}.steps;
  int pipeline_steps = 200;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 ---------------------------------------------------------------------------

Outcome geometry_round_trips() {
  const auto t0 = std::chrono::steady_clock::now();
  const geom::PanoGeometry g(64, 32);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ux(0.0, 64.0), uy(0.5, 31.5), ud(0.1, 10.0), up(-5.0, 5.0),
      uyaw(-geom::kPi, geom::kPi);
  double worst_px = 0.0, worst_d = 0.0, worst_m = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = ux(rng), y = uy(rng), d = ud(rng);
    const geom::Pose pose({up(rng), up(rng), up(rng)}, uyaw(rng));
    const auto w = geom::backproject(g, x, y, d, pose);
    const auto pr = geom::project(g, w, pose);
    double dx = std::abs(pr.x - x);
    dx = std::min(dx, 64.0 - dx);
    worst_px = std::max({worst_px, dx, std::abs(pr.y - y)});
    worst_d = std::max(worst_d, std::abs(pr.depth - d));
    worst_m = std::max(worst_m, (geom::backproject(g, pr.x, pr.y, pr.depth, pose) - w).norm());
  }
  const double band = 1e-6 * 32.0 / geom::kPi;
  std::uniform_real_distribution<double> uy_off(band, 32.0 - band);
  double worst_ray = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = ux(rng), y = uy_off(rng);
    const auto p = geom::ray_to_pixel(g, geom::pixel_to_ray(g, x, y));
    double dx = std::abs(p.x - x);
    dx = std::min(dx, 64.0 - dx);
    worst_ray = std::max({worst_ray, dx, std::abs(p.y - y)});
  }
  const double t = seconds_since(t0);
  const double worst = std::max({worst_px, worst_d, worst_m, worst_ray});
  return {worst < 1e-9 && t < 5.0,
          fmt("worst px %.1e depth %.1e point %.1e ray %.1e, %.2f s", worst_px, worst_d, worst_m, worst_ray, t)};
}

// 2 ---------------------------------------------------------------------------

Outcome cloud_identity() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 1.0;
  int frames = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = world::generate_world(200 + seed);
    for (const auto& g : {geom::PanoGeometry(64, 32), geom::PanoGeometry(128, 64)}) {
      for (std::size_t node = 0; node < std::min<std::size_t>(4, w.graph.nodes.size()); ++node) {
        const auto f = world::render_pano(w.scene, w.graph.nodes[node], g);
        cloud::PointCloud pc(kDefaultClassCount);
        pc.insert_frame(f, 1);
        const auto gi = cloud::render_guidance(pc, f.pose, g);
        // The first and last rows straddle the poles.
        int same = 0, total = 0;
        for (int y = 1; y + 1 < g.height(); ++y)
          for (int x = 0; x < g.width(); ++x) {
            ++total;
            same += gi.valid(x, y) && gi.sem(x, y) == f.sem(x, y) && std::abs(gi.depth(x, y) - f.depth(x, y)) < 1e-9;
          }
        worst = std::min(worst, static_cast<double>(same) / total);
        ++frames;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst >= 0.99 && t < 5.0, fmt("worst frame %.4f over %d frames, %.2f s", worst, frames, t)};
}

// 3 ---------------------------------------------------------------------------

Outcome oracle_equivalences() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(3);
  int nn_bad = 0, miou_bad = 0;
  double conv_err = 0.0, pconv_err = 0.0, spade_err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int h = 4 + 2 * (i % 4);
    auto g = random_guidance(2 * h, h, 0.02 + 0.05 * (i % 10), rng);
    if (g.valid_count() == 0) {
      g.valid(0, 0) = 1;
      g.sem(0, 0) = 1;
      g.depth(0, 0) = 1.0;
    }
    const auto fast = cloud::nn_fill(g);
    const auto slow = brute_nn(g);
    nn_bad += !(fast.sem == slow.sem && fast.depth == slow.depth);
  }
  for (int i = 0; i < 200; ++i) {
    const int classes = 2 + static_cast<int>(rng() % 12);
    const auto gt = random_class_map(8, 8, classes, rng);
    auto pred = random_class_map(8, 8, classes, rng);
    for (std::size_t k = 0; k < pred.size(); ++k)
      if (rng() % 3 == 0) pred.pixels()[k] = gt.pixels()[k];
    miou_bad += std::abs(eval::miou(gt, pred, classes) - brute_miou(gt, pred, classes)) > 1e-10;
  }
  for (int i = 0; i < 200; ++i) {
    const int k = 1 + 2 * (i % 3), stride = 1 + (i / 3) % 2;
    const int cin = 1 + static_cast<int>(rng() % 4), cout = 1 + static_cast<int>(rng() % 4);
    const Tensor x = random_tensor({1 + i % 2, cin, 4 + 2 * (i % 3), 8}, rng);
    const Tensor w = random_tensor({cout, cin, k, k}, rng);
    const Tensor b = random_tensor({1, cout, 1, 1}, rng);
    conv_err = std::max(conv_err, nn::max_abs_diff(nn::conv2d_circx(x, w, b, stride), naive_conv(x, w, b, stride)));
  }
  for (int i = 0; i < 200; ++i) {
    const int k = 1 + 2 * (i % 3);
    const int cin = 1 + static_cast<int>(rng() % 4), cout = 1 + static_cast<int>(rng() % 4);
    const int h = 3 + i % 4;
    const Tensor x = random_tensor({2, cin, h, 8}, rng);
    const Tensor m = random_mask(2, h, 8, rng, 0.1 + 0.08 * (i % 10));
    const Tensor w = random_tensor({cout, cin, k, k}, rng);
    const Tensor b = random_tensor({1, cout, 1, 1}, rng);
    Tensor oracle_mask;
    const Tensor oracle = naive_partial_conv(x, m, w, b, &oracle_mask);
    const auto r = nn::partial_conv2d(x, m, w, b);
    pconv_err = std::max(pconv_err, nn::max_abs_diff(r.output, oracle));
    if (!(r.mask == oracle_mask)) pconv_err = std::max(pconv_err, 1.0);
  }
  for (int i = 0; i < 200; ++i) {
    const int features = 1 + i % 4, cond = 1 + (i / 4) % 4;
    const nn::Spade layer{"s", features, cond, 2 + i % 5, false};
    nn::ParamStore store;
    layer.init(store, rng);
    for (auto& p : store.params()) p.value = random_tensor(p.value.shape(), rng);
    const Tensor x = random_tensor({2, features, 4, 8}, rng);
    const Tensor c = random_tensor({2, cond, 4, 8}, rng);
    spade_err = std::max(spade_err,
                         nn::max_abs_diff(nn::spade_modulate(x, c, store, layer), naive_spade(x, c, store, layer)));
  }
  const double t = seconds_since(t0);
  const bool ok = nn_bad == 0 && miou_bad == 0 && conv_err < 1e-10 && pconv_err < 1e-10 && spade_err < 1e-10 && t < 60;
  return {ok, fmt("nn_fill %d/200 off, miou %d/200 off, conv %.1e, partial %.1e, spade %.1e, %.1f s", nn_bad,
                  miou_bad, conv_err, pconv_err, spade_err, t)};
}

// 4 ---------------------------------------------------------------------------

Outcome closed_forms() {
  using structgen::GaussianParams;
  std::mt19937_64 rng(4);
  std::vector<std::string> failed;

  GaussianParams q{random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3, 2, 2}, rng)};
  const GaussianParams mu2{Tensor(1, 1, 1, 1, 2.0), Tensor(1, 1, 1, 1, 0.0)};
  const GaussianParams unit{Tensor(1, 1, 1, 1, 0.0), Tensor(1, 1, 1, 1, 0.0)};
  if (structgen::kl_diag_gauss(q, q) != 0.0 || structgen::kl_diag_gauss(mu2, unit) != 2.0) failed.push_back("kl hand");

  GaussianParams a{random_tensor({1, 2, 1, 2}, rng), random_tensor({1, 2, 1, 2}, rng, -1.0, 0.5)};
  GaussianParams b{random_tensor({1, 2, 1, 2}, rng), random_tensor({1, 2, 1, 2}, rng, -0.5, 1.0)};
  const double closed = structgen::kl_diag_gauss(a, b);
  std::normal_distribution<double> nd(0.0, 1.0);
  double total = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < a.mu.size(); ++k) {
      const double sq = std::exp(0.5 * a.log_var[k]), sp = std::exp(0.5 * b.log_var[k]);
      const double e = nd(rng);
      const double zp = (a.mu[k] + sq * e - b.mu[k]) / sp;
      total += -std::log(sq) - 0.5 * e * e + std::log(sp) + 0.5 * zp * zp;
    }
  }
  const double mc_rel = std::abs(total / n - closed) / closed;
  if (mc_rel >= 0.01) failed.push_back("kl monte carlo");

  const structgen::StructConfig cfg;
  structgen::DecodeOutput pred{Tensor(2, 13, 32, 64), Tensor(2, 1, 32, 64, 0.4)};
  std::vector<std::int32_t> labels(2 * 32 * 64);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 13);
  GaussianParams zq{random_tensor({2, 8, 4, 8}, rng), random_tensor({2, 8, 4, 8}, rng)};
  const double ce_err = std::abs(structgen::structure_loss(pred, labels, pred.depth, zq, zq, cfg).value.ce - std::log(13.0));
  if (ce_err >= 1e-12) failed.push_back("uniform ce");

  pred.logits = random_tensor(pred.logits.shape(), rng, -3, 3);
  pred.depth = random_tensor(pred.depth.shape(), rng, 0.01, 0.99);
  const Tensor gt_depth = random_tensor(pred.depth.shape(), rng, 0.0, 1.0);
  for (auto& l : labels) l = static_cast<std::int32_t>(rng() % 13);
  GaussianParams zp{random_tensor(zq.mu.shape(), rng), random_tensor(zq.mu.shape(), rng)};
  const double expected = cfg.lambda_ce * naive_ce(pred.logits, labels) +
                          cfg.lambda_depth * naive_l1(pred.depth, gt_depth) + cfg.lambda_kl * naive_kl(zq, zp);
  const double s_err = std::abs(structgen::structure_loss(pred, labels, gt_depth, zq, zp, cfg).value.total - expected);
  if (s_err >= 1e-10) failed.push_back("structure loss");

  const Tensor real = random_tensor({2, 3, 16, 32}, rng, 0.0, 1.0);
  const Tensor fake = random_tensor(real.shape(), rng, 0.0, 1.0);
  const Tensor s = random_structure(2, 16, 32, rng);
  const imggen::FeatureExtractor fx(7);
  imggen::Discriminator d(17, 8);
  const imggen::GanWeights gw;
  const auto r = imggen::generator_loss(fake, real, s, d, fx, gw);
  const auto pf = fx.forward(fake), pr = fx.forward(real);
  const auto df = d.forward(imggen::critic_input(fake, s)), dr = d.forward(imggen::critic_input(real, s));
  double vgg = 0.0, fm = 0.0, gan = 0.0;
  for (std::size_t i = 0; i < pf.size(); ++i) vgg += naive_l1(pf[i], pr[i]) / static_cast<double>(pf.size());
  for (std::size_t i = 0; i < df.features.size(); ++i)
    fm += naive_l1(df.features[i], dr.features[i]) / static_cast<double>(df.features.size());
  for (double v : df.score.values()) gan -= v / static_cast<double>(df.score.size());
  const double g_err = std::abs(r.total - (gw.gan * gan + gw.vgg * vgg + gw.fm * fm));
  if (g_err >= 1e-10) failed.push_back("generator loss");

  double hinge = 0.0;
  for (double v : dr.score.values()) hinge += std::max(0.0, 1.0 - v) / static_cast<double>(dr.score.size());
  for (double v : df.score.values()) hinge += std::max(0.0, 1.0 + v) / static_cast<double>(df.score.size());
  const double d_err = std::abs(imggen::discriminator_loss(d, real, fake, s) - hinge);
  if (d_err >= 1e-10) failed.push_back("discriminator loss");

  std::string detail = fmt("kl mc rel %.2e, ce-ln13 %.1e, struct %.1e, gen %.1e, disc %.1e", mc_rel, ce_err, s_err,
                           g_err, d_err);
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

// 5 ---------------------------------------------------------------------------

struct GradSuite {
  double worst = 0.0;
  std::string worst_name;
  void add(const std::string& name, const nn::GradCheckReport& r) {
    if (r.max_rel_error() >= worst) {
      worst = r.max_rel_error();
      worst_name = name;
    }
  }
};

std::vector<nn::GradTarget> all_params(nn::ParamStore& store) {
  std::vector<nn::GradTarget> t;
  for (auto& p : store.params())
    t.push_back({p.name, std::span<double>(p.value.data(), p.value.size()),
                 std::span<const double>(p.grad.data(), p.grad.size())});
  return t;
}

void operator_gradients(GradSuite& suite) {
  using namespace nn;
  std::mt19937_64 rng(5);
  for (int stride : {1, 2}) {
    Tensor x = random_tensor({2, 3, 4, 8}, rng), w = random_tensor({2, 3, 3, 3}, rng), b = random_tensor({1, 2, 1, 1}, rng);
    const Tensor wts = random_tensor({2, 2, 4 / stride, 8 / stride}, rng);
    const auto g = conv2d_circx_backward(x, w, stride, wts);
    suite.add("conv2d_circx", grad_check([&] { return dot(conv2d_circx(x, w, b, stride), wts); },
                                         {target("x", x, g.input), target("w", w, g.kernel), target("b", b, g.bias)}));
  }
  {
    Tensor x = random_tensor({2, 3, 2, 4}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({1, 2, 1, 1}, rng);
    const Tensor wts = random_tensor({2, 2, 4, 8}, rng);
    const auto g = conv_transpose2d_circx_backward(x, w, 2, wts);
    suite.add("conv_transpose2d_circx",
              grad_check([&] { return dot(conv_transpose2d_circx(x, w, b, 2), wts); },
                         {target("x", x, g.input), target("w", w, g.kernel), target("b", b, g.bias)}));
  }
  {
    Tensor x = random_tensor({2, 3, 4, 8}, rng), w = random_tensor({2, 3, 3, 3}, rng), b = random_tensor({1, 2, 1, 1}, rng);
    const Tensor m = random_mask(2, 4, 8, rng, 0.4);
    const Tensor wts = random_tensor({2, 2, 4, 8}, rng);
    const auto g = partial_conv2d_backward(x, m, w, partial_conv2d(x, m, w, b), wts);
    suite.add("partial_conv2d", grad_check([&] { return dot(partial_conv2d(x, m, w, b).output, wts); },
                                           {target("x", x, g.input), target("w", w, g.kernel), target("b", b, g.bias)}));
  }
  {
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    const Tensor wts = random_tensor(x.shape(), rng);
    InstanceNormCache cache;
    instance_norm(x, &cache);
    const Tensor g = instance_norm_backward(cache, wts);
    suite.add("instance_norm", grad_check([&] { return dot(instance_norm(x), wts); }, {target("x", x, g)}));
  }
  {
    Tensor x = away_from_zero({2, 3, 2, 4}, rng);
    for (auto& v : x.values())
      if (std::abs(std::abs(v) - 0.5) < 1e-3) v += 0.01;
    const Tensor wts = random_tensor(x.shape(), rng);
    const Tensor gr = relu_backward(x, wts), gs = sigmoid_backward(sigmoid(x), wts), gc = clamp_backward(x, -0.5, 0.5, wts);
    suite.add("relu", grad_check([&] { return dot(relu(x), wts); }, {target("x", x, gr)}));
    suite.add("sigmoid", grad_check([&] { return dot(sigmoid(x), wts); }, {target("x", x, gs)}));
    suite.add("clamp", grad_check([&] { return dot(clamp(x, -0.5, 0.5), wts); }, {target("x", x, gc)}));
  }
  {
    Tensor x = random_tensor({2, 5, 2, 3}, rng, -3, 3);
    const Tensor wts = random_tensor(x.shape(), rng);
    const Tensor g = softmax_channels_backward(softmax_channels(x), wts);
    suite.add("softmax_channels", grad_check([&] { return dot(softmax_channels(x), wts); }, {target("x", x, g)}));
  }
  {
    Tensor a = random_tensor({1, 2, 2, 4}, rng), b = random_tensor({1, 3, 4, 8}, rng), c = random_tensor({1, 5, 4, 8}, rng);
    const Tensor wts = random_tensor({1, 5, 4, 8}, rng);
    const auto parts = split_channels(wts, {2, 3});
    const Tensor ga = nearest_upsample_backward(parts[0], 2);
    suite.add("upsample/concat/add", grad_check(
                                         [&] {
                                           const Tensor up = nearest_upsample(a, 2);
                                           return dot(add(concat_channels({&up, &b}), c), wts);
                                         },
                                         {target("a", a, ga), target("b", b, parts[1]), target("c", c, wts)}));
  }
  {
    Tensor logits = random_tensor({2, 4, 2, 3}, rng, -2, 2);
    std::vector<std::int32_t> labels(12);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 4);
    const auto ce = softmax_cross_entropy(logits, labels);
    suite.add("softmax_cross_entropy", grad_check([&] { return softmax_cross_entropy(logits, labels).value; },
                                                  {target("logits", logits, ce.grad)}));
    Tensor a = random_tensor({1, 2, 3, 3}, rng);
    Tensor b = random_tensor(a.shape(), rng);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::abs(a[i] - b[i]) < 1e-3) b[i] += 0.01;
    const auto l1 = l1_mean(a, b);
    suite.add("l1_mean", grad_check([&] { return l1_mean(a, b).value; }, {target("a", a, l1.grad)}));
    Tensor m = random_tensor({1, 2, 2, 2}, rng);
    const auto mg = mean(m);
    suite.add("mean", grad_check([&] { return mean(m).value; }, {target("m", m, mg.grad)}));
  }
  for (bool masked : {false, true}) {
    const Spade layer{"s", 3, 4, 5, masked};
    ParamStore store;
    layer.init(store, rng);
    for (auto& p : store.params()) p.value = random_tensor(p.value.shape(), rng, -0.5, 0.5);
    Tensor x = random_tensor({2, 3, 4, 8}, rng);
    const Tensor cond = random_tensor({2, 4, 2, 4}, rng);
    const Tensor mask = random_mask(2, 2, 4, rng, 0.6);
    const Tensor wts = random_tensor(x.shape(), rng);
    Spade::Cache cache;
    store.zero_grad();
    layer.forward(store, x, cond, masked ? &mask : nullptr, &cache);
    const Tensor gx = layer.backward(store, cache, wts);
    auto targets = all_params(store);
    targets.push_back(target("x", x, gx));
    suite.add(masked ? "spade masked" : "spade",
              grad_check([&] { return dot(layer.forward(store, x, cond, masked ? &mask : nullptr, nullptr), wts); },
                         targets));
  }
}

void structure_loss_gradient(GradSuite& suite) {
  const structgen::StructConfig cfg;
  structgen::StructureGenerator model(cfg, 14);
  std::mt19937_64 rng(15);
  for (auto& p : model.params().params())
    if (p.name.ends_with(".b")) p.value = random_tensor(p.value.shape(), rng, -0.1, 0.1);
  const auto w = world::generate_world(77);
  const auto g = cfg.geometry();
  const auto frame = [&](std::size_t i) { return world::render_pano(w.scene, w.graph.nodes[i], g); };
  const auto guide = [&](std::vector<std::size_t> ctx, std::size_t t) {
    cloud::PointCloud pc(cfg.classes);
    for (auto c : ctx) pc.insert_frame(frame(c), 1);
    return cloud::render_guidance(pc, w.graph.nodes[t], g);
  };
  const auto g1 = guide({0}, 1), g2 = guide({2, 3}, 4);
  const auto f1 = frame(1), f2 = frame(4);
  const cloud::DenseStructure t1{f1.sem, f1.depth}, t2{f2.sem, f2.depth};
  auto batch = structgen::make_batch({&g1, &g2}, {&t1, &t2}, cfg);
  // Depth targets above every sigmoid output keep the L1 term smooth.
  batch.gt_depth.fill(1.0);
  const Tensor eps = structgen::standard_normal({2, 8, 4, 8}, rng);
  model.params().zero_grad();
  structgen::loss_and_grad(model, batch, eps, true);
  const auto grads = grads_of(model.params());
  suite.add("structure loss",
            nn::grad_check([&] { return structgen::loss_and_grad(model, batch, eps, false).loss.total; },
                           strong_targets(model.params(), grads, rng, 6), kink_safe()));
}

void image_loss_gradients(GradSuite& suite) {
  imggen::ImageConfig cfg;
  cfg.width = 32;
  cfg.height = 16;
  cfg.widths = {4, 4, 3, 3};
  cfg.spade_hidden = 4;
  imggen::ImageGenerator gen(cfg, 13);
  std::mt19937_64 rng(14);
  for (auto& p : gen.params().params())
    if (p.name.ends_with(".b") || p.name.find("gamma") != std::string::npos || p.name.find("beta") != std::string::npos)
      p.value = random_tensor(p.value.shape(), rng, -0.3, 0.3);
  const Tensor s = random_structure(2, 8, 16, rng);
  const Tensor s_full = nn::nearest_resize(s, 16, 32);
  const Tensor guide = random_tensor({2, 3, 16, 32}, rng, 0.0, 1.0);
  const Tensor mask = random_mask(2, 16, 32, rng);
  const Tensor real = random_tensor({2, 3, 16, 32}, rng, 0.0, 1.0);
  const imggen::FeatureExtractor fx(15);
  imggen::Discriminator disc(17, 16);
  gen.params().zero_grad();
  imggen::GenCache cache;
  const Tensor out = gen.forward(s, guide, mask, &cache);
  gen.backward(cache, imggen::generator_loss(out, real, s_full, disc, fx).d_gen);
  const auto ggrads = grads_of(gen.params());
  suite.add("generator loss",
            nn::grad_check([&] { return imggen::generator_loss(gen.forward(s, guide, mask), real, s_full, disc, fx).total; },
                           strong_targets(gen.params(), ggrads, rng), kink_safe()));

  for (auto& p : disc.params().params())
    if (p.name.ends_with(".b")) p.value = random_tensor(p.value.shape(), rng, -0.2, 0.2);
  const Tensor fake = random_tensor(real.shape(), rng, 0.0, 1.0);
  disc.params().zero_grad();
  imggen::discriminator_loss(disc, real, fake, s_full, true);
  const auto dgrads = grads_of(disc.params());
  suite.add("discriminator loss",
            nn::grad_check([&] { return imggen::discriminator_loss(disc, real, fake, s_full); },
                           strong_targets(disc.params(), dgrads, rng, 6), kink_safe()));
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuite suite;
  operator_gradients(suite);
  structure_loss_gradient(suite);
  image_loss_gradients(suite);
  const double t = seconds_since(t0);
  return {suite.worst < 1e-5 && t < 120.0,
          fmt("worst rel %.2e (%s), %.1f s", suite.worst, suite.worst_name.c_str(), t)};
}

// 6-10 ------------------------------------------------------------------------

struct Trained {
  std::vector<world::World> train, test;
  std::vector<std::uint64_t> test_seeds;
  std::map<std::string, structgen::StructureGenerator> models;
  std::map<std::string, eval::EvalReport> reports;
};

class Lab {
 public:
  explicit Lab(const Options& opt) : opt_(opt) {}

  const structgen::StructureGenerator& model(structgen::RolloutMode mode, std::uint64_t seed) {
    const std::string name = key(mode, seed);
    if (auto it = t_.models.find(name); it != t_.models.end()) return it->second;
    worlds();
    const std::string path = (fs::path(opt_.work) / (name + ".ckpt")).string();
    const structgen::StructConfig cfg;
    if (fs::exists(path)) {
      std::fprintf(stderr, "loading %s\n", path.c_str());
      return t_.models.emplace(name, structgen::load_model(path, cfg)).first->second;
    }
    structgen::TrainConfig tc;
    tc.steps = opt_.steps;
    tc.seed = seed;
    tc.mode = mode;
    structgen::StructureGenerator m(cfg, seed);
    const auto t0 = std::chrono::steady_clock::now();
    structgen::train_structure(m, t_.train, tc, [&](const structgen::LossRecord& r) {
      if (r.step % 500 == 0) std::fprintf(stderr, "%s step %d loss %.3f\n", name.c_str(), r.step, r.loss.total);
    });
    std::fprintf(stderr, "%s trained in %.0f s\n", name.c_str(), seconds_since(t0));
    io::ensure_dir(opt_.work);
    structgen::save_model(path, m);
    return t_.models.emplace(name, std::move(m)).first->second;
  }

  // Nearest neighbor and one trained model on the held-out worlds.
  const eval::EvalReport& report(structgen::RolloutMode mode, std::uint64_t seed) {
    const std::string name = key(mode, seed);
    if (auto it = t_.reports.find(name); it != t_.reports.end()) return it->second;
    const auto& m = model(mode, seed);
    const auto r = eval::run_eval_grid({{"nearest_neighbor", nullptr}, {"struct", &m}}, t_.test, t_.test_seeds, {});
    io::write_json((fs::path(opt_.work) / (name + "_report.json")).string(), r.to_json());
    return t_.reports.emplace(name, r).first->second;
  }

  const Trained& data() {
    worlds();
    return t_;
  }

 private:
  static std::string key(structgen::RolloutMode mode, std::uint64_t seed) {
    return std::string(mode == structgen::RolloutMode::kRecurrent ? "struct_rec" : "struct_tf") + "_seed" +
           std::to_string(seed);
  }
  void worlds() {
    if (!t_.train.empty()) return;
    const RunConfig rc;
    for (int i = 0; i < rc.train_worlds.count; ++i)
      t_.train.push_back(world::generate_world(rc.train_worlds.first_seed + static_cast<std::uint64_t>(i)));
    for (int i = 0; i < rc.test_worlds.count; ++i) {
      t_.test_seeds.push_back(rc.test_worlds.first_seed + static_cast<std::uint64_t>(i));
      t_.test.push_back(world::generate_world(t_.test_seeds.back()));
    }
  }

  Options opt_;
  Trained t_;
};

constexpr auto kTf = structgen::RolloutMode::kTeacherForcing;
constexpr auto kRec = structgen::RolloutMode::kRecurrent;

Outcome beats_baseline(Lab& lab) {
  int held = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto& r = lab.report(kTf, seed);
    const double gap1 = r.at("struct", 1, 1).miou - r.at("nearest_neighbor", 1, 1).miou;
    const double gap13 = r.mean_over_steps("struct", 1, 1, 3, &eval::EvalRow::miou) -
                         r.mean_over_steps("nearest_neighbor", 1, 1, 3, &eval::EvalRow::miou);
    held += gap1 >= 0.05 && gap13 >= 0.05;
    detail += fmt("%sseed %d: step-1 %.3f vs %.3f (gap %+.1f pts), steps 1-3 gap %+.1f pts", seed ? "; " : "",
                  static_cast<int>(seed), r.at("struct", 1, 1).miou, r.at("nearest_neighbor", 1, 1).miou,
                  100 * gap1, 100 * gap13);
  }
  return {held >= 2, fmt("%d/3 seeds hold; ", held) + detail};
}

Outcome context_decay(Lab& lab) {
  const auto& r = lab.report(kTf, 0);
  bool ok = r.at("nearest_neighbor", 1, 1).count >= 50;
  std::string detail = fmt("%d trajectories", r.at("nearest_neighbor", 1, 1).count);
  for (const char* m : {"nearest_neighbor", "struct"}) {
    for (int c = 1; c <= 3; ++c) {
      ok = ok && r.at(m, c, 6).miou < r.at(m, c, 1).miou;
    }
    detail += fmt("; %s c1 step 1 %.3f -> step 6 %.3f", m, r.at(m, 1, 1).miou, r.at(m, 1, 6).miou);
  }
  return {ok, detail};
}

Outcome context_monotone(Lab& lab) {
  const auto& r = lab.report(kTf, 0);
  std::array<double, 3> m{};
  for (int c = 1; c <= 3; ++c) m[c - 1] = r.mean_over_steps("nearest_neighbor", c, 1, 6, &eval::EvalRow::miou);
  return {m[1] >= m[0] && m[2] >= m[1], fmt("nearest neighbor steps 1-6: %.3f, %.3f, %.3f", m[0], m[1], m[2])};
}

Outcome diversity(Lab& lab) {
  const auto& r = lab.report(kTf, 0);
  double unobs = 0.0, obs = 0.0;
  for (int c = 1; c <= 3; ++c)
    for (int s = 1; s <= 6; ++s) {
      unobs += r.at("struct", c, s).diversity_unobserved / 18.0;
      obs += r.at("struct", c, s).diversity_observed / 18.0;
    }
  const double ratio = obs > 0 ? unobs / obs : std::numeric_limits<double>::infinity();
  const auto& row1 = r.at("struct", 1, 1);

  // Prior-mean rollouts repeated on held-out trajectories.
  const auto& m = lab.model(kTf, 0);
  const auto& d = lab.data();
  bool same = true;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& w = d.test[i];
    const auto traj = world::sample_trajectory(w.graph, 7 + i, 5);
    const geom::PanoGeometry g = m.config().geometry();
    const std::vector<cloud::PanoFrame> ctx{world::render_pano(w.scene, traj[0], g)};
    const std::vector<geom::Pose> rest(traj.begin() + 1, traj.end());
    const auto a = structgen::rollout(m, ctx, rest, structgen::RolloutMode::kRecurrent, structgen::ZPolicy::prior_mean());
    const auto b = structgen::rollout(m, ctx, rest, structgen::RolloutMode::kRecurrent, structgen::ZPolicy::prior_mean());
    for (std::size_t k = 0; k < a.size(); ++k) same = same && a[k].prediction == b[k].prediction;
  }
  return {ratio >= 5.0 && same,
          fmt("grid mean unobserved %.4f observed %.4f (ratio %.2f); step 1 c1 %.4f / %.4f (ratio %.2f); "
              "prior-mean repeat %s",
              unobs, obs, ratio, row1.diversity_unobserved, row1.diversity_observed,
              row1.diversity_observed > 0 ? row1.diversity_unobserved / row1.diversity_observed : 0.0,
              same ? "bitwise identical" : "differs")};
}

Outcome recurrent_vs_tf(Lab& lab) {
  const auto& tf = lab.report(kTf, 0);
  const auto& rec = lab.report(kRec, 0);
  bool complete = true;
  for (const auto* r : {&tf, &rec})
    for (const char* m : {"nearest_neighbor", "struct"})
      for (int c = 1; c <= 3; ++c)
        for (int s = 1; s <= 6; ++s) complete = complete && r->at(m, c, s).count > 0;
  const auto multi = [](const eval::EvalReport& r) {
    double t = 0.0;
    for (int c = 1; c <= 3; ++c) t += r.mean_over_steps("struct", c, 1, 6, &eval::EvalRow::miou) / 3.0;
    return t;
  };
  const double a = multi(rec), b = multi(tf);
  return {complete && a >= b - 0.02,
          fmt("grid %s; contexts 1-3 x steps 1-6 mIOU recurrent %.3f, teacher forcing %.3f", complete ? "complete" : "incomplete", a, b)};
}

// 11 --------------------------------------------------------------------------

Outcome image_capacity() {
  imggen::ImageConfig c;
  c.width = 64;
  c.height = 32;
  c.widths = {16, 16, 8, 8};
  c.spade_hidden = 8;
  const auto data = imggen::image_samples({world::generate_world(1)}, c, geom::PanoGeometry(64, 32), 1, 0);
  imggen::ImageGenerator gen(c, 0);
  imggen::Discriminator disc(c.struct_channels() + 3, 1);
  const imggen::FeatureExtractor fx(2);
  imggen::ImageTrainConfig tc;
  tc.steps = 300;
  tc.batch = 1;
  imggen::train_image_generator(gen, disc, fx, data, tc);
  const auto& s = data.front();
  const auto out = imggen::generate_rgb(gen, s.structure, s.guide_rgb, s.guide_mask);
  double l1 = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto a = out.pixels()[i], b = s.real.pixels()[i];
    l1 += std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b);
  }
  l1 /= 3.0 * 255.0 * static_cast<double>(out.size());

  // Constant critics: scores at the margins and at zero.
  class Const : public imggen::Critic {
   public:
    explicit Const(std::function<double(const Tensor&)> f) : f_(std::move(f)) {}
    imggen::CriticPass forward(const Tensor& input) const override {
      imggen::CriticPass p;
      p.input = input;
      p.score = Tensor(input.n(), 1, 2, 4, f_(input));
      return p;
    }
    Tensor backward(const imggen::CriticPass& p, const std::vector<Tensor>&, const Tensor&, bool) override {
      return Tensor(p.input.shape());
    }

   private:
    std::function<double(const Tensor&)> f_;
  };
  std::mt19937_64 rng(11);
  Tensor real = random_tensor({2, 3, 16, 32}, rng, 0.0, 1.0), fake = random_tensor({2, 3, 16, 32}, rng, 0.0, 1.0);
  const Tensor st = random_structure(2, 16, 32, rng);
  real(0, 0, 0, 0) = 1.0;
  fake(0, 0, 0, 0) = 0.0;
  Const margins([](const Tensor& x) { return x(0, 0, 0, 0) > 0.5 ? 1.0 : -1.0; });
  Const zero([](const Tensor&) { return 0.0; });
  const double at_margin = imggen::discriminator_loss(margins, real, fake, st);
  const double at_zero = imggen::discriminator_loss(zero, real, fake, st);
  return {l1 < 0.08 && at_margin == 0.0 && at_zero == 2.0,
          fmt("overfit L1 %.4f; hinge at margins %g, at zero %g", l1, at_margin, at_zero)};
}

// 12 --------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_text(e.path().string());
  return out;
}

Outcome pipeline(const Options& opt) {
  const fs::path root = fs::path(opt.work) / "pipeline";
  fs::remove_all(root);
  const std::string r = (root / "run").string();
  RunConfig cfg;
  cfg.world_dir = r + "/worlds";
  cfg.structure_train.steps = opt.pipeline_steps;
  cfg.image_train.steps = opt.pipeline_steps;
  const auto run = [](std::vector<std::string> args) {
    args.insert(args.begin(), "panodream");
    if (cli::run(args) != 0) throw std::runtime_error("command failed: " + args[1]);
  };
  const auto w = [&](std::uint64_t s) { return r + "/worlds/world_" + std::to_string(s) + ".json"; };
  std::vector<double> times;
  for (const char* keep : {"a", "b"}) {
    const auto t0 = std::chrono::steady_clock::now();
    io::ensure_dir(r);
    io::write_json(r + "/config.json", cfg.to_json());
    const std::string c = r + "/config.json";
    run({"worldgen", "--seed", "0", "--count", std::to_string(cfg.train_worlds.count), "--out", r + "/worlds"});
    run({"worldgen", "--seed", std::to_string(cfg.test_worlds.first_seed), "--count",
         std::to_string(cfg.test_worlds.count), "--out", r + "/worlds"});
    const auto test0 = cfg.test_worlds.first_seed;
    run({"render", "--config", c, "--world", w(test0), "--traj-seed", "3", "--out", r + "/frames"});
    run({"train", "--stage", "structure", "--config", c, "--out", r + "/train"});
    run({"train", "--stage", "image", "--config", c, "--out", r + "/train"});
    run({"dream", "--config", c, "--world", w(test0), "--traj", r + "/frames/trajectory.json", "--model", "struct",
         "--checkpoint", r + "/train/structure.ckpt", "--image-checkpoint", r + "/train/image.ckpt", "--zmode",
         "sample:1", "--samples", "2", "--out", r + "/dream"});
    run({"eval", "--config", c, "--checkpoint", "struct=" + r + "/train/structure.ckpt", "--out", r + "/eval"});
    fs::rename(r, root / keep);
    times.push_back(seconds_since(t0));
  }
  const auto a = snapshot(root / "a"), b = snapshot(root / "b");
  std::size_t differ = a.size() == b.size() ? 0 : 1;
  for (const auto& [k, v] : a) differ += !(b.count(k) && b.at(k) == v);
  const double worst = std::max(times[0], times[1]);
  return {differ == 0 && worst < 600.0,
          fmt("%zu files, %zu differ; runs %.0f s and %.0f s", a.size(), differ, times[0], times[1])};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  Options opt;
  std::vector<int> only;
  app.add_option("--work", opt.work, "Directory for cached checkpoints and reports");
  app.add_option("--only", only, "Criteria to run (default all)")->check(CLI::Range(1, 12));
  app.add_option("--steps", opt.steps, "Structure training steps");
  app.add_option("--pipeline-steps", opt.pipeline_steps, "Training steps in the CLI pipeline run");
  CLI11_PARSE(app, argc, argv);

  Lab lab(opt);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"geometry round trips", geometry_round_trips},
      {"cloud identity", cloud_identity},
      {"oracle equivalences", oracle_equivalences},
      {"closed forms", closed_forms},
      {"gradient suite", gradient_suite},
      {"learning beats nearest neighbor", [&] { return beats_baseline(lab); }},
      {"context decay", [&] { return context_decay(lab); }},
      {"context monotonicity", [&] { return context_monotone(lab); }},
      {"stochastic diversity", [&] { return diversity(lab); }},
      {"recurrent vs teacher forcing", [&] { return recurrent_vs_tf(lab); }},
      {"image-stage capacity", image_capacity},
      {"end-to-end determinism", [&] { return pipeline(opt); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
