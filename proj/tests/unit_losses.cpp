#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dgsp/losses.hpp"
#include "dgsp/model.hpp"
#include "dgsp/prompt.hpp"
#include "dgsp/rng.hpp"
#include "support.hpp"

using namespace dgsp;
using namespace dgsp::testing;

namespace {

Var<double> leafd(const Tensor<double>& t) { return Var<double>::leaf(t, true); }

Tensor<double> map4(long n, std::vector<double> v, long h, long w) {
  return Tensor<double>(Shape{n, 1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("bce analytic values") {
  // Uniform p = 0.5: -log(0.5) = ln 2 regardless of the target.
  Tensor<double> half(Shape{1, 1, 2, 2}, 0.5);
  Tensor<double> y(Shape{1, 1, 2, 2}, std::vector<double>{1, 0, 1, 0});
  double v = bce(Var<double>::constant(half), Var<double>::constant(y)).value()[0];
  CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Elementwise mean of -[y log p + (1-y) log(1-p)], checked by hand.
  Tensor<double> p(Shape{1, 1, 2, 2}, std::vector<double>{0.8, 0.3, 0.6, 0.1});
  double want = -(std::log(0.8) + std::log(1 - 0.3) + std::log(0.6) + std::log(1 - 0.1)) / 4.0;
  double got =
      bce(Var<double>::constant(p), Var<double>::constant(y)).value()[0];
  CHECK(got == doctest::Approx(want).epsilon(1e-12));

  // Saturated predictions are clamped, so the loss stays finite.
  Tensor<double> hard(Shape{1, 1, 2, 2}, std::vector<double>{1, 0, 1, 0});
  double sat = bce(Var<double>::constant(hard), Var<double>::constant(y)).value()[0];
  CHECK(std::isfinite(sat));
  CHECK(sat == doctest::Approx(-std::log(1 - 1e-7)).epsilon(1e-6));
}

TEST_CASE("soft_iou worked example and epsilon handling") {
  // y = [1,1,0,0], p = [1,0,0,0]: intersection 1, union 2.
  Tensor<double> y = map4(1, {1, 1, 0, 0}, 2, 2);
  Tensor<double> p = map4(1, {1, 0, 0, 0}, 2, 2);
  double exact =
      soft_iou(Var<double>::constant(p), Var<double>::constant(y), 0.0).value()[0];
  CHECK(exact == doctest::Approx(0.5).epsilon(1e-12));

  const double eps = 1e-6;
  double smoothed =
      soft_iou(Var<double>::constant(p), Var<double>::constant(y)).value()[0];
  CHECK(smoothed == doctest::Approx(1.0 - (1.0 + eps) / (2.0 + eps)).epsilon(1e-12));

  // Perfect prediction: ratio is exactly 1 for any epsilon.
  double perfect =
      soft_iou(Var<double>::constant(y), Var<double>::constant(y)).value()[0];
  CHECK(perfect == doctest::Approx(0.0).epsilon(1e-12));

  // Disjoint prediction: intersection 0, union 2k.
  Tensor<double> q = map4(1, {0, 0, 1, 1}, 2, 2);
  double disjoint =
      soft_iou(Var<double>::constant(q), Var<double>::constant(y)).value()[0];
  CHECK(disjoint == doctest::Approx(1.0 - eps / (4.0 + eps)).epsilon(1e-12));
}

TEST_CASE("soft_iou averages per-sample ratios") {
  // Sample 0 scores 0.5, sample 1 scores 0 (perfect), eps = 0 keeps it exact.
  Tensor<double> y = map4(2, {1, 1, 0, 0, 1, 0, 0, 1}, 2, 2);
  Tensor<double> p = map4(2, {1, 0, 0, 0, 1, 0, 0, 1}, 2, 2);
  double v = soft_iou(Var<double>::constant(p), Var<double>::constant(y), 0.0).value()[0];
  CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("mse analytic value") {
  Tensor<double> a = map4(1, {1, 2, 3, 4}, 2, 2);
  Tensor<double> b = map4(1, {0, 4, 3, 1}, 2, 2);
  double v = mse(Var<double>::constant(a), Var<double>::constant(b)).value()[0];
  CHECK(v == doctest::Approx((1.0 + 4.0 + 0.0 + 9.0) / 4.0).epsilon(1e-12));
}

TEST_CASE("loss gradients agree with finite differences") {
  Rng rng(201);
  Tensor<double> pv = random_tensor<double>(Shape{2, 1, 3, 3}, rng, 0.05, 0.95);
  Tensor<double> yv(Shape{2, 1, 3, 3});
  for (long i = 0; i < yv.numel(); ++i) yv[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
  Var<double> p = leafd(pv);
  Var<double> yc = Var<double>::constant(yv);

  GradCheckStats st = gradcheck([&] { return bce(p, yc); }, {{"p", p}});
  CHECK_MESSAGE(st.ok, st.detail);
  st = gradcheck([&] { return soft_iou(p, yc); }, {{"p", p}});
  CHECK_MESSAGE(st.ok, st.detail);
  st = gradcheck([&] { return train_loss(p, yc, 0.7, 1.3).total; }, {{"p", p}});
  CHECK_MESSAGE(st.ok, st.detail);

  Var<double> r = leafd(random_tensor<double>(Shape{2, 1, 3, 3}, rng));
  Var<double> x = Var<double>::constant(random_tensor<double>(Shape{2, 1, 3, 3}, rng));
  st = gradcheck([&] { return mse(r, x); }, {{"r", r}});
  CHECK_MESSAGE(st.ok, st.detail);
}

TEST_CASE("train loss combines its components with the given weights") {
  Rng rng(203);
  Tensor<double> pv = random_tensor<double>(Shape{2, 1, 4, 4}, rng, 0.05, 0.95);
  Tensor<double> yv(Shape{2, 1, 4, 4});
  for (long i = 0; i < yv.numel(); ++i) yv[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  Var<double> p = Var<double>::constant(pv);
  Var<double> y = Var<double>::constant(yv);

  const double l1 = 0.3, l2 = 1.7;
  LossValue<double> lv = train_loss(p, y, l1, l2);
  REQUIRE(lv.components.size() == 2);
  CHECK(lv.components[0].first == "bce");
  CHECK(lv.components[1].first == "softiou");
  const double b = lv.components[0].second.value()[0];
  const double s = lv.components[1].second.value()[0];
  CHECK(lv.total.value()[0] == doctest::Approx(l1 * b + l2 * s).epsilon(1e-7));
  CHECK(b >= 0.0);
  CHECK(s >= 0.0);
  CHECK(s <= 1.0);
}

namespace {

struct TinyPretrain {
  ModelConfig mc;
  Model<double> m;
  explicit TinyPretrain(std::uint64_t seed)
      : mc(make_cfg()), m(mc, seed, ModelParts::pretrain()) {}
  static ModelConfig make_cfg() {
    ModelConfig mc;
    mc.widths = {2, 3, 4, 5, 6};
    mc.dec_width = 4;
    mc.latent_dim = 4;
    mc.text_dim = 8;
    mc.inv_channels = 4;
    mc.inv_heads = 2;
    mc.bridge_heads = 2;
    mc.text_heads = 2;
    mc.vocab_size = Vocabulary::builtin().size();
    return mc;
  }
};

}  // namespace

TEST_CASE("contrastive loss basics on a tiny pretrain model") {
  TinyPretrain tp(5);
  Rng rng(207);
  const long N = 3;
  Var<double> f5 = Var<double>::constant(random_tensor<double>(Shape{N, 6, 2, 2}, rng));
  Var<double> eot = Var<double>::constant(random_tensor<double>(Shape{N, 8}, rng));

  double v = contrastive(tp.m, f5, eot, 0.07).value()[0];
  CHECK(std::isfinite(v));
  CHECK(v >= 0.0);

  // A single pair has nothing to contrast against: both directions are -log 1.
  Var<double> f1 = Var<double>::constant(random_tensor<double>(Shape{1, 6, 2, 2}, rng));
  Var<double> e1 = Var<double>::constant(random_tensor<double>(Shape{1, 8}, rng));
  CHECK(contrastive(tp.m, f1, e1, 0.07).value()[0] == doctest::Approx(0.0).epsilon(1e-12));

  // Jointly permuting image and text rows leaves the loss unchanged.
  Tensor<double> f5p(Shape{N, 6, 2, 2}), eotp(Shape{N, 8});
  const long perm[3] = {2, 0, 1};
  for (long n = 0; n < N; ++n) {
    for (long c = 0; c < 6; ++c)
      for (long i = 0; i < 2; ++i)
        for (long j = 0; j < 2; ++j)
          f5p.at4(n, c, i, j) = f5.value().at4(perm[n], c, i, j);
    for (long j = 0; j < 8; ++j) eotp.at2(n, j) = eot.value().at2(perm[n], j);
  }
  double vp = contrastive(tp.m, Var<double>::constant(f5p), Var<double>::constant(eotp), 0.07)
                  .value()[0];
  CHECK(vp == doctest::Approx(v).epsilon(1e-9));

  // Sharper temperature on mismatched pairs should not lower the loss floor.
  double cold = contrastive(tp.m, f5, eot, 1.0).value()[0];
  CHECK(std::isfinite(cold));
}

TEST_CASE("contrastive gradient flows to text and projection, never the image") {
  TinyPretrain tp(5);
  Rng rng(211);
  const long N = 3;
  Var<double> f5 = Var<double>::leaf(random_tensor<double>(Shape{N, 6, 2, 2}, rng), true);
  Var<double> eot = Var<double>::leaf(random_tensor<double>(Shape{N, 8}, rng), true);

  tp.m.params.zero_grad();
  f5.zero_grad();
  eot.zero_grad();
  contrastive(tp.m, f5, eot, 0.07).backward();

  // f5 enters through a stop-gradient: its grad buffer must stay all zero.
  for (long i = 0; i < f5.grad().numel(); ++i) CHECK(f5.grad()[i] == 0.0);

  double eot_mag = 0, proj_mag = 0;
  for (long i = 0; i < eot.grad().numel(); ++i)
    eot_mag = std::max(eot_mag, std::abs(eot.grad()[i]));
  const Tensor<double>& pg = tp.m.params.get("contra.proj.w").grad();
  for (long i = 0; i < pg.numel(); ++i) proj_mag = std::max(proj_mag, std::abs(pg[i]));
  CHECK(eot_mag > 0.0);
  CHECK(proj_mag > 0.0);

  // Finite differences against the analytic text-side gradient.
  GradCheckStats st = gradcheck([&] { return contrastive(tp.m, f5, eot, 0.07); },
                                {{"eot", eot},
                                 {"proj.w", tp.m.params.get("contra.proj.w")},
                                 {"proj.b", tp.m.params.get("contra.proj.b")}});
  CHECK_MESSAGE(st.ok, st.detail);
}

TEST_CASE("pretrain loss decomposes into contrastive plus reconstruction") {
  TinyPretrain tp(7);
  Rng rng(213);
  const long N = 2;
  Var<double> input = Var<double>::constant(random_tensor<double>(Shape{N, 1, 32, 32}, rng, 0, 1));
  auto pre = tp.m.pre_encode(input);
  TokenSequence toks =
      tokenize(build_template(2).text, Vocabulary::builtin(), tp.mc.context_len);
  TextBundle<double> text = make_bundle(tp.m, pre[0], pre[1], pre[2], toks);
  auto re = tp.m.re_encode(pre[2], text.eot);
  Var<double> recon = tp.m.recon_decode(re[1]);
  CHECK(recon.value().dim(2) == 32);

  LossValue<double> lv = pretrain_loss(tp.m, recon, input, re[1], text.eot, 0.07);
  REQUIRE(lv.components.size() == 2);
  CHECK(lv.components[0].first == "contra");
  CHECK(lv.components[1].first == "mse");
  const double c = lv.components[0].second.value()[0];
  const double r = lv.components[1].second.value()[0];
  CHECK(lv.total.value()[0] == doctest::Approx(c + r).epsilon(1e-9));
  CHECK(c >= 0.0);
  CHECK(r >= 0.0);
}
