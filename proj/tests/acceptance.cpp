// Acceptance gate. Runs the eight release criteria end to end and prints one
// PASS/FAIL line per criterion; exits nonzero if any fail. Criteria with a
// stated wall-clock budget fail when they exceed it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dgsp/checkpoint.hpp"
#include "dgsp/config.hpp"
#include "dgsp/data.hpp"
#include "dgsp/losses.hpp"
#include "dgsp/metrics.hpp"
#include "dgsp/model.hpp"
#include "dgsp/prompt.hpp"
#include "dgsp/trainer.hpp"
#include "support.hpp"

using namespace dgsp;
using namespace dgsp::testing;

namespace {

using Leaves = std::vector<std::pair<std::string, Var<double>>>;

double now_secs() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

ModelConfig tiny_config() {
  ModelConfig mc;
  mc.in_channels = 1;
  mc.widths = {2, 3, 4, 5, 6};
  mc.dec_width = 4;
  mc.latent_dim = 4;
  mc.text_dim = 8;
  mc.inv_channels = 4;
  mc.inv_heads = 2;
  mc.bridge_heads = 2;
  mc.text_heads = 2;
  mc.text_layers = 2;
  mc.context_len = 77;
  mc.n_tokens = 2;
  mc.vocab_size = Vocabulary::builtin().size();
  return mc;
}

nlohmann::json run_config(const std::string& root, const std::string& out_dir,
                          std::uint64_t seed, long epochs, double lr) {
  nlohmann::json cfg = default_config();
  cfg["seed"] = seed;
  cfg["data"]["root"] = root;
  cfg["train"]["epochs"] = epochs;
  cfg["train"]["lr"] = lr;
  cfg["train"]["out_dir"] = out_dir;
  cfg["train"]["eval_every"] = 0;
  cfg["train"]["save_every"] = 0;
  return cfg;
}

bool bits_equal(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.numel() != b.numel()) return false;
  for (long i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. Gradient suite: every text-conditioned module and every loss passes a
//    float64 central finite-difference check at rel. tol 1e-6, step 1e-5.

std::string c1_gradients() {
  std::ostringstream err;
  ModelConfig mc = tiny_config();
  Model<double> m(mc, 5, ModelParts::all());
  Vocabulary vocab = Vocabulary::builtin();
  Rng rng(17);
  long checked = 0;

  // Elements below 1e-4 in magnitude are held to |a - n| <= 1e-9 instead of
  // the relative bound: central differences carry ~1e-11 of cancellation
  // noise, which swamps a 1e-6 relative test only for near-zero gradients.
  auto run = [&](const std::string& name, const std::function<Var<double>()>& f,
                 const Leaves& leaves) {
    GradCheckStats st = gradcheck(f, leaves, 1e-5, 1e-6, 1e-4, 1e-9);
    checked += st.checked;
    if (!st.ok) err << name << ": " << st.detail << "; ";
  };
  auto dleaf = [&](const Shape& s, double lo = -1.0, double hi = 1.0) {
    return Var<double>::leaf(random_tensor<double>(s, rng, lo, hi), true);
  };
  auto with_params = [&](Leaves base, const std::vector<std::string>& names) {
    for (const auto& n : names) base.emplace_back(n, m.params.get(n));
    return base;
  };
  auto probe = [&](const Var<double>& y, Tensor<double>& w, bool& init) {
    if (!init) {
      w = random_tensor<double>(y.shape(), rng);
      init = true;
    }
    return sum_all(mul(y, Var<double>::constant(w)));
  };

  {
    Var<double> x = dleaf(Shape{1, 1, 4, 4});
    Tensor<double> w;
    bool wi = false;
    run("pre_block", [&] { return probe(m.pre_block(1, x, false), w, wi); },
        with_params({{"x", x}}, {"enc.b1.conv1.w", "enc.b1.conv1.b", "enc.b1.conv2.w",
                                 "enc.b1.conv2.b", "enc.b1.gate.w", "enc.b1.gate.b"}));
  }
  {
    Var<double> f_mid = dleaf(Shape{1, 5, 2, 2});
    Var<double> t = dleaf(Shape{1, 8});
    Tensor<double> w;
    bool wi = false;
    run("tgca", [&] { return probe(m.tgca(4, f_mid, t), w, wi); },
        with_params({{"f_mid", f_mid}, {"t", t}},
                    {"enc.b4.tgca.mlp1.w", "enc.b4.tgca.mlp1.b", "enc.b4.tgca.mlp2.w",
                     "enc.b4.tgca.mlp2.b", "enc.b4.tgca.fuse.w", "enc.b4.tgca.fuse.b"}));
  }
  {
    Var<double> f5 = dleaf(Shape{1, 6, 2, 2});
    Var<double> seq = dleaf(Shape{1, 5, 8});
    Tensor<double> w;
    bool wi = false;
    run("bridge_attend", [&] { return probe(m.bridge_attend(f5, seq), w, wi); },
        with_params({{"f5", f5}, {"seq", seq}},
                    {"bridge.in.w", "bridge.in.b", "bridge.q.w", "bridge.q.b", "bridge.k.w",
                     "bridge.k.b", "bridge.v.w", "bridge.v.b", "bridge.out.w", "bridge.out.b",
                     "bridge.ln.g", "bridge.ln.b"}));
  }
  {
    Var<double> d_in = dleaf(Shape{1, 4, 2, 2});
    Var<double> skip = dleaf(Shape{1, 2, 4, 4});
    Var<double> eot = dleaf(Shape{1, 8});
    Tensor<double> w;
    bool wi = false;
    run("tgsa_stage", [&] { return probe(m.tgsa_stage(4, d_in, skip, eot), w, wi); },
        with_params({{"d_in", d_in}, {"skip", skip}, {"eot", eot}},
                    {"dec.s4.skip.w", "dec.s4.skip.b", "dec.s4.vis1.w", "dec.s4.vis1.b",
                     "dec.s4.vis2.w", "dec.s4.vis2.b", "dec.s4.txt1.w", "dec.s4.txt1.b",
                     "dec.s4.txt2.w", "dec.s4.txt2.b", "dec.s4.conv.w", "dec.s4.conv.b"}));
  }
  {
    Var<double> f_img = dleaf(Shape{1, 4, 2, 2});
    Tensor<double> w;
    bool wi = false;
    run("invert_tokens",
        [&] { return probe(invert_tokens(m, f_img, 2).embeddings, w, wi); },
        with_params({{"f_img", f_img}},
                    {"inv.tokens", "inv.q.w", "inv.q.b", "inv.k.w", "inv.k.b", "inv.v.w",
                     "inv.v.b", "inv.out.w", "inv.out.b", "inv.mlp1.w", "inv.mlp1.b",
                     "inv.mlp2.w", "inv.mlp2.b"}));
  }
  {
    // Injected path: gradients reach the slot vectors through the frozen
    // transformer. The transformer's own weights stay out of the leaf set.
    TokenSequence toks = tokenize(build_template(2).text, vocab, mc.context_len);
    Var<double> inj = dleaf(Shape{1, 2, 8});
    Tensor<double> w;
    bool wi = false;
    run("encode_text",
        [&] {
          return probe(encode_text(m, toks, SemanticTokens<double>{inj, 2}).seq, w, wi);
        },
        {{"inj", inj}});
  }
  {
    Var<double> pred = dleaf(Shape{2, 1, 2, 2}, 0.1, 0.9);
    Var<double> tgt = dleaf(Shape{2, 1, 2, 2}, 0.1, 0.9);
    run("bce", [&] { return bce(pred, tgt); }, {{"pred", pred}, {"tgt", tgt}});
    run("soft_iou", [&] { return soft_iou(pred, tgt); }, {{"pred", pred}, {"tgt", tgt}});
  }
  {
    Var<double> f5 = dleaf(Shape{2, 6, 2, 2});
    Var<double> eot = dleaf(Shape{2, 8});
    // f5 sits behind stop-gradient, so it is exercised but not a leaf here.
    run("contrastive", [&] { return contrastive(m, f5, eot, 0.07); },
        with_params({{"eot", eot}}, {"contra.proj.w", "contra.proj.b"}));
  }
  if (checked < 1000) err << "suite too small (" << checked << " elements); ";
  return err.str();
}

// ---------------------------------------------------------------------------
// 2. Shape/normalization suite at 64/128/256 input sizes.

std::string c2_shapes() {
  std::ostringstream err;
  ModelConfig mc;  // desk-scale defaults
  mc.vocab_size = Vocabulary::builtin().size();
  Model<float> m(mc, 11, ModelParts::train());
  Vocabulary vocab = Vocabulary::builtin();
  TokenSequence toks = tokenize(build_template(2).text, vocab, mc.context_len);
  Rng rng(19);

  for (long hw : {64L, 128L, 256L}) {
    const std::string at = " at " + std::to_string(hw) + "; ";
    Var<float> image = Var<float>::constant(random_tensor<float>(Shape{1, 1, hw, hw}, rng, 0.0, 1.0));

    std::array<Tensor<float>, 3> gates;
    auto pre = m.pre_encode(image, &gates);
    TextBundle<float> bundle = make_bundle(m, pre[0], pre[1], pre[2], toks);
    Tensor<float> w4, w5;
    Var<float> f4 = m.re_block(4, pre[2], bundle.eot, &w4);
    Var<float> f5 = m.re_block(5, f4, bundle.eot, &w5);

    const std::array<Var<float>, 5> f{pre[0], pre[1], pre[2], f4, f5};
    const long strides[5] = {1, 2, 4, 8, 16};
    for (int i = 0; i < 5; ++i) {
      if (f[i].dim(1) != mc.widths[static_cast<std::size_t>(i)] ||
          f[i].dim(2) != hw / strides[i] || f[i].dim(3) != hw / strides[i])
        err << "f" << i + 1 << " shape " << shape_str(f[i].shape()) << at;
    }
    for (int i = 0; i < 3; ++i)
      for (long j = 0; j < gates[static_cast<std::size_t>(i)].numel(); ++j) {
        const float g = gates[static_cast<std::size_t>(i)][j];
        if (!(g > 0.0f && g < 1.0f)) err << "pre-gate outside (0,1)" << at;
      }
    for (const Tensor<float>* wt : {&w4, &w5})
      for (long j = 0; j < wt->numel(); ++j)
        if (!((*wt)[j] > 0.0f && (*wt)[j] < 1.0f)) err << "tgca gate outside (0,1)" << at;

    // Decoder: bridge attention rows and every stage's spatial map are
    // probability distributions; the head returns one map at input size.
    Tensor<float> battn;
    Var<float> x = m.bridge_attend(f5, bundle.seq, &battn);
    for (long r = 0; r < battn.dim(0) * battn.dim(1); ++r) {
      double s = 0;
      for (long c = 0; c < battn.dim(2); ++c) s += battn[r * battn.dim(2) + c];
      if (std::abs(s - 1.0) > 1e-5) err << "bridge attn row sum " << s << at;
    }
    for (int s = 1; s <= 4; ++s) {
      Tensor<float> wsp;
      x = m.tgsa_stage(s, x, f[static_cast<std::size_t>(4 - s)], bundle.eot, &wsp);
      const long per = wsp.numel() / wsp.dim(0);
      for (long n = 0; n < wsp.dim(0); ++n) {
        double sum = 0;
        for (long j = 0; j < per; ++j) sum += wsp[n * per + j];
        if (std::abs(sum - 1.0) > 1e-5)
          err << "stage " << s << " weight sum " << sum << at;
      }
    }
    Var<float> out = m.head(x);
    if (out.dim(0) != 1 || out.dim(1) != 1 || out.dim(2) != hw || out.dim(3) != hw)
      err << "output shape " << shape_str(out.shape()) << at;
    for (long j = 0; j < out.value().numel(); ++j)
      if (!(out.value()[j] > 0.0f && out.value()[j] < 1.0f)) {
        err << "output outside (0,1)" << at;
        break;
      }

    // f1..f3 never depend on the prompt: swapping the bundle moves nothing.
    TokenSequence sky = tokenize(build_template(0, "sky").text, vocab, mc.context_len);
    TokenSequence ocean = tokenize(build_template(0, "ocean").text, vocab, mc.context_len);
    FeaturePyramid<float> pa = m.encode(image, make_bundle(m, pre[0], pre[1], pre[2], sky));
    FeaturePyramid<float> pb = m.encode(image, make_bundle(m, pre[0], pre[1], pre[2], ocean));
    for (int i = 0; i < 3; ++i)
      if (!bits_equal(pa.f[static_cast<std::size_t>(i)].value(),
                      pb.f[static_cast<std::size_t>(i)].value()))
        err << "f" << i + 1 << " moved with the prompt" << at;
  }
  return err.str();
}

// ---------------------------------------------------------------------------
// 3. Freezing/isolation: byte-level diffs across one optimizer step, and the
//    contrastive loss reaches no encoder parameter.

std::string c3_freezing() {
  std::ostringstream err;
  nlohmann::json cfg = default_config();
  cfg["seed"] = 27;
  Rng rng(37);
  Tensor<float> images = random_tensor<float>(Shape{2, 1, 64, 64}, rng, 0.0, 1.0);

  auto snapshot = [](const ParamStore<float>& p) {
    std::map<std::string, Tensor<float>> out;
    for (const auto& e : p.entries()) out.emplace(e.name, e.var.value());
    return out;
  };
  auto diff_groups = [&](Trainer& t, const std::map<std::string, Tensor<float>>& before) {
    std::map<std::string, std::pair<bool, bool>> gd;  // group -> (any moved, all moved)
    for (const auto& e : t.params().entries()) {
      const bool moved = !bits_equal(e.var.value(), before.at(e.name));
      auto it = gd.emplace(e.group, std::make_pair(false, true)).first;
      it->second.first |= moved;
      it->second.second &= moved;
    }
    return gd;
  };

  {
    Trainer pre(cfg, Phase::pretrain);
    auto before = snapshot(pre.params());
    pre.pretrain_step(images);
    auto gd = diff_groups(pre, before);
    if (gd.at("text").first) err << "text moved during pretraining; ";
    for (const char* g : {"encoder", "inversion", "recon", "proj"})
      if (!gd.at(g).first) err << g << " never moved during pretraining; ";
  }
  {
    Tensor<float> masks(Shape{2, 1, 64, 64});
    masks.at4(0, 0, 10, 10) = 1.0f;
    masks.at4(1, 0, 40, 40) = 1.0f;
    Trainer det(cfg, Phase::train);
    auto before = snapshot(det.params());
    det.train_step(images, masks, 0, 10);
    auto gd = diff_groups(det, before);
    if (gd.at("text").first) err << "text moved during training; ";
    if (gd.at("inversion").first) err << "inversion moved during training; ";
    for (const char* g : {"encoder", "decoder"})
      if (!gd.at(g).first) err << g << " never moved during training; ";
  }
  {
    // Full pretraining graph in double precision: after backward through the
    // contrastive loss, every encoder gradient buffer is exactly zero.
    Model<double> m(tiny_config(), 7, ModelParts::all());
    Vocabulary vocab = Vocabulary::builtin();
    TokenSequence toks = tokenize(build_template(2).text, vocab, 77);
    Rng drng(41);
    Var<double> img = Var<double>::leaf(random_tensor<double>(Shape{2, 1, 32, 32}, drng, 0.0, 1.0), true);
    m.params.zero_grad();
    auto pre = m.pre_encode(img);
    TextBundle<double> bundle = make_bundle(m, pre[0], pre[1], pre[2], toks);
    auto re = m.re_encode(pre[2], bundle.eot);
    bool f5_alive = false;
    for (long i = 0; i < re[1].value().numel(); ++i) f5_alive |= re[1].value()[i] != 0.0;
    if (!f5_alive) err << "f5 died before the isolation check; ";
    contrastive(m, re[1], bundle.eot, 0.07).backward();

    bool inv_touched = false, proj_touched = false;
    for (const auto& e : m.params.entries()) {
      const Tensor<double>& g = e.var.grad();
      bool nonzero = false;
      for (long i = 0; i < g.numel(); ++i) nonzero |= g[i] != 0.0;
      if (e.group == "encoder" && nonzero)
        err << "contrastive gradient reached " << e.name << "; ";
      if (e.group == "inversion") inv_touched |= nonzero;
      if (e.group == "proj") proj_touched |= nonzero;
    }
    const Tensor<double>& gi = img.grad();
    for (long i = 0; i < gi.numel(); ++i)
      if (gi[i] != 0.0) {
        err << "contrastive gradient reached the input image; ";
        break;
      }
    if (!inv_touched) err << "contrastive gradient missed the inversion net; ";
    if (!proj_touched) err << "contrastive gradient missed the projection head; ";
  }
  return err.str();
}

// ---------------------------------------------------------------------------
// 4. Overfit check on the synthetic corpus, plus the warm-start comparison.

std::string c4_overfit(std::string& note) {
  std::ostringstream err;
  TempDir data("acc4_data"), runs("acc4_runs");
  synth_generate(data.str(), 8, 64, 7);

  {
    nlohmann::json cfg = run_config(data.str(), runs.file("cold300"), 7, 300, 1e-3);
    Trainer t(cfg, Phase::train);
    t.fit();
    EvalReport rep = t.evaluate_pairs(load_dataset(data.str(), "train"));
    char buf[96];
    std::snprintf(buf, sizeof(buf), "train IoU %.4f Pd %.4f", rep.iou, rep.pd);
    note = buf;
    if (!(rep.iou >= 0.85)) err << "IoU " << rep.iou << " < 0.85; ";
    if (!(rep.pd == 1.0)) err << "Pd " << rep.pd << " != 1.0; ";
  }
  {
    std::vector<double> warm, cold;
    for (std::uint64_t s : {2ULL, 3ULL, 7ULL}) {
      const std::string tag = std::to_string(s);
      nlohmann::json pre = run_config(data.str(), runs.file("pre" + tag), s, 100, 1e-4);
      Trainer(pre, Phase::pretrain).fit();

      nlohmann::json wcfg = run_config(data.str(), runs.file("warm" + tag), s, 50, 1e-3);
      wcfg["train"]["init_checkpoint"] = runs.file("pre" + tag) + "/final.ckpt";
      warm.push_back(Trainer(wcfg, Phase::train).fit().back());

      nlohmann::json ccfg = run_config(data.str(), runs.file("cold" + tag), s, 50, 1e-3);
      cold.push_back(Trainer(ccfg, Phase::train).fit().back());
    }
    auto median3 = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      return v[1];
    };
    const double wm = median3(warm), cm = median3(cold);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "; warm@50 %.6f <= cold@50 %.6f", wm, cm);
    note += buf;
    if (!(wm <= cm)) err << "warm median " << wm << " > cold median " << cm << "; ";
  }
  return err.str();
}

// ---------------------------------------------------------------------------
// 5. Metrics against brute-force oracles.

struct RefComp {
  std::vector<long> pixels;
  double cy = 0, cx = 0;
};

std::vector<RefComp> ref_components(const Tensor<float>& mask, int conn) {
  const long h = mask.dim(0), w = mask.dim(1);
  std::vector<int> seen(static_cast<std::size_t>(h * w), 0);
  std::vector<RefComp> comps;
  for (long s = 0; s < h * w; ++s) {
    if (mask[s] == 0.0f || seen[s]) continue;
    RefComp c;
    std::deque<long> q{s};
    seen[s] = 1;
    while (!q.empty()) {
      const long p = q.front();
      q.pop_front();
      c.pixels.push_back(p);
      const long y = p / w, x = p % w;
      const long dys[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
      const long dxs[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
      for (int k = 0; k < 8; ++k) {
        if (conn == 4 && dys[k] != 0 && dxs[k] != 0) continue;
        const long ny = y + dys[k], nx = x + dxs[k];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const long np = ny * w + nx;
        if (mask[np] != 0.0f && !seen[np]) {
          seen[np] = 1;
          q.push_back(np);
        }
      }
    }
    for (long p : c.pixels) {
      c.cy += static_cast<double>(p / w);
      c.cx += static_cast<double>(p % w);
    }
    c.cy /= static_cast<double>(c.pixels.size());
    c.cx /= static_cast<double>(c.pixels.size());
    comps.push_back(std::move(c));
  }
  return comps;
}

ScoreCounts ref_score(const Tensor<float>& pred, const Tensor<float>& gt, double radius,
                      int conn) {
  auto pc = ref_components(pred, conn);
  auto gc = ref_components(gt, conn);
  ScoreCounts c;
  c.total_px = pred.numel();
  c.targets_total = static_cast<long long>(gc.size());
  for (long i = 0; i < pred.numel(); ++i) {
    if (pred[i] != 0.0f && gt[i] != 0.0f) ++c.tp_px;
    if (pred[i] == 0.0f && gt[i] != 0.0f) ++c.fn_px;
  }
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t g = 0; g < gc.size(); ++g)
    for (std::size_t p = 0; p < pc.size(); ++p) {
      const double d = std::hypot(gc[g].cy - pc[p].cy, gc[g].cx - pc[p].cx);
      if (d <= radius) cand.emplace_back(d, g, p);
    }
  std::sort(cand.begin(), cand.end());
  std::vector<bool> gu(gc.size(), false), pu(pc.size(), false);
  for (const auto& [d, g, p] : cand) {
    (void)d;
    if (gu[g] || pu[p]) continue;
    gu[g] = pu[p] = true;
    ++c.targets_hit;
  }
  for (std::size_t p = 0; p < pc.size(); ++p)
    if (!pu[p]) c.fp_px += static_cast<long long>(pc[p].pixels.size());
  return c;
}

bool same_counts(const ScoreCounts& a, const ScoreCounts& b) {
  return a.tp_px == b.tp_px && a.fp_px == b.fp_px && a.fn_px == b.fn_px &&
         a.targets_total == b.targets_total && a.targets_hit == b.targets_hit &&
         a.total_px == b.total_px;
}

std::string c5_metrics() {
  std::ostringstream err;
  auto mask3x3 = [](unsigned bits) {
    Tensor<float> m(Shape{3, 3});
    for (long i = 0; i < 9; ++i) m[i] = (bits >> i) & 1u ? 1.0f : 0.0f;
    return m;
  };

  for (int conn : {4, 8}) {
    for (unsigned bits = 0; bits < 512 && err.str().size() < 200; ++bits) {
      Tensor<float> m = mask3x3(bits);
      ComponentSet got = connected_components(m, conn);
      auto want = ref_components(m, conn);
      std::vector<std::tuple<long, double, double>> gk, wk;
      for (const auto& c : got.comps) gk.emplace_back(c.area, c.cy, c.cx);
      for (const auto& c : want)
        wk.emplace_back(static_cast<long>(c.pixels.size()), c.cy, c.cx);
      std::sort(gk.begin(), gk.end());
      std::sort(wk.begin(), wk.end());
      if (gk != wk) err << "labeling differs on mask " << bits << " conn " << conn << "; ";
    }
  }

  const std::vector<Tensor<float>> gts = {
      Tensor<float>(Shape{3, 3}),
      Tensor<float>(Shape{3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0}),
      Tensor<float>(Shape{3, 3}, {1, 0, 0, 0, 0, 0, 0, 0, 1}),
      Tensor<float>(Shape{3, 3}, {1, 1, 1, 1, 1, 1, 1, 1, 1}),
      Tensor<float>(Shape{3, 3}, {0, 1, 0, 0, 0, 0, 0, 1, 0})};
  for (int conn : {4, 8})
    for (unsigned bits = 0; bits < 512 && err.str().size() < 200; ++bits)
      for (const auto& gt : gts) {
        Tensor<float> pred = mask3x3(bits);
        if (!same_counts(score_image(pred, gt, 1.5, conn), ref_score(pred, gt, 1.5, conn)))
          err << "scores differ on mask " << bits << " conn " << conn << "; ";
      }

  Rng rng(23);
  for (int it = 0; it < 200 && err.str().size() < 200; ++it) {
    const double dp = 0.02 + 0.28 * rng.uniform(0.0, 1.0);
    const double dg = 0.02 + 0.28 * rng.uniform(0.0, 1.0);
    Tensor<float> pred(Shape{16, 16}), gt(Shape{16, 16});
    for (long i = 0; i < 256; ++i) {
      pred[i] = rng.uniform(0.0, 1.0) < dp ? 1.0f : 0.0f;
      gt[i] = rng.uniform(0.0, 1.0) < dg ? 1.0f : 0.0f;
    }
    const double radius = 1.0 + 4.0 * rng.uniform(0.0, 1.0);
    const int conn = it % 2 == 0 ? 8 : 4;
    const ScoreCounts a = score_image(pred, gt, radius, conn);
    const ScoreCounts b = ref_score(pred, gt, radius, conn);
    if (!same_counts(a, b)) err << "random pair " << it << " differs; ";
    const EvalReport ra = evaluate_dataset({pred}, {gt}, 0.5, radius, conn);
    const EvalReport rb = report_from(b);
    if (ra.iou != rb.iou || ra.pd != rb.pd || ra.fa != rb.fa)
      err << "report for random pair " << it << " differs; ";
  }

  for (unsigned bits = 0; bits < 512 && err.str().size() < 200; ++bits) {
    Tensor<float> m = mask3x3(bits);
    const EvalReport r = evaluate_dataset({m}, {m});
    if (r.iou != 1.0 || r.pd != 1.0 || r.fa != 0.0)
      err << "pred==gt not (1,1,0) on mask " << bits << "; ";
  }
  return err.str();
}

// ---------------------------------------------------------------------------
// 6. Analytic loss values in double precision.

std::string c6_analytic() {
  std::ostringstream err;
  {
    Tensor<double> half(Shape{2, 3});
    half.fill(0.5);
    Tensor<double> tgt(Shape{2, 3}, {1, 0, 1, 1, 0, 0});
    const double v = bce(Var<double>::constant(half), Var<double>::constant(tgt)).value()[0];
    if (std::abs(v - std::log(2.0)) > 1e-9)
      err << "bce(0.5) = " << v << " vs ln 2 = " << std::log(2.0) << "; ";
  }
  {
    Tensor<double> pred(Shape{1, 4}, {1, 1, 0, 0});
    Tensor<double> tgt(Shape{1, 4}, {1, 0, 0, 0});
    const double v =
        soft_iou(Var<double>::constant(pred), Var<double>::constant(tgt), 0.0).value()[0];
    if (std::abs(v - 0.5) > 1e-9) err << "soft_iou worked case = " << v << " vs 0.5; ";
  }
  {
    const double v = poly_lr(50, 100, 1e-3, 1.2);
    const double want = 1e-3 * std::pow(0.5, 1.2);
    if (std::abs(v - want) > 1e-12) err << "poly_lr(mid) = " << v << " vs " << want << "; ";
  }
  return err.str();
}

// ---------------------------------------------------------------------------
// 7. Persistence: checkpoint identity, bit-exact resume, deterministic data.

std::string c7_persistence() {
  std::ostringstream err;
  {
    TempDir tmp("acc7_ckpt");
    nlohmann::json cfg = default_config();
    cfg["seed"] = 21;
    Trainer t(cfg, Phase::pretrain);
    Rng rng(33);
    t.pretrain_step(random_tensor<float>(Shape{2, 1, 64, 64}, rng, 0.0, 1.0));
    t.save(tmp.file("a.ckpt"), 1, 1);
    Checkpoint ck = load_checkpoint(tmp.file("a.ckpt"));
    for (const auto& e : t.params().entries()) {
      const Tensor<float>* stored = ck.find(e.name);
      if (!stored || !bits_equal(*stored, e.var.value())) {
        err << "round trip altered " << e.name << "; ";
        break;
      }
    }
    for (const auto& e : t.params().entries()) {
      if (!e.trainable) continue;
      const Tensor<float>* sm = ck.find("opt.m." + e.name);
      const Tensor<float>* sv = ck.find("opt.v." + e.name);
      if (!sm || !sv || !bits_equal(*sm, t.optimizer().peek_m(e.name)) ||
          !bits_equal(*sv, t.optimizer().peek_v(e.name))) {
        err << "round trip altered optimizer state of " << e.name << "; ";
        break;
      }
    }
    // Load into a differently seeded twin and write again: every tensor
    // comes back bit-identical (the embedded config legitimately differs).
    nlohmann::json cfg2 = cfg;
    cfg2["seed"] = 22;
    Trainer u(cfg2, Phase::pretrain);
    u.restore(ck, true);
    u.save(tmp.file("b.ckpt"), 1, 1);
    Checkpoint ck2 = load_checkpoint(tmp.file("b.ckpt"));
    if (ck2.tensors.size() != ck.tensors.size()) {
      err << "restored twin serialized a different tensor set; ";
    } else {
      for (std::size_t i = 0; i < ck.tensors.size(); ++i)
        if (ck2.tensors[i].first != ck.tensors[i].first ||
            !bits_equal(ck2.tensors[i].second, ck.tensors[i].second)) {
          err << "restored twin altered " << ck.tensors[i].first << "; ";
          break;
        }
    }
  }
  {
    TempDir data("acc7_data"), runa("acc7_a"), runb("acc7_b");
    synth_generate(data.str(), 5, 64, 5);
    nlohmann::json ca = run_config(data.str(), runa.file("out"), 43, 4, 1e-3);
    ca["train"]["batch"] = 2;
    ca["train"]["save_every"] = 2;
    std::vector<double> full = Trainer(ca, Phase::train).fit();

    nlohmann::json cb = run_config(data.str(), runb.file("out"), 43, 4, 1e-3);
    cb["train"]["batch"] = 2;
    cb["train"]["save_every"] = 2;
    cb["train"]["resume"] = runa.file("out") + "/epoch_0002.ckpt";
    std::vector<double> tail = Trainer(cb, Phase::train).fit();
    if (full.size() != 8 || tail.size() != 4) {
      err << "resume step counts off (" << full.size() << "/" << tail.size() << "); ";
    } else {
      for (std::size_t i = 0; i < 4; ++i)
        if (tail[i] != full[4 + i]) {
          err << "resumed loss " << i << " diverged: " << tail[i] << " vs " << full[4 + i]
              << "; ";
          break;
        }
    }
  }
  {
    TempDir d1("acc7_g1"), d2("acc7_g2"), d3("acc7_g3");
    synth_generate(d1.str(), 6, 64, 9);
    synth_generate(d2.str(), 6, 64, 9);
    synth_generate(d3.str(), 6, 64, 10);
    bool any_diff_seed_differs = false;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(d1.path())) {
      if (!entry.is_regular_file()) continue;
      const std::string rel =
          std::filesystem::relative(entry.path(), d1.path()).string();
      if (slurp(entry.path().string()) != slurp((d2.path() / rel).string()))
        err << "gen-data not deterministic: " << rel << "; ";
      if (std::filesystem::exists(d3.path() / rel) &&
          slurp(entry.path().string()) != slurp((d3.path() / rel).string()))
        any_diff_seed_differs = true;
    }
    if (!any_diff_seed_differs) err << "different seeds produced identical data; ";
  }
  return err.str();
}

// ---------------------------------------------------------------------------
// 8. Prompt variants: exact template text, and every slot count trains.

std::string c8_variants() {
  std::ostringstream err;
  const std::vector<std::string> want = {
      "A photo of an infrared image, with targets in the background.",
      "A photo of an infrared image, with <s1> in the background.",
      "A photo of an infrared image, with <s1> in <s2> background.",
      "A photo of an infrared image, with <s1> <s2> in <s3> background.",
      "A photo of an infrared image, with <s1> <s2> in <s3> <s4> background."};
  for (int k = 0; k <= 4; ++k) {
    const std::string got = build_template(k).text;
    if (got != want[static_cast<std::size_t>(k)])
      err << "template " << k << " is '" << got << "'; ";
  }

  TempDir data("acc8_data"), runs("acc8_runs");
  synth_generate(data.str(), 8, 64, 7);
  for (int k = 0; k <= 4; ++k) {
    try {
      nlohmann::json cfg =
          run_config(data.str(), runs.file("v" + std::to_string(k)), 7, 20, 1e-3);
      cfg["model"]["n_tokens"] = k;
      std::vector<double> losses = Trainer(cfg, Phase::train).fit();
      if (losses.size() != 20) err << "variant " << k << " ran " << losses.size() << " steps; ";
      for (double v : losses)
        if (!std::isfinite(v)) {
          err << "variant " << k << " produced a non-finite loss; ";
          break;
        }
    } catch (const std::exception& e) {
      err << "variant " << k << " threw: " << e.what() << "; ";
    }
  }
  return err.str();
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* label;
    double budget_secs;  // 0 = no stated budget
    std::function<std::string(std::string&)> run;
  };
  auto plain = [](std::string (*fn)()) {
    return [fn](std::string&) { return fn(); };
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", 120, plain(c1_gradients)},
      {2, "shape/normalization suite", 60, plain(c2_shapes)},
      {3, "freezing/isolation suite", 60, plain(c3_freezing)},
      {4, "overfit check", 600, [](std::string& n) { return c4_overfit(n); }},
      {5, "metrics oracle", 0, plain(c5_metrics)},
      {6, "analytic loss values", 0, plain(c6_analytic)},
      {7, "persistence", 0, plain(c7_persistence)},
      {8, "prompt variants", 0, plain(c8_variants)},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const double t0 = now_secs();
    std::string note;
    std::string err;
    try {
      err = c.run(note);
    } catch (const std::exception& e) {
      err = std::string("exception: ") + e.what();
    }
    const double dt = now_secs() - t0;
    if (c.budget_secs > 0 && dt > c.budget_secs) {
      std::ostringstream os;
      os << "exceeded " << c.budget_secs << "s budget; " << err;
      err = os.str();
    }
    std::printf("[%s] %d. %s%s%s (%.1fs)%s%s\n", err.empty() ? "PASS" : "FAIL", c.id,
                c.label, note.empty() ? "" : ": ", note.c_str(), dt,
                err.empty() ? "" : " -- ", err.c_str());
    std::fflush(stdout);
    failures += err.empty() ? 0 : 1;
  }
  if (failures) std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
