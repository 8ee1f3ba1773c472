#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dgsp/ops.hpp"
#include "dgsp/params.hpp"

// DGSPNet: a text-prompted encoder/decoder for infrared small-target
// segmentation. The encoder is five blocks at strides {1,2,4,8,16}; the last
// two blocks mix in a text vector through channel attention. The decoder
// opens with a visual-query/text-key cross-attention bridge on the coarsest
// map, then climbs back to full resolution through four text-gated spatial
// attention stages fed by encoder skips.

namespace dgsp {

struct ModelConfig {
  long in_channels = 1;
  std::vector<long> widths = {16, 32, 64, 128, 256};  // f1..f5 channels
  long dec_width = 32;    // decoder feature width
  long latent_dim = 32;   // shared visual/text latent for spatial attention
  long text_dim = 64;     // text embedding width d_t
  long inv_channels = 32; // fused-pyramid width feeding the inversion net
  long inv_heads = 4;
  long bridge_heads = 4;
  long text_heads = 4;
  long text_layers = 2;
  long context_len = 77;
  long n_tokens = 2;      // learnable prompt slots (0..4)
  long vocab_size = 0;    // set from the active vocabulary

  void validate() const {
    if (widths.size() != 5) throw ConfigError("model.widths must list 5 channel counts");
    for (long w : widths)
      if (w < 1) throw ConfigError("model.widths entries must be positive");
    if (dec_width < 1 || latent_dim < 1 || text_dim < 1 || inv_channels < 1)
      throw ConfigError("model widths must be positive");
    if (text_dim % text_heads != 0) throw ConfigError("text_dim not divisible by text_heads");
    if (dec_width % bridge_heads != 0)
      throw ConfigError("dec_width not divisible by bridge_heads");
    if (inv_channels % inv_heads != 0)
      throw ConfigError("inv_channels not divisible by inv_heads");
    if (n_tokens < 0 || n_tokens > 4) throw ConfigError("n_tokens must be in 0..4");
    if (context_len < 2) throw ConfigError("context_len too small");
    if (vocab_size < 2) throw ConfigError("vocab_size unset");
  }
};

template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, 5> f;  // strides 1,2,4,8,16
};

// Output of the frozen text encoder. seq rows are per-token embeddings, eot
// is the row at the end-of-text position (the prompt summary vector).
template <typename T>
struct TextBundle {
  Var<T> seq;  // (N, l, d_t)
  Var<T> eot;  // (N, d_t)
};

template <typename T>
struct SemanticTokens {
  Var<T> embeddings;  // (N, n_t, d_t)
  long n_t = 0;
};

// Which parameter sections a model instance carries. Pretraining swaps the
// detection decoder for a reconstruction decoder plus a contrastive
// projection head; formal training discards those and builds the decoder.
struct ModelParts {
  bool decoder = true;
  bool recon = true;
  static ModelParts pretrain() { return {false, true}; }
  static ModelParts train() { return {true, false}; }
  static ModelParts all() { return {true, true}; }
};

template <typename T>
class Model {
 public:
  ModelConfig cfg;
  ParamStore<T> params;

  Model(const ModelConfig& config, std::uint64_t seed, ModelParts parts = ModelParts::all())
      : cfg(config), params(seed), parts_(parts) {
    cfg.validate();
    register_params();
  }

  bool has_decoder() const { return parts_.decoder; }
  bool has_recon() const { return parts_.recon; }

  // One encoder block: optional 2x2 max-pool, two 3x3 conv+ReLU, then a
  // channel gate driven by pooled statistics. Used for f1..f3 directly; f4/f5
  // reuse the body but swap the gate for text-conditioned channel attention.
  Var<T> pre_block(int i, const Var<T>& x, bool downsample, Tensor<T>* gate_out = nullptr) const {
    Var<T> f_mid = block_body(i, x, downsample);
    const std::string p = "enc.b" + std::to_string(i);
    Var<T> pooled = add(global_max_pool(f_mid), global_avg_pool(f_mid));
    Var<T> gate = sigmoid(linear(pooled, params.get(p + ".gate.w"), params.get(p + ".gate.b")));
    if (gate_out) *gate_out = gate.value();
    return scale_channels(f_mid, gate);
  }

  // Text-guided channel attention: channel gate whose logits fuse the pooled
  // visual descriptor with an MLP of the text vector.
  Var<T> tgca(int i, const Var<T>& f_mid, const Var<T>& t_vec, Tensor<T>* w_out = nullptr) const {
    const std::string p = "enc.b" + std::to_string(i) + ".tgca";
    Var<T> tv = linear(relu(linear(t_vec, params.get(p + ".mlp1.w"), params.get(p + ".mlp1.b"))),
                       params.get(p + ".mlp2.w"), params.get(p + ".mlp2.b"));
    Var<T> mix = concat<T>({global_avg_pool(f_mid), tv}, 1);
    Var<T> w_ch =
        sigmoid(linear(mix, params.get(p + ".fuse.w"), params.get(p + ".fuse.b")));
    if (w_out) *w_out = w_ch.value();
    return add(f_mid, scale_channels(f_mid, w_ch));
  }

  Var<T> re_block(int i, const Var<T>& x, const Var<T>& t_vec, Tensor<T>* w_out = nullptr) const {
    return tgca(i, block_body(i, x, true), t_vec, w_out);
  }

  // f1..f3: the text-independent half of the encoder.
  std::array<Var<T>, 3> pre_encode(const Var<T>& image,
                                   std::array<Tensor<T>, 3>* gates = nullptr) const {
    check_input(image);
    std::array<Var<T>, 3> out;
    Var<T> x = image;
    for (int i = 1; i <= 3; ++i) {
      x = pre_block(i, x, i > 1, gates ? &(*gates)[i - 1] : nullptr);
      out[i - 1] = x;
    }
    return out;
  }

  std::array<Var<T>, 2> re_encode(const Var<T>& f3, const Var<T>& t_vec) const {
    Var<T> f4 = re_block(4, f3, t_vec);
    Var<T> f5 = re_block(5, f4, t_vec);
    return {f4, f5};
  }

  FeaturePyramid<T> encode(const Var<T>& image, const TextBundle<T>& text) const {
    auto pre = pre_encode(image);
    auto re = re_encode(pre[2], text.eot);
    return FeaturePyramid<T>{{pre[0], pre[1], pre[2], re[0], re[1]}};
  }

  // Cross-attention bridge: flattened f5 positions query the l text
  // embeddings; residual + layer norm at decoder width.
  Var<T> bridge_attend(const Var<T>& f5, const Var<T>& text_seq,
                       Tensor<T>* attn_out = nullptr) const {
    require_decoder();
    if (text_seq.dim(1) == 0) throw PromptError("empty prompt: bridge needs l >= 1 text tokens");
    const long N = f5.dim(0), h = f5.dim(2), w = f5.dim(3);
    const long d = cfg.dec_width;
    Var<T> x = linear_tokens(flatten_spatial(f5), "bridge.in");          // (N, h*w, d)
    Var<T> q = linear_tokens(x, "bridge.q");
    Var<T> k = linear_tokens(text_seq, "bridge.k");
    Var<T> v = linear_tokens(text_seq, "bridge.v");
    Var<T> ctx = mha_core(q, k, v, cfg.bridge_heads, false, attn_out);
    Var<T> y = add(x, linear_tokens(ctx, "bridge.out"));
    y = layer_norm(reshape(y, Shape{N * h * w, d}), params.get("bridge.ln.g"),
                   params.get("bridge.ln.b"));
    return unflatten_tokens(reshape(y, Shape{N, h * w, d}), h, w);
  }

  // Text-guided spatial attention stage: upsample, fuse the skip, score every
  // location against the projected text vector, softmax over the grid, and
  // apply the weight map as a residual gate.
  Var<T> tgsa_stage(int s, const Var<T>& d_in, const Var<T>& f_skip, const Var<T>& eot,
                    Tensor<T>* w_out = nullptr) const {
    require_decoder();
    if (d_in.dim(2) * 2 != f_skip.dim(2) || d_in.dim(3) * 2 != f_skip.dim(3))
      throw ShapeError("decoder stage " + std::to_string(s) + ": input " +
                       shape_str(d_in.shape()) + " is not half the skip resolution " +
                       shape_str(f_skip.shape()));
    const std::string p = "dec.s" + std::to_string(s);
    Var<T> f_fused = add(upsample_bilinear2x(d_in),
                         conv2d(f_skip, params.get(p + ".skip.w"), params.get(p + ".skip.b")));
    Var<T> vis = conv2d(relu(conv2d(f_fused, params.get(p + ".vis1.w"), params.get(p + ".vis1.b"))),
                        params.get(p + ".vis2.w"), params.get(p + ".vis2.b"));
    Var<T> txt = linear(relu(linear(eot, params.get(p + ".txt1.w"), params.get(p + ".txt1.b"))),
                        params.get(p + ".txt2.w"), params.get(p + ".txt2.b"));
    Var<T> score =
        mul_scalar(dot_channels(vis, txt), T(1) / std::sqrt(static_cast<T>(cfg.latent_dim)));
    Var<T> w_sp = softmax_spatial(score);
    if (w_out) *w_out = w_sp.value();
    return conv2d(add(f_fused, scale_spatial(f_fused, w_sp)), params.get(p + ".conv.w"),
                  params.get(p + ".conv.b"), 1, 1);
  }

  Var<T> head(const Var<T>& x) const {
    require_decoder();
    Var<T> y = relu(conv2d(x, params.get("head.conv1.w"), params.get("head.conv1.b"), 1, 1));
    return sigmoid(conv2d(y, params.get("head.conv2.w"), params.get("head.conv2.b")));
  }

  Var<T> decode(const FeaturePyramid<T>& feats, const TextBundle<T>& text,
                Tensor<T>* bridge_attn = nullptr) const {
    Var<T> x = bridge_attend(feats.f[4], text.seq, bridge_attn);
    for (int s = 1; s <= 4; ++s) x = tgsa_stage(s, x, feats.f[4 - s], text.eot);
    return head(x);
  }

  Var<T> forward(const Var<T>& image, const TextBundle<T>& text) const {
    return decode(encode(image, text), text);
  }

  // Mirrored transposed-conv decoder used only during pretraining: f5 back to
  // a 1-channel map at input resolution.
  Var<T> recon_decode(const Var<T>& f5) const {
    if (!parts_.recon) throw ConfigError("model built without the reconstruction decoder");
    Var<T> x = f5;
    for (int j = 1; j <= 4; ++j) {
      const std::string p = "recon.up" + std::to_string(j);
      x = relu(conv_transpose2d_2x(x, params.get(p + ".w"), params.get(p + ".b")));
    }
    return conv2d(x, params.get("recon.out.w"), params.get("recon.out.b"));
  }

  // Image embedding for the contrastive objective. The encoder sees no
  // gradient through this path by construction.
  Var<T> image_embedding(const Var<T>& f5) const {
    if (!parts_.recon) throw ConfigError("model built without the projection head");
    return linear(global_avg_pool(stop_grad(f5)), params.get("contra.proj.w"),
                  params.get("contra.proj.b"));
  }

  // Named linear layer applied to the last axis of a rank-3 tensor.
  Var<T> linear_tokens(const Var<T>& x, const std::string& name) const {
    const long N = x.dim(0), L = x.dim(1), Din = x.dim(2);
    const Var<T>& w = params.get(name + ".w");
    Var<T> y = linear(reshape(x, Shape{N * L, Din}), w, params.get(name + ".b"));
    return reshape(y, Shape{N, L, w.dim(0)});
  }

  Var<T> norm_tokens(const Var<T>& x, const std::string& name) const {
    return layer_norm(x, params.get(name + ".g"), params.get(name + ".b"));
  }

 private:
  ModelParts parts_;

  void check_input(const Var<T>& image) const {
    if (image.value().ndim() != 4 || image.dim(1) != cfg.in_channels)
      throw ShapeError("input must be (N," + std::to_string(cfg.in_channels) + ",H,W), got " +
                       shape_str(image.shape()));
    if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0)
      throw ShapeError("input shape " + shape_str(image.shape()) +
                       ": H and W must be multiples of 16");
  }

  void require_decoder() const {
    if (!parts_.decoder) throw ConfigError("model built without the detection decoder");
  }

  Var<T> block_body(int i, const Var<T>& x, bool downsample) const {
    const std::string p = "enc.b" + std::to_string(i);
    Var<T> y = downsample ? maxpool2x2(x) : x;
    y = relu(conv2d(y, params.get(p + ".conv1.w"), params.get(p + ".conv1.b"), 1, 1));
    return relu(conv2d(y, params.get(p + ".conv2.w"), params.get(p + ".conv2.b"), 1, 1));
  }

  void add_linear(const std::string& name, long out, long in, const std::string& group) {
    params.add(name + ".w", Shape{out, in}, group);
    params.add(name + ".b", Shape{out}, group, Init::Zeros);
  }

  void add_conv(const std::string& name, long co, long ci, long k, const std::string& group) {
    params.add(name + ".w", Shape{co, ci, k, k}, group);
    params.add(name + ".b", Shape{co}, group, Init::Zeros);
  }

  void add_ln(const std::string& name, long d, const std::string& group) {
    params.add(name + ".g", Shape{d}, group, Init::Ones);
    params.add(name + ".b", Shape{d}, group, Init::Zeros);
  }

  void register_params() {
    const auto& cw = cfg.widths;
    const long d = cfg.dec_width, dc = cfg.latent_dim, dt = cfg.text_dim, c = cfg.inv_channels;
    for (int i = 1; i <= 5; ++i) {
      const std::string p = "enc.b" + std::to_string(i);
      const long ci = (i == 1) ? cfg.in_channels : cw[i - 2];
      const long co = cw[i - 1];
      add_conv(p + ".conv1", co, ci, 3, "encoder");
      add_conv(p + ".conv2", co, co, 3, "encoder");
      if (i <= 3) {
        add_linear(p + ".gate", co, co, "encoder");
      } else {
        add_linear(p + ".tgca.mlp1", co, dt, "encoder");
        add_linear(p + ".tgca.mlp2", co, co, "encoder");
        add_linear(p + ".tgca.fuse", co, 2 * co, "encoder");
      }
    }
    if (parts_.decoder) {
      add_linear("bridge.in", d, cw[4], "decoder");
      add_linear("bridge.q", d, d, "decoder");
      add_linear("bridge.k", d, dt, "decoder");
      add_linear("bridge.v", d, dt, "decoder");
      add_linear("bridge.out", d, d, "decoder");
      add_ln("bridge.ln", d, "decoder");
      for (int s = 1; s <= 4; ++s) {
        const std::string p = "dec.s" + std::to_string(s);
        add_conv(p + ".skip", d, cw[4 - s], 1, "decoder");
        add_conv(p + ".vis1", dc, d, 1, "decoder");
        add_conv(p + ".vis2", dc, dc, 1, "decoder");
        add_linear(p + ".txt1", dc, dt, "decoder");
        add_linear(p + ".txt2", dc, dc, "decoder");
        add_conv(p + ".conv", d, d, 3, "decoder");
      }
      add_conv("head.conv1", d, d, 3, "decoder");
      add_conv("head.conv2", 1, d, 1, "decoder");
      // Rare-positive prior: start the output probability low so the
      // background class does not swamp the first optimizer steps.
      params.get("head.conv2.b").value().fill(T(-2));
    }
    for (int j = 1; j <= 3; ++j) {
      params.add("inv.dw" + std::to_string(j) + ".w", Shape{cw[j - 1], 3, 3}, "inversion");
      params.add("inv.dw" + std::to_string(j) + ".b", Shape{cw[j - 1]}, "inversion", Init::Zeros);
    }
    add_conv("inv.fuse", c, cw[0] + cw[1] + cw[2], 1, "inversion");
    params.add("inv.tokens", Shape{std::max<long>(cfg.n_tokens, 1), c}, "inversion");
    add_linear("inv.q", c, c, "inversion");
    add_linear("inv.k", c, c, "inversion");
    add_linear("inv.v", c, c, "inversion");
    add_linear("inv.out", c, c, "inversion");
    add_linear("inv.mlp1", c, c, "inversion");
    add_linear("inv.mlp2", dt, c, "inversion");
    params.add("txt.tok_emb", Shape{cfg.vocab_size, dt}, "text");
    params.add("txt.pos_emb", Shape{cfg.context_len, dt}, "text");
    for (int l = 0; l < cfg.text_layers; ++l) {
      const std::string p = "txt.l" + std::to_string(l);
      add_ln(p + ".ln1", dt, "text");
      add_linear(p + ".attn.q", dt, dt, "text");
      add_linear(p + ".attn.k", dt, dt, "text");
      add_linear(p + ".attn.v", dt, dt, "text");
      add_linear(p + ".attn.out", dt, dt, "text");
      add_ln(p + ".ln2", dt, "text");
      add_linear(p + ".mlp.fc1", 4 * dt, dt, "text");
      add_linear(p + ".mlp.fc2", dt, 4 * dt, "text");
    }
    add_ln("txt.ln_f", dt, "text");
    if (parts_.recon) {
      long ch = cw[4];
      for (int j = 1; j <= 4; ++j) {
        const long co = cw[4 - j];
        params.add("recon.up" + std::to_string(j) + ".w", Shape{ch, co, 2, 2}, "recon");
        params.add("recon.up" + std::to_string(j) + ".b", Shape{co}, "recon", Init::Zeros);
        ch = co;
      }
      add_conv("recon.out", 1, ch, 1, "recon");
      add_linear("contra.proj", dt, cw[4], "proj");
    }
    params.set_trainable("text", false);
  }
};

}  // namespace dgsp
