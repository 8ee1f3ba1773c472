#pragma once

#include <cctype>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgsp/model.hpp"

// Dual-granularity prompt construction: a fixed coarse template whose slot
// markers are filled, in embedding space, with per-image tokens produced by a
// small inversion network over fused encoder features. A frozen seeded
// transformer turns the assembled sequence into the TextBundle the visual
// network consumes.

namespace dgsp {

struct PromptTemplate {
  std::string text;
  int n_t = 0;
};

// Template rows by slot count. Slot markers <s1>..<s4> are single vocabulary
// tokens; the scene word only exists in the slot-free row.
inline PromptTemplate build_template(int n_t, const std::string& scene = "the") {
  if (n_t < 0 || n_t > 4)
    throw PromptError("unsupported prompt variant: n_t = " + std::to_string(n_t));
  switch (n_t) {
    case 0: {
      std::string where = scene.empty() || scene == "the" ? "the" : "the " + scene;
      if (scene != "the" && !scene.empty() && scene != "sky" && scene != "ground" &&
          scene != "ocean")
        throw PromptError("unknown scene word: " + scene);
      return {"A photo of an infrared image, with targets in " + where + " background.", 0};
    }
    case 1:
      return {"A photo of an infrared image, with <s1> in the background.", 1};
    case 2:
      return {"A photo of an infrared image, with <s1> in <s2> background.", 2};
    case 3:
      return {"A photo of an infrared image, with <s1> <s2> in <s3> background.", 3};
    default:
      return {"A photo of an infrared image, with <s1> <s2> in <s3> <s4> background.", 4};
  }
}

class Vocabulary {
 public:
  static Vocabulary builtin() {
    return Vocabulary({"[sot]", "[eot]", "<s1>", "<s2>", "<s3>", "<s4>", "a", "photo", "of",
                       "an", "infrared", "image", ",", "with", "targets", "in", "the",
                       "background", ".", "sky", "ground", "ocean"});
  }

  // One token per line, line index = id. Must still contain the specials.
  static Vocabulary from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file: " + path);
    std::vector<std::string> toks;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) toks.push_back(line);
    }
    Vocabulary v(std::move(toks));
    for (const char* req : {"[sot]", "[eot]"})
      if (!v.index_.count(req))
        throw PromptError("vocabulary file missing required token: " + std::string(req));
    return v;
  }

  long size() const { return static_cast<long>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(id); }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw PromptError("token not in vocabulary: '" + tok + "'");
    return it->second;
  }

  int sot() const { return id("[sot]"); }
  int eot() const { return id("[eot]"); }

 private:
  explicit Vocabulary(std::vector<std::string> toks) : tokens_(std::move(toks)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      index_[tokens_[i]] = static_cast<int>(i);
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
  std::vector<int> ids;             // [sot] ... [eot]
  std::vector<long> slot_positions; // indices of <s1>..<s_nt> within ids
  long length() const { return static_cast<long>(ids.size()); }
  long eot_pos() const { return length() - 1; }
};

// Lowercase word-level tokenizer; ',' and '.' split off as their own tokens.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab,
                              long context_len = 77) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  };
  for (char ch : text) {
    if (ch == ' ' || ch == '\t' || ch == '\n') {
      flush();
    } else if (ch == ',' || ch == '.') {
      flush();
      words.push_back(std::string(1, ch));
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  TokenSequence seq;
  seq.ids.push_back(vocab.sot());
  int next_slot = 1;
  for (const auto& w : words) {
    if (w.size() == 4 && w[0] == '<' && w[1] == 's' && w[3] == '>') {
      const int k = w[2] - '0';
      if (k != next_slot)
        throw PromptError("slot markers must be contiguous from <s1>, got " + w);
      ++next_slot;
      seq.slot_positions.push_back(static_cast<long>(seq.ids.size()));
    }
    seq.ids.push_back(vocab.id(w));
  }
  seq.ids.push_back(vocab.eot());
  if (seq.length() > context_len)
    throw PromptError("tokenized prompt length " + std::to_string(seq.length()) +
                      " exceeds context length " + std::to_string(context_len));
  return seq;
}

// Inverse of tokenize for display and round-trip checks: joins with spaces,
// attaches punctuation, restores the leading capital.
inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (long i = 1; i + 1 < seq.length(); ++i) {
    const std::string& tok = vocab.token(seq.ids[i]);
    if (!out.empty() && tok != "," && tok != ".") out.push_back(' ');
    out += tok;
  }
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

// Brings f1..f3 to stride-16 resolution with strided depthwise convolutions,
// concatenates, and projects to the inversion width.
template <typename T>
Var<T> fuse_pyramid(const Model<T>& m, const Var<T>& f1, const Var<T>& f2, const Var<T>& f3) {
  Var<T> d1 = depthwise_conv2d(f1, m.params.get("inv.dw1.w"), m.params.get("inv.dw1.b"), 16);
  Var<T> d2 = depthwise_conv2d(f2, m.params.get("inv.dw2.w"), m.params.get("inv.dw2.b"), 8);
  Var<T> d3 = depthwise_conv2d(f3, m.params.get("inv.dw3.w"), m.params.get("inv.dw3.b"), 4);
  if (d1.dim(2) != d2.dim(2) || d2.dim(2) != d3.dim(2) || d1.dim(3) != d2.dim(3) ||
      d2.dim(3) != d3.dim(3))
    throw ShapeError("pyramid levels disagree after strided reduction: " +
                     shape_str(d1.shape()) + " / " + shape_str(d2.shape()) + " / " +
                     shape_str(d3.shape()));
  return conv2d(concat<T>({d1, d2, d3}, 1), m.params.get("inv.fuse.w"),
                m.params.get("inv.fuse.b"));
}

// Learnable queries attend over themselves plus the fused image sequence;
// an MLP maps the attended queries into text embedding space.
template <typename T>
SemanticTokens<T> invert_tokens(const Model<T>& m, const Var<T>& f_img, long n_t) {
  const long N = f_img.dim(0);
  if (f_img.dim(1) != m.cfg.inv_channels)
    throw ShapeError("inversion input channels " + std::to_string(f_img.dim(1)) +
                     " != configured width " + std::to_string(m.cfg.inv_channels));
  if (n_t == 0)
    return {Var<T>::constant(Tensor<T>(Shape{N, 0, m.cfg.text_dim})), 0};
  const Var<T>& tokens = m.params.get("inv.tokens");
  if (tokens.dim(0) != n_t)
    throw ConfigError("inversion tokens sized for n_t = " + std::to_string(tokens.dim(0)) +
                      ", requested " + std::to_string(n_t));
  Var<T> queries = broadcast_rows(tokens, N);                     // (N, n_t, c)
  Var<T> kv = concat<T>({queries, flatten_spatial(f_img)}, 1);    // (N, n_t+h*w, c)
  Var<T> q = m.linear_tokens(queries, "inv.q");
  Var<T> k = m.linear_tokens(kv, "inv.k");
  Var<T> v = m.linear_tokens(kv, "inv.v");
  Var<T> ctx = m.linear_tokens(mha_core(q, k, v, m.cfg.inv_heads, false), "inv.out");
  Var<T> hidden = relu(m.linear_tokens(ctx, "inv.mlp1"));
  return {m.linear_tokens(hidden, "inv.mlp2"), n_t};
}

// Frozen reference text encoder: token + position embeddings, pre-norm
// causal transformer blocks, final layer norm. Differentiable with respect
// to injected slot vectors only; its own weights never train.
template <typename T>
TextBundle<T> encode_text(const Model<T>& m, const TokenSequence& tokens,
                          const SemanticTokens<T>& injected) {
  if (static_cast<long>(tokens.slot_positions.size()) != injected.n_t)
    throw PromptError("prompt injection mismatch: template has " +
                      std::to_string(tokens.slot_positions.size()) + " slots, got " +
                      std::to_string(injected.n_t) + " tokens");
  const long L = tokens.length(), dt = m.cfg.text_dim;
  if (L > m.cfg.context_len)
    throw PromptError("token sequence exceeds context length");
  const long N = injected.embeddings.dim(0);
  const Tensor<T>& emb = m.params.get("txt.tok_emb").value();
  const Tensor<T>& pos = m.params.get("txt.pos_emb").value();
  Tensor<T> id_base(Shape{L, dt});
  for (long i = 0; i < L; ++i) {
    const int id = tokens.ids[i];
    if (id < 0 || id >= m.cfg.vocab_size) throw PromptError("token id out of range");
    for (long j = 0; j < dt; ++j) id_base.at2(i, j) = emb.at2(id, j);
  }
  // Injected vectors replace the slot ids' embeddings; positions are added
  // afterwards so every row keeps its sequence offset.
  Var<T> x = injected.n_t > 0
                 ? inject_rows(id_base, injected.embeddings, tokens.slot_positions)
                 : broadcast_rows(Var<T>::constant(id_base), N);
  Tensor<T> pos_rows(Shape{L, dt});
  for (long i = 0; i < L; ++i)
    for (long j = 0; j < dt; ++j) pos_rows.at2(i, j) = pos.at2(i, j);
  x = add(x, broadcast_rows(Var<T>::constant(pos_rows), N));
  for (long l = 0; l < m.cfg.text_layers; ++l) {
    const std::string p = "txt.l" + std::to_string(l);
    Var<T> h = m.norm_tokens(x, p + ".ln1");
    Var<T> attn = mha_core(m.linear_tokens(h, p + ".attn.q"),
                           m.linear_tokens(h, p + ".attn.k"),
                           m.linear_tokens(h, p + ".attn.v"), m.cfg.text_heads, true);
    x = add(x, m.linear_tokens(attn, p + ".attn.out"));
    Var<T> h2 = m.norm_tokens(x, p + ".ln2");
    x = add(x, m.linear_tokens(relu(m.linear_tokens(h2, p + ".mlp.fc1")), p + ".mlp.fc2"));
  }
  Var<T> seq = m.norm_tokens(x, "txt.ln_f");
  return {seq, row_at(seq, tokens.eot_pos())};
}

// Full prompt path. Encoder features are detached on entry: prompt-side
// losses can never update the visual encoder through this route.
template <typename T>
TextBundle<T> make_bundle(const Model<T>& m, const Var<T>& f1, const Var<T>& f2,
                          const Var<T>& f3, const TokenSequence& tokens) {
  const long n_t = static_cast<long>(tokens.slot_positions.size());
  if (n_t == 0) {
    SemanticTokens<T> none{Var<T>::constant(Tensor<T>(Shape{f1.dim(0), 0, m.cfg.text_dim})), 0};
    return encode_text(m, tokens, none);
  }
  Var<T> f_img = fuse_pyramid(m, stop_grad(f1), stop_grad(f2), stop_grad(f3));
  return encode_text(m, tokens, invert_tokens(m, f_img, n_t));
}

}  // namespace dgsp
