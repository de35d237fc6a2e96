#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flatner/array.hpp"
#include "flatner/autograd.hpp"
#include "flatner/common.hpp"
#include "flatner/lattice.hpp"
#include "flatner/params.hpp"
#include "flatner/posenc.hpp"

namespace flatner {

// Structural hyperparameters and ablation switches. Two towers exist: the
// multimodal main tower and a text-only boundary-detection tower with the
// same block structure; "main." / "ebd." prefix the parameter names.
struct ModelConfig {
  std::size_t d = 32;        // cell embedding width
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_word = 16;   // word/special embedding width
  std::size_t d_visual = 16; // object embedding width
  std::size_t ffn_inner = 0; // 0 picks 4*d
  double dropout = 0.2;
  std::size_t vocab_words = 0;   // word table rows, unknown row included
  std::size_t vocab_objects = 0; // object table rows, unknown row included
  std::size_t num_labels = 0;    // main-tower label count

  bool no_rel = false;           // drop the position terms from attention
  bool no_ebd = false;           // no auxiliary tower at all
  bool no_objects = false;       // callers strip objects from inputs
  bool no_transitions = false;   // per-token scoring in the sequence layer
  bool share_word_input = false; // aux tower reuses the main word-input stack

  std::size_t d_head() const { return d / heads; }
  std::size_t ffn() const { return ffn_inner ? ffn_inner : 4 * d; }

  void validate() const {
    require(d >= 2 && d % 2 == 0, cat("model: d must be even and >= 2, got ", d));
    require(heads >= 1 && d % heads == 0,
            cat("model: d=", d, " not divisible by heads=", heads));
    require(layers >= 1, cat("model: layers must be >= 1, got ", layers));
    require(d_word >= 1 && d_visual >= 1, "model: embedding widths must be positive");
    require(dropout >= 0.0 && dropout < 1.0, cat("model: dropout ", dropout, " outside [0, 1)"));
    require(vocab_words >= 1, "model: word vocabulary is empty");
    require(vocab_objects >= 1, "model: object vocabulary is empty");
    require(num_labels >= 1, "model: label set is empty");
    require(!(no_ebd && share_word_input),
            "model: share_word_input is meaningless with no_ebd");
  }
};

namespace detail {

template <typename T>
Array<T> uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Array<T> a(shape);
  const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<T>(rng.uniform(-k, k));
  return a;
}

// One tower's tensors, in a fixed order so initialization draws and
// checkpoint layout are reproducible. `word_input` covers the tensors the
// aux tower can borrow from the main tower.
template <typename T>
void add_tower_params(ParamStore<T>& out, const ModelConfig& cfg, const std::string& prefix,
                      bool word_input, bool visual_input, Rng& rng) {
  const std::size_t d = cfg.d, dh = cfg.d_head(), f = cfg.ffn();
  if (word_input) {
    out.add(prefix + "emb.word", uniform_init<T>({cfg.vocab_words, cfg.d_word}, cfg.d_word, rng));
    out.add(prefix + "emb.special", uniform_init<T>({kSpecialRows, cfg.d_word}, cfg.d_word, rng));
    out.add(prefix + "proj.w1", uniform_init<T>({d, cfg.d_word}, cfg.d_word, rng));
    out.add(prefix + "proj.b1", Array<T>({1, d}));
    out.add(prefix + "proj.w0", uniform_init<T>({d, d}, d, rng));
    out.add(prefix + "proj.b0", Array<T>({1, d}));
  }
  if (visual_input) {
    out.add(prefix + "emb.object",
            uniform_init<T>({cfg.vocab_objects, cfg.d_visual}, cfg.d_visual, rng));
    out.add(prefix + "proj.w2", uniform_init<T>({d, cfg.d_visual}, cfg.d_visual, rng));
    out.add(prefix + "proj.b2", Array<T>({1, d}));
  }
  out.add(prefix + "posenc.wr", uniform_init<T>({d, 4 * d}, 4 * d, rng));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string lp = cat(prefix, "l", l, ".");
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::string hp = cat(lp, "h", h, ".");
      out.add(hp + "wq", uniform_init<T>({d, dh}, d, rng));
      out.add(hp + "wke", uniform_init<T>({d, dh}, d, rng));
      out.add(hp + "wkr", uniform_init<T>({d, dh}, d, rng));
      out.add(hp + "wv", uniform_init<T>({d, dh}, d, rng));
      out.add(hp + "u", Array<T>({1, dh}));
      out.add(hp + "v", Array<T>({1, dh}));
    }
    out.add(lp + "att.wt", uniform_init<T>({d, d}, d, rng));
    out.add(lp + "ln1.gamma", Array<T>({1, d}, T(1)));
    out.add(lp + "ln1.beta", Array<T>({1, d}));
    out.add(lp + "ffn.wa", uniform_init<T>({f, d}, d, rng));
    out.add(lp + "ffn.ba", Array<T>({1, f}));
    out.add(lp + "ffn.wb", uniform_init<T>({d, f}, f, rng));
    out.add(lp + "ffn.bb", Array<T>({1, d}));
    out.add(lp + "ln2.gamma", Array<T>({1, d}, T(1)));
    out.add(lp + "ln2.beta", Array<T>({1, d}));
  }
}

template <typename T>
void add_crf_params(ParamStore<T>& out, const std::string& prefix, std::size_t k, std::size_t d,
                    Rng& rng) {
  out.add(prefix + "crf.w", uniform_init<T>({k, d}, d, rng));
  out.add(prefix + "crf.b", Array<T>({1, k}));
  out.add(prefix + "crf.trans", Array<T>({k, k}));
  out.add(prefix + "crf.start", Array<T>({1, k}));
  out.add(prefix + "crf.stop", Array<T>({1, k}));
}

}  // namespace detail

inline constexpr std::size_t kBoundaryLabels = 3;  // {B, E, O}

// All trainable tensors. Each tower draws from its own named seed stream, so
// toggling the aux tower cannot shift the main tower's initialization.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> params;
  Rng main_rng(derive_seed(seed, "init.main"));
  detail::add_tower_params(params, cfg, "main.", true, true, main_rng);
  detail::add_crf_params<T>(params, "main.", cfg.num_labels, cfg.d, main_rng);
  if (!cfg.no_ebd) {
    Rng ebd_rng(derive_seed(seed, "init.ebd"));
    detail::add_tower_params(params, cfg, "ebd.", !cfg.share_word_input, false, ebd_rng);
    detail::add_crf_params<T>(params, "ebd.", kBoundaryLabels, cfg.d, ebd_rng);
  }
  return params;
}

// Tape handles for every parameter, preserving store order for gradient
// collection.
template <typename T>
class Leaves {
 public:
  Leaves(Tape<T>& tape, const ParamStore<T>& params) {
    for (const auto& [name, value] : params.entries()) {
      index_[name] = entries_.size();
      entries_.emplace_back(name, tape.leaf(value, true));
    }
  }

  Var get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), cat("no such parameter leaf: ", name));
    return entries_[it->second].second;
  }

  ParamStore<T> grads(const Tape<T>& tape) const {
    ParamStore<T> out;
    for (const auto& [name, var] : entries_) out.add(name, tape.grad(var));
    return out;
  }

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Resolves a tower-relative tensor name to a parameter-store key, honoring
// the shared word-input stack of the aux tower.
struct TowerWiring {
  std::string prefix;              // "main." or "ebd."
  bool share_word_input = false;   // only meaningful for the aux tower

  std::string key(const std::string& logical) const {
    static const char* shared[] = {"emb.word", "emb.special", "proj.w1",
                                   "proj.b1",  "proj.w0",     "proj.b0"};
    if (share_word_input)
      for (const char* s : shared)
        if (logical == s) return std::string("main.") + s;
    return prefix + logical;
  }
};

// Cell padding to a common batch length: inert rows that reuse the padding
// row of the special table and sit at position (0, 0).
inline FlatLattice pad_lattice(FlatLattice lat, std::size_t pad_to) {
  require(pad_to == 0 || pad_to >= lat.size(),
          cat("pad_lattice: target ", pad_to, " below lattice size ", lat.size()));
  while (lat.size() < pad_to) lat.cells.push_back({kPadRow, Modality::SPECIAL, 0, 0});
  return lat;
}

inline std::vector<std::uint8_t> key_keep_mask(std::size_t real_cells, std::size_t total_cells) {
  require(real_cells >= 1 && real_cells <= total_cells, "key mask: bad cell counts");
  std::vector<std::uint8_t> keep(total_cells, 0);
  for (std::size_t i = 0; i < real_cells; ++i) keep[i] = 1;
  return keep;
}

// Attention keeps a key only if it is a real cell; every query row keeps the
// same key set.
inline Array<std::uint8_t> keep_matrix(const std::vector<std::uint8_t>& key_keep) {
  const std::size_t len = key_keep.size();
  Array<std::uint8_t> keep({len, len});
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j) keep.at(i, j) = key_keep[j];
  return keep;
}

// Two-step modality projection: rows -> ReLU(rows W_in^T + b_in) -> shared
// output map. Both modalities land in the common d-wide cell space.
template <typename T>
Var project_rows(Tape<T>& tape, Var rows, Var w_in, Var b_in, Var w0, Var b0) {
  Var hidden = tape.relu(tape.add_rowvec(tape.matmul(rows, w_in, false, true), b_in));
  return tape.add_rowvec(tape.matmul(hidden, w0, false, true), b0);
}

// Assembles the cell matrix for a (possibly padded) lattice: word and marker
// cells go through the text projection, object cells through the visual one,
// preserving lattice order [marker, words, marker, objects, padding].
template <typename T>
Var embed_cells(Tape<T>& tape, const FlatLattice& lat, const Leaves<T>& leaves,
                const TowerWiring& w) {
  std::vector<int> special_ids{kClsRow};
  std::vector<int> word_ids;
  std::vector<int> object_ids;
  std::size_t pad_count = 0;
  for (std::size_t i = 1; i < lat.size(); ++i) {
    const Cell& c = lat.cells[i];
    switch (c.modality) {
      case Modality::WORD: word_ids.push_back(c.content); break;
      case Modality::VISUAL: object_ids.push_back(c.content); break;
      case Modality::SPECIAL:
        if (c.content == kPadRow)
          ++pad_count;
        else
          special_ids.push_back(c.content);
        break;
    }
  }
  require(special_ids.size() == 2 && word_ids.size() == lat.n && object_ids.size() == lat.m,
          "embed_cells: lattice out of canonical order");

  Var word_table = leaves.get(w.key("emb.word"));
  Var special_table = leaves.get(w.key("emb.special"));
  Var text_rows = tape.concat({tape.gather_rows(special_table, {special_ids[0]}),
                               tape.gather_rows(word_table, word_ids),
                               tape.gather_rows(special_table, {special_ids[1]})},
                              0);
  Var w0 = leaves.get(w.key("proj.w0"));
  Var b0 = leaves.get(w.key("proj.b0"));
  Var text = project_rows(tape, text_rows, leaves.get(w.key("proj.w1")),
                          leaves.get(w.key("proj.b1")), w0, b0);
  std::vector<Var> parts{text};
  if (!object_ids.empty()) {
    Var object_rows = tape.gather_rows(leaves.get(w.key("emb.object")), object_ids);
    parts.push_back(project_rows(tape, object_rows, leaves.get(w.key("proj.w2")),
                                 leaves.get(w.key("proj.b2")), w0, b0));
  }
  if (pad_count > 0) {
    Var pad_rows =
        tape.gather_rows(special_table, std::vector<int>(pad_count, kPadRow));
    parts.push_back(project_rows(tape, pad_rows, leaves.get(w.key("proj.w1")),
                                 leaves.get(w.key("proj.b1")), w0, b0));
  }
  return parts.size() == 1 ? parts[0] : tape.concat(parts, 0);
}

// Raw attention scores for one head, before scaling and softmax. Four terms:
// content-content, content-position, a global content bias u, and a global
// position bias v. The two content terms fold into (Q + u) K^T; the two
// position terms fold into per-pair dot products (Q + v) . Rk[pair].
// With enc == nullptr only the content terms remain.
template <typename T>
Var attention_scores(Tape<T>& tape, Var e, Var wq, Var wke, Var wkr, Var u, Var v,
                     const RelativeEncoding* enc) {
  const std::size_t len = tape.val(e).rows();
  Var q = tape.matmul(e, wq);
  Var k = tape.matmul(e, wke);
  Var content = tape.matmul(tape.add_rowvec(q, u), k, false, true);
  if (enc == nullptr) return content;
  require(enc->length == len,
          cat("attention: encoding is for ", enc->length, " cells, embeddings have ", len));
  Var rk = tape.matmul(enc->unique, wkr);
  Var rk_pairs = tape.gather_rows(rk, enc->pair_index);
  Var qv_rep = tape.repeat_rows(tape.add_rowvec(q, v), len);
  Var position = tape.reshape(tape.row_sum(tape.mul(qv_rep, rk_pairs)), {len, len});
  return tape.add(content, position);
}

// softmax(A / sqrt(d_head)) V for one head, with padded keys masked out.
template <typename T>
Var attention_head(Tape<T>& tape, Var e, Var scores, Var wv, const Array<std::uint8_t>& keep,
                   std::size_t dh) {
  Var scaled = tape.scale(scores, T(1.0 / std::sqrt(static_cast<double>(dh))));
  Var probs = tape.softmax_rows(scaled, keep);
  return tape.matmul(probs, tape.matmul(e, wv));
}

template <typename T>
Var multi_head_attention(Tape<T>& tape, const ModelConfig& cfg, const Leaves<T>& leaves,
                         const TowerWiring& w, const std::string& layer_prefix, Var e,
                         const RelativeEncoding* enc, const Array<std::uint8_t>& keep) {
  std::vector<Var> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string hp = cat(layer_prefix, "h", h, ".");
    Var scores = attention_scores(tape, e, leaves.get(w.key(hp + "wq")),
                                  leaves.get(w.key(hp + "wke")), leaves.get(w.key(hp + "wkr")),
                                  leaves.get(w.key(hp + "u")), leaves.get(w.key(hp + "v")), enc);
    heads.push_back(
        attention_head<T>(tape, e, scores, leaves.get(w.key(hp + "wv")), keep, cfg.d_head()));
  }
  Var cat_heads = heads.size() == 1 ? heads[0] : tape.concat(heads, 1);
  return tape.matmul(cat_heads, leaves.get(w.key(layer_prefix + "att.wt")), false, true);
}

inline constexpr double kLayerNormEps = 1e-5;

// Post-norm residual block: attention sublayer then position-wise feed
// forward, each followed by add & normalize. Dropout is applied to each
// sublayer output during training only.
template <typename T>
Var transformer_layer(Tape<T>& tape, const ModelConfig& cfg, const Leaves<T>& leaves,
                      const TowerWiring& w, std::size_t layer, Var x,
                      const RelativeEncoding* enc, const Array<std::uint8_t>& keep, bool train,
                      Rng* dropout_rng) {
  const std::string lp = cat("l", layer, ".");
  Var att = multi_head_attention(tape, cfg, leaves, w, lp, x, enc, keep);
  att = tape.dropout(att, cfg.dropout, dropout_rng, train);
  Var y = tape.layer_norm(tape.add(x, att), leaves.get(w.key(lp + "ln1.gamma")),
                          leaves.get(w.key(lp + "ln1.beta")), T(kLayerNormEps));
  Var hidden = tape.relu(tape.add_rowvec(tape.matmul(y, leaves.get(w.key(lp + "ffn.wa")), false, true),
                                         leaves.get(w.key(lp + "ffn.ba"))));
  Var ffn = tape.add_rowvec(tape.matmul(hidden, leaves.get(w.key(lp + "ffn.wb")), false, true),
                            leaves.get(w.key(lp + "ffn.bb")));
  ffn = tape.dropout(ffn, cfg.dropout, dropout_rng, train);
  return tape.layer_norm(tape.add(y, ffn), leaves.get(w.key(lp + "ln2.gamma")),
                         leaves.get(w.key(lp + "ln2.beta")), T(kLayerNormEps));
}

// Full tower over one (padded) lattice: embed, encode relative positions
// once (shared by all layers and heads), run the layer stack. Returns all
// cell rows; tower_forward below slices out the n word rows.
template <typename T>
Var tower_cells(Tape<T>& tape, const ModelConfig& cfg, const Leaves<T>& leaves,
                const TowerWiring& w, const FlatLattice& lat, SinusoidCache<T>& sinusoids,
                bool train, Rng* dropout_rng) {
  const std::size_t real_cells = lat.n + lat.m + 2;
  const Array<std::uint8_t> keep = keep_matrix(key_keep_mask(real_cells, lat.size()));
  Var x = embed_cells(tape, lat, leaves, w);
  RelativeEncoding enc;
  if (!cfg.no_rel) enc = relative_encoding(tape, lat, leaves.get(w.key("posenc.wr")), sinusoids);
  const RelativeEncoding* enc_ptr = cfg.no_rel ? nullptr : &enc;
  for (std::size_t l = 0; l < cfg.layers; ++l)
    x = transformer_layer(tape, cfg, leaves, w, l, x, enc_ptr, keep, train, dropout_rng);
  return x;
}

template <typename T>
Var tower_forward(Tape<T>& tape, const ModelConfig& cfg, const Leaves<T>& leaves,
                  const TowerWiring& w, const FlatLattice& lat, SinusoidCache<T>& sinusoids,
                  bool train, Rng* dropout_rng) {
  Var cells = tower_cells(tape, cfg, leaves, w, lat, sinusoids, train, dropout_rng);
  return tape.slice_rows(cells, lat.word_begin(), lat.n);
}

}  // namespace flatner
