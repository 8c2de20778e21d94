#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcr/params.hpp"
#include "tcr/sequence.hpp"
#include "tcr/tensor.hpp"
#include "tcr/time_codec.hpp"

namespace tcr {

struct TcrConfig {
  std::size_t n_blocks = 4;
  std::size_t n_heads = 8;
  std::size_t d_model = 64;
  std::size_t n_queries = 16;
  std::vector<std::size_t> cross_attn_blocks = {0, 2};
  std::size_t d_vis = 64;
  std::size_t d_lm = 64;
  std::size_t d_time = 32;
  std::size_t n_bins = 2048;
  std::size_t vocab_size = 0;
  double init_std = 0.02;

  void validate() const {
    if (d_model % n_heads != 0) throw std::invalid_argument("tcr config: d_model not divisible by n_heads");
    for (std::size_t b : cross_attn_blocks)
      if (b >= n_blocks) throw std::invalid_argument("tcr config: cross-attention block out of range");
    if (vocab_size == 0) throw std::invalid_argument("tcr config: vocab_size unset");
  }

  bool is_cross_block(std::size_t b) const {
    for (std::size_t cb : cross_attn_blocks)
      if (cb == b) return true;
    return false;
  }

  // Published architecture constants: 4 blocks, 8 heads, width 512,
  // 128 queries, cross-attention at blocks 0 and 2.
  static TcrConfig paper_preset() {
    TcrConfig c;
    c.n_blocks = 4;
    c.n_heads = 8;
    c.d_model = 512;
    c.n_queries = 128;
    c.cross_attn_blocks = {0, 2};
    c.d_vis = 1408;
    c.d_lm = 2048;
    c.d_time = 512;
    c.n_bins = 2048;
    c.vocab_size = 32128;
    return c;
  }
};

// Self-attention mask over (text | queries) plus cross-attention
// participation flags per segment.
struct AttentionMaskScheme {
  MaskScheme scheme = MaskScheme::Contrastive;
  std::size_t text_len = 0;
  std::size_t n_queries = 0;
  std::vector<std::uint8_t> self_mask;  // (text_len+n_queries)^2, 1 = attend
  bool text_cross = false;
  bool query_cross = true;

  std::size_t side() const { return text_len + n_queries; }
};

// Contrastive: text attends only to text, queries only to queries, and only
// queries cross-attend the video. Matching/generative: full bidirectional
// self-attention, both segments cross-attend.
inline AttentionMaskScheme mask_for_scheme(MaskScheme scheme, std::size_t text_len, std::size_t n_queries) {
  AttentionMaskScheme m;
  m.scheme = scheme;
  m.text_len = text_len;
  m.n_queries = n_queries;
  const std::size_t s = text_len + n_queries;
  m.self_mask.assign(s * s, 1);
  switch (scheme) {
    case MaskScheme::Contrastive:
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const bool same_segment = (i < text_len) == (j < text_len);
          m.self_mask[i * s + j] = same_segment ? 1 : 0;
        }
      m.text_cross = false;
      m.query_cross = true;
      break;
    case MaskScheme::Matching:
    case MaskScheme::Generative:
      m.text_cross = true;
      m.query_cross = true;
      break;
  }
  return m;
}

struct TcrOutput {
  Tensor text;       // [text_len x d_model]
  Tensor queries;    // [n_queries x d_model]
  Tensor projected;  // [n_queries x d_lm]
};

struct CostProfile {
  long long cross_attn_flops = 0;
  long long self_attn_flops = 0;
  long long other_flops = 0;
  long long peak_values = 0;

  long long total_flops() const { return cross_attn_flops + self_attn_flops + other_flops; }
};

inline void init_tcr_params(ParameterStore& store, const TcrConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, 0x7C2);
  const std::size_t d = cfg.d_model;
  auto mat = [&](Shape s) { return Tensor::randn(std::move(s), rng, cfg.init_std, true); };
  store.create("tcr/text_embed", mat({cfg.vocab_size, d}));
  store.create("tcr/queries", mat({cfg.n_queries, d}));
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const std::string base = "tcr/block" + std::to_string(b);
    if (cfg.is_cross_block(b)) {
      store.create(base + "/ca/ln_g", Tensor::full({d}, 1.0, true));
      store.create(base + "/ca/ln_b", Tensor::zeros({d}, true));
      store.create(base + "/ca/wq", mat({d, d}));
      store.create(base + "/ca/bq", Tensor::zeros({d}, true));
      store.create(base + "/ca/wk", mat({cfg.d_vis, d}));
      store.create(base + "/ca/bk", Tensor::zeros({d}, true));
      store.create(base + "/ca/wv", mat({cfg.d_vis, d}));
      store.create(base + "/ca/bv", Tensor::zeros({d}, true));
      store.create(base + "/ca/wo", mat({d, d}));
      store.create(base + "/ca/bo", Tensor::zeros({d}, true));
    }
    store.create(base + "/sa/ln_g", Tensor::full({d}, 1.0, true));
    store.create(base + "/sa/ln_b", Tensor::zeros({d}, true));
    store.create(base + "/sa/wq", mat({d, d}));
    store.create(base + "/sa/bq", Tensor::zeros({d}, true));
    store.create(base + "/sa/wk", mat({d, d}));
    store.create(base + "/sa/bk", Tensor::zeros({d}, true));
    store.create(base + "/sa/wv", mat({d, d}));
    store.create(base + "/sa/bv", Tensor::zeros({d}, true));
    store.create(base + "/sa/wo", mat({d, d}));
    store.create(base + "/sa/bo", Tensor::zeros({d}, true));
    store.create(base + "/ff/ln_g", Tensor::full({d}, 1.0, true));
    store.create(base + "/ff/ln_b", Tensor::zeros({d}, true));
    store.create(base + "/ff/w1", mat({d, 4 * d}));
    store.create(base + "/ff/b1", Tensor::zeros({4 * d}, true));
    store.create(base + "/ff/w2", mat({4 * d, d}));
    store.create(base + "/ff/b2", Tensor::zeros({d}, true));
  }
  store.create("tcr/final_ln/g", Tensor::full({d}, 1.0, true));
  store.create("tcr/final_ln/b", Tensor::zeros({d}, true));
  store.create("tcr/lm_proj/w", mat({d, cfg.d_lm}));
  store.create("tcr/lm_proj/b", Tensor::zeros({cfg.d_lm}, true));
  store.create("tcr/itc/logit_scale", Tensor::from({1}, {std::log(1.0 / 0.07)}, true));
  store.create("tcr/itm/w", mat({d, 1}));
  store.create("tcr/itm/b", Tensor::zeros({1}, true));

  TemporalEmbeddingConfig tcfg{cfg.n_bins, cfg.d_time, cfg.d_vis};
  init_temporal_params(store, tcfg, rng, cfg.init_std);
}

namespace detail {

// Multi-head attention; mask (if non-empty) is [L x S], 1 = attend.
inline Tensor attention(const ParameterStore& store, const std::string& base, std::size_t n_heads,
                        const Tensor& q_in, const Tensor& kv_in, const std::vector<std::uint8_t>& mask) {
  const std::size_t d = store.get(base + "/wq").dim(1);
  const std::size_t dh = d / n_heads;
  const std::size_t l = q_in.dim(0), s = kv_in.dim(0);
  Tensor q = add(matmul(q_in, store.get(base + "/wq")), store.get(base + "/bq"));
  Tensor k = add(matmul(kv_in, store.get(base + "/wk")), store.get(base + "/bk"));
  Tensor v = add(matmul(kv_in, store.get(base + "/wv")), store.get(base + "/bv"));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    Tensor probs = mask.empty() ? softmax(scores) : masked_softmax(scores, mask);
    heads.push_back(matmul(probs, vh));
  }
  (void)l;
  (void)s;
  Tensor ctx = n_heads == 1 ? heads[0] : concat_cols(heads);
  return add(matmul(ctx, store.get(base + "/wo")), store.get(base + "/bo"));
}

inline Tensor feed_forward(const ParameterStore& store, const std::string& base, const Tensor& x) {
  Tensor h = gelu(add(matmul(x, store.get(base + "/w1")), store.get(base + "/b1")));
  return add(matmul(h, store.get(base + "/w2")), store.get(base + "/b2"));
}

}  // namespace detail

// Pre-norm decoder over (task token | text | queries) with cross-attention to
// the video tokens in the configured blocks; cross runs before self within a
// block. Output query count is n_queries for any video length, and
// cross-attention is the only path from video to output.
inline TcrOutput tcr_forward(const TcrConfig& cfg, const ParameterStore& store, const ConditioningSequence& cond,
                             const VideoFeatureSequence& video, CostProfile* cost = nullptr) {
  cfg.validate();
  if (cond.n_queries != cfg.n_queries)
    throw std::invalid_argument("tcr_forward: conditioning query count != config n_queries");
  if (video.count() > 0 && video.tokens.dim(1) != cfg.d_vis)
    throw std::invalid_argument("tcr_forward: video width != d_vis");

  auto& meter = op_meter();
  const long long live0 = meter.live_values;
  meter.peak_values = live0;
  long long flops_mark = meter.matmul_flops;
  auto take_flops = [&]() {
    long long delta = meter.matmul_flops - flops_mark;
    flops_mark = meter.matmul_flops;
    return delta;
  };

  const std::size_t t_len = cond.text_len();
  const std::size_t q = cfg.n_queries;
  const AttentionMaskScheme masks = mask_for_scheme(cond.scheme, t_len, q);

  std::vector<std::size_t> ids;
  ids.reserve(t_len);
  ids.push_back(cond.task_token);
  for (std::size_t id : cond.text) ids.push_back(id);
  Tensor text_emb = gather_rows(store.get("tcr/text_embed"), ids);
  Tensor x = concat_rows({text_emb, store.get("tcr/queries")});

  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const std::string base = "tcr/block" + std::to_string(b);
    if (cost) cost->other_flops += take_flops();
    if (cfg.is_cross_block(b) && video.count() > 0) {
      Tensor normed = layer_norm(x, store.get(base + "/ca/ln_g"), store.get(base + "/ca/ln_b"));
      if (masks.text_cross) {
        Tensor upd = detail::attention(store, base + "/ca", cfg.n_heads, normed, video.tokens, {});
        if (cost) cost->cross_attn_flops += take_flops();
        x = add(x, upd);
      } else {
        Tensor q_rows = slice_rows(normed, t_len, t_len + q);
        Tensor upd = detail::attention(store, base + "/ca", cfg.n_heads, q_rows, video.tokens, {});
        if (cost) cost->cross_attn_flops += take_flops();
        // text rows are copied through untouched so the contrastive text
        // path stays bit-identical under any video change
        Tensor text_part = slice_rows(x, 0, t_len);
        Tensor query_part = add(slice_rows(x, t_len, t_len + q), upd);
        x = concat_rows({text_part, query_part});
      }
    }
    if (cost) cost->other_flops += take_flops();
    Tensor normed = layer_norm(x, store.get(base + "/sa/ln_g"), store.get(base + "/sa/ln_b"));
    Tensor upd = detail::attention(store, base + "/sa", cfg.n_heads, normed, normed, masks.self_mask);
    if (cost) cost->self_attn_flops += take_flops();
    x = add(x, upd);
    Tensor ff_in = layer_norm(x, store.get(base + "/ff/ln_g"), store.get(base + "/ff/ln_b"));
    x = add(x, detail::feed_forward(store, base + "/ff", ff_in));
  }

  Tensor final = layer_norm(x, store.get("tcr/final_ln/g"), store.get("tcr/final_ln/b"));
  TcrOutput out;
  out.text = slice_rows(final, 0, t_len);
  out.queries = slice_rows(final, t_len, t_len + q);
  out.projected = add(matmul(out.queries, store.get("tcr/lm_proj/w")), store.get("tcr/lm_proj/b"));
  if (cost) {
    cost->other_flops += take_flops();
    cost->peak_values = std::max(cost->peak_values, meter.peak_values - live0);
  }
  return out;
}

// Exact count of trainable resampler scalars (frozen stubs excluded).
inline std::size_t param_count(const TcrConfig& cfg) {
  ParameterStore store;
  init_tcr_params(store, cfg, 1);
  return store.trainable_scalars();
}

struct CostRow {
  std::size_t frames = 0;
  std::size_t video_tokens = 0;
  long long cross_attn_flops = 0;
  long long self_attn_flops = 0;
  long long total_flops = 0;
  long long peak_values = 0;
};

// Measured (not modeled) attention cost: runs the forward pass per frame
// count on synthetic features and reads the matmul meter.
inline std::vector<CostRow> compute_cost_profile(const TcrConfig& cfg, const std::vector<std::size_t>& frame_counts,
                                                 std::size_t patches, std::size_t text_len = 8) {
  ParameterStore store;
  init_tcr_params(store, cfg, 7);
  Rng rng(99);
  std::vector<std::size_t> text;
  for (std::size_t i = 0; i + 1 < text_len && cfg.vocab_size > 1; ++i)
    text.push_back(rng.next_below(cfg.vocab_size));
  std::vector<CostRow> rows;
  for (std::size_t f : frame_counts) {
    CostRow row;
    row.frames = f;
    row.video_tokens = f == 0 ? 0 : video_token_count(f, patches);
    VideoFeatureSequence video;
    if (f > 0) {
      Tensor feats = Tensor::randn({f * patches, cfg.d_vis}, rng, 1.0);
      std::vector<double> times(f);
      for (std::size_t i = 0; i < f; ++i) times[i] = 0.5 * static_cast<double>(i);
      video = build_video_sequence(feats, f, patches, times, 5, store, cfg.n_bins);
    }
    ConditioningSequence cond;
    cond.task_token = 0;
    cond.text = text;
    cond.n_queries = cfg.n_queries;
    cond.scheme = MaskScheme::Generative;
    CostProfile prof;
    (void)tcr_forward(cfg, store, cond, video, &prof);
    row.cross_attn_flops = prof.cross_attn_flops;
    row.self_attn_flops = prof.self_attn_flops;
    row.total_flops = prof.total_flops();
    row.peak_values = prof.peak_values;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace tcr
