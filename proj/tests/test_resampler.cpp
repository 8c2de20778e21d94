#include <cmath>

#include "doctest.h"
#include "tcr/resampler.hpp"

using namespace tcr;

namespace {

TcrConfig tiny_cfg() {
  TcrConfig cfg;
  cfg.n_blocks = 4;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.n_queries = 2;
  cfg.cross_attn_blocks = {0, 2};
  cfg.d_vis = 6;
  cfg.d_lm = 10;
  cfg.d_time = 4;
  cfg.n_bins = 16;
  cfg.vocab_size = 30;
  return cfg;
}

struct Fixture {
  TcrConfig cfg = tiny_cfg();
  ParameterStore store;
  explicit Fixture(double init_std = 0.02) {
    cfg.init_std = init_std;
    init_tcr_params(store, cfg, 11);
  }

  VideoFeatureSequence video(std::size_t frames, std::size_t patches, std::uint64_t seed,
                             double feature_scale = 1.0) {
    Rng rng(seed);
    Tensor feats = feature_scale == 0.0 ? Tensor::zeros({frames * patches, cfg.d_vis})
                                        : Tensor::randn({frames * patches, cfg.d_vis}, rng, feature_scale);
    std::vector<double> times(frames);
    for (std::size_t i = 0; i < frames; ++i) times[i] = 0.4 * static_cast<double>(i);
    return build_video_sequence(feats, frames, patches, times, seed, store, cfg.n_bins);
  }

  ConditioningSequence cond(MaskScheme scheme, std::size_t text_len = 3) {
    ConditioningSequence c;
    c.task_token = 3;
    for (std::size_t i = 0; i < text_len; ++i) c.text.push_back(8 + i);
    c.n_queries = cfg.n_queries;
    c.scheme = scheme;
    return c;
  }
};

}  // namespace

TEST_CASE("mask schemes") {
  AttentionMaskScheme m = mask_for_scheme(MaskScheme::Contrastive, 3, 2);
  // block diagonal: text attends text, queries attend queries
  const std::vector<std::uint8_t> expect = {
      1, 1, 1, 0, 0,
      1, 1, 1, 0, 0,
      1, 1, 1, 0, 0,
      0, 0, 0, 1, 1,
      0, 0, 0, 1, 1,
  };
  CHECK(m.self_mask == expect);
  CHECK_FALSE(m.text_cross);
  CHECK(m.query_cross);

  AttentionMaskScheme full = mask_for_scheme(MaskScheme::Matching, 4, 3);
  for (std::uint8_t v : full.self_mask) CHECK(v == 1);
  CHECK(full.text_cross);

  AttentionMaskScheme queries_only = mask_for_scheme(MaskScheme::Contrastive, 0, 4);
  CHECK(queries_only.self_mask.size() == 16);
  for (std::uint8_t v : queries_only.self_mask) CHECK(v == 1);
}

TEST_CASE("fixed-length output across video lengths") {
  Fixture fx;
  for (std::size_t frames : {1u, 8u, 32u, 92u, 124u}) {
    VideoFeatureSequence v = fx.video(frames, 4, 17);
    TcrOutput out = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Generative), v);
    CHECK(out.queries.dim(0) == fx.cfg.n_queries);
    CHECK(out.queries.dim(1) == fx.cfg.d_model);
    CHECK(out.projected.dim(0) == fx.cfg.n_queries);
    CHECK(out.projected.dim(1) == fx.cfg.d_lm);
  }
}

TEST_CASE("contrastive text path is bit-identical under video and query changes") {
  Fixture fx;
  TcrOutput a = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Contrastive), fx.video(6, 4, 1));
  TcrOutput b = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Contrastive), fx.video(9, 4, 2, 3.0));
  CHECK(a.text.values() == b.text.values());

  // perturb the query embeddings; text output must not move a bit
  auto& qvals = fx.store.get("tcr/queries").mutable_values();
  for (double& v : qvals) v += 0.37;
  TcrOutput c = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Contrastive), fx.video(6, 4, 1));
  CHECK(a.text.values() == c.text.values());

  // matching scheme lets the video reach the text stream
  TcrOutput m1 = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Matching), fx.video(6, 4, 1));
  TcrOutput m2 = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Matching), fx.video(9, 4, 2, 3.0));
  CHECK(m1.text.values() != m2.text.values());
}

TEST_CASE("zero video equals zeroed value projections") {
  Fixture fx;
  // give the cross-attention value bias some mass so the case is non-trivial
  for (std::size_t b : {0u, 2u}) {
    auto& bv = fx.store.get("tcr/block" + std::to_string(b) + "/ca/bv").mutable_values();
    Rng rng(b + 5);
    for (double& v : bv) v = 0.3 * rng.next_gauss();
  }
  // zero video features: the tokens fed to cross-attention are all zero
  VideoFeatureSequence zero_tokens;
  zero_tokens.tokens = Tensor::zeros({20, fx.cfg.d_vis});
  for (std::size_t i = 0; i < 20; ++i) {
    zero_tokens.frame_index.push_back(i / 4);
    zero_tokens.kept_patch.push_back(i % 4);
    zero_tokens.time_bin.push_back(0);
  }
  TcrOutput zeroed_video = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Generative), zero_tokens);

  ParameterStore alt;
  init_tcr_params(alt, fx.cfg, 11);
  for (std::size_t b : {0u, 2u}) {
    const std::string base = "tcr/block" + std::to_string(b) + "/ca/";
    alt.get(base + "bv").mutable_values() = fx.store.get(base + "bv").values();
    auto& wv = alt.get(base + "wv").mutable_values();
    std::fill(wv.begin(), wv.end(), 0.0);
  }
  TcrOutput zeroed_values = tcr_forward(fx.cfg, alt, fx.cond(MaskScheme::Generative), fx.video(5, 4, 3, 2.0));
  for (std::size_t i = 0; i < zeroed_video.queries.size(); ++i)
    CHECK(zeroed_video.queries.value_at(i) == doctest::Approx(zeroed_values.queries.value_at(i)).epsilon(1e-12));
}

TEST_CASE("cross-attention is the only video path") {
  Fixture fx;
  for (std::size_t b : {0u, 2u}) {
    const std::string base = "tcr/block" + std::to_string(b) + "/ca/";
    auto& wo = fx.store.get(base + "wo").mutable_values();
    std::fill(wo.begin(), wo.end(), 0.0);
    auto& bo = fx.store.get(base + "bo").mutable_values();
    std::fill(bo.begin(), bo.end(), 0.0);
  }
  TcrOutput a = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Generative), fx.video(6, 4, 1));
  TcrOutput b = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Generative), fx.video(10, 4, 9, 4.0));
  CHECK(a.queries.values() == b.queries.values());
  CHECK(a.text.values() == b.text.values());
}

TEST_CASE("order sensitivity: tokens are a set, timestamps are not") {
  Fixture fx;
  VideoFeatureSequence v = fx.video(6, 4, 21);
  ConditioningSequence c = fx.cond(MaskScheme::Generative);
  TcrOutput base = tcr_forward(fx.cfg, fx.store, c, v);

  // permute tokens together with their metadata: nothing changes
  std::vector<std::size_t> perm(v.count());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 7 + 3) % perm.size();
  VideoFeatureSequence shuffled;
  shuffled.tokens = gather_rows(v.tokens, perm);
  for (std::size_t i : perm) {
    shuffled.frame_index.push_back(v.frame_index[i]);
    shuffled.kept_patch.push_back(v.kept_patch[i]);
    shuffled.time_bin.push_back(v.time_bin[i]);
  }
  TcrOutput permuted = tcr_forward(fx.cfg, fx.store, c, shuffled);
  for (std::size_t i = 0; i < base.queries.size(); ++i)
    CHECK(permuted.queries.value_at(i) == doctest::Approx(base.queries.value_at(i)).epsilon(1e-9));

  // moving a frame to another time bin (same features, same kept sets)
  // changes the output: the temporal embedding carries order
  Rng rng(21);
  Tensor feats = Tensor::randn({6 * 4, fx.cfg.d_vis}, rng, 1.0);
  std::vector<double> times = {0.0, 0.4, 0.8, 1.2, 1.6, 2.0};
  std::vector<double> moved = {0.0, 0.7, 0.8, 1.2, 1.6, 2.0};
  VideoFeatureSequence v1 = build_video_sequence(feats, 6, 4, times, 5, fx.store, fx.cfg.n_bins);
  VideoFeatureSequence v2 = build_video_sequence(feats, 6, 4, moved, 5, fx.store, fx.cfg.n_bins);
  TcrOutput o1 = tcr_forward(fx.cfg, fx.store, c, v1);
  TcrOutput o2 = tcr_forward(fx.cfg, fx.store, c, v2);
  CHECK(o1.queries.values() != o2.queries.values());
}

TEST_CASE("full resampler gradients match finite differences") {
  // a healthy init scale keeps layer-norm curvature low enough for the
  // h=1e-3 central-difference oracle
  Fixture fx(0.25);
  Tensor feats;
  {
    Rng rng(33);
    feats = Tensor::randn({3 * 4, fx.cfg.d_vis}, rng, 1.0);
  }
  std::vector<double> times = {0.0, 0.5, 1.0};
  auto loss = [&]() {
    VideoFeatureSequence v = build_video_sequence(feats, 3, 4, times, 7, fx.store, fx.cfg.n_bins);
    TcrOutput out = tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Generative), v);
    Tensor q = mean_all(mul(out.queries, out.queries));
    Tensor t = mean_all(mul(out.text, out.text));
    Tensor p = mean_all(mul(out.projected, out.projected));
    return add(q, add(t, p));
  };
  auto rep = finite_diff_check(fx.store, loss, 80, 2024);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("width mismatch is rejected") {
  Fixture fx;
  VideoFeatureSequence bad;
  Rng rng(1);
  bad.tokens = Tensor::randn({5, fx.cfg.d_vis + 1}, rng, 1.0);
  bad.frame_index.assign(5, 0);
  bad.kept_patch = {0, 1, 2, 3, 4};
  bad.time_bin.assign(5, 0);
  CHECK_THROWS_AS(tcr_forward(fx.cfg, fx.store, fx.cond(MaskScheme::Generative), bad), std::invalid_argument);
}

TEST_CASE("cost profile: linear cross term, constant self term") {
  TcrConfig cfg = tiny_cfg();
  std::vector<CostRow> rows = compute_cost_profile(cfg, {0, 32, 64, 128}, 4);
  CHECK(rows[0].cross_attn_flops == 0);

  // self-attention cost does not depend on the frame count
  CHECK(rows[1].self_attn_flops == rows[2].self_attn_flops);
  CHECK(rows[2].self_attn_flops == rows[3].self_attn_flops);

  // cross-attention cost is affine in the video token count: the token-linear
  // part doubles exactly when tokens double
  const auto& r32 = rows[1];
  const auto& r64 = rows[2];
  const auto& r128 = rows[3];
  const double slope1 = static_cast<double>(r64.cross_attn_flops - r32.cross_attn_flops) /
                        static_cast<double>(r64.video_tokens - r32.video_tokens);
  const double slope2 = static_cast<double>(r128.cross_attn_flops - r64.cross_attn_flops) /
                        static_cast<double>(r128.video_tokens - r64.video_tokens);
  CHECK(slope1 == doctest::Approx(slope2).epsilon(1e-12));

  // monotone series on the desk grid
  std::vector<CostRow> desk = compute_cost_profile(cfg, {32, 92, 124}, 4);
  CHECK(desk[0].total_flops < desk[1].total_flops);
  CHECK(desk[1].total_flops < desk[2].total_flops);
}

TEST_CASE("param count matches a hand enumeration") {
  TcrConfig cfg;
  cfg.n_blocks = 1;
  cfg.n_heads = 1;
  cfg.d_model = 2;
  cfg.n_queries = 3;
  cfg.cross_attn_blocks = {0};
  cfg.d_vis = 5;
  cfg.d_lm = 7;
  cfg.d_time = 2;
  cfg.n_bins = 4;
  cfg.vocab_size = 11;

  const std::size_t d = 2;
  std::size_t expect = 0;
  expect += cfg.vocab_size * d;       // text embedding
  expect += cfg.n_queries * d;        // queries
  // cross attention: ln + wq/bq + wk/bk + wv/bv + wo/bo
  expect += 2 * d;
  expect += d * d + d + cfg.d_vis * d + d + cfg.d_vis * d + d + d * d + d;
  // self attention
  expect += 2 * d;
  expect += 4 * (d * d + d);
  // feed forward
  expect += 2 * d;
  expect += d * 4 * d + 4 * d + 4 * d * d + d;
  // final norm + lm projection + itc scale + itm head
  expect += 2 * d;
  expect += d * cfg.d_lm + cfg.d_lm;
  expect += 1;
  expect += d + 1;
  // temporal table + mlp to d_vis
  expect += cfg.n_bins * cfg.d_time + cfg.d_time * cfg.d_vis + cfg.d_vis;

  CHECK(param_count(cfg) == expect);
}

namespace {

// closed form mirroring the layer inventory; used as the scaling oracle
std::size_t closed_form_count(const TcrConfig& cfg) {
  const std::size_t d = cfg.d_model;
  std::size_t n = cfg.vocab_size * d + cfg.n_queries * d;
  n += cfg.cross_attn_blocks.size() * (2 * d + 2 * (d * d + d) + 2 * (cfg.d_vis * d + d));
  n += cfg.n_blocks * (2 * d + 4 * (d * d + d));
  n += cfg.n_blocks * (2 * d + 8 * d * d + 5 * d);
  n += 2 * d + d * cfg.d_lm + cfg.d_lm + 1 + d + 1;
  n += cfg.n_bins * cfg.d_time + cfg.d_time * cfg.d_vis + cfg.d_vis;
  return n;
}

}  // namespace

TEST_CASE("param count follows the closed form as width scales") {
  TcrConfig small = tiny_cfg();
  CHECK(param_count(small) == closed_form_count(small));

  TcrConfig large = small;
  large.d_model = 16;
  large.d_time = 8;
  CHECK(param_count(large) == closed_form_count(large));

  // attention weights alone quadruple when the width doubles
  const std::size_t attn_small = small.n_blocks * 4 * small.d_model * small.d_model;
  const std::size_t attn_large = large.n_blocks * 4 * large.d_model * large.d_model;
  CHECK(attn_large == 4 * attn_small);
}

TEST_CASE("paper preset parameter count") {
  TcrConfig preset = TcrConfig::paper_preset();
  const std::size_t count = param_count(preset);
  CHECK(count == closed_form_count(preset));
  MESSAGE("paper preset trainable scalars: ", count);
}
