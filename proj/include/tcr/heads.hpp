#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

#include "tcr/metrics.hpp"
#include "tcr/params.hpp"
#include "tcr/resampler.hpp"
#include "tcr/tensor.hpp"

namespace tcr {

// ---- text-conditioned frame selection (one-vs-all per frame position) ----

struct SelectionHeadConfig {
  std::size_t n_frames = 128;
  std::size_t d_model = 64;
};

inline void init_selection_head(ParameterStore& store, const SelectionHeadConfig& cfg, std::uint64_t seed) {
  Rng rng(seed, 0x5E1);
  store.create("heads/select/w", Tensor::randn({cfg.d_model, cfg.n_frames}, rng, 0.02, true));
  store.create("heads/select/b", Tensor::zeros({cfg.n_frames}, true));
}

// Per-(query, frame) probabilities, shape [Q x n_frames].
inline Tensor selection_scores(const ParameterStore& store, const Tensor& query_outputs) {
  return sigmoid(add(matmul(query_outputs, store.get("heads/select/w")), store.get("heads/select/b")));
}

// Union rule: frame j is predicted if any query scores it above 0.5.
inline std::set<std::size_t> select_frames(const ParameterStore& store, const Tensor& query_outputs) {
  Tensor scores = selection_scores(store, query_outputs);
  std::set<std::size_t> out;
  const std::size_t q = scores.dim(0), f = scores.dim(1);
  for (std::size_t k = 0; k < q; ++k)
    for (std::size_t j = 0; j < f; ++j)
      if (scores.value_at(k * f + j) > 0.5) out.insert(j);
  return out;
}

// BCE over all (query, frame) pairs against the ground-truth frame set.
inline Tensor selection_loss(const ParameterStore& store, const Tensor& query_outputs,
                             const std::vector<std::size_t>& gt_frames, std::size_t n_frames) {
  Tensor scores = selection_scores(store, query_outputs);
  std::vector<std::uint8_t> positive(n_frames, 0);
  for (std::size_t j : gt_frames) {
    if (j >= n_frames) throw std::invalid_argument("selection_loss: frame id out of range");
    positive[j] = 1;
  }
  const std::size_t q = scores.dim(0);
  Tensor s = clamp(scores, 1e-12, 1.0 - 1e-12);
  std::vector<double> sign(q * n_frames), offs(q * n_frames);
  for (std::size_t k = 0; k < q; ++k)
    for (std::size_t j = 0; j < n_frames; ++j) {
      // -log(s) for positives, -log(1-s) for negatives
      sign[k * n_frames + j] = positive[j] ? 1.0 : -1.0;
      offs[k * n_frames + j] = positive[j] ? 0.0 : 1.0;
    }
  Tensor arg = add(mul(s, Tensor::from({q, n_frames}, sign)), Tensor::from({q, n_frames}, offs));
  return neg(mean_all(log_t(arg)));
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline PrecisionRecall selection_prf(const std::set<std::size_t>& pred, const std::set<std::size_t>& gt) {
  std::size_t tp = 0;
  for (std::size_t j : pred) tp += gt.count(j);
  PrecisionRecall r;
  r.precision = pred.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(pred.size());
  r.recall = gt.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(gt.size());
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

// ---- query-averaged classification ----

struct ClassHeadConfig {
  std::size_t n_classes = 16;
  std::size_t d_model = 64;
};

inline void init_class_head(ParameterStore& store, const ClassHeadConfig& cfg, std::uint64_t seed) {
  Rng rng(seed, 0xC1A);
  store.create("heads/class/w", Tensor::randn({cfg.d_model, cfg.n_classes}, rng, 0.02, true));
  store.create("heads/class/b", Tensor::zeros({cfg.n_classes}, true));
}

// Unweighted mean of the per-query softmax vectors; sums to 1.
inline Tensor classify(const ParameterStore& store, const Tensor& query_outputs) {
  Tensor logits = add(matmul(query_outputs, store.get("heads/class/w")), store.get("heads/class/b"));
  return mean_rows(softmax(logits));
}

inline Tensor classification_loss(const ParameterStore& store, const Tensor& query_outputs, std::size_t label) {
  Tensor probs = classify(store, query_outputs);
  if (label >= probs.size()) throw std::invalid_argument("classification_loss: label out of range");
  Tensor p = row_get(reshape(probs, {probs.size(), 1}), label);
  return neg(log_t(clamp(p, 1e-12, 1.0)));
}

// ---- span regression head ----

struct SpanHeadConfig {
  std::size_t d_model = 64;
  std::size_t d_hidden = 32;
};

inline void init_span_head(ParameterStore& store, const SpanHeadConfig& cfg, std::uint64_t seed) {
  Rng rng(seed, 0x59A);
  store.create("heads/span/w1", Tensor::randn({cfg.d_model, cfg.d_hidden}, rng, 0.1, true));
  store.create("heads/span/b1", Tensor::zeros({cfg.d_hidden}, true));
  store.create("heads/span/w2", Tensor::randn({cfg.d_hidden, 3}, rng, 0.1, true));
  store.create("heads/span/b2", Tensor::zeros({3}, true));
}

// Per query: (presence prob, start, end) with start <= end guaranteed by
// the squashing reparameterization start = s(a), end = start + (1-start)*s(b).
struct SpanPrediction {
  double score = 0.0;
  double start = 0.0;
  double end = 0.0;
};

// Raw head outputs as tensors, one row per query: [presence_logit, a, b].
inline Tensor span_head_raw(const ParameterStore& store, const Tensor& query_outputs) {
  Tensor h = gelu(add(matmul(query_outputs, store.get("heads/span/w1")), store.get("heads/span/b1")));
  return add(matmul(h, store.get("heads/span/w2")), store.get("heads/span/b2"));
}

inline std::vector<SpanPrediction> decode_spans(const Tensor& raw) {
  std::vector<SpanPrediction> out;
  const std::size_t q = raw.dim(0);
  for (std::size_t k = 0; k < q; ++k) {
    const double logit = raw.value_at(k * 3 + 0);
    const double a = raw.value_at(k * 3 + 1);
    const double b = raw.value_at(k * 3 + 2);
    SpanPrediction sp;
    sp.score = 1.0 / (1.0 + std::exp(-logit));
    sp.start = 1.0 / (1.0 + std::exp(-a));
    sp.end = sp.start + (1.0 - sp.start) / (1.0 + std::exp(-b));
    out.push_back(sp);
  }
  return out;
}

// Spans above threshold, sorted by score descending (stable on ties).
inline std::vector<SpanPrediction> predict_spans(const ParameterStore& store, const Tensor& query_outputs,
                                                 double threshold) {
  std::vector<SpanPrediction> all = decode_spans(span_head_raw(store, query_outputs));
  std::vector<SpanPrediction> kept;
  for (const SpanPrediction& s : all)
    if (s.score > threshold) kept.push_back(s);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const SpanPrediction& x, const SpanPrediction& y) { return x.score > y.score; });
  return kept;
}

enum class SpanMatching { Greedy, Exhaustive };

// One-to-one assignment of queries to ground-truth spans. Greedy: best IoU
// first. Exhaustive: optimal total-IoU assignment over all query subsets
// (ground-truth counts are small).
inline std::vector<std::ptrdiff_t> match_spans(const std::vector<SpanPrediction>& preds,
                                               const std::vector<std::pair<double, double>>& gt,
                                               SpanMatching mode = SpanMatching::Greedy) {
  std::vector<std::ptrdiff_t> assign(gt.size(), -1);
  if (preds.empty() || gt.empty()) return assign;
  if (mode == SpanMatching::Greedy) {
    std::vector<bool> used(preds.size(), false);
    struct Cand {
      double iou;
      std::size_t g, p;
    };
    std::vector<Cand> cands;
    for (std::size_t g = 0; g < gt.size(); ++g)
      for (std::size_t p = 0; p < preds.size(); ++p)
        cands.push_back({span_iou(preds[p].start, preds[p].end, gt[g].first, gt[g].second), g, p});
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.iou > b.iou; });
    for (const Cand& c : cands)
      if (assign[c.g] < 0 && !used[c.p]) {
        assign[c.g] = static_cast<std::ptrdiff_t>(c.p);
        used[c.p] = true;
      }
    return assign;
  }
  // exhaustive optimal assignment by recursion over ground-truth spans
  std::vector<std::ptrdiff_t> best(gt.size(), -1);
  double best_total = -1.0;
  std::vector<std::ptrdiff_t> cur(gt.size(), -1);
  std::vector<bool> used(preds.size(), false);
  auto rec = [&](auto&& self, std::size_t g, double total) -> void {
    if (g == gt.size()) {
      if (total > best_total) {
        best_total = total;
        best = cur;
      }
      return;
    }
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (used[p]) continue;
      used[p] = true;
      cur[g] = static_cast<std::ptrdiff_t>(p);
      self(self, g + 1, total + span_iou(preds[p].start, preds[p].end, gt[g].first, gt[g].second));
      used[p] = false;
      cur[g] = -1;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

// Presence BCE on every query plus L1 span regression on matched pairs.
inline Tensor span_loss(const ParameterStore& store, const Tensor& query_outputs,
                        const std::vector<std::pair<double, double>>& gt_normalized,
                        SpanMatching mode = SpanMatching::Greedy) {
  Tensor raw = span_head_raw(store, query_outputs);
  std::vector<SpanPrediction> decoded = decode_spans(raw);
  std::vector<std::ptrdiff_t> assign = match_spans(decoded, gt_normalized, mode);
  const std::size_t q = raw.dim(0);
  std::vector<bool> matched(q, false);
  std::vector<Tensor> terms;
  Tensor presence_logits = slice_cols(raw, 0, 1);
  Tensor presence = clamp(sigmoid(presence_logits), 1e-12, 1.0 - 1e-12);
  for (std::size_t g = 0; g < assign.size(); ++g) {
    if (assign[g] < 0) continue;
    const std::size_t p = static_cast<std::size_t>(assign[g]);
    matched[p] = true;
    Tensor row = row_get(raw, p);                      // [3]
    Tensor ab = reshape(slice_cols(reshape(row, {1, 3}), 1, 3), {2});
    Tensor s = sigmoid(row_get(reshape(ab, {2, 1}), 0));  // start
    Tensor bsig = sigmoid(row_get(reshape(ab, {2, 1}), 1));
    Tensor e = add(s, mul(add_scalar(neg(s), 1.0), bsig));
    Tensor ds = add_scalar(s, -gt_normalized[g].first);
    Tensor de = add_scalar(e, -gt_normalized[g].second);
    // |x| with a smooth-free subgradient: sqrt(x^2 + tiny)
    terms.push_back(sqrt_t(add_scalar(mul(ds, ds), 1e-12)));
    terms.push_back(sqrt_t(add_scalar(mul(de, de), 1e-12)));
  }
  for (std::size_t p = 0; p < q; ++p) {
    Tensor sp = row_get(presence, p);
    terms.push_back(matched[p] ? neg(log_t(sp)) : neg(log_t(add_scalar(neg(sp), 1.0))));
  }
  return mean_all(stack_scalars(terms));
}

}  // namespace tcr
