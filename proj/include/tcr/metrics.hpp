#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "tcr/synth.hpp"

namespace tcr {

// ---- edit distance ----

template <typename T>
std::size_t levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Levenshtein distance over items divided by the gold length, clamped to 1.
template <typename T>
double normalized_edit_distance(const std::vector<T>& pred, const std::vector<T>& gold) {
  if (gold.empty()) throw std::invalid_argument("normalized_edit_distance: empty gold sequence");
  const double ed = static_cast<double>(levenshtein(pred, gold)) / static_cast<double>(gold.size());
  return std::min(1.0, ed);
}

struct LtaEditDistances {
  double verb_ed = 0.0;
  double noun_ed = 0.0;
  double action_ed = 0.0;
};

inline LtaEditDistances lta_edit_distances(const std::vector<ActionPair>& pred,
                                           const std::vector<ActionPair>& gold) {
  std::vector<std::size_t> pv, pn, gv, gn;
  std::vector<std::pair<std::size_t, std::size_t>> pa, ga;
  for (const ActionPair& a : pred) {
    pv.push_back(a.verb);
    pn.push_back(a.noun);
    pa.emplace_back(a.verb, a.noun);
  }
  for (const ActionPair& a : gold) {
    gv.push_back(a.verb);
    gn.push_back(a.noun);
    ga.emplace_back(a.verb, a.noun);
  }
  LtaEditDistances out;
  out.verb_ed = normalized_edit_distance(pv, gv);
  out.noun_ed = normalized_edit_distance(pn, gn);
  out.action_ed = normalized_edit_distance(pa, ga);
  return out;
}

// ---- temporal span metrics ----

inline double span_iou(double s1, double e1, double s2, double e2) {
  const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
  const double uni = std::max(e1, e2) - std::min(s1, s2);
  return uni > 0.0 ? inter / uni : 0.0;
}

struct ScoredSpan {
  double score = 0.0;
  double start = 0.0;
  double end = 0.0;
};

struct EpisodeSpans {
  std::vector<ScoredSpan> preds;
  std::vector<SpanSec> gold;
};

// AP at one tIoU threshold over the pooled, score-ranked prediction list.
// Each prediction matches the unmatched gold span (within its episode) of
// highest overlap; a match below the threshold is a false positive.
// AP = sum over ranks of (recall step) * precision-at-rank.
inline double ap_at_tiou(const std::vector<EpisodeSpans>& episodes, double threshold) {
  struct Flat {
    double score;
    std::size_t episode;
    std::size_t idx;
  };
  std::vector<Flat> flat;
  std::size_t n_gold = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    n_gold += episodes[e].gold.size();
    for (std::size_t i = 0; i < episodes[e].preds.size(); ++i)
      flat.push_back({episodes[e].preds[i].score, e, i});
  }
  if (n_gold == 0) throw std::invalid_argument("ap_at_tiou: no ground-truth spans");
  if (flat.empty()) return 0.0;
  std::stable_sort(flat.begin(), flat.end(), [](const Flat& a, const Flat& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> gold_used(episodes.size());
  for (std::size_t e = 0; e < episodes.size(); ++e) gold_used[e].assign(episodes[e].gold.size(), false);

  double ap = 0.0;
  std::size_t tp = 0;
  double prev_recall = 0.0;
  for (std::size_t rank = 0; rank < flat.size(); ++rank) {
    const Flat& f = flat[rank];
    const ScoredSpan& p = episodes[f.episode].preds[f.idx];
    double best_iou = 0.0;
    std::ptrdiff_t best_g = -1;
    const auto& gold = episodes[f.episode].gold;
    for (std::size_t g = 0; g < gold.size(); ++g) {
      if (gold_used[f.episode][g]) continue;
      const double iou = span_iou(p.start, p.end, gold[g].start, gold[g].end);
      if (iou > best_iou) {
        best_iou = iou;
        best_g = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best_g >= 0 && best_iou >= threshold) {
      gold_used[f.episode][static_cast<std::size_t>(best_g)] = true;
      ++tp;
      const double recall = static_cast<double>(tp) / static_cast<double>(n_gold);
      const double precision = static_cast<double>(tp) / static_cast<double>(rank + 1);
      ap += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
  }
  return ap;
}

struct MapReport {
  double avg_map = 0.0;
  double r_at1_tiou05 = 0.0;
  std::vector<double> per_threshold;
};

inline MapReport map_at_tiou(const std::vector<EpisodeSpans>& episodes,
                             const std::vector<double>& thresholds = {0.1, 0.2, 0.3, 0.4, 0.5}) {
  for (double t : thresholds)
    if (t <= 0.0 || t > 1.0) throw std::invalid_argument("map_at_tiou: thresholds must be in (0,1]");
  MapReport rep;
  for (double t : thresholds) rep.per_threshold.push_back(ap_at_tiou(episodes, t));
  rep.avg_map = std::accumulate(rep.per_threshold.begin(), rep.per_threshold.end(), 0.0) /
                static_cast<double>(rep.per_threshold.size());

  std::size_t hits = 0, counted = 0;
  for (const EpisodeSpans& ep : episodes) {
    if (ep.gold.empty()) continue;
    ++counted;
    if (ep.preds.empty()) continue;
    const ScoredSpan* top = &ep.preds[0];
    for (const ScoredSpan& p : ep.preds)
      if (p.score > top->score) top = &p;
    for (const SpanSec& g : ep.gold)
      if (span_iou(top->start, top->end, g.start, g.end) >= 0.5) {
        ++hits;
        break;
      }
  }
  rep.r_at1_tiou05 = counted == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(counted);
  return rep;
}

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_of: empty");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace tcr
