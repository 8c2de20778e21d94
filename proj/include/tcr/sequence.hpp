#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tcr/params.hpp"
#include "tcr/tensor.hpp"
#include "tcr/time_codec.hpp"
#include "tcr/vocab.hpp"

namespace tcr {

enum class MaskScheme { Contrastive, Matching, Generative };

// Flattened per-patch visual tokens with temporal embeddings already added.
// Odd-indexed frames keep only floor(P/2) randomly chosen patches.
struct VideoFeatureSequence {
  Tensor tokens;  // [N x d_vis]
  std::vector<std::size_t> frame_index;
  std::vector<std::size_t> kept_patch;
  std::vector<std::size_t> time_bin;

  std::size_t count() const { return frame_index.size(); }
};

inline std::size_t video_token_count(std::size_t frames, std::size_t patches) {
  const std::size_t even = (frames + 1) / 2, odd = frames / 2;
  return even * patches + odd * (patches / 2);
}

// features: [F*P x d_vis], row-major by frame. Patch selection is drawn per
// frame from a counter PRNG keyed by (seed, frame), so the kept sets do not
// depend on evaluation order.
inline VideoFeatureSequence build_video_sequence(const Tensor& features, std::size_t frames, std::size_t patches,
                                                 const std::vector<double>& timestamps, std::uint64_t seed,
                                                 const ParameterStore& store, std::size_t n_bins = 2048,
                                                 double bin_width = 0.5) {
  if (frames < 1) throw std::invalid_argument("build_video_sequence: need at least one frame");
  if (timestamps.size() != frames) throw std::invalid_argument("build_video_sequence: timestamp count mismatch");
  for (std::size_t i = 1; i < frames; ++i)
    if (timestamps[i] < timestamps[i - 1])
      throw std::invalid_argument("build_video_sequence: decreasing timestamps");
  if (features.rank() != 2 || features.dim(0) != frames * patches)
    throw std::invalid_argument("build_video_sequence: feature rows != frames * patches");

  VideoFeatureSequence seq;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> frame_bins(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    frame_bins[f] = tokenize_time(timestamps[f], n_bins, bin_width).index;
    std::vector<std::size_t> kept;
    if (f % 2 == 0) {
      kept.resize(patches);
      for (std::size_t p = 0; p < patches; ++p) kept[p] = p;
    } else {
      Rng rng(seed, 0xD60B, f);
      kept = rng.sample_without_replacement(patches, patches / 2);
    }
    for (std::size_t p : kept) {
      rows.push_back(f * patches + p);
      seq.frame_index.push_back(f);
      seq.kept_patch.push_back(p);
      seq.time_bin.push_back(frame_bins[f]);
    }
  }
  Tensor gathered = gather_rows(features, rows);
  Tensor frame_emb = temporal_embeddings(store, frame_bins);  // [F x d_vis]
  Tensor token_emb = gather_rows(frame_emb, seq.frame_index);
  seq.tokens = add(gathered, token_emb);
  return seq;
}

// Task special token + conditioning text + learnable query slots.
struct ConditioningSequence {
  std::size_t task_token = 0;
  std::vector<std::size_t> text;
  std::size_t n_queries = 0;
  MaskScheme scheme = MaskScheme::Generative;

  std::size_t text_len() const { return 1 + text.size(); }  // task token included
};

inline ConditioningSequence build_conditioning_sequence(TaskId task, std::vector<std::size_t> text,
                                                        std::size_t n_queries, const Vocabulary& vocab,
                                                        MaskScheme scheme = MaskScheme::Generative) {
  if (!vocab.contains(task_token(task))) throw std::invalid_argument("task token not in vocabulary");
  for (std::size_t id : text)
    if (id >= vocab.size()) throw std::invalid_argument("conditioning text id out of vocabulary");
  ConditioningSequence seq;
  seq.task_token = vocab.task_id(task);
  seq.text = std::move(text);
  seq.n_queries = n_queries;
  seq.scheme = scheme;
  return seq;
}

// Language-model input: <BOS>, projected query vectors, context tokens and
// (during training) target tokens. Loss covers only target positions.
struct LMInput {
  Tensor prefix;  // [Q x d_lm]; undefined for text-only sequences
  std::vector<std::size_t> context;
  std::vector<std::size_t> targets;

  std::size_t prefix_len() const { return prefix.defined() ? prefix.dim(0) : 0; }
  std::size_t length() const { return 1 + prefix_len() + context.size() + targets.size(); }
};

inline LMInput build_lm_input(const Tensor& query_outputs, std::size_t expected_queries,
                              std::vector<std::size_t> context, std::vector<std::size_t> targets = {}) {
  if (!query_outputs.defined() || query_outputs.rank() != 2 || query_outputs.dim(0) != expected_queries)
    throw std::invalid_argument("build_lm_input: query count mismatch");
  LMInput in;
  in.prefix = query_outputs;
  in.context = std::move(context);
  in.targets = std::move(targets);
  return in;
}

}  // namespace tcr
