#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcr/encoder_stub.hpp"
#include "tcr/lm.hpp"
#include "tcr/params.hpp"
#include "tcr/resampler.hpp"
#include "tcr/sequence.hpp"
#include "tcr/synth.hpp"
#include "tcr/vocab.hpp"

namespace tcr {

// One video-text pair for the initialisation losses.
struct VideoTextPair {
  VideoFeatureSequence video;
  std::vector<std::size_t> text;
};

namespace detail {

inline Tensor l2_normalize(const Tensor& x) {
  Tensor norm = sqrt_t(add_scalar(sum_all(mul(x, x)), 1e-12));
  return mul_scalar_t(x, reciprocal(norm));
}

}  // namespace detail

// Maximum cosine similarity between a text vector and any query vector;
// the argmax is chosen on values, the gradient flows through that query.
inline Tensor best_query_similarity(const Tensor& text_rep, const Tensor& queries) {
  const std::size_t q = queries.dim(0);
  Tensor tn = detail::l2_normalize(text_rep);
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t k = 0; k < q; ++k) {
    double dotv = 0.0, qq = 0.0;
    for (std::size_t j = 0; j < queries.dim(1); ++j) {
      const double qv = queries.value_at(k * queries.dim(1) + j);
      dotv += qv * tn.value_at(j);
      qq += qv * qv;
    }
    const double sim = dotv / std::sqrt(qq + 1e-12);
    if (sim > best_sim) {
      best_sim = sim;
      best = k;
    }
  }
  Tensor qbest = detail::l2_normalize(row_get(queries, best));
  return dot(tn, qbest);
}

// Video-text contrastive loss. Under the contrastive mask the text
// representation depends only on the text and the query outputs only on the
// video, so each is computed once per example. The pairwise score is the
// best-query cosine similarity scaled by a learnable temperature; symmetric
// InfoNCE against in-batch negatives.
inline Tensor itc_loss(const TcrConfig& cfg, const ParameterStore& store, const std::vector<VideoTextPair>& batch,
                       const Vocabulary& vocab) {
  if (batch.empty()) throw std::invalid_argument("itc_loss: empty batch");
  const std::size_t b = batch.size();
  std::vector<Tensor> text_reps, query_reps;
  for (const VideoTextPair& pair : batch) {
    ConditioningSequence cond =
        build_conditioning_sequence(TaskId::Cpn, pair.text, cfg.n_queries, vocab, MaskScheme::Contrastive);
    TcrOutput out = tcr_forward(cfg, store, cond, pair.video);
    text_reps.push_back(mean_rows(out.text));
    query_reps.push_back(out.queries);
  }
  Tensor logit_scale = exp_t(store.get("tcr/itc/logit_scale"));
  std::vector<Tensor> scores(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      scores[i * b + j] = mul_scalar_t(best_query_similarity(text_reps[i], query_reps[j]), logit_scale);

  std::vector<Tensor> row_losses;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Tensor> row(scores.begin() + static_cast<std::ptrdiff_t>(i * b),
                            scores.begin() + static_cast<std::ptrdiff_t>((i + 1) * b));
    Tensor logits = reshape(stack_scalars(row), {1, b});
    row_losses.push_back(cross_entropy(logits, {i}));  // text i -> video i
    std::vector<Tensor> col;
    for (std::size_t k = 0; k < b; ++k) col.push_back(scores[k * b + i]);
    Tensor col_logits = reshape(stack_scalars(col), {1, b});
    row_losses.push_back(cross_entropy(col_logits, {i}));  // video i -> text i
  }
  return mean_all(stack_scalars(row_losses));
}

// Matching score: the per-query binary classifier probabilities averaged
// into one score in (0, 1).
inline Tensor itm_score(const TcrConfig& cfg, const ParameterStore& store, const VideoFeatureSequence& video,
                        const std::vector<std::size_t>& text, const Vocabulary& vocab) {
  ConditioningSequence cond =
      build_conditioning_sequence(TaskId::Cpn, text, cfg.n_queries, vocab, MaskScheme::Matching);
  TcrOutput out = tcr_forward(cfg, store, cond, video);
  Tensor logits = add(matmul(out.queries, store.get("tcr/itm/w")), store.get("tcr/itm/b"));
  Tensor probs = sigmoid(logits);
  return mean_all(probs);
}

// Video-text matching loss: binary cross-entropy over the positives plus
// one in-batch negative video per text and one negative text per video.
inline Tensor itm_loss(const TcrConfig& cfg, const ParameterStore& store, const std::vector<VideoTextPair>& batch,
                       const Vocabulary& vocab, std::uint64_t seed) {
  if (batch.size() < 2) throw std::invalid_argument("itm_loss: need at least 2 examples for negatives");
  const std::size_t b = batch.size();
  Rng rng(seed, 0x17B);
  std::vector<Tensor> terms;
  auto bce = [](const Tensor& score, bool positive) {
    Tensor s = clamp(score, 1e-12, 1.0 - 1e-12);
    return positive ? neg(log_t(s)) : neg(log_t(add_scalar(neg(s), 1.0)));
  };
  for (std::size_t i = 0; i < b; ++i) {
    terms.push_back(bce(itm_score(cfg, store, batch[i].video, batch[i].text, vocab), true));
    const std::size_t neg_video = (i + 1 + rng.next_below(b - 1)) % b;
    terms.push_back(bce(itm_score(cfg, store, batch[neg_video].video, batch[i].text, vocab), false));
    const std::size_t neg_text = (i + 1 + rng.next_below(b - 1)) % b;
    terms.push_back(bce(itm_score(cfg, store, batch[i].video, batch[neg_text].text, vocab), false));
  }
  return mean_all(stack_scalars(terms));
}

// Pre-training example: condition (resampler input), context (LM input),
// target (LM supervision).
struct PretrainExample {
  TaskId task = TaskId::Cpn;
  std::vector<std::size_t> condition_text;  // after the task token
  std::vector<std::size_t> context;
  std::vector<std::size_t> target;
};

enum class PretrainTask { Caption, Ground, Denoise };

inline const char* pretrain_task_name(PretrainTask t) {
  switch (t) {
    case PretrainTask::Caption: return "caption";
    case PretrainTask::Ground: return "ground";
    case PretrainTask::Denoise: return "denoise";
  }
  return "?";
}

// Formats, with [s]/[e] the segment's time tokens:
//   caption: cond "[CPN][s][e]"            ctx "What happens from [s] to [e] ?"        tgt caption
//   ground:  cond "[TRG] <caption>"        ctx "Reconstruct following sentence : [MASK] [MASK] <caption>"
//                                          tgt "[s][e] <caption>"
//   denoise: cond "[CPN][s][e]"            ctx "[s][e] <caption corrupted>"            tgt caption
// Denoising corruption: 30% token masking plus a contiguous span mask with
// probability 0.5.
inline PretrainExample make_pretrain_example(PretrainTask task, const SyntheticEpisode& episode,
                                             const Vocabulary& vocab, std::uint64_t seed, double mask_rate = 0.3) {
  if (episode.segments.empty()) throw std::invalid_argument("make_pretrain_example: episode has no segments");
  Rng rng(seed, 0x9E7);
  const GrammarConfig& g = vocab.grammar();
  const Segment& seg = episode.segments[rng.next_below(episode.segments.size())];
  const std::size_t s_tok = vocab.time_token_id(tokenize_time(seg.start, g.n_bins, g.bin_width).index);
  const std::size_t e_tok = vocab.time_token_id(tokenize_time(seg.end, g.n_bins, g.bin_width).index);
  const std::vector<std::size_t> caption = vocab.encode(seg.caption);

  PretrainExample ex;
  switch (task) {
    case PretrainTask::Caption: {
      ex.task = TaskId::Cpn;
      ex.condition_text = {s_tok, e_tok};
      ex.context = vocab.encode("What happens from");
      ex.context.push_back(s_tok);
      ex.context.push_back(vocab.id("to"));
      ex.context.push_back(e_tok);
      ex.context.push_back(vocab.id("?"));
      ex.target = caption;
      break;
    }
    case PretrainTask::Ground: {
      ex.task = TaskId::Trg;
      ex.condition_text = caption;
      ex.context = vocab.encode("Reconstruct following sentence :");
      ex.context.push_back(vocab.mask_id());
      ex.context.push_back(vocab.mask_id());
      for (std::size_t id : caption) ex.context.push_back(id);
      ex.target = {s_tok, e_tok};
      for (std::size_t id : caption) ex.target.push_back(id);
      break;
    }
    case PretrainTask::Denoise: {
      ex.task = TaskId::Cpn;
      ex.condition_text = {s_tok, e_tok};
      std::vector<std::size_t> corrupted = caption;
      for (std::size_t& id : corrupted)
        if (rng.next_double() < mask_rate) id = vocab.mask_id();
      if (!corrupted.empty() && rng.next_double() < 0.5) {
        const std::size_t span = 1 + rng.next_below(std::max<std::size_t>(corrupted.size() / 2, 1));
        const std::size_t at = rng.next_below(corrupted.size() - std::min(span, corrupted.size()) + 1);
        for (std::size_t i = at; i < std::min(at + span, corrupted.size()); ++i) corrupted[i] = vocab.mask_id();
      }
      ex.context = {s_tok, e_tok};
      for (std::size_t id : corrupted) ex.context.push_back(id);
      ex.target = caption;
      break;
    }
  }
  return ex;
}

// Generative loss: cross-entropy of the target under the frozen LM
// conditioned on the projected queries and the context. Gradients reach only
// the resampler side.
inline Tensor generative_loss(const TcrConfig& cfg, const LmConfig& lm_cfg, const ParameterStore& store,
                              const PretrainExample& ex, const VideoFeatureSequence& video, const Vocabulary& vocab,
                              MaskScheme scheme = MaskScheme::Generative) {
  if (ex.target.empty()) throw std::invalid_argument("generative_loss: empty target");
  ConditioningSequence cond = build_conditioning_sequence(ex.task, ex.condition_text, cfg.n_queries, vocab, scheme);
  TcrOutput out = tcr_forward(cfg, store, cond, video);
  LMInput in = build_lm_input(out.projected, cfg.n_queries, ex.context, ex.target);
  return lm_target_loss(lm_cfg, store, in, vocab.bos_id());
}

// Per-task dataset weights for gradient accumulation.
struct TaskWeighting {
  double caption = 1.0;
  double ground = 0.5;
  double denoise = 0.5;

  double weight(PretrainTask t) const {
    switch (t) {
      case PretrainTask::Caption: return caption;
      case PretrainTask::Ground: return ground;
      case PretrainTask::Denoise: return denoise;
    }
    return 0.0;
  }
};

struct MultitaskStepResult {
  std::vector<double> task_losses;
  double grad_norm = 0.0;
  double lr = 0.0;
};

// One optimizer step over several task batches: gradients accumulate as
// sum_k w_k * grad_k, then a single clipped AdamW update.
inline MultitaskStepResult multitask_step(ParameterStore& params, AdamW& opt,
                                          const std::vector<std::function<Tensor()>>& task_losses,
                                          const std::vector<double>& weights) {
  if (task_losses.empty()) throw std::invalid_argument("multitask_step: no task batches");
  if (weights.size() != task_losses.size()) throw std::invalid_argument("multitask_step: weight count mismatch");
  double total_weight = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("multitask_step: negative weight");
    total_weight += w;
  }
  if (total_weight == 0.0) throw std::invalid_argument("multitask_step: all weights zero");

  MultitaskStepResult res;
  params.zero_grad();
  res.lr = opt.current_lr();
  for (std::size_t k = 0; k < task_losses.size(); ++k) {
    Tensor loss = task_losses[k]();
    res.task_losses.push_back(loss.scalar_value());
    if (weights[k] != 0.0) backward(scale(loss, weights[k]));
  }
  res.grad_norm = opt.step(params);
  return res;
}

}  // namespace tcr
