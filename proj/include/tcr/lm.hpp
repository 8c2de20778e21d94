#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcr/params.hpp"
#include "tcr/sequence.hpp"
#include "tcr/tensor.hpp"
#include "tcr/vocab.hpp"

namespace tcr {

// Tiny decoder-only transformer standing in for the frozen language model.
// It accepts continuous prefix vectors alongside token embeddings, which is
// the bridging contract the resampler trains against.
struct LmConfig {
  std::size_t d_lm = 48;
  std::size_t n_blocks = 2;
  std::size_t n_heads = 4;
  std::size_t max_seq = 192;
  std::size_t vocab_size = 0;
  double init_std = 0.02;

  void validate() const {
    if (d_lm % n_heads != 0) throw std::invalid_argument("lm config: d_lm not divisible by n_heads");
    if (vocab_size == 0) throw std::invalid_argument("lm config: vocab_size unset");
  }
};

inline void init_lm_params(ParameterStore& store, const LmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, 0x11A);
  const std::size_t d = cfg.d_lm;
  auto mat = [&](Shape s) { return Tensor::randn(std::move(s), rng, cfg.init_std, true); };
  store.create("lm/embed", mat({cfg.vocab_size, d}));
  store.create("lm/pos", mat({cfg.max_seq, d}));
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const std::string base = "lm/block" + std::to_string(b);
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
  store.create("lm/final/ln_g", Tensor::full({d}, 1.0, true));
  store.create("lm/final/ln_b", Tensor::zeros({d}, true));
  store.create("lm/head/w", mat({d, cfg.vocab_size}));
  store.create("lm/head/b", Tensor::zeros({cfg.vocab_size}, true));
}

namespace detail {

inline std::vector<std::uint8_t> causal_mask(std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  return m;
}

inline Tensor lm_attention(const ParameterStore& store, const std::string& base, std::size_t n_heads,
                           const Tensor& x, const std::vector<std::uint8_t>& mask) {
  const std::size_t d = x.dim(1);
  const std::size_t dh = d / n_heads;
  Tensor q = add(matmul(x, store.get(base + "/wq")), store.get(base + "/bq"));
  Tensor k = add(matmul(x, store.get(base + "/wk")), store.get(base + "/bk"));
  Tensor v = add(matmul(x, store.get(base + "/wv")), store.get(base + "/bv"));
  std::vector<Tensor> heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor probs = masked_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), mask);
    heads.push_back(matmul(probs, vh));
  }
  Tensor ctx = n_heads == 1 ? heads[0] : concat_cols(heads);
  return add(matmul(ctx, store.get(base + "/wo")), store.get(base + "/bo"));
}

}  // namespace detail

// Final hidden states [L x d_lm] for <BOS> | prefix | context | targets.
inline Tensor lm_hidden(const LmConfig& cfg, const ParameterStore& store, const LMInput& input,
                        std::size_t bos_id) {
  cfg.validate();
  const std::size_t len = input.length();
  if (len > cfg.max_seq) throw std::invalid_argument("lm: sequence length exceeds max_seq");
  if (input.prefix.defined() && input.prefix.dim(1) != cfg.d_lm)
    throw std::invalid_argument("lm: prefix width != d_lm");

  const Tensor& embed = store.get("lm/embed");
  std::vector<std::size_t> tail_ids;
  tail_ids.reserve(1 + input.context.size() + input.targets.size());
  tail_ids.push_back(bos_id);
  for (std::size_t id : input.context) tail_ids.push_back(id);
  for (std::size_t id : input.targets) tail_ids.push_back(id);

  Tensor bos_row = gather_rows(embed, {tail_ids[0]});
  std::vector<Tensor> parts = {bos_row};
  if (input.prefix_len() > 0) parts.push_back(input.prefix);
  if (tail_ids.size() > 1)
    parts.push_back(gather_rows(embed, std::vector<std::size_t>(tail_ids.begin() + 1, tail_ids.end())));
  Tensor x = parts.size() == 1 ? parts[0] : concat_rows(parts);

  std::vector<std::size_t> pos_ids(len);
  for (std::size_t i = 0; i < len; ++i) pos_ids[i] = i;
  x = add(x, gather_rows(store.get("lm/pos"), pos_ids));

  const std::vector<std::uint8_t> mask = detail::causal_mask(len);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const std::string base = "lm/block" + std::to_string(b);
    Tensor normed = layer_norm(x, store.get(base + "/sa/ln_g"), store.get(base + "/sa/ln_b"));
    x = add(x, detail::lm_attention(store, base + "/sa", cfg.n_heads, normed, mask));
    Tensor ff_in = layer_norm(x, store.get(base + "/ff/ln_g"), store.get(base + "/ff/ln_b"));
    Tensor h = gelu(add(matmul(ff_in, store.get(base + "/ff/w1")), store.get(base + "/ff/b1")));
    x = add(x, add(matmul(h, store.get(base + "/ff/w2")), store.get(base + "/ff/b2")));
  }
  return layer_norm(x, store.get("lm/final/ln_g"), store.get("lm/final/ln_b"));
}

// Full-sequence logits [L x V].
inline Tensor lm_logits(const LmConfig& cfg, const ParameterStore& store, const LMInput& input,
                        std::size_t bos_id) {
  Tensor hidden = lm_hidden(cfg, store, input, bos_id);
  return add(matmul(hidden, store.get("lm/head/w")), store.get("lm/head/b"));
}

// Mean NLL of the target tokens given <BOS> | prefix | context. The
// vocabulary head only runs on the predicting rows.
inline Tensor lm_target_loss(const LmConfig& cfg, const ParameterStore& store, const LMInput& input,
                             std::size_t bos_id) {
  if (input.targets.empty()) throw std::invalid_argument("lm_target_loss: empty target");
  Tensor hidden = lm_hidden(cfg, store, input, bos_id);
  const std::size_t len = input.length();
  const std::size_t t = input.targets.size();
  // position p predicts token p+1; target positions are the last t tokens
  Tensor pred = slice_rows(hidden, len - t - 1, len - 1);
  Tensor logits = add(matmul(pred, store.get("lm/head/w")), store.get("lm/head/b"));
  return cross_entropy(logits, input.targets);
}

// Next-token loss over a plain token sequence (stage-0 text training).
inline Tensor lm_textonly_loss(const LmConfig& cfg, const ParameterStore& store,
                               const std::vector<std::size_t>& sentence, std::size_t bos_id, std::size_t eos_id) {
  LMInput in;
  in.context = {};
  in.targets = sentence;
  in.targets.push_back(eos_id);
  return lm_target_loss(cfg, store, in, bos_id);
}

struct LmTrainReport {
  double final_loss = 0.0;
  double heldout_perplexity = 0.0;
  std::size_t steps = 0;
};

inline double lm_perplexity(const LmConfig& cfg, const ParameterStore& store,
                            const std::vector<std::vector<std::size_t>>& sentences, std::size_t bos_id,
                            std::size_t eos_id) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : sentences) {
    total += lm_textonly_loss(cfg, store, s, bos_id, eos_id).scalar_value() * static_cast<double>(s.size() + 1);
    count += s.size() + 1;
  }
  return std::exp(total / static_cast<double>(count));
}

// Stage-0: trains the stub on the synthetic corpus, then the caller freezes
// it. Throws on divergence.
inline LmTrainReport train_toy_lm(ParameterStore& store, const LmConfig& cfg,
                                  const std::vector<std::vector<std::size_t>>& corpus,
                                  const std::vector<std::vector<std::size_t>>& heldout, std::size_t bos_id,
                                  std::size_t eos_id, std::size_t steps, std::size_t batch = 8, double lr = 2e-3,
                                  std::uint64_t seed = 1, const std::function<void(std::size_t, double)>& on_step = {}) {
  if (corpus.empty()) throw std::invalid_argument("train_toy_lm: empty corpus");
  AdamW opt({.lr = lr, .weight_decay = 0.01, .clip_norm = 1.0, .warmup_steps = steps / 20, .total_steps = steps});
  Rng rng(seed, 0x57A6E0);
  LmTrainReport rep;
  for (std::size_t step = 0; step < steps; ++step) {
    store.zero_grad();
    std::vector<Tensor> losses;
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& s = corpus[rng.next_below(corpus.size())];
      losses.push_back(lm_textonly_loss(cfg, store, s, bos_id, eos_id));
    }
    Tensor loss = mean_all(stack_scalars(losses));
    rep.final_loss = loss.scalar_value();
    if (!std::isfinite(rep.final_loss)) throw std::runtime_error("train_toy_lm: loss diverged to non-finite");
    backward(loss);
    opt.step(store);
    if (on_step) on_step(step, rep.final_loss);
  }
  rep.steps = steps;
  rep.heldout_perplexity = heldout.empty() ? std::exp(rep.final_loss)
                                           : lm_perplexity(cfg, store, heldout, bos_id, eos_id);
  return rep;
}

// Allowed token-id set per decoding slot.
struct RestrictedVocabulary {
  std::vector<std::vector<std::size_t>> slots;
};

struct DecodeResult {
  std::vector<std::size_t> tokens;
  std::vector<std::vector<double>> slot_probs;  // aligned with each slot's allowed set
};

// Per slot: probabilities are a softmax over the allowed ids only (identical
// to the full softmax renormalized to the allowed set); greedy argmax, ties
// broken toward the lower id. Emitted tokens are appended to the context.
inline DecodeResult restricted_decode(const LmConfig& cfg, const ParameterStore& store, const LMInput& input,
                                      const RestrictedVocabulary& vocab, std::size_t bos_id) {
  if (!input.targets.empty()) throw std::invalid_argument("restricted_decode: input must not carry targets");
  LMInput cur = input;
  DecodeResult out;
  for (const auto& allowed : vocab.slots) {
    if (allowed.empty()) throw std::invalid_argument("restricted_decode: empty allowed set");
    Tensor hidden = lm_hidden(cfg, store, cur, bos_id);
    const std::size_t last = cur.length() - 1;
    Tensor row = add(matmul(slice_rows(hidden, last, last + 1), store.get("lm/head/w")), store.get("lm/head/b"));
    std::vector<std::uint8_t> mask(cfg.vocab_size, 0);
    for (std::size_t id : allowed) {
      if (id >= cfg.vocab_size) throw std::invalid_argument("restricted_decode: allowed id out of vocabulary");
      mask[id] = 1;
    }
    Tensor probs = masked_softmax(row, mask);
    std::size_t best = allowed[0];
    double best_p = -1.0;
    std::vector<double> slot_p;
    slot_p.reserve(allowed.size());
    for (std::size_t id : allowed) {
      const double p = probs.value_at(id);
      slot_p.push_back(p);
      if (p > best_p) {
        best_p = p;
        best = id;
      }
    }
    out.tokens.push_back(best);
    out.slot_probs.push_back(std::move(slot_p));
    cur.context.push_back(best);
  }
  return out;
}

// One item = a fixed slot pattern (literal slots are singleton sets). The
// builder maps items generated so far to a fresh LM input; iterative mode
// rebuilds the prompt after every item, one-shot builds it once and appends.
struct ItemPattern {
  std::vector<std::vector<std::size_t>> slots;
  std::size_t stop_token = 0;  // eligible in the first slot when allow_stop
  bool allow_stop = false;
};

using PromptBuilder = std::function<LMInput(const std::vector<std::vector<std::size_t>>&)>;

// Generates k_items items; if the model emits the stop token at an item
// boundary, generation ends early and the output is padded with the last item.
inline std::vector<std::vector<std::size_t>> generate_items(const LmConfig& cfg, const ParameterStore& store,
                                                            const PromptBuilder& build, const ItemPattern& pattern,
                                                            std::size_t k_items, bool iterative, std::size_t bos_id) {
  if (k_items < 1) throw std::invalid_argument("generate_items: k_items must be >= 1");
  std::vector<std::vector<std::size_t>> items;
  LMInput oneshot = build(items);
  while (items.size() < k_items) {
    LMInput base = iterative ? build(items) : oneshot;
    std::vector<std::size_t> item;
    bool stopped = false;
    for (std::size_t si = 0; si < pattern.slots.size(); ++si) {
      RestrictedVocabulary rv;
      std::vector<std::size_t> allowed = pattern.slots[si];
      if (si == 0 && pattern.allow_stop && !items.empty()) allowed.push_back(pattern.stop_token);
      rv.slots = {allowed};
      DecodeResult r = restricted_decode(cfg, store, base, rv, bos_id);
      const std::size_t tok = r.tokens[0];
      if (si == 0 && pattern.allow_stop && !items.empty() && tok == pattern.stop_token) {
        stopped = true;
        break;
      }
      item.push_back(tok);
      base.context.push_back(tok);
    }
    if (stopped) break;
    items.push_back(item);
    if (!iterative) {
      for (std::size_t tok : item) oneshot.context.push_back(tok);
    }
  }
  if (items.empty()) return items;
  while (items.size() < k_items) items.push_back(items.back());  // pad with the last item
  return items;
}

}  // namespace tcr
