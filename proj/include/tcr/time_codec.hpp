#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "tcr/params.hpp"
#include "tcr/prng.hpp"
#include "tcr/tensor.hpp"

namespace tcr {

// Discrete half-second (by default) time bin. With the default 2048 bins the
// representable horizon is 1024 s.
struct TimeToken {
  std::size_t index = 0;
  std::size_t n_bins = 2048;
};

inline TimeToken tokenize_time(double seconds, std::size_t n_bins = 2048, double bin_width = 0.5) {
  if (seconds < 0.0) throw std::invalid_argument("tokenize_time: negative timestamp");
  if (n_bins == 0 || bin_width <= 0.0) throw std::invalid_argument("tokenize_time: bad bin config");
  std::size_t idx = static_cast<std::size_t>(std::floor(seconds / bin_width));
  if (idx >= n_bins) idx = n_bins - 1;
  return TimeToken{idx, n_bins};
}

// Left bin edge, so tokenize(detokenize(k)) == k for every bin.
inline double detokenize_time(const TimeToken& tok, double bin_width = 0.5) {
  if (tok.index >= tok.n_bins) throw std::invalid_argument("detokenize_time: index out of range");
  return static_cast<double>(tok.index) * bin_width;
}

inline std::string render_time_token(const TimeToken& tok) { return "[" + std::to_string(tok.index) + "]"; }

// Learnable per-bin embedding table followed by a single affine + GELU,
// emitting vectors of the width of the stream they are added to.
struct TemporalEmbeddingConfig {
  std::size_t n_bins = 2048;
  std::size_t d_time = 32;
  std::size_t d_out = 64;
};

inline void init_temporal_params(ParameterStore& store, const TemporalEmbeddingConfig& cfg, Rng& rng,
                                 double init_std = 0.02) {
  store.create("temporal/table", Tensor::randn({cfg.n_bins, cfg.d_time}, rng, init_std, true));
  store.create("temporal/mlp/w", Tensor::randn({cfg.d_time, cfg.d_out}, rng, init_std, true));
  store.create("temporal/mlp/b", Tensor::zeros({cfg.d_out}, true));
}

// Batched lookup: one embedding row per requested bin, shape [n x d_out].
inline Tensor temporal_embeddings(const ParameterStore& store, const std::vector<std::size_t>& bins) {
  const Tensor& table = store.get("temporal/table");
  const Tensor& w = store.get("temporal/mlp/w");
  const Tensor& b = store.get("temporal/mlp/b");
  for (std::size_t bin : bins)
    if (bin >= table.dim(0)) throw std::invalid_argument("temporal_embeddings: bin out of range");
  Tensor rows = gather_rows(table, bins);
  return gelu(add(matmul(rows, w), b));
}

inline Tensor temporal_embedding(const ParameterStore& store, const TimeToken& tok) {
  Tensor e = temporal_embeddings(store, {tok.index});
  return reshape(e, {e.dim(1)});
}

}  // namespace tcr
