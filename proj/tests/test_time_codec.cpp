#include <set>
#include <vector>

#include "doctest.h"
#include "tcr/params.hpp"
#include "tcr/time_codec.hpp"

using namespace tcr;

TEST_CASE("tokenize boundaries and arithmetic") {
  CHECK(tokenize_time(0.0).index == 0);
  CHECK(tokenize_time(1024.0).index == 2047);  // clamped at the horizon
  CHECK(tokenize_time(3.4).index == 6);        // floor(3.4 / 0.5)
  CHECK(tokenize_time(0.49).index == 0);
  CHECK(tokenize_time(0.5).index == 1);
  CHECK_THROWS_AS(tokenize_time(-0.1), std::invalid_argument);
}

TEST_CASE("detokenize returns the left bin edge") {
  CHECK(detokenize_time({0, 2048}) == 0.0);
  CHECK(detokenize_time({7, 2048}) == doctest::Approx(3.5));
}

TEST_CASE("round trip over all 2048 bins") {
  for (std::size_t k = 0; k < 2048; ++k) {
    TimeToken tok{k, 2048};
    CHECK(tokenize_time(detokenize_time(tok)).index == k);
  }
}

TEST_CASE("horizon matches defaults") {
  // 2048 bins x 0.5 s = 1024 s, about 17 minutes
  CHECK(2048 * 0.5 == 1024.0);
  CHECK(tokenize_time(1023.99).index == 2047);
}

TEST_CASE("tokenize is monotone in t") {
  double prev = 0.0;
  std::size_t prev_idx = 0;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    prev += 7.0 * rng.next_double();
    const std::size_t idx = tokenize_time(prev).index;
    CHECK(idx >= prev_idx);
    prev_idx = idx;
  }
}

TEST_CASE("rendering uses bracketed indices") {
  CHECK(render_time_token({7, 2048}) == "[7]");
  CHECK(render_time_token({0, 2048}) == "[0]");
}

TEST_CASE("temporal embeddings: determinism, distinctness, gradients") {
  ParameterStore store;
  Rng rng(21);
  TemporalEmbeddingConfig cfg{64, 8, 12};
  init_temporal_params(store, cfg, rng);

  Tensor a = temporal_embedding(store, {5, 64});
  Tensor b = temporal_embedding(store, {5, 64});
  CHECK(a.values() == b.values());
  CHECK(a.shape() == Shape{12});

  // no collisions among 64 sampled tokens on a fresh table
  std::set<std::vector<double>> seen;
  for (std::size_t k = 0; k < 64; ++k) seen.insert(temporal_embedding(store, {k, 64}).values());
  CHECK(seen.size() == 64);

  auto f = [&]() {
    Tensor e = temporal_embeddings(store, {1, 3, 3, 7});
    return mean_all(mul(e, e));
  };
  auto rep = finite_diff_check(store, f, 30, 5);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("zeroed table gives bias-only embedding") {
  ParameterStore store;
  TemporalEmbeddingConfig cfg{16, 4, 6};
  store.create("temporal/table", Tensor::zeros({cfg.n_bins, cfg.d_time}, true));
  store.create("temporal/mlp/w", Tensor::zeros({cfg.d_time, cfg.d_out}, true));
  store.create("temporal/mlp/b", Tensor::zeros({cfg.d_out}, true));
  Tensor e = temporal_embedding(store, {3, 16});
  for (double v : e.values()) CHECK(v == 0.0);  // gelu(0) == 0
}
