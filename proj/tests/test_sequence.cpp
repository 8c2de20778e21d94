#include <set>

#include "doctest.h"
#include "tcr/sequence.hpp"

using namespace tcr;

namespace {

ParameterStore temporal_store(std::size_t n_bins, std::size_t d_vis) {
  ParameterStore store;
  Rng rng(77);
  init_temporal_params(store, {n_bins, 8, d_vis}, rng);
  return store;
}

std::vector<double> even_times(std::size_t f, double step = 0.5) {
  std::vector<double> t(f);
  for (std::size_t i = 0; i < f; ++i) t[i] = step * static_cast<double>(i);
  return t;
}

}  // namespace

TEST_CASE("video token count closed form") {
  CHECK(video_token_count(92, 196) == 13524);  // 46*196 + 46*98
  CHECK(video_token_count(1, 196) == 196);

  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const std::size_t f = 1 + rng.next_below(40);
    const std::size_t p = 2 + rng.next_below(30);
    const std::size_t expect = (f + 1) / 2 * p + f / 2 * (p / 2);
    CHECK(video_token_count(f, p) == expect);
  }
}

TEST_CASE("build_video_sequence drops patches on odd frames only") {
  const std::size_t f = 5, p = 6, d = 4;
  ParameterStore store = temporal_store(64, d);
  Rng rng(9);
  Tensor feats = Tensor::randn({f * p, d}, rng, 1.0);
  VideoFeatureSequence seq = build_video_sequence(feats, f, p, even_times(f), 123, store, 64);
  CHECK(seq.count() == video_token_count(f, p));
  CHECK(seq.tokens.dim(0) == seq.count());

  // per-frame counts and strictly increasing kept indices
  std::vector<std::vector<std::size_t>> per_frame(f);
  for (std::size_t i = 0; i < seq.count(); ++i) per_frame[seq.frame_index[i]].push_back(seq.kept_patch[i]);
  for (std::size_t fr = 0; fr < f; ++fr) {
    if (fr % 2 == 0)
      CHECK(per_frame[fr].size() == p);
    else
      CHECK(per_frame[fr].size() == p / 2);
    std::set<std::size_t> uniq(per_frame[fr].begin(), per_frame[fr].end());
    CHECK(uniq.size() == per_frame[fr].size());
    for (std::size_t k = 1; k < per_frame[fr].size(); ++k) CHECK(per_frame[fr][k] > per_frame[fr][k - 1]);
  }

  // same seed -> identical kept sets; different seed -> different somewhere
  VideoFeatureSequence seq2 = build_video_sequence(feats, f, p, even_times(f), 123, store, 64);
  CHECK(seq2.kept_patch == seq.kept_patch);
  CHECK(seq2.tokens.values() == seq.tokens.values());

  // single frame: nothing dropped
  Tensor feats1 = Tensor::randn({p, d}, rng, 1.0);
  VideoFeatureSequence single = build_video_sequence(feats1, 1, p, {0.0}, 1, store, 64);
  CHECK(single.count() == p);

  std::vector<double> bad_times = {1.0, 0.5, 2.0, 3.0, 4.0};
  CHECK_THROWS_AS(build_video_sequence(feats, f, p, bad_times, 1, store, 64), std::invalid_argument);
}

TEST_CASE("video tokens carry one timestamp per frame and temporal grads flow") {
  const std::size_t f = 4, p = 4, d = 6;
  ParameterStore store = temporal_store(32, d);
  Rng rng(13);
  Tensor feats = Tensor::randn({f * p, d}, rng, 1.0);
  auto loss = [&]() {
    VideoFeatureSequence seq = build_video_sequence(feats, f, p, even_times(f, 1.0), 3, store, 32);
    return mean_all(mul(seq.tokens, seq.tokens));
  };
  auto rep = finite_diff_check(store, loss, 40, 17);
  CHECK(rep.max_rel_err < 1e-4);

  VideoFeatureSequence seq = build_video_sequence(feats, f, p, even_times(f, 1.0), 3, store, 32);
  for (std::size_t i = 0; i < seq.count(); ++i)
    CHECK(seq.time_bin[i] == tokenize_time(even_times(f, 1.0)[seq.frame_index[i]], 32).index);
}

TEST_CASE("conditioning sequence layout") {
  Vocabulary vocab(GrammarConfig{.n_bins = 32, .n_int_tokens = 8});
  std::vector<std::size_t> text = vocab.encode("what happens after the person lifts the ball ?");
  ConditioningSequence seq = build_conditioning_sequence(TaskId::Qa, text, 128, vocab);
  CHECK(seq.task_token == vocab.task_id(TaskId::Qa));
  CHECK(seq.text_len() == 1 + text.size());
  CHECK(seq.n_queries == 128);
  CHECK(1 + text.size() + seq.n_queries == seq.text_len() + 128);

  ConditioningSequence empty = build_conditioning_sequence(TaskId::Cpn, {}, 16, vocab);
  CHECK(empty.text_len() == 1);

  ConditioningSequence mq = build_conditioning_sequence(TaskId::Trg, vocab.encode("lifts the ball"), 16, vocab);
  CHECK(mq.task_token == vocab.task_id(TaskId::Trg));

  CHECK_THROWS_AS(build_conditioning_sequence(static_cast<TaskId>(99), {}, 8, vocab), std::invalid_argument);
}

TEST_CASE("lm input ordering and query-count contract") {
  Rng rng(3);
  Tensor q = Tensor::randn({4, 8}, rng, 1.0);
  std::vector<std::size_t> ctx(20, 1), tgt(5, 2);
  LMInput in = build_lm_input(q, 4, ctx, tgt);
  CHECK(in.length() == 1 + 4 + 20 + 5);
  CHECK(in.prefix_len() == 4);

  LMInput infer = build_lm_input(q, 4, ctx);
  CHECK(infer.targets.empty());
  CHECK(infer.length() == 25);

  CHECK_THROWS_AS(build_lm_input(q, 8, ctx, tgt), std::invalid_argument);
}
