#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcr/prng.hpp"
#include "tcr/time_codec.hpp"
#include "tcr/vocab.hpp"

namespace tcr {

enum class TaskTag : std::uint32_t { Caption = 0, Qa = 1, Lta = 2, Mq = 3, Stitched = 4 };

inline const char* task_tag_name(TaskTag t) {
  switch (t) {
    case TaskTag::Caption: return "caption";
    case TaskTag::Qa: return "qa";
    case TaskTag::Lta: return "lta";
    case TaskTag::Mq: return "mq";
    case TaskTag::Stitched: return "stitched";
  }
  return "?";
}

struct Segment {
  double start = 0.0;
  double end = 0.0;
  std::size_t class_id = 0;
  std::string caption;
};

struct FrameLatent {
  std::size_t class_id = 0;  // n_classes = background
  double pose = 0.0;
  double jitter = 0.0;
};

struct ActionPair {
  std::size_t verb = 0;
  std::size_t noun = 0;
  bool operator==(const ActionPair&) const = default;
};

struct QaPayload {
  std::string question;
  std::array<std::string, 5> options;
  std::size_t answer = 0;          // index of the correct option
  std::size_t corrupt_answer = 0;  // correct option for the temporally flipped question
  std::size_t anchor_segment = 0;
  bool asks_after = true;  // temporal word in the question
};

struct LtaPayload {
  std::vector<ActionPair> observed;
  std::vector<double> observed_starts;
  std::vector<ActionPair> future;
  double boundary = 0.0;  // end of the last observed action
};

struct SpanSec {
  double start = 0.0;
  double end = 0.0;
};

struct MqPayload {
  std::size_t query_class = 0;
  std::string query_string;
  std::vector<SpanSec> gt_spans;
};

struct SyntheticEpisode {
  TaskTag tag = TaskTag::Caption;
  double duration = 0.0;
  std::vector<double> frame_times;
  std::vector<FrameLatent> frames;
  std::vector<Segment> segments;
  std::optional<QaPayload> qa;
  std::optional<LtaPayload> lta;
  std::optional<MqPayload> mq;
};

// 128 frames stitched from up to 8 clips; exactly one clip shows the query
// class, its offset uniform over the feasible range.
struct StitchedEpisode {
  std::size_t total_frames = 128;
  std::size_t query_class = 0;
  std::vector<std::size_t> clip_class;
  std::vector<std::size_t> clip_len;
  std::vector<FrameLatent> frames;
  std::vector<std::size_t> gt_frames;
};

struct EpisodeConfig {
  double duration = 32.0;
  std::size_t frames = 8;
  std::size_t patches = 16;
  std::size_t min_segments = 3;
  std::size_t max_segments = 5;
  double min_seg_len = 1.5;
  double max_seg_len = 4.0;
  double latent_jitter = 0.3;
  GrammarConfig grammar;
  // action anticipation
  std::size_t observed_actions = 4;
  std::size_t future_actions = 8;
  double markov_determinism = 1.0;
  bool lta_before_window = false;  // sample frames only before the boundary
  // moment queries
  std::size_t max_query_spans = 4;
  // stitched frame selection
  std::size_t stitched_frames = 128;
  std::size_t max_clips = 8;
  std::size_t max_clip_len = 64;

  double horizon() const { return static_cast<double>(grammar.n_bins) * grammar.bin_width; }
};

// Deterministic caption per class; template alternates with class parity.
inline std::string class_caption(const GrammarConfig& g, std::size_t class_id) {
  if (class_id >= g.n_classes) throw std::invalid_argument("class_caption: class out of range");
  const char* verb = words::kVerbs[class_id % g.n_verbs];
  const char* noun = words::kNouns[class_id % g.n_nouns];
  if (class_id % 2 == 0) return std::string("the person ") + verb + " the " + noun;
  return std::string("someone ") + verb + " a " + noun;
}

inline std::string action_name(const GrammarConfig& g, std::size_t class_id) {
  return std::string(words::kVerbs[class_id % g.n_verbs]) + " the " + words::kNouns[class_id % g.n_nouns];
}

inline ActionPair class_action(const GrammarConfig& g, std::size_t class_id) {
  return ActionPair{class_id % g.n_verbs, class_id % g.n_nouns};
}

namespace detail {

inline std::vector<Segment> gen_segments(const EpisodeConfig& cfg, Rng& rng) {
  const std::size_t want = static_cast<std::size_t>(
      rng.next_range(static_cast<std::int64_t>(cfg.min_segments), static_cast<std::int64_t>(cfg.max_segments)));
  std::vector<std::size_t> classes = rng.sample_without_replacement(cfg.grammar.n_classes, want);
  rng.shuffle(classes);
  std::vector<Segment> segs;
  double t = 0.3 + 0.7 * rng.next_double();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const double len = cfg.min_seg_len + (cfg.max_seg_len - cfg.min_seg_len) * rng.next_double();
    if (t + len > cfg.duration - 0.1) break;
    segs.push_back({t, t + len, classes[i], class_caption(cfg.grammar, classes[i])});
    t += len + 0.5 + 1.5 * rng.next_double();
  }
  return segs;
}

inline std::size_t class_at(const std::vector<Segment>& segs, double t, std::size_t background) {
  for (const Segment& s : segs)
    if (t >= s.start && t < s.end) return s.class_id;
  return background;
}

inline double pose_at(const std::vector<Segment>& segs, double t, double duration) {
  for (const Segment& s : segs)
    if (t >= s.start && t < s.end) return (t - s.start) / (s.end - s.start);
  return duration > 0.0 ? t / duration : 0.0;
}

inline void fill_frames(SyntheticEpisode& ep, const EpisodeConfig& cfg, Rng& rng, double window_end) {
  ep.frame_times.resize(cfg.frames);
  ep.frames.resize(cfg.frames);
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    const double t = (static_cast<double>(i) + 0.5) * window_end / static_cast<double>(cfg.frames);
    ep.frame_times[i] = t;
    ep.frames[i].class_id = class_at(ep.segments, t, cfg.grammar.n_classes);
    ep.frames[i].pose = pose_at(ep.segments, t, ep.duration);
    ep.frames[i].jitter = cfg.latent_jitter * rng.next_gauss();
  }
}

}  // namespace detail

// Annotated caption stream: the substrate for the contrastive/matching
// initialisation and the generative pre-training tasks.
inline SyntheticEpisode gen_caption_stream(std::uint64_t seed, const EpisodeConfig& cfg) {
  if (cfg.duration > cfg.horizon())
    throw std::invalid_argument("episode duration exceeds the time-codec horizon");
  Rng rng(seed, 0xCA11);
  SyntheticEpisode ep;
  ep.tag = TaskTag::Caption;
  ep.duration = cfg.duration;
  ep.segments = detail::gen_segments(cfg, rng);
  if (ep.segments.empty()) throw std::runtime_error("episode config leaves no room for a segment");
  detail::fill_frames(ep, cfg, rng, cfg.duration);
  return ep;
}

inline const std::string& nothing_caption() {
  static const std::string s = "nothing happens";
  return s;
}

// Temporal multiple-choice question: "what happens after|before <caption> ?"
// with exactly one correct option among five. corrupt_answer records the key
// for the temporally flipped question.
inline SyntheticEpisode gen_temporal_qa(std::uint64_t seed, const EpisodeConfig& cfg) {
  if (cfg.duration > cfg.horizon())
    throw std::invalid_argument("episode duration exceeds the time-codec horizon");
  Rng rng(seed, 0x0A0A);
  SyntheticEpisode ep;
  ep.tag = TaskTag::Qa;
  ep.duration = cfg.duration;
  ep.segments = detail::gen_segments(cfg, rng);
  const std::size_t s = ep.segments.size();
  if (s < 2) throw std::invalid_argument("temporal QA needs at least 2 segments");
  detail::fill_frames(ep, cfg, rng, cfg.duration);

  QaPayload qa;
  qa.anchor_segment = static_cast<std::size_t>(rng.next_below(s));
  qa.asks_after = rng.next_below(2) == 0;
  const std::size_t m = qa.anchor_segment;
  auto side_caption = [&](bool after) -> std::string {
    if (after) return m + 1 < s ? ep.segments[m + 1].caption : nothing_caption();
    return m > 0 ? ep.segments[m - 1].caption : nothing_caption();
  };
  const std::string true_opt = side_caption(qa.asks_after);
  const std::string flip_opt = side_caption(!qa.asks_after);
  qa.question = std::string("what happens ") + (qa.asks_after ? "after" : "before") + " " +
                ep.segments[m].caption + " ?";

  std::vector<std::string> opts = {true_opt};
  if (flip_opt != true_opt) opts.push_back(flip_opt);
  // distractors: captions of classes absent from the current option set
  std::vector<std::size_t> pool(cfg.grammar.n_classes);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  rng.shuffle(pool);
  for (std::size_t cls : pool) {
    if (opts.size() >= 5) break;
    std::string cap = class_caption(cfg.grammar, cls);
    bool used = cap == ep.segments[m].caption;
    for (const auto& o : opts) used = used || o == cap;
    if (!used) opts.push_back(cap);
  }
  if (opts.size() < 5) throw std::invalid_argument("grammar too small for 5 distinct QA options");
  rng.shuffle(opts);
  for (std::size_t i = 0; i < 5; ++i) {
    qa.options[i] = opts[i];
    if (opts[i] == true_opt) qa.answer = i;
    if (opts[i] == flip_opt) qa.corrupt_answer = i;
  }
  if (flip_opt == true_opt) qa.corrupt_answer = qa.answer;
  ep.qa = qa;
  return ep;
}

// Flips the temporal word and the answer key accordingly.
inline QaPayload corrupt_question(const QaPayload& qa) {
  QaPayload out = qa;
  out.asks_after = !qa.asks_after;
  const std::string from = qa.asks_after ? " after " : " before ";
  const std::string to = qa.asks_after ? " before " : " after ";
  const auto pos = out.question.find(from);
  if (pos != std::string::npos) out.question.replace(pos, from.size(), to);
  std::swap(out.answer, out.corrupt_answer);
  return out;
}

// Observed + future actions from a first-order Markov grammar over classes;
// the affine map next = 5*cls + 3 (mod n_classes) keeps the future
// predictable from the past when markov_determinism is high.
inline SyntheticEpisode gen_lta_episode(std::uint64_t seed, const EpisodeConfig& cfg) {
  if (cfg.future_actions < 1) throw std::invalid_argument("lta: future_actions must be >= 1");
  Rng rng(seed, 0x17A0);
  const std::size_t n = cfg.observed_actions + cfg.future_actions;
  const std::size_t n_cls = cfg.grammar.n_classes;
  std::vector<std::size_t> chain(n);
  chain[0] = static_cast<std::size_t>(rng.next_below(n_cls));
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t follow = (5 * chain[i - 1] + 3) % n_cls;
    chain[i] = rng.next_double() < cfg.markov_determinism ? follow
                                                          : static_cast<std::size_t>(rng.next_below(n_cls));
  }

  SyntheticEpisode ep;
  ep.tag = TaskTag::Lta;
  double t = 0.5;
  for (std::size_t i = 0; i < n; ++i) {
    const double len = cfg.min_seg_len + (cfg.max_seg_len - cfg.min_seg_len) * rng.next_double();
    ep.segments.push_back({t, t + len, chain[i], class_caption(cfg.grammar, chain[i])});
    t += len + 0.3 + 0.7 * rng.next_double();
  }
  ep.duration = t;
  if (ep.duration > cfg.horizon()) throw std::invalid_argument("lta episode exceeds the time-codec horizon");

  LtaPayload lta;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < cfg.observed_actions) {
      lta.observed.push_back(class_action(cfg.grammar, chain[i]));
      lta.observed_starts.push_back(ep.segments[i].start);
    } else {
      lta.future.push_back(class_action(cfg.grammar, chain[i]));
    }
  }
  lta.boundary = cfg.observed_actions > 0 ? ep.segments[cfg.observed_actions - 1].end : 0.0;
  ep.lta = lta;
  detail::fill_frames(ep, cfg, rng, cfg.lta_before_window ? lta.boundary : ep.duration);
  return ep;
}

// Maps clip-relative time onto the 1..n_int integer grid and back.
inline std::size_t time_to_int_grid(double t, double duration, std::size_t n_int = 1000) {
  if (duration <= 0.0) throw std::invalid_argument("time_to_int_grid: non-positive duration");
  double f = t / duration;
  f = std::min(1.0, std::max(0.0, f));
  return 1 + static_cast<std::size_t>(std::llround(f * static_cast<double>(n_int - 1)));
}

inline double int_grid_to_time(std::size_t v, double duration, std::size_t n_int = 1000) {
  if (v < 1 || v > n_int) throw std::invalid_argument("int_grid_to_time: value out of range");
  return (static_cast<double>(v - 1) / static_cast<double>(n_int - 1)) * duration;
}

// 1..max_query_spans instances of one action class among distractors; span
// endpoints sit exactly on the integer grid.
inline SyntheticEpisode gen_mq_episode(std::uint64_t seed, const EpisodeConfig& cfg) {
  if (cfg.duration > cfg.horizon())
    throw std::invalid_argument("episode duration exceeds the time-codec horizon");
  Rng rng(seed, 0x30B0);
  SyntheticEpisode ep;
  ep.tag = TaskTag::Mq;
  ep.duration = cfg.duration;
  ep.segments = detail::gen_segments(cfg, rng);
  if (ep.segments.empty()) throw std::runtime_error("episode config leaves no room for a segment");

  MqPayload mq;
  const std::size_t wanted = 1 + static_cast<std::size_t>(rng.next_below(cfg.max_query_spans));
  mq.query_class = ep.segments[rng.next_below(ep.segments.size())].class_id;
  std::size_t have = 0;
  for (Segment& s : ep.segments) {
    if (have < wanted && (s.class_id == mq.query_class || rng.next_double() < 0.5)) {
      s.class_id = mq.query_class;
      s.caption = class_caption(cfg.grammar, mq.query_class);
      ++have;
    } else if (s.class_id == mq.query_class) {
      // demote extra instances so the span set stays the ground truth
      const std::size_t other = (mq.query_class + 1 + rng.next_below(cfg.grammar.n_classes - 1)) %
                                cfg.grammar.n_classes;
      s.class_id = other;
      s.caption = class_caption(cfg.grammar, other);
    }
  }
  mq.query_string = action_name(cfg.grammar, mq.query_class);
  const std::size_t n_int = cfg.grammar.n_int_tokens;
  for (Segment& s : ep.segments) {
    // snap every segment to the integer grid so span decoding is lossless
    s.start = int_grid_to_time(time_to_int_grid(s.start, cfg.duration, n_int), cfg.duration, n_int);
    s.end = int_grid_to_time(time_to_int_grid(s.end, cfg.duration, n_int), cfg.duration, n_int);
    if (s.class_id == mq.query_class) mq.gt_spans.push_back({s.start, s.end});
  }
  ep.mq = mq;
  detail::fill_frames(ep, cfg, rng, cfg.duration);
  return ep;
}

namespace detail {

// Splits len into 1..max_parts parts, each within [1, max_len].
inline std::vector<std::size_t> split_clip(std::size_t len, std::size_t max_parts, std::size_t max_len, Rng& rng) {
  std::vector<std::size_t> parts;
  if (len == 0) return parts;
  std::size_t need = (len + max_len - 1) / max_len;
  if (need > max_parts) throw std::invalid_argument("split_clip: infeasible");
  std::size_t extra = max_parts > need ? rng.next_below(std::min<std::size_t>(max_parts - need, 2) + 1) : 0;
  std::size_t n = std::min(need + extra, len);
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<std::size_t> cand(n, 1);
    std::size_t rest = len - n;
    for (std::size_t i = 0; i + 1 < n && rest > 0; ++i) {
      std::size_t take = rng.next_below(rest + 1);
      take = std::min(take, max_len - cand[i]);
      cand[i] += take;
      rest -= take;
    }
    if (!cand.empty()) {
      if (cand.back() + rest <= max_len) {
        cand.back() += rest;
        return cand;
      }
    }
  }
  // even fallback
  std::vector<std::size_t> cand(n, len / n);
  for (std::size_t i = 0; i < len % n; ++i) cand[i] += 1;
  return cand;
}

}  // namespace detail

inline StitchedEpisode gen_stitched(std::uint64_t seed, const EpisodeConfig& cfg) {
  Rng rng(seed, 0x5717);
  StitchedEpisode ep;
  ep.total_frames = cfg.stitched_frames;
  ep.query_class = static_cast<std::size_t>(rng.next_below(cfg.grammar.n_classes));
  const std::size_t qlen = 1 + static_cast<std::size_t>(rng.next_below(cfg.max_clip_len));
  const std::size_t offset = static_cast<std::size_t>(rng.next_below(ep.total_frames - qlen + 1));

  const std::size_t budget = cfg.max_clips - 1;
  const std::size_t pre_budget = budget / 2 + budget % 2;
  std::vector<std::size_t> pre = detail::split_clip(offset, pre_budget, cfg.max_clip_len, rng);
  std::vector<std::size_t> post =
      detail::split_clip(ep.total_frames - offset - qlen, budget - pre.size() > 0 ? budget - pre.size() : 1,
                         cfg.max_clip_len, rng);

  std::vector<std::size_t> others =
      rng.sample_without_replacement(cfg.grammar.n_classes - 1, pre.size() + post.size());
  rng.shuffle(others);
  for (std::size_t& c : others)
    if (c >= ep.query_class) ++c;  // skip the query class
  if (others.empty()) throw std::invalid_argument("gen_stitched: need at least 2 classes");

  std::size_t oi = 0;
  for (std::size_t len : pre) {
    ep.clip_class.push_back(others[oi++ % others.size()]);
    ep.clip_len.push_back(len);
  }
  ep.clip_class.push_back(ep.query_class);
  ep.clip_len.push_back(qlen);
  for (std::size_t len : post) {
    ep.clip_class.push_back(others[oi++ % others.size()]);
    ep.clip_len.push_back(len);
  }

  std::size_t frame = 0;
  for (std::size_t ci = 0; ci < ep.clip_len.size(); ++ci) {
    for (std::size_t j = 0; j < ep.clip_len[ci]; ++j, ++frame) {
      FrameLatent fl;
      fl.class_id = ep.clip_class[ci];
      fl.pose = ep.clip_len[ci] > 1 ? static_cast<double>(j) / static_cast<double>(ep.clip_len[ci] - 1) : 0.0;
      fl.jitter = cfg.latent_jitter * rng.next_gauss();
      ep.frames.push_back(fl);
      if (ep.clip_class[ci] == ep.query_class) ep.gt_frames.push_back(frame);
    }
  }
  return ep;
}

// ---- TCRD serialization ----

struct EpisodeRecord {
  TaskTag tag = TaskTag::Caption;
  SyntheticEpisode episode;   // valid unless tag == Stitched
  StitchedEpisode stitched;   // valid when tag == Stitched
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double d) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<char> bytes;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t n, std::size_t record, std::size_t base_off)
      : data_(data), n_(n), record_(record), base_(base_off) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(u);
  }
  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s(data_ + pos_, len);
    pos_ += len;
    return s;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  void need(std::size_t k) {
    if (pos_ + k > n_)
      throw std::runtime_error("TCRD parse error: record " + std::to_string(record_) + " truncated at byte " +
                               std::to_string(base_ + pos_));
  }
  const char* data_;
  std::size_t n_, pos_ = 0, record_, base_;
};

inline void write_episode(ByteWriter& w, const SyntheticEpisode& ep) {
  w.f64(ep.duration);
  w.u32(static_cast<std::uint32_t>(ep.frames.size()));
  for (std::size_t i = 0; i < ep.frames.size(); ++i) {
    w.f64(ep.frame_times[i]);
    w.u32(static_cast<std::uint32_t>(ep.frames[i].class_id));
    w.f64(ep.frames[i].pose);
    w.f64(ep.frames[i].jitter);
  }
  w.u32(static_cast<std::uint32_t>(ep.segments.size()));
  for (const Segment& s : ep.segments) {
    w.f64(s.start);
    w.f64(s.end);
    w.u32(static_cast<std::uint32_t>(s.class_id));
    w.str(s.caption);
  }
  switch (ep.tag) {
    case TaskTag::Caption: break;
    case TaskTag::Qa: {
      const QaPayload& qa = *ep.qa;
      w.str(qa.question);
      for (const auto& o : qa.options) w.str(o);
      w.u32(static_cast<std::uint32_t>(qa.answer));
      w.u32(static_cast<std::uint32_t>(qa.corrupt_answer));
      w.u32(static_cast<std::uint32_t>(qa.anchor_segment));
      w.u32(qa.asks_after ? 1 : 0);
      break;
    }
    case TaskTag::Lta: {
      const LtaPayload& lta = *ep.lta;
      w.u32(static_cast<std::uint32_t>(lta.observed.size()));
      for (std::size_t i = 0; i < lta.observed.size(); ++i) {
        w.u32(static_cast<std::uint32_t>(lta.observed[i].verb));
        w.u32(static_cast<std::uint32_t>(lta.observed[i].noun));
        w.f64(lta.observed_starts[i]);
      }
      w.u32(static_cast<std::uint32_t>(lta.future.size()));
      for (const ActionPair& a : lta.future) {
        w.u32(static_cast<std::uint32_t>(a.verb));
        w.u32(static_cast<std::uint32_t>(a.noun));
      }
      w.f64(lta.boundary);
      break;
    }
    case TaskTag::Mq: {
      const MqPayload& mq = *ep.mq;
      w.u32(static_cast<std::uint32_t>(mq.query_class));
      w.str(mq.query_string);
      w.u32(static_cast<std::uint32_t>(mq.gt_spans.size()));
      for (const SpanSec& s : mq.gt_spans) {
        w.f64(s.start);
        w.f64(s.end);
      }
      break;
    }
    case TaskTag::Stitched: throw std::logic_error("write_episode: stitched handled separately");
  }
}

inline SyntheticEpisode read_episode(ByteReader& r, TaskTag tag) {
  SyntheticEpisode ep;
  ep.tag = tag;
  ep.duration = r.f64();
  const std::uint32_t nf = r.u32();
  ep.frame_times.resize(nf);
  ep.frames.resize(nf);
  for (std::uint32_t i = 0; i < nf; ++i) {
    ep.frame_times[i] = r.f64();
    ep.frames[i].class_id = r.u32();
    ep.frames[i].pose = r.f64();
    ep.frames[i].jitter = r.f64();
  }
  const std::uint32_t ns = r.u32();
  for (std::uint32_t i = 0; i < ns; ++i) {
    Segment s;
    s.start = r.f64();
    s.end = r.f64();
    s.class_id = r.u32();
    s.caption = r.str();
    ep.segments.push_back(std::move(s));
  }
  switch (tag) {
    case TaskTag::Caption: break;
    case TaskTag::Qa: {
      QaPayload qa;
      qa.question = r.str();
      for (auto& o : qa.options) o = r.str();
      qa.answer = r.u32();
      qa.corrupt_answer = r.u32();
      qa.anchor_segment = r.u32();
      qa.asks_after = r.u32() != 0;
      ep.qa = std::move(qa);
      break;
    }
    case TaskTag::Lta: {
      LtaPayload lta;
      const std::uint32_t no = r.u32();
      for (std::uint32_t i = 0; i < no; ++i) {
        ActionPair a;
        a.verb = r.u32();
        a.noun = r.u32();
        lta.observed.push_back(a);
        lta.observed_starts.push_back(r.f64());
      }
      const std::uint32_t nf2 = r.u32();
      for (std::uint32_t i = 0; i < nf2; ++i) {
        ActionPair a;
        a.verb = r.u32();
        a.noun = r.u32();
        lta.future.push_back(a);
      }
      lta.boundary = r.f64();
      ep.lta = std::move(lta);
      break;
    }
    case TaskTag::Mq: {
      MqPayload mq;
      mq.query_class = r.u32();
      mq.query_string = r.str();
      const std::uint32_t nsp = r.u32();
      for (std::uint32_t i = 0; i < nsp; ++i) {
        SpanSec s;
        s.start = r.f64();
        s.end = r.f64();
        mq.gt_spans.push_back(s);
      }
      ep.mq = std::move(mq);
      break;
    }
    case TaskTag::Stitched: throw std::logic_error("read_episode: stitched handled separately");
  }
  return ep;
}

inline void write_stitched(ByteWriter& w, const StitchedEpisode& ep) {
  w.u32(static_cast<std::uint32_t>(ep.total_frames));
  w.u32(static_cast<std::uint32_t>(ep.query_class));
  w.u32(static_cast<std::uint32_t>(ep.clip_len.size()));
  for (std::size_t i = 0; i < ep.clip_len.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(ep.clip_class[i]));
    w.u32(static_cast<std::uint32_t>(ep.clip_len[i]));
  }
  for (const FrameLatent& f : ep.frames) {
    w.u32(static_cast<std::uint32_t>(f.class_id));
    w.f64(f.pose);
    w.f64(f.jitter);
  }
}

inline StitchedEpisode read_stitched(ByteReader& r) {
  StitchedEpisode ep;
  ep.total_frames = r.u32();
  ep.query_class = r.u32();
  const std::uint32_t nc = r.u32();
  for (std::uint32_t i = 0; i < nc; ++i) {
    ep.clip_class.push_back(r.u32());
    ep.clip_len.push_back(r.u32());
  }
  std::size_t frame = 0;
  for (std::uint32_t ci = 0; ci < nc; ++ci)
    for (std::size_t j = 0; j < ep.clip_len[ci]; ++j, ++frame)
      if (ep.clip_class[ci] == ep.query_class) ep.gt_frames.push_back(frame);
  for (std::size_t i = 0; i < ep.total_frames; ++i) {
    FrameLatent f;
    f.class_id = r.u32();
    f.pose = r.f64();
    f.jitter = r.f64();
    ep.frames.push_back(f);
  }
  return ep;
}

}  // namespace detail

// File layout: magic "TCRD", u32 episode count, then per episode a
// length-prefixed record (u32 byte length, record bytes).
inline void write_dataset(const std::string& path, const std::vector<EpisodeRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write dataset: " + path);
  os.write("TCRD", 4);
  detail::ByteWriter head;
  head.u32(static_cast<std::uint32_t>(records.size()));
  os.write(head.bytes.data(), static_cast<std::streamsize>(head.bytes.size()));
  for (const EpisodeRecord& rec : records) {
    detail::ByteWriter w;
    w.u32(static_cast<std::uint32_t>(rec.tag));
    if (rec.tag == TaskTag::Stitched)
      detail::write_stitched(w, rec.stitched);
    else
      detail::write_episode(w, rec.episode);
    detail::ByteWriter frame;
    frame.u32(static_cast<std::uint32_t>(w.bytes.size()));
    os.write(frame.bytes.data(), static_cast<std::streamsize>(frame.bytes.size()));
    os.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
  }
  if (!os) throw std::runtime_error("dataset write failed: " + path);
}

inline std::vector<EpisodeRecord> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read dataset: " + path);
  std::vector<char> blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (blob.size() < 8 || std::string(blob.data(), 4) != "TCRD")
    throw std::runtime_error("TCRD parse error: bad magic at byte 0");
  std::size_t off = 4;
  auto read_u32_at = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[at + i])) << (8 * i);
    return v;
  };
  const std::uint32_t count = read_u32_at(off);
  off += 4;
  std::vector<EpisodeRecord> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    if (off + 4 > blob.size())
      throw std::runtime_error("TCRD parse error: record " + std::to_string(k) + " truncated at byte " +
                               std::to_string(off));
    const std::uint32_t len = read_u32_at(off);
    off += 4;
    if (off + len > blob.size())
      throw std::runtime_error("TCRD parse error: record " + std::to_string(k) + " truncated at byte " +
                               std::to_string(blob.size()));
    detail::ByteReader r(blob.data() + off, len, k, off);
    EpisodeRecord rec;
    rec.tag = static_cast<TaskTag>(r.u32());
    if (rec.tag == TaskTag::Stitched)
      rec.stitched = detail::read_stitched(r);
    else
      rec.episode = detail::read_episode(r, rec.tag);
    out.push_back(std::move(rec));
    off += len;
  }
  return out;
}

// Split manifest: one "<episode id>\t<task tag>" line per record.
inline void write_manifest(const std::string& path, const std::vector<EpisodeRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  for (std::size_t i = 0; i < records.size(); ++i)
    os << "ep" << i << '\t' << task_tag_name(records[i].tag) << '\n';
}

}  // namespace tcr
