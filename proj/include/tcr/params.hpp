#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcr/tensor.hpp"

namespace tcr {

// Named parameter map. Frozen entries never require grad and are expected to
// stay bit-identical across training; path order (lexicographic via std::map)
// fixes every iteration order, including checkpoint layout.
class ParameterStore {
 public:
  Tensor& create(const std::string& path, Tensor t, bool frozen = false) {
    auto [it, inserted] = entries_.emplace(path, Entry{std::move(t), frozen});
    if (!inserted) throw std::invalid_argument("parameter path already exists: " + path);
    set_requires(it->second);
    return it->second.tensor;
  }

  bool has(const std::string& path) const { return entries_.count(path) != 0; }

  Tensor& get(const std::string& path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + path);
    return it->second.tensor;
  }
  const Tensor& get(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + path);
    return it->second.tensor;
  }

  bool frozen(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + path);
    return it->second.frozen;
  }

  void set_frozen(const std::string& path, bool f) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + path);
    it->second.frozen = f;
    set_requires(it->second);
  }

  // Freezes every parameter whose path starts with the prefix.
  void freeze_prefix(const std::string& prefix) {
    for (auto& [path, e] : entries_)
      if (path.rfind(prefix, 0) == 0) {
        e.frozen = true;
        set_requires(e);
      }
  }

  void zero_grad() {
    for (auto& [path, e] : entries_) e.tensor.zero_grad();
  }

  void for_each(const std::function<void(const std::string&, Tensor&, bool frozen)>& fn) {
    for (auto& [path, e] : entries_) fn(path, e.tensor, e.frozen);
  }
  void for_each(const std::function<void(const std::string&, const Tensor&, bool frozen)>& fn) const {
    for (const auto& [path, e] : entries_) fn(path, e.tensor, e.frozen);
  }

  std::size_t count() const { return entries_.size(); }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& [path, e] : entries_)
      if (!e.frozen) n += e.tensor.size();
    return n;
  }

  // Checkpoint format: magic "TCR1", then per parameter (path order):
  // u32 path length, UTF-8 path, u32 rank, u32 extents, f64 values.
  // All integers and floats little-endian.
  void save(const std::string& file) const;
  // Loads into existing entries (shape-checked) or creates unfrozen ones.
  void load(const std::string& file);

 private:
  struct Entry {
    Tensor tensor;
    bool frozen = false;
  };

  static void set_requires(Entry& e) {
    // Rebuild the tensor as a fresh leaf so requires_grad matches frozen-ness.
    Tensor t = Tensor::from(e.tensor.shape(), e.tensor.values(), !e.frozen);
    e.tensor = std::move(t);
  }

  std::map<std::string, Entry> entries_;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated f64");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace detail

inline void ParameterStore::save(const std::string& file) const {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for write: " + file);
  os.write("TCR1", 4);
  for (const auto& [path, e] : entries_) {
    detail::write_u32(os, static_cast<std::uint32_t>(path.size()));
    os.write(path.data(), static_cast<std::streamsize>(path.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t ext : e.tensor.shape()) detail::write_u32(os, static_cast<std::uint32_t>(ext));
    for (double v : e.tensor.values()) detail::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + file);
}

inline void ParameterStore::load(const std::string& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + file);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TCR1", 4) != 0) throw std::runtime_error("checkpoint: bad magic in " + file);
  while (true) {
    is.peek();
    if (is.eof()) break;
    const std::uint32_t plen = detail::read_u32(is);
    std::string path(plen, '\0');
    is.read(path.data(), plen);
    if (!is) throw std::runtime_error("checkpoint: truncated path");
    const std::uint32_t rank = detail::read_u32(is);
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = detail::read_u32(is);
    std::vector<double> vals(shape_numel(shape));
    for (double& v : vals) v = detail::read_f64(is);
    auto it = entries_.find(path);
    if (it == entries_.end()) {
      create(path, Tensor::from(shape, std::move(vals), true));
    } else {
      if (it->second.tensor.shape() != shape)
        throw std::runtime_error("checkpoint: shape mismatch for " + path + ": " +
                                 shape_str(it->second.tensor.shape()) + " vs " + shape_str(shape));
      it->second.tensor = Tensor::from(shape, std::move(vals), !it->second.frozen);
    }
  }
}

// AdamW with global-norm gradient clipping at 1 and a linear-warmup /
// cosine-decay schedule (floor 10% of peak). total_steps = 0 disables decay.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 0;
  };

  explicit AdamW(Options opt) : opt_(opt) {}

  double current_lr() const {
    double f = 1.0;
    const double t = static_cast<double>(step_ + 1);
    if (opt_.warmup_steps > 0 && t < static_cast<double>(opt_.warmup_steps))
      f = t / static_cast<double>(opt_.warmup_steps);
    else if (opt_.total_steps > opt_.warmup_steps) {
      const double progress = (t - static_cast<double>(opt_.warmup_steps)) /
                              static_cast<double>(opt_.total_steps - opt_.warmup_steps);
      const double p = std::min(1.0, std::max(0.0, progress));
      f = 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
    }
    return opt_.lr * f;
  }

  // Returns the pre-clip global gradient norm.
  double step(ParameterStore& params) {
    double sq = 0.0;
    params.for_each([&](const std::string&, Tensor& t, bool frozen) {
      if (frozen || !t.has_grad()) return;
      for (double g : t.grad()) sq += g * g;
    });
    const double norm = std::sqrt(sq);
    const double scale = (opt_.clip_norm > 0.0 && norm > opt_.clip_norm) ? opt_.clip_norm / norm : 1.0;
    const double lr = current_lr();
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_ + 1));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_ + 1));
    params.for_each([&](const std::string& path, Tensor& t, bool frozen) {
      if (frozen || !t.has_grad()) return;
      State& st = state_[path];
      if (st.m.size() != t.size()) {
        st.m.assign(t.size(), 0.0);
        st.v.assign(t.size(), 0.0);
      }
      auto& vals = t.mutable_values();
      const auto& grad = t.grad();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double g = grad[i] * scale;
        st.m[i] = opt_.beta1 * st.m[i] + (1.0 - opt_.beta1) * g;
        st.v[i] = opt_.beta2 * st.v[i] + (1.0 - opt_.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        vals[i] -= lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * vals[i]);
      }
    });
    ++step_;
    return norm;
  }

  std::size_t steps_taken() const { return step_; }

 private:
  struct State {
    std::vector<double> m, v;
  };
  Options opt_;
  std::size_t step_ = 0;
  std::map<std::string, State> state_;
};

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

// Central-difference gradient check. loss_fn must be a deterministic pure
// function of the store values. Relative error uses |analytic - numeric| /
// (|numeric| + 1e-8), maximized over sampled trainable coordinates.
inline FiniteDiffReport finite_diff_check(ParameterStore& params, const std::function<Tensor()>& loss_fn,
                                          std::size_t sample_count, std::uint64_t seed, double h = 1e-3) {
  params.zero_grad();
  backward(loss_fn());

  struct Coord {
    std::string path;
    std::size_t idx;
    double analytic;
  };
  std::vector<Coord> coords;
  params.for_each([&](const std::string& path, Tensor& t, bool frozen) {
    if (frozen) return;
    for (std::size_t i = 0; i < t.size(); ++i)
      coords.push_back({path, i, t.has_grad() ? t.grad()[i] : 0.0});
  });

  Rng rng(seed, 0x66647363ULL);  // "fdsc"
  std::vector<std::size_t> picks = rng.sample_without_replacement(coords.size(), sample_count);

  FiniteDiffReport rep;
  rep.coords_checked = picks.size();
  for (std::size_t pi : picks) {
    const Coord& c = coords[pi];
    double& slot = params.get(c.path).mutable_values()[c.idx];
    const double v0 = slot;
    slot = v0 + h;
    const double lp = loss_fn().scalar_value();
    slot = v0 - h;
    const double lm = loss_fn().scalar_value();
    slot = v0;
    const double numeric = (lp - lm) / (2.0 * h);
    const double rel = std::abs(c.analytic - numeric) / (std::abs(numeric) + 1e-8);
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
  }
  return rep;
}

}  // namespace tcr
