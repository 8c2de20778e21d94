#pragma once

#include <cstdint>
#include <numbers>
#include <vector>

#include "tcr/params.hpp"
#include "tcr/synth.hpp"
#include "tcr/tensor.hpp"

namespace tcr {

// Frozen stand-in for the visual backbone: a fixed random affine map from
// per-patch latent descriptors to D_vis features plus seeded Gaussian noise.
struct StubEncoderConfig {
  std::size_t n_classes = 16;  // background gets one extra one-hot slot
  std::size_t d_vis = 64;
  double noise_scale = 0.5;
  std::uint64_t weight_seed = 0xE2C0DE;

  std::size_t d_latent() const { return n_classes + 1 + 4; }  // one-hot | pose | jitter | sin | cos
};

inline void init_encoder_params(ParameterStore& store, const StubEncoderConfig& cfg) {
  Rng rng(cfg.weight_seed, 0xE2C);
  const double std = 1.0 / std::sqrt(static_cast<double>(cfg.d_latent()));
  store.create("enc/w", Tensor::randn({cfg.d_latent(), cfg.d_vis}, rng, std), true);
  store.create("enc/b", Tensor::randn({cfg.d_vis}, rng, 0.05), true);
}

// Per-patch latent descriptors for F frames x P patches, row-major by frame.
inline std::vector<double> patch_latents(const std::vector<FrameLatent>& frames, std::size_t patches,
                                         const StubEncoderConfig& cfg) {
  const std::size_t d = cfg.d_latent();
  std::vector<double> out(frames.size() * patches * d, 0.0);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const FrameLatent& fl = frames[f];
    for (std::size_t p = 0; p < patches; ++p) {
      double* row = out.data() + (f * patches + p) * d;
      const std::size_t cls = std::min(fl.class_id, cfg.n_classes);
      row[cls] = 1.0;
      row[cfg.n_classes + 1] = fl.pose;
      row[cfg.n_classes + 2] = fl.jitter;
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(p) / static_cast<double>(patches);
      row[cfg.n_classes + 3] = std::sin(theta);
      row[cfg.n_classes + 4] = std::cos(theta);
    }
  }
  return out;
}

// Frozen projection + seeded noise; bit-identical for identical inputs.
// Output is a constant [F*P x d_vis] tensor (no gradient into the stub).
inline Tensor encode_frames(const ParameterStore& store, const StubEncoderConfig& cfg,
                            const std::vector<double>& latents, std::size_t n_rows, std::uint64_t noise_seed) {
  const std::size_t d = cfg.d_latent();
  if (latents.size() != n_rows * d) throw std::invalid_argument("encode_frames: latent size mismatch");
  const Tensor& w = store.get("enc/w");
  const Tensor& b = store.get("enc/b");
  std::vector<double> out(n_rows * cfg.d_vis);
  for (std::size_t r = 0; r < n_rows; ++r) {
    Rng noise(noise_seed, 0x0153, r);
    for (std::size_t j = 0; j < cfg.d_vis; ++j) {
      double acc = b.values()[j];
      for (std::size_t k = 0; k < d; ++k) acc += latents[r * d + k] * w.values()[k * cfg.d_vis + j];
      out[r * cfg.d_vis + j] = acc + cfg.noise_scale * noise.next_gauss();
    }
  }
  return Tensor::from({n_rows, cfg.d_vis}, std::move(out));
}

inline Tensor encode_episode_frames(const ParameterStore& store, const StubEncoderConfig& cfg,
                                    const std::vector<FrameLatent>& frames, std::size_t patches,
                                    std::uint64_t noise_seed) {
  return encode_frames(store, cfg, patch_latents(frames, patches, cfg), frames.size() * patches, noise_seed);
}

}  // namespace tcr
