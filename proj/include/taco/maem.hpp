#pragma once

#include <optional>

#include "taco/nn.hpp"

namespace taco {
namespace maem {

using ag::Variable;

struct MaemConfig {
  int patch_size = 4;
  int num_heads = 4;
  double delta = 0.2;      // upper bound of the per-forward mask ratio draw
  bool residual = false;   // add the input back after head concatenation
  bool shared_qkv_conv = false;

  void validate() const;
};

// Per-channel patch mask; mask(c, gy, gx) == 1 marks a masked grid cell.
struct PatchMask {
  Tensor mask;       // (C, grid_h, grid_w), values 0/1
  double ratio = 0;  // the single p ~ U(0, delta) draw behind this mask

  std::int64_t masked_count() const;
};

// Draws p ~ U(0, delta) once, then per channel independently selects
// round(p * grid_h * grid_w) cells uniformly without replacement.
PatchMask sample_patch_mask(std::int64_t grid_h, std::int64_t grid_w, std::int64_t channels,
                            double delta, Rng& rng);

// Dynamic patch masking + 1x1 conv blocks + patchified multi-head
// self-attention + feature-map recovery. Shape-preserving on (N,H,W,C).
class Maem : public nn::Module {
 public:
  Maem() = default;
  Maem(std::int64_t channels, const MaemConfig& cfg, Rng& rng);

  // training enables masking (rng required unless delta == 0); the
  // normalization inside the conv blocks uses in-batch statistics in both
  // modes so the two modes agree exactly at delta = 0.
  // attention_out, when given, receives the post-softmax attention
  // probabilities, shape (N, heads, T, T).
  Variable forward(const Variable& f, bool training, Rng* rng,
                   Tensor* attention_out = nullptr) const;

  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers) override;

  const MaemConfig& config() const { return cfg_; }
  std::int64_t channels() const { return channels_; }

 private:
  MaemConfig cfg_;
  std::int64_t channels_ = 0;
  // one conv->norm block per attention input (or a single shared one)
  mutable nn::Conv2d conv_q_, conv_k_, conv_v_;
  mutable nn::BatchNorm norm_q_, norm_k_, norm_v_;
};

}  // namespace maem
}  // namespace taco
