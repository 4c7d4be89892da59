#include "taco/maem.hpp"

#include <cmath>

namespace taco {
namespace maem {

void MaemConfig::validate() const {
  TACO_CHECK(patch_size > 0, ConfigError, "maem.patch_size must be positive");
  TACO_CHECK(num_heads > 0, ConfigError, "maem.num_heads must be positive");
  TACO_CHECK(delta >= 0.0 && delta < 1.0, ConfigError, "maem.delta must lie in [0, 1)");
}

std::int64_t PatchMask::masked_count() const {
  std::int64_t n = 0;
  const double* p = mask.data();
  for (std::int64_t i = 0; i < mask.size(); ++i) n += p[i] != 0.0 ? 1 : 0;
  return n;
}

PatchMask sample_patch_mask(std::int64_t grid_h, std::int64_t grid_w, std::int64_t channels,
                            double delta, Rng& rng) {
  TACO_CHECK(delta >= 0.0 && delta < 1.0, ConfigError, "sample_patch_mask: delta must be in [0, 1)");
  PatchMask out;
  out.mask = Tensor::zeros({channels, grid_h, grid_w});
  out.ratio = delta > 0.0 ? rng.uniform(0.0, delta) : 0.0;
  const std::int64_t cells = grid_h * grid_w;
  const std::int64_t per_channel =
      static_cast<std::int64_t>(std::llround(out.ratio * static_cast<double>(cells)));
  if (per_channel == 0) return out;
  for (std::int64_t c = 0; c < channels; ++c) {
    const auto picks = rng.sample_without_replacement(static_cast<std::size_t>(cells),
                                                      static_cast<std::size_t>(per_channel));
    double* base = out.mask.data() + c * cells;
    for (std::size_t idx : picks) base[idx] = 1.0;
  }
  return out;
}

Maem::Maem(std::int64_t channels, const MaemConfig& cfg, Rng& rng)
    : cfg_(cfg), channels_(channels) {
  cfg_.validate();
  TACO_CHECK(channels % cfg_.num_heads == 0, ConfigError,
             "MAEM: channels " + std::to_string(channels) + " not divisible by num_heads " +
                 std::to_string(cfg_.num_heads));
  conv_q_ = nn::Conv2d(1, 1, channels, channels, 1, 0, rng);
  norm_q_ = nn::BatchNorm(channels, /*always_batch_stats=*/true);
  if (!cfg_.shared_qkv_conv) {
    conv_k_ = nn::Conv2d(1, 1, channels, channels, 1, 0, rng);
    norm_k_ = nn::BatchNorm(channels, /*always_batch_stats=*/true);
    conv_v_ = nn::Conv2d(1, 1, channels, channels, 1, 0, rng);
    norm_v_ = nn::BatchNorm(channels, /*always_batch_stats=*/true);
  }
}

void Maem::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                   std::vector<nn::BufferRef>& buffers) {
  conv_q_.collect(prefix + ".conv_q", params, buffers);
  norm_q_.collect(prefix + ".norm_q", params, buffers);
  if (!cfg_.shared_qkv_conv) {
    conv_k_.collect(prefix + ".conv_k", params, buffers);
    norm_k_.collect(prefix + ".norm_k", params, buffers);
    conv_v_.collect(prefix + ".conv_v", params, buffers);
    norm_v_.collect(prefix + ".norm_v", params, buffers);
  }
}

Variable Maem::forward(const Variable& f, bool training, Rng* rng, Tensor* attention_out) const {
  const Tensor& fv = f.value();
  TACO_CHECK(fv.rank() == 4, ShapeError, "MAEM input must be (N,H,W,C), got " + fv.shape_str());
  const std::int64_t n = fv.dim(0), h = fv.dim(1), w = fv.dim(2), c = fv.dim(3);
  TACO_CHECK(c == channels_, ShapeError,
             "MAEM built for " + std::to_string(channels_) + " channels, got " + std::to_string(c));
  const int p = cfg_.patch_size;
  TACO_CHECK(h % p == 0, ShapeError,
             "MAEM: feature height " + std::to_string(h) + " not divisible by patch size " +
                 std::to_string(p));
  TACO_CHECK(w % p == 0, ShapeError,
             "MAEM: feature width " + std::to_string(w) + " not divisible by patch size " +
                 std::to_string(p));

  Variable x = f;
  if (training && cfg_.delta > 0.0) {
    TACO_CHECK(rng != nullptr, InternalError, "MAEM training forward needs an RNG for masking");
    // independent mask per sample; grid cells are zeroed across whole patches
    Tensor keep = Tensor::ones(fv.shape());
    const std::int64_t gh = h / p, gw = w / p;
    for (std::int64_t s = 0; s < n; ++s) {
      const PatchMask m = sample_patch_mask(gh, gw, c, cfg_.delta, *rng);
      const double* pm = m.mask.data();
      double* pk = keep.data() + s * h * w * c;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double* mc = pm + ch * gh * gw;
        for (std::int64_t gy = 0; gy < gh; ++gy) {
          for (std::int64_t gx = 0; gx < gw; ++gx) {
            if (mc[gy * gw + gx] == 0.0) continue;
            for (int dy = 0; dy < p; ++dy) {
              for (int dx = 0; dx < p; ++dx) {
                pk[((gy * p + dy) * w + gx * p + dx) * c + ch] = 0.0;
              }
            }
          }
        }
      }
    }
    x = ops::mul_mask(x, keep);
  }

  auto block = [&](const nn::Conv2d& conv, nn::BatchNorm& norm) {
    return ops::relu(norm.forward(conv.forward(x), training));
  };
  Variable q = block(conv_q_, norm_q_);
  Variable k = cfg_.shared_qkv_conv ? q : block(conv_k_, norm_k_);
  Variable v = cfg_.shared_qkv_conv ? q : block(conv_v_, norm_v_);

  Variable qs = ops::patchify(q, p, cfg_.num_heads);
  Variable ks = cfg_.shared_qkv_conv ? qs : ops::patchify(k, p, cfg_.num_heads);
  Variable vs = cfg_.shared_qkv_conv ? qs : ops::patchify(v, p, cfg_.num_heads);

  const double head_dim = static_cast<double>(c) * p * p / cfg_.num_heads;
  Variable attn = ops::softmax_lastdim(ops::attention_scores(qs, ks, 1.0 / std::sqrt(head_dim)));
  if (attention_out != nullptr) *attention_out = attn.value().clone();

  Variable out = ops::unpatchify(ops::attention_apply(attn, vs), h, w, p);
  if (cfg_.residual) out = ops::add(out, f);
  return out;
}

}  // namespace maem
}  // namespace taco
