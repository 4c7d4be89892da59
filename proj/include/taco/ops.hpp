#pragma once

#include <cstdint>
#include <vector>

#include "taco/autograd.hpp"

namespace taco {
namespace ops {

using ag::Variable;

// ---- elementwise ----
Variable add(const Variable& a, const Variable& b);
Variable sub(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable add_scalar(const Variable& a, double c);
Variable mul_scalar(const Variable& a, double c);
Variable neg(const Variable& a);
Variable relu(const Variable& a);
Variable abs(const Variable& a);
// Elementwise product with a constant (non-differentiable) tensor.
Variable mul_mask(const Variable& a, const Tensor& mask);

// ---- reductions / reshapes ----
Variable sum_all(const Variable& a);    // -> (1,)
Variable mean_all(const Variable& a);   // -> (1,)
Variable reshape(const Variable& a, std::vector<std::int64_t> shape);
// a - s, s a size-1 Variable broadcast over a.
Variable sub_scalar_var(const Variable& a, const Variable& s);

// ---- dense / conv / norm ----
// x: (N, in), w: (in, out), b: (out) -> (N, out)
Variable linear(const Variable& x, const Variable& w, const Variable& b);
// NHWC convolution. x: (N,H,W,C), w: (kh,kw,Cin,Cout), b: (Cout).
Variable conv2d(const Variable& x, const Variable& w, const Variable& b, int stride, int pad);

// Channels-last batch normalization: x (..., C) is normalized per channel
// over all leading positions. With use_batch_stats the in-batch moments are
// used (and optionally folded into the running buffers); otherwise the
// running buffers are.
Variable batch_norm(const Variable& x, const Variable& gamma, const Variable& beta,
                    Tensor& running_mean, Tensor& running_var, double momentum, double eps,
                    bool use_batch_stats, bool update_running);

// x: (N,H,W,C) -> (N,C)
Variable global_avg_pool(const Variable& x);

// ---- attention plumbing ----
// Lossless rearrangement (N,H,W,C) -> (N,heads,T,D); T = HW/P^2,
// D = C*P^2/heads. Token features are ordered pixel-row-major within the
// patch, channel-minor, over the head's channel slice.
Variable patchify(const Variable& x, int patch, int heads);
// Exact inverse; seq: (N,heads,T,D) -> (N,H,W,C).
Variable unpatchify(const Variable& seq, std::int64_t h, std::int64_t w, int patch);

// scores = Q K^T * scale, per (batch, head): Q,K (B,h,T,D) -> (B,h,T,T)
Variable attention_scores(const Variable& q, const Variable& k, double scale);
// softmax over the last dimension (any rank >= 1)
Variable softmax_lastdim(const Variable& x);
// out = A V per (batch, head): A (B,h,T,T), V (B,h,T,D) -> (B,h,T,D)
Variable attention_apply(const Variable& a, const Variable& v);

// ---- losses ----
// Row-wise negative cosine similarity, x,y: (N,d) -> (N,). Zero-norm rows
// yield 0 and bump zero_norm_events().
Variable rowwise_neg_cosine(const Variable& x, const Variable& y);
std::int64_t zero_norm_events();
void reset_zero_norm_events();

// KL(uniform || P) / log N with P floored at eps. P: (N,) -> (1,)
Variable kl_uniform(const Variable& p, double eps);

// Mean cross entropy from logits. logits: (N,K), labels in [0,K).
Variable cross_entropy_logits(const Variable& logits, const std::vector<int>& labels);

// ---- plain-tensor helpers (no tape) ----
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
          double beta, double* c, std::int64_t ldc);

}  // namespace ops
}  // namespace taco
