#pragma once

#include <functional>
#include <vector>

#include "taco/attributes.hpp"
#include "taco/ops.hpp"

namespace taco {
namespace scoring {

using ag::Variable;

inline constexpr double kDefaultTau = 1.0;
inline constexpr double kDefaultLambda = 2.0;
inline constexpr double kKlFloor = 1e-8;
inline constexpr double kFontLossWeight = 5.0;

// How pair scores participate in gradient flow. kKlOnly treats the score
// vector as a constant inside the cosine term while the KL regularizer keeps
// its gradient; kFull lets both terms differentiate through the scores;
// kNone detaches the scores everywhere.
enum class ScoreGradMode { kKlOnly, kFull, kNone };

ScoreGradMode score_grad_mode_from_string(const std::string& s);

// The prediction MLP h(.) as seen by the loss; the model supplies a closure.
using Predictor = std::function<Variable(const Variable&)>;

// Negative cosine similarity for a pair of vectors. Zero-norm inputs yield 0
// and increment the shared warning counter instead of producing NaN.
double neg_cosine(const Tensor& x, const Tensor& y);
// Differentiable row-wise version for (N,d) batches.
Variable neg_cosine(const Variable& x, const Variable& y);

std::int64_t zero_norm_warnings();
void reset_zero_norm_warnings();

struct PairScores {
  Variable scores;  // P, length N, on the simplex
  Tensor raw;       // stage-I similarities p~
  Tensor centered;  // stage-II negative absolute deviations p
  double tau = kDefaultTau;
};

// Pair quality distribution (two-stage: intact-view similarities, then
// zero-meaned negative deviations through a tempered softmax).
PairScores pair_scores(const Variable& z_i, const Variable& z_j, const Variable& z_k,
                       const Predictor& h, double tau);

// Convenience for tests and bindings: stage II + softmax from raw p~ values.
Tensor pair_scores_from_raw(const Tensor& p_tilde, double tau);

// sum_l w_l * d(stop_grad(targets_l), h(pred_inputs_l)). The target argument
// never receives gradient; this is one direction of the symmetric loss.
Variable cosine_alignment(const Variable& targets, const Variable& pred_inputs,
                          const Predictor& h, const Variable& weights);

// (1/2) sum_l P_l ( d(sg(z_i), h(z_j)) + d(sg(z_j), h(z_i)) )
Variable scored_symmetric_loss(const Variable& z_i, const Variable& z_j, const Predictor& h,
                               const Variable& scores);

// KL(uniform || P) / log N, with P floored at kKlFloor.
Variable kl_uniform(const Variable& scores);
double kl_uniform_value(const Tensor& scores);

struct LossBreakdown {
  double l_cos = 0.0;
  double kl_term = 0.0;
  double total = 0.0;
  double lambda = kDefaultLambda;
  Variable total_var;  // backward entry point
  PairScores scores;
};

struct LossOptions {
  double tau = kDefaultTau;
  double lambda = kDefaultLambda;
  ScoreGradMode grad_mode = ScoreGradMode::kKlOnly;
  bool psm_enabled = true;  // off: uniform weights, zero KL (plain symmetric loss)
};

LossBreakdown total_loss(const Variable& z_i, const Variable& z_j, const Variable& z_k,
                         const Predictor& h, const LossOptions& opts);

// Multi-head recognition objective: weighted sum of per-attribute mean cross
// entropies (font carries kFontLossWeight).
struct AttributeLogitsBatch {
  Variable font, color, bold, italic, underline, strike;
};

Variable finetune_loss(const AttributeLogitsBatch& logits,
                       const std::vector<AttributeLabel>& labels,
                       double font_weight = kFontLossWeight);

}  // namespace scoring
}  // namespace taco
