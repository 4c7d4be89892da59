#include "taco/scoring.hpp"

#include <cmath>

namespace taco {
namespace scoring {

ScoreGradMode score_grad_mode_from_string(const std::string& s) {
  if (s == "kl_only") return ScoreGradMode::kKlOnly;
  if (s == "full") return ScoreGradMode::kFull;
  if (s == "none") return ScoreGradMode::kNone;
  throw ConfigError("loss.score_grad_mode must be one of kl_only|full|none, got '" + s + "'");
}

double neg_cosine(const Tensor& x, const Tensor& y) {
  TACO_CHECK(x.rank() == 1 && y.rank() == 1 && x.size() == y.size(), ShapeError,
             "neg_cosine expects two vectors of equal length");
  Variable vx(x.reshaped({1, x.size()}));
  Variable vy(y.reshaped({1, y.size()}));
  return ops::rowwise_neg_cosine(vx, vy).value()[0];
}

Variable neg_cosine(const Variable& x, const Variable& y) {
  return ops::rowwise_neg_cosine(x, y);
}

std::int64_t zero_norm_warnings() { return ops::zero_norm_events(); }
void reset_zero_norm_warnings() { ops::reset_zero_norm_events(); }

PairScores pair_scores(const Variable& z_i, const Variable& z_j, const Variable& z_k,
                       const Predictor& h, double tau) {
  TACO_CHECK(tau > 0.0, ConfigError, "pair_scores: tau must be positive");
  const std::int64_t n = z_i.value().dim(0);
  TACO_CHECK(n >= 2, DataError,
             "pair_scores requires a batch of at least 2 (softmax over a singleton is vacuous; "
             "disable PSM instead)");

  Variable d_intact_i = ops::rowwise_neg_cosine(z_k, z_i);
  Variable d_intact_j = ops::rowwise_neg_cosine(z_k, h(z_j));
  Variable p_tilde = ops::mul_scalar(ops::add(d_intact_i, d_intact_j), 0.5);

  Variable mean = ops::mean_all(p_tilde);
  Variable centered = ops::neg(ops::abs(ops::sub_scalar_var(p_tilde, mean)));
  Variable scores = ops::softmax_lastdim(ops::mul_scalar(centered, 1.0 / tau));

  PairScores out;
  out.scores = scores;
  out.raw = p_tilde.value().clone();
  out.centered = centered.value().clone();
  out.tau = tau;
  return out;
}

Tensor pair_scores_from_raw(const Tensor& p_tilde, double tau) {
  TACO_CHECK(tau > 0.0, ConfigError, "pair_scores_from_raw: tau must be positive");
  TACO_CHECK(p_tilde.rank() == 1 && p_tilde.size() >= 2, ShapeError,
             "pair_scores_from_raw expects a vector of length >= 2");
  Variable pt(p_tilde.clone());
  Variable mean = ops::mean_all(pt);
  Variable centered = ops::neg(ops::abs(ops::sub_scalar_var(pt, mean)));
  return ops::softmax_lastdim(ops::mul_scalar(centered, 1.0 / tau)).value();
}

Variable cosine_alignment(const Variable& targets, const Variable& pred_inputs,
                          const Predictor& h, const Variable& weights) {
  TACO_CHECK(weights.value().rank() == 1 &&
                 weights.value().dim(0) == targets.value().dim(0),
             ShapeError, "cosine_alignment: weight length does not match batch");
  Variable d = ops::rowwise_neg_cosine(targets.detach(), h(pred_inputs));
  return ops::sum_all(ops::mul(weights, d));
}

Variable scored_symmetric_loss(const Variable& z_i, const Variable& z_j, const Predictor& h,
                               const Variable& scores) {
  TACO_CHECK(scores.value().rank() == 1 && scores.value().dim(0) == z_i.value().dim(0),
             ShapeError, "scored_symmetric_loss: score length does not match batch");
  Variable half_ij = cosine_alignment(z_i, z_j, h, scores);
  Variable half_ji = cosine_alignment(z_j, z_i, h, scores);
  return ops::mul_scalar(ops::add(half_ij, half_ji), 0.5);
}

Variable kl_uniform(const Variable& scores) { return ops::kl_uniform(scores, kKlFloor); }

double kl_uniform_value(const Tensor& scores) {
  Variable p(scores.clone());
  return ops::kl_uniform(p, kKlFloor).value()[0];
}

LossBreakdown total_loss(const Variable& z_i, const Variable& z_j, const Variable& z_k,
                         const Predictor& h, const LossOptions& opts) {
  const std::int64_t n = z_i.value().dim(0);
  LossBreakdown out;
  out.lambda = opts.lambda;

  if (!opts.psm_enabled) {
    // Uniform weights and no regularizer: the plain symmetric loss.
    Variable uniform(Tensor::full({n}, 1.0 / static_cast<double>(n)));
    Variable l_cos = scored_symmetric_loss(z_i, z_j, h, uniform);
    out.scores.scores = uniform;
    out.scores.raw = Tensor::zeros({n});
    out.scores.centered = Tensor::zeros({n});
    out.scores.tau = opts.tau;
    out.total_var = l_cos;
    out.l_cos = l_cos.value()[0];
    out.kl_term = 0.0;
    out.total = out.l_cos;
    return out;
  }

  out.scores = pair_scores(z_i, z_j, z_k, h, opts.tau);

  Variable weights = (opts.grad_mode == ScoreGradMode::kFull) ? out.scores.scores
                                                              : out.scores.scores.detach();
  Variable l_cos = scored_symmetric_loss(z_i, z_j, h, weights);

  Variable kl_scores = (opts.grad_mode == ScoreGradMode::kNone) ? out.scores.scores.detach()
                                                                : out.scores.scores;
  Variable kl = kl_uniform(kl_scores);

  out.total_var = ops::add(l_cos, ops::mul_scalar(kl, opts.lambda));
  out.l_cos = l_cos.value()[0];
  out.kl_term = kl.value()[0];
  out.total = out.total_var.value()[0];
  return out;
}

Variable finetune_loss(const AttributeLogitsBatch& logits,
                       const std::vector<AttributeLabel>& labels, double font_weight) {
  const std::size_t n = labels.size();
  TACO_CHECK(n > 0, DataError, "finetune_loss: empty batch");
  std::vector<int> font(n), color(n), bold(n), italic(n), underline(n), strike(n);
  for (std::size_t i = 0; i < n; ++i) {
    font[i] = labels[i].font_id;
    color[i] = labels[i].color_id;
    bold[i] = labels[i].bold ? 1 : 0;
    italic[i] = labels[i].italic ? 1 : 0;
    underline[i] = labels[i].underline ? 1 : 0;
    strike[i] = labels[i].strike ? 1 : 0;
  }
  Variable total = ops::mul_scalar(ops::cross_entropy_logits(logits.font, font), font_weight);
  total = ops::add(total, ops::cross_entropy_logits(logits.color, color));
  total = ops::add(total, ops::cross_entropy_logits(logits.bold, bold));
  total = ops::add(total, ops::cross_entropy_logits(logits.italic, italic));
  total = ops::add(total, ops::cross_entropy_logits(logits.underline, underline));
  total = ops::add(total, ops::cross_entropy_logits(logits.strike, strike));
  return total;
}

}  // namespace scoring
}  // namespace taco
