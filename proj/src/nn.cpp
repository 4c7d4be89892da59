#include "taco/nn.hpp"

#include <cmath>

namespace taco {
namespace nn {

namespace {
Tensor he_normal(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  double* p = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) p[i] = rng.normal(0.0, stddev);
  return t;
}
}  // namespace

Conv2d::Conv2d(int kh, int kw, std::int64_t cin, std::int64_t cout, int stride, int pad, Rng& rng)
    : stride_(stride), pad_(pad) {
  w = Variable(he_normal({kh, kw, cin, cout}, static_cast<std::int64_t>(kh) * kw * cin, rng),
               /*requires_grad=*/true);
  b = Variable(Tensor::zeros({cout}), /*requires_grad=*/true);
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& params,
                     std::vector<BufferRef>&) {
  params.push_back({prefix + ".w", &w});
  params.push_back({prefix + ".b", &b});
}

BatchNorm::BatchNorm(std::int64_t channels, bool always_batch_stats)
    : always_batch_stats_(always_batch_stats) {
  gamma = Variable(Tensor::ones({channels}), /*requires_grad=*/true);
  beta = Variable(Tensor::zeros({channels}), /*requires_grad=*/true);
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::ones({channels});
}

Variable BatchNorm::forward(const Variable& x, bool training) {
  const bool use_batch = training || always_batch_stats_;
  return ops::batch_norm(x, gamma, beta, running_mean, running_var, momentum, eps, use_batch,
                         /*update_running=*/training);
}

void BatchNorm::collect(const std::string& prefix, std::vector<ParamRef>& params,
                        std::vector<BufferRef>& buffers) {
  params.push_back({prefix + ".gamma", &gamma});
  params.push_back({prefix + ".beta", &beta});
  buffers.push_back({prefix + ".running_mean", &running_mean});
  buffers.push_back({prefix + ".running_var", &running_var});
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng) {
  w = Variable(he_normal({in, out}, in, rng), /*requires_grad=*/true);
  b = Variable(Tensor::zeros({out}), /*requires_grad=*/true);
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& params,
                     std::vector<BufferRef>&) {
  params.push_back({prefix + ".w", &w});
  params.push_back({prefix + ".b", &b});
}

Sgd::Sgd(std::vector<ParamRef> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.push_back(Tensor::zeros(p.var->value().shape()));
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Variable& v = *params_[i].var;
    if (!v.has_grad()) continue;  // parameter unused this step
    const double* g = v.grad().data();
    double* w = v.mutable_value().data();
    double* vel = velocity_[i].data();
    const std::int64_t n = v.size();
    for (std::int64_t j = 0; j < n; ++j) {
      const double eff = g[j] + weight_decay_ * w[j];
      vel[j] = momentum_ * vel[j] + eff;
      w[j] -= lr * vel[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.var->zero_grad();
}

double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 1) return base_lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace nn
}  // namespace taco
