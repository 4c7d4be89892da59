#pragma once

#include <string>
#include <vector>

#include "taco/ops.hpp"
#include "taco/rng.hpp"

namespace taco {
namespace nn {

using ag::Variable;

struct ParamRef {
  std::string name;
  Variable* var;
};

struct BufferRef {
  std::string name;
  Tensor* tensor;
};

// Parameter/buffer registry. Names are hierarchical ("encoder.stage1.conv1.w")
// so checkpoints are self-describing.
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(const std::string& prefix, std::vector<ParamRef>& params,
                       std::vector<BufferRef>& buffers) = 0;

  std::vector<ParamRef> parameters(const std::string& prefix = "") {
    std::vector<ParamRef> p;
    std::vector<BufferRef> b;
    collect(prefix, p, b);
    return p;
  }
  std::vector<BufferRef> buffers(const std::string& prefix = "") {
    std::vector<ParamRef> p;
    std::vector<BufferRef> b;
    collect(prefix, p, b);
    return b;
  }
  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.var->size();
    return n;
  }
};

class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(int kh, int kw, std::int64_t cin, std::int64_t cout, int stride, int pad, Rng& rng);

  Variable forward(const Variable& x) const { return ops::conv2d(x, w, b, stride_, pad_); }
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  Variable w, b;

 private:
  int stride_ = 1, pad_ = 0;
};

class BatchNorm : public Module {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::int64_t channels, bool always_batch_stats = false);

  // training toggles both the statistics source and the running update;
  // always_batch_stats pins the source to in-batch moments in either mode.
  Variable forward(const Variable& x, bool training);
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  Variable gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

 private:
  bool always_batch_stats_ = false;
};

class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng);

  Variable forward(const Variable& x) const { return ops::linear(x, w, b); }
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  Variable w, b;
};

// SGD with momentum and decoupled-from-nothing classic weight decay
// (gradient += wd * w), the standard companion of the configured schedule.
class Sgd {
 public:
  Sgd(std::vector<ParamRef> params, double momentum, double weight_decay);

  void step(double lr);
  void zero_grad();

 private:
  std::vector<ParamRef> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

// Cosine annealing from base_lr (step 0) to 0 (final step).
double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps);

}  // namespace nn
}  // namespace taco
