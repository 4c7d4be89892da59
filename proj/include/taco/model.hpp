#pragma once

#include <memory>
#include <optional>

#include "taco/maem.hpp"
#include "taco/scoring.hpp"

namespace taco {
namespace model {

using ag::Variable;

struct EncoderConfig {
  std::vector<std::int64_t> stage_widths{32, 64, 128, 256};
  std::vector<int> stage_depths{1, 1, 1, 1};
  int stem_stride = 2;
  std::int64_t canvas_h = 32;
  std::int64_t canvas_w = 256;
  std::int64_t projection_dim = 256;
  int maem_insert_stage = 1;  // 1-based stage index; MAEM runs on that stage's output
  bool maem_enabled = true;   // false = plain backbone (ablation bypass)
  maem::MaemConfig maem;

  std::int64_t embedding_dim() const { return stage_widths.back(); }
  std::int64_t prediction_bottleneck() const { return std::max<std::int64_t>(1, projection_dim / 4); }
  void validate() const;
};

// conv3x3 -> BN -> ReLU -> conv3x3 -> BN (+ projected skip) -> ReLU
class ResidualBlock : public nn::Module {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::int64_t cin, std::int64_t cout, int stride, Rng& rng);

  Variable forward(const Variable& x, bool training);
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers) override;

 private:
  nn::Conv2d conv1_, conv2_, skip_conv_;
  nn::BatchNorm bn1_, bn2_, skip_bn_;
  bool projected_skip_ = false;
};

// Backbone f(.): stem + residual stages with MAEM after the configured stage,
// global average pooling to embedding_dim.
class Encoder : public nn::Module {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng);

  // images: (N, canvas_h, canvas_w, 3) in [0,1]
  Variable forward(const Variable& images, bool training, Rng* rng,
                   Tensor* maem_attention = nullptr);
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers) override;

  const EncoderConfig& config() const { return cfg_; }
  const maem::Maem* maem_module() const { return maem_ ? maem_.get() : nullptr; }

 private:
  EncoderConfig cfg_;
  nn::Conv2d stem_;
  nn::BatchNorm stem_bn_;
  std::vector<std::vector<ResidualBlock>> stages_;
  std::unique_ptr<maem::Maem> maem_;
};

// g(.): three linear layers with normalization, the last one rectifier-free.
class ProjectionHead : public nn::Module {
 public:
  ProjectionHead() = default;
  ProjectionHead(std::int64_t in, std::int64_t out, Rng& rng);
  Variable forward(const Variable& x, bool training);
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers) override;

  nn::BatchNorm bn3;  // exposed: zeroing its scale is a useful degenerate test

 private:
  nn::Linear l1_, l2_, l3_;
  nn::BatchNorm bn1_, bn2_;
};

// h(.): bottleneck MLP (dim -> dim/4 -> dim).
class PredictionHead : public nn::Module {
 public:
  PredictionHead() = default;
  PredictionHead(std::int64_t dim, std::int64_t bottleneck, Rng& rng);
  Variable forward(const Variable& x, bool training);
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers) override;

 private:
  nn::Linear l1_, l2_;
  nn::BatchNorm bn1_;
};

// Six independent linear classifiers over the pooled backbone feature.
class AttributeHeads : public nn::Module {
 public:
  AttributeHeads() = default;
  AttributeHeads(std::int64_t in, std::int64_t num_fonts, Rng& rng);
  scoring::AttributeLogitsBatch forward(const Variable& features) const;
  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers) override;
  std::int64_t num_fonts() const { return font_.w.value().dim(1); }

 private:
  nn::Linear font_, color_, bold_, italic_, underline_, strike_;
};

// The full system: encoder, projection/prediction MLPs, attribute heads.
class TacoModel : public nn::Module {
 public:
  TacoModel() = default;
  TacoModel(const EncoderConfig& cfg, std::int64_t num_fonts, std::uint64_t init_seed);

  Variable encode(const Variable& images, bool training, Rng* rng,
                  Tensor* maem_attention = nullptr);
  Variable project(const Variable& features, bool training);
  Variable predict_head(const Variable& z, bool training);
  scoring::AttributeLogitsBatch attribute_heads(const Variable& features) const;

  // Predictor closure for the contrastive loss.
  scoring::Predictor predictor(bool training);

  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers) override;

  // Parameter/buffer sets by component, for freezing and checkpoint layout.
  std::vector<nn::ParamRef> encoder_params();
  std::vector<nn::BufferRef> encoder_buffers();
  std::vector<nn::ParamRef> head_params();

  const EncoderConfig& config() const { return cfg_; }
  std::int64_t num_fonts() const { return heads_.num_fonts(); }

  Encoder encoder;

 private:
  EncoderConfig cfg_;
  ProjectionHead projection_;
  PredictionHead prediction_;
  AttributeHeads heads_;
};

}  // namespace model
}  // namespace taco
