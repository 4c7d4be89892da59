#include "taco/model.hpp"

namespace taco {
namespace model {

void EncoderConfig::validate() const {
  TACO_CHECK(!stage_widths.empty(), ConfigError, "model.stage_widths must not be empty");
  TACO_CHECK(stage_depths.size() == stage_widths.size(), ConfigError,
             "model.stage_depths must match model.stage_widths in length");
  for (int d : stage_depths) TACO_CHECK(d >= 1, ConfigError, "stage depths must be >= 1");
  TACO_CHECK(stem_stride >= 1, ConfigError, "model.stem_stride must be >= 1");
  TACO_CHECK(projection_dim >= 4, ConfigError, "model.projection_dim must be >= 4");
  maem.validate();
  if (maem_enabled) {
    TACO_CHECK(maem_insert_stage >= 1 &&
                   maem_insert_stage <= static_cast<int>(stage_widths.size()),
               ConfigError,
               "maem.insert_stage " + std::to_string(maem_insert_stage) +
                   " does not index an existing stage (1.." +
                   std::to_string(stage_widths.size()) + ")");
    // geometry at the insertion point: stem divides once, stages 2..k divide again
    std::int64_t h = canvas_h / stem_stride;
    std::int64_t w = canvas_w / stem_stride;
    for (int s = 2; s <= maem_insert_stage; ++s) {
      h /= 2;
      w /= 2;
    }
    TACO_CHECK(h % maem.patch_size == 0 && w % maem.patch_size == 0, ConfigError,
               "stage " + std::to_string(maem_insert_stage) + " output " + std::to_string(h) +
                   "x" + std::to_string(w) + " is not divisible by maem.patch_size " +
                   std::to_string(maem.patch_size));
    const std::int64_t c = stage_widths[static_cast<std::size_t>(maem_insert_stage - 1)];
    TACO_CHECK(c % maem.num_heads == 0, ConfigError,
               "stage width " + std::to_string(c) + " not divisible by maem.num_heads " +
                   std::to_string(maem.num_heads));
  }
}

ResidualBlock::ResidualBlock(std::int64_t cin, std::int64_t cout, int stride, Rng& rng) {
  conv1_ = nn::Conv2d(3, 3, cin, cout, stride, 1, rng);
  bn1_ = nn::BatchNorm(cout);
  conv2_ = nn::Conv2d(3, 3, cout, cout, 1, 1, rng);
  bn2_ = nn::BatchNorm(cout);
  projected_skip_ = (cin != cout) || (stride != 1);
  if (projected_skip_) {
    skip_conv_ = nn::Conv2d(1, 1, cin, cout, stride, 0, rng);
    skip_bn_ = nn::BatchNorm(cout);
  }
}

Variable ResidualBlock::forward(const Variable& x, bool training) {
  Variable y = ops::relu(bn1_.forward(conv1_.forward(x), training));
  y = bn2_.forward(conv2_.forward(y), training);
  Variable shortcut = projected_skip_ ? skip_bn_.forward(skip_conv_.forward(x), training) : x;
  return ops::relu(ops::add(y, shortcut));
}

void ResidualBlock::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                            std::vector<nn::BufferRef>& buffers) {
  conv1_.collect(prefix + ".conv1", params, buffers);
  bn1_.collect(prefix + ".bn1", params, buffers);
  conv2_.collect(prefix + ".conv2", params, buffers);
  bn2_.collect(prefix + ".bn2", params, buffers);
  if (projected_skip_) {
    skip_conv_.collect(prefix + ".skip_conv", params, buffers);
    skip_bn_.collect(prefix + ".skip_bn", params, buffers);
  }
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  stem_ = nn::Conv2d(3, 3, 3, cfg_.stage_widths[0], cfg_.stem_stride, 1, rng);
  stem_bn_ = nn::BatchNorm(cfg_.stage_widths[0]);
  std::int64_t cin = cfg_.stage_widths[0];
  for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
    std::vector<ResidualBlock> blocks;
    const std::int64_t cout = cfg_.stage_widths[s];
    for (int d = 0; d < cfg_.stage_depths[s]; ++d) {
      const int stride = (d == 0 && s > 0) ? 2 : 1;
      blocks.emplace_back(d == 0 ? cin : cout, cout, stride, rng);
    }
    stages_.push_back(std::move(blocks));
    cin = cout;
  }
  if (cfg_.maem_enabled) {
    const std::int64_t c = cfg_.stage_widths[static_cast<std::size_t>(cfg_.maem_insert_stage - 1)];
    maem_ = std::make_unique<maem::Maem>(c, cfg_.maem, rng);
  }
}

Variable Encoder::forward(const Variable& images, bool training, Rng* rng,
                          Tensor* maem_attention) {
  const Tensor& xv = images.value();
  TACO_CHECK(xv.rank() == 4 && xv.dim(1) == cfg_.canvas_h && xv.dim(2) == cfg_.canvas_w &&
                 xv.dim(3) == 3,
             ShapeError,
             "encoder input must be (N," + std::to_string(cfg_.canvas_h) + "," +
                 std::to_string(cfg_.canvas_w) + ",3), got " + xv.shape_str());

  Variable x = ops::relu(stem_bn_.forward(stem_.forward(images), training));
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s]) x = block.forward(x, training);
    if (maem_ && static_cast<int>(s) + 1 == cfg_.maem_insert_stage) {
      x = maem_->forward(x, training, rng, maem_attention);
    }
  }
  Variable pooled = ops::global_avg_pool(x);
  TACO_CHECK(pooled.value().all_finite(), InternalError,
             "encoder produced non-finite features");
  return pooled;
}

void Encoder::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                      std::vector<nn::BufferRef>& buffers) {
  stem_.collect(prefix + ".stem", params, buffers);
  stem_bn_.collect(prefix + ".stem_bn", params, buffers);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t d = 0; d < stages_[s].size(); ++d) {
      stages_[s][d].collect(
          prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(d), params,
          buffers);
    }
  }
  if (maem_) maem_->collect(prefix + ".maem", params, buffers);
}

ProjectionHead::ProjectionHead(std::int64_t in, std::int64_t out, Rng& rng) {
  l1_ = nn::Linear(in, out, rng);
  bn1_ = nn::BatchNorm(out);
  l2_ = nn::Linear(out, out, rng);
  bn2_ = nn::BatchNorm(out);
  l3_ = nn::Linear(out, out, rng);
  bn3 = nn::BatchNorm(out);
}

Variable ProjectionHead::forward(const Variable& x, bool training) {
  Variable y = ops::relu(bn1_.forward(l1_.forward(x), training));
  y = ops::relu(bn2_.forward(l2_.forward(y), training));
  y = bn3.forward(l3_.forward(y), training);
  TACO_CHECK(y.value().all_finite(), InternalError, "projection head produced non-finite values");
  return y;
}

void ProjectionHead::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                             std::vector<nn::BufferRef>& buffers) {
  l1_.collect(prefix + ".l1", params, buffers);
  bn1_.collect(prefix + ".bn1", params, buffers);
  l2_.collect(prefix + ".l2", params, buffers);
  bn2_.collect(prefix + ".bn2", params, buffers);
  l3_.collect(prefix + ".l3", params, buffers);
  bn3.collect(prefix + ".bn3", params, buffers);
}

PredictionHead::PredictionHead(std::int64_t dim, std::int64_t bottleneck, Rng& rng) {
  l1_ = nn::Linear(dim, bottleneck, rng);
  bn1_ = nn::BatchNorm(bottleneck);
  l2_ = nn::Linear(bottleneck, dim, rng);
}

Variable PredictionHead::forward(const Variable& x, bool training) {
  Variable y = ops::relu(bn1_.forward(l1_.forward(x), training));
  return l2_.forward(y);
}

void PredictionHead::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                             std::vector<nn::BufferRef>& buffers) {
  l1_.collect(prefix + ".l1", params, buffers);
  bn1_.collect(prefix + ".bn1", params, buffers);
  l2_.collect(prefix + ".l2", params, buffers);
}

AttributeHeads::AttributeHeads(std::int64_t in, std::int64_t num_fonts, Rng& rng) {
  font_ = nn::Linear(in, num_fonts, rng);
  color_ = nn::Linear(in, kNumColors, rng);
  bold_ = nn::Linear(in, 2, rng);
  italic_ = nn::Linear(in, 2, rng);
  underline_ = nn::Linear(in, 2, rng);
  strike_ = nn::Linear(in, 2, rng);
}

scoring::AttributeLogitsBatch AttributeHeads::forward(const Variable& features) const {
  scoring::AttributeLogitsBatch out;
  out.font = font_.forward(features);
  out.color = color_.forward(features);
  out.bold = bold_.forward(features);
  out.italic = italic_.forward(features);
  out.underline = underline_.forward(features);
  out.strike = strike_.forward(features);
  return out;
}

void AttributeHeads::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                             std::vector<nn::BufferRef>& buffers) {
  font_.collect(prefix + ".font", params, buffers);
  color_.collect(prefix + ".color", params, buffers);
  bold_.collect(prefix + ".bold", params, buffers);
  italic_.collect(prefix + ".italic", params, buffers);
  underline_.collect(prefix + ".underline", params, buffers);
  strike_.collect(prefix + ".strike", params, buffers);
}

TacoModel::TacoModel(const EncoderConfig& cfg, std::int64_t num_fonts, std::uint64_t init_seed)
    : cfg_(cfg) {
  TACO_CHECK(num_fonts >= 1, ConfigError, "model needs at least one font class");
  Rng rng(init_seed);
  encoder = Encoder(cfg_, rng);
  projection_ = ProjectionHead(cfg_.embedding_dim(), cfg_.projection_dim, rng);
  prediction_ = PredictionHead(cfg_.projection_dim, cfg_.prediction_bottleneck(), rng);
  heads_ = AttributeHeads(cfg_.embedding_dim(), num_fonts, rng);
}

Variable TacoModel::encode(const Variable& images, bool training, Rng* rng,
                           Tensor* maem_attention) {
  return encoder.forward(images, training, rng, maem_attention);
}

Variable TacoModel::project(const Variable& features, bool training) {
  TACO_CHECK(features.value().rank() == 2 && features.value().dim(1) == cfg_.embedding_dim(),
             ShapeError, "project expects (N," + std::to_string(cfg_.embedding_dim()) + ")");
  return projection_.forward(features, training);
}

Variable TacoModel::predict_head(const Variable& z, bool training) {
  TACO_CHECK(z.value().rank() == 2 && z.value().dim(1) == cfg_.projection_dim, ShapeError,
             "predict_head expects (N," + std::to_string(cfg_.projection_dim) + ")");
  return prediction_.forward(z, training);
}

scoring::AttributeLogitsBatch TacoModel::attribute_heads(const Variable& features) const {
  return heads_.forward(features);
}

scoring::Predictor TacoModel::predictor(bool training) {
  return [this, training](const Variable& z) { return predict_head(z, training); };
}

void TacoModel::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                        std::vector<nn::BufferRef>& buffers) {
  const std::string base = prefix.empty() ? "model" : prefix;
  encoder.collect(base + ".encoder", params, buffers);
  projection_.collect(base + ".projection", params, buffers);
  prediction_.collect(base + ".prediction", params, buffers);
  heads_.collect(base + ".heads", params, buffers);
}

std::vector<nn::ParamRef> TacoModel::encoder_params() { return encoder.parameters("model.encoder"); }
std::vector<nn::BufferRef> TacoModel::encoder_buffers() { return encoder.buffers("model.encoder"); }

std::vector<nn::ParamRef> TacoModel::head_params() { return heads_.parameters("model.heads"); }

}  // namespace model
}  // namespace taco
