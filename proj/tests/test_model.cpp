#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "taco/model.hpp"
#include "test_util.hpp"

using namespace taco;
using taco_test::grad_check;
using taco_test::random_tensor;
using ag::Variable;

namespace {

// Small geometry so forwards stay cheap: canvas 16x32, stem /2 -> 8x16.
model::EncoderConfig tiny_config() {
  model::EncoderConfig cfg;
  cfg.stage_widths = {8, 16};
  cfg.stage_depths = {1, 1};
  cfg.canvas_h = 16;
  cfg.canvas_w = 32;
  cfg.projection_dim = 16;
  cfg.maem.patch_size = 2;
  cfg.maem.num_heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("config validation catches bad geometry") {
  auto cfg = tiny_config();
  cfg.maem.patch_size = 3;  // 8x16 not divisible by 3
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.maem_insert_stage = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.maem.num_heads = 3;  // width 8 not divisible
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.stage_depths = {1};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("encode contract: shape, determinism, canvas check") {
  model::TacoModel m(tiny_config(), 4, 123);
  Rng rng(1);
  Variable imgs(random_tensor({3, 16, 32, 3}, rng, 0.0, 1.0));

  ag::NoGradGuard guard;
  Variable f1 = m.encode(imgs, false, nullptr);
  CHECK(f1.shape() == std::vector<std::int64_t>{3, 16});
  Variable f2 = m.encode(imgs, false, nullptr);
  for (std::int64_t i = 0; i < f1.size(); ++i) CHECK(f1.value()[i] == f2.value()[i]);

  Variable bad(random_tensor({1, 8, 32, 3}, rng));
  CHECK_THROWS_AS(m.encode(bad, false, nullptr), ShapeError);
}

TEST_CASE("maem bypass changes only the maem contribution") {
  auto cfg = tiny_config();
  model::TacoModel with(cfg, 4, 7);
  cfg.maem_enabled = false;
  model::TacoModel without(cfg, 4, 7);
  // same init stream up to the maem parameters; bypass drops them
  CHECK(with.parameter_count() > without.parameter_count());
  Rng rng(2);
  Variable imgs(random_tensor({2, 16, 32, 3}, rng, 0.0, 1.0));
  ag::NoGradGuard guard;
  CHECK(without.encode(imgs, false, nullptr).shape() == std::vector<std::int64_t>{2, 16});
}

TEST_CASE("projection and prediction heads: shapes and gradients") {
  Rng rng(3);
  model::ProjectionHead g(8, 12, rng);
  model::PredictionHead h(12, 3, rng);
  Variable x(random_tensor({5, 8}, rng), true);
  Variable z = g.forward(x, true);
  CHECK(z.shape() == std::vector<std::int64_t>{5, 12});
  Variable p = h.forward(z, true);
  CHECK(p.shape() == std::vector<std::int64_t>{5, 12});

  Variable coeff(random_tensor({5, 12}, rng));
  auto rep = grad_check(
      [&] {
        return ops::sum_all(ops::mul(h.forward(g.forward(x, false), false), coeff));
      },
      {x});
  CHECK(rep.ok());
}

TEST_CASE("zeroed final projection scale yields the zero vector") {
  Rng rng(5);
  model::ProjectionHead g(8, 12, rng);
  g.bn3.gamma.mutable_value().fill(0.0);
  Variable x(random_tensor({4, 8}, rng));
  Variable z = g.forward(x, true);
  for (std::int64_t i = 0; i < z.size(); ++i) CHECK(z.value()[i] == 0.0);

  // downstream NaN guard: zero embeddings hit the zero-norm path, not NaN
  scoring::reset_zero_norm_warnings();
  Variable d = scoring::neg_cosine(z, z);
  for (std::int64_t i = 0; i < d.size(); ++i) CHECK(d.value()[i] == 0.0);
  CHECK(scoring::zero_norm_warnings() == 4);
  scoring::reset_zero_norm_warnings();
}

TEST_CASE("attribute heads: sizes, bias at zero feature, independence") {
  model::TacoModel m(tiny_config(), 7, 11);
  Variable feat(Tensor::zeros({2, 16}));
  auto logits = m.attribute_heads(feat);
  CHECK(logits.font.shape() == std::vector<std::int64_t>{2, 7});
  CHECK(logits.color.shape() == std::vector<std::int64_t>{2, kNumColors});
  CHECK(logits.bold.shape() == std::vector<std::int64_t>{2, 2});
  CHECK(logits.italic.shape() == std::vector<std::int64_t>{2, 2});
  CHECK(logits.underline.shape() == std::vector<std::int64_t>{2, 2});
  CHECK(logits.strike.shape() == std::vector<std::int64_t>{2, 2});
  // zero feature -> logits equal head biases (zero-initialized)
  for (std::int64_t i = 0; i < logits.font.size(); ++i) CHECK(logits.font.value()[i] == 0.0);

  // no parameter shared between g, h and the heads; names unique
  auto params = m.parameters();
  std::set<std::string> names;
  std::set<const void*> storages;
  for (auto& p : params) {
    CHECK(names.insert(p.name).second);
    CHECK(storages.insert(static_cast<const void*>(p.var->value().data())).second);
  }
  bool saw_projection = false, saw_prediction = false, saw_heads = false;
  for (auto& p : params) {
    saw_projection |= p.name.find(".projection.") != std::string::npos;
    saw_prediction |= p.name.find(".prediction.") != std::string::npos;
    saw_heads |= p.name.find(".heads.") != std::string::npos;
  }
  CHECK(saw_projection);
  CHECK(saw_prediction);
  CHECK(saw_heads);
}

TEST_CASE("full forward is NaN-free over random inputs") {
  model::TacoModel m(tiny_config(), 4, 17);
  Rng rng(19);
  ag::NoGradGuard guard;
  for (int trial = 0; trial < 50; ++trial) {
    Variable imgs(random_tensor({2, 16, 32, 3}, rng, 0.0, 1.0));
    Variable feat = m.encode(imgs, false, nullptr);
    Variable z = m.project(feat, false);
    Variable p = m.predict_head(z, false);
    CHECK(feat.value().all_finite());
    CHECK(z.value().all_finite());
    CHECK(p.value().all_finite());
  }
}

TEST_CASE("end-to-end training gradient through encoder and loss") {
  // one SGD step on the full contrastive objective decreases nothing yet,
  // but gradients must exist for every parameter that participates
  model::TacoModel m(tiny_config(), 4, 23);
  Rng rng(29);
  Variable vi(random_tensor({3, 16, 32, 3}, rng, 0.0, 1.0));
  Variable vj(random_tensor({3, 16, 32, 3}, rng, 0.0, 1.0));
  Variable vk(random_tensor({3, 16, 32, 3}, rng, 0.0, 1.0));

  Rng fwd(31);
  Variable zi = m.project(m.encode(vi, true, &fwd), true);
  Variable zj = m.project(m.encode(vj, true, &fwd), true);
  Variable zk = m.project(m.encode(vk, true, &fwd), true);
  scoring::LossOptions opts;
  auto breakdown = scoring::total_loss(zi, zj, zk, m.predictor(true), opts);
  breakdown.total_var.backward();

  std::size_t with_grad = 0, total = 0;
  for (auto& p : m.parameters()) {
    ++total;
    if (p.var->has_grad()) ++with_grad;
  }
  // attribute heads are not part of this loss; everything else is
  CHECK(with_grad >= total - 12);
  CHECK(with_grad > 0);
}
