#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "satrack/backbone.hpp"
#include "satrack/model.hpp"

using namespace satrack;

namespace {

Tensor random_images(Rng& r, std::size_t n, std::size_t s) {
  std::vector<double> v(n * s * s * 3);
  for (auto& x : v) x = r.uniform(-2.0, 2.0);
  return Tensor::from({n, s, s, 3}, v);
}

Vocabulary vocab() { return Vocabulary::from_words({"the", "red", "blue", "square", "circle", "moving", "left"}); }

TextBatch text_batch(const std::vector<std::string>& descs, std::size_t len) {
  std::vector<TokenSequence> t;
  for (const auto& d : descs) t.push_back(tokenize(d, vocab(), len));
  return TextBatch::from(t);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST(ShapePlan, FullScaleMatchesTableOne) {
  const auto p = plan_stages(BackboneConfig::full());
  const std::size_t search[3] = {80, 40, 20}, tmpl[3] = {32, 16, 8}, dims[3] = {64, 192, 384}, heads[3] = {1, 3, 6},
                    depth[3] = {1, 4, 16};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(p[i].search_hw, search[i]);
    EXPECT_EQ(p[i].template_hw, tmpl[i]);
    EXPECT_EQ(p[i].dim, dims[i]);
    EXPECT_EQ(p[i].heads, heads[i]);
    EXPECT_EQ(p[i].tem_depth, depth[i]);
  }
}

TEST(ShapePlan, DeskStrideArithmetic) {
  const auto p = plan_stages(BackboneConfig::desk());
  EXPECT_EQ(p[0].search_hw, 16u);
  EXPECT_EQ(p[1].search_hw, 8u);
  EXPECT_EQ(p[2].search_hw, 4u);
  EXPECT_EQ(p[0].template_hw, 8u);
  EXPECT_EQ(p[1].template_hw, 4u);
  EXPECT_EQ(p[2].template_hw, 2u);
}

TEST(BackboneConfig, ValidationRejectsBadConfigs) {
  BackboneConfig c = BackboneConfig::desk();
  c.search_size = 66;
  EXPECT_THROW(c.validate(), ConfigError);
  c = BackboneConfig::desk();
  c.stages[1].heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = BackboneConfig::desk();
  c.sam_start_stage = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(BackboneConfig, JsonRoundTripAndPreset) {
  BackboneConfig c = BackboneConfig::desk();
  c.attention = AttentionMode::symmetric;
  c.text_mode = TextMode::asynchronous;
  const Json j = c;
  EXPECT_EQ(Json(j.get<BackboneConfig>()), j);
  const auto full = Json{{"preset", "full"}}.get<BackboneConfig>();
  EXPECT_EQ(full.search_size, 320u);
  EXPECT_THROW(Json({{"preset", "huge"}}).get<BackboneConfig>(), ConfigError);
  EXPECT_THROW(Json({{"attention", "sideways"}}).get<BackboneConfig>(), ConfigError);
}

TEST(Backbone, DeskForwardShapes) {
  const BackboneConfig cfg = BackboneConfig::desk();
  ParamStore store(1);
  const Backbone bb(store, cfg, vocab().size());
  Rng r(2);
  const auto out = bb.forward(random_images(r, 2, 32), random_images(r, 2, 64), text_batch({"the red square", "blue"}, 12),
                              Mode{false, false});
  EXPECT_EQ(out.search.shape(), (Shape{2, 4, 4, 32}));
  EXPECT_EQ(out.tmpl.shape(), (Shape{2, 2, 2, 32}));
  EXPECT_EQ(out.text.shape(), (Shape{2, 12, 32}));
  EXPECT_EQ(out.gates.size(), 3u);
}

TEST(Backbone, RejectsMismatchedInputs) {
  ParamStore store(1);
  const Backbone bb(store, BackboneConfig::desk(), vocab().size());
  Rng r(2);
  EXPECT_THROW(bb.forward(random_images(r, 1, 30), random_images(r, 1, 64), text_batch({"red"}, 12), Mode{}), ConfigError);
  EXPECT_THROW(bb.forward(random_images(r, 1, 32), random_images(r, 1, 64), text_batch({"red"}, 10), Mode{}), ConfigError);
}

TEST(Backbone, TemplateAndTextIsolatedFromSearch) {
  ParamStore store(4);
  const Backbone bb(store, BackboneConfig::desk(), vocab().size());
  Rng r(5);
  const Tensor tmpl = random_images(r, 2, 32);
  const TextBatch text = text_batch({"the red square", "moving left"}, 12);
  const auto a = bb.forward(tmpl, random_images(r, 2, 64), text, Mode{false, false});
  const auto b = bb.forward(tmpl, Tensor::zeros({2, 64, 64, 3}), text, Mode{false, false});
  EXPECT_TRUE(bit_equal(a.tmpl, b.tmpl));
  EXPECT_TRUE(bit_equal(a.text, b.text));
  EXPECT_FALSE(bit_equal(a.search, b.search));
}

TEST(Backbone, TemplateGradientWrtSearchIsExactlyZero) {
  ParamStore store(4);
  const Backbone bb(store, BackboneConfig::desk(), vocab().size());
  Rng r(6);
  Tensor search = random_images(r, 2, 64);
  search.set_requires_grad(true);
  const auto out = bb.forward(random_images(r, 2, 32), search, text_batch({"red", "blue circle"}, 12), Mode{false, false});
  backward(sum(out.tmpl) + sum(out.text));
  if (search.has_grad())
    for (double g : search.grad()) ASSERT_EQ(g, 0.0);
}

TEST(Backbone, SymmetricModeLetsSearchReachTemplate) {
  BackboneConfig cfg = BackboneConfig::desk();
  cfg.attention = AttentionMode::symmetric;
  ParamStore store(4);
  const Backbone bb(store, cfg, vocab().size());
  Rng r(7);
  const Tensor tmpl = random_images(r, 1, 32);
  const TextBatch text = text_batch({"red"}, 12);
  const auto a = bb.forward(tmpl, random_images(r, 1, 64), text, Mode{false, false});
  const auto b = bb.forward(tmpl, random_images(r, 1, 64), text, Mode{false, false});
  EXPECT_FALSE(bit_equal(a.tmpl, b.tmpl));
}

TEST(Backbone, WithoutSamOutputIgnoresText) {
  BackboneConfig cfg = BackboneConfig::desk();
  cfg.sam_enabled = false;
  ParamStore store(8);
  const Backbone bb(store, cfg, vocab().size());
  Rng r(9);
  const Tensor tmpl = random_images(r, 1, 32), search = random_images(r, 1, 64);
  const auto a = bb.forward(tmpl, search, text_batch({"the red square"}, 12), Mode{false, false});
  const auto b = bb.forward(tmpl, search, text_batch({"blue circle moving left"}, 12), Mode{false, false});
  EXPECT_TRUE(bit_equal(a.search, b.search));
  EXPECT_TRUE(a.gates.empty());
}

TEST(Backbone, SamStartStageControlsFusedStages) {
  for (int start = 1; start <= 3; ++start) {
    BackboneConfig cfg = BackboneConfig::desk();
    cfg.sam_start_stage = start;
    ParamStore store(1);
    const Backbone bb(store, cfg, vocab().size());
    Rng r(1);
    const auto out = bb.forward(random_images(r, 1, 32), random_images(r, 1, 64), text_batch({"red"}, 12), Mode{false, false});
    EXPECT_EQ(out.gates.size(), static_cast<std::size_t>(4 - start));
    EXPECT_EQ(bb.fuses(1), start == 1);
    EXPECT_EQ(store.params().count("backbone.stage1.sam.q.weight"), start == 1 ? 1u : 0u);
  }
}

TEST(Backbone, AsynchronousAndNoUpdateVariantsRun) {
  for (int variant = 0; variant < 3; ++variant) {
    BackboneConfig cfg = BackboneConfig::desk();
    if (variant == 0) cfg.text_mode = TextMode::asynchronous;
    if (variant == 1) cfg.text_update = false;
    if (variant == 2) cfg.cvt_prenorm = true;
    ParamStore store(3);
    const Backbone bb(store, cfg, vocab().size());
    Rng r(3);
    const auto out = bb.forward(random_images(r, 2, 32), random_images(r, 2, 64), text_batch({"red", "blue"}, 12), Mode{true, true});
    EXPECT_EQ(out.text.shape(), (Shape{2, 12, 32}));
    EXPECT_EQ(out.search.shape(), (Shape{2, 4, 4, 32}));
  }
}

TEST(Backbone, GatesLieStrictlyInsideUnitInterval) {
  ParamStore store(11);
  const Backbone bb(store, BackboneConfig::desk(), vocab().size());
  Rng r(12);
  const auto out = bb.forward(random_images(r, 4, 32), random_images(r, 4, 64),
                              text_batch({"red", "blue square", "the circle moving left", ""}, 12), Mode{false, false});
  for (const auto& g : out.gates)
    for (double v : g.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
}

TEST(Attention, TwoTokenClosedForm) {
  const Tensor q = Tensor::from({1, 1, 2}, {0.5, -1.0});
  const Tensor k = Tensor::from({1, 2, 2}, {1.0, 2.0, -0.5, 0.25});
  const Tensor v = Tensor::from({1, 2, 2}, {3.0, 1.0, -1.0, 4.0});
  const auto r = multi_head_attention(q, k, v, 1);
  const double s0 = (0.5 * 1.0 - 1.0 * 2.0) / std::sqrt(2.0), s1 = (0.5 * -0.5 - 1.0 * 0.25) / std::sqrt(2.0);
  const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  EXPECT_NEAR(r.weights[0], w0, 1e-15);
  EXPECT_NEAR(r.weights[1], 1.0 - w0, 1e-15);
  EXPECT_NEAR(r.out[0], w0 * 3.0 + (1 - w0) * -1.0, 1e-15);
  EXPECT_NEAR(r.out[1], w0 * 1.0 + (1 - w0) * 4.0, 1e-15);
}

TEST(Attention, HeadsMustDivideWidth) {
  const Tensor x = Tensor::zeros({1, 2, 6});
  EXPECT_THROW(multi_head_attention(x, x, x, 4), ConfigError);
}

namespace {

struct SamFixture {
  ParamStore store{21};
  StageConfig st;
  SemanticAwareModule sam;
  SamFixture(std::size_t dim) {
    st.dim = dim;
    st.heads = 1;
    sam = SemanticAwareModule(store, "sam", st);
  }
  void fill(const std::string& name, double v) {
    Tensor t = store.at(name);
    for (auto& x : t.mutable_data()) x = v;
  }
};

}  // namespace

TEST(Sam, SingleChannelGatedValue) {
  SamFixture fx(1);
  // fuse conv = centre tap 1, no bias: search' = s + bn(g * s)
  fx.fill("sam.fuse.weight", 0.0);
  Tensor w = fx.store.at("sam.fuse.weight");
  w.mutable_data()[4] = 1.0;
  Rng r(1);
  std::vector<double> sv(9), tv(4), txt(3);
  for (auto& x : sv) x = r.normal();
  for (auto& x : tv) x = r.normal();
  for (auto& x : txt) x = r.normal();
  const Tensor search = Tensor::from({1, 3, 3, 1}, sv);
  const TextBatch tb = TextBatch::from({TokenSequence{{0, 1, 2}, {1, 1, 0}}});
  const auto out = fx.sam({Tensor::from({1, 2, 2, 1}, tv), search}, Tensor::from({1, 3, 1}, txt), tb, true, Mode{false, false});
  const double g = out.gate[0];
  const double inv = 1.0 / std::sqrt(1.0 + 1e-5);  // running mean 0, var 1
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(out.search[i], sv[i] + g * sv[i] * inv, 1e-14);
}

TEST(Sam, SaturatedGateEqualsUngatedResidualPath) {
  SamFixture fx(4);
  fx.fill("sam.gate_proj.weight", 0.0);
  fx.fill("sam.gate_proj.bias", 1e6);
  Rng r(2);
  std::vector<double> sv(2 * 3 * 3 * 4), tv(2 * 2 * 2 * 4), txt(2 * 5 * 4);
  for (auto& x : sv) x = r.normal();
  for (auto& x : tv) x = r.normal();
  for (auto& x : txt) x = r.normal();
  const Tensor search = Tensor::from({2, 3, 3, 4}, sv);
  const TextBatch tb = TextBatch::from({TokenSequence{{0, 4, 1, 2, 2}, {1, 1, 1, 0, 0}}, TokenSequence{{0, 1, 2, 2, 2}, {1, 1, 0, 0, 0}}});
  const auto out = fx.sam({Tensor::from({2, 2, 2, 4}, tv), search}, Tensor::from({2, 5, 4}, txt), tb, true, Mode{false, false});
  for (double g : out.gate.values()) EXPECT_EQ(g, 1.0);
  BatchNormOptions opt;
  opt.training = false;
  const Tensor bn = batch_norm(search, fx.store.at("sam.bn.gamma"), fx.store.at("sam.bn.beta"),
                               fx.store.batch_norm_states().at("sam.bn").get(), opt);
  const Tensor expect = search + conv2d(bn, fx.store.at("sam.fuse.weight"), fx.store.at("sam.fuse.bias"), {1, 1, 1});
  for (std::size_t i = 0; i < expect.numel(); ++i) EXPECT_NEAR(out.search[i], expect[i], 1e-13);
}

TEST(Sam, TextUpdateOnlyTouchesRealTokensThroughPooledTerm) {
  SamFixture fx(2);
  Rng r(3);
  std::vector<double> sv(2 * 2 * 2), tv(2 * 2 * 2), txt(4 * 2);
  for (auto& x : sv) x = r.normal();
  for (auto& x : tv) x = r.normal();
  for (auto& x : txt) x = r.normal();
  const TextBatch tb = TextBatch::from({TokenSequence{{0, 1, 2, 2}, {1, 1, 0, 0}}});
  const DualFeature f{Tensor::from({1, 2, 2, 2}, tv), Tensor::from({1, 2, 2, 2}, sv)};
  const Tensor text = Tensor::from({1, 4, 2}, txt);
  const auto upd = fx.sam(f, text, tb, true, Mode{false, false});
  const auto keep = fx.sam(f, text, tb, false, Mode{false, false});
  EXPECT_TRUE(bit_equal(keep.text, text));
  EXPECT_FALSE(bit_equal(upd.text, text));
  EXPECT_TRUE(bit_equal(upd.search, keep.search));
}
