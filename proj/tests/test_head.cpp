#include <gtest/gtest.h>

#include "satrack/head.hpp"

using namespace satrack;

namespace {

Tensor maps(std::size_t h, std::size_t w, std::vector<double> v) { return Tensor::from({1, h, w}, std::move(v)); }

}  // namespace

TEST(CornerHead, UniformLogitsGiveUniformMaps) {
  const Tensor p = CornerHead::spatial_softmax(Tensor::zeros({2, 3, 5}));
  for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 15.0, 1e-16);
}

TEST(CornerHead, DeskMapsSumToOne) {
  ParamStore store(3);
  const CornerHead head(store, 32, HeadConfig{});
  Rng r(4);
  std::vector<double> x(2 * 4 * 4 * 32);
  for (auto& v : x) v = r.normal();
  const CornerMaps m = head(Tensor::from({2, 4, 4, 32}, x), Mode{true, true});
  ASSERT_EQ(m.tl.shape(), (Shape{2, 4, 4}));
  for (const Tensor* t : {&m.tl, &m.br})
    for (std::size_t n = 0; n < 2; ++n) {
      double s = 0;
      for (std::size_t i = 0; i < 16; ++i) s += (*t)[n * 16 + i];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(CornerHead, ChannelsHalveAndLastLayerIsSingleMap) {
  ParamStore store(3);
  const CornerHead head(store, 384, HeadConfig{});
  EXPECT_EQ(store.at("head.tl.conv0.weight").shape(), (Shape{192, 3, 3, 384}));
  EXPECT_EQ(store.at("head.tl.conv1.weight").shape(), (Shape{96, 3, 3, 192}));
  EXPECT_EQ(store.at("head.tl.conv2.weight").shape(), (Shape{48, 3, 3, 96}));
  EXPECT_EQ(store.at("head.br.conv3.weight").shape(), (Shape{1, 3, 3, 48}));
  EXPECT_EQ(store.params().count("head.tl.bn3.gamma"), 0u);
  for (const auto& [name, e] : store.params()) EXPECT_EQ(e.group, ParamGroup::head) << name;
}

TEST(CornerHead, FullScaleMapSize) {
  ParamStore store(3);
  HeadConfig hc;
  const CornerHead head(store, 8, hc);
  const auto [tl, br] = head.logits(Tensor::zeros({1, 20, 20, 8}), Mode{false, false});
  EXPECT_EQ(tl.shape(), (Shape{1, 20, 20}));
  EXPECT_EQ(br.shape(), (Shape{1, 20, 20}));
}

TEST(SoftArgmax, DeltaMapsHitCellCentres) {
  std::vector<double> tl(12, 0.0), br(12, 0.0);
  tl[0] = 1.0;
  br[11] = 1.0;
  const Tensor b = soft_argmax({maps(3, 4, tl), maps(3, 4, br)});
  EXPECT_DOUBLE_EQ(b[0], 0.5 / 4);
  EXPECT_DOUBLE_EQ(b[1], 0.5 / 3);
  EXPECT_DOUBLE_EQ(b[2], 3.5 / 4);
  EXPECT_DOUBLE_EQ(b[3], 2.5 / 3);
}

TEST(SoftArgmax, UniformMapsGiveCentre) {
  const Tensor u = CornerHead::spatial_softmax(Tensor::zeros({1, 4, 4}));
  const Tensor b = soft_argmax({u, u});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b[i], 0.5, 1e-15);
}

TEST(SoftArgmax, HalfPixelExpectation) {
  const Tensor p = maps(2, 2, {0.5, 0.5, 0.0, 0.0});
  const Tensor b = soft_argmax({p, p});
  EXPECT_DOUBLE_EQ(b[0], 0.5);
  EXPECT_DOUBLE_EQ(b[1], 0.25);
}

TEST(SoftArgmax, NoReorderingOfInvertedCorners) {
  std::vector<double> tl(4, 0.0), br(4, 0.0);
  tl[3] = 1.0;
  br[0] = 1.0;
  const BBox b = box_at(soft_argmax({maps(2, 2, tl), maps(2, 2, br)}), 0);
  EXPECT_GT(b.x_tl, b.x_br);
  EXPECT_GT(b.y_tl, b.y_br);
}

TEST(CornerHead, RejectsZeroLayers) {
  ParamStore store(1);
  HeadConfig hc;
  hc.layers = 0;
  EXPECT_THROW(CornerHead(store, 8, hc), ConfigError);
}
