#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "satrack/losses.hpp"
#include "satrack/rng.hpp"

using namespace satrack;

namespace {

// Scalar GIoU loss written directly from the box definitions.
double giou_loss_scalar(const BBox& p, const BBox& g) {
  const double ap = std::max(0.0, p.x_br - p.x_tl) * std::max(0.0, p.y_br - p.y_tl);
  const double ag = (g.x_br - g.x_tl) * (g.y_br - g.y_tl);
  const double ix = std::max(0.0, std::min(p.x_br, g.x_br) - std::max(p.x_tl, g.x_tl));
  const double iy = std::max(0.0, std::min(p.y_br, g.y_br) - std::max(p.y_tl, g.y_tl));
  const double inter = ix * iy, uni = ap + ag - inter;
  const double cx = std::max({p.x_tl, p.x_br, g.x_br}) - std::min({p.x_tl, p.x_br, g.x_tl});
  const double cy = std::max({p.y_tl, p.y_br, g.y_br}) - std::min({p.y_tl, p.y_br, g.y_tl});
  const double c = cx * cy;
  return 1.0 - (inter / uni - (c - uni) / c);
}

LossWeights grid(std::size_t n) {
  LossWeights w;
  w.up_h = w.up_w = n;
  return w;
}

}  // namespace

TEST(L1Loss, Examples) {
  const Tensor gt = boxes_tensor({{0.25, 0.25, 0.75, 0.75}});
  EXPECT_EQ(l1_box_loss(gt, gt).item(), 0.0);
  EXPECT_NEAR(l1_box_loss(boxes_tensor({{0.35, 0.35, 0.85, 0.85}}), gt).item(), 0.1, 1e-15);
  EXPECT_DOUBLE_EQ(l1_box_loss(boxes_tensor({{0, 0, 1, 1}}), gt).item(), 0.25);
}

TEST(GiouLoss, Examples) {
  const auto g = [](BBox p, BBox q) { return giou_loss(boxes_tensor({p}), boxes_tensor({q})).item(); };
  EXPECT_NEAR(g({0.1, 0.2, 0.4, 0.7}, {0.1, 0.2, 0.4, 0.7}), 0.0, 1e-15);
  EXPECT_NEAR(g({0, 0, 0.2, 0.2}, {0.8, 0.8, 1, 1}), 1.92, 1e-15);
  EXPECT_NEAR(g({0, 0, 1, 1}, {0, 0, 0.5, 1}), 0.5, 1e-15);
}

TEST(GiouLoss, MatchesScalarFormulaOnRandomBoxes) {
  Rng r(77);
  for (int i = 0; i < 500; ++i) {
    const double gx = r.uniform(0, 0.8), gy = r.uniform(0, 0.8);
    const BBox gt{gx, gy, gx + r.uniform(0.02, 0.2), gy + r.uniform(0.02, 0.2)};
    const BBox pr{r.uniform(-0.2, 1.1), r.uniform(-0.2, 1.1), r.uniform(-0.2, 1.1), r.uniform(-0.2, 1.1)};
    const double v = giou_loss(boxes_tensor({pr}), boxes_tensor({gt})).item();
    EXPECT_NEAR(v, giou_loss_scalar(pr, gt), 1e-12);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0);
  }
}

TEST(GiouLoss, DecreasesAsDisjointBoxSlidesCloser) {
  const BBox gt{0.6, 0.6, 0.8, 0.8};
  double prev = 3.0;
  for (int k = 0; k <= 8; ++k) {
    const double o = 0.05 * k;
    const double v = giou_loss(boxes_tensor({{o, o, o + 0.2, o + 0.2}}), boxes_tensor({gt})).item();
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(DenseLabel, HalfOpenBoundaryAndCount) {
  const auto y = dense_label({0.0, 0.0, 0.5, 0.5}, 4, 4);
  EXPECT_EQ(std::count(y.begin(), y.end(), 1.0), 4);
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[2], 0.0);
  // centre 0.625 on the right edge is excluded, 0.375 on the left edge included
  const auto e = dense_label({0.375, 0.0, 0.625, 1.0}, 1, 4);
  EXPECT_EQ(e, (std::vector<double>{0, 1, 0, 0}));
}

TEST(DenseLabel, CountMatchesDirectEnumeration) {
  Rng r(8);
  for (int i = 0; i < 200; ++i) {
    const std::size_t H = 1 + r.index(20), W = 1 + r.index(20);
    const BBox b{r.uniform(-0.2, 0.8), r.uniform(-0.2, 0.8), r.uniform(0.2, 1.2), r.uniform(0.2, 1.2)};
    const auto y = dense_label(b, H, W);
    auto inside = [](double c, double lo, double hi) { return c >= lo && c < hi; };
    std::size_t rows = 0, cols = 0;
    for (std::size_t k = 0; k < H; ++k) rows += inside((k + 0.5) / H, b.y_tl, b.y_br);
    for (std::size_t k = 0; k < W; ++k) cols += inside((k + 0.5) / W, b.x_tl, b.x_br);
    EXPECT_EQ(static_cast<std::size_t>(std::count(y.begin(), y.end(), 1.0)), rows * cols);
  }
}

TEST(DenseMatching, IdenticalAndOrthogonalTextVectors) {
  const Tensor search = Tensor::from({1, 2, 2, 2}, {1, 0, 2, 0, 0.5, 0, 3, 0});
  LossWeights w = grid(2);
  Tensor raw;
  dense_matching_score(search, Tensor::from({1, 2}, {4, 0}), w, &raw);
  for (double v : raw.values()) EXPECT_NEAR(v, 1.0, 1e-15);
  dense_matching_score(search, Tensor::from({1, 2}, {0, 1}), w, &raw);
  for (double v : raw.values()) EXPECT_EQ(v, 0.0);
}

TEST(DenseMatching, UpsamplesToConfiguredGrid) {
  const Tensor s = dense_matching_score(Tensor::full({1, 20, 20, 3}, 1.0), Tensor::full({1, 3}, 1.0), grid(40));
  EXPECT_EQ(s.shape(), (Shape{1, 40, 40}));
}

TEST(DenseMatching, RejectsMismatchedSentence) {
  EXPECT_THROW(dense_matching_score(Tensor::zeros({1, 2, 2, 3}), Tensor::zeros({1, 4}), grid(4)), ConfigError);
}

TEST(DenseMatchingLoss, SaturatedScoreIsNearZero) {
  const BBox box{0.25, 0.25, 0.75, 0.75};
  const auto label = dense_label(box, 16, 16);
  std::vector<double> s(label.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = label[i] > 0 ? 50.0 : -50.0;
  EXPECT_LT(dense_matching_loss(Tensor::from({1, 16, 16}, s), {box}, grid(16)).item(), 1e-6);
}

TEST(DenseMatchingLoss, ZeroScoreIsLnTwo) {
  for (const BBox& b : {BBox{0, 0, 1, 1}, BBox{0.1, 0.3, 0.2, 0.4}, BBox{2, 2, 3, 3}})
    EXPECT_NEAR(dense_matching_loss(Tensor::zeros({1, 16, 16}), {b}, grid(16)).item(), std::log(2.0), 1e-12);
}

TEST(DenseMatchingLoss, QuarterBoxMatchesScalarBce) {
  const BBox box{0.0, 0.0, 0.5, 0.5};
  const auto label = dense_label(box, 16, 16);
  std::vector<double> s(label.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = label[i] * 2 - 1;
  // per-cell -[y log sigmoid(z) + (1-y) log(1-sigmoid(z))], z = s / 0.07, precomputed
  EXPECT_NEAR(dense_matching_loss(Tensor::from({1, 16, 16}, s), {box}, grid(16)).item(), 6.248747557120387e-07, 1e-18);
}

TEST(TotalLoss, WeightedSumArithmetic) {
  const Tensor pred = boxes_tensor({{0, 0, 1, 1}});
  const std::vector<BBox> gt{{0, 0, 0.5, 1}};
  LossWeights w = grid(4);
  const LossTerms t = total_loss(pred, gt, Tensor::zeros({1, 4, 4}), w);
  // giou 0.5, l1 0.125, dm ln 2
  EXPECT_NEAR(t.total.item(), 2 * 0.5 + 5 * 0.125 + std::log(2.0), 1e-12);
  EXPECT_NEAR(2 * 0.5 + 5 * 0.1 + 1 * 0.6931, 2.1931, 1e-12);
}

TEST(TotalLoss, WithoutDmTermEqualsBoxLosses) {
  const Tensor pred = boxes_tensor({{0.1, 0.1, 0.6, 0.7}});
  const std::vector<BBox> gt{{0.2, 0.1, 0.5, 0.5}};
  LossWeights w = grid(4);
  w.dm = 0.0;
  const LossTerms t = total_loss(pred, gt, Tensor::zeros({1, 4, 4}), w);
  EXPECT_FALSE(t.dm.defined());
  EXPECT_DOUBLE_EQ(t.total.item(), 2 * t.giou.item() + 5 * t.l1.item());
}

TEST(TotalLoss, PerfectPredictionNearZero) {
  const BBox box{0.25, 0.25, 0.75, 0.75};
  const auto label = dense_label(box, 8, 8);
  std::vector<double> s(label.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = label[i] > 0 ? 50.0 : -50.0;
  const LossTerms t = total_loss(boxes_tensor({box}), {box}, Tensor::from({1, 8, 8}, s), grid(8));
  EXPECT_LT(t.total.item(), 1e-6);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  w.tau = 0.0;
  EXPECT_THROW(w.validate(), ConfigError);
  w = LossWeights{};
  w.giou = -1;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(SentenceVector, ClsAndMaskedMean) {
  const Tensor text = Tensor::from({1, 3, 2}, {1, 2, 3, 4, 100, 100});
  const Tensor mask = Tensor::from({1, 3, 1}, {1, 1, 0});
  const Tensor cls = sentence_vector(text, mask, TextReduction::cls);
  EXPECT_EQ(cls.values(), (std::vector<double>{1, 2}));
  const Tensor mean = sentence_vector(text, mask, TextReduction::mean);
  EXPECT_EQ(mean.values(), (std::vector<double>{2, 3}));
}
