#pragma once
// Box losses, dense matching score/loss and the weighted total.

#include <cmath>
#include <vector>

#include "satrack/config.hpp"
#include "satrack/head.hpp"
#include "satrack/ops.hpp"

namespace satrack {

inline Tensor boxes_tensor(const std::vector<BBox>& boxes) {
  std::vector<double> v;
  v.reserve(boxes.size() * 4);
  for (const auto& b : boxes) v.insert(v.end(), {b.x_tl, b.y_tl, b.x_br, b.y_br});
  return Tensor::from({boxes.size(), 4}, std::move(v));
}

/// Mean absolute coordinate difference over N x 4.
inline Tensor l1_box_loss(const Tensor& pred, const Tensor& gt) { return mean(abs(pred - gt)); }

/// Mean over the batch of 1 - GIoU. An inverted prediction counts as a
/// zero-area box at its coordinates; the enclosing box spans all four corners.
inline Tensor giou_loss(const Tensor& pred, const Tensor& gt) {
  auto col = [](const Tensor& b, std::size_t k) { return slice(b, 1, k, 1); };
  const Tensor px1 = col(pred, 0), py1 = col(pred, 1), px2 = col(pred, 2), py2 = col(pred, 3);
  const Tensor gx1 = col(gt, 0), gy1 = col(gt, 1), gx2 = col(gt, 2), gy2 = col(gt, 3);
  const Tensor area_p = clamp_min(px2 - px1, 0.0) * clamp_min(py2 - py1, 0.0);
  const Tensor area_g = clamp_min(gx2 - gx1, 0.0) * clamp_min(gy2 - gy1, 0.0);
  const Tensor iw = clamp_min(minimum(px2, gx2) - maximum(px1, gx1), 0.0);
  const Tensor ih = clamp_min(minimum(py2, gy2) - maximum(py1, gy1), 0.0);
  const Tensor inter = iw * ih;
  const Tensor uni = area_p + area_g - inter;
  const Tensor cw = maximum(maximum(px2, gx2), maximum(px1, gx1)) - minimum(minimum(px1, gx1), minimum(px2, gx2));
  const Tensor ch = maximum(maximum(py2, gy2), maximum(py1, gy1)) - minimum(minimum(py1, gy1), minimum(py2, gy2));
  const Tensor enclose = cw * ch;
  const Tensor giou = inter / uni - (enclose - uni) / enclose;
  return mean(1.0 - giou);
}

/// Binary map on an up_h x up_w grid: 1 where the cell centre ((j+0.5)/W,
/// (i+0.5)/H) lies in [x_tl, x_br) x [y_tl, y_br).
inline std::vector<double> dense_label(const BBox& box, std::size_t up_h, std::size_t up_w) {
  std::vector<double> y(up_h * up_w, 0.0);
  for (std::size_t i = 0; i < up_h; ++i) {
    const double cy = (static_cast<double>(i) + 0.5) / static_cast<double>(up_h);
    if (!(cy >= box.y_tl && cy < box.y_br)) continue;
    for (std::size_t j = 0; j < up_w; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) / static_cast<double>(up_w);
      if (cx >= box.x_tl && cx < box.x_br) y[i * up_w + j] = 1.0;
    }
  }
  return y;
}

/// Sentence vector of T^3: the CLS token, or the mean over real tokens.
inline Tensor sentence_vector(const Tensor& text, const Tensor& mask, TextReduction reduction) {
  const std::size_t N = text.dim(0), C = text.dim(2);
  if (reduction == TextReduction::cls) return reshape(slice(text, 1, 0, 1), {N, C});
  return reshape(sum(text * mask, 1) / sum(mask, 1), {N, C});
}

/// Cosine similarity between each search location and the sentence vector,
/// both L2-normalised along channels, bilinearly resized to (up_h, up_w).
/// search: (N, H, W, C); sentence: (N, C). Returns (N, up_h, up_w).
inline Tensor dense_matching_score(const Tensor& search, const Tensor& sentence, const LossWeights& w,
                                   Tensor* raw = nullptr) {
  const std::size_t N = search.dim(0), H = search.dim(1), W = search.dim(2), C = search.dim(3);
  if (sentence.rank() != 2 || sentence.dim(0) != N || sentence.dim(1) != C) {
    throw ConfigError("dense matching: search " + to_string(search.shape()) + " vs sentence " +
                      to_string(sentence.shape()));
  }
  const Tensor xs = reshape(l2_normalize(search, -1), {N, H * W, C});
  const Tensor ts = reshape(l2_normalize(sentence, -1), {N, C, 1});
  const Tensor cos = reshape(matmul(xs, ts), {N, H, W, 1});
  if (raw) *raw = reshape(cos, {N, H, W});
  return reshape(bilinear_resize(cos, w.up_h, w.up_w), {N, w.up_h, w.up_w});
}

/// Mean over all cells of BCE(sigmoid(score / tau), label) for (N, up_h, up_w) scores.
inline Tensor dense_matching_loss(const Tensor& score, const std::vector<BBox>& gt, const LossWeights& w) {
  const std::size_t N = score.dim(0), H = score.dim(1), W = score.dim(2);
  if (gt.size() != N) throw ConfigError("dense matching loss: one gt box per score map required");
  std::vector<double> labels;
  labels.reserve(N * H * W);
  for (const auto& b : gt) {
    const auto y = dense_label(b, H, W);
    labels.insert(labels.end(), y.begin(), y.end());
  }
  return mean(bce_with_logits(scale(score, 1.0 / w.tau), labels));
}

struct LossTerms {
  Tensor giou, l1, dm, total;
};

/// lambda_giou * L_giou + lambda_l1 * L_1 (+ lambda_dm * L_dm when lambda_dm > 0 and a score is given).
inline LossTerms total_loss(const Tensor& pred, const std::vector<BBox>& gt, const Tensor& score, const LossWeights& w) {
  const Tensor g = boxes_tensor(gt);
  LossTerms t;
  t.giou = giou_loss(pred, g);
  t.l1 = l1_box_loss(pred, g);
  t.total = t.giou * w.giou + t.l1 * w.l1;
  if (w.dm > 0.0 && score.defined()) {
    t.dm = dense_matching_loss(score, gt, w);
    t.total = t.total + t.dm * w.dm;
  }
  return t;
}

}  // namespace satrack
