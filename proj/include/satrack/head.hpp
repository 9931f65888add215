#pragma once
// Corner head: two Conv-BN-ReLU stacks -> spatial softmax -> soft-argmax.

#include <string>
#include <vector>

#include "satrack/config.hpp"
#include "satrack/nn.hpp"

namespace satrack {

/// Corner-form box (x_tl, y_tl, x_br, y_br): normalised search-crop units or
/// frame pixels, depending on context.
struct BBox {
  double x_tl = 0, y_tl = 0, x_br = 0, y_br = 0;

  double width() const { return x_br - x_tl; }
  double height() const { return y_br - y_tl; }
  double cx() const { return 0.5 * (x_tl + x_br); }
  double cy() const { return 0.5 * (y_tl + y_br); }
  bool operator==(const BBox&) const = default;
};

struct CornerMaps {
  Tensor tl;  // (N, H, W) probabilities
  Tensor br;
};

/// Expected cell-centre coordinate under each map: x = sum p(i,j) (j + 0.5) / W,
/// y = sum p(i,j) (i + 0.5) / H. Returns (N, 4) boxes (x_tl, y_tl, x_br, y_br).
/// No clamping or corner reordering.
inline Tensor soft_argmax(const CornerMaps& maps) {
  const std::size_t N = maps.tl.dim(0), H = maps.tl.dim(1), W = maps.tl.dim(2);
  std::vector<double> xs(H * W * 2), ys;
  // (H*W, 2) matrix of cell-centre coordinates
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      xs[(i * W + j) * 2] = (static_cast<double>(j) + 0.5) / static_cast<double>(W);
      xs[(i * W + j) * 2 + 1] = (static_cast<double>(i) + 0.5) / static_cast<double>(H);
    }
  const Tensor coords = Tensor::from({H * W, 2}, std::move(xs));
  const Tensor tl = matmul(reshape(maps.tl, {N, H * W}), coords);
  const Tensor br = matmul(reshape(maps.br, {N, H * W}), coords);
  return concat({tl, br}, 1);
}

inline BBox box_at(const Tensor& boxes, std::size_t n) {
  return {boxes[n * 4], boxes[n * 4 + 1], boxes[n * 4 + 2], boxes[n * 4 + 3]};
}

class CornerHead {
 public:
  CornerHead() = default;
  /// `layers` convolutions per branch, channels halving from `in`; the last one outputs a single logit map.
  CornerHead(ParamStore& store, std::size_t in, const HeadConfig& cfg) {
    if (cfg.layers < 1) throw ConfigError("corner head needs at least one layer");
    for (const char* branch : {"tl", "br"}) {
      Branch b;
      std::size_t c = in;
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        const bool last = l + 1 == cfg.layers;
        const std::size_t out = last ? 1 : std::max<std::size_t>(1, c / 2);
        const std::string name = std::string("head.") + branch + ".conv" + std::to_string(l);
        b.convs.emplace_back(store, name, c, out, 3, 1, 1, ParamGroup::head);
        if (!last) b.norms.emplace_back(store, std::string("head.") + branch + ".bn" + std::to_string(l), out, ParamGroup::head);
        c = out;
      }
      branches_.push_back(std::move(b));
    }
  }

  /// (N, H, W, C) -> logits (N, H, W) per branch.
  std::pair<Tensor, Tensor> logits(const Tensor& x, const Mode& mode) const {
    auto run = [&](const Branch& b) {
      Tensor h = x;
      for (std::size_t l = 0; l < b.convs.size(); ++l) {
        h = b.convs[l](h);
        if (l < b.norms.size()) h = relu(b.norms[l](h, mode));
      }
      return reshape(h, {x.dim(0), x.dim(1), x.dim(2)});
    };
    return {run(branches_[0]), run(branches_[1])};
  }

  CornerMaps operator()(const Tensor& x, const Mode& mode) const {
    auto [tl, br] = logits(x, mode);
    return {spatial_softmax(tl), spatial_softmax(br)};
  }

  static Tensor spatial_softmax(const Tensor& logits) {
    const std::size_t N = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    return reshape(softmax(reshape(logits, {N, H * W}), 1), {N, H, W});
  }

 private:
  struct Branch {
    std::vector<Conv2d> convs;
    std::vector<BatchNorm> norms;
  };
  std::vector<Branch> branches_;
};

}  // namespace satrack
