#pragma once
// Full tracker: backbone + corner head, plus the batched input type.

#include <memory>
#include <vector>

#include "satrack/backbone.hpp"
#include "satrack/head.hpp"
#include "satrack/losses.hpp"

namespace satrack {

/// Network input for N samples. Images are NHWC in [0, 1].
struct ModelInput {
  Tensor tmpl;
  Tensor search;
  TextBatch text;
};

struct ModelOutput {
  Tensor boxes;   // (N, 4) normalised search-frame boxes
  CornerMaps corners;
  Tensor score;      // (N, up_h, up_w) dense matching score
  Tensor raw_score;  // (N, Hs3, Ws3) before resizing
  BackboneOutput backbone;
};

class TrackerModel {
 public:
  TrackerModel(const ModelConfig& cfg, Vocabulary vocab)
      : cfg_(cfg),
        vocab_(std::move(vocab)),
        store_(std::make_unique<ParamStore>(cfg.seed)),
        backbone_(*store_, cfg.backbone, vocab_.size()),
        head_(*store_, cfg.backbone.stages[2].dim, cfg.head) {
    cfg_.loss.validate();
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  const Backbone& backbone() const { return backbone_; }
  const CornerHead& head() const { return head_; }

  /// Pixel standardisation applied to [0, 1] images before the first stage.
  static Tensor standardize(const Tensor& img) { return scale(add_scalar(img, -0.5), 4.0); }

  ModelOutput forward(const ModelInput& in, const Mode& mode, bool with_score = true, bool diagnostics = false) const {
    ModelOutput out;
    out.backbone = backbone_.forward(standardize(in.tmpl), standardize(in.search), in.text, mode, diagnostics);
    out.corners = head_(out.backbone.search, mode);
    out.boxes = soft_argmax(out.corners);
    if (with_score) {
      const Tensor sentence = sentence_vector(out.backbone.text, in.text.mask_tensor(), cfg_.loss.reduction);
      out.score = dense_matching_score(out.backbone.search, sentence, cfg_.loss, &out.raw_score);
    }
    return out;
  }

  LossTerms loss(const ModelInput& in, const std::vector<BBox>& gt, const Mode& mode) const {
    const bool need_score = cfg_.loss.dm > 0.0;
    const auto out = forward(in, mode, need_score);
    return total_loss(out.boxes, gt, out.score, cfg_.loss);
  }

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  std::unique_ptr<ParamStore> store_;
  Backbone backbone_;
  CornerHead head_;
};

}  // namespace satrack
