#pragma once
// Three-stage vision-language backbone.
//
// Each stage runs: convolutional token embedding (shared by template and
// search) -> target-enhance attention blocks -> the stage's text layers ->
// semantic-aware fusion. The template branch never reads search features in
// asymmetric mode, and fusion never writes the template, so template and text
// outputs are functions of (template, text) alone.

#include <optional>
#include <string>
#include <vector>

#include "satrack/config.hpp"
#include "satrack/nn.hpp"
#include "satrack/text.hpp"

namespace satrack {

/// Template and search feature maps of one stage (NHWC, equal channels).
struct DualFeature {
  Tensor tmpl;
  Tensor search;
};

/// Values captured for the inspect command (first batch item, detached).
struct StageDiagnostics {
  /// Head-averaged attention of the last TEM block: search queries over their keys.
  std::vector<double> search_attention;
  std::size_t search_queries = 0, search_keys = 0;
  /// SAM channel gate in (0, 1), empty when the stage has no fusion.
  std::vector<double> sam_gate;
  /// Head-averaged weights of the pooled-template query over text tokens.
  std::vector<double> sam_text_attention;
};

struct Diagnostics {
  std::vector<StageDiagnostics> stages;
};

namespace detail {
inline std::vector<double> head_average_first(const Tensor& w) {
  // w: (N, H, Lq, Lk) -> mean over heads for n = 0, flattened (Lq * Lk)
  const std::size_t H = w.dim(1), Lq = w.dim(2), Lk = w.dim(3);
  std::vector<double> out(Lq * Lk, 0.0);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < Lq * Lk; ++i) out[i] += w[h * Lq * Lk + i] / static_cast<double>(H);
  return out;
}
}  // namespace detail

/// Strided convolution + per-token layer norm; one set of weights for both branches.
class ConvTokenEmbedding {
 public:
  ConvTokenEmbedding() = default;
  ConvTokenEmbedding(ParamStore& store, const std::string& name, std::size_t in, const StageConfig& st)
      : conv_(store, name + ".conv", in, st.dim, st.cte_kernel, st.cte_stride, st.cte_kernel / 2, ParamGroup::backbone),
        norm_(store, name + ".norm", st.dim, ParamGroup::backbone) {}

  Tensor operator()(const Tensor& x) const { return norm_(conv_(x)); }
  DualFeature operator()(const DualFeature& f) const { return {(*this)(f.tmpl), (*this)(f.search)}; }

 private:
  Conv2d conv_;
  LayerNorm norm_;
};

/// Target Enhance Module block.
///
/// q/k/v come from depth-wise 3x3 convolutions (stride 1 for q, kv_stride for
/// k and v) followed by linear maps. Asymmetric mode: the template attends to
/// its own keys; the search attends to the concatenated template+search keys.
/// Then: x1 = x + proj(attn); out = x1 + mlp(ln(x1)).
class TemBlock {
 public:
  TemBlock() = default;
  TemBlock(ParamStore& store, const std::string& name, const StageConfig& st, bool prenorm)
      : heads_(st.heads), prenorm_(prenorm) {
    const std::size_t C = st.dim;
    auto dw = [&](const std::string& n, std::size_t stride) {
      return Conv2d(store, name + "." + n, C, C, 3, stride, 1, ParamGroup::backbone, C);
    };
    dw_q_ = dw("dw_q", 1);
    dw_k_ = dw("dw_k", st.kv_stride);
    dw_v_ = dw("dw_v", st.kv_stride);
    q_ = Linear(store, name + ".q", C, C, ParamGroup::backbone);
    k_ = Linear(store, name + ".k", C, C, ParamGroup::backbone);
    v_ = Linear(store, name + ".v", C, C, ParamGroup::backbone);
    proj_ = Linear(store, name + ".proj", C, C, ParamGroup::backbone);
    norm_ = LayerNorm(store, name + ".norm", C, ParamGroup::backbone);
    mlp_ = Mlp(store, name + ".mlp", C, st.mlp_ratio, ParamGroup::backbone);
    if (prenorm_) pre_norm_ = LayerNorm(store, name + ".pre_norm", C, ParamGroup::backbone);
  }

  DualFeature operator()(const DualFeature& f, AttentionMode mode, StageDiagnostics* diag = nullptr) const {
    const Projected t = project(f.tmpl), s = project(f.search);
    const Tensor kc = concat({t.k, s.k}, 1), vc = concat({t.v, s.v}, 1);

    AttentionResult at = mode == AttentionMode::symmetric ? multi_head_attention(t.q, kc, vc, heads_)
                                                          : multi_head_attention(t.q, t.k, t.v, heads_);
    AttentionResult as = mode == AttentionMode::self_only ? multi_head_attention(s.q, s.k, s.v, heads_)
                                                          : multi_head_attention(s.q, kc, vc, heads_);
    if (diag) {
      diag->search_attention = detail::head_average_first(as.weights);
      diag->search_queries = as.weights.dim(2);
      diag->search_keys = as.weights.dim(3);
    }
    return {finish(f.tmpl, at.out), finish(f.search, as.out)};
  }

 private:
  struct Projected {
    Tensor q, k, v;
  };

  Projected project(const Tensor& x) const {
    const std::size_t N = x.dim(0), C = x.dim(3);
    const Tensor h = prenorm_ ? pre_norm_(x) : x;
    auto tokens = [&](const Tensor& m) { return reshape(m, {N, m.dim(1) * m.dim(2), C}); };
    return {q_(tokens(dw_q_(h))), k_(tokens(dw_k_(h))), v_(tokens(dw_v_(h)))};
  }

  Tensor finish(const Tensor& x, const Tensor& attn) const {
    const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const Tensor x0 = reshape(x, {N, H * W, C});
    const Tensor x1 = x0 + proj_(attn);
    const Tensor x2 = x1 + mlp_(norm_(x1));
    return reshape(x2, {N, H, W, C});
  }

  std::size_t heads_ = 1;
  bool prenorm_ = false;
  Conv2d dw_q_, dw_k_, dw_v_;
  Linear q_, k_, v_, proj_;
  LayerNorm norm_, pre_norm_;
  Mlp mlp_;
};

struct SamOutput {
  Tensor search;
  Tensor text;
  Tensor gate;  // (N, 1, 1, C)
};

/// Semantic Aware Module.
///
/// Visual stream: the 1x1-projected template is max-pooled to one token that
/// queries the projected text (masked multi-head attention); sigmoid of the
/// attended vector gates the search channels, then
/// search' = search + conv(bn(gate * search)). The template passes through.
/// Textual stream: text' = text + lin_b(lin_a(text) + mask * pooled).
class SemanticAwareModule {
 public:
  SemanticAwareModule() = default;
  SemanticAwareModule(ParamStore& store, const std::string& name, const StageConfig& st) : heads_(st.heads) {
    const std::size_t C = st.dim;
    tmpl_proj_ = Conv2d(store, name + ".tmpl_proj", C, C, 1, 1, 0, ParamGroup::backbone);
    text_proj_ = Linear(store, name + ".text_proj", C, C, ParamGroup::backbone);
    q_ = Linear(store, name + ".q", C, C, ParamGroup::backbone);
    k_ = Linear(store, name + ".k", C, C, ParamGroup::backbone);
    v_ = Linear(store, name + ".v", C, C, ParamGroup::backbone);
    gate_proj_ = Linear(store, name + ".gate_proj", C, C, ParamGroup::backbone);
    bn_ = BatchNorm(store, name + ".bn", C, ParamGroup::backbone);
    fuse_ = Conv2d(store, name + ".fuse", C, C, 3, 1, 1, ParamGroup::backbone);
    text_a_ = Linear(store, name + ".text_a", C, C, ParamGroup::backbone);
    text_b_ = Linear(store, name + ".text_b", C, C, ParamGroup::backbone);
  }

  SamOutput operator()(const DualFeature& f, const Tensor& text, const TextBatch& tb, bool update_text,
                       const Mode& mode, StageDiagnostics* diag = nullptr) const {
    const std::size_t N = f.search.dim(0), C = f.search.dim(3);
    if (text.dim(-1) != C) {
      throw ConfigError("SAM: text width " + std::to_string(text.dim(-1)) + " differs from visual width " +
                        std::to_string(C));
    }
    const Tensor pooled = reshape(global_max_pool(tmpl_proj_(f.tmpl)), {N, 1, C});
    const Tensor tp = text_proj_(text);
    const auto att = multi_head_attention(q_(pooled), k_(tp), v_(tp), heads_, &tb.mask);
    const Tensor gate = reshape(sigmoid(gate_proj_(att.out)), {N, 1, 1, C});
    const Tensor search = f.search + fuse_(bn_(f.search * gate, mode));

    Tensor new_text = text;
    if (update_text) new_text = text + text_b_(text_a_(text) + tb.mask_tensor() * pooled);

    if (diag) {
      diag->sam_gate.assign(gate.values().begin(), gate.values().begin() + static_cast<std::ptrdiff_t>(C));
      diag->sam_text_attention = detail::head_average_first(att.weights);
    }
    return {search, new_text, gate};
  }

  // Direct access for tests that pin the gate.
  const Linear& gate_proj() const { return gate_proj_; }

 private:
  std::size_t heads_ = 1;
  Conv2d tmpl_proj_;
  Linear text_proj_, q_, k_, v_, gate_proj_;
  BatchNorm bn_;
  Conv2d fuse_;
  Linear text_a_, text_b_;
};

struct BackboneOutput {
  Tensor search;    // X_s^3: (N, Hs3, Ws3, C3)
  Tensor tmpl;      // X_t^3
  Tensor text;      // T^3: (N, L, C3)
  std::vector<Tensor> gates;  // one per fused stage
  Diagnostics diagnostics;
};

class Backbone {
 public:
  Backbone(ParamStore& store, const BackboneConfig& cfg, std::size_t vocab_size)
      : cfg_(cfg), text_(store, cfg, vocab_size) {
    cfg_.validate();
    std::size_t in = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& st = cfg.stages[i];
      const std::string base = "backbone.stage" + std::to_string(i + 1);
      Stage s;
      s.cte = ConvTokenEmbedding(store, base + ".cte", in, st);
      for (std::size_t d = 0; d < st.tem_depth; ++d)
        s.tem.emplace_back(store, base + ".tem" + std::to_string(d), st, cfg.cvt_prenorm);
      if (fuses(static_cast<int>(i + 1))) s.sam = SemanticAwareModule(store, base + ".sam", st);
      if (cfg.text_mode == TextMode::asynchronous && i < 2) {
        s.async_adapter = Linear(store, base + ".async_adapter", cfg.stages[2].dim, st.dim, ParamGroup::backbone);
      }
      stages_.push_back(std::move(s));
      in = st.dim;
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  const TextEncoder& text_encoder() const { return text_; }
  bool fuses(int stage) const { return cfg_.sam_enabled && stage >= cfg_.sam_start_stage; }
  const SemanticAwareModule& sam(int stage) const { return stages_.at(static_cast<std::size_t>(stage - 1)).sam; }

  /// Images are NHWC (template_size^2 and search_size^2, 3 channels).
  BackboneOutput forward(const Tensor& tmpl_img, const Tensor& search_img, const TextBatch& text, const Mode& mode,
                         bool collect_diagnostics = false) const {
    check_image(tmpl_img, cfg_.template_size, "template");
    check_image(search_img, cfg_.search_size, "search");
    if (text.batch != tmpl_img.dim(0) || text.length != text_.max_len()) {
      throw ConfigError("text batch " + std::to_string(text.batch) + "x" + std::to_string(text.length) +
                        " does not match images / max_text_len " + std::to_string(text_.max_len()));
    }
    BackboneOutput out;
    DualFeature f{tmpl_img, search_img};
    Tensor t = text_.embed(text.ids);

    Tensor encoded;  // asynchronous mode: final text features computed up front
    if (cfg_.text_mode == TextMode::asynchronous) {
      encoded = t;
      for (int s = 1; s <= 3; ++s) encoded = text_.stage_forward(encoded, text.mask, s);
    }

    for (std::size_t i = 0; i < 3; ++i) {
      const Stage& s = stages_[i];
      const int stage = static_cast<int>(i + 1);
      StageDiagnostics* diag = nullptr;
      if (collect_diagnostics) diag = &out.diagnostics.stages.emplace_back();

      f = s.cte(f);
      for (std::size_t d = 0; d < s.tem.size(); ++d) f = s.tem[d](f, cfg_.attention, d + 1 == s.tem.size() ? diag : nullptr);

      Tensor stage_text;
      if (cfg_.text_mode == TextMode::synchronous) {
        t = text_.stage_forward(t, text.mask, stage);
        stage_text = t;
      } else {
        stage_text = i < 2 ? s.async_adapter(encoded) : encoded;
      }

      if (fuses(stage)) {
        auto fused = s.sam(f, stage_text, text, cfg_.text_update, mode, diag);
        f.search = fused.search;
        out.gates.push_back(fused.gate);
        if (cfg_.text_mode == TextMode::synchronous) t = fused.text;
        else if (i == 2) encoded = fused.text;
      }
    }
    out.search = f.search;
    out.tmpl = f.tmpl;
    out.text = cfg_.text_mode == TextMode::synchronous ? t : encoded;
    return out;
  }

 private:
  static void check_image(const Tensor& x, std::size_t size, const char* what) {
    if (x.rank() != 4 || x.dim(1) != size || x.dim(2) != size || x.dim(3) != 3) {
      throw ConfigError(std::string(what) + " image must be N x " + std::to_string(size) + " x " + std::to_string(size) +
                        " x 3, got " + to_string(x.shape()));
    }
  }

  struct Stage {
    ConvTokenEmbedding cte;
    std::vector<TemBlock> tem;
    SemanticAwareModule sam;
    Linear async_adapter;
  };

  BackboneConfig cfg_;
  TextEncoder text_;
  std::vector<Stage> stages_;
};

}  // namespace satrack
