#pragma once
// Model configuration: per-stage schedule, ablation switches, loss weights.

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "json.hpp"
#include "satrack/tensor.hpp"

namespace satrack {

using Json = nlohmann::json;

enum class AttentionMode { asymmetric, symmetric, self_only };
enum class TextMode { synchronous, asynchronous };
enum class TextReduction { cls, mean };

namespace detail {

// Strict string <-> enum mapping; unknown names are configuration errors.
template <class E, std::size_t K>
void enum_to_json(Json& j, E e, const std::array<std::pair<E, const char*>, K>& names) {
  for (const auto& [v, n] : names)
    if (v == e) j = n;
}

template <class E, std::size_t K>
void enum_from_json(const Json& j, E& e, const std::array<std::pair<E, const char*>, K>& names, const char* what) {
  const std::string s = j.get<std::string>();
  for (const auto& [v, n] : names)
    if (s == n) {
      e = v;
      return;
    }
  std::string valid;
  for (const auto& [v, n] : names) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'; valid: " + valid);
}

inline constexpr std::array<std::pair<AttentionMode, const char*>, 3> kAttentionNames{
    {{AttentionMode::asymmetric, "asymmetric"}, {AttentionMode::symmetric, "symmetric"}, {AttentionMode::self_only, "self_only"}}};
inline constexpr std::array<std::pair<TextMode, const char*>, 2> kTextModeNames{
    {{TextMode::synchronous, "synchronous"}, {TextMode::asynchronous, "asynchronous"}}};
inline constexpr std::array<std::pair<TextReduction, const char*>, 2> kReductionNames{
    {{TextReduction::cls, "cls"}, {TextReduction::mean, "mean"}}};

}  // namespace detail

inline void to_json(Json& j, AttentionMode e) { detail::enum_to_json(j, e, detail::kAttentionNames); }
inline void from_json(const Json& j, AttentionMode& e) { detail::enum_from_json(j, e, detail::kAttentionNames, "attention mode"); }
inline void to_json(Json& j, TextMode e) { detail::enum_to_json(j, e, detail::kTextModeNames); }
inline void from_json(const Json& j, TextMode& e) { detail::enum_from_json(j, e, detail::kTextModeNames, "text mode"); }
inline void to_json(Json& j, TextReduction e) { detail::enum_to_json(j, e, detail::kReductionNames); }
inline void from_json(const Json& j, TextReduction& e) { detail::enum_from_json(j, e, detail::kReductionNames, "text reduction"); }

struct StageConfig {
  std::size_t cte_kernel = 3;
  std::size_t cte_stride = 2;
  std::size_t dim = 16;  // C^i == D^i
  std::size_t tem_depth = 1;
  std::size_t heads = 1;
  std::size_t mlp_ratio = 4;
  std::size_t kv_stride = 2;
  std::size_t text_layers = 1;
};

struct BackboneConfig {
  std::array<StageConfig, 3> stages;
  std::size_t template_size = 32;
  std::size_t search_size = 64;
  std::size_t max_text_len = 12;
  AttentionMode attention = AttentionMode::asymmetric;
  bool sam_enabled = true;
  int sam_start_stage = 1;
  TextMode text_mode = TextMode::synchronous;
  bool text_update = true;
  bool cvt_prenorm = false;

  /// Desk scale: dims 8/16/32, heads 1/2/4, TEM depths 1/1/2, text layers 1/1/2.
  static BackboneConfig desk() {
    BackboneConfig c;
    c.stages[0] = {7, 4, 8, 1, 1, 4, 2, 1};
    c.stages[1] = {3, 2, 16, 1, 2, 4, 2, 1};
    c.stages[2] = {3, 2, 32, 2, 4, 4, 2, 2};
    c.template_size = 32;
    c.search_size = 64;
    c.max_text_len = 12;
    return c;
  }

  /// The full-size schedule: CvT-21-like stages with a 1/4/7 text split.
  static BackboneConfig full() {
    BackboneConfig c;
    c.stages[0] = {7, 4, 64, 1, 1, 4, 2, 1};
    c.stages[1] = {3, 2, 192, 4, 3, 4, 2, 4};
    c.stages[2] = {3, 2, 384, 16, 6, 4, 2, 7};
    c.template_size = 128;
    c.search_size = 320;
    c.max_text_len = 30;
    return c;
  }

  void validate() const {
    std::size_t cumulative = 1;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& s = stages[i];
      const std::string tag = "stage " + std::to_string(i + 1) + ": ";
      if (s.cte_stride == 0 || s.kv_stride == 0 || s.cte_kernel == 0) throw ConfigError(tag + "strides and kernel must be positive");
      if (s.dim == 0 || s.heads == 0 || s.dim % s.heads != 0) {
        throw ConfigError(tag + "dim " + std::to_string(s.dim) + " not divisible by heads " + std::to_string(s.heads));
      }
      if (s.mlp_ratio == 0) throw ConfigError(tag + "mlp_ratio must be positive");
      cumulative *= s.cte_stride;
      if (template_size % cumulative != 0 || search_size % cumulative != 0) {
        throw ConfigError(tag + "template " + std::to_string(template_size) + " / search " + std::to_string(search_size) +
                          " not divisible by cumulative stride " + std::to_string(cumulative));
      }
    }
    if (sam_start_stage < 1 || sam_start_stage > 3) throw ConfigError("sam_start_stage must be 1, 2 or 3");
    if (max_text_len < 3) throw ConfigError("max_text_len must be at least 3");
  }
};

struct StagePlan {
  std::size_t search_hw = 0, template_hw = 0;
  std::size_t search_kv_hw = 0, template_kv_hw = 0;
  std::size_t dim = 0, heads = 0, tem_depth = 0, text_layers = 0;
};

inline std::size_t kv_size(std::size_t hw, std::size_t stride) { return (hw + 2 - 3) / stride + 1; }

/// Spatial sizes per stage implied by the CTE kernels/strides (padding k/2).
inline std::array<StagePlan, 3> plan_stages(const BackboneConfig& cfg) {
  cfg.validate();
  std::array<StagePlan, 3> out{};
  std::size_t s = cfg.search_size, t = cfg.template_size;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& st = cfg.stages[i];
    const std::size_t pad = st.cte_kernel / 2;
    s = (s + 2 * pad - st.cte_kernel) / st.cte_stride + 1;
    t = (t + 2 * pad - st.cte_kernel) / st.cte_stride + 1;
    out[i] = {s, t, kv_size(s, st.kv_stride), kv_size(t, st.kv_stride), st.dim, st.heads, st.tem_depth, st.text_layers};
  }
  return out;
}

struct HeadConfig {
  std::size_t layers = 4;
};

struct LossWeights {
  double giou = 2.0;
  double l1 = 5.0;
  double dm = 1.0;
  double tau = 0.07;
  std::size_t up_h = 16;
  std::size_t up_w = 16;
  TextReduction reduction = TextReduction::cls;

  void validate() const {
    if (giou < 0 || l1 < 0 || dm < 0) throw ConfigError("loss weights must be nonnegative");
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (up_h == 0 || up_w == 0) throw ConfigError("dense-matching upsample size must be positive");
  }
};

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::desk();
  HeadConfig head;
  LossWeights loss;
  std::uint64_t seed = 0;

  static ModelConfig desk() { return {}; }
  static ModelConfig full() {
    ModelConfig c;
    c.backbone = BackboneConfig::full();
    c.loss.up_h = c.loss.up_w = 40;
    return c;
  }
};

// ---------------------------------------------------------------- JSON

inline void to_json(Json& j, const StageConfig& s) {
  j = Json{{"cte_kernel", s.cte_kernel}, {"cte_stride", s.cte_stride}, {"dim", s.dim},
           {"tem_depth", s.tem_depth},   {"heads", s.heads},           {"mlp_ratio", s.mlp_ratio},
           {"kv_stride", s.kv_stride},   {"text_layers", s.text_layers}};
}
inline void from_json(const Json& j, StageConfig& s) {
  s.cte_kernel = j.value("cte_kernel", s.cte_kernel);
  s.cte_stride = j.value("cte_stride", s.cte_stride);
  s.dim = j.value("dim", s.dim);
  s.tem_depth = j.value("tem_depth", s.tem_depth);
  s.heads = j.value("heads", s.heads);
  s.mlp_ratio = j.value("mlp_ratio", s.mlp_ratio);
  s.kv_stride = j.value("kv_stride", s.kv_stride);
  s.text_layers = j.value("text_layers", s.text_layers);
}

inline void to_json(Json& j, const BackboneConfig& c) {
  j = Json{{"stages", c.stages},
           {"template_size", c.template_size},
           {"search_size", c.search_size},
           {"max_text_len", c.max_text_len},
           {"attention", c.attention},
           {"sam_enabled", c.sam_enabled},
           {"sam_start_stage", c.sam_start_stage},
           {"text_mode", c.text_mode},
           {"text_update", c.text_update},
           {"cvt_prenorm", c.cvt_prenorm}};
}
inline void from_json(const Json& j, BackboneConfig& c) {
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "full") c = BackboneConfig::full();
    else if (p == "desk") c = BackboneConfig::desk();
    else throw ConfigError("unknown backbone preset '" + p + "' (expected desk or full)");
  }
  if (j.contains("stages")) {
    const auto& st = j.at("stages");
    if (!st.is_array() || st.size() != 3) throw ConfigError("backbone.stages must list exactly 3 stages");
    for (std::size_t i = 0; i < 3; ++i) {
      StageConfig s = c.stages[i];
      from_json(st[i], s);
      c.stages[i] = s;
    }
  }
  c.template_size = j.value("template_size", c.template_size);
  c.search_size = j.value("search_size", c.search_size);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.attention = j.value("attention", c.attention);
  c.sam_enabled = j.value("sam_enabled", c.sam_enabled);
  c.sam_start_stage = j.value("sam_start_stage", c.sam_start_stage);
  c.text_mode = j.value("text_mode", c.text_mode);
  c.text_update = j.value("text_update", c.text_update);
  c.cvt_prenorm = j.value("cvt_prenorm", c.cvt_prenorm);
}

inline void to_json(Json& j, const LossWeights& w) {
  j = Json{{"giou", w.giou}, {"l1", w.l1},     {"dm", w.dm}, {"tau", w.tau},
           {"up_h", w.up_h}, {"up_w", w.up_w}, {"text_reduction", w.reduction}};
}
inline void from_json(const Json& j, LossWeights& w) {
  w.giou = j.value("giou", w.giou);
  w.l1 = j.value("l1", w.l1);
  w.dm = j.value("dm", w.dm);
  w.tau = j.value("tau", w.tau);
  w.up_h = j.value("up_h", w.up_h);
  w.up_w = j.value("up_w", w.up_w);
  w.reduction = j.value("text_reduction", w.reduction);
}

inline void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"backbone", c.backbone}, {"head", {{"layers", c.head.layers}}}, {"loss", c.loss}, {"seed", c.seed}};
}
inline void from_json(const Json& j, ModelConfig& c) {
  if (j.contains("backbone")) {
    BackboneConfig b = c.backbone;
    from_json(j.at("backbone"), b);
    c.backbone = b;
  }
  if (j.contains("head")) c.head.layers = j.at("head").value("layers", c.head.layers);
  if (j.contains("loss")) {
    LossWeights w = c.loss;
    from_json(j.at("loss"), w);
    c.loss = w;
  }
  c.seed = j.value("seed", c.seed);
}

}  // namespace satrack
