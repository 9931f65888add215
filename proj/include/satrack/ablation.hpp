#pragma once
// Named model variants and the train-then-evaluate comparison table.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <string>
#include <vector>

#include "satrack/track.hpp"

namespace satrack {

struct Variant {
  std::string name;
  std::string summary;
  std::function<void(ModelConfig&)> apply;
};

inline const std::vector<Variant>& variants() {
  static const std::vector<Variant> v{
      {"baseline", "self-attention only, no SAM, no DM",
       [](ModelConfig& c) {
         c.backbone.attention = AttentionMode::self_only;
         c.backbone.sam_enabled = false;
         c.loss.dm = 0.0;
       }},
      {"w_tem", "asymmetric TEM, no SAM, no DM",
       [](ModelConfig& c) {
         c.backbone.attention = AttentionMode::asymmetric;
         c.backbone.sam_enabled = false;
         c.loss.dm = 0.0;
       }},
      {"wo_dm", "TEM + SAM, no DM",
       [](ModelConfig& c) {
         c.backbone.attention = AttentionMode::asymmetric;
         c.backbone.sam_enabled = true;
         c.loss.dm = 0.0;
       }},
      {"full", "TEM + SAM + DM", [](ModelConfig& c) {
         c.backbone.attention = AttentionMode::asymmetric;
         c.backbone.sam_enabled = true;
       }},
      {"symmetric", "full with symmetric template-search attention",
       [](ModelConfig& c) {
         c.backbone.attention = AttentionMode::symmetric;
         c.backbone.sam_enabled = true;
       }},
      {"asynchronous", "full with text encoded before the visual stages",
       [](ModelConfig& c) {
         c.backbone.sam_enabled = true;
         c.backbone.text_mode = TextMode::asynchronous;
       }},
      {"wo_update", "full without SAM text updates",
       [](ModelConfig& c) {
         c.backbone.sam_enabled = true;
         c.backbone.text_update = false;
       }},
      {"sam_start_1", "full, SAM from stage 1", [](ModelConfig& c) { c.backbone.sam_enabled = true, c.backbone.sam_start_stage = 1; }},
      {"sam_start_2", "full, SAM from stage 2", [](ModelConfig& c) { c.backbone.sam_enabled = true, c.backbone.sam_start_stage = 2; }},
      {"sam_start_3", "full, SAM from stage 3", [](ModelConfig& c) { c.backbone.sam_enabled = true, c.backbone.sam_start_stage = 3; }},
  };
  return v;
}

/// Canonical variant name; accepts "w/o_dm", "W/O-DM", "sam_start_stage=2" and similar spellings.
inline const Variant& find_variant(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::replace(name.begin(), name.end(), '-', '_');
  if (name.rfind("w/o", 0) == 0) name = "wo" + name.substr(3);
  for (const char* prefix : {"sam_start_stage=", "sam_start_stage_", "sam_start="}) {
    if (name.rfind(prefix, 0) == 0) name = "sam_start_" + name.substr(std::string(prefix).size());
  }
  for (const auto& v : variants())
    if (v.name == name) return v;
  std::string valid;
  for (const auto& v : variants()) valid += (valid.empty() ? "" : ", ") + v.name;
  throw ConfigError("unknown variant '" + name + "'; valid variants: " + valid);
}

struct AblationRow {
  std::string variant;
  bool tem = false, sam = false, dm = false;
  EvalReport report;
};

struct AblationOptions {
  /// When set, each variant's checkpoints go to work_dir/<variant>.
  std::filesystem::path work_dir;
  std::function<void(const std::string&)> log;
};

/// Trains every variant from the same seed on `train` and evaluates on `eval`.
inline std::vector<AblationRow> run_ablation(const std::vector<std::string>& names, const TrainConfig& base,
                                             const Vocabulary& vocab, const std::vector<Sequence>& train,
                                             const std::vector<Sequence>& eval, const AblationOptions& opt = {}) {
  std::vector<const Variant*> chosen;
  for (const auto& n : names) chosen.push_back(&find_variant(n));
  std::vector<AblationRow> rows;
  for (const Variant* v : chosen) {
    TrainConfig cfg = base;
    v->apply(cfg.model);
    cfg.validate();
    if (opt.log) opt.log("variant " + v->name + " (" + v->summary + ")");
    TrackerModel model(cfg.model, vocab);
    FitOptions fo;
    if (!opt.work_dir.empty()) fo.out_dir = opt.work_dir / v->name;
    fo.log = opt.log;
    fit(model, cfg, train, fo);
    AblationRow row;
    row.variant = v->name;
    row.tem = cfg.model.backbone.attention != AttentionMode::self_only;
    row.sam = cfg.model.backbone.sam_enabled;
    row.dm = cfg.model.loss.dm > 0.0;
    row.report = evaluate_ope(model, eval, cfg.crop);
    if (opt.log) {
      std::ostringstream os;
      os << "variant " << v->name << ": success " << row.report.success_auc << ", precision " << row.report.precision;
      opt.log(os.str());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "variant,tem,sam,dm,suc,norm_pre,pre\n" << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    out << r.variant << ',' << r.tem << ',' << r.sam << ',' << r.dm << ',' << r.report.success_auc << ','
        << r.report.norm_precision_auc << ',' << r.report.precision << '\n';
  }
}

}  // namespace satrack
