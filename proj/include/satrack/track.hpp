#pragma once
// One-pass tracking and OPE metrics (success AUC, precision@20px,
// normalised precision AUC).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "satrack/data.hpp"
#include "satrack/train.hpp"

namespace satrack {

/// Reorders corners, clamps to the frame and enforces a minimum size.
inline BBox sanitize_box(BBox b, double frame_w, double frame_h, double min_size = 1.0) {
  if (b.x_tl > b.x_br) std::swap(b.x_tl, b.x_br);
  if (b.y_tl > b.y_br) std::swap(b.y_tl, b.y_br);
  b.x_tl = std::clamp(b.x_tl, 0.0, frame_w);
  b.x_br = std::clamp(b.x_br, 0.0, frame_w);
  b.y_tl = std::clamp(b.y_tl, 0.0, frame_h);
  b.y_br = std::clamp(b.y_br, 0.0, frame_h);
  auto grow = [&](double& lo, double& hi, double limit) {
    if (hi - lo >= min_size) return;
    const double c = std::clamp(0.5 * (lo + hi), 0.5 * min_size, limit - 0.5 * min_size);
    lo = c - 0.5 * min_size;
    hi = c + 0.5 * min_size;
  };
  grow(b.x_tl, b.x_br, frame_w);
  grow(b.y_tl, b.y_br, frame_h);
  return b;
}

/// Tracks several sequences in lockstep (one batched forward per frame index).
/// Frame 0 returns the ground truth; later frames search around the previous
/// prediction. The template and description stay fixed.
inline std::vector<std::vector<BBox>> track_sequences(const TrackerModel& model, const std::vector<const Sequence*>& seqs,
                                                      const CropConfig& crop) {
  NoGradGuard no_grad;
  const auto& bc = model.config().backbone;
  const SampleSizes sizes{bc.template_size, bc.search_size, bc.max_text_len};
  std::vector<std::vector<BBox>> out(seqs.size());
  std::vector<std::vector<double>> templates(seqs.size());
  std::vector<TokenSequence> tokens(seqs.size());
  std::size_t longest = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const Sequence& s = *seqs[i];
    if (s.frames.empty()) continue;
    if (s.boxes.empty()) throw ConfigError("sequence '" + s.name + "' has no initial box");
    out[i].push_back(s.boxes[0]);
    templates[i] = crop_resize(s.frames[0], template_window(s.boxes[0], crop), sizes.template_size);
    tokens[i] = tokenize(s.description, model.vocab(), sizes.max_text_len);
    longest = std::max(longest, s.frames.size());
  }
  for (std::size_t t = 1; t < longest; ++t) {
    std::vector<std::size_t> active;
    std::vector<TrackSample> samples;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const Sequence& s = *seqs[i];
      if (t >= s.frames.size()) continue;
      active.push_back(i);
      TrackSample smp;
      smp.tmpl = templates[i];
      smp.tokens = tokens[i];
      smp.search_window = search_window(out[i].back(), crop, nullptr);
      smp.search = crop_resize(s.frames[t], smp.search_window, sizes.search_size);
      samples.push_back(std::move(smp));
    }
    if (active.empty()) break;
    const Batch batch = collate(samples, sizes);
    const ModelOutput o = model.forward(batch.input, Mode{false, false}, false);
    for (std::size_t k = 0; k < active.size(); ++k) {
      const Sequence& s = *seqs[active[k]];
      const BBox frame_box = samples[k].search_window.to_frame(box_at(o.boxes, k));
      out[active[k]].push_back(sanitize_box(frame_box, static_cast<double>(s.frames[t].width),
                                            static_cast<double>(s.frames[t].height)));
    }
  }
  return out;
}

inline std::vector<BBox> track_sequence(const TrackerModel& model, const Sequence& seq, const CropConfig& crop) {
  return track_sequences(model, {&seq}, crop).front();
}

// -------------------------------------------------------------------- metrics

inline double box_iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x_br, b.x_br) - std::max(a.x_tl, b.x_tl));
  const double ih = std::max(0.0, std::min(a.y_br, b.y_br) - std::max(a.y_tl, b.y_tl));
  const double inter = iw * ih;
  const double uni = std::max(0.0, a.width()) * std::max(0.0, a.height()) +
                     std::max(0.0, b.width()) * std::max(0.0, b.height()) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double center_error(const BBox& p, const BBox& g) { return std::hypot(p.cx() - g.cx(), p.cy() - g.cy()); }

/// Centre error with each axis divided by the ground-truth width/height.
inline double normalized_center_error(const BBox& p, const BBox& g) {
  const double w = std::max(g.width(), 1e-12), h = std::max(g.height(), 1e-12);
  return std::hypot((p.cx() - g.cx()) / w, (p.cy() - g.cy()) / h);
}

inline std::vector<double> success_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 20; ++i) t.push_back(i * 0.05);
  return t;
}

inline std::vector<double> norm_precision_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 20; ++i) t.push_back(i * 0.025);
  return t;
}

inline constexpr double kPrecisionPixels = 20.0;

struct SequenceMetrics {
  std::string name;
  std::vector<double> ious;  // frames 1..n-1
  double success = 0, precision = 0, norm_precision = 0;
};

struct EvalReport {
  double success_auc = 0;
  double precision = 0;
  double norm_precision_auc = 0;
  std::vector<SequenceMetrics> sequences;
};

/// Metrics of one sequence, frame 0 excluded.
inline SequenceMetrics sequence_metrics(const Sequence& seq, const std::vector<BBox>& pred) {
  if (pred.size() != seq.boxes.size()) {
    throw ConfigError("sequence '" + seq.name + "': " + std::to_string(pred.size()) + " predictions for " +
                      std::to_string(seq.boxes.size()) + " frames");
  }
  SequenceMetrics m;
  m.name = seq.name;
  std::vector<double> ce, nce;
  for (std::size_t t = 1; t < pred.size(); ++t) {
    m.ious.push_back(box_iou(pred[t], seq.boxes[t]));
    ce.push_back(center_error(pred[t], seq.boxes[t]));
    nce.push_back(normalized_center_error(pred[t], seq.boxes[t]));
  }
  if (m.ious.empty()) return m;
  const double n = static_cast<double>(m.ious.size());
  for (double th : success_thresholds())
    m.success += static_cast<double>(std::count_if(m.ious.begin(), m.ious.end(), [&](double v) { return v >= th; })) / n;
  m.success /= static_cast<double>(success_thresholds().size());
  m.precision = static_cast<double>(std::count_if(ce.begin(), ce.end(), [](double v) { return v <= kPrecisionPixels; })) / n;
  for (double th : norm_precision_thresholds())
    m.norm_precision += static_cast<double>(std::count_if(nce.begin(), nce.end(), [&](double v) { return v <= th; })) / n;
  m.norm_precision /= static_cast<double>(norm_precision_thresholds().size());
  return m;
}

/// Averages per-sequence metrics (each sequence weighs equally).
inline EvalReport summarize(std::vector<SequenceMetrics> per_sequence) {
  if (per_sequence.empty()) throw ConfigError("evaluation needs at least one sequence");
  EvalReport r;
  for (const auto& m : per_sequence) {
    r.success_auc += m.success;
    r.precision += m.precision;
    r.norm_precision_auc += m.norm_precision;
  }
  const double n = static_cast<double>(per_sequence.size());
  r.success_auc /= n;
  r.precision /= n;
  r.norm_precision_auc /= n;
  r.sequences = std::move(per_sequence);
  return r;
}

inline EvalReport evaluate_predictions(const std::vector<Sequence>& seqs, const std::vector<std::vector<BBox>>& preds) {
  if (seqs.size() != preds.size()) throw ConfigError("one prediction list per sequence required");
  std::vector<SequenceMetrics> m;
  for (std::size_t i = 0; i < seqs.size(); ++i) m.push_back(sequence_metrics(seqs[i], preds[i]));
  return summarize(std::move(m));
}

/// One-pass evaluation; sequences are split across SATRACK_THREADS workers.
inline EvalReport evaluate_ope(const TrackerModel& model, const std::vector<Sequence>& seqs, const CropConfig& crop,
                               std::vector<std::vector<BBox>>* predictions = nullptr) {
  if (seqs.empty()) throw ConfigError("evaluation needs at least one sequence");
  const std::size_t workers = std::min(thread_count(), seqs.size());
  std::vector<std::vector<BBox>> preds(seqs.size());
  parallel_for(workers, workers, [&](std::size_t w) {
    std::vector<const Sequence*> mine;
    std::vector<std::size_t> idx;
    for (std::size_t i = w; i < seqs.size(); i += workers) mine.push_back(&seqs[i]), idx.push_back(i);
    auto res = track_sequences(model, mine, crop);
    for (std::size_t k = 0; k < idx.size(); ++k) preds[idx[k]] = std::move(res[k]);
  });
  EvalReport r = evaluate_predictions(seqs, preds);
  if (predictions) *predictions = std::move(preds);
  return r;
}

inline void write_report_csv(const EvalReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write report '" + path.string() + "'");
  out << std::setprecision(17) << "sequence,success,precision,norm_precision\n";
  for (const auto& s : r.sequences) out << s.name << ',' << s.success << ',' << s.precision << ',' << s.norm_precision << '\n';
  out << "ALL," << r.success_auc << ',' << r.precision << ',' << r.norm_precision_auc << '\n';
}

/// "frame_index,x_tl,y_tl,x_br,y_br" per line, 6 decimals.
inline void write_boxes(const std::vector<BBox>& boxes, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write boxes to '" + path.string() + "'");
  out << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < boxes.size(); ++i)
    out << i << ',' << boxes[i].x_tl << ',' << boxes[i].y_tl << ',' << boxes[i].x_br << ',' << boxes[i].y_br << '\n';
}

}  // namespace satrack
