#pragma once
// Writes attention maps, SAM gates and dense matching scores of one sample
// as CSV matrices and 8-bit PGM heatmaps.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "satrack/train.hpp"

namespace satrack {

inline void write_csv_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << std::setprecision(10);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << v[r * cols + c];
    out << '\n';
  }
}

/// Matrix as CSV plus a min-max scaled PGM; returns the two file names.
inline std::vector<std::string> dump_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols,
                                            const std::filesystem::path& dir, const std::string& stem) {
  if (v.empty()) return {};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  write_csv_matrix(v, rows, cols, dir / (stem + ".csv"));
  write_pgm(v, cols, rows, dir / (stem + ".pgm"), *lo, *hi);
  return {stem + ".csv", stem + ".pgm"};
}

/// Runs the model on one sample with diagnostics on and writes every map to `dir`.
inline std::vector<std::string> dump_diagnostics(const TrackerModel& model, const TrackSample& sample,
                                                 const std::filesystem::path& dir) {
  NoGradGuard no_grad;
  std::filesystem::create_directories(dir);
  const auto& bc = model.config().backbone;
  const Batch batch = collate({sample}, {bc.template_size, bc.search_size, bc.max_text_len});
  const ModelOutput o = model.forward(batch.input, Mode{false, false}, true, true);
  std::vector<std::string> files;
  auto add = [&](std::vector<std::string> f) { files.insert(files.end(), f.begin(), f.end()); };
  const auto& stages = o.backbone.diagnostics.stages;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& d = stages[s];
    const std::string tag = "stage" + std::to_string(s + 1);
    add(dump_matrix(d.search_attention, d.search_queries, d.search_keys, dir, tag + "_search_attention"));
    add(dump_matrix(d.sam_gate, 1, d.sam_gate.size(), dir, tag + "_sam_gate"));
    add(dump_matrix(d.sam_text_attention, 1, d.sam_text_attention.size(), dir, tag + "_sam_text_attention"));
  }
  const std::size_t uh = o.score.dim(1), uw = o.score.dim(2);
  add(dump_matrix(o.score.values(), uh, uw, dir, "dense_score"));
  add(dump_matrix(o.raw_score.values(), o.raw_score.dim(1), o.raw_score.dim(2), dir, "dense_score_raw"));
  add(dump_matrix(o.corners.tl.values(), o.corners.tl.dim(1), o.corners.tl.dim(2), dir, "corner_tl"));
  add(dump_matrix(o.corners.br.values(), o.corners.br.dim(1), o.corners.br.dim(2), dir, "corner_br"));
  const BBox b = box_at(o.boxes, 0);
  std::ofstream summary(dir / "summary.csv");
  summary << std::setprecision(10) << "field,value\n"
          << "pred_x_tl," << b.x_tl << "\npred_y_tl," << b.y_tl << "\npred_x_br," << b.x_br << "\npred_y_br," << b.y_br
          << "\ngt_x_tl," << sample.gt.x_tl << "\ngt_y_tl," << sample.gt.y_tl << "\ngt_x_br," << sample.gt.x_br
          << "\ngt_y_br," << sample.gt.y_br << '\n';
  files.push_back("summary.csv");
  return files;
}

}  // namespace satrack
