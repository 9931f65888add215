#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "satrack/ablation.hpp"
#include "satrack/track.hpp"

using namespace satrack;
namespace fs = std::filesystem;

namespace {

Sequence annotated(std::vector<BBox> boxes, const std::string& name = "s") {
  Sequence s;
  s.name = name;
  s.boxes = std::move(boxes);
  s.frames.assign(s.boxes.size(), Image(64, 64));
  return s;
}

std::vector<BBox> walk(std::size_t n, double scale = 1.0) {
  std::vector<BBox> b;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = 5 + 1.5 * i, y = 10 + 0.5 * i;
    b.push_back({x * scale, y * scale, (x + 8) * scale, (y + 6) * scale});
  }
  return b;
}

std::vector<BBox> shifted(const std::vector<BBox>& in, double dx) {
  std::vector<BBox> out = in;
  for (auto& b : out) b.x_tl += dx, b.x_br += dx;
  return out;
}

}  // namespace

TEST(Metrics, PerfectPredictionsScoreOne) {
  const Sequence s = annotated(walk(10));
  const EvalReport r = evaluate_predictions({s}, {s.boxes});
  EXPECT_DOUBLE_EQ(r.success_auc, 1.0);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.norm_precision_auc, 1.0);
}

TEST(Metrics, DisjointFarPredictionsScoreFloor) {
  const Sequence s = annotated(walk(10));
  const EvalReport r = evaluate_predictions({s}, {shifted(s.boxes, 100)});
  // only the zero threshold counts an IoU of 0
  EXPECT_DOUBLE_EQ(r.success_auc, 1.0 / 21.0);
  EXPECT_DOUBLE_EQ(r.precision, 0.0);
  EXPECT_DOUBLE_EQ(r.norm_precision_auc, 0.0);
}

TEST(Metrics, FrameZeroIsExcluded) {
  const Sequence s = annotated(walk(5));
  std::vector<BBox> pred = s.boxes;
  pred[0] = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(evaluate_predictions({s}, {pred}).success_auc, 1.0);
  EXPECT_EQ(sequence_metrics(s, pred).ious.size(), 4u);
}

TEST(Metrics, ScaleFreeMetricsIgnoreResolution) {
  const Sequence a = annotated(walk(12)), b = annotated(walk(12, 2.0));
  const auto pa = shifted(a.boxes, 3.0), pb = shifted(b.boxes, 6.0);
  const EvalReport ra = evaluate_predictions({a}, {pa}), rb = evaluate_predictions({b}, {pb});
  EXPECT_NEAR(ra.success_auc, rb.success_auc, 1e-12);
  EXPECT_NEAR(ra.norm_precision_auc, rb.norm_precision_auc, 1e-12);
}

TEST(Metrics, AveragedPerSequenceNotPerFrame) {
  const Sequence a = annotated(walk(3), "a"), b = annotated(walk(11), "b");
  const EvalReport r = evaluate_predictions({a, b}, {a.boxes, shifted(b.boxes, 100)});
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  ASSERT_EQ(r.sequences.size(), 2u);
}

TEST(Metrics, IouAndCentreErrorExamples) {
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {1, 0, 3, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
  EXPECT_DOUBLE_EQ(center_error({0, 0, 2, 2}, {3, 4, 5, 6}), 5.0);
  EXPECT_DOUBLE_EQ(normalized_center_error({0, 0, 2, 2}, {2, 0, 4, 2}), 1.0);
  EXPECT_EQ(success_thresholds().size(), 21u);
  EXPECT_EQ(norm_precision_thresholds().back(), 0.5);
}

TEST(Metrics, PredictionCountMustMatch) {
  const Sequence s = annotated(walk(4));
  EXPECT_THROW(evaluate_predictions({s}, {walk(3)}), ConfigError);
}

TEST(Sanitize, ReordersClampsAndKeepsMinimumSize) {
  const BBox a = sanitize_box({10, 20, 5, 2}, 64, 64);
  EXPECT_EQ(a.x_tl, 5);
  EXPECT_EQ(a.x_br, 10);
  EXPECT_EQ(a.y_tl, 2);
  const BBox b = sanitize_box({-5, -5, 100, 70}, 64, 64);
  EXPECT_EQ(b.x_tl, 0);
  EXPECT_EQ(b.x_br, 64);
  EXPECT_EQ(b.y_br, 64);
  const BBox c = sanitize_box({70, 30, 80, 30}, 64, 64);
  EXPECT_GE(c.width(), 1.0);
  EXPECT_GE(c.height(), 1.0);
  EXPECT_LE(c.x_br, 64.0);
}

TEST(Tracking, FirstFrameIsGroundTruthAndOneBoxPerFrame) {
  GeneratorSpec spec;
  spec.length = 6;
  const auto seqs = generate_benchmark(2, 3, 0, spec);
  const TrackerModel model(ModelConfig::desk(), Vocabulary::from_words(lexicon_words()));
  std::vector<std::vector<BBox>> preds;
  const EvalReport r = evaluate_ope(model, seqs, CropConfig{}, &preds);
  ASSERT_EQ(preds.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    ASSERT_EQ(preds[i].size(), 6u);
    EXPECT_EQ(preds[i][0].x_tl, seqs[i].boxes[0].x_tl);
    EXPECT_EQ(preds[i][0].y_br, seqs[i].boxes[0].y_br);
    for (const auto& b : preds[i]) {
      EXPECT_GE(b.width(), 1.0);
      EXPECT_LE(b.x_br, 64.0);
    }
  }
  EXPECT_GE(r.success_auc, 0.0);
  EXPECT_LE(r.success_auc, 1.0);
}

TEST(Tracking, BatchedTrackingMatchesOneAtATime) {
  GeneratorSpec spec;
  spec.length = 5;
  const auto seqs = generate_benchmark(3, 2, 0, spec);
  const TrackerModel model(ModelConfig::desk(), Vocabulary::from_words(lexicon_words()));
  const auto both = track_sequences(model, {&seqs[0], &seqs[1]}, CropConfig{});
  for (std::size_t i = 0; i < 2; ++i) {
    const auto one = track_sequence(model, seqs[i], CropConfig{});
    for (std::size_t t = 0; t < one.size(); ++t) EXPECT_NEAR(one[t].x_tl, both[i][t].x_tl, 1e-9);
  }
}

TEST(Reports, CsvLayout) {
  const Sequence s = annotated(walk(4), "seq_a");
  const fs::path dir = fs::temp_directory_path() / "satrack_track_reports";
  fs::create_directories(dir);
  write_report_csv(evaluate_predictions({s}, {s.boxes}), dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::string header, row, all;
  std::getline(in, header);
  std::getline(in, row);
  std::getline(in, all);
  EXPECT_EQ(header, "sequence,success,precision,norm_precision");
  EXPECT_EQ(row.rfind("seq_a,", 0), 0u);
  EXPECT_EQ(all, "ALL,1,1,1");

  write_boxes({{1, 2, 3, 4}}, dir / "b.txt");
  std::ifstream bin(dir / "b.txt");
  std::getline(bin, row);
  EXPECT_EQ(row, "0,1.000000,2.000000,3.000000,4.000000");
}

TEST(Variants, AliasesAndUnknownNames) {
  EXPECT_EQ(find_variant("w/o_dm").name, "wo_dm");
  EXPECT_EQ(find_variant("W-TEM").name, "w_tem");
  EXPECT_EQ(find_variant("sam_start_stage=2").name, "sam_start_2");
  try {
    find_variant("bogus");
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bogus"), std::string::npos);
    EXPECT_NE(msg.find("baseline"), std::string::npos);
  }
}

TEST(Variants, AblationCsvHeader) {
  AblationRow row;
  row.variant = "full";
  row.tem = row.sam = row.dm = true;
  row.report.success_auc = 0.5;
  std::ostringstream os;
  write_ablation_csv({row}, os);
  EXPECT_EQ(os.str(), "variant,tem,sam,dm,suc,norm_pre,pre\nfull,1,1,1,0.5000,0.0000,0.0000\n");
}

TEST(Tracking, ResultsDoNotDependOnWorkerCount) {
  GeneratorSpec spec;
  spec.length = 5;
  const auto seqs = generate_benchmark(4, 5, 0, spec);
  const TrackerModel model(ModelConfig::desk(), Vocabulary::from_words(lexicon_words()));
  std::vector<std::vector<BBox>> one, three;
  setenv("SATRACK_THREADS", "1", 1);
  evaluate_ope(model, seqs, CropConfig{}, &one);
  setenv("SATRACK_THREADS", "3", 1);
  evaluate_ope(model, seqs, CropConfig{}, &three);
  unsetenv("SATRACK_THREADS");
  for (std::size_t i = 0; i < seqs.size(); ++i)
    for (std::size_t t = 0; t < one[i].size(); ++t) {
      EXPECT_EQ(one[i][t].x_tl, three[i][t].x_tl);
      EXPECT_EQ(one[i][t].y_br, three[i][t].y_br);
    }
}
