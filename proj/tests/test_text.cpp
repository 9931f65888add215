#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "satrack/text.hpp"

using namespace satrack;

namespace {

Vocabulary small_vocab() { return Vocabulary::from_words({"the", "red", "square", "moving", "left"}); }

}  // namespace

TEST(Tokenize, ShortSentence) {
  const Vocabulary v = small_vocab();
  const auto t = tokenize("the red square", v, 8);
  const std::vector<std::size_t> expect{kClsId, v.id("the"), v.id("red"), v.id("square"), kSepId, kPadId, kPadId, kPadId};
  EXPECT_EQ(t.ids, expect);
  EXPECT_EQ(t.real_length(), 5u);
  EXPECT_EQ(t.mask, (std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0}));
}

TEST(Tokenize, LongSentenceTruncatesToMaxLenEndingInSep) {
  std::string s;
  for (int i = 0; i < 40; ++i) s += "red ";
  const auto t = tokenize(s, small_vocab(), 30);
  ASSERT_EQ(t.ids.size(), 30u);
  EXPECT_EQ(t.ids.front(), kClsId);
  EXPECT_EQ(t.ids.back(), kSepId);
  EXPECT_EQ(t.real_length(), 30u);
}

TEST(Tokenize, EmptyDescription) {
  const auto t = tokenize("", small_vocab(), 6);
  EXPECT_EQ(t.ids, (std::vector<std::size_t>{kClsId, kSepId, kPadId, kPadId, kPadId, kPadId}));
  EXPECT_EQ(t.real_length(), 2u);
}

TEST(Tokenize, CaseAndPunctuationAndUnknowns) {
  const Vocabulary v = small_vocab();
  EXPECT_EQ(split_words("The RED, square!"), (std::vector<std::string>{"the", "red", ",", "square", "!"}));
  const auto t = tokenize("The purple square", v, 6);
  EXPECT_EQ(t.ids[1], v.id("the"));
  EXPECT_EQ(t.ids[2], kUnkId);
  EXPECT_THROW(tokenize("x", v, 2), ConfigError);
}

TEST(Vocabulary, LoadSaveRoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "satrack_vocab_test";
  std::filesystem::create_directories(dir);
  const Vocabulary v = small_vocab();
  v.save((dir / "v.txt").string());
  const Vocabulary w = Vocabulary::load((dir / "v.txt").string());
  EXPECT_EQ(w.words(), v.words());
  EXPECT_EQ(w.id("square"), 4u + 2u);

  std::ofstream(dir / "bad.txt") << "a\n\nb\n";
  try {
    Vocabulary::load((dir / "bad.txt").string());
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  std::ofstream(dir / "dup.txt") << "a\nb\na\n";
  EXPECT_THROW(Vocabulary::load((dir / "dup.txt").string()), ConfigError);
  EXPECT_THROW(Vocabulary::load((dir / "missing.txt").string()), ConfigError);
}

TEST(TextEncoder, DeskStageShapes) {
  const BackboneConfig cfg = BackboneConfig::desk();
  ParamStore store(3);
  const Vocabulary v = small_vocab();
  const TextEncoder enc(store, cfg, v.size());
  const auto t = tokenize("the red square moving left", v, 8);
  BackboneConfig c8 = cfg;
  c8.max_text_len = 8;
  ParamStore store8(3);
  const TextEncoder enc8(store8, c8, v.size());
  Tensor x = enc8.embed(t.ids);
  EXPECT_EQ(x.shape(), (Shape{1, 8, 8}));
  const std::size_t dims[3] = {8, 16, 32};
  for (int s = 1; s <= 3; ++s) {
    x = enc8.stage_forward(x, t.mask, s);
    EXPECT_EQ(x.shape(), (Shape{1, 8, dims[s - 1]}));
  }
  EXPECT_THROW(enc8.stage_forward(x, t.mask, 4), ConfigError);
  EXPECT_EQ(enc.max_len(), cfg.max_text_len);
}

TEST(TextEncoder, PaddedKeysGetZeroAttention) {
  ParamStore store(5);
  const TextLayer layer(store, "layer", 8, 2, 2);
  const auto t = tokenize("red", small_vocab(), 6);
  Rng r(1);
  std::vector<double> xv(6 * 8);
  for (auto& v : xv) v = r.normal();
  Tensor w;
  layer(Tensor::from({1, 6, 8}, xv), t.mask, &w);
  ASSERT_EQ(w.shape(), (Shape{1, 2, 6, 6}));
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t q = 0; q < 6; ++q)
      for (std::size_t k = 0; k < 6; ++k) {
        const double a = w[((h * 6) + q) * 6 + k];
        if (!t.mask[k]) EXPECT_EQ(a, 0.0);
      }
}

TEST(TextEncoder, FullScaleLayerSplitAndWidths) {
  const BackboneConfig cfg = BackboneConfig::full();
  EXPECT_EQ(cfg.stages[0].text_layers, 1u);
  EXPECT_EQ(cfg.stages[1].text_layers, 4u);
  EXPECT_EQ(cfg.stages[2].text_layers, 7u);
  EXPECT_EQ(cfg.max_text_len, 30u);
  ParamStore store(1);
  const TextEncoder enc(store, cfg, 50);
  EXPECT_EQ(enc.stage_dim(1), 64u);
  EXPECT_EQ(enc.stage_dim(2), 192u);
  EXPECT_EQ(enc.stage_dim(3), 384u);
  EXPECT_TRUE(store.params().count("text.stage2.adapter.weight"));
  EXPECT_TRUE(store.params().count("text.stage3.layer6.q.weight"));
}

TEST(TextBatch, RequiresEqualLengths) {
  const Vocabulary v = small_vocab();
  EXPECT_THROW(TextBatch::from({tokenize("red", v, 5), tokenize("red", v, 6)}), ConfigError);
  const auto b = TextBatch::from({tokenize("red", v, 5), tokenize("the red square", v, 5)});
  EXPECT_EQ(b.batch, 2u);
  const Tensor m = b.mask_tensor();
  EXPECT_EQ(m.shape(), (Shape{2, 5, 1}));
  EXPECT_EQ(m[3], 0.0);
  EXPECT_EQ(m[8], 1.0);
}
