#pragma once
// Vocabulary, tokenizer and the three-stage text encoder.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "satrack/config.hpp"
#include "satrack/nn.hpp"

namespace satrack {

inline constexpr std::size_t kClsId = 0;
inline constexpr std::size_t kSepId = 1;
inline constexpr std::size_t kPadId = 2;
inline constexpr std::size_t kUnkId = 3;

class Vocabulary {
 public:
  Vocabulary() : tokens_{"[CLS]", "[SEP]", "[PAD]", "[UNK]"} { reindex(); }

  /// Specials first, then `words` in order (duplicates and blanks skipped).
  static Vocabulary from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
  }

  /// One token per line; the token on line i (0-based) gets id i + 4.
  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open vocabulary file '" + path + "'");
    std::vector<std::string> words;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty vocabulary line");
      words.push_back(line);
    }
    Vocabulary v;
    for (const auto& w : words) {
      if (v.index_.count(w)) throw ConfigError(path + ": duplicate token '" + w + "'");
      v.add(w);
    }
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write vocabulary file '" + path + "'");
    for (std::size_t i = 4; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  }

  void add(const std::string& word) {
    if (word.empty() || index_.count(word)) return;
    index_.emplace(word, tokens_.size());
    tokens_.push_back(word);
  }

  std::size_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  /// Non-special tokens in id order.
  std::vector<std::string> words() const { return {tokens_.begin() + 4, tokens_.end()}; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Token ids padded to a fixed length, with mask (1 = real token).
struct TokenSequence {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;

  std::size_t real_length() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
};

/// Lowercased words: alphanumeric runs are tokens, every other printable
/// non-space character is a token of its own.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (!std::isspace(ch) && std::isprint(ch)) out.emplace_back(1, static_cast<char>(ch));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// [CLS] words... [SEP] truncated to max_len, then [PAD]-filled.
inline TokenSequence tokenize(const std::string& description, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3) throw ConfigError("tokenize: max_len must be at least 3");
  const auto words = split_words(description);
  const std::size_t keep = std::min(words.size(), max_len - 2);
  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(kClsId);
  for (std::size_t i = 0; i < keep; ++i) seq.ids.push_back(vocab.id(words[i]));
  seq.ids.push_back(kSepId);
  seq.mask.assign(seq.ids.size(), 1);
  seq.ids.resize(max_len, kPadId);
  seq.mask.resize(max_len, 0);
  return seq;
}

/// Pre-norm transformer encoder layer with masked self-attention.
class TextLayer {
 public:
  TextLayer() = default;
  TextLayer(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t ratio)
      : heads_(heads),
        ln1_(store, name + ".ln1", dim, ParamGroup::backbone),
        q_(store, name + ".q", dim, dim, ParamGroup::backbone),
        k_(store, name + ".k", dim, dim, ParamGroup::backbone),
        v_(store, name + ".v", dim, dim, ParamGroup::backbone),
        proj_(store, name + ".proj", dim, dim, ParamGroup::backbone),
        ln2_(store, name + ".ln2", dim, ParamGroup::backbone),
        mlp_(store, name + ".mlp", dim, ratio, ParamGroup::backbone) {}

  Tensor operator()(const Tensor& x, const std::vector<std::uint8_t>& mask, Tensor* attention = nullptr) const {
    const Tensor h = ln1_(x);
    auto att = multi_head_attention(q_(h), k_(h), v_(h), heads_, &mask);
    if (attention) *attention = att.weights;
    const Tensor x1 = x + proj_(att.out);
    return x1 + mlp_(ln2_(x1));
  }

 private:
  std::size_t heads_ = 1;
  LayerNorm ln1_;
  Linear q_, k_, v_, proj_;
  LayerNorm ln2_;
  Mlp mlp_;
};

/// Small transformer encoder split into three stages whose widths match the
/// visual stage dims; a linear adapter bridges stage widths when they differ.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore& store, const BackboneConfig& cfg, std::size_t vocab_size) : max_len_(cfg.max_text_len) {
    const std::size_t d0 = cfg.stages[0].dim;
    embed_ = store.create("text.embed", {vocab_size, d0}, Init::normal(0.5), ParamGroup::backbone);
    pos_ = store.create("text.pos", {max_len_, d0}, Init::normal(0.1), ParamGroup::backbone);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& st = cfg.stages[i];
      const std::string base = "text.stage" + std::to_string(i + 1);
      Stage s;
      s.dim = st.dim;
      if (i > 0 && cfg.stages[i - 1].dim != st.dim) {
        s.adapter = Linear(store, base + ".adapter", cfg.stages[i - 1].dim, st.dim, ParamGroup::backbone);
        s.has_adapter = true;
      }
      for (std::size_t l = 0; l < st.text_layers; ++l)
        s.layers.emplace_back(store, base + ".layer" + std::to_string(l), st.dim, st.heads, st.mlp_ratio);
      stages_.push_back(std::move(s));
    }
  }

  std::size_t max_len() const { return max_len_; }
  std::size_t stage_dim(int stage) const { return stages_.at(static_cast<std::size_t>(stage - 1)).dim; }

  /// Token + learned positional embeddings for a batch of ids (N * L) -> (N, L, D1).
  Tensor embed(const std::vector<std::size_t>& ids) const {
    const Tensor tok = embedding(embed_, ids, max_len_);
    return tok + pos_;
  }

  /// Runs text stage `stage` (1-based). Input width is the previous stage's
  /// width (D1 for stage 1); output width is this stage's width.
  Tensor stage_forward(const Tensor& x, const std::vector<std::uint8_t>& mask, int stage) const {
    if (stage < 1 || stage > 3) throw ConfigError("text stage must be 1, 2 or 3, got " + std::to_string(stage));
    const Stage& s = stages_[static_cast<std::size_t>(stage - 1)];
    Tensor h = s.has_adapter ? s.adapter(x) : x;
    if (h.dim(-1) != s.dim) {
      throw ConfigError("text stage " + std::to_string(stage) + " expects width " + std::to_string(s.dim) + ", got " +
                        std::to_string(h.dim(-1)));
    }
    for (const auto& layer : s.layers) h = layer(h, mask);
    return h;
  }

 private:
  struct Stage {
    std::size_t dim = 0;
    bool has_adapter = false;
    Linear adapter;
    std::vector<TextLayer> layers;
  };
  std::size_t max_len_ = 0;
  Tensor embed_, pos_;
  std::vector<Stage> stages_;
};

/// Flattened ids and mask for a batch of token sequences.
struct TextBatch {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;
  std::size_t batch = 0;
  std::size_t length = 0;

  static TextBatch from(const std::vector<TokenSequence>& seqs) {
    TextBatch b;
    b.batch = seqs.size();
    b.length = seqs.empty() ? 0 : seqs.front().ids.size();
    for (const auto& s : seqs) {
      if (s.ids.size() != b.length) throw ConfigError("token sequences in a batch must share length");
      b.ids.insert(b.ids.end(), s.ids.begin(), s.ids.end());
      b.mask.insert(b.mask.end(), s.mask.begin(), s.mask.end());
    }
    return b;
  }

  /// (N, L, 1) tensor of 0/1 mask values.
  Tensor mask_tensor() const {
    std::vector<double> v(mask.begin(), mask.end());
    return Tensor::from({batch, length, 1}, std::move(v));
  }
};

}  // namespace satrack
