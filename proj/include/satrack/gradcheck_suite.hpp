#pragma once
// Central-difference checks of every differentiable operator and of the whole
// tracker (loss w.r.t. all parameters).

#include <functional>
#include <string>
#include <vector>

#include "satrack/gradcheck.hpp"
#include "satrack/losses.hpp"
#include "satrack/model.hpp"

namespace satrack {

struct OpCheckResult {
  std::string op;
  GradCheckReport report;
};

namespace detail {

/// Random tensor whose entries keep at least `gap` away from zero and from each other.
inline Tensor spread_tensor(Rng& rng, Shape shape, double lo, double hi, double gap = 1e-3) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(x) < gap);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

/// Weighted sum with fixed random weights, so every output element matters.
inline Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(rng, y.shape(), -1.0, 1.0, false)));
}

}  // namespace detail

/// One check per operator; each uses h = 1e-6 and inputs away from kinks.
inline std::vector<OpCheckResult> op_gradcheck_suite(std::uint64_t seed = 7) {
  using detail::probe;
  using detail::random_tensor;
  using detail::spread_tensor;
  Rng rng(seed);
  std::vector<OpCheckResult> out;
  auto run = [&](const std::string& name, std::vector<NamedTensor> params, std::function<Tensor()> f) {
    out.push_back({name, finite_diff_check(f, std::move(params), {1e-6, 0, seed})});
  };

  const Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {3, 4});
  const Tensor pos = random_tensor(rng, {2, 3, 4}, 0.5, 2.0);
  run("add", {{"a", a}, {"b", b}}, [=] { return probe(add(a, b), 1); });
  run("sub", {{"a", a}, {"b", b}}, [=] { return probe(sub(a, b), 2); });
  run("mul", {{"a", a}, {"b", b}}, [=] { return probe(mul(a, b), 3); });
  run("div", {{"a", a}, {"p", pos}}, [=] { return probe(div(a, pos), 4); });
  const Tensor u = random_tensor(rng, {3, 5});
  const Tensor other = add(u.detach(), spread_tensor(rng, {3, 5}, -0.5, 0.5, 5e-2)).detach();
  run("minimum", {{"u", u}}, [=] { return probe(minimum(u, other), 5); });
  run("maximum", {{"u", u}}, [=] { return probe(maximum(other, u), 6); });
  run("scale", {{"a", a}}, [=] { return probe(scale(a, -1.7), 7); });
  run("add_scalar", {{"a", a}}, [=] { return probe(add_scalar(a, 0.3), 8); });
  run("exp", {{"a", a}}, [=] { return probe(exp(a), 9); });
  run("log", {{"p", pos}}, [=] { return probe(log(pos), 10); });
  run("square", {{"a", a}}, [=] { return probe(square(a), 11); });
  run("sqrt", {{"p", pos}}, [=] { return probe(sqrt(pos), 12); });
  const Tensor k = spread_tensor(rng, {4, 5}, -2, 2, 1e-2);
  run("abs", {{"k", k}}, [=] { return probe(abs(k), 13); });
  run("relu", {{"k", k}}, [=] { return probe(relu(k), 14); });
  run("clamp_min", {{"k", k}}, [=] { return probe(clamp_min(add_scalar(k, 0.0), 0.0), 15); });
  run("sigmoid", {{"a", a}}, [=] { return probe(sigmoid(scale(a, 3.0)), 16); });
  run("tanh", {{"a", a}}, [=] { return probe(tanh(a), 17); });
  run("gelu", {{"a", a}}, [=] { return probe(gelu(scale(a, 2.0)), 18); });
  run("sum", {{"a", a}}, [=] { return probe(sum(square(a)), 19); });
  run("mean", {{"a", a}}, [=] { return probe(mean(square(a)), 20); });
  run("sum_axis", {{"a", a}}, [=] { return probe(sum(a, 1), 21); });
  run("mean_axis", {{"a", a}}, [=] { return probe(mean(a, -1, true), 22); });
  run("max_axis", {{"k", k}}, [=] { return probe(max(k, 1), 23); });
  run("reshape", {{"a", a}}, [=] { return probe(reshape(a, {6, 4}), 24); });
  run("permute", {{"a", a}}, [=] { return probe(permute(a, {2, 0, 1}), 25); });
  run("slice", {{"a", a}}, [=] { return probe(slice(a, 1, 1, 2), 26); });
  const Tensor c = random_tensor(rng, {2, 2, 4});
  run("concat", {{"a", a}, {"c", c}}, [=] { return probe(concat({a, c}, 1), 27); });
  const Tensor m1 = random_tensor(rng, {2, 3, 5}), m2 = random_tensor(rng, {2, 5, 4}), w2 = random_tensor(rng, {5, 4});
  run("matmul", {{"m1", m1}, {"m2", m2}}, [=] { return probe(matmul(m1, m2), 28); });
  run("matmul_shared", {{"m1", m1}, {"w2", w2}}, [=] { return probe(matmul(m1, w2), 29); });
  const Tensor lw = random_tensor(rng, {4, 5}), lb = random_tensor(rng, {4});
  run("linear", {{"x", m1}, {"w", lw}, {"b", lb}}, [=] { return probe(linear(m1, lw, lb), 30); });
  run("softmax", {{"a", a}}, [=] { return probe(softmax(scale(a, 2.0), -1), 31); });
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 0, 0, 1};
  run("masked_softmax", {{"a", a}}, [=] { return probe(masked_softmax(scale(a, 2.0), mask), 32); });
  const Tensor g = random_tensor(rng, {4}, 0.5, 1.5), be = random_tensor(rng, {4});
  run("layer_norm", {{"a", a}, {"gamma", g}, {"beta", be}}, [=] { return probe(layer_norm(a, g, be), 33); });
  run("batch_norm_train", {{"a", a}, {"gamma", g}, {"beta", be}},
      [=] { return probe(batch_norm(a, g, be, nullptr, BatchNormOptions{true, false}), 34); });
  BatchNormState st(4);
  for (std::size_t i = 0; i < 4; ++i) st.running_mean[i] = 0.1 * static_cast<double>(i), st.running_var[i] = 0.5 + 0.2 * static_cast<double>(i);
  run("batch_norm_eval", {{"a", a}, {"gamma", g}, {"beta", be}}, [=]() mutable {
    BatchNormState s = st;
    return probe(batch_norm(a, g, be, &s, BatchNormOptions{false, false}), 35);
  });
  run("l2_normalize", {{"a", a}}, [=] { return probe(l2_normalize(a, -1), 36); });
  const Tensor img = random_tensor(rng, {2, 5, 6, 4});
  const Tensor kw = random_tensor(rng, {3, 3, 3, 4}), kb = random_tensor(rng, {3});
  run("conv2d", {{"x", img}, {"w", kw}, {"b", kb}},
      [=] { return probe(conv2d(img, kw, kb, {2, 1, 1}), 37); });
  const Tensor dw = random_tensor(rng, {4, 3, 3, 1});
  run("conv2d_depthwise", {{"x", img}, {"w", dw}}, [=] { return probe(conv2d(img, dw, Tensor(), {1, 1, 4}), 38); });
  run("bilinear_resize", {{"x", img}}, [=] { return probe(bilinear_resize(img, 7, 4), 39); });
  const Tensor gp = spread_tensor(rng, {2, 3, 3, 4}, -1, 1, 1e-2);
  run("global_max_pool", {{"x", gp}}, [=] { return probe(global_max_pool(gp), 40); });
  const Tensor table = random_tensor(rng, {6, 3});
  run("embedding", {{"table", table}}, [=] { return probe(embedding(table, {0, 2, 2, 5, 1, 3}, 3), 41); });
  std::vector<double> targets(12);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<double>(i % 3 == 0);
  const Tensor logits = random_tensor(rng, {3, 4}, -3, 3);
  run("bce_with_logits", {{"z", logits}}, [=] { return probe(bce_with_logits(logits, targets), 42); });

  // Box and matching losses
  const Tensor pred = Tensor::from({2, 4}, {0.1, 0.2, 0.5, 0.6, 0.55, 0.3, 0.9, 0.8}, true);
  const Tensor gtb = boxes_tensor({{0.2, 0.1, 0.6, 0.5}, {0.1, 0.1, 0.4, 0.45}});
  run("giou_loss", {{"pred", pred}}, [=] { return giou_loss(pred, gtb); });
  run("l1_box_loss", {{"pred", pred}}, [=] { return l1_box_loss(pred, gtb); });
  const Tensor feat = random_tensor(rng, {2, 3, 3, 4}), sent = random_tensor(rng, {2, 4});
  LossWeights lw8;
  lw8.up_h = lw8.up_w = 6;
  run("dense_matching", {{"search", feat}, {"sentence", sent}}, [=] {
    const Tensor s = dense_matching_score(feat, sent, lw8);
    return dense_matching_loss(s, {{0.2, 0.1, 0.6, 0.5}, {0.1, 0.1, 0.4, 0.45}}, lw8);
  });
  const Tensor maps = random_tensor(rng, {2, 4, 5});
  run("soft_argmax", {{"maps", maps}}, [=] {
    return probe(soft_argmax({CornerHead::spatial_softmax(maps), CornerHead::spatial_softmax(scale(maps, -1.0))}), 43);
  });
  return out;
}

/// Whole-model check: loss of a random batch w.r.t. every parameter tensor.
/// Batch-norm layers run in training mode without touching running stats.
inline GradCheckReport model_gradcheck(const ModelConfig& cfg, const Vocabulary& vocab, std::size_t batch,
                                       std::size_t max_entries, std::uint64_t seed) {
  TrackerModel model(cfg, vocab);
  Rng rng(seed);
  const auto& bc = cfg.backbone;
  auto image = [&](std::size_t s) { return detail::random_tensor(rng, {batch, s, s, 3}, 0.0, 1.0, false); };
  const Tensor tmpl = image(bc.template_size), search = image(bc.search_size);
  std::vector<TokenSequence> toks;
  std::vector<BBox> gt;
  const auto& words = vocab.words();
  for (std::size_t n = 0; n < batch; ++n) {
    std::string desc;
    const std::size_t len = 2 + rng.index(4);
    for (std::size_t i = 0; i < len && !words.empty(); ++i) desc += (i ? " " : "") + words[rng.index(words.size())];
    toks.push_back(tokenize(desc, vocab, bc.max_text_len));
    const double x = rng.uniform(0.2, 0.5), y = rng.uniform(0.2, 0.5);
    gt.push_back({x, y, x + rng.uniform(0.1, 0.3), y + rng.uniform(0.1, 0.3)});
  }
  const ModelInput in{tmpl, search, TextBatch::from(toks)};
  auto f = [&] { return model.loss(in, gt, Mode{true, false}).total; };
  return finite_diff_check(f, model.params().named(), {1e-6, max_entries, seed});
}

}  // namespace satrack
