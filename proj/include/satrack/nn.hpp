#pragma once
// Parameter registry and the small layer modules the model is assembled from.

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "satrack/ops.hpp"
#include "satrack/rng.hpp"

namespace satrack {

/// Learning-rate group a parameter belongs to.
enum class ParamGroup { backbone, head };

struct Init {
  enum class Kind { zeros, ones, uniform_fan_in, normal } kind = Kind::zeros;
  double scale = 1.0;       // normal: stddev; uniform_fan_in: multiplier on 1/sqrt(fan_in)
  std::size_t fan_in = 1;

  static Init zeros() { return {Kind::zeros}; }
  static Init ones() { return {Kind::ones}; }
  static Init normal(double stddev) { return {Kind::normal, stddev}; }
  static Init fan_in_uniform(std::size_t fan_in, double gain = 1.0) { return {Kind::uniform_fan_in, gain, fan_in}; }
};

/// Forward-pass mode flags.
struct Mode {
  bool training = false;
  /// Whether training-mode batch norm folds batch statistics into the running averages.
  bool update_stats = true;
};

/// Owns every trainable tensor and batch-norm state of a model, keyed by a
/// dotted path. Initial values come from a stream derived from (seed, name),
/// so they do not depend on construction order.
class ParamStore {
 public:
  struct Entry {
    Tensor tensor;
    ParamGroup group;
  };

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Tensor create(const std::string& name, Shape shape, const Init& init, ParamGroup group) {
    if (params_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    const std::size_t n = numel(shape);
    std::vector<double> v(n, 0.0);
    Rng rng(Rng::derive(seed_, name));
    switch (init.kind) {
      case Init::Kind::zeros:
        break;
      case Init::Kind::ones:
        std::fill(v.begin(), v.end(), 1.0);
        break;
      case Init::Kind::normal:
        for (auto& x : v) x = init.scale * rng.normal();
        break;
      case Init::Kind::uniform_fan_in: {
        const double bound = init.scale / std::sqrt(static_cast<double>(init.fan_in));
        for (auto& x : v) x = rng.uniform(-bound, bound);
        break;
      }
    }
    Tensor t = Tensor::from(std::move(shape), std::move(v), true);
    params_.emplace(name, Entry{t, group});
    return t;
  }

  BatchNormState* batch_norm_state(const std::string& name, std::size_t channels) {
    auto [it, inserted] = bn_states_.try_emplace(name, nullptr);
    if (!inserted) throw ConfigError("duplicate batch-norm state '" + name + "'");
    it->second = std::make_unique<BatchNormState>(channels);
    return it->second.get();
  }

  const std::map<std::string, Entry>& params() const { return params_; }
  const std::map<std::string, std::unique_ptr<BatchNormState>>& batch_norm_states() const { return bn_states_; }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second.tensor;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : params_) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, e] : params_) e.tensor.zero_grad();
  }

  std::vector<NamedTensor> named() const {
    std::vector<NamedTensor> out;
    for (const auto& [name, e] : params_) out.push_back({name, e.tensor});
    return out;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Entry> params_;
  std::map<std::string, std::unique_ptr<BatchNormState>> bn_states_;
};

// ------------------------------------------------------------------ modules

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, ParamGroup group,
         bool bias = true)
      : weight_(store.create(name + ".weight", {out, in}, Init::fan_in_uniform(in), group)) {
    if (bias) bias_ = store.create(name + ".bias", {out}, Init::zeros(), group);
  }
  Tensor operator()(const Tensor& x) const { return linear(x, weight_, bias_); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_, bias_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, std::size_t padding, ParamGroup group, std::size_t groups = 1, bool bias = true)
      : opt_{stride, padding, groups} {
    if (groups == 0 || in % groups != 0 || out % groups != 0) {
      throw ConfigError(name + ": channels " + std::to_string(in) + " -> " + std::to_string(out) +
                        " not divisible by groups " + std::to_string(groups));
    }
    const std::size_t fan_in = kernel * kernel * (in / groups);
    weight_ = store.create(name + ".weight", {out, kernel, kernel, in / groups}, Init::fan_in_uniform(fan_in), group);
    if (bias) bias_ = store.create(name + ".bias", {out}, Init::zeros(), group);
  }
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight_, bias_, opt_); }
  const Conv2dOptions& options() const { return opt_; }

 private:
  Tensor weight_, bias_;
  Conv2dOptions opt_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, ParamGroup group)
      : gamma_(store.create(name + ".gamma", {dim}, Init::ones(), group)),
        beta_(store.create(name + ".beta", {dim}, Init::zeros(), group)) {}
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma_, beta_, 1e-5); }

 private:
  Tensor gamma_, beta_;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore& store, const std::string& name, std::size_t channels, ParamGroup group)
      : gamma_(store.create(name + ".gamma", {channels}, Init::ones(), group)),
        beta_(store.create(name + ".beta", {channels}, Init::zeros(), group)),
        state_(store.batch_norm_state(name, channels)) {}
  Tensor operator()(const Tensor& x, const Mode& mode) const {
    BatchNormOptions opt;
    opt.training = mode.training;
    opt.update_stats = mode.update_stats;
    return batch_norm(x, gamma_, beta_, state_, opt);
  }

 private:
  Tensor gamma_, beta_;
  BatchNormState* state_ = nullptr;
};

/// Two-layer GELU MLP with hidden width dim * ratio.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, std::size_t dim, std::size_t ratio, ParamGroup group)
      : fc1_(store, name + ".fc1", dim, dim * ratio, group), fc2_(store, name + ".fc2", dim * ratio, dim, group) {}
  Tensor operator()(const Tensor& x) const { return fc2_(gelu(fc1_(x))); }

 private:
  Linear fc1_, fc2_;
};

struct AttentionResult {
  Tensor out;      // (N, Lq, C)
  Tensor weights;  // (N, heads, Lq, Lk)
};

/// Scaled dot-product attention over `heads` heads of width C / heads, with
/// scale 1/sqrt(C / heads). `key_mask` (N * Lk bytes) hides keys when given.
inline AttentionResult multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                            const std::vector<std::uint8_t>* key_mask = nullptr) {
  const std::size_t N = q.dim(0), Lq = q.dim(1), C = q.dim(2), Lk = k.dim(1);
  if (heads == 0 || C % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(C) + " not divisible by heads " + std::to_string(heads));
  }
  if (k.dim(2) != C || v.dim(2) != C || v.dim(1) != Lk || k.dim(0) != N || v.dim(0) != N) {
    throw ConfigError("attention: q/k/v shapes " + to_string(q.shape()) + " " + to_string(k.shape()) + " " +
                      to_string(v.shape()) + " disagree");
  }
  const std::size_t dh = C / heads;
  auto split = [&](const Tensor& t, std::size_t L) { return permute(reshape(t, {N, L, heads, dh}), {0, 2, 1, 3}); };
  const Tensor qh = split(q, Lq), kt = permute(reshape(k, {N, Lk, heads, dh}), {0, 2, 3, 1}), vh = split(v, Lk);
  const Tensor scores = scale(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor w = key_mask ? masked_softmax(scores, *key_mask) : softmax(scores, -1);
  const Tensor out = reshape(permute(matmul(w, vh), {0, 2, 1, 3}), {N, Lq, C});
  return {out, w};
}

}  // namespace satrack
