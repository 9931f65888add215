#pragma once
// Training: AdamW with per-group learning rates, gradient clipping, the
// epoch loop with step decay, and checkpoint capture/restore.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "satrack/checkpoint.hpp"
#include "satrack/data.hpp"
#include "satrack/model.hpp"

namespace satrack {

struct TrainConfig {
  ModelConfig model = ModelConfig::desk();
  CropConfig crop;
  std::size_t epochs = 20;
  std::size_t lr_decay_epoch = 16;
  std::size_t batch_size = 8;
  /// Template/search pairs drawn from every sequence per epoch.
  std::size_t samples_per_sequence = 4;
  double lr_backbone = 1e-3;
  double lr_head = 1e-3;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  std::uint64_t seed = 1;

  static TrainConfig desk() { return {}; }
  static TrainConfig full() {
    TrainConfig c;
    c.model = ModelConfig::full();
    c.epochs = 200;
    c.lr_decay_epoch = 160;
    c.batch_size = 16;
    c.lr_backbone = 1e-5;
    c.lr_head = 1e-4;
    return c;
  }

  void validate() const {
    model.backbone.validate();
    model.loss.validate();
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (samples_per_sequence == 0) throw ConfigError("samples_per_sequence must be positive");
    if (!(lr_backbone >= 0 && lr_head >= 0 && weight_decay >= 0)) throw ConfigError("learning rates and weight decay must be >= 0");
    if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
    if (crop.template_factor < 1 || crop.search_factor < 1) throw ConfigError("context factors must be >= 1");
  }

  SampleSizes sizes() const { return {model.backbone.template_size, model.backbone.search_size, model.backbone.max_text_len}; }
};

inline void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"model", c.model},
           {"crop", c.crop},
           {"epochs", c.epochs},
           {"lr_decay_epoch", c.lr_decay_epoch},
           {"batch_size", c.batch_size},
           {"samples_per_sequence", c.samples_per_sequence},
           {"lr_backbone", c.lr_backbone},
           {"lr_head", c.lr_head},
           {"weight_decay", c.weight_decay},
           {"grad_clip", c.grad_clip},
           {"seed", c.seed}};
}

inline void from_json(const Json& j, TrainConfig& c) {
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "desk") c = TrainConfig::desk();
    else if (p == "full") c = TrainConfig::full();
    else throw ConfigError("unknown preset '" + p + "' (expected desk or full)");
  }
  if (j.contains("model")) {
    ModelConfig m = c.model;
    from_json(j.at("model"), m);
    c.model = m;
  }
  if (j.contains("crop")) {
    CropConfig k = c.crop;
    from_json(j.at("crop"), k);
    c.crop = k;
  }
  c.epochs = j.value("epochs", c.epochs);
  c.lr_decay_epoch = j.value("lr_decay_epoch", c.lr_decay_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.samples_per_sequence = j.value("samples_per_sequence", c.samples_per_sequence);
  c.lr_backbone = j.value("lr_backbone", c.lr_backbone);
  c.lr_head = j.value("lr_head", c.lr_head);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  try {
    return j.get<TrainConfig>();
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
}

// ------------------------------------------------------------------ batches

struct Batch {
  ModelInput input;
  std::vector<BBox> gt;
  std::vector<std::string> ids;
};

inline Batch collate(const std::vector<TrackSample>& samples, const SampleSizes& sizes,
                     std::vector<std::string> ids = {}) {
  if (samples.empty()) throw ConfigError("cannot collate an empty batch");
  const std::size_t N = samples.size(), T = sizes.template_size, S = sizes.search_size;
  std::vector<double> tv, sv;
  tv.reserve(N * T * T * 3);
  sv.reserve(N * S * S * 3);
  std::vector<TokenSequence> tokens;
  Batch b;
  for (const auto& s : samples) {
    tv.insert(tv.end(), s.tmpl.begin(), s.tmpl.end());
    sv.insert(sv.end(), s.search.begin(), s.search.end());
    tokens.push_back(s.tokens);
    b.gt.push_back(s.gt);
  }
  b.input.tmpl = Tensor::from({N, T, T, 3}, std::move(tv));
  b.input.search = Tensor::from({N, S, S, 3}, std::move(sv));
  b.input.text = TextBatch::from(tokens);
  b.ids = std::move(ids);
  return b;
}

// ---------------------------------------------------------------- optimizer

/// Adam with decoupled weight decay. Decay applies to parameters of rank >= 2
/// (weights, kernels, embedding tables); biases and norm affines are not decayed.
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  struct Moments {
    std::vector<double> m, v;
  };

  void step(ParamStore& store, double lr_backbone, double lr_head, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (const auto& [name, entry] : store.params()) {
      Tensor p = entry.tensor;
      if (!p.has_grad()) continue;
      const double lr = entry.group == ParamGroup::head ? lr_head : lr_backbone;
      const std::vector<double> g = p.grad();
      auto& mom = moments_[name];
      if (mom.m.empty()) mom.m.assign(g.size(), 0.0), mom.v.assign(g.size(), 0.0);
      auto w = p.mutable_data();
      const double decay = p.rank() >= 2 ? lr * weight_decay : 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        mom.m[i] = beta1 * mom.m[i] + (1 - beta1) * g[i];
        mom.v[i] = beta2 * mom.v[i] + (1 - beta2) * g[i] * g[i];
        w[i] -= decay * w[i];
        w[i] -= lr * (mom.m[i] / bc1) / (std::sqrt(mom.v[i] / bc2) + eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  void save(Checkpoint& ck) const {
    ck.meta["optimizer"] = {{"type", "adamw"}, {"step", t_}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}};
    for (const auto& [name, mom] : moments_) {
      ck.put("adam_m/" + name, {mom.m.size()}, mom.m);
      ck.put("adam_v/" + name, {mom.v.size()}, mom.v);
    }
  }

  void load(const Checkpoint& ck) {
    moments_.clear();
    t_ = 0;
    if (!ck.meta.contains("optimizer")) return;
    t_ = ck.meta.at("optimizer").at("step").get<std::uint64_t>();
    for (const auto& [key, t] : ck.tensors) {
      if (key.rfind("adam_m/", 0) == 0) moments_[key.substr(7)].m = t.values;
      if (key.rfind("adam_v/", 0) == 0) moments_[key.substr(7)].v = t.values;
    }
  }

 private:
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, e] : store.params())
    if (e.tensor.has_grad())
      for (double g : e.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [_, e] : store.params()) {
      if (!e.tensor.has_grad()) continue;
      for (double& g : e.tensor.node()->grad_ref()) g *= s;
    }
  }
  return norm;
}

// ----------------------------------------------------------- model <-> file

inline void store_model(const TrackerModel& model, Checkpoint& ck) {
  for (const auto& [name, e] : model.params().params()) ck.put("param/" + name, e.tensor.shape(), e.tensor.values());
  for (const auto& [name, st] : model.params().batch_norm_states()) {
    ck.put("bn_mean/" + name, {st->running_mean.size()}, st->running_mean);
    ck.put("bn_var/" + name, {st->running_var.size()}, st->running_var);
  }
  ck.meta["model"] = model.config();
  ck.meta["vocab"] = model.vocab().words();
}

inline void restore_model(TrackerModel& model, const Checkpoint& ck) {
  for (const auto& [name, e] : model.params().params()) {
    const auto& st = ck.get("param/" + name);
    if (st.shape != e.tensor.shape()) {
      throw ConfigError("checkpoint shape " + to_string(st.shape) + " for '" + name + "' does not match model " +
                        to_string(e.tensor.shape()));
    }
    Tensor t = e.tensor;
    std::copy(st.values.begin(), st.values.end(), t.mutable_data().begin());
  }
  for (const auto& [name, bn] : model.params().batch_norm_states()) {
    bn->running_mean = ck.get("bn_mean/" + name).values;
    bn->running_var = ck.get("bn_var/" + name).values;
  }
}

/// Rebuilds a model (config + vocabulary + weights) from a checkpoint.
inline std::unique_ptr<TrackerModel> load_model(const Checkpoint& ck) {
  if (!ck.meta.contains("model") || !ck.meta.contains("vocab")) throw ConfigError("checkpoint lacks model config or vocabulary");
  auto model = std::make_unique<TrackerModel>(ck.meta.at("model").get<ModelConfig>(),
                                              Vocabulary::from_words(ck.meta.at("vocab").get<std::vector<std::string>>()));
  restore_model(*model, ck);
  return model;
}

inline std::unique_ptr<TrackerModel> load_model(const std::filesystem::path& dir) { return load_model(Checkpoint::load(dir)); }

// ------------------------------------------------------------------ trainer

struct StepLosses {
  double giou = 0, l1 = 0, dm = 0, total = 0;
  double grad_norm = 0;
};

struct PairIndex {
  std::size_t sequence, template_frame, search_frame;
};

class Trainer {
 public:
  Trainer(TrackerModel& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) { cfg_.validate(); }

  const TrainConfig& config() const { return cfg_; }
  std::size_t epoch() const { return epoch_; }
  const AdamW& optimizer() const { return opt_; }

  /// Learning-rate multiplier for a 0-based epoch: 1, then 0.1 from lr_decay_epoch on.
  double lr_scale(std::size_t epoch) const { return epoch >= cfg_.lr_decay_epoch ? 0.1 : 1.0; }

  StepLosses train_step(const Batch& batch, double lr_backbone, double lr_head) {
    ParamStore& store = model_.params();
    store.zero_grad();
    const LossTerms L = model_.loss(batch.input, batch.gt, Mode{true, true});
    StepLosses out;
    out.total = L.total.item();
    out.giou = L.giou.item();
    out.l1 = L.l1.item();
    out.dm = L.dm.defined() ? L.dm.item() : 0.0;
    if (!std::isfinite(out.total)) {
      std::string ids;
      for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ", ") + id;
      throw NumericError("non-finite training loss (giou " + std::to_string(out.giou) + ", l1 " + std::to_string(out.l1) +
                         ", dm " + std::to_string(out.dm) + ") on batch [" + ids + "]");
    }
    backward(L.total);
    out.grad_norm = clip_grad_norm(store, cfg_.grad_clip);
    opt_.step(store, lr_backbone, lr_head, cfg_.weight_decay);
    return out;
  }

  StepLosses train_step(const Batch& batch) { return train_step(batch, cfg_.lr_backbone, cfg_.lr_head); }

  /// The shuffled (sequence, template, search) pairs of one epoch.
  std::vector<PairIndex> epoch_pairs(const std::vector<Sequence>& data, std::size_t epoch) const {
    Rng rng(Rng::derive(cfg_.seed, "epoch/" + std::to_string(epoch)));
    std::vector<PairIndex> pairs;
    for (std::size_t s = 0; s < data.size(); ++s) {
      const std::size_t n = data[s].frames.size();
      if (n == 0) continue;
      for (std::size_t k = 0; k < cfg_.samples_per_sequence; ++k) {
        const std::size_t t = rng.index(n);
        const std::size_t lo = t > cfg_.crop.max_gap ? t - cfg_.crop.max_gap : 0;
        const std::size_t hi = std::min(n - 1, t + cfg_.crop.max_gap);
        pairs.push_back({s, t, lo + rng.index(hi - lo + 1)});
      }
    }
    rng.shuffle(pairs);
    return pairs;
  }

  /// One pass over the data; calls `on_step(step, losses)` after every update.
  void run_epoch(const std::vector<Sequence>& data, const std::function<void(std::size_t, const StepLosses&)>& on_step) {
    const auto pairs = epoch_pairs(data, epoch_);
    const double s = lr_scale(epoch_);
    const SampleSizes sizes = cfg_.sizes();
    const std::uint64_t jitter_seed = Rng::derive(cfg_.seed, "jitter/" + std::to_string(epoch_));
    std::size_t step = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(pairs.size(), start + cfg_.batch_size);
      std::vector<TrackSample> samples(end - start);
      std::vector<std::string> ids(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& p = pairs[i];
        Rng jitter(Rng::derive(jitter_seed, std::to_string(i)));
        samples[i - start] = make_sample(data[p.sequence], p.template_frame, p.search_frame, cfg_.crop, sizes,
                                         model_.vocab(), true, &jitter);
        ids[i - start] = data[p.sequence].name + ":" + std::to_string(p.template_frame) + "->" + std::to_string(p.search_frame);
      }
      const auto losses = train_step(collate(samples, sizes, std::move(ids)), cfg_.lr_backbone * s, cfg_.lr_head * s);
      if (on_step) on_step(step, losses);
      ++step;
    }
    ++epoch_;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    store_model(model_, ck);
    opt_.save(ck);
    ck.meta["train"] = cfg_;
    ck.meta["epoch"] = epoch_;
    ck.meta["rng"] = {{"scheme", "derived-per-epoch"}, {"seed", cfg_.seed}};
    return ck;
  }

  void restore(const Checkpoint& ck) {
    if (!ck.meta.contains("epoch") || !ck.meta.contains("train")) throw ConfigError("checkpoint has no training state to resume");
    const TrainConfig saved = ck.meta.at("train").get<TrainConfig>();
    if (Json(saved.model) != Json(cfg_.model)) throw ConfigError("checkpoint model config differs from the training config");
    if (Json(saved) != Json(cfg_)) {
      // Only the epoch budget may change between runs.
      TrainConfig a = saved, b = cfg_;
      a.epochs = b.epochs = 0;
      if (Json(a) != Json(b)) throw ConfigError("checkpoint training config differs from the resumed run");
    }
    if (ck.meta.at("vocab").get<std::vector<std::string>>() != model_.vocab().words()) {
      throw ConfigError("checkpoint vocabulary differs from the model vocabulary");
    }
    restore_model(model_, ck);
    opt_.load(ck);
    epoch_ = ck.meta.at("epoch").get<std::size_t>();
  }

 private:
  TrackerModel& model_;
  TrainConfig cfg_;
  AdamW opt_;
  std::size_t epoch_ = 0;
};

struct FitOptions {
  /// Checkpoints go to out_dir/epoch_NNNN and out_dir/last; losses to out_dir/loss.csv.
  std::filesystem::path out_dir;
  /// Resume from this checkpoint directory when set.
  std::filesystem::path resume_from;
  std::function<void(const std::string&)> log;
};

/// Trains up to cfg.epochs, writing a checkpoint after every epoch (and one at
/// the start when no epoch has run). Returns the final checkpoint.
inline Checkpoint fit(TrackerModel& model, const TrainConfig& cfg, const std::vector<Sequence>& data,
                      const FitOptions& opt = {}) {
  if (data.empty()) throw ConfigError("fit: empty training set");
  Trainer trainer(model, cfg);
  if (!opt.resume_from.empty()) trainer.restore(Checkpoint::load(opt.resume_from));
  std::ofstream csv;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    const auto path = opt.out_dir / "loss.csv";
    const bool fresh = !std::filesystem::exists(path) || opt.resume_from.empty();
    csv.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) csv << "epoch,step,giou,l1,dm,total\n";
    csv << std::setprecision(17);
  }
  auto save = [&](const Checkpoint& ck) {
    if (opt.out_dir.empty()) return;
    std::ostringstream name;
    name << "epoch_" << std::setw(4) << std::setfill('0') << trainer.epoch();
    ck.save(opt.out_dir / name.str());
    ck.save(opt.out_dir / "last");
  };
  if (trainer.epoch() == 0) save(trainer.checkpoint());
  while (trainer.epoch() < cfg.epochs) {
    const std::size_t e = trainer.epoch();
    double sum = 0;
    std::size_t n = 0;
    trainer.run_epoch(data, [&](std::size_t step, const StepLosses& l) {
      if (csv.is_open()) csv << e << ',' << step << ',' << l.giou << ',' << l.l1 << ',' << l.dm << ',' << l.total << '\n';
      sum += l.total;
      ++n;
    });
    if (opt.log) {
      std::ostringstream os;
      os << "epoch " << e + 1 << "/" << cfg.epochs << "  mean loss " << sum / static_cast<double>(std::max<std::size_t>(1, n));
      opt.log(os.str());
    }
    save(trainer.checkpoint());
  }
  return trainer.checkpoint();
}

}  // namespace satrack
