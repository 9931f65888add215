// satrack command-line interface.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "satrack/satrack.hpp"

namespace fs = std::filesystem;
using namespace satrack;

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

Vocabulary default_vocab(const std::string& path) {
  if (!path.empty()) return Vocabulary::load(path);
  const fs::path bundled = fs::path(SATRACK_ASSET_DIR) / "vocab.txt";
  Vocabulary v = fs::exists(bundled) ? Vocabulary::load(bundled.string()) : Vocabulary{};
  for (const auto& w : lexicon_words()) v.add(w);
  return v;
}

TrainConfig config_or_default(const std::string& path) {
  return path.empty() ? TrainConfig::desk() : load_train_config(path);
}

CropConfig crop_of(const Checkpoint& ck) {
  return ck.meta.contains("train") ? ck.meta.at("train").get<TrainConfig>().crop : CropConfig{};
}

struct GenerateArgs {
  std::uint64_t seed = 0;
  std::size_t count = 10, first_id = 0, length = 32, size = 64;
  int distractors = -1;
  bool occluders = false;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  GeneratorSpec spec;
  spec.length = a.length;
  spec.width = spec.height = a.size;
  std::vector<Sequence> seqs;
  if (a.distractors < 0) {
    seqs = generate_benchmark(a.seed, a.count, a.first_id, spec);
  } else {
    spec.distractor_count = static_cast<std::size_t>(a.distractors);
    spec.occluders = a.occluders;
    for (std::size_t i = 0; i < a.count; ++i) seqs.push_back(generate_sequence(a.seed, a.first_id + i, spec));
  }
  for (const auto& s : seqs) write_sequence(s, a.out);
  std::cout << "wrote " << seqs.size() << " sequences to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out, vocab, resume;
  int epochs = -1;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = config_or_default(a.config);
  if (a.epochs >= 0) cfg.epochs = static_cast<std::size_t>(a.epochs);
  const auto data = load_dataset(a.data);
  if (data.empty()) throw ConfigError("no sequences under '" + a.data + "'");
  Vocabulary vocab = default_vocab(a.vocab);
  if (!a.resume.empty()) {
    const Checkpoint ck = Checkpoint::load(a.resume);
    vocab = Vocabulary::from_words(ck.meta.at("vocab").get<std::vector<std::string>>());
  }
  TrackerModel model(cfg.model, vocab);
  log_line("model: " + std::to_string(model.params().parameter_count()) + " parameters, " + std::to_string(data.size()) +
           " training sequences");
  FitOptions fo;
  fo.out_dir = a.out;
  fo.resume_from = a.resume;
  fo.log = log_line;
  fit(model, cfg, data, fo);
  std::cout << "final checkpoint: " << (fs::path(a.out) / "last").string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, report, boxes_dir;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = Checkpoint::load(a.ckpt);
  const auto model = load_model(ck);
  const auto data = load_dataset(a.data);
  std::vector<std::vector<BBox>> preds;
  const EvalReport r = evaluate_ope(*model, data, crop_of(ck), &preds);
  if (!a.report.empty()) write_report_csv(r, a.report);
  if (!a.boxes_dir.empty()) {
    fs::create_directories(a.boxes_dir);
    for (std::size_t i = 0; i < data.size(); ++i) write_boxes(preds[i], fs::path(a.boxes_dir) / (data[i].name + ".txt"));
  }
  std::cout << std::fixed << std::setprecision(4) << "success " << r.success_auc << "  precision " << r.precision
            << "  norm_precision " << r.norm_precision_auc << "  (" << data.size() << " sequences)\n";
  return 0;
}

struct TrackArgs {
  std::string ckpt, sequence, out;
};

int cmd_track(const TrackArgs& a) {
  const Checkpoint ck = Checkpoint::load(a.ckpt);
  const auto model = load_model(ck);
  const Sequence seq = load_sequence(a.sequence);
  const auto boxes = track_sequence(*model, seq, crop_of(ck));
  write_boxes(boxes, a.out);
  std::cout << "tracked " << boxes.size() << " frames -> " << a.out << "\n";
  return 0;
}

struct GradcheckArgs {
  std::string config, vocab;
  bool full_model = false;
  std::size_t entries = 3;
  std::uint64_t seed = 11;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  bool ok = true;
  if (!a.full_model) {
    for (const auto& r : op_gradcheck_suite(a.seed)) {
      const double e = r.report.max_rel_error();
      std::cout << std::left << std::setw(20) << r.op << std::scientific << std::setprecision(3) << e
                << (e < 1e-6 ? "  ok" : "  FAIL") << "\n";
      ok &= e < 1e-6;
    }
  } else {
    const TrainConfig cfg = config_or_default(a.config);
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = model_gradcheck(cfg.model, default_vocab(a.vocab), 2, a.entries, a.seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::size_t n = 0;
    for (const auto& e : rep.entries) n += e.checked;
    const auto& w = rep.worst();
    std::cout << "full model: " << rep.entries.size() << " tensors, " << n << " coordinates, max rel error "
              << std::scientific << std::setprecision(3) << rep.max_rel_error() << " (" << w.name << "[" << w.worst_index
              << "] analytic " << w.analytic << " numeric " << w.numeric << "), " << std::fixed << std::setprecision(1)
              << secs << " s\n";
    ok = rep.max_rel_error() < 1e-4;
  }
  if (!ok) {
    std::cerr << "gradient check failed\n";
    return 2;
  }
  return 0;
}

struct AblateArgs {
  std::string variants = "baseline,w_tem,wo_dm,full";
  std::string config, data, eval_data, out, work_dir, vocab;
};

int cmd_ablate(const AblateArgs& a) {
  std::vector<std::string> names;
  std::stringstream ss(a.variants);
  for (std::string n; std::getline(ss, n, ',');)
    if (!n.empty()) names.push_back(n);
  for (const auto& n : names) find_variant(n);
  fs::path train_dir = a.data, eval_dir = a.eval_data;
  if (eval_dir.empty()) {
    if (!fs::is_directory(train_dir / "train") || !fs::is_directory(train_dir / "eval")) {
      throw ConfigError("ablate needs --eval-data, or --data containing train/ and eval/");
    }
    eval_dir = train_dir / "eval";
    train_dir = train_dir / "train";
  }
  const TrainConfig cfg = config_or_default(a.config);
  const auto train = load_dataset(train_dir), eval = load_dataset(eval_dir);
  AblationOptions opt;
  opt.work_dir = a.work_dir;
  opt.log = log_line;
  const auto rows = run_ablation(names, cfg, default_vocab(a.vocab), train, eval, opt);
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw ConfigError("cannot write '" + a.out + "'");
    write_ablation_csv(rows, f);
  }
  write_ablation_csv(rows, std::cout);
  return 0;
}

struct InspectArgs {
  std::string ckpt, sample, dump_dir;
  std::size_t template_frame = 0, search_frame = 1;
};

int cmd_inspect(const InspectArgs& a) {
  const Checkpoint ck = Checkpoint::load(a.ckpt);
  const auto model = load_model(ck);
  const Sequence seq = load_sequence(a.sample);
  const auto& bc = model->config().backbone;
  const TrackSample s = make_sample(seq, a.template_frame, a.search_frame, crop_of(ck),
                                    {bc.template_size, bc.search_size, bc.max_text_len}, model->vocab(), false, nullptr);
  const auto files = dump_diagnostics(*model, s, a.dump_dir);
  std::cout << "wrote " << files.size() << " files to " << a.dump_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"satrack: vision-language tracker with semantic-aware fusion"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Render synthetic distractor sequences in dataset layout");
  g->add_option("--seed", gen.seed, "Generator seed")->default_val(0);
  g->add_option("--count", gen.count, "Number of sequences")->default_val(10);
  g->add_option("--first-id", gen.first_id, "Id of the first sequence")->default_val(0);
  g->add_option("--length", gen.length, "Frames per sequence")->default_val(32);
  g->add_option("--size", gen.size, "Frame width and height")->default_val(64);
  g->add_option("--distractors", gen.distractors, "Distractors per sequence (-1: benchmark mix of 1-3)")->default_val(-1);
  g->add_flag("--occluders", gen.occluders, "Add occluding bars (with a fixed distractor count)");
  g->add_option("--out", gen.out, "Output root")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a tracker");
  t->add_option("--config", tr.config, "Training config JSON (default: desk preset)");
  t->add_option("--data", tr.data, "Dataset root")->required();
  t->add_option("--out", tr.out, "Checkpoint directory")->required();
  t->add_option("--vocab", tr.vocab, "Vocabulary file (one token per line)");
  t->add_option("--resume", tr.resume, "Checkpoint to resume from");
  t->add_option("--epochs", tr.epochs, "Override the epoch count");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "One-pass evaluation");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint directory")->required();
  e->add_option("--data", ev.data, "Dataset root")->required();
  e->add_option("--report", ev.report, "Per-sequence CSV report");
  e->add_option("--boxes-dir", ev.boxes_dir, "Write predicted boxes per sequence");

  TrackArgs tk;
  auto* k = app.add_subcommand("track", "Track one sequence");
  k->add_option("--ckpt", tk.ckpt, "Checkpoint directory")->required();
  k->add_option("--sequence", tk.sequence, "Sequence directory")->required();
  k->add_option("--out", tk.out, "Output boxes file")->required();

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c->add_option("--config", gc.config, "Training config JSON (model section used)");
  c->add_flag("--full-model", gc.full_model, "Check the whole model instead of the operator suite");
  c->add_option("--entries", gc.entries, "Coordinates probed per parameter tensor (0: all)")->default_val(3);
  c->add_option("--seed", gc.seed, "Seed for inputs and coordinate choice")->default_val(11);
  c->add_option("--vocab", gc.vocab, "Vocabulary file");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train and evaluate model variants");
  b->add_option("--variants", ab.variants, "Comma-separated variant names")->default_val(ab.variants);
  b->add_option("--config", ab.config, "Base training config JSON");
  b->add_option("--data", ab.data, "Training dataset root (or a root holding train/ and eval/)")->required();
  b->add_option("--eval-data", ab.eval_data, "Evaluation dataset root");
  b->add_option("--out", ab.out, "CSV output");
  b->add_option("--work-dir", ab.work_dir, "Per-variant checkpoint directory");
  b->add_option("--vocab", ab.vocab, "Vocabulary file");

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "Dump attention maps, SAM gates and dense scores");
  i->add_option("--ckpt", in.ckpt, "Checkpoint directory")->required();
  i->add_option("--sample", in.sample, "Sequence directory")->required();
  i->add_option("--template-frame", in.template_frame, "Template frame index")->default_val(0);
  i->add_option("--search-frame", in.search_frame, "Search frame index")->default_val(1);
  i->add_option("--dump-dir", in.dump_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 1;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*k) return cmd_track(tk);
    if (*c) return cmd_gradcheck(gc);
    if (*b) return cmd_ablate(ab);
    if (*i) return cmd_inspect(in);
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "runtime failure: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
