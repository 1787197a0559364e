#include "scrl/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "scrl/audio.hpp"
#include "scrl/fileio.hpp"
#include "scrl/sweep.hpp"

namespace fs = std::filesystem;

namespace scrl::cli {

namespace {

// Carries CLI11's help text out of parse_args.
class HelpRequested : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename F>
auto usage_on_config_error(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& s : split_list(text)) {
    out.push_back(usage_on_config_error([&] { return parse_double(s, what); }));
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

// Config-bearing flags shared by train and sweep.
struct ConfigFlags {
  std::optional<std::string> file;
  KeyValues overrides;
  std::vector<std::string> sets;
  std::vector<std::string> disabled;

  void attach(CLI::App* app, bool with_eta) {
    app->add_option("--config", file, "key=value config file");
    struct Named {
      const char* flag;
      const char* key;
    };
    static constexpr Named kNamed[] = {
        {"--lr", "lr"},
        {"--epochs", "epochs"},
        {"--batch-size", "batch_size"},
        {"--weight-decay", "weight_decay"},
        {"--momentum", "momentum"},
        {"--rms-decay", "rms_decay"},
        {"--seed", "seed"},
        {"--xi", "xi"},
        {"--zeta", "zeta"},
        {"--eta1", "eta1"},
        {"--eta2", "eta2"},
        {"--epsilon", "epsilon"},
        {"--dilation", "dilation_override"},
        {"--hidden-dim", "hidden_dim"},
        {"--embed-dim", "embed_dim"},
        {"--mfcc-frames", "mfcc_frames"},
        {"--image-source", "image_source"},
        {"--backbone-seed", "backbone_seed"},
    };
    for (const auto& n : kNamed) {
      if (!with_eta && (std::string_view(n.key) == "eta1" || std::string_view(n.key) == "eta2")) {
        continue;
      }
      const std::string key = n.key;
      app->add_option_function<std::string>(
          n.flag, [this, key](const std::string& v) { overrides.emplace_back(key, v); },
          "config key " + key);
    }
    app->add_option("--set", sets, "extra key=value config entries")->allow_extra_args(false);
    app->add_option("--disable", disabled, "loss terms to drop: pair,intra,inter,class")
        ->delimiter(',');
  }

  bool any() const { return file || !overrides.empty() || !sets.empty() || !disabled.empty(); }

  // defaults < SCRL_SEED < file < flags
  TrainConfig build() const {
    return usage_on_config_error([&] {
      TrainConfig cfg;
      if (const char* env = std::getenv("SCRL_SEED"); env && *env) {
        cfg.seed = parse_u64(env, "SCRL_SEED");
      }
      if (file) {
        try {
          cfg = load_config_file(*file, cfg);
        } catch (const IoError& e) {
          throw UsageError(std::string("--config: ") + e.what());
        }
      }
      apply_config(cfg, overrides);
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
        set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
      }
      for (const auto& d : disabled) {
        if (d != "pair" && d != "intra" && d != "inter" && d != "class") {
          throw UsageError("--disable: unknown term '" + d + "'");
        }
        set_config_value(cfg, "enable_" + d, "false");
      }
      cfg.validate();
      return cfg;
    });
  }
};

// Paths written by the running command; removed again unless committed.
class OutputGuard {
 public:
  OutputGuard() = default;
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    for (auto it = paths_.rbegin(); it != paths_.rend(); ++it) {
      std::error_code ec;
      fs::remove_all(*it, ec);
    }
  }

  void add(const fs::path& p) { paths_.push_back(p); }
  // Registers p only when it does not exist yet.
  void add_if_new(const fs::path& p) {
    if (!fs::exists(p)) add(p);
  }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

void write_text(OutputGuard& guard, const fs::path& path, const std::string& text) {
  guard.add(path);
  write_text_atomic(path, text);
}

void ensure_dir(OutputGuard& guard, const fs::path& dir) {
  if (dir.empty()) return;
  guard.add_if_new(dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string history_csv(const std::vector<EpochRecord>& h) {
  std::ostringstream o;
  o << "epoch,loss,pair,intra,inter,cls\n";
  for (const auto& r : h) {
    o << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.pair) << ','
      << format_double(r.intra) << ',' << format_double(r.inter) << ',' << format_double(r.cls)
      << '\n';
  }
  return o.str();
}

void log_epoch(std::ostream& err, const EpochRecord& r, std::size_t total) {
  err << "epoch " << r.epoch << '/' << total << " loss=" << format_double(r.loss)
      << " pair=" << format_double(r.pair) << " intra=" << format_double(r.intra)
      << " inter=" << format_double(r.inter) << " cls=" << format_double(r.cls) << '\n';
}

// ------------------------------------------------------------ commands

void run_synth(const SynthCommand& c, std::ostream& out, OutputGuard& guard) {
  guard.add_if_new(c.out);
  for (const char* leaf : {"images", "voices", "manifest.tsv", "train.tsv", "test.tsv"}) {
    guard.add_if_new(c.out / leaf);
  }
  const Manifest m = synth_dataset(c.spec, c.out);
  if (c.test_fraction) {
    const ManifestSplit split = stratified_split(m, *c.test_fraction);
    write_manifest(split.train, c.out / "train.tsv");
    write_manifest(split.test, c.out / "test.tsv");
  }
  out << (c.out / "manifest.tsv").string() << '\n';
}

void run_train(const TrainCommand& c, std::ostream& err, OutputGuard& guard) {
  const Manifest m = load_manifest(c.manifest);
  TrainOptions opts;
  opts.stop_after_epoch = c.stop_after_epoch;
  Checkpoint ck;
  if (c.resume) {
    ck = load_checkpoint(*c.resume);
    if (c.resume_epochs) ck.config.epochs = *c.resume_epochs;
    ck.config.validate();
  } else {
    ck = initialize(m, c.config);
  }
  const std::size_t total = ck.config.epochs;
  opts.on_epoch = [&](const EpochRecord& r) { log_epoch(err, r, total); };
  train_epochs(ck, m, opts);
  if (ck.converged) err << "converged after epoch " << ck.epoch << '\n';
  guard.add(c.out);
  save_checkpoint(ck, c.out);
  if (c.history) write_text(guard, *c.history, history_csv(ck.history));
}

void write_index(OutputGuard& guard, const fs::path& path, const EmbeddingCorpus& corpus) {
  std::ostringstream o;
  for (std::size_t i = 0; i < corpus.size(); ++i) o << corpus.ids[i] << '\t' << corpus.labels[i] << '\n';
  write_text(guard, path, o.str());
}

EmbeddingCorpus read_embeddings(const fs::path& dir) {
  EmbeddingCorpus c;
  const auto bytes = read_file_bytes(dir / "index.tsv");
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError((dir / "index.tsv").string() + " line " + std::to_string(lineno) +
                        ": expected id<TAB>label");
    }
    c.ids.push_back(line.substr(0, tab));
    try {
      c.labels.push_back(parse_u64(line.substr(tab + 1), "label"));
    } catch (const ConfigError& e) {
      throw FormatError((dir / "index.tsv").string() + " line " + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  c.image_reps = read_tensor<double>(dir / "image.scrlt");
  c.voice_reps = read_tensor<double>(dir / "voice.scrlt");
  c.validate();
  return c;
}

void run_embed(const EmbedCommand& c, OutputGuard& guard) {
  const Checkpoint ck = load_checkpoint(c.ckpt);
  const Manifest m = load_manifest(c.manifest);
  const EmbeddingCorpus corpus = embed_corpus(m, ck);
  ensure_dir(guard, c.out);
  guard.add(c.out / "image.scrlt");
  write_tensor(corpus.image_reps, c.out / "image.scrlt");
  guard.add(c.out / "voice.scrlt");
  write_tensor(corpus.voice_reps, c.out / "voice.scrlt");
  write_index(guard, c.out / "index.tsv", corpus);
}

void run_eval(const EvalCommand& c, std::ostream& out, std::ostream& err, OutputGuard& guard) {
  EmbeddingCorpus corpus;
  if (c.embeddings) {
    corpus = read_embeddings(*c.embeddings);
  } else {
    const Checkpoint ck = load_checkpoint(*c.ckpt);
    corpus = embed_corpus(load_manifest(*c.manifest), ck);
  }
  const auto warn = [&](const std::string& w) { err << "warning: " << w << '\n'; };
  std::vector<ProtocolMetrics> report;
  for (Protocol p : c.protocols) {
    // Cross-modal targets: every sample of the other modality.
    report.push_back(evaluate(corpus, p, c.ks, c.curve ? corpus.size() : 0, warn));
  }
  const std::string csv = metrics_csv(report);
  if (c.metrics) {
    write_text(guard, *c.metrics, csv);
  } else {
    out << csv;
  }
  if (c.curve) {
    for (const auto& m : report) {
      write_text(guard, curve_path(*c.curve, m.protocol, report.size() > 1), curve_csv(m));
    }
  }
  if (c.summary) write_text(guard, *c.summary, metrics_summary(report));
}

void run_mfcc(const MfccCommand& c, OutputGuard& guard) {
  MfccConfig cfg;
  cfg.target_frames = c.frames;
  const Tensor<double> v = voice_input_from_wav(c.wav, cfg);
  guard.add(c.out);
  write_tensor(v, c.out);
}

void run_sweep(const SweepCommand& c, std::ostream& err, OutputGuard& guard) {
  const Manifest train_set = load_manifest(c.train_manifest);
  const Manifest test_set = load_manifest(c.test_manifest);
  const TinyCnn<float> backbone = c.config.image_source == ImageSource::kTinyCnn
                                      ? make_backbone(train_set, c.config)
                                      : TinyCnn<float>{};
  const FeatureSet train = extract_features(train_set, backbone, c.config);
  const FeatureSet test = extract_features(test_set, backbone, c.config);
  const auto grid = sweep_grid(c.eta1, c.eta2);
  const auto rows = hyperparameter_sweep(train_set, train, test, c.config, grid, [&](const SweepRow& r) {
    err << "eta1=" << format_double(r.eta1) << " eta2=" << format_double(r.eta2)
        << " map_i2v=" << format_double(r.map_i2v) << " map_v2i=" << format_double(r.map_v2i)
        << '\n';
  });
  write_text(guard, c.out, sweep_csv(rows));
}

}  // namespace

fs::path curve_path(const fs::path& base, Protocol p, bool several) {
  if (!several) return base;
  fs::path out = base;
  out.replace_filename(base.stem().string() + "." + protocol_name(p) + base.extension().string());
  return out;
}

Command parse_args(const std::vector<std::string>& args) {
  CLI::App app{"Cross-modal image-voice representation learning and retrieval", "scrl"};
  app.require_subcommand(1, 1);
  bool deterministic = true;
  app.add_flag("--deterministic,!--no-deterministic", deterministic,
               "single-threaded numeric paths (default on)");

  // synth
  SynthCommand synth;
  std::optional<double> test_fraction;
  auto* s = app.add_subcommand("synth", "write a synthetic image-voice dataset");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--classes", synth.spec.classes, "class count");
  s->add_option("--per-class", synth.spec.per_class, "pairs per class");
  s->add_option("--seed", synth.spec.seed, "generator seed");
  s->add_option("--voice-seconds", synth.spec.voice_seconds, "voice duration");
  s->add_option("--test-fraction", test_fraction, "also write train.tsv and test.tsv");

  // train
  TrainCommand train;
  ConfigFlags train_flags;
  std::string resume, history;
  std::optional<std::size_t> stop_after;
  auto* t = app.add_subcommand("train", "train a model and write a checkpoint");
  t->add_option("--manifest", train.manifest, "training manifest")->required();
  t->add_option("--out", train.out, "checkpoint path")->required();
  t->add_option("--resume", resume, "continue from this checkpoint");
  t->add_option("--stop-after-epoch", stop_after, "write a resumable checkpoint after epoch N");
  t->add_option("--history", history, "per-epoch loss CSV");
  train_flags.attach(t, true);

  // embed
  EmbedCommand embed;
  auto* e = app.add_subcommand("embed", "write image and voice representations");
  e->add_option("--ckpt", embed.ckpt, "checkpoint")->required();
  e->add_option("--manifest", embed.manifest, "manifest to embed")->required();
  e->add_option("--out", embed.out, "output directory")->required();

  // eval
  EvalCommand eval;
  std::string ckpt, manifest, embeddings, protocol = "both", ks = "1,5,10", metrics, curve, summary;
  auto* v = app.add_subcommand("eval", "retrieval metrics for a checkpoint or embeddings");
  v->add_option("--ckpt", ckpt, "checkpoint");
  v->add_option("--manifest", manifest, "manifest to evaluate");
  v->add_option("--embeddings", embeddings, "embed output directory");
  v->add_option("--protocol", protocol, "i2v, v2i or both");
  v->add_option("--k", ks, "comma-separated P@k cutoffs");
  v->add_option("--metrics", metrics, "metrics CSV (default: stdout)");
  v->add_option("--curve", curve, "precision curve CSV");
  v->add_option("--summary", summary, "key=value summary");

  // mfcc
  MfccCommand mfcc;
  auto* f = app.add_subcommand("mfcc", "flattened MFCC voice input as a tensor file");
  f->add_option("--wav", mfcc.wav, "PCM16 WAV input")->required();
  f->add_option("--out", mfcc.out, "SCRLT output")->required();
  f->add_option("--frames", mfcc.frames, "canonical frame count");

  // sweep
  SweepCommand sweep;
  ConfigFlags sweep_flags;
  std::string eta1 = "1", eta2 = "0.1";
  auto* w = app.add_subcommand("sweep", "grid search over eta1 x eta2");
  w->add_option("--train", sweep.train_manifest, "training manifest")->required();
  w->add_option("--test", sweep.test_manifest, "evaluation manifest")->required();
  w->add_option("--out", sweep.out, "sweep CSV")->required();
  w->add_option("--eta1", eta1, "comma-separated eta1 values");
  w->add_option("--eta2", eta2, "comma-separated eta2 values");
  sweep_flags.attach(w, false);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested(app.help());
  } catch (const CLI::CallForAllHelp&) {
    throw HelpRequested(app.help("", CLI::AppFormatMode::All));
  } catch (const CLI::ParseError& err) {
    throw UsageError(err.what());
  }

  Command cmd;
  cmd.deterministic = deterministic;
  if (s->parsed()) {
    if (test_fraction && !(*test_fraction > 0.0 && *test_fraction < 1.0)) {
      throw UsageError("--test-fraction must lie in (0, 1)");
    }
    if (synth.spec.classes < 1 || synth.spec.per_class < 1) {
      throw UsageError("--classes and --per-class must be >= 1");
    }
    synth.test_fraction = test_fraction;
    cmd.action = synth;
  } else if (t->parsed()) {
    if (!resume.empty()) {
      train.resume = resume;
      const bool only_epochs = !train_flags.file && train_flags.sets.empty() &&
                               train_flags.disabled.empty() &&
                               std::all_of(train_flags.overrides.begin(), train_flags.overrides.end(),
                                           [](const auto& kv) { return kv.first == "epochs"; });
      if (!only_epochs) throw UsageError("--resume accepts only --epochs among config flags");
      for (const auto& [k, val] : train_flags.overrides) {
        train.resume_epochs =
            usage_on_config_error([&] { return static_cast<std::size_t>(parse_u64(val, k)); });
      }
    } else {
      train.config = train_flags.build();
    }
    train.stop_after_epoch = stop_after;
    if (stop_after && *stop_after == 0) throw UsageError("--stop-after-epoch must be >= 1");
    if (!history.empty()) train.history = history;
    cmd.action = train;
  } else if (e->parsed()) {
    cmd.action = embed;
  } else if (v->parsed()) {
    if (!embeddings.empty()) {
      if (!ckpt.empty() || !manifest.empty()) {
        throw UsageError("eval takes --embeddings or --ckpt with --manifest, not both");
      }
      eval.embeddings = embeddings;
    } else {
      if (ckpt.empty() || manifest.empty()) {
        throw UsageError("eval needs --ckpt and --manifest, or --embeddings");
      }
      eval.ckpt = ckpt;
      eval.manifest = manifest;
    }
    if (protocol == "both") {
      eval.protocols = {Protocol::kImageToVoice, Protocol::kVoiceToImage};
    } else {
      eval.protocols = {usage_on_config_error([&] { return parse_protocol(protocol); })};
    }
    for (const auto& k : split_list(ks)) {
      const auto value = usage_on_config_error([&] { return parse_u64(k, "--k"); });
      if (value == 0) throw UsageError("--k: cutoffs must be >= 1");
      eval.ks.push_back(static_cast<std::size_t>(value));
    }
    if (!metrics.empty()) eval.metrics = metrics;
    if (!curve.empty()) eval.curve = curve;
    if (!summary.empty()) eval.summary = summary;
    cmd.action = eval;
  } else if (f->parsed()) {
    if (mfcc.frames == 0) throw UsageError("--frames must be >= 1");
    cmd.action = mfcc;
  } else {
    sweep.config = sweep_flags.build();
    sweep.eta1 = parse_double_list(eta1, "--eta1");
    sweep.eta2 = parse_double_list(eta2, "--eta2");
    cmd.action = sweep;
  }
  return cmd;
}

void execute(const Command& cmd, std::ostream& out, std::ostream& err) {
  if (cmd.deterministic) Eigen::setNbThreads(1);
  OutputGuard guard;
  std::visit(
      [&](const auto& c) {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, SynthCommand>) run_synth(c, out, guard);
        else if constexpr (std::is_same_v<C, TrainCommand>) run_train(c, err, guard);
        else if constexpr (std::is_same_v<C, EmbedCommand>) run_embed(c, guard);
        else if constexpr (std::is_same_v<C, EvalCommand>) run_eval(c, out, err, guard);
        else if constexpr (std::is_same_v<C, MfccCommand>) run_mfcc(c, guard);
        else run_sweep(c, err, guard);
      },
      cmd.action);
  guard.commit();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Command cmd;
  try {
    cmd = parse_args(args);
  } catch (const HelpRequested& h) {
    out << h.what();
    return kOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }
  try {
    execute(cmd, out, err);
    return kOk;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace scrl::cli
