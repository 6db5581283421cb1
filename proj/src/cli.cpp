#include "asl/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "asl/csv.hpp"
#include "asl/dataset.hpp"
#include "asl/kernels.hpp"
#include "asl/train.hpp"

namespace fs = std::filesystem;

namespace asl::cli {
namespace {

/// Signals a training run that stopped on a non-finite value.
class Divergence : public Error {
 public:
  using Error::Error;
};

struct RuntimeFlags {
  bool deterministic = true;
  std::string backend = "openmp";

  void add_to(CLI::App* app) {
    app->add_flag("--deterministic,!--no-deterministic", deterministic,
                  "Bit-reproducible kernels (default on)");
    app->add_option("--backend", backend, "Kernel backend")
        ->check(CLI::IsMember({"serial", "openmp"}))
        ->capture_default_str();
  }
  void apply() const {
    kernels::set_deterministic(deterministic);
    kernels::set_backend(backend == "serial" ? kernels::Backend::serial : kernels::Backend::openmp);
  }
};

void emit(std::ostream& out, const std::optional<std::string>& path, const std::string& text) {
  if (path) {
    csv::write_file(*path, text);
  } else {
    out << text;
  }
}

void warn_all(std::ostream& err, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

ModelGraph resolve_model(const std::string& spec, const Manifest& manifest, std::size_t side, bool dropout) {
  ModelGraph g;
  const auto& names = manifest.histogram.class_names;
  if (fs::is_regular_file(spec)) {
    std::ifstream in(spec, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    g = parse_model_config(ss.str());
    if (g.class_names.empty()) {
      if (g.class_count() != names.size()) {
        throw ConfigError("model config predicts " + std::to_string(g.class_count()) + " classes but the data has " +
                          std::to_string(names.size()));
      }
      g.class_names = names;
    }
  } else {
    Preset p;
    try {
      p = parse_preset(spec);
    } catch (const ParameterError&) {
      throw ParameterError("--model must be ann, cnn, resnet18 or a model config file, got '" + spec + "'");
    }
    PresetOptions o;
    o.input_side = side;
    o.class_count = names.size();
    g = build_preset(p, o);
    g.class_names = names;
  }
  if (!dropout) {
    for (auto& l : g.layers) {
      if (l.kind == LayerKind::dropout) l.rate = 0.0;
    }
  }
  validate_graph(g);
  return g;
}

std::vector<std::size_t> subset_indices(const std::vector<Subset>& membership, Subset s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < membership.size(); ++i) {
    if (membership[i] == s) out.push_back(i);
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sign alphabet classification toolkit", "asl"};
  app.require_subcommand(1);
  app.fallthrough(false);
  std::function<void()> action;

  // stats ------------------------------------------------------------------
  struct {
    std::string data;
    std::optional<std::string> out;
  } stats;
  auto* c_stats = app.add_subcommand("stats", "Class histogram of a dataset directory (CSV)");
  c_stats->add_option("--data", stats.data, "Dataset root, one subdirectory per class")->required();
  c_stats->add_option("--out", stats.out, "Write the CSV here instead of standard output");
  c_stats->callback([&] {
    action = [&] {
      const auto m = scan_manifest(stats.data);
      warn_all(err, m.warnings);
      emit(out, stats.out, histogram_csv(m.histogram));
    };
  });

  // split ------------------------------------------------------------------
  struct {
    std::string data, ratios = "0.70,0.15,0.15", out;
    std::optional<std::string> manifest;
    std::uint64_t seed = 0;
  } split;
  auto* c_split = app.add_subcommand("split", "Stratified train/val/test split (CSV)");
  c_split->add_option("--data", split.data, "Dataset root")->required();
  c_split->add_option("--seed", split.seed, "Shuffle seed")->capture_default_str();
  c_split->add_option("--ratios", split.ratios, "train,val,test fractions")->capture_default_str();
  c_split->add_option("--out", split.out, "Split CSV to write")->required();
  c_split->add_option("--manifest", split.manifest, "Also write the manifest CSV here");
  c_split->callback([&] {
    action = [&] {
      const auto m = scan_manifest(split.data);
      warn_all(err, m.warnings);
      const auto s = stratified_split(m.entries, parse_ratios(split.ratios), split.seed);
      warn_all(err, s.warnings);
      csv::write_file(split.out, split_csv(m.entries, s));
      if (split.manifest) csv::write_file(*split.manifest, manifest_csv(m));
      out << "train " << s.count(Subset::train) << "\nval " << s.count(Subset::val) << "\ntest "
          << s.count(Subset::test) << "\n";
    };
  });

  // train ------------------------------------------------------------------
  struct {
    std::string model, optimizer = "sgd", data, splits, out, augment = "none";
    double lr = 0.01, crop = 1.0;
    std::size_t epochs = 20, batch = 64, side = 64;
    std::uint64_t seed = 0;
    bool no_dropout = false;
    RuntimeFlags rt;
  } train;
  auto* c_train = app.add_subcommand("train", "Train a model and keep the best validation checkpoint");
  c_train->add_option("--model", train.model, "ann, cnn, resnet18 or a model config file")->required();
  c_train->add_option("--optimizer", train.optimizer, "gd, sgd, minibatch or adam")
      ->check(CLI::IsMember({"gd", "sgd", "minibatch", "adam"}))
      ->capture_default_str();
  c_train->add_option("--lr", train.lr, "Learning rate")->capture_default_str();
  c_train->add_option("--epochs", train.epochs, "Epoch budget")->capture_default_str();
  c_train->add_option("--batch", train.batch, "Mini-batch size")->capture_default_str();
  c_train->add_option("--seed", train.seed, "Seed for init, shuffling, dropout and augmentation")
      ->capture_default_str();
  c_train->add_option("--data", train.data, "Dataset root")->required();
  c_train->add_option("--splits", train.splits, "Split CSV from the split command")->required();
  c_train->add_option("--out", train.out, "Run directory (curves.csv, best.ckpt)")->required();
  c_train->add_option("--side", train.side, "Input side length for presets")->capture_default_str();
  c_train->add_option("--crop", train.crop, "Center crop fraction applied before resizing")->capture_default_str();
  c_train->add_option("--augment", train.augment, "none or crop-jitter")
      ->check(CLI::IsMember({"none", "crop-jitter"}))
      ->capture_default_str();
  c_train->add_flag("--no-dropout", train.no_dropout, "Disable dropout layers");
  train.rt.add_to(c_train);
  c_train->callback([&] {
    action = [&] {
      train.rt.apply();
      const auto m = scan_manifest(train.data);
      warn_all(err, m.warnings);
      const auto membership = read_split_csv(train.splits, m.entries);
      TrainConfig cfg;
      cfg.graph = resolve_model(train.model, m, train.side, !train.no_dropout);
      cfg.optimizer = parse_optimizer(train.optimizer);
      cfg.learning_rate = train.lr;
      cfg.epochs = train.epochs;
      cfg.batch_size = train.batch;
      cfg.seed = train.seed;
      cfg.augment = parse_augment(train.augment);
      cfg.out_dir = fs::path(train.out);
      const std::size_t side = cfg.graph.input_shape.at(1);
      if (cfg.graph.input_shape != Shape{1, side, side}) {
        throw ConfigError("model input must be square and single-channel, got " + to_string(cfg.graph.input_shape));
      }
      const auto tr = load_samples(train.data, m, subset_indices(membership, Subset::train), side, train.crop);
      const auto va = load_samples(train.data, m, subset_indices(membership, Subset::val), side, train.crop);
      fs::create_directories(train.out);
      csv::write_file(fs::path(train.out) / "model.cfg", serialize_model_config(cfg.graph));

      const auto result = train_run(cfg, tr, va);
      const auto& r = result.report;
      if (r.epochs() > 0) write_curves_csv(r, fs::path(train.out) / "curves.csv");
      for (std::size_t e = 0; e < r.epochs(); ++e) {
        out << "epoch " << e + 1 << " train_loss " << csv::number(r.train_loss[e]) << " train_acc "
            << csv::number(r.train_acc[e]) << " val_loss " << csv::number(r.val_loss[e]) << " val_acc "
            << csv::number(r.val_acc[e]) << "\n";
      }
      if (r.diverged) throw Divergence("training diverged at " + r.divergence);
      out << "best epoch " << r.best_epoch + 1 << " (batch size " << r.batch_size << ")\n";
    };
  });

  // eval -------------------------------------------------------------------
  struct {
    std::string checkpoint, data, splits, subset = "test";
    std::optional<std::string> out;
    double crop = 1.0;
    std::size_t batch = 64;
    RuntimeFlags rt;
  } eval;
  auto* c_eval = app.add_subcommand("eval", "Accuracy and confusion matrix of a checkpoint on one subset");
  c_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--data", eval.data, "Dataset root")->required();
  c_eval->add_option("--splits", eval.splits, "Split CSV")->required();
  c_eval->add_option("--subset", eval.subset, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  c_eval->add_option("--out", eval.out, "Confusion matrix CSV to write");
  c_eval->add_option("--crop", eval.crop, "Center crop fraction")->capture_default_str();
  c_eval->add_option("--batch", eval.batch, "Evaluation batch size")->capture_default_str();
  eval.rt.add_to(c_eval);
  c_eval->callback([&] {
    action = [&] {
      eval.rt.apply();
      auto model = load_checkpoint(eval.checkpoint);
      const auto m = scan_manifest(eval.data);
      warn_all(err, m.warnings);
      if (model.class_count() != m.class_count()) {
        throw ConfigError("checkpoint predicts " + std::to_string(model.class_count()) +
                          " classes but the data has " + std::to_string(m.class_count()));
      }
      const auto membership = read_split_csv(eval.splits, m.entries);
      const auto idx = subset_indices(membership, parse_subset(eval.subset));
      const auto set = load_samples(eval.data, m, idx, model_input_side(model), eval.crop);
      const auto ev = evaluate(model, set, eval.batch);
      if (eval.out) csv::write_file(*eval.out, ev.confusion.to_csv(m.histogram.class_names));
      out << "samples " << ev.confusion.total() << "\naccuracy " << csv::number(ev.accuracy) << "\n";
    };
  });

  // infer ------------------------------------------------------------------
  struct {
    std::string checkpoint, image;
    double crop = 1.0;
    bool all = false;
  } infer;
  auto* c_infer = app.add_subcommand("infer", "Classify one image");
  c_infer->add_option("--checkpoint", infer.checkpoint, "Checkpoint file")->required();
  c_infer->add_option("--image", infer.image, "PGM (or PNG/JPEG) image")->required();
  c_infer->add_option("--crop", infer.crop, "Center crop fraction")->capture_default_str();
  c_infer->add_flag("--all", infer.all, "Print the whole probability vector");
  c_infer->callback([&] {
    action = [&] {
      auto model = load_checkpoint(infer.checkpoint);
      const auto p = infer_file(model, infer.image, infer.crop);
      out << p.class_name << " " << csv::number(p.probability) << "\n";
      if (infer.all) {
        for (std::size_t c = 0; c < p.probabilities.size(); ++c) {
          out << "  " << class_label(model.graph(), c) << " " << csv::number(p.probabilities[c]) << "\n";
        }
      }
    };
  });

  // bench ------------------------------------------------------------------
  struct {
    std::string checkpoint, image;
    std::size_t iterations = 20;
    double crop = 1.0;
    RuntimeFlags rt;
  } bench;
  auto* c_bench = app.add_subcommand("bench", "Single-image inference latency");
  c_bench->add_option("--checkpoint", bench.checkpoint, "Checkpoint file")->required();
  c_bench->add_option("--image", bench.image, "Image to classify repeatedly")->required();
  c_bench->add_option("--iterations", bench.iterations, "Timed iterations after one warm-up")
      ->capture_default_str();
  c_bench->add_option("--crop", bench.crop, "Center crop fraction")->capture_default_str();
  bench.rt.add_to(c_bench);
  c_bench->callback([&] {
    action = [&] {
      bench.rt.apply();
      auto model = load_checkpoint(bench.checkpoint);
      const auto r = bench_inference(model, bench.image, bench.iterations, bench.crop);
      out << "iterations " << r.samples_ms.size() << "\nmean_ms " << csv::number(r.mean_ms) << "\nmedian_ms "
          << csv::number(r.median_ms) << "\np95_ms " << csv::number(r.p95_ms) << "\n";
    };
  });

  // synth ------------------------------------------------------------------
  struct {
    std::string out;
    GlyphOptions o;
  } synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic glyph dataset as PGM files");
  c_synth->add_option("--out", synth.out, "Dataset root to create")->required();
  c_synth->add_option("--classes", synth.o.classes, "Number of glyph classes (2-8)")->capture_default_str();
  c_synth->add_option("--side", synth.o.side, "Image side length")->capture_default_str();
  c_synth->add_option("--per-class", synth.o.per_class, "Images per class")->capture_default_str();
  c_synth->add_option("--seed", synth.o.seed, "Generator seed")->capture_default_str();
  c_synth->callback([&] {
    action = [&] {
      const auto set = generate_glyphs(synth.o);
      write_glyph_tree(synth.out, set);
      out << "wrote " << set.images.size() << " images\n";
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    action();
  } catch (const Divergence& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) { return run(args, out, err); }

}  // namespace asl::cli
