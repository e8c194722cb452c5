// caf: command-line driver for the conv-attention fusion pipeline.
//
//   caf gen-synth     synthesize a feature dataset
//   caf merge-labels  merge pseudo-label annotations into a labeled set
//   caf train         train a fusion head, write checkpoint + metrics
//   caf eval          score a checkpoint (optionally on a noisy copy)
//   caf gradcheck     finite-difference check of every parameter gradient
//   caf ablate        run a table-shaped ablation grid
//
// Exit codes: 0 ok, 2 usage/validation, 3 I/O, 4 data format, 5 numerical.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "caf/ablation.hpp"
#include "caf/annotator.hpp"
#include "caf/binary_io.hpp"
#include "caf/checkpoint.hpp"
#include "caf/config_text.hpp"
#include "caf/dataset.hpp"
#include "caf/error.hpp"
#include "caf/metrics.hpp"
#include "caf/rng.hpp"
#include "caf/trainer.hpp"

namespace fs = std::filesystem;
using namespace caf;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  std::vector<std::string> noise;
  std::optional<double> ratio;
  std::string preset;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "canonical key=value config file");
  cmd->add_option("--set", o.sets, "override KEY=VALUE (repeatable)")->take_all();
  cmd->add_option("--seed", o.seed, "seed for every stochastic step");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--jobs", o.jobs, "parallel ablation cells")->check(CLI::PositiveNumber);
  cmd->add_option("--noise", o.noise, "STREAM=SIGMA additive feature noise (repeatable)")->take_all();
  cmd->add_option("--ratio", o.ratio, "fraction of the pseudo-labeled pool to keep");
  cmd->add_option("--preset", o.preset, "ablation preset: table4, table6, table7, table8");
}

// Built-in defaults; a config file and --set overrides are layered on top.
KeyValueText default_config() {
  KeyValueText kv;
  kv.set("seed", "0");
  kv.set("synth.name", "synthetic");
  kv.set("synth.num_classes", "6");
  kv.set("synth.samples_per_class", "40");
  kv.set("synth.streams", "hubert:audio:16,clip:visual:16,videomae:visual:16,baichuan:text:16");
  kv.set("synth.separation", "1");
  kv.set("synth.sigma", "1");
  kv.set("synth.id_prefix", "s");
  kv.set("synth.labeled", "true");
  kv.set("synth.pseudo_fraction", "0");
  kv.set("synth.unlabeled_fraction", "0");
  kv.set("data.test_fraction", "0.2");
  kv.set("data.ratio_target", "pseudo");
  kv.set("data.pseudo_fraction", "0.8");
  kv.merge(TrainConfig{}.to_kv(), "train.");
  kv.erase("train.seed");
  FusionConfig m;
  auto mkv = m.to_kv();
  mkv.erase("streams");
  mkv.erase("num_classes");
  kv.merge(mkv, "model.");
  return kv;
}

KeyValueText resolve_config(const CommonOptions& o, KeyValueText base) {
  if (!o.config_path.empty()) base.merge(KeyValueText::load(o.config_path));
  for (const auto& s : o.sets) base.apply_override(s);
  if (o.seed) base.set("seed", std::to_string(*o.seed));
  return base;
}

std::uint64_t derived_seed(const KeyValueText& kv, const std::string& key, std::uint64_t salt) {
  if (kv.has(key)) return kv.get_u64(key, 0);
  const std::uint64_t s = kv.get_u64("seed", 0);
  return salt == 0 ? s : splitmix64_mix(s ^ salt);
}

std::map<std::string, double> parse_noise(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--noise expects STREAM=SIGMA, got '" + item + "'");
    const std::string value = item.substr(eq + 1);
    double sigma = 0.0;
    try {
      std::size_t used = 0;
      sigma = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw UsageError("--noise: '" + value + "' is not a number");
    }
    // A modality name expands to every stream of that modality.
    out[item.substr(0, eq)] = sigma;
  }
  return out;
}

std::map<std::string, double> expand_noise(const std::map<std::string, double>& raw, const std::vector<StreamSpec>& streams) {
  std::map<std::string, double> out;
  for (const auto& [key, sigma] : raw) {
    bool matched = false;
    for (const auto& s : streams) {
      if (s.name == key || to_string(s.modality) == key) {
        out[s.name] = sigma;
        matched = true;
      }
    }
    if (!matched) throw UsageError("--noise: no stream or modality named '" + key + "'");
  }
  return out;
}

fs::path require_out(const CommonOptions& o) {
  if (o.out.empty()) throw UsageError("--out DIR is required");
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create " + o.out + ": " + ec.message());
  return o.out;
}

void write_resolved(const fs::path& out, const KeyValueText& kv) {
  write_file((out / "resolved_config.txt").string(), "# config_hash=" + hex64(kv.hash()) + "\n" + kv.canonical());
}

FusionConfig model_config_for(const KeyValueText& kv, const Dataset& ds) {
  KeyValueText mkv = kv.subset("model.");
  mkv.set("streams", format_streams(ds.streams));
  mkv.set("num_classes", std::to_string(ds.num_classes()));
  FusionConfig c = FusionConfig::from_kv(mkv);
  c.validate();
  return c;
}

TrainConfig train_config_for(const KeyValueText& kv) {
  TrainConfig t = TrainConfig::from_kv(kv.subset("train."));
  t.seed = derived_seed(kv, "train.seed", 0);
  return t;
}

SynthSpec synth_spec_for(const KeyValueText& kv) {
  KeyValueText skv = kv.subset("synth.");
  skv.set("seed", std::to_string(derived_seed(kv, "synth.seed", 0)));
  skv.erase("unlabeled_fraction");
  return SynthSpec::from_kv(skv);
}

// ---------------------------------------------------------------------------

int cmd_gen_synth(const CommonOptions& o) {
  const KeyValueText kv = resolve_config(o, default_config());
  const SynthSpec spec = synth_spec_for(kv);
  const double unlabeled_fraction = kv.get_double("synth.unlabeled_fraction", 0.0);
  if (!(unlabeled_fraction >= 0.0 && unlabeled_fraction < 1.0)) throw UsageError("synth.unlabeled_fraction must lie in [0,1)");
  const fs::path out = require_out(o);

  const Dataset ds = generate_synthetic(spec);
  if (unlabeled_fraction == 0.0) {
    write_dataset(ds, out.string());
    std::cout << "samples=" << ds.size() << " labeled=" << ds.labels.size() << " human=" << ds.count(Provenance::human)
              << " pseudo=" << ds.count(Provenance::pseudo) << "\n";
  } else {
    // Labeled/unlabeled pair sharing class means, plus category annotations for
    // the unlabeled part that stand in for the external annotator.
    const auto parts = split_train_val(ds, unlabeled_fraction, splitmix64_mix(spec.seed ^ 0xA5A5));
    Dataset unlabeled = parts.val;
    std::vector<AnnotationRecord> annotations;
    for (const auto& r : unlabeled.records) {
      const auto label = ds.class_names[*unlabeled.label_of(r.sample_id)];
      annotations.push_back({r.sample_id, "The person appears " + label + ".", {label}, "emotion_llama_category"});
    }
    unlabeled.labels.clear();
    unlabeled.provenance.clear();
    unlabeled.name = spec.name + "_unlabeled";
    write_dataset(parts.train, (out / "labeled").string());
    write_dataset(unlabeled, (out / "unlabeled").string());
    write_file((out / "annotations.jsonl").string(), format_annotations(annotations));
    std::cout << "samples=" << ds.size() << " labeled=" << parts.train.size() << " unlabeled=" << unlabeled.size()
              << " annotations=" << annotations.size() << "\n";
  }
  write_resolved(out, kv);
  return 0;
}

int cmd_merge_labels(const CommonOptions& o, const std::string& labeled_dir, const std::string& unlabeled_dir,
                     const std::string& annotations_path, const std::string& lexicon_path) {
  const KeyValueText kv = resolve_config(o, KeyValueText{});
  const fs::path out = require_out(o);
  const Dataset labeled = load_dataset(labeled_dir);
  const Dataset unlabeled = load_dataset(unlabeled_dir);
  const auto annotations = load_annotations(annotations_path);
  const Lexicon lexicon = lexicon_path.empty() ? Lexicon::builtin() : Lexicon::load(lexicon_path);

  const AugmentResult res = build_augmented(labeled, unlabeled, annotations, &lexicon);
  write_dataset(res.dataset, out.string());
  write_file((out / "drop_report.csv").string(), format_drop_report(res.dropped));
  write_resolved(out, kv);
  std::cout << "human=" << res.dataset.count(Provenance::human) << ", pseudo=" << res.dataset.count(Provenance::pseudo)
            << ", dropped=" << res.dropped.size() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& data_dir, const std::string& val_dir) {
  const KeyValueText kv = resolve_config(o, default_config());
  const fs::path out = require_out(o);
  Dataset data = load_dataset(data_dir);
  const TrainConfig tc = train_config_for(kv);
  if (o.ratio) data = subsample_ratio(data, *o.ratio, parse_ratio_target(kv.get_string("data.ratio_target", "pseudo")), tc.seed);

  Dataset train_ds, val_ds;
  if (!val_dir.empty()) {
    train_ds = std::move(data);
    val_ds = load_dataset(val_dir);
  } else {
    auto split = split_train_val(data, tc.val_fraction, splitmix64_mix(tc.seed ^ 0x5851F42D4C957F2DULL));
    train_ds = std::move(split.train);
    val_ds = std::move(split.val);
  }

  const FusionConfig mc = model_config_for(kv, train_ds);
  if (!is_swept_learning_rate(tc.learning_rate)) {
    spdlog::warn("learning rate {} is outside the swept set {{1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2}}", tc.learning_rate);
  }
  Rng init(tc.seed);
  FusionModel model = FusionModel::build(mc, init);
  spdlog::info("training {} on {} samples ({} validation), {} parameters", to_string(mc.head), train_ds.size(), val_ds.size(),
               model.parameter_count());
  const RunResult run = train(model, train_ds, val_ds, tc);

  save_checkpoint(model, (out / "checkpoint.cafm").string());
  write_file((out / "loss_curve.csv").string(), format_loss_curve(run.curve));
  MetricReport rep = make_report(evaluate(model, val_ds.size() ? val_ds : train_ds), train_ds.class_names);
  rep.run_name = "train";
  rep.config_hash = hex64(kv.hash());
  rep.dataset_hash = hex64(dataset_hash(train_ds));
  write_file((out / "metrics.txt").string(), rep.to_text());
  write_resolved(out, kv);

  std::cout << "epochs_run=" << run.epochs_run << " best_epoch=" << run.best_epoch << "\n";
  std::cout << "train WAF " << format_percent(run.train.waf) << "  ACC " << format_percent(run.train.acc) << "\n";
  if (run.val.samples) std::cout << "val   WAF " << format_percent(run.val.waf) << "  ACC " << format_percent(run.val.acc) << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& data_dir, const std::string& ov_pred,
             const std::string& ov_ref) {
  const KeyValueText kv = resolve_config(o, default_config());
  const fs::path out = require_out(o);
  MetricReport rep;
  rep.run_name = "eval";
  rep.config_hash = hex64(kv.hash());

  if (!checkpoint.empty()) {
    if (data_dir.empty()) throw UsageError("eval: --data is required with --checkpoint");
    FusionModel model = load_checkpoint(checkpoint);
    Dataset ds = load_dataset(data_dir);
    if (!o.noise.empty()) {
      const auto sigmas = expand_noise(parse_noise(o.noise), ds.streams);
      ds = inject_noise(ds, sigmas, derived_seed(kv, "noise.seed", 0x6E6F697365ULL));
    }
    const auto cm = evaluate(model, ds);
    const auto base = make_report(cm, ds.class_names);
    rep.waf = base.waf;
    rep.acc = base.acc;
    rep.f1 = base.f1;
    rep.class_names = base.class_names;
    rep.dataset_hash = hex64(dataset_hash(ds));
    std::cout << "samples=" << cm.total() << "  WAF " << format_percent(rep.waf) << "  ACC " << format_percent(rep.acc) << "\n";
    for (std::size_t c = 0; c < rep.f1.size(); ++c) std::cout << "  F1 " << rep.class_names[c] << " " << format_percent(rep.f1[c]) << "\n";
  }
  if (!ov_pred.empty() || !ov_ref.empty()) {
    if (ov_pred.empty() || ov_ref.empty()) throw UsageError("eval: --ov-pred and --ov-ref go together");
    const auto pred = load_annotations(ov_pred);
    const auto ref = load_annotations(ov_ref);
    std::map<std::string, std::set<std::string>> by_id;
    for (const auto& a : pred) by_id[a.sample_id] = std::set<std::string>(a.labels.begin(), a.labels.end());
    std::vector<std::set<std::string>> p, r;
    for (const auto& a : ref) {
      r.emplace_back(a.labels.begin(), a.labels.end());
      auto it = by_id.find(a.sample_id);
      p.push_back(it == by_id.end() ? std::set<std::string>{} : it->second);
    }
    rep.set_metrics = corpus_set_scores(p, r);
    const auto& s = *rep.set_metrics;
    std::cout << "Accuracy_s " << format_percent(s.mean.accuracy_s) << "  Recall_s " << format_percent(s.mean.recall_s) << "  Avg "
              << format_percent(s.mean.avg) << "  (empty predictions: " << s.empty_predictions << ")\n";
  }
  if (checkpoint.empty() && ov_pred.empty()) throw UsageError("eval: nothing to evaluate (give --checkpoint or --ov-pred/--ov-ref)");
  write_file((out / "metrics.txt").string(), rep.to_text());
  write_resolved(out, kv);
  return 0;
}

int cmd_gradcheck(const CommonOptions& o) {
  KeyValueText base;
  base.set("seed", "0");
  base.set("model.streams", "hubert:audio:10,clip:visual:8,baichuan:text:6");
  base.set("model.d_common", "8");
  base.set("model.n_conv_blocks", "2");
  base.set("model.conv_kernel", "3");
  base.set("model.num_classes", "6");
  base.set("gradcheck.batch_size", "4");
  base.set("gradcheck.step", "1e-6");
  base.set("gradcheck.tolerance", "1e-5");
  const KeyValueText kv = resolve_config(o, base);
  const FusionConfig mc = FusionConfig::from_kv(kv.subset("model."));
  const auto batch = kv.get_int("gradcheck.batch_size", 4);
  if (batch <= 0) throw UsageError("gradcheck.batch_size must be positive");
  const double tol = kv.get_double("gradcheck.tolerance", 1e-5);

  const auto rep = gradcheck(mc, kv.get_u64("seed", 0), static_cast<std::size_t>(batch), kv.get_double("gradcheck.step", 1e-6));
  std::cout << rep.to_text();
  char line[96];
  std::snprintf(line, sizeof line, "max relative error %.3e over %zu parameters (tolerance %.0e)\n", rep.max_rel_error, rep.checked, tol);
  std::cout << line;
  if (!o.out.empty()) {
    const fs::path out = require_out(o);
    write_file((out / "gradcheck.csv").string(), rep.to_text());
    write_resolved(out, kv);
  }
  return rep.passed(tol) ? 0 : static_cast<int>(ErrorKind::numeric);
}

int cmd_ablate(const CommonOptions& o, const std::string& data_dir, const std::string& test_dir) {
  const KeyValueText kv = resolve_config(o, default_config());
  if (o.preset.empty()) throw UsageError("ablate: --preset is required");
  const fs::path out = require_out(o);

  AblationData data;
  if (!data_dir.empty()) {
    if (test_dir.empty()) throw UsageError("ablate: --test is required with --data");
    data.train = load_dataset(data_dir);
    data.test = load_dataset(test_dir);
  } else {
    KeyValueText skv = kv;
    if (!kv.has("synth.pseudo_fraction") || kv.get_double("synth.pseudo_fraction", 0.0) == 0.0) {
      skv.set("synth.pseudo_fraction", kv.get_string("data.pseudo_fraction", "0.8"));
    }
    const Dataset all = generate_synthetic(synth_spec_for(skv));
    auto parts = split_train_val(all, kv.get_double("data.test_fraction", 0.2), derived_seed(kv, "data.split_seed", 0x7E57));
    data.train = std::move(parts.train);
    data.test = std::move(parts.val);
  }
  data.ratio_target = parse_ratio_target(kv.get_string("data.ratio_target", "pseudo"));
  data.noise_seed = derived_seed(kv, "noise.seed", 0x6E6F697365ULL);
  if (o.noise.empty()) {
    for (const auto& s : data.train.streams)
      if (s.modality == Modality::visual) data.noise_sigmas[s.name] = 1.0;
  } else {
    data.noise_sigmas = expand_noise(parse_noise(o.noise), data.train.streams);
  }

  const FusionConfig mc = model_config_for(kv, data.train);
  const TrainConfig tc = train_config_for(kv);
  auto cells = preset_cells(o.preset, mc, tc);
  if (o.ratio) {
    for (auto& c : cells) c.data_ratio = *o.ratio;
  }
  spdlog::info("ablation {}: {} cells, {} train / {} test samples, {} job(s)", o.preset, cells.size(), data.train.size(),
               data.test.size(), o.jobs);
  const auto rows = run_ablation(cells, mc, tc, data, o.jobs);

  write_file((out / "ablation.csv").string(), ablation_csv(rows));
  fs::create_directories(out / "curves");
  for (const auto& r : rows) {
    if (!r.ok()) continue;
    std::string name = r.cell.cell_id;
    for (auto& ch : name)
      if (ch == '/') ch = '_';
    write_file((out / "curves" / (name + ".csv")).string(), format_loss_curve(r.curve));
  }
  write_resolved(out, kv);
  std::cout << ablation_table(rows);

  int rc = 0;
  for (const auto& r : rows) {
    if (r.status.rfind("failed", 0) == 0) {
      spdlog::error("{}: {}", r.cell.cell_id, r.status);
      rc = static_cast<int>(ErrorKind::numeric);
    }
  }
  return rc;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("caf");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("CAF_LOG");
  const std::string level = env ? env : "warn";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::warn);
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Conv-attention multimodal fusion: data, training, evaluation and ablations"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::string labeled, unlabeled, annotations, lexicon, data, val, test, checkpoint, ov_pred, ov_ref;

  auto* gen = app.add_subcommand("gen-synth", "synthesize a feature dataset");
  add_common(gen, opts);

  auto* merge = app.add_subcommand("merge-labels", "build the augmented dataset from pseudo-label annotations");
  add_common(merge, opts);
  merge->add_option("--labeled", labeled, "labeled dataset directory")->required();
  merge->add_option("--unlabeled", unlabeled, "unlabeled dataset directory")->required();
  merge->add_option("--annotations", annotations, "annotation JSONL file")->required();
  merge->add_option("--lexicon", lexicon, "keyword lexicon (phrase<TAB>label); built-in table if omitted");

  auto* tr = app.add_subcommand("train", "train a fusion head");
  add_common(tr, opts);
  tr->add_option("--data", data, "training dataset directory")->required();
  tr->add_option("--val", val, "validation dataset directory (default: split from --data)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and/or open-vocabulary label sets");
  add_common(ev, opts);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file");
  ev->add_option("--data", data, "dataset directory");
  ev->add_option("--ov-pred", ov_pred, "predicted label sets (annotation JSONL)");
  ev->add_option("--ov-ref", ov_ref, "reference label sets (annotation JSONL)");

  auto* gc = app.add_subcommand("gradcheck", "compare analytic and central-difference gradients");
  add_common(gc, opts);

  auto* ab = app.add_subcommand("ablate", "run an ablation preset");
  add_common(ab, opts);
  ab->add_option("--data", data, "training dataset directory (default: synthetic)");
  ab->add_option("--test", test, "test dataset directory for the noise column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*gen) return cmd_gen_synth(opts);
    if (*merge) return cmd_merge_labels(opts, labeled, unlabeled, annotations, lexicon);
    if (*tr) return cmd_train(opts, data, val);
    if (*ev) return cmd_eval(opts, checkpoint, data, ov_pred, ov_ref);
    if (*gc) return cmd_gradcheck(opts);
    if (*ab) return cmd_ablate(opts, data, test);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
