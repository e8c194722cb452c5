// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "caf/ablation.hpp"
#include "caf/annotator.hpp"
#include "caf/binary_io.hpp"
#include "caf/checkpoint.hpp"
#include "caf/dataset.hpp"
#include "caf/metrics.hpp"
#include "caf/rng.hpp"
#include "caf/trainer.hpp"

using namespace caf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const std::vector<HeadKind> kHeads = {HeadKind::conv_attention, HeadKind::attention_only, HeadKind::conv_only,
                                      HeadKind::mlp_baseline};

// Separable benchmark: well-separated class means, small within-class noise.
SynthSpec separable_spec(std::size_t per_class, std::uint64_t seed) {
  SynthSpec s;
  s.samples_per_class = per_class;
  s.seed = seed;
  s.streams = {{{"hubert", Modality::audio, 8}, 5.0, 0.1},
               {{"clip", Modality::visual, 8}, 5.0, 0.1},
               {{"videomae", Modality::visual, 8}, 5.0, 0.1},
               {{"baichuan", Modality::text, 8}, 5.0, 0.1}};
  return s;
}

FusionConfig model_for(const Dataset& ds, HeadKind head) {
  FusionConfig c;
  c.streams = ds.streams;
  c.num_classes = ds.num_classes();
  c.d_common = 8;
  c.head = head;
  return c;
}

Outcome gradient_integrity() {
  FusionConfig c;
  c.streams = {{"hubert", Modality::audio, 10}, {"clip", Modality::visual, 8}, {"baichuan", Modality::text, 6}};
  c.d_common = 8;
  c.n_conv_blocks = 2;
  c.conv_kernel = 3;
  c.num_classes = 6;
  const auto t0 = Clock::now();
  const auto rep = gradcheck(c, 0, 4, 1e-6);
  const double secs = seconds_since(t0);
  return {rep.passed(1e-5) && secs <= 60.0, "max relative error " + fmt("%.3e", rep.max_rel_error) + " over " +
                                                std::to_string(rep.checked) + " parameters, " + fmt("%.2f s", secs)};
}

Outcome shape_contract() {
  Rng rng(1);
  std::size_t cases = 0, failures = 0;
  for (std::size_t B : {1, 2, 5})
    for (std::size_t M : {1, 3, 7})
      for (std::size_t d : {2, 8})
        for (std::size_t N : {0, 1, 2, 3}) {
          FusionConfig c;
          for (std::size_t m = 0; m < M; ++m) c.streams.push_back({"s" + std::to_string(m), Modality::visual, 2 + m});
          c.d_common = d;
          c.n_conv_blocks = N;
          ++cases;
          try {
            const FusionModel model = FusionModel::build(c, rng);
            std::vector<Tensor> batch;
            for (const auto& s : c.streams) batch.push_back(randn(rng, {B, s.input_dim}));
            const auto tr = model.forward(batch, Mode::eval);
            bool ok = tr.depth_concat.shape() == Shape{B, M * d} && tr.stream_stack.shape() == Shape{B, d, M} &&
                      tr.attn_weights.shape() == Shape{B, M} && tr.attn_feature.shape() == Shape{B, d} &&
                      tr.conv_outputs.size() == N && tr.conv_feature.shape() == Shape{B, d} &&
                      tr.fusion.shape() == Shape{B, d} && tr.logits.shape() == Shape{B, 6};
            for (const auto& p : tr.projections) ok = ok && p.shape() == Shape{B, d};
            for (const auto& f : tr.conv_outputs) ok = ok && f.shape() == Shape{B, d, M};
            for (std::size_t i = 0; ok && i < tr.fusion.size(); ++i) ok = tr.fusion[i] == tr.conv_feature[i] + tr.attn_feature[i];
            failures += !ok;
          } catch (const std::exception&) {
            ++failures;
          }
        }
  return {failures == 0, std::to_string(cases) + " configurations, " + std::to_string(failures) + " failures"};
}

Outcome overfit_oracle() {
  SynthSpec s = separable_spec(8, 3);
  s.num_classes = 4;  // 4 x 8 = 32 samples
  const Dataset ds = generate_synthetic(s);
  Rng rng(3);
  FusionModel model = FusionModel::build(model_for(ds, HeadKind::conv_attention), rng);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 500;
  cfg.track_train_accuracy = true;
  const auto t0 = Clock::now();
  const RunResult run = train(model, ds, Dataset{}, cfg);
  const double secs = seconds_since(t0);
  std::size_t first = 0;
  for (const auto& e : run.curve)
    if (e.train_acc == 1.0) {
      first = e.epoch;
      break;
    }
  return {ds.size() == 32 && first > 0 && first <= 500 && secs <= 30.0,
          std::to_string(ds.size()) + " samples, train accuracy 1.0 first at epoch " + (first ? std::to_string(first) : "never") +
              ", final " + format_percent(run.train.acc) + "%, " + fmt("%.2f s", secs)};
}

double oracle_waf(const ConfusionMatrix& cm) {
  const std::size_t n = cm.num_classes();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) total += static_cast<double>(cm.at(r, c));
  double out = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double tp = static_cast<double>(cm.at(k, k)), row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += static_cast<double>(cm.at(k, j)), col += static_cast<double>(cm.at(j, k));
    if (tp > 0) {
      const double p = tp / col, r = tp / row;
      out += row / total * (2 * p * r / (p + r));
    }
  }
  return out;
}

Outcome metric_oracles() {
  Rng rng(4);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.below(7);
    ConfusionMatrix cm(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) cm.add(r, c, rng.below(40));
    if (cm.total() == 0) cm.add(0, 0);
    worst = std::max(worst, std::abs(waf(cm) - oracle_waf(cm)));
  }
  const std::vector<std::set<std::string>> ref = {{"happy", "excited"}, {"sad"}, {"angry", "frustrated"}};
  const auto empty = corpus_set_scores({{}, {}, {}}, ref);
  const auto same = corpus_set_scores(ref, ref);
  const std::string e = format_percent(empty.mean.accuracy_s) + "/" + format_percent(empty.mean.recall_s) + "/" +
                        format_percent(empty.mean.avg);
  const std::string s = format_percent(same.mean.accuracy_s) + "/" + format_percent(same.mean.recall_s) + "/" +
                        format_percent(same.mean.avg);
  return {worst <= 1e-12 && e == "0.00/0.00/0.00" && s == "100.00/100.00/100.00",
          "max |WAF - oracle| " + fmt("%.1e", worst) + " over 100 matrices; Empty " + e + "; pred=ref " + s};
}

Dataset feature_only(const std::string& prefix, std::size_t n, bool labeled) {
  Dataset ds;
  ds.class_names = emotion_classes();
  ds.streams = {{"hubert", Modality::audio, 1}};
  ds.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = prefix + std::to_string(i);
    ds.records.push_back({id, {{"hubert", {0.0}}}});
    if (labeled) {
      ds.labels[id] = i % 6;
      ds.provenance[id] = Provenance::human;
    }
  }
  return ds;
}

Outcome augmentation_arithmetic() {
  const Dataset labeled = feature_only("train_", 5030, true);
  const Dataset unlabeled = feature_only("unl_", 20000, false);
  std::vector<AnnotationRecord> ann;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    ann.push_back({unlabeled.records[i].sample_id, "", {emotion_classes()[i % 6]}, "emotion_llama_category"});
  }
  const auto res = build_augmented(labeled, unlabeled, ann);
  const auto human = res.dataset.count(Provenance::human), pseudo = res.dataset.count(Provenance::pseudo);
  return {res.dataset.size() == 25030 && human == 5030 && pseudo == 20000 && res.dropped.empty(),
          std::to_string(res.dataset.size()) + " records (human=" + std::to_string(human) +
              ", pseudo=" + std::to_string(pseudo) + ", dropped=" + std::to_string(res.dropped.size()) + ")"};
}

Outcome ablation_structure() {
  SynthSpec s = separable_spec(20, 6);
  for (auto& st : s.streams) st.separation = 1.5, st.sigma = 1.0;
  s.pseudo_fraction = 0.8;
  const Dataset all = generate_synthetic(s);
  auto parts = split_train_val(all, 0.2, 6);
  AblationData data;
  data.train = parts.train;
  data.test = parts.val;
  data.noise_sigmas = {{"clip", 1.0}, {"videomae", 1.0}};
  data.noise_seed = 7;
  FusionConfig base = model_for(data.train, HeadKind::conv_attention);
  TrainConfig tc;
  tc.epochs = 30;

  const std::vector<std::pair<std::string, std::size_t>> expected = {{"table4", 6}, {"table6", 6}, {"table7", 5}, {"table8", 6}};
  bool ok = true;
  std::string detail;
  std::size_t executed = 0, excluded = 0;
  for (const auto& [preset, rows_wanted] : expected) {
    const auto rows = run_ablation(preset_cells(preset, base, tc), base, tc, data, 2);
    ok = ok && rows.size() == rows_wanted;
    std::string degraded;
    for (const auto& r : rows) {
      if (r.status == "excluded") {
        ++excluded;
        continue;
      }
      const bool finite = r.ok() && std::isfinite(r.final_loss) &&
                          std::all_of(r.curve.begin(), r.curve.end(), [](const EpochRecord& e) { return std::isfinite(e.train_loss); });
      if (r.cell.lr <= 1e-2) {
        ok = ok && finite;
        if (!finite) detail += " " + r.cell.cell_id + ":" + r.status;
      } else if (!finite) {
        degraded = " (" + r.cell.cell_id + " degraded: " + r.status + ")";
      }
      ++executed;
    }
    detail += " " + preset + "=" + std::to_string(rows.size()) + degraded;
  }
  return {ok, "rows:" + detail + "; " + std::to_string(executed) + " cells executed, " + std::to_string(excluded) +
                  " out-of-scope rows marked excluded"};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "caf_acceptance_det";
  fs::remove_all(root);
  SynthSpec s = separable_spec(10, 8);
  s.pseudo_fraction = 0.5;
  std::vector<std::string> data_bytes, curves, metrics, checkpoints;
  for (int run = 0; run < 2; ++run) {
    const Dataset ds = generate_synthetic(s);
    const fs::path dir = root / ("run" + std::to_string(run));
    write_dataset(ds, dir.string());
    std::string bytes;
    for (const auto& e : fs::directory_iterator(dir)) bytes += e.path().filename().string() + ":" + read_file(e.path().string());
    data_bytes.push_back(bytes);

    const Dataset loaded = load_dataset(dir.string());
    const auto parts = split_train_val(loaded, 0.2, 8);
    TrainConfig tc;
    tc.epochs = 25;
    tc.seed = 8;
    Rng rng(tc.seed);
    FusionModel model = FusionModel::build(model_for(loaded, HeadKind::conv_attention), rng);
    const RunResult r = train(model, parts.train, parts.val, tc);
    curves.push_back(format_loss_curve(r.curve));
    metrics.push_back(make_report(evaluate(model, parts.val), loaded.class_names).to_text());
    checkpoints.push_back(encode_checkpoint(model));
  }
  fs::remove_all(root);
  const bool same_data = data_bytes[0] == data_bytes[1];
  const bool same_curve = curves[0] == curves[1];
  const bool same_metrics = metrics[0] == metrics[1];
  const bool same_ckpt = checkpoints[0] == checkpoints[1];
  auto yn = [](bool b) { return b ? "identical" : "DIFFERENT"; };
  return {same_data && same_curve && same_metrics && same_ckpt,
          std::string("dataset files ") + yn(same_data) + ", loss curves " + yn(same_curve) + ", metrics " + yn(same_metrics) +
              ", checkpoints " + yn(same_ckpt)};
}

Outcome noise_sanity() {
  const std::vector<double> sigmas = {0.0, 1.0, 2.0};
  bool ok = true;
  std::string detail;
  for (HeadKind head : kHeads) {
    std::vector<double> mean(sigmas.size(), 0.0);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Dataset all = generate_synthetic(separable_spec(30, 100 + seed));
      const auto parts = split_train_val(all, 0.2, seed);
      Rng rng(seed);
      FusionModel model = FusionModel::build(model_for(all, head), rng);
      TrainConfig tc;
      tc.epochs = 100;
      tc.seed = seed;
      train(model, parts.train, Dataset{}, tc);
      for (std::size_t k = 0; k < sigmas.size(); ++k) {
        const Dataset noisy = inject_noise(parts.val, {{"clip", sigmas[k]}, {"videomae", sigmas[k]}}, 1000 + seed);
        mean[k] += waf(evaluate(model, noisy)) / 5.0;
      }
    }
    const bool monotone = mean[0] > mean[1] && mean[1] > mean[2];
    ok = ok && monotone;
    detail += " " + to_string(head) + " " + format_percent(mean[0]) + ">" + format_percent(mean[1]) + ">" +
              format_percent(mean[2]) + (monotone ? "" : " (NOT MONOTONE)") + ";";
  }
  return {ok, "mean test WAF at visual sigma 0/1/2:" + detail};
}

Outcome round_trips() {
  const fs::path root = fs::temp_directory_path() / "caf_acceptance_rt";
  fs::remove_all(root);
  Rng rng(9);
  std::size_t data_ok = 0, ckpt_ok = 0;
  for (int i = 0; i < 50; ++i) {
    SynthSpec s;
    s.seed = rng.next_u64();
    s.num_classes = 1 + rng.below(6);
    s.samples_per_class = 1 + rng.below(8);
    const std::size_t M = 1 + rng.below(4);
    for (std::size_t m = 0; m < M; ++m)
      s.streams.push_back({{"st" + std::to_string(m), static_cast<Modality>(rng.below(3)), 1 + rng.below(12)},
                           rng.uniform() * 6, rng.uniform() * 3});
    s.labeled = rng.below(5) != 0;
    s.pseudo_fraction = s.labeled ? rng.uniform() : 0.0;
    const Dataset ds = generate_synthetic(s);
    const std::string dir = (root / std::to_string(i)).string();
    write_dataset(ds, dir);
    data_ok += load_dataset(dir) == ds;

    FusionConfig c;
    c.streams = ds.streams;
    c.num_classes = std::max<std::size_t>(2, ds.num_classes());
    c.d_common = 1 + rng.below(6);
    c.n_conv_blocks = rng.below(4);
    c.use_batchnorm = rng.below(2) == 0;
    c.head = kHeads[rng.below(4)];
    FusionModel model = FusionModel::build(c, rng);
    if (c.use_batchnorm && M >= 2) {
      std::vector<Tensor> batch;
      for (const auto& st : c.streams) batch.push_back(randn(rng, {3, st.input_dim}));
      model.update_running_stats(model.forward(batch, Mode::train));
    }
    const std::string path = (root / (std::to_string(i) + ".cafm")).string();
    save_checkpoint(model, path);
    FusionModel back = load_checkpoint(path, c);
    auto a = model.state();
    auto b = back.state();
    bool same = a.size() == b.size();
    for (std::size_t k = 0; same && k < a.size(); ++k) same = a[k].name == b[k].name && *a[k].tensor == *b[k].tensor;
    ckpt_ok += same;
  }
  fs::remove_all(root);
  return {data_ok == 50 && ckpt_ok == 50,
          "dataset " + std::to_string(data_ok) + "/50 exact, checkpoint " + std::to_string(ckpt_ok) + "/50 exact"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 gradient integrity", gradient_integrity},
      {"2 shape contract sweep", shape_contract},
      {"3 overfit oracle", overfit_oracle},
      {"4 metric oracles", metric_oracles},
      {"5 augmentation arithmetic", augmentation_arithmetic},
      {"6 ablation harness structure", ablation_structure},
      {"7 determinism", determinism},
      {"8 noise emulation sanity", noise_sanity},
      {"9 round-trip integrity", round_trips},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  [%s] %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
