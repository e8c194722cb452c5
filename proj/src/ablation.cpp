#include "caf/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "caf/error.hpp"
#include "caf/rng.hpp"

namespace caf {

namespace {

AblationCell base_cell(const FusionConfig& m, const TrainConfig& t) {
  AblationCell c;
  c.head = m.head;
  c.head_label = to_string(m.head);
  c.conv_blocks = m.n_conv_blocks;
  c.batchnorm = m.use_batchnorm;
  c.activation = m.activation;
  c.lr = t.learning_rate;
  c.seed = t.seed;
  return c;
}

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::vector<AblationCell> AblationGrid::cells(const FusionConfig& base_model, const TrainConfig& base_train) const {
  const AblationCell base = base_cell(base_model, base_train);
  auto or_base = [](const auto& axis, auto value) {
    using T = decltype(value);
    return axis.empty() ? std::vector<T>{value} : std::vector<T>(axis.begin(), axis.end());
  };
  const auto heads = or_base(head, *base.head);
  const auto blocks = or_base(conv_blocks, base.conv_blocks);
  const auto bns = or_base(batchnorm, base.batchnorm);
  const auto acts = or_base(activation, base.activation);
  const auto ratios = or_base(data_ratio, base.data_ratio);
  const auto lrs = or_base(lr, base.lr);

  std::vector<AblationCell> out;
  for (auto h : heads)
    for (auto n : blocks)
      for (bool bn : bns)
        for (auto a : acts)
          for (double r : ratios)
            for (double l : lrs) {
              AblationCell c = base;
              c.head = h;
              c.head_label = to_string(h);
              c.conv_blocks = n;
              c.batchnorm = bn;
              c.activation = a;
              c.data_ratio = r;
              c.lr = l;
              c.cell_id = "grid/" + std::to_string(out.size());
              out.push_back(c);
            }
  if (out.empty()) throw UsageError("ablation grid is empty");
  return out;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"table4", "table6", "table7", "table8"};
  return names;
}

std::vector<AblationCell> preset_cells(const std::string& preset, const FusionConfig& base_model,
                                       const TrainConfig& base_train) {
  const AblationCell base = base_cell(base_model, base_train);
  std::vector<AblationCell> out;
  auto row = [&](const std::string& id, std::optional<HeadKind> head, const std::string& label) -> AblationCell& {
    AblationCell c = base;
    c.cell_id = preset + "/" + id;
    c.head = head;
    c.head_label = label;
    out.push_back(c);
    return out.back();
  };

  if (preset == "table4") {
    // Row order of the fusion-head comparison. FBP and Transformer heads are
    // not implemented; their rows are kept so the table keeps its shape.
    row("mlp", HeadKind::mlp_baseline, "mlp_baseline");
    row("attention", HeadKind::attention_only, "attention_only");
    row("fbp", std::nullopt, "fbp");
    row("convolution", HeadKind::conv_only, "conv_only");
    row("transformer", std::nullopt, "transformer");
    row("conv_attention", HeadKind::conv_attention, "conv_attention");
  } else if (preset == "table6") {
    row("relu", HeadKind::conv_attention, "conv_attention").activation = Activation::relu;
    row("attention_conv_block_x0", HeadKind::attention_only, "attention_only").conv_blocks = 0;
    for (std::size_t n = 1; n <= 3; ++n) {
      row("conv_block_x" + std::to_string(n), HeadKind::conv_attention, "conv_attention").conv_blocks = n;
    }
    row("without_batchnorm", HeadKind::conv_attention, "conv_attention").batchnorm = false;
  } else if (preset == "table7") {
    for (int pct : {20, 40, 60, 80, 100}) {
      row("ratio_" + std::to_string(pct), HeadKind::conv_attention, "conv_attention").data_ratio = pct / 100.0;
    }
  } else if (preset == "table8") {
    for (double lr : swept_learning_rates()) row("lr_" + short_double(lr), HeadKind::conv_attention, "conv_attention").lr = lr;
  } else {
    throw UsageError("unknown preset '" + preset + "' (expected table4, table6, table7 or table8)");
  }
  return out;
}

namespace {

AblationRow run_cell(const AblationCell& cell, const FusionConfig& base_model, const TrainConfig& base_train,
                     const AblationData& data) {
  AblationRow row;
  row.cell = cell;
  if (!cell.head) {
    row.status = "excluded";
    return row;
  }
  try {
    FusionConfig mc = base_model;
    mc.head = *cell.head;
    mc.n_conv_blocks = cell.conv_blocks;
    mc.use_batchnorm = cell.batchnorm;
    mc.activation = cell.activation;
    TrainConfig tc = base_train;
    tc.learning_rate = cell.lr;
    tc.seed = cell.seed;

    const Dataset pool =
        cell.data_ratio < 1.0 ? subsample_ratio(data.train, cell.data_ratio, data.ratio_target, cell.seed) : data.train;
    const auto split = split_train_val(pool, tc.val_fraction, cell.seed ^ 0x5851F42D4C957F2DULL);
    Rng init(cell.seed);
    FusionModel model = FusionModel::build(mc, init);
    const RunResult run = train(model, split.train, split.val, tc);

    const Dataset noisy = inject_noise(data.test, data.noise_sigmas, data.noise_seed);
    const auto noise = split_metrics(model, noisy);
    row.train_waf = run.val.waf;
    row.train_acc = run.val.acc;
    row.noise_waf = noise.waf;
    row.epochs_run = run.epochs_run;
    row.curve = run.curve;
    row.final_loss = run.curve.empty() ? std::nan("") : run.curve.back().train_loss;
    row.wall_ms = run.wall_ms;
  } catch (const std::exception& e) {
    row.status = std::string("failed: ") + e.what();
  }
  return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const FusionConfig& base_model,
                                      const TrainConfig& base_train, const AblationData& data, std::size_t jobs) {
  if (cells.empty()) throw UsageError("ablation grid is empty");
  std::vector<AblationRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) rows[i] = run_cell(cells[i], base_model, base_train, data);
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = std::string(kAblationCsvHeader) + "\n";
  for (const auto& r : rows) {
    const auto& c = r.cell;
    out += c.cell_id + "," + c.head_label + "," + std::to_string(c.conv_blocks) + "," + (c.batchnorm ? "true" : "false") +
           "," + to_string(c.activation) + "," + format_double(c.data_ratio) + "," + format_double(c.lr) + "," +
           std::to_string(c.seed) + ",";
    if (r.ok()) {
      char wall[32];
      std::snprintf(wall, sizeof wall, "%.0f", r.wall_ms);
      out += format_percent(r.train_waf) + "," + format_percent(r.train_acc) + "," + format_percent(r.noise_waf) + "," +
             std::to_string(r.epochs_run) + "," + wall;
    } else {
      out += "NA,NA,NA," + std::string(r.status == "excluded" ? "excluded" : "failed") + ",NA";
    }
    out += "\n";
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-34s %10s %10s %10s %7s\n", "cell", "Train WAF", "Train ACC", "Noise WAF", "epochs");
  out += buf;
  for (const auto& r : rows) {
    if (r.ok()) {
      std::snprintf(buf, sizeof buf, "%-34s %10s %10s %10s %7zu\n", r.cell.cell_id.c_str(), format_percent(r.train_waf).c_str(),
                    format_percent(r.train_acc).c_str(), format_percent(r.noise_waf).c_str(), r.epochs_run);
    } else {
      std::snprintf(buf, sizeof buf, "%-34s %s\n", r.cell.cell_id.c_str(), r.status.c_str());
    }
    out += buf;
  }
  return out;
}

}  // namespace caf
