#include "caf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "caf/error.hpp"
#include "caf/rng.hpp"

namespace caf {

LossResult cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  if (logits.rank() != 2) throw UsageError("cross_entropy: logits must be [B,C], got " + shape_string(logits.shape()));
  const std::size_t batch = logits.extent(0), classes = logits.extent(1);
  if (targets.size() != batch) throw UsageError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " + std::to_string(batch));

  LossResult res;
  res.logit_grad = Tensor({batch, classes});
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b] >= classes) {
      throw UsageError("cross_entropy: target " + std::to_string(targets[b]) + " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = logits.values().data() + b * classes;
    std::size_t arg = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (row[c] > row[arg]) arg = c;
    const double mx = row[arg];
    // log1p keeps the loss resolvable when the winning logit dominates.
    double rest = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
      if (c != arg) rest += std::exp(row[c] - mx);
    const double log_z = std::log1p(rest);
    total += -(row[targets[b]] - mx - log_z);
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(row[c] - mx - log_z);
      res.logit_grad[b * classes + c] = (p - (c == targets[b] ? 1.0 : 0.0)) / static_cast<double>(batch);
    }
  }
  res.loss = total / static_cast<double>(batch);
  return res;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw UsageError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

const std::vector<double>& swept_learning_rates() {
  static const std::vector<double> rates = {1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2};
  return rates;
}

bool is_swept_learning_rate(double lr) {
  for (double r : swept_learning_rates())
    if (std::abs(lr - r) <= 1e-12 * r) return true;
  return false;
}

void TrainConfig::validate(bool batchnorm, std::size_t num_streams) const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw UsageError("train: learning_rate must be positive");
  if (batch_size == 0) throw UsageError("train: batch_size must be positive");
  // Train-mode BatchNorm needs at least two values per channel (batch x streams).
  if (batchnorm && batch_size * num_streams < 2) throw UsageError("train: batch_size >= 2 required with batchnorm on a single stream");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("train: adam betas must lie in [0,1)");
  if (!(adam_epsilon > 0.0)) throw UsageError("train: adam_epsilon must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw UsageError("train: val_fraction must lie in [0,1)");
}

KeyValueText TrainConfig::to_kv() const {
  KeyValueText kv;
  kv.set("lr", format_double(learning_rate));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("seed", std::to_string(seed));
  kv.set("optimizer", to_string(optimizer));
  kv.set("beta1", format_double(beta1));
  kv.set("beta2", format_double(beta2));
  kv.set("adam_epsilon", format_double(adam_epsilon));
  kv.set("shuffle", shuffle ? "true" : "false");
  kv.set("patience", std::to_string(patience));
  kv.set("val_fraction", format_double(val_fraction));
  kv.set("track_train_accuracy", track_train_accuracy ? "true" : "false");
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValueText& kv) {
  TrainConfig c;
  auto count = [&kv](const std::string& key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw UsageError("config key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.learning_rate = kv.get_double("lr", c.learning_rate);
  c.epochs = count("epochs", c.epochs);
  c.batch_size = count("batch_size", c.batch_size);
  c.seed = kv.get_u64("seed", c.seed);
  c.optimizer = parse_optimizer(kv.get_string("optimizer", to_string(c.optimizer)));
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_epsilon = kv.get_double("adam_epsilon", c.adam_epsilon);
  c.shuffle = kv.get_bool("shuffle", c.shuffle);
  c.patience = count("patience", c.patience);
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.track_train_accuracy = kv.get_bool("track_train_accuracy", c.track_train_accuracy);
  return c;
}

void SgdOptimizer::step(const std::vector<Param*>& params) {
  for (auto* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr_ * p->grad[i];
}

void AdamOptimizer::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw UsageError("AdamOptimizer: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> labeled_indices(const Dataset& ds) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (ds.label_of(ds.records[i].sample_id)) out.push_back(i);
  return out;
}

std::vector<Tensor> snapshot(FusionModel& model) {
  std::vector<Tensor> out;
  for (const auto& e : model.state()) out.push_back(*e.tensor);
  return out;
}

void restore(FusionModel& model, const std::vector<Tensor>& saved) {
  auto entries = model.state();
  for (std::size_t i = 0; i < entries.size(); ++i) *entries[i].tensor = saved[i];
}

}  // namespace

ConfusionMatrix evaluate(const FusionModel& model, const Dataset& ds, std::size_t batch_size) {
  const auto& cfg = model.config();
  if (ds.num_classes() != cfg.num_classes) {
    throw UsageError("evaluate: dataset has " + std::to_string(ds.num_classes()) + " classes, model has " +
                     std::to_string(cfg.num_classes));
  }
  ConfusionMatrix cm(cfg.num_classes);
  const auto idx = labeled_indices(ds);
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::span<const std::size_t> chunk(idx.data() + start, std::min(batch_size, idx.size() - start));
    const auto preds = model.predict(gather_features(ds, cfg.streams, chunk));
    const auto refs = gather_labels(ds, chunk);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(refs[i], preds[i]);
  }
  return cm;
}

SplitMetrics split_metrics(const FusionModel& model, const Dataset& ds) {
  SplitMetrics m;
  const auto cm = evaluate(model, ds);
  m.samples = cm.total();
  if (m.samples == 0) {
    m.waf = m.acc = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  m.waf = waf(cm);
  m.acc = accuracy(cm);
  return m;
}

RunResult train(FusionModel& model, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& mcfg = model.config();
  cfg.validate(mcfg.use_batchnorm && mcfg.has_conv_branch() && mcfg.n_conv_blocks > 0, mcfg.num_streams());

  RunResult res;
  res.lr_in_sweep = is_swept_learning_rate(cfg.learning_rate);
  res.config_hash = hex64(fnv1a64(mcfg.to_kv().canonical() + cfg.to_kv().canonical()));

  std::vector<std::size_t> order = labeled_indices(train_ds);
  if (order.empty() && cfg.epochs > 0) throw UsageError("train: training set has no labeled samples");
  const bool has_val = !labeled_indices(val_ds).empty();

  Rng rng(cfg.seed);
  SgdOptimizer sgd(cfg.learning_rate);
  AdamOptimizer adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  const auto params = model.params();

  double best_waf = has_val ? split_metrics(model, val_ds).waf : std::numeric_limits<double>::quiet_NaN();
  std::vector<Tensor> best_state;
  if (has_val) best_state = snapshot(model);
  std::size_t since_best = 0;

  // Train-mode BatchNorm needs two values per channel; fold a lone trailing sample into the previous batch.
  const bool needs_pairs = mcfg.use_batchnorm && mcfg.has_conv_branch() && mcfg.n_conv_blocks > 0 && mcfg.num_streams() == 1;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      for (std::size_t i = 0; i + 1 < order.size(); ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
    }
    std::vector<std::pair<std::size_t, std::size_t>> batches;  // [start, end)
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) batches.emplace_back(s, std::min(order.size(), s + cfg.batch_size));
    if (needs_pairs && batches.size() > 1 && batches.back().second - batches.back().first < 2) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const std::span<const std::size_t> chunk(order.data() + batches[bi].first, batches[bi].second - batches[bi].first);
      const auto inputs = gather_features(train_ds, mcfg.streams, chunk);
      const auto targets = gather_labels(train_ds, chunk);
      model.zero_grad();
      ForwardTrace tr;
      LossResult loss;
      try {
        tr = model.forward(inputs, Mode::train);
        loss = cross_entropy(tr.logits, targets);
      } catch (const NumericError& e) {
        throw NumericError("non-finite values at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) + ": " + e.what());
      }
      if (!std::isfinite(loss.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
      }
      model.update_running_stats(tr);
      model.backward(tr, loss.logit_grad);
      if (cfg.optimizer == OptimizerKind::adam) {
        adam.step(params);
      } else {
        sgd.step(params);
      }
      loss_sum += loss.loss * static_cast<double>(chunk.size());
      seen += chunk.size();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_waf = has_val ? split_metrics(model, val_ds).waf : std::numeric_limits<double>::quiet_NaN();
    rec.train_acc = cfg.track_train_accuracy ? split_metrics(model, train_ds).acc : std::numeric_limits<double>::quiet_NaN();
    res.curve.push_back(rec);
    res.epochs_run = epoch;

    if (has_val) {
      if (rec.val_waf > best_waf) {
        best_waf = rec.val_waf;
        best_state = snapshot(model);
        res.best_epoch = epoch;
        since_best = 0;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        break;
      }
    } else {
      res.best_epoch = epoch;
    }
  }

  if (has_val) restore(model, best_state);
  res.train = split_metrics(model, train_ds);
  if (has_val) res.val = split_metrics(model, val_ds);
  else res.val.waf = res.val.acc = std::numeric_limits<double>::quiet_NaN();
  res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::string format_loss_curve(const std::vector<EpochRecord>& curve) {
  std::string out = "epoch,train_loss,val_waf\n";
  for (const auto& r : curve) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," +
           (std::isnan(r.val_waf) ? std::string("NA") : format_double(r.val_waf)) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::string GradcheckReport::to_text() const {
  std::string out = "layer,checked,max_rel_error,max_abs_error\n";
  for (const auto& e : layers) {
    char buf[64];
    std::snprintf(buf, sizeof buf, ",%.3e,%.3e\n", e.max_rel_error, e.max_abs_error);
    out += e.layer + "," + std::to_string(e.checked) + buf;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "overall,%zu,%.3e,\n", checked, max_rel_error);
  out += buf;
  return out;
}

GradcheckReport gradcheck(const FusionConfig& config, std::uint64_t seed, std::size_t batch_size, double step) {
  Rng rng(seed);
  FusionModel model = FusionModel::build(config, rng);
  std::vector<Tensor> inputs;
  for (const auto& s : config.streams) inputs.push_back(randn(rng, {batch_size, s.input_dim}));
  std::vector<std::size_t> targets(batch_size);
  for (auto& t : targets) t = static_cast<std::size_t>(rng.below(config.num_classes));

  model.zero_grad();
  const auto tr = model.forward(inputs, Mode::train);
  model.backward(tr, cross_entropy(tr.logits, targets).logit_grad);

  auto loss_at = [&] { return cross_entropy(model.forward(inputs, Mode::train).logits, targets).loss; };

  GradcheckReport rep;
  rep.step = step;
  std::map<std::string, std::size_t> slot;
  for (auto* p : model.params()) {
    const std::string layer = p->name.substr(0, p->name.rfind('.'));
    auto [it, inserted] = slot.emplace(layer, rep.layers.size());
    if (inserted) rep.layers.push_back({layer, 0, 0.0, 0.0});
    auto& entry = rep.layers[it->second];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = loss_at();
      p->value[i] = saved - step;
      const double down = loss_at();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      entry.max_rel_error = std::max(entry.max_rel_error, gradient_relative_error(analytic, numeric));
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(analytic - numeric));
      ++entry.checked;
    }
    rep.checked += p->value.size();
    rep.max_rel_error = std::max(rep.max_rel_error, entry.max_rel_error);
  }
  return rep;
}

}  // namespace caf
