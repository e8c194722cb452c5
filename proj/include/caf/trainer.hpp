#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caf/config_text.hpp"
#include "caf/dataset.hpp"
#include "caf/fusion_model.hpp"
#include "caf/metrics.hpp"

namespace caf {

struct LossResult {
  double loss = 0.0;
  Tensor logit_grad;  // d(mean loss)/d(logits)
};

/// Mean over the batch of -log softmax(logits)[target], max-subtracted.
LossResult cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets);

enum class OptimizerKind { sgd, adam };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

/// The learning rates swept in the published experiments.
const std::vector<double>& swept_learning_rates();
bool is_swept_learning_rate(double lr);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool shuffle = true;
  std::size_t patience = 0;    // epochs without val improvement before stopping; 0 disables
  double val_fraction = 0.2;   // used when no explicit validation set is given
  bool track_train_accuracy = false;

  void validate(bool batchnorm, std::size_t num_streams) const;
  KeyValueText to_kv() const;
  static TrainConfig from_kv(const KeyValueText& kv);
};

class SgdOptimizer {
 public:
  explicit SgdOptimizer(double lr) : lr_(lr) {}
  void step(const std::vector<Param*>& params);

 private:
  double lr_;
};

/// Bias-corrected Adam: p -= lr * m_hat / (sqrt(v_hat) + eps).
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double epsilon)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}
  void step(const std::vector<Param*>& params);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_waf = 0.0;    // NaN without a validation set
  double train_acc = 0.0;  // NaN unless tracked
};

struct SplitMetrics {
  double waf = 0.0;
  double acc = 0.0;
  std::size_t samples = 0;
};

struct RunResult {
  SplitMetrics train;
  SplitMetrics val;
  std::vector<EpochRecord> curve;
  std::string config_hash;
  double wall_ms = 0.0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  bool lr_in_sweep = true;
};

/// Eval-mode confusion matrix over every labeled record.
ConfusionMatrix evaluate(const FusionModel& model, const Dataset& ds, std::size_t batch_size = 256);
SplitMetrics split_metrics(const FusionModel& model, const Dataset& ds);

/// Minibatch training with cross-entropy. With a non-empty validation set the
/// parameters with the best validation WAF (earliest on ties) are restored at
/// the end. Throws NumericError naming the epoch and batch on a non-finite loss.
RunResult train(FusionModel& model, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg);

std::string format_loss_curve(const std::vector<EpochRecord>& curve);

struct GradcheckEntry {
  std::string layer;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> layers;  // declaration order
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double step = 0.0;

  bool passed(double tolerance = 1e-5) const { return checked > 0 && max_rel_error <= tolerance; }
  std::string to_text() const;
};

/// Relative error used by the gradient checks: |a - n| / max(|a|, |n|, floor).
double gradient_relative_error(double analytic, double numeric, double floor = 1e-4);

/// Central differences of the cross-entropy loss for every parameter of a
/// model built from `config`, on one random train-mode batch.
GradcheckReport gradcheck(const FusionConfig& config, std::uint64_t seed, std::size_t batch_size = 4, double step = 1e-6);

}  // namespace caf
