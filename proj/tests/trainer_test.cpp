#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "caf/dataset.hpp"
#include "caf/error.hpp"
#include "caf/rng.hpp"
#include "caf/trainer.hpp"

using namespace caf;

namespace {

SynthSpec separable(std::size_t per_class, std::uint64_t seed) {
  SynthSpec s;
  s.samples_per_class = per_class;
  s.seed = seed;
  s.streams = {{{"hubert", Modality::audio, 8}, 5.0, 0.1},
               {{"clip", Modality::visual, 8}, 5.0, 0.1},
               {{"videomae", Modality::visual, 8}, 5.0, 0.1},
               {{"baichuan", Modality::text, 8}, 5.0, 0.1}};
  return s;
}

FusionConfig model_for(const Dataset& ds, HeadKind head = HeadKind::conv_attention) {
  FusionConfig c;
  c.streams = ds.streams;
  c.num_classes = ds.num_classes();
  c.d_common = 8;
  c.head = head;
  return c;
}

std::vector<double> flat_params(FusionModel& m) {
  std::vector<double> out;
  for (auto& e : m.state()) out.insert(out.end(), e.tensor->values().begin(), e.tensor->values().end());
  return out;
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  for (std::size_t C : {2, 6, 11}) {
    const auto r = cross_entropy(Tensor({3, C}, 0.7), {0, 1, C - 1});
    EXPECT_NEAR(r.loss, std::log(static_cast<double>(C)), 1e-14);
  }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t B = 1 + rng.below(5), C = 2 + rng.below(6);
    Tensor logits = scale(randn(rng, {B, C}), 3.0);
    std::vector<std::size_t> t(B);
    for (auto& v : t) v = rng.below(C);
    const auto r = cross_entropy(logits, t);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double saved = logits[i];
      logits[i] = saved + 1e-5;
      const double up = cross_entropy(logits, t).loss;
      logits[i] = saved - 1e-5;
      const double down = cross_entropy(logits, t).loss;
      logits[i] = saved;
      EXPECT_LE(gradient_relative_error(r.logit_grad[i], (up - down) / 2e-5), 1e-6);
    }
  }
}

TEST(CrossEntropy, LossFallsMonotonicallyWithMargin) {
  double prev = INFINITY;
  for (double margin = 0.0; margin <= 50.0; margin += 2.5) {
    Tensor logits({1, 4}, 0.0);
    logits[2] = margin;
    const double loss = cross_entropy(logits, {2}).loss;
    EXPECT_LT(loss, prev);
    EXPECT_GE(loss, 0.0);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-20);
  EXPECT_TRUE(std::isfinite(cross_entropy(Tensor({1, 2}, std::vector<double>{1000, -1000}), {1}).loss));
}

TEST(CrossEntropy, TargetOutOfRange) { EXPECT_THROW(cross_entropy(Tensor({1, 3}), {3}), UsageError); }

TEST(Adam, MatchesHandReference) {
  // Toy problem: L(p) = sum_i a_i (p_i - t_i)^2 over three parameters.
  const double a[3] = {1.0, 3.0, 0.5}, target[3] = {0.3, -1.2, 2.0};
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Param p("p", Tensor({3}, std::vector<double>{1.0, 1.0, -1.0}));
  AdamOptimizer adam(lr, b1, b2, eps);
  double ref[3] = {1.0, 1.0, -1.0}, m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
  for (int step = 1; step <= 100; ++step) {
    for (int i = 0; i < 3; ++i) p.grad[i] = 2 * a[i] * (p.value[i] - target[i]);
    adam.step({&p});
    for (int i = 0; i < 3; ++i) {
      const double g = 2 * a[i] * (ref[i] - target[i]);
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mhat = m[i] / (1 - std::pow(b1, step));
      const double vhat = v[i] / (1 - std::pow(b2, step));
      ref[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      EXPECT_NEAR(p.value[i], ref[i], 1e-12) << "step " << step;
    }
  }
  EXPECT_EQ(adam.steps(), 100u);
}

TEST(Sgd, PlainGradientStep) {
  Param p("p", Tensor({2}, std::vector<double>{1.0, 2.0}));
  p.grad = Tensor({2}, std::vector<double>{0.5, -1.0});
  SgdOptimizer(0.1).step({&p});
  EXPECT_DOUBLE_EQ(p.value[0], 0.95);
  EXPECT_DOUBLE_EQ(p.value[1], 2.1);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate(true, 3));
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(true, 3), UsageError);
  c.learning_rate = 1e-3;
  c.batch_size = 1;
  EXPECT_THROW(c.validate(true, 1), UsageError);
  EXPECT_NO_THROW(c.validate(true, 3));
  EXPECT_NO_THROW(c.validate(false, 1));
  TrainConfig k;
  k.learning_rate = 5e-3;
  k.optimizer = OptimizerKind::sgd;
  k.patience = 4;
  const TrainConfig back = TrainConfig::from_kv(k.to_kv());
  EXPECT_EQ(back.to_kv(), k.to_kv());
}

TEST(TrainConfig, SweptLearningRates) {
  for (double lr : {1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2}) EXPECT_TRUE(is_swept_learning_rate(lr));
  EXPECT_FALSE(is_swept_learning_rate(2e-3));
  const Dataset ds = generate_synthetic(separable(4, 1));
  Rng rng(1);
  FusionModel m = FusionModel::build(model_for(ds), rng);
  TrainConfig c;
  c.epochs = 1;
  c.learning_rate = 2e-3;
  EXPECT_FALSE(train(m, ds, Dataset{}, c).lr_in_sweep);
}

TEST(Train, ZeroEpochsLeavesModelUntouched) {
  const Dataset ds = generate_synthetic(separable(5, 2));
  const auto parts = split_train_val(ds, 0.2, 2);
  Rng rng(3);
  FusionModel m = FusionModel::build(model_for(ds), rng);
  const auto before = flat_params(m);
  const SplitMetrics initial = split_metrics(m, parts.val);
  TrainConfig c;
  c.epochs = 0;
  const RunResult r = train(m, parts.train, parts.val, c);
  EXPECT_TRUE(r.curve.empty());
  EXPECT_EQ(r.epochs_run, 0u);
  EXPECT_EQ(flat_params(m), before);
  EXPECT_EQ(r.val.waf, initial.waf);
  EXPECT_EQ(r.val.acc, initial.acc);
}

TEST(Train, DeterministicReplay) {
  const Dataset ds = generate_synthetic(separable(6, 4));
  const auto parts = split_train_val(ds, 0.2, 4);
  TrainConfig c;
  c.epochs = 15;
  c.batch_size = 8;
  c.seed = 77;
  std::vector<std::vector<double>> params;
  std::vector<std::string> curves;
  for (int run = 0; run < 2; ++run) {
    Rng rng(c.seed);
    FusionModel m = FusionModel::build(model_for(ds), rng);
    const RunResult r = train(m, parts.train, parts.val, c);
    params.push_back(flat_params(m));
    curves.push_back(format_loss_curve(r.curve));
    EXPECT_EQ(r.curve.size(), r.epochs_run);
    for (const auto& e : r.curve) EXPECT_TRUE(std::isfinite(e.train_loss));
  }
  EXPECT_EQ(params[0], params[1]);
  EXPECT_EQ(curves[0], curves[1]);
}

TEST(Train, EarlyStoppingKeepsBestCheckpoint) {
  SynthSpec s = separable(12, 5);
  for (auto& st : s.streams) st.separation = 0.6, st.sigma = 1.0;  // hard enough that validation WAF wanders
  const Dataset ds = generate_synthetic(s);
  const auto parts = split_train_val(ds, 0.3, 5);
  for (std::size_t patience : {0, 2, 5}) {
    Rng rng(6);
    FusionModel m = FusionModel::build(model_for(ds), rng);
    const double initial = split_metrics(m, parts.val).waf;
    TrainConfig c;
    c.epochs = 40;
    c.batch_size = 8;
    c.learning_rate = 5e-3;
    c.patience = patience;
    const RunResult r = train(m, parts.train, parts.val, c);
    double best = initial;
    for (const auto& e : r.curve) best = std::max(best, e.val_waf);
    EXPECT_EQ(r.val.waf, best);
    for (std::size_t i = 0; i < r.best_epoch; ++i) EXPECT_LE(r.curve[i].val_waf, r.val.waf);
    if (patience > 0 && r.epochs_run < c.epochs) {
      EXPECT_EQ(r.epochs_run, r.best_epoch + patience);
    }
  }
}

TEST(Train, OverfitsSmallSeparableSet) {
  SynthSpec s = separable(1, 7);
  s.num_classes = 4;
  s.samples_per_class = 8;  // 32 samples
  const Dataset ds = generate_synthetic(s);
  Rng rng(7);
  FusionModel m = FusionModel::build(model_for(ds), rng);
  TrainConfig c;
  c.epochs = 500;
  c.learning_rate = 1e-3;
  const RunResult r = train(m, ds, Dataset{}, c);
  EXPECT_EQ(r.train.acc, 1.0);
}

TEST(Train, EveryHeadLearnsSeparableBenchmark) {
  const Dataset ds = generate_synthetic(separable(25, 8));
  const auto parts = split_train_val(ds, 0.2, 8);
  for (HeadKind head : {HeadKind::conv_attention, HeadKind::attention_only, HeadKind::conv_only, HeadKind::mlp_baseline}) {
    Rng rng(9);
    FusionModel m = FusionModel::build(model_for(ds, head), rng);
    TrainConfig c;
    c.epochs = 100;
    const RunResult r = train(m, parts.train, parts.val, c);
    EXPECT_GE(r.val.acc, 0.95) << to_string(head);
  }
}

TEST(Train, NonFiniteLossNamesEpochAndBatch) {
  const Dataset ds = generate_synthetic(separable(4, 10));
  Rng rng(10);
  FusionModel m = FusionModel::build(model_for(ds), rng);
  m.classifier().weight.value[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c;
  c.epochs = 3;
  try {
    train(m, ds, Dataset{}, c);
    FAIL() << "expected a numeric failure";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
  }
}

TEST(Train, UnlabeledTrainingSetIsRejected) {
  SynthSpec s = separable(3, 11);
  s.labeled = false;
  const Dataset ds = generate_synthetic(s);
  Rng rng(11);
  FusionModel m = FusionModel::build(model_for(ds), rng);
  EXPECT_THROW(train(m, ds, Dataset{}, TrainConfig{}), UsageError);
}

TEST(Gradcheck, DefaultSmallConfig) {
  FusionConfig c;
  c.streams = {{"a", Modality::audio, 10}, {"v", Modality::visual, 8}, {"t", Modality::text, 6}};
  c.d_common = 8;
  c.n_conv_blocks = 2;
  const auto rep = gradcheck(c, 0, 4);
  EXPECT_TRUE(rep.passed()) << rep.to_text();
  Rng rng(0);
  EXPECT_EQ(rep.checked, FusionModel::build(c, rng).parameter_count());
}

TEST(LossCurve, CsvLayout) {
  std::vector<EpochRecord> curve = {{1, 1.5, 0.25, NAN}, {2, 1.25, NAN, NAN}};
  EXPECT_EQ(format_loss_curve(curve), "epoch,train_loss,val_waf\n1,1.5,0.25\n2,1.25,NA\n");
}
