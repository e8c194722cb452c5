#include "caf/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "caf/config_text.hpp"
#include "caf/error.hpp"

namespace caf {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw UsageError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_predictions(const std::vector<std::size_t>& reference,
                                                  const std::vector<std::size_t>& predicted, std::size_t num_classes) {
  if (reference.size() != predicted.size()) throw UsageError("confusion matrix: reference/prediction length mismatch");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < reference.size(); ++i) cm.add(reference[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(std::size_t reference, std::size_t predicted, std::uint64_t count) {
  if (reference >= n_ || predicted >= n_) throw UsageError("confusion matrix: class index out of range");
  counts_[reference * n_ + predicted] += count;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::support(std::size_t cls) const {
  std::uint64_t t = 0;
  for (std::size_t j = 0; j < n_; ++j) t += at(cls, j);
  return t;
}

std::uint64_t ConfusionMatrix::predicted(std::size_t cls) const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n_; ++i) t += at(i, cls);
  return t;
}

std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.num_classes(), 0.0);
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double fp = static_cast<double>(cm.predicted(c)) - tp;
    const double fn = static_cast<double>(cm.support(c)) - tp;
    if (tp > 0.0) out[c] = 2.0 * tp / (2.0 * tp + fp + fn);
  }
  return out;
}

double waf(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw UsageError("waf: empty confusion matrix");
  const auto f1 = per_class_f1(cm);
  double s = 0.0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) s += static_cast<double>(cm.support(c)) * f1[c];
  return s / static_cast<double>(total);
}

double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw UsageError("accuracy: empty confusion matrix");
  std::uint64_t trace = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) trace += cm.at(c, c);
  return static_cast<double>(trace) / static_cast<double>(total);
}

namespace {

std::set<std::string> normalized(const std::set<std::string>& labels) {
  std::set<std::string> out;
  for (const auto& l : labels) out.insert(to_lower(trim(l)));
  return out;
}

}  // namespace

SetScore set_scores(const std::set<std::string>& predicted, const std::set<std::string>& reference) {
  const auto p = normalized(predicted);
  const auto r = normalized(reference);
  std::size_t hits = 0;
  for (const auto& l : p) hits += r.count(l);
  SetScore s;
  s.accuracy_s = p.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(p.size());
  s.recall_s = r.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(r.size());
  s.avg = (s.accuracy_s + s.recall_s) / 2.0;
  return s;
}

CorpusSetScore corpus_set_scores(const std::vector<std::set<std::string>>& predicted,
                                 const std::vector<std::set<std::string>>& reference) {
  if (predicted.size() != reference.size()) throw UsageError("corpus_set_scores: length mismatch");
  CorpusSetScore out;
  out.samples = predicted.size();
  if (out.samples == 0) return out;
  double acc = 0.0, rec = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto s = set_scores(predicted[i], reference[i]);
    acc += s.accuracy_s;
    rec += s.recall_s;
    if (predicted[i].empty()) ++out.empty_predictions;
  }
  out.mean.accuracy_s = acc / static_cast<double>(out.samples);
  out.mean.recall_s = rec / static_cast<double>(out.samples);
  out.mean.avg = (out.mean.accuracy_s + out.mean.recall_s) / 2.0;
  return out;
}

std::string format_percent(double fraction) {
  // Hundredths of a percent, half up; the slack absorbs binary representation
  // error such as 0.66105 * 10000 = 6610.4999...
  const double hundredths = std::floor(fraction * 10000.0 + 0.5 + 1e-7);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", hundredths / 100.0);
  return buf;
}

MetricReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  MetricReport r;
  r.waf = waf(cm);
  r.acc = accuracy(cm);
  r.class_names = class_names;
  r.f1 = per_class_f1(cm);
  return r;
}

std::string MetricReport::to_text() const {
  KeyValueText kv;
  kv.set("run", run_name);
  kv.set("config_hash", config_hash);
  kv.set("dataset_hash", dataset_hash);
  kv.set("waf", format_double(waf));
  kv.set("acc", format_double(acc));
  kv.set("waf_percent", format_percent(waf));
  kv.set("acc_percent", format_percent(acc));
  for (std::size_t c = 0; c < f1.size() && c < class_names.size(); ++c) kv.set("f1." + class_names[c], format_double(f1[c]));
  if (set_metrics) {
    kv.set("set.accuracy_s", format_percent(set_metrics->mean.accuracy_s));
    kv.set("set.recall_s", format_percent(set_metrics->mean.recall_s));
    kv.set("set.avg", format_percent(set_metrics->mean.avg));
    kv.set("set.samples", std::to_string(set_metrics->samples));
    kv.set("set.empty_predictions", std::to_string(set_metrics->empty_predictions));
  }
  return kv.canonical();
}

std::string MetricReport::csv_header() { return "run,config_hash,dataset_hash,waf,acc"; }

std::string MetricReport::to_csv_row() const {
  return run_name + "," + config_hash + "," + dataset_hash + "," + format_percent(waf) + "," + format_percent(acc);
}

}  // namespace caf
