#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace caf {

/// Rows are reference classes, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);
  static ConfusionMatrix from_predictions(const std::vector<std::size_t>& reference,
                                          const std::vector<std::size_t>& predicted, std::size_t num_classes);

  void add(std::size_t reference, std::size_t predicted, std::uint64_t count = 1);

  std::size_t num_classes() const { return n_; }
  std::uint64_t at(std::size_t reference, std::size_t predicted) const { return counts_[reference * n_ + predicted]; }
  std::uint64_t total() const;
  std::uint64_t support(std::size_t cls) const;    // row sum
  std::uint64_t predicted(std::size_t cls) const;  // column sum

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

/// F1 per class; zero for a class with no true positives.
std::vector<double> per_class_f1(const ConfusionMatrix& cm);
/// Support-weighted mean of per-class F1.
double waf(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

struct SetScore {
  double accuracy_s = 0.0;
  double recall_s = 0.0;
  double avg = 0.0;
};

/// Overlap ratios for one sample; labels compare after lowercasing and trimming.
SetScore set_scores(const std::set<std::string>& predicted, const std::set<std::string>& reference);

struct CorpusSetScore {
  SetScore mean;  // mean of per-sample scores
  std::size_t samples = 0;
  std::size_t empty_predictions = 0;
};
CorpusSetScore corpus_set_scores(const std::vector<std::set<std::string>>& predicted,
                                 const std::vector<std::set<std::string>>& reference);

/// Fraction in [0,1] as a percentage with two decimals, rounding half up.
std::string format_percent(double fraction);

struct MetricReport {
  std::string run_name;
  std::string config_hash;
  std::string dataset_hash;
  double waf = 0.0;
  double acc = 0.0;
  std::vector<std::string> class_names;
  std::vector<double> f1;
  std::optional<CorpusSetScore> set_metrics;

  /// key=value text, one field per line.
  std::string to_text() const;
  static std::string csv_header();
  std::string to_csv_row() const;
};

MetricReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

}  // namespace caf
