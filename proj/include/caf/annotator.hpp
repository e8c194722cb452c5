#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "caf/dataset.hpp"

namespace caf {

enum class PromptLanguage { english, chinese };
enum class OutputKind { category_only, full_description, keyword_extraction };

std::string to_string(OutputKind k);

struct PromptSpec {
  std::string id;
  PromptLanguage language = PromptLanguage::english;
  std::string template_text;
  OutputKind output_kind = OutputKind::category_only;
};

/// Prompt templates used to obtain annotations from the external models.
/// Stored as data only; nothing in this library sends them anywhere.
const std::vector<PromptSpec>& builtin_prompts();
const PromptSpec* find_prompt(std::string_view id);

/// One externally produced annotation of an unlabeled sample.
struct AnnotationRecord {
  std::string sample_id;
  std::string description;
  std::vector<std::string> labels;
  std::string prompt_id;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// Line-delimited JSON, one object per line with fields id, description,
/// labels and prompt_id. Malformed lines raise FormatError with the line number.
std::vector<AnnotationRecord> parse_annotations(std::string_view text, const std::string& source = "<annotations>");
std::vector<AnnotationRecord> load_annotations(const std::string& path);
std::string format_annotations(const std::vector<AnnotationRecord>& records);

/// Lowercased, trimmed form used for every label comparison.
std::string normalize_label(std::string_view label);

/// Keyword phrase -> label table, scanned longest phrase first.
class Lexicon {
 public:
  struct Entry {
    std::string phrase;
    std::string label;
  };

  /// Tab-separated `phrase<TAB>label` lines; `#` comments and blank lines are skipped.
  static Lexicon parse(std::string_view text, const std::string& source = "<lexicon>");
  static Lexicon load(const std::string& path);
  /// Small built-in table covering the six classes and common synonyms.
  static Lexicon builtin();

  void add(std::string_view phrase, std::string_view label);
  /// Phrases by descending length, ties broken lexicographically.
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

/// Case-insensitive left-to-right scan. At each position the longest matching
/// phrase wins and consumes its span; unmatched characters are skipped.
std::set<std::string> extract_keywords(std::string_view description, const Lexicon& lexicon);

/// Index of the single class name present in `labels`, or nullopt when none
/// or several of them are present.
std::optional<std::size_t> to_class_labels(const std::set<std::string>& labels, const std::vector<std::string>& classes);

struct DropEntry {
  std::string sample_id;
  std::string reason;
};

struct AugmentResult {
  Dataset dataset;
  std::vector<DropEntry> dropped;
};

/// Union of the labeled set (tagged human) and every annotated unlabeled
/// sample whose annotation resolves to exactly one class (tagged pseudo).
/// The annotation's own labels are used when present; otherwise the
/// description is run through `lexicon`, if one is given.
AugmentResult build_augmented(const Dataset& labeled, const Dataset& unlabeled,
                              const std::vector<AnnotationRecord>& annotations, const Lexicon* lexicon = nullptr);

/// CSV `sample_id,reason`.
std::string format_drop_report(const std::vector<DropEntry>& dropped);

}  // namespace caf
