#include "caf/annotator.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

#include "caf/binary_io.hpp"
#include "caf/error.hpp"

namespace caf {

std::string to_string(OutputKind k) {
  switch (k) {
    case OutputKind::category_only: return "category_only";
    case OutputKind::full_description: return "full_description";
    case OutputKind::keyword_extraction: return "keyword_extraction";
  }
  return "?";
}

const std::vector<PromptSpec>& builtin_prompts() {
  static const std::vector<PromptSpec> prompts = {
      {"emotion_llama_category", PromptLanguage::english,
       "Please determine which emotion label in the video represents: happy, sad, neutral, angry, worried, surprise.",
       OutputKind::category_only},
      {"emotion_llama_description", PromptLanguage::english,
       "Please analyze all the clues in the video and reason out the emotional label of the person in the video.",
       OutputKind::full_description},
      {"llama3_keywords", PromptLanguage::english,
       "You are an emotion analysis expert. Please analyze the input multimodal emotion description and output "
       "keywords related to the emotion description.\nInput: [Multimodal Emotion Description]\nOutput:",
       OutputKind::keyword_extraction},
      {"qwen_text", PromptLanguage::chinese,
       "Please analyze the provided text content and classify emotions into six categories: [neutral, angry, happy, "
       "sad, worried, surprise], and explain the specific reasons: <Text>",
       OutputKind::full_description},
      {"baichuan_prompt1", PromptLanguage::chinese,
       "Please analyze the provided text content and classify emotions into six categories: [neutral, angry, happy, "
       "sad, worried, surprise], and explain the specific reasons: <Text>",
       OutputKind::full_description},
      {"baichuan_prompt2", PromptLanguage::chinese,
       "Please analyze the provided text content and classify emotions into six categories: [neutral, angry, happy, "
       "sad, worried, surprise]: <Text>",
       OutputKind::category_only},
      {"baichuan_prompt3", PromptLanguage::chinese, "Please analyze the provided text content: <Text>",
       OutputKind::full_description},
  };
  return prompts;
}

const PromptSpec* find_prompt(std::string_view id) {
  for (const auto& p : builtin_prompts())
    if (p.id == id) return &p;
  return nullptr;
}

std::string normalize_label(std::string_view label) { return to_lower(trim(label)); }

// ---------------------------------------------------------------------------
// Annotation exchange

std::vector<AnnotationRecord> parse_annotations(std::string_view text, const std::string& source) {
  std::vector<AnnotationRecord> out;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const std::string at = source + ":" + std::to_string(line_no);
    AnnotationRecord rec;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw FormatError(at + ": expected a JSON object");
      rec.sample_id = j.at("id").get<std::string>();
      rec.description = j.value("description", std::string());
      rec.labels = j.value("labels", std::vector<std::string>());
      rec.prompt_id = j.value("prompt_id", std::string());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(at + ": malformed annotation: " + e.what());
    }
    if (rec.sample_id.empty()) throw FormatError(at + ": empty sample id");
    if (const auto* p = find_prompt(rec.prompt_id); p && p->output_kind == OutputKind::category_only && rec.labels.empty()) {
      throw FormatError(at + ": category-only annotation without labels");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<AnnotationRecord> load_annotations(const std::string& path) { return parse_annotations(read_file(path), path); }

std::string format_annotations(const std::vector<AnnotationRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.sample_id;
    j["description"] = r.description;
    j["labels"] = r.labels;
    j["prompt_id"] = r.prompt_id;
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lexicon

void Lexicon::add(std::string_view phrase, std::string_view label) {
  Entry e{normalize_label(phrase), normalize_label(label)};
  if (e.phrase.empty() || e.label.empty()) throw FormatError("lexicon: empty phrase or label");
  for (const auto& x : entries_)
    if (x.phrase == e.phrase) throw FormatError("lexicon: duplicate phrase '" + e.phrase + "'");
  const auto pos = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& x) {
    return x.phrase.size() < e.phrase.size() || (x.phrase.size() == e.phrase.size() && x.phrase > e.phrase);
  });
  entries_.insert(pos, std::move(e));
}

Lexicon Lexicon::parse(std::string_view text, const std::string& source) {
  Lexicon lex;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 2) throw FormatError(source + ":" + std::to_string(line_no) + ": expected phrase<TAB>label");
    try {
      lex.add(cols[0], cols[1]);
    } catch (const FormatError& e) {
      throw FormatError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return lex;
}

Lexicon Lexicon::load(const std::string& path) { return parse(read_file(path), path); }

Lexicon Lexicon::builtin() {
  Lexicon lex;
  for (const auto& c : emotion_classes()) lex.add(c, c);
  const std::pair<const char*, const char*> synonyms[] = {
      {"joyful", "happy"},      {"cheerful", "happy"},       {"delighted", "happy"}, {"unhappy", "sad"},
      {"sorrowful", "sad"},     {"depressed", "sad"},        {"calm", "neutral"},    {"furious", "angry"},
      {"annoyed", "angry"},     {"anxious", "worried"},      {"nervous", "worried"}, {"surprised", "surprise"},
      {"astonished", "surprise"}, {"excited", "excited"},    {"frustrated", "frustrated"},
  };
  for (const auto& [p, l] : synonyms) lex.add(p, l);
  return lex;
}

std::set<std::string> extract_keywords(std::string_view description, const Lexicon& lexicon) {
  const std::string text = to_lower(description);
  std::set<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const auto& e : lexicon.entries()) {
      if (text.compare(i, e.phrase.size(), e.phrase) == 0) {
        out.insert(e.label);
        i += e.phrase.size();
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

std::optional<std::size_t> to_class_labels(const std::set<std::string>& labels, const std::vector<std::string>& classes) {
  std::optional<std::size_t> found;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (labels.count(normalize_label(classes[c]))) {
      if (found) return std::nullopt;
      found = c;
    }
  }
  return found;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentResult build_augmented(const Dataset& labeled, const Dataset& unlabeled,
                              const std::vector<AnnotationRecord>& annotations, const Lexicon* lexicon) {
  if (labeled.streams != unlabeled.streams) {
    throw UsageError("build_augmented: labeled and unlabeled datasets declare different streams");
  }
  if (labeled.class_names != unlabeled.class_names) {
    throw UsageError("build_augmented: labeled and unlabeled datasets declare different classes");
  }
  std::set<std::string> labeled_ids;
  for (const auto& r : labeled.records) {
    if (!labeled.label_of(r.sample_id)) throw UsageError("build_augmented: labeled sample '" + r.sample_id + "' has no label");
    labeled_ids.insert(r.sample_id);
  }
  std::set<std::string> unlabeled_ids;
  for (const auto& r : unlabeled.records) {
    if (labeled_ids.count(r.sample_id)) {
      throw UsageError("build_augmented: sample id '" + r.sample_id + "' appears in both labeled and unlabeled sets");
    }
    unlabeled_ids.insert(r.sample_id);
  }
  std::map<std::string, const AnnotationRecord*> by_id;
  for (const auto& a : annotations) {
    if (!unlabeled_ids.count(a.sample_id)) throw UsageError("build_augmented: annotation for unknown sample '" + a.sample_id + "'");
    if (!by_id.emplace(a.sample_id, &a).second) throw UsageError("build_augmented: duplicate annotation for '" + a.sample_id + "'");
  }

  AugmentResult res;
  Dataset& out = res.dataset;
  out.name = labeled.name + "+pseudo";
  out.class_names = labeled.class_names;
  out.streams = labeled.streams;
  out.records = labeled.records;
  out.labels = labeled.labels;
  for (const auto& r : labeled.records) out.provenance[r.sample_id] = Provenance::human;

  for (const auto& r : unlabeled.records) {
    auto it = by_id.find(r.sample_id);
    if (it == by_id.end()) continue;
    const AnnotationRecord& a = *it->second;
    std::set<std::string> labels;
    for (const auto& l : a.labels) labels.insert(normalize_label(l));
    if (labels.empty() && lexicon) labels = extract_keywords(a.description, *lexicon);

    std::size_t canonical = 0;
    for (const auto& c : out.class_names) canonical += labels.count(normalize_label(c));
    const auto cls = to_class_labels(labels, out.class_names);
    if (!cls) {
      res.dropped.push_back({r.sample_id, canonical == 0 ? "no_class_label" : "ambiguous_labels"});
      continue;
    }
    out.records.push_back(r);
    out.labels[r.sample_id] = *cls;
    out.provenance[r.sample_id] = Provenance::pseudo;
  }
  return res;
}

std::string format_drop_report(const std::vector<DropEntry>& dropped) {
  std::string out = "sample_id,reason\n";
  for (const auto& d : dropped) out += d.sample_id + "," + d.reason + "\n";
  return out;
}

}  // namespace caf
