#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caf/config_text.hpp"
#include "caf/fusion_model.hpp"
#include "caf/tensor.hpp"

namespace caf {

enum class Provenance { human, pseudo };
std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& s);

/// The six emotion categories in the order the annotation prompt lists them.
const std::vector<std::string>& emotion_classes();
/// emotion_classes() for six classes, otherwise class0..class{n-1}.
std::vector<std::string> default_class_names(std::size_t num_classes);

struct FeatureRecord {
  std::string sample_id;
  std::map<std::string, std::vector<double>> features;  // stream name -> embedding

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

/// Feature records plus optional labels and provenance tags.
///
/// Feature values are always representable as 32-bit floats, the on-disk
/// precision, so a write/load round trip is exact.
struct Dataset {
  std::string name = "dataset";
  std::vector<std::string> class_names;
  std::vector<StreamSpec> streams;
  std::vector<FeatureRecord> records;
  std::map<std::string, std::size_t> labels;      // absent id = unlabeled
  std::map<std::string, Provenance> provenance;   // absent id = no provenance yet

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t size() const { return records.size(); }
  std::optional<std::size_t> label_of(const std::string& id) const;
  std::size_t count(Provenance p) const;

  /// Throws FormatError when ids repeat, labels are out of range or a
  /// record is missing a stream or has the wrong width.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Stable digest over ids, labels, provenance and feature bits.
std::uint64_t dataset_hash(const Dataset& ds);

// Directory layout: manifest.json, one MMFE binary per stream, ids.txt,
// labels.csv (sample_id,label) and provenance.csv (sample_id,source).
inline constexpr char kFeatureMagic[4] = {'M', 'M', 'F', 'E'};
inline constexpr std::uint32_t kFeatureVersion = 1;

void write_dataset(const Dataset& ds, const std::string& dir);
/// Accepts a dataset directory or the path of its manifest.json.
Dataset load_dataset(const std::string& path);

struct StreamSynth {
  StreamSpec stream;
  double separation = 1.0;  // scale of the per-class means
  double sigma = 1.0;       // within-class noise
};

struct SynthSpec {
  std::string name = "synthetic";
  std::size_t num_classes = 6;
  std::size_t samples_per_class = 20;
  std::vector<StreamSynth> streams;
  std::uint64_t seed = 0;
  std::string id_prefix = "s";
  bool labeled = true;
  double pseudo_fraction = 0.0;  // share of labeled records tagged pseudo

  void validate() const;
  KeyValueText to_kv() const;
  /// Reads `streams`, `separation`, `sigma` (defaults) and per-stream
  /// `separation.<name>` / `sigma.<name>` overrides.
  static SynthSpec from_kv(const KeyValueText& kv);
};

/// Class-conditional Gaussians: each class gets one mean per stream,
/// separation * randn, and every sample is mean + sigma * randn.
Dataset generate_synthetic(const SynthSpec& spec);

/// Additive Gaussian perturbation of the named streams only.
Dataset inject_noise(const Dataset& ds, const std::map<std::string, double>& stream_sigmas, std::uint64_t seed);

enum class RatioTarget { pseudo, all };
RatioTarget parse_ratio_target(const std::string& s);

/// Keeps floor(ratio * n) uniformly chosen records of the target partition;
/// records outside it are untouched. Original record order is preserved.
Dataset subsample_ratio(const Dataset& ds, double ratio, RatioTarget target, std::uint64_t seed);
std::size_t ratio_count(double ratio, std::size_t n);

struct TrainValSplit {
  Dataset train;
  Dataset val;
};
/// Deterministic split by shuffled sample ids; val gets floor(fraction * n).
TrainValSplit split_train_val(const Dataset& ds, double val_fraction, std::uint64_t seed);

/// Subset of records by index, carrying labels and provenance.
Dataset select_records(const Dataset& ds, std::span<const std::size_t> indices);

/// Per-stream [B, dim] tensors for the given record indices, in the order of `streams`.
std::vector<Tensor> gather_features(const Dataset& ds, const std::vector<StreamSpec>& streams,
                                    std::span<const std::size_t> indices);
std::vector<std::size_t> gather_labels(const Dataset& ds, std::span<const std::size_t> indices);

/// Rounds through float so in-memory values match what the file stores.
inline double to_storage_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace caf
