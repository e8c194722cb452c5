#include "caf/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include <json.hpp>

#include "caf/binary_io.hpp"
#include "caf/error.hpp"
#include "caf/rng.hpp"

namespace fs = std::filesystem;

namespace caf {

std::string to_string(Provenance p) { return p == Provenance::human ? "human" : "pseudo"; }

Provenance parse_provenance(const std::string& s) {
  if (s == "human") return Provenance::human;
  if (s == "pseudo") return Provenance::pseudo;
  throw FormatError("unknown provenance '" + s + "' (expected human or pseudo)");
}

const std::vector<std::string>& emotion_classes() {
  static const std::vector<std::string> names = {"happy", "sad", "neutral", "angry", "worried", "surprise"};
  return names;
}

std::vector<std::string> default_class_names(std::size_t num_classes) {
  if (num_classes == emotion_classes().size()) return emotion_classes();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < num_classes; ++i) out.push_back("class" + std::to_string(i));
  return out;
}

std::optional<std::size_t> Dataset::label_of(const std::string& id) const {
  auto it = labels.find(id);
  if (it == labels.end()) return std::nullopt;
  return it->second;
}

std::size_t Dataset::count(Provenance p) const {
  std::size_t n = 0;
  for (const auto& r : records) {
    auto it = provenance.find(r.sample_id);
    if (it != provenance.end() && it->second == p) ++n;
  }
  return n;
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.sample_id.empty() || r.sample_id.find_first_of(",\n\r") != std::string::npos) {
      throw FormatError(name + ": invalid sample id '" + r.sample_id + "'");
    }
    if (!ids.insert(r.sample_id).second) throw FormatError(name + ": duplicate sample id '" + r.sample_id + "'");
    if (r.features.size() != streams.size()) {
      throw FormatError(name + ": sample '" + r.sample_id + "' has " + std::to_string(r.features.size()) +
                        " streams, expected " + std::to_string(streams.size()));
    }
    for (const auto& s : streams) {
      auto it = r.features.find(s.name);
      if (it == r.features.end()) throw FormatError(name + ": sample '" + r.sample_id + "' lacks stream '" + s.name + "'");
      if (it->second.size() != s.input_dim) {
        throw FormatError(name + ": sample '" + r.sample_id + "' stream '" + s.name + "' has dim " +
                          std::to_string(it->second.size()) + ", expected " + std::to_string(s.input_dim));
      }
    }
  }
  for (const auto& [id, label] : labels) {
    if (!ids.count(id)) throw FormatError(name + ": label for unknown sample '" + id + "'");
    if (label >= num_classes()) {
      throw FormatError(name + ": label " + std::to_string(label) + " of '" + id + "' outside [0, " +
                        std::to_string(num_classes()) + ")");
    }
  }
  for (const auto& [id, _] : provenance) {
    if (!ids.count(id)) throw FormatError(name + ": provenance for unknown sample '" + id + "'");
  }
}

std::uint64_t dataset_hash(const Dataset& ds) {
  ByteWriter w;
  w.bytes(format_streams(ds.streams));
  for (const auto& c : ds.class_names) {
    w.bytes(c);
    w.bytes("\n");
  }
  for (const auto& r : ds.records) {
    w.bytes(r.sample_id);
    const auto label = ds.label_of(r.sample_id);
    w.u64(label ? *label : UINT64_MAX);
    auto p = ds.provenance.find(r.sample_id);
    w.u32(p == ds.provenance.end() ? 0u : (p->second == Provenance::human ? 1u : 2u));
    for (const auto& s : ds.streams)
      for (double v : r.features.at(s.name)) w.f64(v);
  }
  return fnv1a64(w.data());
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

std::string stream_filename(const StreamSpec& s) { return "stream_" + s.name + ".mmfe"; }

std::string index_by_name(const std::vector<std::string>& names, const std::string& label, const std::string& where) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == label) return std::to_string(i);
  throw FormatError(where + ": label '" + label + "' is not one of the dataset's classes");
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> out;
  for (auto& line : split(read_file(path), '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
  }
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

  nlohmann::json manifest;
  manifest["format_version"] = kFeatureVersion;
  manifest["name"] = ds.name;
  manifest["num_classes"] = ds.num_classes();
  manifest["class_names"] = ds.class_names;
  manifest["num_samples"] = ds.size();
  manifest["ids_file"] = "ids.txt";
  manifest["labels_file"] = "labels.csv";
  manifest["provenance_file"] = "provenance.csv";
  manifest["streams"] = nlohmann::json::array();
  for (const auto& s : ds.streams) {
    manifest["streams"].push_back({{"name", s.name},
                                   {"modality", to_string(s.modality)},
                                   {"dim", s.input_dim},
                                   {"file", stream_filename(s)}});
  }
  write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");

  for (const auto& s : ds.streams) {
    ByteWriter w;
    w.bytes(std::string_view(kFeatureMagic, 4));
    w.u32(kFeatureVersion);
    w.u32(static_cast<std::uint32_t>(ds.size()));
    w.u32(static_cast<std::uint32_t>(s.input_dim));
    for (const auto& r : ds.records)
      for (double v : r.features.at(s.name)) w.f32(static_cast<float>(v));
    write_file((fs::path(dir) / stream_filename(s)).string(), w.data());
  }

  std::string ids, labels = "sample_id,label\n", prov = "sample_id,source\n";
  for (const auto& r : ds.records) {
    ids += r.sample_id + "\n";
    if (auto l = ds.label_of(r.sample_id)) labels += r.sample_id + "," + ds.class_names[*l] + "\n";
    if (auto p = ds.provenance.find(r.sample_id); p != ds.provenance.end()) {
      prov += r.sample_id + "," + to_string(p->second) + "\n";
    }
  }
  write_file((fs::path(dir) / "ids.txt").string(), ids);
  write_file((fs::path(dir) / "labels.csv").string(), labels);
  write_file((fs::path(dir) / "provenance.csv").string(), prov);
}

Dataset load_dataset(const std::string& path) {
  fs::path manifest_path = path;
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  const fs::path dir = manifest_path.parent_path();
  const std::string where = manifest_path.string();

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }

  Dataset ds;
  std::vector<std::string> stream_files;
  std::size_t declared = 0;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != kFeatureVersion) {
      throw FormatError(where + ": unsupported format_version");
    }
    ds.name = manifest.at("name").get<std::string>();
    ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    if (manifest.at("num_classes").get<std::size_t>() != ds.class_names.size()) {
      throw FormatError(where + ": num_classes disagrees with class_names");
    }
    declared = manifest.at("num_samples").get<std::size_t>();
    for (const auto& js : manifest.at("streams")) {
      StreamSpec s;
      s.name = js.at("name").get<std::string>();
      s.modality = parse_modality(js.at("modality").get<std::string>());
      s.input_dim = js.at("dim").get<std::size_t>();
      ds.streams.push_back(s);
      stream_files.push_back(js.at("file").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": " + e.what());
  } catch (const UsageError& e) {
    throw FormatError(where + ": " + e.what());
  }

  const auto ids = read_lines((dir / manifest.value("ids_file", "ids.txt")).string());
  if (ids.size() != declared) {
    throw FormatError(where + ": manifest declares " + std::to_string(declared) + " samples, ids file has " +
                      std::to_string(ids.size()));
  }
  ds.records.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ds.records[i].sample_id = ids[i];

  for (std::size_t k = 0; k < ds.streams.size(); ++k) {
    const auto& s = ds.streams[k];
    const std::string file = (dir / stream_files[k]).string();
    const std::string bytes = read_file(file);
    ByteReader rd(bytes, file);
    if (rd.bytes(4) != std::string_view(kFeatureMagic, 4)) throw FormatError(file + ": bad magic for stream '" + s.name + "'");
    if (const auto v = rd.u32(); v != kFeatureVersion) {
      throw FormatError(file + ": unsupported version " + std::to_string(v) + " for stream '" + s.name + "'");
    }
    const auto n = rd.u32();
    const auto dim = rd.u32();
    if (dim != s.input_dim) {
      throw FormatError("stream '" + s.name + "': manifest declares dim " + std::to_string(s.input_dim) +
                        " but " + file + " has dim " + std::to_string(dim));
    }
    if (n != ids.size()) {
      throw FormatError("stream '" + s.name + "': " + file + " has " + std::to_string(n) + " rows, expected " +
                        std::to_string(ids.size()));
    }
    if (rd.remaining() != static_cast<std::size_t>(n) * dim * 4) {
      throw FormatError("stream '" + s.name + "': " + file + " payload size does not match its header");
    }
    for (auto& r : ds.records) {
      auto& vec = r.features[s.name];
      vec.resize(dim);
      for (auto& v : vec) v = static_cast<double>(rd.f32());
    }
  }

  std::set<std::string> known(ids.begin(), ids.end());
  if (known.size() != ids.size()) throw FormatError(where + ": duplicate sample ids");

  auto read_table = [&](const std::string& file, const std::string& header, auto&& on_row) {
    const auto lines = read_lines(file);
    if (lines.empty() || lines[0] != header) throw FormatError(file + ": expected header '" + header + "'");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto cols = split(lines[i], ',');
      if (cols.size() != 2) throw FormatError(file + ":" + std::to_string(i + 1) + ": expected two columns");
      if (!known.count(cols[0])) throw FormatError(file + ":" + std::to_string(i + 1) + ": unknown sample '" + cols[0] + "'");
      on_row(cols[0], cols[1], file + ":" + std::to_string(i + 1));
    }
  };
  read_table((dir / manifest.value("labels_file", "labels.csv")).string(), "sample_id,label",
             [&](const std::string& id, const std::string& label, const std::string& at) {
               const auto idx = index_by_name(ds.class_names, label, at);
               if (!ds.labels.emplace(id, std::stoul(idx)).second) throw FormatError(at + ": duplicate label row");
             });
  read_table((dir / manifest.value("provenance_file", "provenance.csv")).string(), "sample_id,source",
             [&](const std::string& id, const std::string& source, const std::string& at) {
               try {
                 if (!ds.provenance.emplace(id, parse_provenance(source)).second) {
                   throw FormatError(at + ": duplicate provenance row");
                 }
               } catch (const FormatError& e) {
                 throw FormatError(at + ": " + e.what());
               }
             });
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SynthSpec::validate() const {
  if (num_classes == 0) throw UsageError("synth: num_classes must be positive");
  if (samples_per_class == 0) throw UsageError("synth: samples_per_class must be positive");
  if (streams.empty()) throw UsageError("synth: at least one stream is required");
  std::set<std::string> names;
  for (const auto& s : streams) {
    if (!names.insert(s.stream.name).second) throw UsageError("synth: duplicate stream '" + s.stream.name + "'");
    if (s.stream.input_dim == 0) throw UsageError("synth: stream '" + s.stream.name + "' has dim 0");
    if (!(s.separation >= 0.0)) throw UsageError("synth: separation." + s.stream.name + " must be >= 0");
    if (!(s.sigma >= 0.0)) throw UsageError("synth: sigma." + s.stream.name + " must be >= 0");
  }
  if (!(pseudo_fraction >= 0.0 && pseudo_fraction <= 1.0)) throw UsageError("synth: pseudo_fraction must lie in [0,1]");
  if (id_prefix.empty() || id_prefix.find_first_of(",\n") != std::string::npos) throw UsageError("synth: invalid id_prefix");
}

KeyValueText SynthSpec::to_kv() const {
  KeyValueText kv;
  kv.set("name", name);
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("samples_per_class", std::to_string(samples_per_class));
  std::vector<StreamSpec> specs;
  for (const auto& s : streams) {
    specs.push_back(s.stream);
    kv.set("separation." + s.stream.name, format_double(s.separation));
    kv.set("sigma." + s.stream.name, format_double(s.sigma));
  }
  kv.set("streams", format_streams(specs));
  kv.set("seed", std::to_string(seed));
  kv.set("id_prefix", id_prefix);
  kv.set("labeled", labeled ? "true" : "false");
  kv.set("pseudo_fraction", format_double(pseudo_fraction));
  return kv;
}

SynthSpec SynthSpec::from_kv(const KeyValueText& kv) {
  SynthSpec s;
  s.name = kv.get_string("name", s.name);
  const auto nc = kv.get_int("num_classes", static_cast<std::int64_t>(s.num_classes));
  const auto spc = kv.get_int("samples_per_class", static_cast<std::int64_t>(s.samples_per_class));
  if (nc <= 0) throw UsageError("synth: num_classes must be positive");
  if (spc <= 0) throw UsageError("synth: samples_per_class must be positive");
  s.num_classes = static_cast<std::size_t>(nc);
  s.samples_per_class = static_cast<std::size_t>(spc);
  const double sep = kv.get_double("separation", 1.0);
  const double sigma = kv.get_double("sigma", 1.0);
  for (const auto& spec : parse_streams(kv.get_string("streams", ""))) {
    StreamSynth st;
    st.stream = spec;
    st.separation = kv.get_double("separation." + spec.name, sep);
    st.sigma = kv.get_double("sigma." + spec.name, sigma);
    s.streams.push_back(st);
  }
  s.seed = kv.get_u64("seed", s.seed);
  s.id_prefix = kv.get_string("id_prefix", s.id_prefix);
  s.labeled = kv.get_bool("labeled", s.labeled);
  s.pseudo_fraction = kv.get_double("pseudo_fraction", s.pseudo_fraction);
  s.validate();
  return s;
}

Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset ds;
  ds.name = spec.name;
  ds.class_names = default_class_names(spec.num_classes);
  for (const auto& s : spec.streams) ds.streams.push_back(s.stream);

  // means[stream][class] drawn first, stream-major.
  std::vector<std::vector<Tensor>> means(spec.streams.size());
  for (std::size_t k = 0; k < spec.streams.size(); ++k) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      means[k].push_back(scale(randn(rng, {spec.streams[k].stream.input_dim}), spec.streams[k].separation));
    }
  }

  const std::size_t total = spec.num_classes * spec.samples_per_class;
  const int width = total < 1000000 ? 6 : 9;
  std::size_t index = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i, ++index) {
      FeatureRecord r;
      std::string num = std::to_string(index);
      r.sample_id = spec.id_prefix + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(num.size(), width), '0') + num;
      for (std::size_t k = 0; k < spec.streams.size(); ++k) {
        const auto& st = spec.streams[k];
        std::vector<double> v(st.stream.input_dim);
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = to_storage_precision(means[k][c][j] + st.sigma * rng.normal());
        r.features.emplace(st.stream.name, std::move(v));
      }
      if (spec.labeled) {
        ds.labels.emplace(r.sample_id, c);
        ds.provenance.emplace(r.sample_id, Provenance::human);
      }
      ds.records.push_back(std::move(r));
    }
  }

  if (spec.labeled && spec.pseudo_fraction > 0.0) {
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t n_pseudo = ratio_count(spec.pseudo_fraction, total);
    for (std::size_t i = 0; i < n_pseudo; ++i) {
      std::swap(order[i], order[i + rng.below(total - i)]);
      ds.provenance[ds.records[order[i]].sample_id] = Provenance::pseudo;
    }
  }
  return ds;
}

Dataset inject_noise(const Dataset& ds, const std::map<std::string, double>& stream_sigmas, std::uint64_t seed) {
  for (const auto& [name, sigma] : stream_sigmas) {
    bool found = false;
    for (const auto& s : ds.streams) found = found || s.name == name;
    if (!found) throw UsageError("inject_noise: unknown stream '" + name + "'");
    if (!(sigma >= 0.0)) throw UsageError("inject_noise: sigma for '" + name + "' must be >= 0");
  }
  Dataset out = ds;
  Rng rng(seed);
  for (auto& r : out.records) {
    for (const auto& [name, sigma] : stream_sigmas) {
      if (sigma == 0.0) continue;
      for (auto& v : r.features.at(name)) v = to_storage_precision(v + sigma * rng.normal());
    }
  }
  return out;
}

RatioTarget parse_ratio_target(const std::string& s) {
  if (s == "pseudo") return RatioTarget::pseudo;
  if (s == "all") return RatioTarget::all;
  throw UsageError("ratio target must be pseudo or all, got '" + s + "'");
}

std::size_t ratio_count(double ratio, std::size_t n) {
  // The small slack absorbs representation error such as 0.29 * 100 = 28.999...
  return std::min(n, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)));
}

Dataset subsample_ratio(const Dataset& ds, double ratio, RatioTarget target, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw UsageError("subsample_ratio: ratio must lie in (0,1], got " + format_double(ratio));
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (target == RatioTarget::all) {
      pool.push_back(i);
    } else if (auto p = ds.provenance.find(ds.records[i].sample_id); p != ds.provenance.end() && p->second == Provenance::pseudo) {
      pool.push_back(i);
    }
  }
  if (pool.empty()) throw UsageError("subsample_ratio: target partition is empty");

  const std::size_t keep = ratio_count(ratio, pool.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < keep; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  std::vector<bool> in_pool(ds.records.size(), false), kept(ds.records.size(), false);
  for (std::size_t i = 0; i < pool.size(); ++i) in_pool[pool[i]] = true;
  for (std::size_t i = 0; i < keep; ++i) kept[pool[i]] = true;

  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    if (!in_pool[i] || kept[i]) indices.push_back(i);
  return select_records(ds, indices);
}

Dataset select_records(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.name = ds.name;
  out.class_names = ds.class_names;
  out.streams = ds.streams;
  out.records.reserve(indices.size());
  for (auto i : indices) {
    const auto& r = ds.records.at(i);
    out.records.push_back(r);
    if (auto l = ds.labels.find(r.sample_id); l != ds.labels.end()) out.labels.insert(*l);
    if (auto p = ds.provenance.find(r.sample_id); p != ds.provenance.end()) out.provenance.insert(*p);
  }
  return out;
}

TrainValSplit split_train_val(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw UsageError("split_train_val: fraction must lie in [0,1)");
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < n; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
  const std::size_t n_val = ratio_count(val_fraction, n);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? va : tr).push_back(i);
  return {select_records(ds, tr), select_records(ds, va)};
}

std::vector<Tensor> gather_features(const Dataset& ds, const std::vector<StreamSpec>& streams,
                                    std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("gather_features: empty index set");
  std::vector<Tensor> out;
  for (const auto& s : streams) {
    Tensor t({indices.size(), s.input_dim});
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto& r = ds.records.at(indices[b]);
      auto it = r.features.find(s.name);
      if (it == r.features.end() || it->second.size() != s.input_dim) {
        throw UsageError("sample '" + r.sample_id + "' does not provide stream '" + s.name + "' with dim " +
                         std::to_string(s.input_dim));
      }
      std::copy(it->second.begin(), it->second.end(), t.values().begin() + static_cast<std::ptrdiff_t>(b * s.input_dim));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::size_t> gather_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const auto& id = ds.records.at(i).sample_id;
    auto l = ds.label_of(id);
    if (!l) throw UsageError("sample '" + id + "' is unlabeled");
    out.push_back(*l);
  }
  return out;
}

}  // namespace caf
