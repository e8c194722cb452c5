#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "caf/binary_io.hpp"
#include "caf/dataset.hpp"
#include "caf/error.hpp"
#include "caf/rng.hpp"

using namespace caf;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("caf_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string sub(const std::string& s) const { return (path_ / s).string(); }

 private:
  fs::path path_;
};

SynthSpec spec_with(double separation, double sigma, std::size_t per_class, std::uint64_t seed) {
  SynthSpec s;
  s.samples_per_class = per_class;
  s.seed = seed;
  s.streams = {{{"hubert", Modality::audio, 8}, separation, sigma},
               {{"clip", Modality::visual, 6}, separation, sigma},
               {{"qwen", Modality::text, 5}, separation, sigma}};
  return s;
}

std::vector<double> concat_features(const Dataset& ds, std::size_t i) {
  std::vector<double> out;
  for (const auto& s : ds.streams) {
    const auto& v = ds.records[i].features.at(s.name);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// Nearest class mean fitted on `fit`, scored on `score`.
double nearest_mean_accuracy(const Dataset& fit, const Dataset& score) {
  const std::size_t C = fit.num_classes();
  std::vector<std::vector<double>> means(C);
  std::vector<std::size_t> counts(C, 0);
  for (std::size_t i = 0; i < fit.size(); ++i) {
    const auto x = concat_features(fit, i);
    const auto c = *fit.label_of(fit.records[i].sample_id);
    if (means[c].empty()) means[c].assign(x.size(), 0.0);
    for (std::size_t j = 0; j < x.size(); ++j) means[c][j] += x[j];
    counts[c]++;
  }
  for (std::size_t c = 0; c < C; ++c)
    for (auto& v : means[c]) v /= static_cast<double>(counts[c]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    const auto x = concat_features(score, i);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < C; ++c) {
      if (means[c].empty()) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) d += (x[j] - means[c][j]) * (x[j] - means[c][j]);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == *score.label_of(score.records[i].sample_id);
  }
  return static_cast<double>(correct) / static_cast<double>(score.size());
}

}  // namespace

TEST(Dataset, WriteLoadRoundTrip) {
  TempDir tmp("ds_roundtrip");
  SynthSpec s = spec_with(2.0, 1.0, 5, 3);
  s.pseudo_fraction = 0.4;
  const Dataset ds = generate_synthetic(s);
  write_dataset(ds, tmp.sub("a"));
  EXPECT_TRUE(fs::exists(tmp.sub("a/manifest.json")));
  const Dataset back = load_dataset(tmp.sub("a"));
  EXPECT_EQ(back, ds);
  EXPECT_EQ(load_dataset(tmp.sub("a/manifest.json")), ds);
  EXPECT_EQ(dataset_hash(back), dataset_hash(ds));
}

TEST(Dataset, RandomizedRoundTrips) {
  TempDir tmp("ds_random");
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    SynthSpec s;
    s.seed = rng.next_u64();
    s.num_classes = 1 + rng.below(6);
    s.samples_per_class = 1 + rng.below(6);
    const std::size_t M = 1 + rng.below(4);
    for (std::size_t m = 0; m < M; ++m) {
      s.streams.push_back({{"st" + std::to_string(m), static_cast<Modality>(rng.below(3)), 1 + rng.below(9)},
                           rng.uniform() * 5, rng.uniform() * 3});
    }
    s.labeled = rng.below(4) != 0;
    s.pseudo_fraction = s.labeled ? rng.uniform() : 0.0;
    Dataset ds = generate_synthetic(s);
    if (!s.labeled && ds.size() > 1) ds.labels.emplace(ds.records[0].sample_id, 0);  // partially labeled
    const std::string dir = tmp.sub("d" + std::to_string(trial));
    write_dataset(ds, dir);
    const Dataset back = load_dataset(dir);
    ASSERT_EQ(back, ds) << "trial " << trial;
  }
}

TEST(Dataset, DimMismatchNamesStream) {
  TempDir tmp("ds_dim");
  const Dataset ds = generate_synthetic(spec_with(1, 1, 2, 1));
  write_dataset(ds, tmp.sub("a"));
  // Swap in a clip file with 8-wide rows while the manifest still says 6.
  Dataset wide = ds;
  wide.streams[1].input_dim = 8;
  for (auto& r : wide.records) r.features["clip"].resize(8, 0.0);
  write_dataset(wide, tmp.sub("b"));
  fs::copy_file(tmp.sub("b/stream_clip.mmfe"), tmp.sub("a/stream_clip.mmfe"), fs::copy_options::overwrite_existing);
  try {
    load_dataset(tmp.sub("a"));
    FAIL() << "expected a dim mismatch";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("clip"), std::string::npos) << msg;
    EXPECT_NE(msg.find("dim"), std::string::npos) << msg;
  }
}

TEST(Dataset, BadMagicAndVersion) {
  TempDir tmp("ds_magic");
  const Dataset ds = generate_synthetic(spec_with(1, 1, 2, 1));
  write_dataset(ds, tmp.sub("a"));
  std::string bytes = read_file(tmp.sub("a/stream_qwen.mmfe"));
  std::string bad = bytes;
  bad[0] = 'Z';
  write_file(tmp.sub("a/stream_qwen.mmfe"), bad);
  EXPECT_THROW(load_dataset(tmp.sub("a")), FormatError);
  bad = bytes;
  bad[4] = 7;
  write_file(tmp.sub("a/stream_qwen.mmfe"), bad);
  EXPECT_THROW(load_dataset(tmp.sub("a")), FormatError);
  write_file(tmp.sub("a/stream_qwen.mmfe"), bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_dataset(tmp.sub("a")), FormatError);
}

TEST(Dataset, DuplicateIdsAndUnknownLabels) {
  TempDir tmp("ds_dup");
  const Dataset ds = generate_synthetic(spec_with(1, 1, 2, 1));
  write_dataset(ds, tmp.sub("a"));
  std::string ids = read_file(tmp.sub("a/ids.txt"));
  const std::string first = ids.substr(0, ids.find('\n'));
  const std::string second_line = ids.substr(ids.find('\n') + 1);
  write_file(tmp.sub("a/ids.txt"), first + "\n" + first + "\n" + second_line.substr(second_line.find('\n') + 1));
  EXPECT_THROW(load_dataset(tmp.sub("a")), FormatError);

  write_dataset(ds, tmp.sub("b"));
  write_file(tmp.sub("b/labels.csv"), "sample_id,label\n" + ds.records[0].sample_id + ",bored\n");
  EXPECT_THROW(load_dataset(tmp.sub("b")), FormatError);
  EXPECT_THROW(load_dataset(tmp.sub("missing")), IoError);
}

TEST(Dataset, UnlabeledSampleHasNoLabel) {
  TempDir tmp("ds_unlabeled");
  SynthSpec s = spec_with(1, 1, 3, 2);
  s.labeled = false;
  const Dataset ds = generate_synthetic(s);
  write_dataset(ds, tmp.sub("u"));
  const Dataset back = load_dataset(tmp.sub("u"));
  ASSERT_EQ(back.size(), 18u);
  for (const auto& r : back.records) EXPECT_FALSE(back.label_of(r.sample_id).has_value());
  EXPECT_TRUE(back.labels.empty());
}

TEST(Dataset, ValidateRejectsOutOfRangeLabel) {
  Dataset ds = generate_synthetic(spec_with(1, 1, 2, 1));
  ds.labels[ds.records[0].sample_id] = 6;
  EXPECT_THROW(ds.validate(), FormatError);
}

TEST(Synthetic, ZeroSigmaGivesIdenticalClassMembers) {
  const Dataset ds = generate_synthetic(spec_with(3.0, 0.0, 4, 5));
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(ds.records[c * 4 + i].features, ds.records[c * 4].features);
  EXPECT_NE(ds.records[0].features, ds.records[4].features);
}

TEST(Synthetic, SeedDeterminesDataset) {
  EXPECT_EQ(generate_synthetic(spec_with(1, 1, 3, 8)), generate_synthetic(spec_with(1, 1, 3, 8)));
  EXPECT_NE(generate_synthetic(spec_with(1, 1, 3, 8)), generate_synthetic(spec_with(1, 1, 3, 9)));
}

TEST(Synthetic, NegativeSigmaNamesField) {
  SynthSpec s = spec_with(1, 1, 3, 8);
  s.streams[1].sigma = -0.5;
  try {
    generate_synthetic(s);
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("sigma.clip"), std::string::npos);
  }
  s.streams[1].sigma = 1;
  s.streams[0].separation = -1;
  EXPECT_THROW(generate_synthetic(s), UsageError);
}

TEST(Synthetic, SpecKeyValueRoundTrip) {
  SynthSpec s = spec_with(2.5, 0.25, 7, 42);
  s.streams[2].sigma = 0.75;
  s.pseudo_fraction = 0.5;
  const SynthSpec back = SynthSpec::from_kv(s.to_kv());
  EXPECT_EQ(generate_synthetic(back), generate_synthetic(s));
}

TEST(Synthetic, NoSeparationIsChanceLevel) {
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = generate_synthetic(spec_with(0.0, 1.0, 200, seed));
    const auto parts = split_train_val(ds, 0.5, seed);
    sum += nearest_mean_accuracy(parts.train, parts.val);
  }
  EXPECT_NEAR(sum / 5.0, 1.0 / 6.0, 0.05);
}

TEST(Synthetic, SeparableBenchmarkIsSeparable) {
  const Dataset ds = generate_synthetic(spec_with(5.0, 0.1, 30, 4));
  const auto parts = split_train_val(ds, 0.5, 4);
  EXPECT_GE(nearest_mean_accuracy(parts.train, parts.val), 0.99);
}

TEST(Noise, ZeroSigmaIsBitExact) {
  const Dataset ds = generate_synthetic(spec_with(1, 1, 5, 6));
  EXPECT_EQ(inject_noise(ds, {{"hubert", 0.0}, {"clip", 0.0}, {"qwen", 0.0}}, 1), ds);
  EXPECT_EQ(inject_noise(ds, {}, 1), ds);
}

TEST(Noise, OnlyNamedStreamChanges) {
  const Dataset ds = generate_synthetic(spec_with(1, 1, 5, 6));
  const Dataset noisy = inject_noise(ds, {{"clip", 1.0}}, 2);
  EXPECT_EQ(noisy.labels, ds.labels);
  EXPECT_EQ(noisy.provenance, ds.provenance);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(noisy.records[i].features.at("hubert"), ds.records[i].features.at("hubert"));
    EXPECT_EQ(noisy.records[i].features.at("qwen"), ds.records[i].features.at("qwen"));
    changed += noisy.records[i].features.at("clip") != ds.records[i].features.at("clip");
  }
  EXPECT_EQ(changed, ds.size());
  EXPECT_THROW(inject_noise(ds, {{"manet", 1.0}}, 2), UsageError);
  EXPECT_THROW(inject_noise(ds, {{"clip", -1.0}}, 2), UsageError);
}

TEST(Noise, EmpiricalStdMatchesSigma) {
  SynthSpec s;
  s.num_classes = 1;
  s.samples_per_class = 1000;
  s.streams = {{{"v", Modality::visual, 10}, 0.0, 0.0}};
  const Dataset ds = generate_synthetic(s);
  for (double sigma : {0.5, 1.0, 2.0}) {
    const Dataset noisy = inject_noise(ds, {{"v", sigma}}, 17);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& r : noisy.records)
      for (double v : r.features.at("v")) sum += v, sq += v * v, ++n;
    ASSERT_EQ(n, 10000u);
    const double mean = sum / n;
    const double sd = std::sqrt((sq - n * mean * mean) / (n - 1));
    EXPECT_NEAR(sd / sigma, 1.0, 0.03);
  }
}

TEST(Ratio, PaperPoolSize) {
  SynthSpec s;
  s.num_classes = 6;
  s.samples_per_class = 4000;
  s.streams = {{{"v", Modality::visual, 1}, 1.0, 1.0}};
  s.pseudo_fraction = 0.8;  // 24000 records, 19200 pseudo
  Dataset ds = generate_synthetic(s);
  // Retag to exactly 20000 pseudo / 4000 human.
  for (std::size_t i = 0; i < ds.size(); ++i) ds.provenance[ds.records[i].sample_id] = i < 4000 ? Provenance::human : Provenance::pseudo;
  ASSERT_EQ(ds.count(Provenance::pseudo), 20000u);
  const Dataset sub = subsample_ratio(ds, 0.2, RatioTarget::pseudo, 3);
  EXPECT_EQ(sub.count(Provenance::pseudo), 4000u);
  EXPECT_EQ(sub.count(Provenance::human), 4000u);
}

TEST(Ratio, SubsetAndCardinality) {
  SynthSpec s = spec_with(1, 1, 17, 3);
  s.pseudo_fraction = 0.7;
  const Dataset ds = generate_synthetic(s);
  const std::size_t pseudo = ds.count(Provenance::pseudo), human = ds.count(Provenance::human);
  std::set<std::string> all_ids;
  for (const auto& r : ds.records) all_ids.insert(r.sample_id);
  for (double ratio : {0.1, 0.2, 0.29, 0.4, 0.6, 0.8, 1.0}) {
    for (RatioTarget t : {RatioTarget::pseudo, RatioTarget::all}) {
      const Dataset sub = subsample_ratio(ds, ratio, t, 11);
      for (const auto& r : sub.records) EXPECT_TRUE(all_ids.count(r.sample_id));
      if (t == RatioTarget::pseudo) {
        EXPECT_EQ(sub.count(Provenance::pseudo), static_cast<std::size_t>(std::floor(ratio * pseudo + 1e-9)));
        EXPECT_EQ(sub.count(Provenance::human), human);
      } else {
        EXPECT_EQ(sub.size(), static_cast<std::size_t>(std::floor(ratio * ds.size() + 1e-9)));
      }
      const Dataset again = subsample_ratio(ds, ratio, t, 11);
      EXPECT_EQ(again, sub);
    }
  }
  EXPECT_EQ(subsample_ratio(ds, 1.0, RatioTarget::pseudo, 5), ds);
  EXPECT_THROW(subsample_ratio(ds, 0.0, RatioTarget::pseudo, 5), UsageError);
  EXPECT_THROW(subsample_ratio(ds, 1.5, RatioTarget::pseudo, 5), UsageError);
  EXPECT_THROW(subsample_ratio(generate_synthetic(spec_with(1, 1, 3, 1)), 0.5, RatioTarget::pseudo, 5), UsageError);
}

TEST(Split, PartitionsAllRecords) {
  const Dataset ds = generate_synthetic(spec_with(1, 1, 10, 3));
  const auto parts = split_train_val(ds, 0.2, 7);
  EXPECT_EQ(parts.val.size(), 12u);
  EXPECT_EQ(parts.train.size() + parts.val.size(), ds.size());
  std::set<std::string> ids;
  for (const auto& r : parts.train.records) ids.insert(r.sample_id);
  for (const auto& r : parts.val.records) EXPECT_TRUE(ids.insert(r.sample_id).second);
  EXPECT_EQ(split_train_val(ds, 0.2, 7).val, parts.val);
}
