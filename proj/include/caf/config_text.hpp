#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace caf {

/// FNV-1a 64-bit digest, used to stamp configs, datasets and checkpoints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Canonical text configuration: one `key=value` per line, keys sorted,
/// `#` starts a comment line. Serialization is byte-stable, so the hash of
/// the text identifies the configuration.
class KeyValueText {
 public:
  static KeyValueText parse(std::string_view text, const std::string& source = "<config>");
  static KeyValueText load(const std::string& path);

  /// Applies a `KEY=VALUE` override; throws UsageError on a malformed pair.
  void apply_override(std::string_view assignment);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  void erase(const std::string& key) { entries_.erase(key); }
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Entries whose key starts with `prefix`, with the prefix stripped.
  KeyValueText subset(const std::string& prefix) const;
  /// Inserts all entries of `other` under `prefix`.
  void merge(const KeyValueText& other, const std::string& prefix = "");

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::string canonical() const;
  std::uint64_t hash() const { return fnv1a64(canonical()); }

  friend bool operator==(const KeyValueText&, const KeyValueText&) = default;

 private:
  std::map<std::string, std::string> entries_;
};

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

}  // namespace caf
