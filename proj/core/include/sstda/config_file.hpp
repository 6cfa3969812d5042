#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sstda {

/// Flat `key = value` text. Blank lines and lines starting with '#' are
/// ignored; later duplicates override earlier ones.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text);
  static KeyValueFile load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  /// Keys not in `known`; callers reject them to catch typos.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;

  std::string format() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sstda
