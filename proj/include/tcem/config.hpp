#pragma once

// `key=value` text configuration. Blank lines and lines starting with '#'
// are ignored; later keys override earlier ones.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace tcem {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void erase(const std::string& key) { entries_.erase(key); }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  // Overlays `other` on top of this config.
  void merge(const KeyValueConfig& other);

  const std::map<std::string, std::string>& entries() const { return entries_; }
  // Sorted key=value lines.
  std::string format() const;

 private:
  std::map<std::string, std::string> entries_;
};

std::string format_double(double v);

}  // namespace tcem
