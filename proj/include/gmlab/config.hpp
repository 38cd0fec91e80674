#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace gmlab {

/// Plain-text configuration: `[section]` headers with `key = value` lines;
/// lookups use dotted keys ("train.lr"). Later set() calls override file
/// values, so flags win over the file. echo() writes the fully resolved
/// configuration back out in the same format.
class RunConfig {
 public:
  static RunConfig from_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated radii; a leading "0" bracket and a trailing "inf"
  /// bracket are accepted and dropped.
  std::vector<double> get_radii(const std::string& key, const std::vector<double>& fallback) const;

  void echo(std::ostream& os) const;
  void echo_to_file(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> kv_;
};

std::vector<double> parse_radii(const std::string& text);

}  // namespace gmlab
