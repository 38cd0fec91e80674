#include "gmlab/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace gmlab {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  RunConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error("config: malformed section at line " + std::to_string(lineno));
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key = value at line " + std::to_string(lineno));
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
    cfg.kv_[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

std::string RunConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw std::runtime_error("config: '" + key + "' is not a number: " + it->second);
  }
}

long long RunConfig::get_int(const std::string& key, long long fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw std::runtime_error("config: '" + key + "' is not an integer: " + it->second);
  }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::runtime_error("config: '" + key + "' is not a boolean: " + it->second);
}

std::vector<double> parse_radii(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (t.empty()) continue;
    if (t == "inf" || t == "+inf" || t == "Inf") {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    try {
      out.push_back(std::stod(t));
    } catch (const std::exception&) {
      throw std::invalid_argument("radii: not a number: " + t);
    }
  }
  // accept the bracketed {0, ..., inf} spelling; interior radii remain
  if (!out.empty() && out.front() == 0.0) out.erase(out.begin());
  if (!out.empty() && std::isinf(out.back())) out.pop_back();
  if (out.empty()) throw std::invalid_argument("radii: need at least one positive cutoff");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0) || std::isinf(out[i]))
      throw std::invalid_argument("radii: cutoffs must be positive and finite");
    if (i > 0 && !(out[i] > out[i - 1]))
      throw std::invalid_argument("radii: cutoffs must be strictly increasing");
  }
  return out;
}

std::vector<double> RunConfig::get_radii(const std::string& key,
                                         const std::vector<double>& fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  return parse_radii(it->second);
}

void RunConfig::echo(std::ostream& os) const {
  std::string section;
  for (const auto& [key, value] : kv_) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (sec != section) {
      section = sec;
      os << "[" << section << "]\n";
    }
    os << name << " = " << value << "\n";
  }
}

void RunConfig::echo_to_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("config: cannot write " + path.string());
  echo(out);
}

}  // namespace gmlab
