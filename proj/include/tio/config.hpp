#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tio {

/// Bad syntax, unknown key or unparsable value; the message names the key or line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` text. `#` starts a comment; later assignments win.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, const Eigen::VectorXd& values);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::optional<std::string> raw(const std::string& key) const;

  double getDouble(const std::string& key, double fallback) const;
  int getInt(const std::string& key, int fallback) const;
  bool getBool(const std::string& key, bool fallback) const;
  std::string getString(const std::string& key, const std::string& fallback) const;
  /// Whitespace- or comma-separated numbers; throws unless exactly `n` are given.
  Eigen::VectorXd getVector(const std::string& key, const Eigen::VectorXd& fallback) const;

  /// Entries of `over` replace ours.
  void merge(const Config& over);

  /// Throws ConfigError naming the first key not in `known`.
  void requireKnown(const std::set<std::string>& known) const;

  /// Sorted `key = value` lines; values round-trip doubles exactly.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

/// Shortest decimal text that parses back to the same double.
std::string formatDouble(double v);

}  // namespace tio
