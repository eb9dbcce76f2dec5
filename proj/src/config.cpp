#include "tio/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace tio {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parseDouble(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

std::string formatDouble(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Config Config::parse(const std::string& text, const std::string& source) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    c.entries_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void Config::set(const std::string& key, double value) { entries_[key] = formatDouble(value); }

void Config::set(const std::string& key, const Eigen::VectorXd& values) {
  std::string s;
  for (int i = 0; i < values.size(); ++i) s += (i ? " " : "") + formatDouble(values(i));
  entries_[key] = s;
}

std::optional<std::string> Config::raw(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

double Config::getDouble(const std::string& key, double fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  double d;
  if (!parseDouble(*v, d)) throw ConfigError("config key " + key + ": expected a number, got '" + *v + "'");
  return d;
}

int Config::getInt(const std::string& key, int fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  int i;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), i);
  if (ec != std::errc() || ptr != v->data() + v->size())
    throw ConfigError("config key " + key + ": expected an integer, got '" + *v + "'");
  return i;
}

bool Config::getBool(const std::string& key, bool fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + *v + "'");
}

std::string Config::getString(const std::string& key, const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

Eigen::VectorXd Config::getVector(const std::string& key, const Eigen::VectorXd& fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::string s = *v;
  for (char& ch : s)
    if (ch == ',') ch = ' ';
  std::istringstream in(s);
  std::vector<double> values;
  std::string tok;
  while (in >> tok) {
    double d;
    if (!parseDouble(tok, d)) throw ConfigError("config key " + key + ": bad number '" + tok + "'");
    values.push_back(d);
  }
  if (values.size() != static_cast<size_t>(fallback.size()))
    throw ConfigError("config key " + key + ": expected " + std::to_string(fallback.size()) + " numbers, got " +
                      std::to_string(values.size()));
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void Config::merge(const Config& over) {
  for (const auto& [k, v] : over.entries_) entries_[k] = v;
}

void Config::requireKnown(const std::set<std::string>& known) const {
  for (const auto& [k, v] : entries_)
    if (!known.count(k)) throw ConfigError("unknown config key " + k);
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << serialize();
  if (!out) throw ConfigError("write failed: " + path.string());
}

}  // namespace tio
