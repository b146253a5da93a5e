#include "olens/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "olens/error.hpp"

namespace olens {
namespace {

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    ++line_no;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) {
      raise(ErrorKind::Parse,
            "config line " + std::to_string(line_no) + " lacks a trailing newline");
    }
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      raise(ErrorKind::Parse,
            "config line " + std::to_string(line_no) + " has no tab separator");
    }
    const std::string key = line.substr(0, tab);
    if (!valid_key(key)) {
      raise(ErrorKind::Parse,
            "config line " + std::to_string(line_no) + " has an invalid key");
    }
    if (cfg.index_.count(key) != 0) {
      raise(ErrorKind::Parse, "config key '" + key + "' appears more than once");
    }
    cfg.index_.emplace(key, cfg.entries_.size());
    cfg.entries_.emplace_back(key, line.substr(tab + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [key, value] : entries_) {
    out += key;
    out += '\t';
    out += value;
    out += '\n';
  }
  return out;
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::Io, "cannot write config file " + path);
  out << serialize();
  if (!out) raise(ErrorKind::Io, "failed writing config file " + path);
}

bool RunConfig::has(const std::string& key) const { return index_.count(key) != 0; }

const std::string& RunConfig::get(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) {
    raise(ErrorKind::Config, "config key '" + key + "' is missing");
  }
  return entries_[it->second].second;
}

std::string RunConfig::get_or(const std::string& key, const std::string& fallback) const {
  auto it = index_.find(key);
  return it == index_.end() ? fallback : entries_[it->second].second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& raw = get(key);
  char* end = nullptr;
  const long long v = std::strtoll(raw.c_str(), &end, 10);
  if (end == raw.c_str() || *end != '\0') {
    raise(ErrorKind::Parse, "config key '" + key + "' is not an integer: " + raw);
  }
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& raw = get(key);
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() || *end != '\0') {
    raise(ErrorKind::Parse, "config key '" + key + "' is not a number: " + raw);
  }
  return v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!valid_key(key)) raise(ErrorKind::Value, "invalid config key '" + key + "'");
  auto it = index_.find(key);
  if (it == index_.end()) {
    index_.emplace(key, entries_.size());
    entries_.emplace_back(key, value);
  } else {
    entries_[it->second].second = value;
  }
}

}  // namespace olens
