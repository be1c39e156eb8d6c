#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spatial_diar/errors.hpp"

namespace spatial_diar {

/// Flat `key = value` configuration with dotted keys; `#` starts a comment.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) {
        if (end == text.size()) break;
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      auto key = std::string(trim(line.substr(0, eq)));
      auto value = std::string(trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
      kv.values_[key] = value;
      if (end == text.size()) break;
    }
    return kv;
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string* find(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sorted `key = value` lines; the basis for config hashes.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  /// Keys under prefix that were never consumed by a binder.
  std::vector<std::string> unknown(const std::string& prefix, const std::set<std::string>& known) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (k.rfind(prefix, 0) == 0 && !known.count(k)) out.push_back(k);
    }
    return out;
  }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[std::size_t(i)] = digits[v & 0xf];
  return out;
}

/// Name table for an enum used in configs.
template <typename E>
struct EnumNames;

namespace detail {

template <typename E>
concept NamedEnum = requires { EnumNames<E>::names; };

template <NamedEnum E>
std::string enum_name(E e) {
  for (const auto& [value, name] : EnumNames<E>::names) {
    if (value == e) return std::string(name);
  }
  return "?";
}

template <NamedEnum E>
E enum_parse(const std::string& key, const std::string& s) {
  std::string options;
  for (const auto& [value, name] : EnumNames<E>::names) {
    if (name == s) return value;
    options += (options.empty() ? "" : ", ") + std::string(name);
  }
  throw ConfigError(key + ": unknown value '" + s + "' (expected one of " + options + ")");
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
  if (ec != std::errc()) return std::to_string(v);
  std::string out(buf, ptr);
  // printf-style general format may switch to an exponent for round numbers; prefer fixed
  if (out.find('e') != std::string::npos) {
    auto [p2, ec2] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    if (ec2 == std::errc() && p2 - buf < 24) out.assign(buf, p2);
  }
  return out;
}

}  // namespace detail

/// Reads fields from KeyValues. Struct configs expose `template <class B> void bind(B&)`.
class ConfigReader {
 public:
  ConfigReader(const KeyValues& kv, std::string prefix) : kv_(kv), prefix_(std::move(prefix)) {}

  template <typename V>
  void operator()(const std::string& name, V& field) {
    const auto key = prefix_ + name;
    known_.insert(key);
    const auto* raw = kv_.find(key);
    if (!raw) return;
    field = convert<V>(key, *raw);
  }

  const std::set<std::string>& known() const { return known_; }

 private:
  template <typename V>
  static V convert(const std::string& key, const std::string& s) {
    if constexpr (std::is_same_v<V, bool>) {
      if (s == "true" || s == "1") return true;
      if (s == "false" || s == "0") return false;
      throw ConfigError(key + ": expected true or false, got '" + s + "'");
    } else if constexpr (std::is_same_v<V, std::string>) {
      return s;
    } else if constexpr (std::is_enum_v<V>) {
      return detail::enum_parse<V>(key, s);
    } else if constexpr (std::is_floating_point_v<V>) {
      try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return V(v);
      } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + s + "'");
      }
    } else if constexpr (std::is_integral_v<V>) {
      V v{};
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError(key + ": expected an integer, got '" + s + "'");
      }
      return v;
    } else if constexpr (std::is_same_v<V, std::vector<double>>) {
      std::vector<double> out;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) {
        auto t = std::string(KeyValues::trim(item));
        if (t.empty()) continue;
        out.push_back(convert<double>(key, t));
      }
      return out;
    } else {
      static_assert(sizeof(V) == 0, "unsupported config field type");
    }
  }

  const KeyValues& kv_;
  std::string prefix_;
  std::set<std::string> known_;
};

/// Writes fields into KeyValues with canonical formatting.
class ConfigWriter {
 public:
  ConfigWriter(KeyValues& kv, std::string prefix) : kv_(kv), prefix_(std::move(prefix)) {}

  template <typename V>
  void operator()(const std::string& name, const V& field) {
    kv_.set(prefix_ + name, format(field));
  }

 private:
  template <typename V>
  static std::string format(const V& v) {
    if constexpr (std::is_same_v<V, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_same_v<V, std::string>) {
      return v;
    } else if constexpr (std::is_enum_v<V>) {
      return detail::enum_name(v);
    } else if constexpr (std::is_floating_point_v<V>) {
      return detail::format_double(double(v));
    } else if constexpr (std::is_integral_v<V>) {
      return std::to_string(v);
    } else {
      std::string out;
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + detail::format_double(v[i]);
      return out;
    }
  }

  KeyValues& kv_;
  std::string prefix_;
};

/// Applies every key under prefix to cfg; unknown keys under prefix are rejected.
template <typename Cfg>
void read_section(const KeyValues& kv, const std::string& prefix, Cfg& cfg) {
  ConfigReader reader(kv, prefix);
  cfg.bind(reader);
  if (auto bad = kv.unknown(prefix, reader.known()); !bad.empty()) {
    throw ConfigError("unknown config key '" + bad.front() + "'");
  }
}

template <typename Cfg>
void write_section(KeyValues& kv, const std::string& prefix, const Cfg& cfg) {
  ConfigWriter writer(kv, prefix);
  const_cast<Cfg&>(cfg).bind(writer);
}

}  // namespace spatial_diar
