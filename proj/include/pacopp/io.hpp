#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pacopp/core.hpp"

namespace pacopp {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Shortest decimal text that parses back to the same double; infinities
/// print as "inf" / "-inf".
inline std::string format_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Parses a full field as a double; accepts "inf"/"-inf" (and nan, which
/// callers reject when finiteness is required).
inline bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Reads `s,a,r` (or `s1,...,sd,a,r`) CSV text into a dataset in row order.
inline LoggedDataset read_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t ctx_dim = 0;
  bool have_header = false;
  LoggedDataset out;
  while (std::getline(in, line)) {
    ++lineno;
    const auto view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_fields(view);
    if (!have_header) {
      if (fields.size() < 3 || fields[fields.size() - 2] != "a" || fields.back() != "r") {
        throw ParseError(lineno, "header must be s,a,r or s1,...,sd,a,r");
      }
      ctx_dim = fields.size() - 2;
      if (ctx_dim == 1) {
        if (fields[0] != "s") throw ParseError(lineno, "header must start with s");
      } else {
        for (std::size_t i = 0; i < ctx_dim; ++i) {
          if (fields[i] != "s" + std::to_string(i + 1)) throw ParseError(lineno, "expected column s" + std::to_string(i + 1));
        }
      }
      have_header = true;
      continue;
    }
    if (fields.size() != ctx_dim + 2) {
      throw ParseError(lineno, "expected " + std::to_string(ctx_dim + 2) + " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> values(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_double(fields[i], values[i])) throw ParseError(lineno, "malformed number '" + std::string(fields[i]) + "'");
      if (!std::isfinite(values[i])) throw ParseError(lineno, "non-finite value '" + std::string(fields[i]) + "'");
    }
    const double reward = values.back();
    values.pop_back();
    const double action = values.back();
    values.pop_back();
    out.samples.push_back({Context(std::move(values)), action, reward});
  }
  if (!have_header) throw ParseError(lineno, "missing header");
  return out;
}

inline LoggedDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_csv(in);
}

inline void write_csv(std::ostream& out, const LoggedDataset& d) {
  const std::size_t dim = d.empty() ? 1 : d.samples.front().context.dim();
  if (dim == 1) {
    out << "s,";
  } else {
    for (std::size_t i = 0; i < dim; ++i) out << 's' << (i + 1) << ',';
  }
  out << "a,r\n";
  for (const auto& x : d.samples) {
    for (double v : x.context.values()) out << format_double(v) << ',';
    out << format_double(x.action) << ',' << format_double(x.reward) << '\n';
  }
}

/// Flat `key = value` configuration text. Blank lines and `#` comments are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto view = trim(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = trim(view.substr(0, hash));
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) throw ParseError(lineno, "expected key = value");
    const auto key = trim(view.substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "empty key");
    out.emplace_back(std::string(key), std::string(trim(view.substr(eq + 1))));
  }
  return out;
}

}  // namespace pacopp
