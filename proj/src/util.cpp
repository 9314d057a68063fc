#include "histo/util.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>

namespace histo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t sub_seed(std::uint64_t root, const std::string& label) {
  return splitmix64(root ^ fnv1a(label));
}

std::uint64_t bounded_u64(Rng& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("bounded_u64: n must be > 0");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform_real(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p out of [0,100]");
  std::sort(values.begin(), values.end());
  const double pos = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  if (lo == hi) return values[lo];
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) throw ParseError("empty numeric field");
  double value = 0.0;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw ParseError("bad numeric field '" + t + "'");
  return value;
}

long long parse_int(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) throw ParseError("empty integer field");
  long long value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw ParseError("bad integer field '" + t + "'");
  return value;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

void expect_token(std::istream& in, const std::string& want, const char* context) {
  std::string got;
  in >> got;
  if (!in || got != want)
    throw ParseError(std::string("expected '") + want + "' in " + context + ", got '" + got + "'");
}

double read_double_token(std::istream& in, const char* context) {
  double v;
  in >> v;
  if (!in) throw ParseError(std::string("bad double in ") + context);
  return v;
}

long long read_int_token(std::istream& in, const char* context) {
  long long v;
  in >> v;
  if (!in) throw ParseError(std::string("bad integer in ") + context);
  return v;
}

}  // namespace histo
