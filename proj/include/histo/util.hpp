#ifndef HISTO_UTIL_HPP
#define HISTO_UTIL_HPP

#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace histo {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

/// Raised when an image has too few stained pixels for stain estimation.
struct NoTissueError : std::runtime_error {
  explicit NoTissueError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when the two estimated stain directions collapse onto each other.
struct DegenerateStainError : std::runtime_error {
  explicit DegenerateStainError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a training set cannot support the requested model (e.g. one class).
struct DegenerateTrainingError : std::runtime_error {
  explicit DegenerateTrainingError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an external probability table lacks a required record.
struct MissingProbabilityError : std::runtime_error {
  explicit MissingProbabilityError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised on malformed structured-text input; carries the 1-based line number.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, long line_number)
      : std::runtime_error(what + " (line " + std::to_string(line_number) + ")"),
        line(line_number) {}
  explicit ParseError(const std::string& what) : std::runtime_error(what), line(0) {}
  long line;
};

/// Raised when a persisted file has an unknown magic or version.
struct FormatVersionError : std::runtime_error {
  explicit FormatVersionError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Deterministic randomness
//
// All sampling helpers draw from std::mt19937_64 through our own mappings so
// that streams do not depend on standard-library distribution internals.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

/// Derives a labeled sub-seed from a root seed (splitmix64 over root ^ fnv1a(label)).
std::uint64_t sub_seed(std::uint64_t root, const std::string& label);

/// Uniform integer in [0, n). n must be > 0. Rejection sampling, no modulo bias.
std::uint64_t bounded_u64(Rng& rng, std::uint64_t n);

/// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

/// Uniform double in [lo, hi).
double uniform_real(Rng& rng, double lo, double hi);

/// In-place Fisher-Yates shuffle driven by bounded_u64.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(bounded_u64(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Small numeric / text helpers
// ---------------------------------------------------------------------------

/// Percentile with linear interpolation between order statistics.
/// p in [0, 100]. Copies and sorts its input; empty input is an error.
double percentile(std::vector<double> values, double p);

/// Shortest round-trip-exact decimal form of a double ("%.17g").
std::string format_double(double x);

/// Parses a double; throws ParseError (line 0) on garbage or trailing junk.
double parse_double(const std::string& s);

/// Parses a long long with the same strictness.
long long parse_int(const std::string& s);

std::string trim(const std::string& s);

/// Splits one CSV line on commas; fields are trimmed. No quoting support.
std::vector<std::string> split_csv_line(const std::string& line);

// Whitespace-token readers for the persisted model formats. All throw
// ParseError naming `context` when the stream disagrees.
void expect_token(std::istream& in, const std::string& want, const char* context);
double read_double_token(std::istream& in, const char* context);
long long read_int_token(std::istream& in, const char* context);

}  // namespace histo

#endif  // HISTO_UTIL_HPP
