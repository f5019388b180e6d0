#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace idarts {

// Error taxonomy used across the library. Contract violations throw one of
// these; callers that want exit codes catch at the CLI boundary.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// FNV-1a over raw bytes. Used for bitwise parameter audits: two tensors hash
// equal iff their byte representations are identical.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t seed = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), seed);
}

inline std::uint64_t checksum_doubles(const std::vector<double>& v,
                                      std::uint64_t seed = 1469598103934665603ull) {
  return v.empty() ? seed : fnv1a(v.data(), v.size() * sizeof(double), seed);
}

}  // namespace idarts
