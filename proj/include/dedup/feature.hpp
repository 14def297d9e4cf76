#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dedup {

/// Task input data: a fixed-dimension real feature vector.
using FeatureVector = Eigen::VectorXd;

/// Invalid static configuration (bad bit width, too many servers, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-contract runtime input (bad vector, unknown server, ...).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A slice adjustment that cannot be applied to the current table.
class InvalidAdjustment : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cosine of the angle between two dense vectors, clamped to [-1, 1].
/// Accepts any Eigen dense expression of matching length.
template <typename DerivedA, typename DerivedB>
double cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                         const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw InputError("cosine_similarity: dimension mismatch (" +
                     std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw InputError("cosine_similarity: zero vector");
  }
  const double c = a.dot(b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

/// Checks length and finiteness of a task payload.
inline void validate_feature(const FeatureVector& v, int expected_dim) {
  if (v.size() != expected_dim) {
    throw InputError("feature vector has dimension " + std::to_string(v.size()) +
                     ", expected " + std::to_string(expected_dim));
  }
  if (!v.allFinite()) {
    throw InputError("feature vector contains non-finite values");
  }
}

/// Lowercase hex of a b-bit signature, zero-padded to ceil(b/4) digits.
inline std::string signature_to_hex(std::uint32_t value, int bits) {
  static const char* digits = "0123456789abcdef";
  const int width = (bits + 3) / 4;
  std::string out(static_cast<std::size_t>(width), '0');
  for (int i = width - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

/// Parses the hex wire form of a signature; rejects values >= 2^bits.
inline std::uint32_t parse_hex_signature(std::string_view hex, int bits) {
  if (hex.empty() || hex.size() > 8) {
    throw InputError("bad hex signature '" + std::string(hex) + "'");
  }
  std::uint64_t value = 0;
  for (char c : hex) {
    int d;
    if (c >= '0' && c <= '9') {
      d = c - '0';
    } else if (c >= 'a' && c <= 'f') {
      d = c - 'a' + 10;
    } else if (c >= 'A' && c <= 'F') {
      d = c - 'A' + 10;
    } else {
      throw InputError("bad hex signature '" + std::string(hex) + "'");
    }
    value = (value << 4) | static_cast<std::uint64_t>(d);
  }
  if (bits < 64 && value >= (std::uint64_t{1} << bits)) {
    throw InputError("signature " + std::string(hex) + " out of range for " +
                     std::to_string(bits) + " bits");
  }
  return static_cast<std::uint32_t>(value);
}

}  // namespace dedup
