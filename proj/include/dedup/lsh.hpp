#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>

#include "dedup/feature.hpp"

namespace dedup {

/// Sign-random-projection LSH over a linear b-bit bucket space.
///
/// Bit i of a signature is 1 iff dot(plane_i, v) >= 0 (a dot product of
/// exactly zero counts as 1), and plane 0 occupies the most significant
/// bit, so numerically adjacent signatures share their high-order
/// projections. Signatures fit in [0, 2^b).
struct LshConfig {
  int bits = 16;          // signature length b, 1..32
  int dim = 16;           // feature dimension d, >= 2
  std::uint64_t seed = 0; // plane generator seed

  void validate() const {
    if (bits < 1 || bits > 32) {
      throw ConfigError("LshConfig: bits must be in [1, 32], got " + std::to_string(bits));
    }
    if (dim < 2) {
      throw ConfigError("LshConfig: dim must be >= 2, got " + std::to_string(dim));
    }
  }

  std::uint64_t space_size() const { return std::uint64_t{1} << bits; }
};

namespace detail {

/// Deterministic standard normals: mt19937_64 + Box-Muller. The stdlib's
/// normal_distribution output sequence is implementation-defined, which
/// would break "same seed => identical planes" across toolchains.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1], u2 in [0,1)
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace detail

class Hasher {
 public:
  Hasher(LshConfig config, Eigen::MatrixXd planes)
      : config_(config), planes_(std::move(planes)) {}

  const LshConfig& config() const { return config_; }

  /// b x d matrix; row i is hyperplane normal i.
  const Eigen::MatrixXd& planes() const { return planes_; }

  std::uint32_t operator()(const FeatureVector& v) const {
    if (v.size() != config_.dim) {
      throw InputError("hash: vector dimension " + std::to_string(v.size()) +
                       " does not match hasher dimension " + std::to_string(config_.dim));
    }
    const Eigen::VectorXd proj = planes_ * v;
    std::uint32_t sig = 0;
    for (int i = 0; i < config_.bits; ++i) {
      sig = (sig << 1) | (proj[i] >= 0.0 ? 1u : 0u);
    }
    return sig;
  }

 private:
  LshConfig config_;
  Eigen::MatrixXd planes_;
};

/// Draws b hyperplane normals i.i.d. standard normal from a seeded
/// deterministic generator. Same config, same planes, bit for bit.
inline Hasher build_hasher(const LshConfig& config) {
  config.validate();
  detail::NormalSource normals(config.seed);
  Eigen::MatrixXd planes(config.bits, config.dim);
  for (int i = 0; i < config.bits; ++i) {
    for (int j = 0; j < config.dim; ++j) {
      planes(i, j) = normals.next();
    }
  }
  return Hasher(config, std::move(planes));
}

inline std::uint32_t hash(const Hasher& h, const FeatureVector& v) { return h(v); }

}  // namespace dedup
