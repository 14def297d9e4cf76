#include <doctest.h>

#include <cmath>
#include <random>

#include "dedup/lsh.hpp"

using namespace dedup;

namespace {

FeatureVector random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal;
  FeatureVector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (v.norm() == 0.0);
  return v.normalized();
}

/// Unit vector at exactly angle theta from u.
FeatureVector at_angle(std::mt19937_64& rng, const FeatureVector& u, double theta) {
  FeatureVector w;
  do {
    w = random_unit(rng, static_cast<int>(u.size()));
    w -= w.dot(u) * u;
  } while (w.norm() < 1e-9);
  w.normalize();
  return std::cos(theta) * u + std::sin(theta) * w;
}

int bit_agreement(std::uint32_t a, std::uint32_t b, int bits) {
  int agree = 0;
  for (int i = 0; i < bits; ++i) {
    if (((a >> i) & 1u) == ((b >> i) & 1u)) ++agree;
  }
  return agree;
}

}  // namespace

TEST_CASE("build_hasher is deterministic per seed") {
  const LshConfig cfg{16, 8, 7};
  const Hasher a = build_hasher(cfg);
  const Hasher b = build_hasher(cfg);
  CHECK(a.planes() == b.planes());

  const Hasher c = build_hasher({16, 8, 8});
  CHECK(a.planes() != c.planes());
}

TEST_CASE("build_hasher rejects bad configs") {
  CHECK_THROWS_AS(build_hasher({0, 8, 1}), ConfigError);
  CHECK_THROWS_AS(build_hasher({33, 8, 1}), ConfigError);
  CHECK_THROWS_AS(build_hasher({16, 1, 1}), ConfigError);
}

TEST_CASE("hash is pure and in range") {
  const Hasher h = build_hasher({12, 6, 3});
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const FeatureVector v = random_unit(rng, 6);
    const std::uint32_t sig = h(v);
    CHECK(sig == h(v));
    CHECK(sig < (1u << 12));
  }
}

TEST_CASE("hash rejects dimension mismatch") {
  const Hasher h = build_hasher({8, 4, 1});
  CHECK_THROWS_AS(h(FeatureVector::Ones(5)), InputError);
}

TEST_CASE("negating the input complements the signature") {
  const Hasher h = build_hasher({16, 8, 21});
  const std::uint32_t mask = 0xFFFFu;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const FeatureVector v = random_unit(rng, 8);
    // Ties (dot == 0) have measure zero for random inputs.
    CHECK(h(-v) == (~h(v) & mask));
  }
}

TEST_CASE("per-bit agreement follows the 1 - theta/pi collision law") {
  const int dim = 16;
  const int bits = 16;
  const Hasher h = build_hasher({bits, dim, 99});
  std::mt19937_64 rng(42);
  for (const double theta : {M_PI / 8, M_PI / 4, M_PI / 2}) {
    long agree = 0;
    const int pairs = 10000;
    for (int i = 0; i < pairs; ++i) {
      const FeatureVector u = random_unit(rng, dim);
      const FeatureVector w = at_angle(rng, u, theta);
      agree += bit_agreement(h(u), h(w), bits);
    }
    const double mean = static_cast<double>(agree) / (static_cast<double>(pairs) * bits);
    CHECK(std::abs(mean - (1.0 - theta / M_PI)) < 0.02);
  }
}

TEST_CASE("cosine similarity basics") {
  FeatureVector v(3);
  v << 1.0, 2.0, -0.5;
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
  CHECK(cosine_similarity(v, FeatureVector(-v)) == doctest::Approx(-1.0));

  FeatureVector e1(2), e2(2);
  e1 << 1.0, 0.0;
  e2 << 0.0, 1.0;
  CHECK(cosine_similarity(e1, e2) == doctest::Approx(0.0));

  CHECK_THROWS_AS(cosine_similarity(e1, FeatureVector::Zero(2)), InputError);
  CHECK_THROWS_AS(cosine_similarity(e1, FeatureVector::Ones(3)), InputError);
}

TEST_CASE("signature hex wire form") {
  CHECK(signature_to_hex(0x2af3, 16) == "2af3");
  CHECK(signature_to_hex(5, 16) == "0005");
  CHECK(signature_to_hex(5, 5) == "05");
  CHECK(signature_to_hex(1, 4) == "1");
  CHECK(parse_hex_signature("2af3", 16) == 0x2af3);
  CHECK(parse_hex_signature("0005", 16) == 5);
  CHECK_THROWS_AS(parse_hex_signature("ffff", 8), InputError);
  CHECK_THROWS_AS(parse_hex_signature("xyz", 16), InputError);
  CHECK_THROWS_AS(parse_hex_signature("", 16), InputError);
}
