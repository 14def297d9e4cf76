#include <doctest.h>

#include <map>
#include <set>

#include "dedup/strategy.hpp"

using namespace dedup;

TEST_CASE("strategy names round-trip") {
  for (const auto s :
       {DistributionStrategy::ReuseIdeal, DistributionStrategy::ReuseVanilla,
        DistributionStrategy::ReuseMiniBuckets, DistributionStrategy::ReuseAdaptive,
        DistributionStrategy::RoundRobin, DistributionStrategy::Random,
        DistributionStrategy::LeastConnection, DistributionStrategy::ConsistentHash}) {
    CHECK(parse_strategy(strategy_name(s)) == s);
  }
  CHECK_THROWS_AS(parse_strategy("nope"), ConfigError);
  CHECK(is_reuse_strategy(DistributionStrategy::ReuseAdaptive));
  CHECK_FALSE(is_reuse_strategy(DistributionStrategy::RoundRobin));
}

TEST_CASE("consistent hash ring pins keys and spreads load") {
  ConsistentHashRing ring(100);
  ring.add("S1");
  ring.add("S2");
  ring.add("S3");

  SUBCASE("every server of a wide deployment takes a share of sequential keys") {
    ConsistentHashRing wide(100);
    std::vector<ServerId> ids;
    for (int i = 1; i <= 9; ++i) {
      ids.push_back("S" + std::to_string(i));
      wide.add(ids.back());
    }
    std::map<ServerId, int> counts;
    for (int c = 0; c < 256; ++c) counts[wide.pick("client-" + std::to_string(c))] += 1;
    for (const auto& id : ids) {
      CHECK(counts[id] > 5);  // ~28 expected each
    }
  }

  std::map<std::string, ServerId> assignment;
  std::map<ServerId, int> counts;
  for (int i = 0; i < 3000; ++i) {
    const std::string key = "client-" + std::to_string(i);
    const ServerId& s = ring.pick(key);
    CHECK(ring.pick(key) == s);  // deterministic
    assignment[key] = s;
    counts[s] += 1;
  }
  // Every server takes a nontrivial share with 100 virtual nodes.
  for (const auto& [id, c] : counts) {
    CHECK(c > 3000 / 3 / 4);
  }

  // Removing a server remaps only its keys.
  ring.remove("S2");
  for (const auto& [key, before] : assignment) {
    if (before == "S2") continue;
    CHECK(ring.pick(key) == before);
  }

  ring.remove("S1");
  ring.remove("S3");
  CHECK_THROWS_AS(ring.pick("x"), InputError);
}

TEST_CASE("mini-buckets interleave every server within every major slice") {
  SUBCASE("two servers over a 4-bit space") {
    const SliceTable t = mini_buckets_table({"S1", "S2"}, 4);
    CHECK(t.slices == std::vector<Slice>{{0, 3, "S1"},
                                         {4, 7, "S2"},
                                         {8, 11, "S1"},
                                         {12, 15, "S2"}});
  }
  SUBCASE("every server appears n times") {
    const SliceTable t = mini_buckets_table({"S1", "S2", "S3"}, 16);
    std::map<ServerId, int> appearances;
    for (const auto& s : t.slices) appearances[s.server] += 1;
    for (const auto& [id, n] : appearances) CHECK(n == 3);
    validate(t);
  }
  SUBCASE("space too small for the grid") {
    CHECK_THROWS_AS(mini_buckets_table({"a", "b", "c"}, 3), ConfigError);
  }
}

TEST_CASE("ideal table sends every bucket to the first server") {
  const SliceTable t = ideal_table({"S1", "S2", "S3"}, 8);
  CHECK(t.slices.size() == 1);
  CHECK(lookup(t, 0) == "S1");
  CHECK(lookup(t, 255) == "S1");
}
