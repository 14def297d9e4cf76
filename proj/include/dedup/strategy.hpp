#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dedup/slice_table.hpp"

namespace dedup {

enum class DistributionStrategy {
  ReuseIdeal,
  ReuseVanilla,
  ReuseMiniBuckets,
  ReuseAdaptive,
  RoundRobin,
  Random,
  LeastConnection,
  ConsistentHash,
};

/// CLI spelling: reuse-ideal, reuse-vanilla, reuse-mini-buckets,
/// reuse-adaptive, round-robin, random, least-connection, consistent-hash.
DistributionStrategy parse_strategy(std::string_view name);
std::string strategy_name(DistributionStrategy s);

/// Strategies that route on the LSH signature via a slice table.
bool is_reuse_strategy(DistributionStrategy s);

/// 64-bit consistent-hash ring with virtual nodes, keyed by client id for
/// session persistence: a key maps to the first node clockwise from its
/// hash. Removing a server only remaps keys that hashed to it.
class ConsistentHashRing {
 public:
  explicit ConsistentHashRing(int virtual_nodes = 100);

  void add(const ServerId& id);
  void remove(const ServerId& id);
  bool empty() const { return ring_.empty(); }

  const ServerId& pick(std::string_view key) const;

  static std::uint64_t fnv1a64(std::string_view bytes);

 private:
  int virtual_nodes_;
  std::map<std::uint64_t, ServerId> ring_;
};

/// Static n x n grid: the space is cut into n major slices, each major
/// slice into n sub-slices, and sub-slice j of every major slice goes to
/// server j, so every server has presence in every region.
SliceTable mini_buckets_table(const std::vector<ServerId>& servers, int bits);

/// Everything to the first server (the single-server ideal for reuse).
SliceTable ideal_table(const std::vector<ServerId>& servers, int bits);

}  // namespace dedup
