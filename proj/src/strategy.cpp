#include "dedup/strategy.hpp"

#include <array>
#include <utility>

namespace dedup {

namespace {

constexpr std::array<std::pair<std::string_view, DistributionStrategy>, 8> kNames = {{
    {"reuse-ideal", DistributionStrategy::ReuseIdeal},
    {"reuse-vanilla", DistributionStrategy::ReuseVanilla},
    {"reuse-mini-buckets", DistributionStrategy::ReuseMiniBuckets},
    {"reuse-adaptive", DistributionStrategy::ReuseAdaptive},
    {"round-robin", DistributionStrategy::RoundRobin},
    {"random", DistributionStrategy::Random},
    {"least-connection", DistributionStrategy::LeastConnection},
    {"consistent-hash", DistributionStrategy::ConsistentHash},
}};

}  // namespace

DistributionStrategy parse_strategy(std::string_view name) {
  for (const auto& [text, value] : kNames) {
    if (text == name) return value;
  }
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

std::string strategy_name(DistributionStrategy s) {
  for (const auto& [text, value] : kNames) {
    if (value == s) return std::string(text);
  }
  return "?";
}

bool is_reuse_strategy(DistributionStrategy s) {
  switch (s) {
    case DistributionStrategy::ReuseIdeal:
    case DistributionStrategy::ReuseVanilla:
    case DistributionStrategy::ReuseMiniBuckets:
    case DistributionStrategy::ReuseAdaptive:
      return true;
    default:
      return false;
  }
}

ConsistentHashRing::ConsistentHashRing(int virtual_nodes) : virtual_nodes_(virtual_nodes) {
  if (virtual_nodes < 1) throw ConfigError("virtual_nodes must be >= 1");
}

std::uint64_t ConsistentHashRing::fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  // Finalizer: raw FNV leaves the high bits poorly mixed for short keys,
  // which clumps ring positions.
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ull;
  h ^= h >> 33;
  return h;
}

void ConsistentHashRing::add(const ServerId& id) {
  for (int v = 0; v < virtual_nodes_; ++v) {
    ring_.emplace(fnv1a64(id + "#" + std::to_string(v)), id);
  }
}

void ConsistentHashRing::remove(const ServerId& id) {
  for (auto it = ring_.begin(); it != ring_.end();) {
    if (it->second == id) {
      it = ring_.erase(it);
    } else {
      ++it;
    }
  }
}

const ServerId& ConsistentHashRing::pick(std::string_view key) const {
  if (ring_.empty()) {
    throw InputError("consistent hash ring is empty");
  }
  auto it = ring_.lower_bound(fnv1a64(key));
  if (it == ring_.end()) it = ring_.begin();
  return it->second;
}

SliceTable mini_buckets_table(const std::vector<ServerId>& servers, int bits) {
  const std::size_t n = servers.size();
  if (n == 0) throw ConfigError("mini_buckets_table: no servers");
  const SliceTable majors = initial_equal(servers, bits);
  if (n * n > majors.space_size()) {
    throw ConfigError("mini_buckets_table: space too small for n^2 sub-slices");
  }

  SliceTable table;
  table.bits = bits;
  table.epoch = 0;
  table.servers = servers;
  for (const Slice& major : majors.slices) {
    const std::uint64_t size = major.size();
    const std::uint64_t base = size / n;
    const std::uint64_t extra = size % n;
    std::uint64_t cursor = major.lo;
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint64_t sub = base + (j < extra ? 1 : 0);
      table.slices.push_back({static_cast<Bucket>(cursor),
                              static_cast<Bucket>(cursor + sub - 1), servers[j]});
      cursor += sub;
    }
  }
  validate(table);
  return table;
}

SliceTable ideal_table(const std::vector<ServerId>& servers, int bits) {
  if (servers.empty()) throw ConfigError("ideal_table: no servers");
  SliceTable table;
  table.bits = bits;
  table.epoch = 0;
  table.servers = {servers.front()};
  table.slices = {{0, static_cast<Bucket>((std::uint64_t{1} << bits) - 1), servers.front()}};
  validate(table);
  return table;
}

}  // namespace dedup
