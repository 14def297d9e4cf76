#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dedup/feature.hpp"

namespace dedup {

using ServerId = std::string;
using Bucket = std::uint32_t;

/// Contiguous range of hash values [lo, hi] owned by one server.
struct Slice {
  Bucket lo = 0;
  Bucket hi = 0;
  ServerId server;

  std::uint64_t size() const { return std::uint64_t{hi} - lo + 1; }

  bool operator==(const Slice&) const = default;
};

/// Order to transfer cached results for [lo, hi] from one server to another
/// so the new owner can reuse them right away (warm start).
struct MigrationDirective {
  Bucket lo = 0;
  Bucket hi = 0;
  ServerId from;
  ServerId to;

  bool operator==(const MigrationDirective&) const = default;
};

/// Windowed load observed for one range group of hash values.
struct GroupLoad {
  std::uint64_t tasks = 0;
  double cpu = 0.0;
  double mem = 0.0;
};

/// Per-server load over the last redistribution interval. `tasks` is the
/// raw task count t_i; `per_range` breaks it down by range group.
struct LoadSample {
  ServerId server;
  std::uint64_t tasks = 0;
  std::map<int, GroupLoad> per_range;
};

/// Ordered, disjoint, exhaustive partition of [0, 2^bits) into
/// server-assigned slices. Immutable snapshot: every mutation below
/// returns a new table with epoch + 1; routing threads keep reading
/// whichever snapshot they hold.
///
/// `servers` is the registration order; it fixes the layout order of
/// Eq-style redistribution and all index tie-breaks.
struct SliceTable {
  std::vector<Slice> slices;
  int bits = 16;
  std::uint64_t epoch = 0;
  std::vector<ServerId> servers;

  std::uint64_t space_size() const { return std::uint64_t{1} << bits; }
  bool empty() const { return servers.empty(); }

  bool operator==(const SliceTable&) const = default;
};

struct Redistribution {
  SliceTable table;
  std::vector<MigrationDirective> migrations;
};

/// Splits the space into n contiguous slices of size floor(2^b / n), the
/// first (2^b mod n) slices one unit larger, in the given server order.
SliceTable initial_equal(const std::vector<ServerId>& servers, int bits);

/// Recomputes every slice size from the window's task counts:
///
///   H_i = 2^b / n + 2^b * (1/n - t_i / sum(t))
///
/// then clamps each H_i to min_slice, renormalizes to 2^b, rounds by
/// largest remainder (ties by server index) and lays ranges out
/// contiguously in server registration order. A zero-traffic window
/// returns the table unchanged. Emitted directives cover exactly the
/// buckets whose owner changed.
Redistribution adaptive_redistribute(const SliceTable& table,
                                     const std::vector<LoadSample>& samples,
                                     std::uint64_t min_slice = 1);

/// Moves `left_amount` buckets from the low edge of the overloaded
/// server's slice to the predecessor slice's server and `right_amount`
/// from the high edge to the successor's. If the server owns several
/// slices the largest one (ties: lowest lo) is adjusted.
Redistribution shrink_edges(const SliceTable& table, const ServerId& overloaded,
                            std::uint64_t left_amount, std::uint64_t right_amount,
                            std::uint64_t min_slice = 1);

/// Carves [lo, hi] out of the middle of one of the overloaded server's
/// slices and assigns it to `target`, splitting the slice in up to three.
Redistribution split_fine(const SliceTable& table, const ServerId& overloaded,
                          Bucket lo, Bucket hi, const ServerId& target,
                          std::uint64_t min_slice = 1);

/// Coalesces consecutive slices owned by the same server. Ownership is
/// unchanged pointwise; idempotent.
SliceTable merge_adjacent(const SliceTable& table);

/// Creates a slice for a newly registered server out of the slice of the
/// most loaded server (largest t_i, ties by registration index): the half
/// with the larger windowed per-range task mass moves to the new server
/// (ties: upper half). A donor slice below 2*min_slice is extended into
/// one adjacent slice so both resulting slices stay >= min_slice.
Redistribution add_server(const SliceTable& table, const std::vector<LoadSample>& samples,
                          const ServerId& new_server, std::uint64_t min_slice = 1);

/// Reassigns every slice of a failed server to the surviving neighbors,
/// inversely proportional to the neighbors' current t_i (the less loaded
/// neighbor takes more; floor shares, remainder bucket to the less loaded,
/// ties left). Boundary slices go entirely to their single neighbor.
/// No migrations: the failed server's cache is gone.
SliceTable remove_server(const SliceTable& table, const ServerId& failed,
                         const std::vector<LoadSample>& samples);

/// Owner of a bucket; binary search over the sorted slices.
const ServerId& lookup(const SliceTable& table, Bucket bucket);

/// Throws if the table is not a sorted, disjoint, gap-free cover of
/// [0, 2^bits) with consistent server membership. An empty table (no
/// servers, no slices) is the valid pre-registration state.
void validate(const SliceTable& table);

/// Ownership changes between two tables over the same space, as maximal
/// contiguous directives. `from` is the old owner, `to` the new. Buckets
/// unowned in the old table (empty table) produce no directive.
std::vector<MigrationDirective> diff_ownership(const SliceTable& before,
                                               const SliceTable& after);

/// Bucket span [lo, hi] of range group `gid` when [0, 2^bits) is divided
/// into `group_count` equal groups (group of a bucket = bucket*G / 2^b).
std::pair<Bucket, Bucket> group_span(int gid, int group_count, int bits);

/// Windowed task mass a sample attributes to [lo, hi]; groups straddling
/// the range contribute proportionally to bucket overlap.
double load_in_range(const LoadSample& sample, Bucket lo, Bucket hi,
                     int group_count, int bits);

/// Wire form: {"bits": b, "epoch": e, "slices": [{"lo", "hi", "server"}]}.
void to_json(nlohmann::json& j, const SliceTable& table);
void from_json(const nlohmann::json& j, SliceTable& table);

}  // namespace dedup
