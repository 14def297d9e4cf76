#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "dedup/slice_table.hpp"

using namespace dedup;

namespace {

LoadSample sample(const ServerId& id, std::uint64_t tasks) {
  LoadSample s;
  s.server = id;
  s.tasks = tasks;
  return s;
}

/// Brute-force ownership diff over every bucket; the independent oracle
/// for migration soundness (usable for small b).
std::map<Bucket, std::pair<ServerId, ServerId>> brute_diff(const SliceTable& before,
                                                           const SliceTable& after) {
  std::map<Bucket, std::pair<ServerId, ServerId>> changed;
  for (std::uint64_t bucket = 0; bucket < before.space_size(); ++bucket) {
    const ServerId& old_owner = lookup(before, static_cast<Bucket>(bucket));
    const ServerId& new_owner = lookup(after, static_cast<Bucket>(bucket));
    if (old_owner != new_owner) {
      changed[static_cast<Bucket>(bucket)] = {old_owner, new_owner};
    }
  }
  return changed;
}

void check_migrations_exact(const SliceTable& before, const SliceTable& after,
                            const std::vector<MigrationDirective>& migrations) {
  auto expected = brute_diff(before, after);
  std::set<Bucket> covered;
  for (const auto& m : migrations) {
    REQUIRE(m.from != m.to);
    for (std::uint64_t b = m.lo; b <= m.hi; ++b) {
      const Bucket bucket = static_cast<Bucket>(b);
      REQUIRE(covered.insert(bucket).second);  // directives must not overlap
      auto it = expected.find(bucket);
      REQUIRE(it != expected.end());
      CHECK(it->second.first == m.from);
      CHECK(it->second.second == m.to);
    }
  }
  CHECK(covered.size() == expected.size());
}

}  // namespace

TEST_CASE("initial_equal matches the documented rounding rule") {
  SUBCASE("three servers over a 16-bit space") {
    const SliceTable t = initial_equal({"S1", "S2", "S3"}, 16);
    // 65536 = 3*21845 + 1: the first slice takes the spare bucket.
    CHECK(t.slices[0] == Slice{0, 21845, "S1"});
    CHECK(t.slices[1] == Slice{21846, 43690, "S2"});
    CHECK(t.slices[2] == Slice{43691, 65535, "S3"});
    CHECK(t.epoch == 0);
  }
  SUBCASE("single server owns the space") {
    const SliceTable t = initial_equal({"S1"}, 4);
    CHECK(t.slices == std::vector<Slice>{{0, 15, "S1"}});
  }
  SUBCASE("exact division") {
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    CHECK(t.slices == std::vector<Slice>{{0, 7, "S1"}, {8, 15, "S2"}});
  }
  SUBCASE("more servers than buckets") {
    std::vector<ServerId> many;
    for (int i = 0; i < 20; ++i) many.push_back("S" + std::to_string(i));
    CHECK_THROWS_AS(initial_equal(many, 4), ConfigError);
  }
}

TEST_CASE("adaptive_redistribute evaluates the sizing equation exactly") {
  SUBCASE("hand-evaluated skewed case") {
    // n=2, b=4, t=(12,4): H1 = 8 + 16*(1/2 - 12/16) = 4, H2 = 12.
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    const auto [next, migrations] =
        adaptive_redistribute(t, {sample("S1", 12), sample("S2", 4)});
    CHECK(next.slices == std::vector<Slice>{{0, 3, "S1"}, {4, 15, "S2"}});
    CHECK(next.epoch == t.epoch + 1);
    check_migrations_exact(t, next, migrations);
    CHECK(migrations == std::vector<MigrationDirective>{{4, 7, "S1", "S2"}});
  }
  SUBCASE("degenerate load clamps to min_slice") {
    // t=(16,0): raw H1 = 8 + 16*(1/2 - 1) = 0 -> clamped to 1, H2 = 15.
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    const auto [next, migrations] =
        adaptive_redistribute(t, {sample("S1", 16), sample("S2", 0)});
    CHECK(next.slices == std::vector<Slice>{{0, 0, "S1"}, {1, 15, "S2"}});
    check_migrations_exact(t, next, migrations);
  }
  SUBCASE("equal loads keep ownership, bump epoch") {
    const SliceTable t = initial_equal({"S1", "S2", "S3"}, 8);
    const auto [next, migrations] =
        adaptive_redistribute(t, {sample("S1", 5), sample("S2", 5), sample("S3", 5)});
    CHECK(next.epoch == t.epoch + 1);
    CHECK(migrations.empty());
    for (std::uint64_t b = 0; b < t.space_size(); ++b) {
      CHECK(lookup(next, static_cast<Bucket>(b)) == lookup(t, static_cast<Bucket>(b)));
    }
  }
  SUBCASE("zero-traffic window is a no-op") {
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    const auto [next, migrations] =
        adaptive_redistribute(t, {sample("S1", 0), sample("S2", 0)});
    CHECK(next == t);
    CHECK(migrations.empty());
  }
  SUBCASE("missing sample is an input error") {
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    CHECK_THROWS_AS(adaptive_redistribute(t, {sample("S1", 3)}), InputError);
  }
}

TEST_CASE("pre-clamp slice size strictly decreases with load") {
  // Direct evaluation of the sizing formula, the argument-level
  // monotonicity the redistribution relies on.
  const double total = 65536.0;
  const double n = 4.0;
  const double sum_t = 1000.0;
  double previous = 1e300;
  for (double t_i : {0.0, 100.0, 250.0, 400.0, 700.0, 1000.0}) {
    const double h = total / n + total * (1.0 / n - t_i / sum_t);
    CHECK(h < previous);
    previous = h;
  }
}

TEST_CASE("shrink_edges moves edge buckets to the neighbors") {
  const SliceTable t = initial_equal({"S1", "S2"}, 4);

  SUBCASE("zero amounts change nothing") {
    const auto [next, migrations] = shrink_edges(t, "S2", 0, 0);
    CHECK(next == t);
    CHECK(migrations.empty());
  }
  SUBCASE("left shrink grows the predecessor") {
    const auto [next, migrations] = shrink_edges(t, "S2", 2, 0);
    CHECK(next.slices == std::vector<Slice>{{0, 9, "S1"}, {10, 15, "S2"}});
    CHECK(migrations == std::vector<MigrationDirective>{{8, 9, "S2", "S1"}});
    check_migrations_exact(t, next, migrations);
  }
  SUBCASE("both edges of a middle slice") {
    const SliceTable t3 = initial_equal({"S1", "S2", "S3"}, 8);
    const auto [next, migrations] = shrink_edges(t3, "S2", 10, 6);
    check_migrations_exact(t3, next, migrations);
    CHECK(next.slices[0].hi == t3.slices[0].hi + 10);
    CHECK(next.slices[2].lo == t3.slices[2].lo - 6);
  }
  SUBCASE("amount exhausting the slice is rejected") {
    CHECK_THROWS_AS(shrink_edges(t, "S2", 8, 0), InvalidAdjustment);
  }
  SUBCASE("shrinking toward a missing neighbor is rejected") {
    CHECK_THROWS_AS(shrink_edges(t, "S1", 1, 0), InvalidAdjustment);
    CHECK_THROWS_AS(shrink_edges(t, "S2", 0, 1), InvalidAdjustment);
  }
  SUBCASE("unknown owner is an input error") {
    CHECK_THROWS_AS(shrink_edges(t, "S9", 1, 0), InputError);
  }
}

TEST_CASE("split_fine carves an interior range for another server") {
  SUBCASE("middle of a single-slice table") {
    const SliceTable t = initial_equal({"S1"}, 4);
    SliceTable with_s2 = t;
    with_s2.servers.push_back("S2");  // target must be known to the table
    const auto [next, migrations] = split_fine(with_s2, "S1", 6, 9, "S2");
    CHECK(next.slices ==
          std::vector<Slice>{{0, 5, "S1"}, {6, 9, "S2"}, {10, 15, "S1"}});
    CHECK(migrations == std::vector<MigrationDirective>{{6, 9, "S1", "S2"}});
  }
  SUBCASE("the paper-scale example ranges") {
    SliceTable t = initial_equal({"S1", "S2", "S3"}, 16);
    const auto [next, migrations] = split_fine(t, "S2", 30256, 35452, "S1");
    CHECK(lookup(next, 30256) == "S1");
    CHECK(lookup(next, 35452) == "S1");
    CHECK(lookup(next, 30255) == "S2");
    CHECK(lookup(next, 35453) == "S2");
    check_migrations_exact(t, next, migrations);
  }
  SUBCASE("full-slice subrange degenerates to reassignment") {
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    const auto [next, migrations] = split_fine(t, "S1", 0, 7, "S2");
    CHECK(next.slices == std::vector<Slice>{{0, 7, "S2"}, {8, 15, "S2"}});
    CHECK(lookup(next, 3) == "S2");
    check_migrations_exact(t, next, migrations);
  }
  SUBCASE("subrange spanning two slices is rejected") {
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    CHECK_THROWS_AS(split_fine(t, "S1", 6, 9, "S2"), InvalidAdjustment);
  }
  SUBCASE("target equal to owner is rejected") {
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    CHECK_THROWS_AS(split_fine(t, "S1", 2, 3, "S1"), InvalidAdjustment);
  }
}

TEST_CASE("merge_adjacent coalesces same-server runs") {
  SUBCASE("definition") {
    SliceTable t;
    t.bits = 4;
    t.servers = {"S1", "S2"};
    t.slices = {{0, 5, "S1"}, {6, 9, "S1"}, {10, 15, "S2"}};
    const SliceTable merged = merge_adjacent(t);
    CHECK(merged.slices == std::vector<Slice>{{0, 9, "S1"}, {10, 15, "S2"}});
    CHECK(merged.epoch == t.epoch + 1);
  }
  SUBCASE("idempotent on merged tables") {
    const SliceTable t = initial_equal({"S1", "S2", "S3"}, 6);
    const SliceTable merged = merge_adjacent(t);
    CHECK(merged == t);  // nothing to do, table returned unchanged
  }
  SUBCASE("split then reassign back round-trips") {
    const SliceTable t = initial_equal({"S1", "S2"}, 6);
    const auto [split, m1] = split_fine(t, "S1", 10, 20, "S2");
    const auto [back, m2] = split_fine(split, "S2", 10, 20, "S1");
    const SliceTable merged = merge_adjacent(back);
    CHECK(merged.slices == t.slices);
  }
}

TEST_CASE("add_server carves a slice out of the most loaded server") {
  SUBCASE("uniform per-range load splits in half, upper half moves") {
    const SliceTable t = initial_equal({"S1"}, 4);
    LoadSample s1 = sample("S1", 16);
    // With G=64 over a 4-bit space, bucket b maps to group 4*b; one task
    // per bucket is a perfectly uniform profile.
    for (int b = 0; b < 16; ++b) s1.per_range[4 * b] = {1, 0.0, 0.0};
    const auto [next, migrations] = add_server(t, {s1}, "S2");
    CHECK(next.slices == std::vector<Slice>{{0, 7, "S1"}, {8, 15, "S2"}});
    CHECK(next.servers == std::vector<ServerId>{"S1", "S2"});
    CHECK(migrations == std::vector<MigrationDirective>{{8, 15, "S1", "S2"}});
    check_migrations_exact(t, next, migrations);
  }
  SUBCASE("bottom-heavy load hands over the lower half") {
    const SliceTable t = initial_equal({"S1"}, 6);
    LoadSample s1 = sample("S1", 100);
    s1.per_range[0] = {90, 0.0, 0.0};   // low buckets
    s1.per_range[63] = {10, 0.0, 0.0};  // high buckets
    const auto [next, migrations] = add_server(t, {s1}, "S2");
    REQUIRE(next.slices.size() == 2);
    CHECK(next.slices[0].server == "S2");
    CHECK(next.slices[1].server == "S1");
    check_migrations_exact(t, next, migrations);
  }
  SUBCASE("most loaded donor wins, ties to the earliest") {
    const SliceTable t = initial_equal({"S1", "S2", "S3"}, 8);
    const auto [next, migrations] =
        add_server(t, {sample("S1", 1), sample("S2", 9), sample("S3", 2)}, "S4");
    // S2's slice [86,170] is halved; S4 takes one half.
    CHECK(lookup(next, 170) == "S4");
    CHECK(lookup(next, 86) == "S2");
    check_migrations_exact(t, next, migrations);
  }
  SUBCASE("adding to an empty table is the single-server initial split") {
    SliceTable empty;
    empty.bits = 4;
    const auto [next, migrations] = add_server(empty, {}, "S1");
    CHECK(next.slices == std::vector<Slice>{{0, 15, "S1"}});
    CHECK(migrations.empty());
  }
  SUBCASE("duplicate server is an input error") {
    const SliceTable t = initial_equal({"S1"}, 4);
    CHECK_THROWS_AS(add_server(t, {sample("S1", 0)}, "S1"), InputError);
  }
  SUBCASE("tiny donor slice extends into a neighbor") {
    // S1 owns [0,1] with min_slice=2: the new server must reach into S2's
    // slice to assemble a min_slice-wide slice.
    SliceTable t;
    t.bits = 4;
    t.servers = {"S1", "S2"};
    t.slices = {{0, 1, "S1"}, {2, 15, "S2"}};
    const auto [next, migrations] =
        add_server(t, {sample("S1", 9), sample("S2", 1)}, "S3", 2);
    validate(next);
    std::uint64_t s3_buckets = 0;
    for (const auto& s : next.slices) {
      if (s.server == "S3") s3_buckets += s.size();
    }
    CHECK(s3_buckets >= 2);
    for (const auto& s : next.slices) CHECK(s.size() >= 2);
    check_migrations_exact(t, next, migrations);
  }
}

TEST_CASE("remove_server reassigns slices to surviving neighbors") {
  SUBCASE("two servers leave a single owner") {
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    const SliceTable next = remove_server(t, "S2", {});
    CHECK(next.servers == std::vector<ServerId>{"S1"});
    CHECK(next.slices.front().lo == 0);
    CHECK(next.slices.back().hi == 15);
  }
  SUBCASE("inverse-load proportional split with floor and remainder") {
    // Slices [0,4][5,10][11,15]; remove the middle with neighbor loads
    // (1, 3): the less loaded left neighbor takes 5..9, the right takes 10.
    SliceTable t;
    t.bits = 4;
    t.servers = {"S1", "S2", "S3"};
    t.slices = {{0, 4, "S1"}, {5, 10, "S2"}, {11, 15, "S3"}};
    const SliceTable next =
        remove_server(t, "S2", {sample("S1", 1), sample("S3", 3)});
    CHECK(next.slices == std::vector<Slice>{{0, 9, "S1"}, {10, 15, "S3"}});
  }
  SUBCASE("boundary slice goes entirely to its single neighbor") {
    const SliceTable t = initial_equal({"S1", "S2", "S3"}, 8);
    const SliceTable next = remove_server(t, "S1", {sample("S2", 5), sample("S3", 5)});
    CHECK(lookup(next, 0) == "S2");
  }
  SUBCASE("removing the last server is a configuration error") {
    const SliceTable t = initial_equal({"S1"}, 4);
    CHECK_THROWS_AS(remove_server(t, "S1", {}), ConfigError);
  }
  SUBCASE("unknown server is an input error") {
    const SliceTable t = initial_equal({"S1", "S2"}, 4);
    CHECK_THROWS_AS(remove_server(t, "S7", {}), InputError);
  }
}

TEST_CASE("lookup agrees with the published equal-split table") {
  // The three-server 16-bit table as published: 0-21844 / 21845-43689 /
  // 43690-65535. Loaded verbatim, bucket 21845 belongs to server 2.
  const nlohmann::json j = {
      {"bits", 16},
      {"epoch", 0},
      {"slices",
       {{{"lo", 0}, {"hi", 21844}, {"server", "S1"}},
        {{"lo", 21845}, {"hi", 43689}, {"server", "S2"}},
        {{"lo", 43690}, {"hi", 65535}, {"server", "S3"}}}}};
  const SliceTable t = j.get<SliceTable>();
  CHECK(lookup(t, 21844) == "S1");
  CHECK(lookup(t, 21845) == "S2");
  CHECK(lookup(t, 0) == "S1");
  CHECK(lookup(t, 65535) == "S3");
  CHECK_THROWS_AS(lookup(t, 65536u), InputError);
}

TEST_CASE("slice table JSON round-trips through the wire schema") {
  const SliceTable t = initial_equal({"S1", "S2", "S3"}, 10);
  nlohmann::json j;
  to_json(j, t);
  CHECK(j.size() == 3);  // exactly bits, epoch, slices
  CHECK(j.contains("bits"));
  CHECK(j.contains("epoch"));
  CHECK(j.contains("slices"));
  const SliceTable back = j.get<SliceTable>();
  CHECK(back.slices == t.slices);
  CHECK(back.bits == t.bits);
  CHECK(back.epoch == t.epoch);
}

TEST_CASE("group spans partition the space") {
  for (const int bits : {4, 10}) {
    const int G = 64;
    std::uint64_t covered = 0;
    for (int g = 0; g < G; ++g) {
      const auto [lo, hi] = group_span(g, G, bits);
      if (lo > hi) continue;
      covered += std::uint64_t{hi} - lo + 1;
    }
    CHECK(covered == (std::uint64_t{1} << bits));
  }
}

TEST_CASE("random operation sequences preserve the partition invariant") {
  std::mt19937_64 rng(1234);
  const int sequences = 300;
  for (int seq = 0; seq < sequences; ++seq) {
    const int bits = 4 + static_cast<int>(rng() % 9);  // 4..12
    const int n = 1 + static_cast<int>(rng() % 5);
    std::vector<ServerId> ids;
    for (int i = 0; i < n; ++i) ids.push_back("S" + std::to_string(i));
    SliceTable table = initial_equal(ids, bits);
    std::uint64_t last_epoch = table.epoch;
    int next_id = n;

    for (int step = 0; step < 8; ++step) {
      std::vector<LoadSample> samples;
      for (const auto& id : table.servers) {
        LoadSample s = sample(id, rng() % 50);
        const int g = static_cast<int>(rng() % 64);
        s.per_range[g] = {rng() % 20, 0.0, 0.0};
        samples.push_back(std::move(s));
      }
      const SliceTable before = table;
      std::vector<MigrationDirective> migrations;
      const int op = static_cast<int>(rng() % 6);
      try {
        switch (op) {
          case 0: {
            auto r = adaptive_redistribute(before, samples);
            table = r.table;
            migrations = r.migrations;
            break;
          }
          case 1: {
            const ServerId& victim = before.servers[rng() % before.servers.size()];
            auto r = shrink_edges(before, victim, rng() % 3, rng() % 3);
            table = r.table;
            migrations = r.migrations;
            break;
          }
          case 2: {
            const Slice& s = before.slices[rng() % before.slices.size()];
            const std::uint64_t width = s.size();
            const Bucket lo = static_cast<Bucket>(s.lo + rng() % width);
            const Bucket hi = static_cast<Bucket>(
                std::min<std::uint64_t>(s.hi, lo + rng() % width));
            const ServerId& target = before.servers[rng() % before.servers.size()];
            auto r = split_fine(before, s.server, lo, hi, target);
            table = r.table;
            migrations = r.migrations;
            break;
          }
          case 3:
            table = merge_adjacent(before);
            break;
          case 4: {
            auto r = add_server(before, samples, "S" + std::to_string(next_id++));
            table = r.table;
            migrations = r.migrations;
            break;
          }
          case 5: {
            const ServerId victim = before.servers[rng() % before.servers.size()];
            table = remove_server(before, victim, samples);
            break;
          }
        }
      } catch (const InvalidAdjustment&) {
        continue;
      } catch (const ConfigError&) {
        continue;
      } catch (const InputError&) {
        continue;
      }
      validate(table);
      if (table.epoch != before.epoch) {
        CHECK(table.epoch > last_epoch);
        last_epoch = table.epoch;
      }
      if (op != 5 && op != 3) {
        check_migrations_exact(before, table, migrations);
      }
    }
  }
}
