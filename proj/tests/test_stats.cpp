#include <doctest.h>

#include "dedup/stats.hpp"

using namespace dedup;
using namespace std::chrono_literals;

namespace {
const TimePoint t0 = std::chrono::steady_clock::now();
}

TEST_CASE("notifications update health with first-sample-initialized EWMA") {
  StatsCollector stats(16, 64);
  stats.register_server("S1", t0);

  StatsReport r;
  r.server = "S1";
  r.cpu = 0.2;
  r.mem = 0.1;
  stats.ingest_notification(r, t0 + 1s);
  CHECK(stats.health("S1").cpu == doctest::Approx(0.2));

  r.cpu = 0.6;
  stats.ingest_notification(r, t0 + 2s);
  CHECK(stats.health("S1").cpu == doctest::Approx(0.4));  // 0.5*0.6 + 0.5*0.2
  CHECK(stats.health("S1").last_notification_at == t0 + 2s);

  StatsReport unknown;
  unknown.server = "S9";
  CHECK_THROWS_AS(stats.ingest_notification(unknown, t0), InputError);
}

TEST_CASE("piggyback fields move health and malformed ones are counted") {
  StatsCollector stats(16, 64);
  stats.register_server("S1", t0);

  SUBCASE("cpu field applies") {
    const Piggyback p = parse_piggyback(std::string("0.8"), std::nullopt, std::nullopt);
    CHECK(p.malformed == 0);
    stats.ingest_piggyback("S1", p, t0 + 1s);
    CHECK(stats.health("S1").cpu == doctest::Approx(0.8));
    CHECK(stats.health("S1").last_response_at == t0 + 1s);
  }
  SUBCASE("absent headers only refresh the response time") {
    const Piggyback p = parse_piggyback(std::nullopt, std::nullopt, std::nullopt);
    stats.ingest_piggyback("S1", p, t0 + 2s);
    CHECK(stats.health("S1").last_response_at == t0 + 2s);
    CHECK_FALSE(stats.health("S1").has_cpu);
  }
  SUBCASE("malformed floats bump the counter and leave health alone") {
    const Piggyback p = parse_piggyback(std::string("banana"), std::string("1.7"),
                                        std::nullopt);
    CHECK(p.malformed == 2);  // not a float; out of [0,1]
    stats.ingest_piggyback("S1", p, t0 + 1s);
    CHECK(stats.malformed_piggyback_count() == 2);
    CHECK_FALSE(stats.health("S1").has_cpu);
    CHECK_FALSE(stats.health("S1").has_mem);
  }
  SUBCASE("group stats parse") {
    const Piggyback p =
        parse_piggyback(std::nullopt, std::nullopt, std::string("3:10,7:2"));
    CHECK(p.group_tasks ==
          std::vector<std::pair<int, std::uint64_t>>{{3, 10}, {7, 2}});
    const Piggyback bad =
        parse_piggyback(std::nullopt, std::nullopt, std::string("3:10,oops"));
    CHECK(bad.malformed == 1);
    CHECK(bad.group_tasks.size() == 1);
  }
}

TEST_CASE("routed windows conserve counts and reset on snapshot") {
  StatsCollector stats(4, 64);
  stats.register_server("S1", t0);
  stats.register_server("S2", t0);

  SUBCASE("first window with no traffic is all zero") {
    for (const auto& s : stats.snapshot_window()) CHECK(s.tasks == 0);
  }
  SUBCASE("counts match record_routed calls and group totals") {
    for (int i = 0; i < 5; ++i) stats.record_routed("S1", 3);
    stats.record_routed("S2", 9);
    const auto samples = stats.snapshot_window();
    std::uint64_t total = 0, group_total = 0;
    for (const auto& s : samples) {
      total += s.tasks;
      for (const auto& [gid, load] : s.per_range) group_total += load.tasks;
    }
    CHECK(total == 6);
    CHECK(group_total == 6);
    for (const auto& s : samples) {
      if (s.server == "S1") CHECK(s.tasks == 5);
      if (s.server == "S2") CHECK(s.tasks == 1);
    }

    // Rollover: the next snapshot is empty, the previous one is retained.
    for (const auto& s : stats.snapshot_window()) CHECK(s.tasks == 0);
    for (const auto& s : stats.last_window()) CHECK(s.tasks == 0);
  }
  SUBCASE("group id is bucket*G / 2^b") {
    CHECK(stats.group_of(0) == 0);
    CHECK(stats.group_of(15) == 60);  // 15*64/16
    stats.record_routed("S1", 15);
    const auto samples = stats.snapshot_window();
    for (const auto& s : samples) {
      if (s.server != "S1") continue;
      CHECK(s.per_range.count(60) == 1);
    }
  }
}

TEST_CASE("failure detection needs absence of both responses and notifications") {
  StatsCollector stats(16, 64);
  stats.register_server("S1", t0);
  const auto response_timeout = 2s;
  const auto notification_interval = 1s;
  const int k = 3;

  SUBCASE("fresh server is healthy") {
    CHECK(stats.detect_failures(t0 + 500ms, response_timeout, notification_interval, k)
              .empty());
  }
  SUBCASE("silence for k intervals fails the server") {
    const auto failed =
        stats.detect_failures(t0 + 3001ms, response_timeout, notification_interval, k);
    CHECK(failed == std::vector<ServerId>{"S1"});
  }
  SUBCASE("recent notifications keep it alive") {
    StatsReport r;
    r.server = "S1";
    stats.ingest_notification(r, t0 + 2900ms);
    CHECK(stats.detect_failures(t0 + 3001ms, response_timeout, notification_interval, k)
              .empty());
  }
  SUBCASE("hanging request with stale responses fails it before the k window") {
    StatsReport r;
    r.server = "S1";
    stats.ingest_notification(r, t0 + 2500ms);  // notifications stay fresh
    stats.begin_request("S1", t0 + 100ms);
    // Outstanding for less than the timeout: healthy.
    CHECK(stats.detect_failures(t0 + 2000ms, response_timeout, notification_interval, k)
              .empty());
    // Outstanding past the timeout with no response in that span: failed.
    const auto failed =
        stats.detect_failures(t0 + 2500ms, response_timeout, notification_interval, k);
    CHECK(failed == std::vector<ServerId>{"S1"});
    // The response arrives after all: healthy again.
    stats.end_request("S1", t0 + 2600ms, true);
    CHECK(stats.detect_failures(t0 + 2700ms, response_timeout, notification_interval, k)
              .empty());
  }
  SUBCASE("a fresh inflight request alone is not a failure") {
    stats.begin_request("S1", t0 + 2900ms);
    StatsReport r;
    r.server = "S1";
    stats.ingest_notification(r, t0 + 2900ms);
    CHECK(stats.detect_failures(t0 + 3000ms, response_timeout, notification_interval, k)
              .empty());
  }
}

TEST_CASE("overload detection reports hot groups") {
  StatsCollector stats(8, 64);
  stats.register_server("S1", t0);
  stats.register_server("S2", t0);
  StatsReport hot;
  hot.server = "S1";
  hot.cpu = 0.95;
  stats.ingest_notification(hot, t0);
  StatsReport cool;
  cool.server = "S2";
  cool.cpu = 0.3;
  stats.ingest_notification(cool, t0);

  for (int i = 0; i < 8; ++i) stats.record_routed("S1", 100);
  stats.record_routed("S1", 7);

  SUBCASE("all idle means empty findings") {
    StatsCollector idle(8, 64);
    idle.register_server("S1", t0);
    CHECK(idle.detect_overload(0.9, 0.9).empty());
  }
  SUBCASE("hot server is listed with its busiest group first") {
    const auto findings = stats.detect_overload(0.9, 0.9);
    REQUIRE(findings.size() == 1);
    CHECK(findings[0].server == "S1");
    REQUIRE(!findings[0].hot_groups.empty());
    CHECK(findings[0].hot_groups[0] == stats.group_of(100));
  }
  SUBCASE("thresholds are validated") {
    CHECK_THROWS_AS(stats.detect_overload(0.0, 0.9), ConfigError);
  }
}

TEST_CASE("hot groups classify as edge or interior relative to the slice") {
  const SliceTable table = initial_equal({"S1", "S2"}, 8);  // [0,127] [128,255]
  const int G = 64;                                         // 4 buckets per group
  // Group 0 covers [0,3]: touches S1's low edge.
  CHECK(classify_group_position(table, "S1", 0, G) == GroupPosition::Edge);
  // Group 31 covers [124,127]: touches S1's high edge.
  CHECK(classify_group_position(table, "S1", 31, G) == GroupPosition::Edge);
  // Group 10 covers [40,43]: strictly interior to S1.
  CHECK(classify_group_position(table, "S1", 10, G) == GroupPosition::Interior);
  // Group 10 does not overlap S2 at all.
  CHECK(classify_group_position(table, "S2", 10, G) == GroupPosition::Outside);
}
