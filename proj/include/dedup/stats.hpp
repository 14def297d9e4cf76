#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dedup/slice_table.hpp"

namespace dedup {

using TimePoint = std::chrono::steady_clock::time_point;
using Duration = std::chrono::steady_clock::duration;

/// Explicit resource-usage notification from an edge server.
/// Wire form: POST /stats {"server", "cpu", "mem", "per_group": [[gid, tasks, cpu, mem], ...]}.
struct StatsReport {
  ServerId server;
  double cpu = 0.0;
  double mem = 0.0;
  struct Group {
    int gid = 0;
    std::uint64_t tasks = 0;
    double cpu = 0.0;
    double mem = 0.0;
  };
  std::vector<Group> per_group;
};

void to_json(nlohmann::json& j, const StatsReport& r);
void from_json(const nlohmann::json& j, StatsReport& r);

/// Response piggyback headers: X-CPU-Load, X-Mem-Load, X-Group-Stats.
struct Piggyback {
  std::optional<double> cpu;
  std::optional<double> mem;
  std::vector<std::pair<int, std::uint64_t>> group_tasks;
  int malformed = 0;  // fields that failed to parse, skipped
};

/// Parses the piggyback headers carried on a task response. Absent headers
/// leave the fields empty; malformed values bump `malformed` and are dropped.
Piggyback parse_piggyback(const std::optional<std::string>& cpu,
                          const std::optional<std::string>& mem,
                          const std::optional<std::string>& group_stats);

struct ServerHealth {
  ServerId server;
  TimePoint last_response_at{};
  TimePoint last_notification_at{};
  TimePoint inflight_since{};  // when the gauge last left zero
  std::int64_t inflight = 0;
  double cpu = 0.0;
  double mem = 0.0;
  bool has_cpu = false;
  bool has_mem = false;
};

struct OverloadFinding {
  ServerId server;
  double cpu = 0.0;
  double mem = 0.0;
  std::vector<int> hot_groups;  // busiest range groups first
};

/// Per-server and per-range load/health bookkeeping for the middlebox:
/// explicit notifications, piggybacked usage, routed-task windows feeding
/// redistribution, and the two failure-absence clauses.
///
/// All methods are safe to call concurrently; snapshot_window() gives a
/// consistent cut (an increment lands in exactly one window).
class StatsCollector {
 public:
  StatsCollector(int bits, int group_count, double ewma_alpha = 0.5);

  void register_server(const ServerId& id, TimePoint now);
  void unregister_server(const ServerId& id);
  bool is_registered(const ServerId& id) const;
  std::vector<ServerId> servers() const;

  /// Explicit notification. Unknown server: InputError (registration required).
  void ingest_notification(const StatsReport& report, TimePoint now);

  /// Piggybacked usage from a relayed response. Always refreshes
  /// last_response_at; malformed fields are counted and skipped.
  void ingest_piggyback(const ServerId& id, const Piggyback& fields, TimePoint now);

  /// A task was routed to `server`: bumps the window's t_i and, when the
  /// strategy hashed the task, the bucket's range-group counter.
  void record_routed(const ServerId& server, std::optional<Bucket> bucket);

  /// Routed total for shares/metrics (all time, not windowed; survives
  /// unregistration so post-failure metrics keep their history).
  std::uint64_t routed_total(const ServerId& server) const;

  /// Inflight gauge; 0 for unknown servers (never throws).
  std::int64_t inflight_of(const ServerId& id) const;

  /// Closes the current window and returns its per-server samples
  /// (servers with no traffic report t_i = 0); atomically opens a new one.
  std::vector<LoadSample> snapshot_window();

  /// The running window's samples without closing it (failure handling and
  /// server additions need current loads between redistribution ticks).
  std::vector<LoadSample> peek_window() const;

  /// Samples of the last closed window.
  std::vector<LoadSample> last_window() const;

  void begin_request(const ServerId& id, TimePoint now);
  void end_request(const ServerId& id, TimePoint now, bool got_response);

  /// Servers considered failed at `now`: a request outstanding past
  /// response_timeout with no response arriving in that span, or no
  /// notification for k_missed notification intervals.
  std::vector<ServerId> detect_failures(TimePoint now, Duration response_timeout,
                                        Duration notification_timeout, int k_missed) const;

  /// Servers whose smoothed cpu/mem exceed the thresholds, with their
  /// busiest range groups (current window) to steer slice adjustment.
  std::vector<OverloadFinding> detect_overload(double cpu_threshold, double mem_threshold,
                                               int top_groups = 3) const;

  ServerHealth health(const ServerId& id) const;
  std::uint64_t malformed_piggyback_count() const;

  int group_count() const { return group_count_; }
  int group_of(Bucket bucket) const;

 private:
  struct PerServer {
    ServerHealth health;
    std::uint64_t window_tasks = 0;
    std::map<int, std::uint64_t> window_group_tasks;
    std::map<int, GroupLoad> reported_groups;  // EWMA'd server-reported stats
    std::uint64_t routed_total = 0;
  };

  void ewma(double& slot, bool& has, double sample) const;
  std::vector<LoadSample> build_samples_locked() const;

  const int bits_;
  const int group_count_;
  const double alpha_;

  mutable std::mutex mu_;
  std::map<ServerId, PerServer> servers_;
  std::map<ServerId, std::uint64_t> retired_routed_;
  std::vector<LoadSample> last_window_;
  std::uint64_t malformed_ = 0;
};

/// Where a hot range group sits relative to the server's slices: at an
/// edge (shrink candidates) or strictly interior (fine-grain candidates).
enum class GroupPosition { Edge, Interior, Outside };

GroupPosition classify_group_position(const SliceTable& table, const ServerId& server,
                                      int gid, int group_count);

}  // namespace dedup
