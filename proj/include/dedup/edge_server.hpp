#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dedup/lsh.hpp"
#include "dedup/stats.hpp"

namespace httplib {
class Server;
}

namespace dedup {

/// Deterministic stand-in for an edge service: classifies a payload to its
/// nearest unit-norm centroid and charges a fixed virtual cpu cost.
struct ServiceDef {
  std::string name;
  std::vector<FeatureVector> centroids;
  double cost_ms = 10.0;
};

/// Seeded service with k random unit-norm centroids; every party building
/// it with the same arguments gets the identical definition.
ServiceDef make_service(const std::string& name, int dim, int centroid_count,
                        std::uint64_t seed);

/// Index of the nearest centroid by cosine similarity; ties break to the
/// lowest index.
int classify(const ServiceDef& service, const FeatureVector& payload);

struct ResultValue {
  int label = 0;
  enum class Provenance { FromScratch, Reused } produced_by = Provenance::FromScratch;
};

struct ReuseCacheEntry {
  std::string service;
  FeatureVector vector;
  std::uint32_t signature = 0;
  ResultValue result;
  std::uint64_t stored_seq = 0;  // insertion order, drives eviction and tie-breaks
};

void to_json(nlohmann::json& j, const ReuseCacheEntry& e);
ReuseCacheEntry entry_from_json(const nlohmann::json& j, int bits);

struct TaskOutcome {
  ResultValue result;
  bool reused = false;
  double similarity = 0.0;  // meaningful when reused
};

/// Emulated reuse-caching edge server. The core task path is plain
/// library code; start() additionally exposes it over the proxy->server
/// HTTP protocol and begins periodic stats notifications.
class EdgeServer {
 public:
  struct Config {
    ServerId id = "S1";
    LshConfig lsh;
    std::vector<ServiceDef> services;
    std::size_t cache_capacity = 10000;
    int group_count = 64;
    std::string proxy_url;               // when set, self-registers and notifies
    double notify_interval_s = 1.0;
    double fail_hang_s = 2.0;            // how long a failed server sits on a task
  };

  explicit EdgeServer(Config config);
  ~EdgeServer();

  EdgeServer(const EdgeServer&) = delete;
  EdgeServer& operator=(const EdgeServer&) = delete;

  /// Nearest-neighbor reuse under the task's threshold: returns the stored
  /// result of the most similar cached entry for the service if its
  /// similarity reaches the threshold (ties: most recently stored entry),
  /// otherwise executes from scratch and stores a new entry.
  /// `bucket`, when given, attributes the task to a range group for stats.
  TaskOutcome handle_task(const std::string& service, const FeatureVector& payload,
                          double threshold, std::optional<Bucket> bucket = std::nullopt);

  ResultValue execute_from_scratch(const std::string& service, const FeatureVector& payload);

  /// Sends all cached entries with signature in [lo, hi] to another edge
  /// server's /migrate endpoint and drops them locally on success. On an
  /// unreachable target the entries stay (cold-start fallback).
  std::size_t migrate_entries(Bucket lo, Bucket hi, const std::string& to_url);

  /// Receiving side of a migration.
  std::size_t receive_entries(std::vector<ReuseCacheEntry> entries);

  StatsReport report_stats();
  void set_failed(bool failed) { failed_ = failed; }
  bool failed() const { return failed_; }

  std::size_t cache_size() const;
  std::uint64_t from_scratch_count() const;
  std::uint64_t reuse_count() const;
  double busy_ms() const;
  double current_cpu() const;
  double current_mem() const;

  const Config& config() const { return config_; }
  const Hasher& hasher() const { return hasher_; }

  /// Binds to 127.0.0.1 on `port` (0 = pick a free port), serves the task
  /// and control endpoints in a background thread, and starts the
  /// notification loop when a proxy URL is configured.
  void start(int port = 0, const std::string& host = "127.0.0.1");
  /// Stops the registration/stats notifier only; the task surface stays up.
  void stop_notifier();
  void stop();
  int port() const { return port_; }
  std::string url() const;

 private:
  const ServiceDef* find_service(const std::string& name) const;
  void evict_if_full_locked();
  void notifier_loop();
  nlohmann::json cache_stats_json() const;

  Config config_;
  Hasher hasher_;

  mutable std::mutex mu_;
  std::deque<ReuseCacheEntry> cache_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t from_scratch_ = 0;
  std::uint64_t reused_ = 0;
  double busy_ms_ = 0.0;
  std::map<int, std::uint64_t> group_tasks_;  // since last notification
  double cpu_ewma_ = 0.0;
  bool cpu_init_ = false;
  TimePoint last_report_at_;
  double busy_at_last_report_ = 0.0;

  std::atomic<bool> failed_{false};
  std::atomic<bool> running_{false};
  std::atomic<bool> notifying_{false};
  std::unique_ptr<httplib::Server> http_;
  std::thread http_thread_;
  std::thread notify_thread_;
  int port_ = 0;
};

}  // namespace dedup
