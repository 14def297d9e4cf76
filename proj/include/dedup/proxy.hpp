#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dedup/lsh.hpp"
#include "dedup/stats.hpp"
#include "dedup/strategy.hpp"

namespace httplib {
class Server;
}

namespace dedup {

namespace detail {
class BackendClients;
}

/// Raised when no live server can take a task (503 on the wire).
class NoLiveServers : public std::runtime_error {
 public:
  NoLiveServers() : std::runtime_error("no live edge servers") {}
};

struct TaskRequest {
  std::string task_id;
  std::string service;
  std::string client_id;
  double threshold = 0.9;
  std::optional<std::uint32_t> precomputed_signature;  // user-assisted mode
  FeatureVector payload;
};

struct RouteDecision {
  ServerId server;
  std::optional<Bucket> bucket;  // set for reuse strategies
  std::uint64_t epoch = 0;
  double decision_ms = 0.0;
};

struct RelayedResponse {
  int status = 0;
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;  // piggyback already stripped
  bool reused = false;
};

/// The Deduplicator middlebox: accepts offloaded tasks, computes or
/// extracts the LSH signature, routes by the configured strategy, relays
/// responses (extracting piggybacked usage), and drives redistribution,
/// registration and failure handling over a single control path.
class DedupProxy {
 public:
  struct Config {
    DistributionStrategy strategy = DistributionStrategy::ReuseAdaptive;
    LshConfig lsh;  // bits also fixes the slice space
    double redistribution_interval_s = 5.0;
    int group_count = 64;
    std::uint64_t min_slice = 1;
    double cpu_threshold = 0.9;
    double mem_threshold = 0.9;
    double response_timeout_s = 2.0;
    double notification_interval_s = 1.0;
    int k_missed = 3;
    int virtual_nodes = 100;
    std::uint64_t rng_seed = 0;  // Random baseline
    bool periodic_redistribution = true;
    bool failure_detection = true;
  };

  explicit DedupProxy(Config config);
  ~DedupProxy();

  DedupProxy(const DedupProxy&) = delete;
  DedupProxy& operator=(const DedupProxy&) = delete;

  // --- control path ---------------------------------------------------

  /// Registration message from a new edge server. Duplicate id: InputError.
  void handle_register(const ServerId& id, const std::string& address);

  /// Drops a server from routing; reuse strategies reassign its slices.
  void handle_failure(const ServerId& id);

  /// One redistribution pass (ReuseAdaptive): close the load window, apply
  /// the adaptive equation, swap the table, then push warm-start
  /// migrations. Any error leaves the previous table active.
  void redistribution_tick();

  /// Reactive slice adjustment from overload findings: hot edge groups
  /// shrink the slice toward a neighbor, hot interior groups are carved
  /// out for the least loaded server. Returns adjustments applied.
  int apply_overload_adjustments();

  // --- routing --------------------------------------------------------

  RouteDecision route(const TaskRequest& req);

  /// Wire-form routing: signature extraction (X-LSH hex or hashing the
  /// body's leading JSON array) is part of the measured decision time.
  /// Baselines never parse the body.
  RouteDecision route_wire(const std::string& service,
                           const std::optional<std::string>& lsh_hex, std::string_view body,
                           const std::string& client_id);

  RelayedResponse forward_and_relay(const TaskRequest& req, const RouteDecision& decision,
                                    std::string_view raw_body);

  // --- introspection ---------------------------------------------------

  nlohmann::json admin_metrics() const;
  std::shared_ptr<const SliceTable> table_snapshot() const;
  StatsCollector& stats() { return stats_; }
  const Config& config() const { return config_; }
  const Hasher& hasher() const { return hasher_; }
  std::uint64_t migrated_entries_total() const { return migrated_entries_; }
  std::uint64_t redistribution_count() const { return redistributions_; }
  std::pair<double, double> decision_quantiles_ms() const;  // {p50, p99}
  std::vector<ServerId> live_servers() const;
  std::string backend_address(const ServerId& id) const;

  // --- HTTP ------------------------------------------------------------

  void start(int port = 0, const std::string& host = "127.0.0.1");
  void stop();
  int port() const { return port_; }
  std::string url() const;

 private:
  struct Backend {
    ServerId id;
    std::string address;
    bool live = true;
  };

  ServerId select_baseline(const std::string& client_id);
  std::pair<ServerId, std::uint64_t> lookup_bucket(Bucket bucket) const;
  std::shared_ptr<detail::BackendClients> pool_for(const std::string& address);
  void swap_table(SliceTable next);
  void issue_migrations(const std::vector<MigrationDirective>& migrations);
  void record_decision(double ms);
  void control_loop();
  std::vector<ServerId> live_ids_locked() const;

  Config config_;
  Hasher hasher_;
  StatsCollector stats_;

  mutable std::mutex state_mu_;
  std::vector<Backend> backends_;
  std::map<std::string, std::shared_ptr<detail::BackendClients>> pools_;
  std::shared_ptr<const SliceTable> table_;
  ConsistentHashRing ring_;
  std::mt19937_64 rng_;
  std::atomic<std::uint64_t> rr_cursor_{0};

  std::mutex control_mu_;
  std::atomic<std::uint64_t> migrated_entries_{0};
  std::atomic<std::uint64_t> redistributions_{0};

  mutable std::mutex decisions_mu_;
  std::vector<double> decision_ms_;

  std::atomic<bool> running_{false};
  std::unique_ptr<httplib::Server> http_;
  std::thread http_thread_;
  std::thread control_thread_;
  int port_ = 0;
};

}  // namespace dedup
