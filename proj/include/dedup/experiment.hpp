#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dedup/edge_server.hpp"
#include "dedup/proxy.hpp"
#include "dedup/workload.hpp"

namespace dedup {

struct DeploymentParams {
  DistributionStrategy strategy = DistributionStrategy::ReuseAdaptive;
  int servers = 3;
  int bits = 16;
  int dim = 16;
  std::uint64_t lsh_seed = 9001;
  std::uint64_t service_seed = 4242;
  int service_centroids = 8;
  double cost_ms = 10.0;
  std::size_t cache_capacity = 10000;
  int group_count = 64;
  std::uint64_t min_slice = 1;
  double redistribution_interval_s = 0.2;
  double notification_interval_s = 0.25;
  double response_timeout_s = 0.5;
  int k_missed = 10;
  double cpu_threshold = 0.9;
  double mem_threshold = 0.9;
};

/// Proxy plus n emulated edge servers on loopback ports; servers
/// self-register in id order (S1, S2, ...).
class LocalDeployment {
 public:
  LocalDeployment(const DeploymentParams& params, std::vector<ServiceDef> services);
  ~LocalDeployment();

  LocalDeployment(const LocalDeployment&) = delete;
  LocalDeployment& operator=(const LocalDeployment&) = delete;

  DedupProxy& proxy() { return *proxy_; }
  EdgeServer& edge(std::size_t i) { return *edges_[i]; }
  std::size_t edge_count() const { return edges_.size(); }
  EdgeServer* edge_by_id(const ServerId& id);
  const std::vector<ServiceDef>& services() const { return services_; }
  const DeploymentParams& params() const { return params_; }
  std::vector<ServerId> server_ids() const;

  /// Spawns and registers the next server (S{n+1}); returns its id.
  ServerId add_edge_server();

  void shutdown();

 private:
  ServerId spawn_edge_locked();

  DeploymentParams params_;
  std::vector<ServiceDef> services_;
  std::unique_ptr<DedupProxy> proxy_;
  std::vector<std::unique_ptr<EdgeServer>> edges_;
  int next_index_ = 1;
};

std::vector<ServiceDef> default_services(const DeploymentParams& params,
                                         const std::vector<std::string>& names);

/// Stand-in services whose decision cells follow the workload's cluster
/// structure (centroids = cluster centroids), the way a service trained on
/// this data distribution would label it. Clusters derive from cfg.seed,
/// so the definitions are stable across repetition streams.
std::vector<ServiceDef> services_for_workload(const DeploymentParams& params,
                                              const WorkloadConfig& cfg);

struct TaskLog {
  int status = 0;
  bool reused = false;
  int label = -1;
  double similarity = 0.0;
};

struct ReplayOptions {
  bool user_assisted = false;  // client attaches X-LSH instead of having the proxy hash
  int senders = 1;
};

struct ReplayResult {
  std::vector<TaskLog> log;  // indexed by task position in the stream
  int sent = 0;
  int ok = 0;
  int reused = 0;
  int errors = 0;
};

ReplayResult replay_workload(LocalDeployment& deployment, const Workload& workload,
                             const ReplayOptions& options = {});

/// Per-run metrics in the shape of the evaluation tables: reuse percent,
/// per-server task shares, oracle reuse accuracy, decision-time quantiles.
struct ExperimentReport {
  std::string strategy;
  int servers = 0;
  int reps = 0;
  double percent_reuse = 0.0;
  std::vector<double> per_server_share;  // percent, in registration order
  std::optional<double> reuse_accuracy;  // percent; empty if nothing was reused
  double overhead_p50_ms = 0.0;
  double overhead_p99_ms = 0.0;
  double epochs = 0.0;            // mean redistribution events per rep
  double migrated_entries = 0.0;  // mean per rep
  int errors = 0;
  bool valid = true;
};

ExperimentReport run_experiment(const DeploymentParams& params, const WorkloadConfig& cfg,
                                int reps = 10, const ReplayOptions& options = {});

/// Oracle accuracy over the reused responses of a replay: re-executes each
/// reused task's payload with an independent nearest-centroid scan and
/// compares labels. No reuses -> empty (never 100 by default).
std::optional<double> reuse_accuracy_from_log(const Workload& workload,
                                              const ReplayResult& result,
                                              const std::vector<ServiceDef>& services);

/// CSV rows: strategy,servers,metric,value,server_index (share rows carry
/// the 1-based server index, other rows leave it blank).
void emit_csv(std::ostream& out, const std::vector<ExperimentReport>& reports);

// --- similarity-threshold adaptation ------------------------------------

struct ReuseSample {
  FeatureVector payload;
  int reused_label = 0;  // label the cache would have served
};
using ReuseSampleGroup = std::vector<ReuseSample>;

/// One adjustment step: estimate reuse accuracy by executing the sampled
/// groups from scratch; raise the threshold by delta when the estimate is
/// below target, lower it when above target + margin. Clamped to [0,1];
/// empty samples leave the threshold unchanged.
double adapt_threshold(double current, const std::vector<ReuseSampleGroup>& groups,
                       const ServiceDef& service, double target_accuracy_pct,
                       double delta = 0.01, double margin_pp = 5.0);

struct ThresholdAdaptation {
  std::vector<double> trajectory;  // threshold after each round
  double final_threshold = 0.0;
  double final_accuracy_estimate = 0.0;
};

/// Replays a workload through a single-server reuse simulation, sampling
/// reusable tasks into groups and adjusting the threshold round by round.
ThresholdAdaptation run_threshold_adaptation(const WorkloadConfig& cfg,
                                             const ServiceDef& service,
                                             double initial_threshold,
                                             double target_accuracy_pct, double delta,
                                             double margin_pp, int group_size,
                                             int groups_per_round, int rounds);

// --- scripted scenarios ---------------------------------------------------

struct ScenarioEvent {
  double at_s = 0.0;
  std::string kind;
  std::string detail;
};

struct ScenarioResult {
  std::vector<ScenarioEvent> events;
  ExperimentReport report;
  bool partition_valid_throughout = true;
  bool added_server_used_within_interval = false;
  bool failed_server_removed = false;
  std::uint64_t routed_to_failed_after_removal = 0;
  ServerId added_server;
  ServerId failed_server;
};

/// Registers a 4th server mid-stream, fails one server later, and checks
/// routing totality plus the partition invariant at every observed epoch.
ScenarioResult failure_and_addition_scenario(const DeploymentParams& params,
                                             const WorkloadConfig& cfg);

struct WarmStartProbe {
  bool reused_after_migration = false;
  std::uint64_t new_owner_scratch_before = 0;
  std::uint64_t new_owner_scratch_after = 0;
  std::size_t entries_migrated = 0;
  ServerId old_owner;
  ServerId new_owner;
};

/// Scripted redistribution: cache a probe task on one server, skew the
/// load so its bucket moves to the other server, force one redistribution
/// (which pushes the cached entries across), then resubmit the probe. A
/// warm start means the first post-migration submission reuses without any
/// from-scratch execution on the new owner.
WarmStartProbe warm_start_probe(std::uint64_t seed = 1);

}  // namespace dedup
