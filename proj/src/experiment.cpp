#include "dedup/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dedup/wire.hpp"

namespace dedup {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

DedupProxy::Config proxy_config(const DeploymentParams& p) {
  DedupProxy::Config cfg;
  cfg.strategy = p.strategy;
  cfg.lsh = {p.bits, p.dim, p.lsh_seed};
  cfg.redistribution_interval_s = p.redistribution_interval_s;
  cfg.group_count = p.group_count;
  cfg.min_slice = p.min_slice;
  cfg.cpu_threshold = p.cpu_threshold;
  cfg.mem_threshold = p.mem_threshold;
  cfg.response_timeout_s = p.response_timeout_s;
  cfg.notification_interval_s = p.notification_interval_s;
  cfg.k_missed = p.k_missed;
  cfg.rng_seed = p.lsh_seed ^ 0xda7a5eed;
  return cfg;
}

bool wait_until(const std::function<bool()>& pred, double timeout_s) {
  const auto deadline = Clock::now() + std::chrono::duration<double>(timeout_s);
  while (Clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return pred();
}

/// Independent nearest-centroid re-execution used as the accuracy oracle;
/// deliberately not the edge server's classify().
int oracle_label(const ServiceDef& service, const FeatureVector& payload) {
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  const double norm = std::sqrt(payload.dot(payload));
  for (std::size_t c = 0; c < service.centroids.size(); ++c) {
    double dot = 0.0;
    for (Eigen::Index i = 0; i < payload.size(); ++i) {
      dot += service.centroids[c][i] * payload[i];
    }
    const double score = dot / norm;  // centroids are unit norm
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(c);
    }
  }
  return best;
}

const ServiceDef* service_by_name(const std::vector<ServiceDef>& services,
                                  const std::string& name) {
  for (const auto& s : services) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

}  // namespace

std::vector<ServiceDef> default_services(const DeploymentParams& params,
                                         const std::vector<std::string>& names) {
  std::vector<ServiceDef> out;
  out.reserve(names.size());
  for (const auto& name : names) {
    out.push_back(make_service(name, params.dim, params.service_centroids,
                               params.service_seed ^ ConsistentHashRing::fnv1a64(name)));
    out.back().cost_ms = params.cost_ms;
  }
  return out;
}

std::vector<ServiceDef> services_for_workload(const DeploymentParams& params,
                                              const WorkloadConfig& cfg) {
  WorkloadConfig head = cfg;
  head.tasks = 0;  // centroids only
  const Workload skeleton = generate_workload(head);
  std::vector<ServiceDef> out;
  out.reserve(cfg.services.size());
  for (const auto& name : cfg.services) {
    ServiceDef def;
    def.name = name;
    def.centroids = skeleton.centroids;
    def.cost_ms = params.cost_ms;
    out.push_back(std::move(def));
  }
  return out;
}

LocalDeployment::LocalDeployment(const DeploymentParams& params,
                                 std::vector<ServiceDef> services)
    : params_(params), services_(std::move(services)) {
  proxy_ = std::make_unique<DedupProxy>(proxy_config(params_));
  proxy_->start(0);
  for (int i = 0; i < params_.servers; ++i) {
    spawn_edge_locked();
  }
}

LocalDeployment::~LocalDeployment() { shutdown(); }

ServerId LocalDeployment::spawn_edge_locked() {
  EdgeServer::Config cfg;
  cfg.id = "S" + std::to_string(next_index_++);
  cfg.lsh = {params_.bits, params_.dim, params_.lsh_seed};
  cfg.services = services_;
  cfg.cache_capacity = params_.cache_capacity;
  cfg.group_count = params_.group_count;
  cfg.proxy_url = proxy_->url();
  cfg.notify_interval_s = params_.notification_interval_s;
  auto server = std::make_unique<EdgeServer>(std::move(cfg));
  server->start(0);
  const ServerId id = server->config().id;
  edges_.push_back(std::move(server));
  // Sequential registration keeps the slice layout in id order.
  if (!wait_until([&] {
        const auto live = proxy_->live_servers();
        return std::find(live.begin(), live.end(), id) != live.end();
      }, 5.0)) {
    throw ConfigError("edge server " + id + " failed to register");
  }
  return id;
}

ServerId LocalDeployment::add_edge_server() { return spawn_edge_locked(); }

EdgeServer* LocalDeployment::edge_by_id(const ServerId& id) {
  for (auto& e : edges_) {
    if (e->config().id == id) return e.get();
  }
  return nullptr;
}

std::vector<ServerId> LocalDeployment::server_ids() const {
  std::vector<ServerId> out;
  out.reserve(edges_.size());
  for (const auto& e : edges_) out.push_back(e->config().id);
  return out;
}

void LocalDeployment::shutdown() {
  // Notifiers first (their clients hold proxy connections), then the proxy
  // (closing its backend pools), then the edge task surfaces.
  for (auto& e : edges_) e->stop_notifier();
  if (proxy_) proxy_->stop();
  for (auto& e : edges_) e->stop();
}

ReplayResult replay_workload(LocalDeployment& deployment, const Workload& workload,
                             const ReplayOptions& options) {
  ReplayResult result;
  result.log.resize(workload.tasks.size());
  const int senders = std::max(1, options.senders);

  const Hasher hasher = build_hasher(
      {deployment.params().bits, deployment.params().dim, deployment.params().lsh_seed});

  std::atomic<int> sent{0}, ok{0}, reused{0}, errors{0};
  auto send_range = [&](int offset) {
    httplib::Client client(deployment.proxy().url());
    client.set_connection_timeout(2, 0);
    client.set_read_timeout(10, 0);
    client.set_keep_alive(true);
    client.set_tcp_nodelay(true);

    for (std::size_t i = static_cast<std::size_t>(offset); i < workload.tasks.size();
         i += static_cast<std::size_t>(senders)) {
      const WorkloadTask& task = workload.tasks[i];
      httplib::Headers headers{{wire::kTaskId, task.task_id},
                               {wire::kClientId, task.client_id},
                               {wire::kThreshold, std::to_string(task.threshold)}};
      if (options.user_assisted) {
        headers.emplace(wire::kLsh,
                        signature_to_hex(hasher(task.payload), deployment.params().bits));
      }
      const std::string body =
          wire::payload_to_json(task.payload, workload.config.pad_bytes);
      auto res = client.Post("/svc/" + task.service, headers, body, "application/json");
      sent.fetch_add(1);

      TaskLog& log = result.log[i];
      if (!res) {
        log.status = -1;
        errors.fetch_add(1);
        continue;
      }
      log.status = res->status;
      if (res->status != 200) {
        errors.fetch_add(1);
        continue;
      }
      ok.fetch_add(1);
      log.reused = res->get_header_value(wire::kReused) == "1";
      if (log.reused) reused.fetch_add(1);
      try {
        const json j = json::parse(res->body);
        log.label = j.value("label", -1);
        log.similarity = j.value("similarity", 0.0);
      } catch (const json::exception&) {
        log.label = -1;
      }
    }
  };

  if (senders == 1) {
    send_range(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(senders));
    for (int s = 0; s < senders; ++s) {
      threads.emplace_back(send_range, s);
    }
    for (auto& t : threads) t.join();
  }

  result.sent = sent;
  result.ok = ok;
  result.reused = reused;
  result.errors = errors;
  return result;
}

std::optional<double> reuse_accuracy_from_log(const Workload& workload,
                                              const ReplayResult& result,
                                              const std::vector<ServiceDef>& services) {
  std::uint64_t reused = 0, accurate = 0;
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    const TaskLog& log = result.log[i];
    if (log.status != 200 || !log.reused) continue;
    const WorkloadTask& task = workload.tasks[i];
    const ServiceDef* svc = service_by_name(services, task.service);
    if (svc == nullptr) continue;
    ++reused;
    if (oracle_label(*svc, task.payload) == log.label) ++accurate;
  }
  if (reused == 0) return std::nullopt;
  return 100.0 * static_cast<double>(accurate) / static_cast<double>(reused);
}

ExperimentReport run_experiment(const DeploymentParams& params, const WorkloadConfig& cfg,
                                int reps, const ReplayOptions& options) {
  if (reps < 1) throw ConfigError("run_experiment: reps must be >= 1");
  ExperimentReport report;
  report.strategy = strategy_name(params.strategy);
  report.servers = params.servers;
  report.reps = reps;

  std::vector<ServerId> ids;
  std::vector<double> share_acc;
  double reuse_acc = 0.0;
  double accuracy_acc = 0.0;
  int accuracy_reps = 0;
  double p50_acc = 0.0, p99_acc = 0.0, epochs_acc = 0.0, migrated_acc = 0.0;

  for (int rep = 0; rep < reps; ++rep) {
    // Each repetition is a fresh correlated dataset: new cluster layout,
    // new arrivals, and stand-in services matching that data.
    WorkloadConfig rep_cfg = cfg;
    rep_cfg.seed = cfg.seed + static_cast<std::uint64_t>(rep);
    const Workload workload = generate_workload(rep_cfg);

    LocalDeployment deployment(params, services_for_workload(params, rep_cfg));
    const ReplayResult run = replay_workload(deployment, workload, options);

    report.errors += run.errors;
    if (run.errors > 0) report.valid = false;
    reuse_acc += run.sent > 0
                     ? 100.0 * static_cast<double>(run.reused) / static_cast<double>(run.sent)
                     : 0.0;

    if (rep == 0) {
      ids = deployment.server_ids();
      share_acc.assign(ids.size(), 0.0);
    }
    std::uint64_t total_routed = 0;
    std::vector<std::uint64_t> routed(ids.size(), 0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      routed[i] = deployment.proxy().stats().routed_total(ids[i]);
      total_routed += routed[i];
    }
    for (std::size_t i = 0; i < ids.size() && total_routed > 0; ++i) {
      share_acc[i] += 100.0 * static_cast<double>(routed[i]) /
                      static_cast<double>(total_routed);
    }

    if (const auto acc = reuse_accuracy_from_log(workload, run, deployment.services())) {
      accuracy_acc += *acc;
      ++accuracy_reps;
    }
    const auto [p50, p99] = deployment.proxy().decision_quantiles_ms();
    p50_acc += p50;
    p99_acc += p99;
    epochs_acc += static_cast<double>(deployment.proxy().redistribution_count());
    migrated_acc += static_cast<double>(deployment.proxy().migrated_entries_total());
  }

  const double n = static_cast<double>(reps);
  report.percent_reuse = reuse_acc / n;
  report.per_server_share.reserve(share_acc.size());
  for (double s : share_acc) report.per_server_share.push_back(s / n);
  if (accuracy_reps > 0) report.reuse_accuracy = accuracy_acc / accuracy_reps;
  report.overhead_p50_ms = p50_acc / n;
  report.overhead_p99_ms = p99_acc / n;
  report.epochs = epochs_acc / n;
  report.migrated_entries = migrated_acc / n;
  return report;
}

void emit_csv(std::ostream& out, const std::vector<ExperimentReport>& reports) {
  out << "strategy,servers,metric,value,server_index\n";
  for (const auto& r : reports) {
    const auto row = [&](const std::string& metric, double value) {
      out << r.strategy << ',' << r.servers << ',' << metric << ',' << value << ",\n";
    };
    row("percent_reuse", r.percent_reuse);
    if (r.reuse_accuracy) {
      row("reuse_accuracy", *r.reuse_accuracy);
    } else {
      out << r.strategy << ',' << r.servers << ",reuse_accuracy,NA,\n";
    }
    for (std::size_t i = 0; i < r.per_server_share.size(); ++i) {
      out << r.strategy << ',' << r.servers << ",share," << r.per_server_share[i] << ','
          << (i + 1) << "\n";
    }
    row("overhead_p50_ms", r.overhead_p50_ms);
    row("overhead_p99_ms", r.overhead_p99_ms);
    row("epochs", r.epochs);
    row("migrated_entries", r.migrated_entries);
    row("errors", r.errors);
  }
}

double adapt_threshold(double current, const std::vector<ReuseSampleGroup>& groups,
                       const ServiceDef& service, double target_accuracy_pct, double delta,
                       double margin_pp) {
  std::uint64_t samples = 0, matches = 0;
  for (const auto& group : groups) {
    for (const auto& item : group) {
      ++samples;
      if (oracle_label(service, item.payload) == item.reused_label) ++matches;
    }
  }
  if (samples == 0) return current;
  const double estimate = 100.0 * static_cast<double>(matches) / static_cast<double>(samples);
  if (estimate < target_accuracy_pct) {
    current += delta;
  } else if (estimate > target_accuracy_pct + margin_pp) {
    current -= delta;
  }
  return std::clamp(current, 0.0, 1.0);
}

ThresholdAdaptation run_threshold_adaptation(const WorkloadConfig& cfg,
                                             const ServiceDef& service,
                                             double initial_threshold,
                                             double target_accuracy_pct, double delta,
                                             double margin_pp, int group_size,
                                             int groups_per_round, int rounds) {
  if (group_size < 1 || groups_per_round < 1 || rounds < 1) {
    throw ConfigError("threshold adaptation: bad sampling parameters");
  }
  ThresholdAdaptation out;
  double threshold = std::clamp(initial_threshold, 0.0, 1.0);

  // Single-server reuse cache: (payload, stored label).
  std::vector<std::pair<FeatureVector, int>> cache;
  std::vector<ReuseSampleGroup> groups;
  ReuseSampleGroup group;

  WorkloadConfig round_cfg = cfg;
  for (int round = 0; round < rounds; ++round) {
    round_cfg.seed = cfg.seed + static_cast<std::uint64_t>(round) * 1000003ULL;
    const Workload workload = generate_workload(round_cfg);
    std::uint64_t est_matches = 0, est_samples = 0;
    for (const auto& task : workload.tasks) {
      int best_label = -1;
      double best = -2.0;
      for (auto it = cache.rbegin(); it != cache.rend(); ++it) {
        const double sim = cosine_similarity(it->first, task.payload);
        if (sim > best) {
          best = sim;
          best_label = it->second;
        }
      }
      const int scratch_label = classify(service, task.payload);
      if (best_label >= 0 && best >= threshold) {
        // Reusable: sample it into the current group (executed from
        // scratch for the estimate) until the round's quota is filled.
        if (static_cast<int>(groups.size()) < groups_per_round) {
          group.push_back({task.payload, best_label});
          if (best_label == scratch_label) ++est_matches;
          ++est_samples;
          cache.emplace_back(task.payload, scratch_label);
          if (static_cast<int>(group.size()) >= group_size) {
            groups.push_back(std::move(group));
            group.clear();
          }
        }
        // Tasks beyond the sampling quota reuse normally (no state change).
      } else {
        cache.emplace_back(task.payload, scratch_label);
      }
    }
    threshold = adapt_threshold(threshold, groups, service, target_accuracy_pct, delta,
                                margin_pp);
    out.trajectory.push_back(threshold);
    out.final_accuracy_estimate =
        est_samples > 0
            ? 100.0 * static_cast<double>(est_matches) / static_cast<double>(est_samples)
            : 0.0;
    groups.clear();
    group.clear();
  }
  out.final_threshold = threshold;
  return out;
}

ScenarioResult failure_and_addition_scenario(const DeploymentParams& params,
                                             const WorkloadConfig& cfg) {
  ScenarioResult result;
  const auto t_start = Clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(Clock::now() - t_start).count();
  };
  const auto note = [&](const std::string& kind, const std::string& detail) {
    result.events.push_back({elapsed(), kind, detail});
  };

  LocalDeployment deployment(params, services_for_workload(params, cfg));
  const Workload workload = generate_workload(cfg);

  const std::size_t add_at = workload.tasks.size() * 3 / 10;
  const std::size_t fail_at = workload.tasks.size() * 6 / 10;
  result.failed_server = "S2";

  httplib::Client client(deployment.proxy().url());
  client.set_connection_timeout(2, 0);
  client.set_read_timeout(10, 0);
  client.set_keep_alive(true);

  ReplayResult run;
  run.log.resize(workload.tasks.size());

  std::optional<double> added_at_s;
  std::optional<std::uint64_t> failed_routed_at_removal;
  bool removal_seen = false;

  const auto poll_table = [&] {
    const auto snapshot = deployment.proxy().table_snapshot();
    try {
      validate(*snapshot);
    } catch (const std::exception& e) {
      result.partition_valid_throughout = false;
      note("invariant-violation", e.what());
    }
  };

  for (std::size_t i = 0; i < workload.tasks.size(); ++i) {
    if (i == add_at) {
      result.added_server = deployment.add_edge_server();
      added_at_s = elapsed();
      note("add", result.added_server + " registered");
    }
    if (i == fail_at) {
      EdgeServer* victim = deployment.edge_by_id(result.failed_server);
      victim->set_failed(true);
      note("fail", result.failed_server + " stopped responding");
    }

    // Observe the added server's first task within one redistribution
    // interval of the registration.
    if (added_at_s && !result.added_server_used_within_interval &&
        elapsed() - *added_at_s <= params.redistribution_interval_s) {
      if (deployment.proxy().stats().routed_total(result.added_server) > 0) {
        result.added_server_used_within_interval = true;
        note("add-used", result.added_server + " received its first task");
      }
    }

    // Detect the moment the proxy removed the failed server.
    if (i >= fail_at && !removal_seen) {
      const auto live = deployment.proxy().live_servers();
      if (std::find(live.begin(), live.end(), result.failed_server) == live.end()) {
        removal_seen = true;
        failed_routed_at_removal =
            deployment.proxy().stats().routed_total(result.failed_server);
        note("removed", result.failed_server + " dropped from routing");
      }
    }

    const WorkloadTask& task = workload.tasks[i];
    httplib::Headers headers{{wire::kTaskId, task.task_id},
                             {wire::kClientId, task.client_id},
                             {wire::kThreshold, std::to_string(task.threshold)}};
    auto res = client.Post("/svc/" + task.service, headers,
                           wire::payload_to_json(task.payload, cfg.pad_bytes),
                           "application/json");
    run.sent += 1;
    TaskLog& log = run.log[i];
    if (!res) {
      log.status = -1;
      run.errors += 1;
    } else {
      log.status = res->status;
      if (res->status == 200) {
        run.ok += 1;
        log.reused = res->get_header_value(wire::kReused) == "1";
        if (log.reused) run.reused += 1;
      } else {
        run.errors += 1;
      }
    }

    if (i % 25 == 0) poll_table();
  }

  // Let failure detection finish even if the failure landed late in the
  // stream, then take the final counts.
  if (!removal_seen) {
    removal_seen = wait_until(
        [&] {
          const auto live = deployment.proxy().live_servers();
          return std::find(live.begin(), live.end(), result.failed_server) == live.end();
        },
        3.0 + params.k_missed * params.notification_interval_s);
    if (removal_seen) {
      failed_routed_at_removal =
          deployment.proxy().stats().routed_total(result.failed_server);
      note("removed", result.failed_server + " dropped from routing (post-stream)");
    }
  }
  poll_table();

  result.failed_server_removed = removal_seen;
  const std::uint64_t failed_total =
      deployment.proxy().stats().routed_total(result.failed_server);
  result.routed_to_failed_after_removal =
      failed_routed_at_removal ? failed_total - *failed_routed_at_removal : failed_total;

  result.report.strategy = strategy_name(params.strategy);
  result.report.servers = params.servers;
  result.report.reps = 1;
  result.report.errors = run.errors;
  result.report.percent_reuse =
      run.sent > 0 ? 100.0 * static_cast<double>(run.reused) / run.sent : 0.0;
  result.report.epochs = static_cast<double>(deployment.proxy().redistribution_count());
  result.report.migrated_entries =
      static_cast<double>(deployment.proxy().migrated_entries_total());
  const auto ids = deployment.server_ids();
  std::uint64_t total_routed = 0;
  std::vector<std::uint64_t> routed;
  for (const auto& id : ids) {
    routed.push_back(deployment.proxy().stats().routed_total(id));
    total_routed += routed.back();
  }
  for (const auto r : routed) {
    result.report.per_server_share.push_back(
        total_routed > 0 ? 100.0 * static_cast<double>(r) / total_routed : 0.0);
  }
  note("done", "stream complete");
  return result;
}

WarmStartProbe warm_start_probe(std::uint64_t seed) {
  WarmStartProbe probe;
  DeploymentParams params;
  params.strategy = DistributionStrategy::ReuseAdaptive;
  params.servers = 2;
  params.bits = 16;
  params.dim = 16;
  params.lsh_seed = seed * 2654435761ULL + 1;
  params.redistribution_interval_s = 3600.0;  // manual ticks only
  WorkloadConfig probe_cfg;
  probe_cfg.dim = params.dim;
  probe_cfg.services = {"svc0"};
  LocalDeployment deployment(params, services_for_workload(params, probe_cfg));
  probe.old_owner = "S1";
  probe.new_owner = "S2";

  const Hasher hasher = build_hasher({params.bits, params.dim, params.lsh_seed});
  const std::uint64_t half = std::uint64_t{1} << (params.bits - 1);
  detail::NormalSource normals(seed ^ 0xabcdef1234ULL);
  const auto draw_in = [&](std::uint64_t lo, std::uint64_t hi) {
    for (;;) {
      FeatureVector v(params.dim);
      for (int i = 0; i < params.dim; ++i) v[i] = normals.next();
      if (v.norm() == 0.0) continue;
      v.normalize();
      const Bucket b = hasher(v);
      if (b >= lo && b <= hi) return v;
    }
  };

  // A probe whose bucket sits inside S1's initial half but away from 0, so
  // the skewed redistribution hands it to S2.
  const FeatureVector probe_payload = draw_in(half / 4, half - 1);

  httplib::Client client(deployment.proxy().url());
  client.set_keep_alive(true);
  const auto send = [&](const FeatureVector& payload) {
    httplib::Headers headers{{wire::kTaskId, "probe"},
                             {wire::kClientId, "c0"},
                             {wire::kThreshold, "0.9"}};
    return client.Post("/svc/svc0", headers, wire::payload_to_json(payload),
                       "application/json");
  };

  auto first = send(probe_payload);
  if (!first || first->status != 200) return probe;

  // Skew the window's load entirely onto S1.
  for (int i = 0; i < 24; ++i) {
    send(draw_in(0, half - 1));
  }

  probe.new_owner_scratch_before = deployment.edge_by_id("S2")->from_scratch_count();
  deployment.proxy().redistribution_tick();  // swaps, then migrates warm entries
  probe.entries_migrated = deployment.proxy().migrated_entries_total();

  auto second = send(probe_payload);
  probe.new_owner_scratch_after = deployment.edge_by_id("S2")->from_scratch_count();
  if (second && second->status == 200) {
    probe.reused_after_migration = second->get_header_value(wire::kReused) == "1";
  }
  return probe;
}

}  // namespace dedup
