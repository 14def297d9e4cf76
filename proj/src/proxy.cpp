#include "dedup/proxy.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <map>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dedup/wire.hpp"

namespace dedup {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace detail {

/// Small keep-alive client pool per backend address; httplib clients are
/// not safe for concurrent requests, and per-request connections would
/// churn ephemeral ports at experiment rates. Owned by the proxy so that
/// tearing a deployment down releases the sockets.
class BackendClients {
 public:
  static constexpr int kSlots = 4;

  BackendClients(const std::string& address, double read_timeout_s) {
    for (int i = 0; i < kSlots; ++i) {
      auto client = std::make_unique<httplib::Client>(address);
      client->set_connection_timeout(std::chrono::duration<double>(
          std::min(read_timeout_s, 1.0)));
      client->set_read_timeout(std::chrono::duration<double>(read_timeout_s));
      client->set_keep_alive(true);
      client->set_tcp_nodelay(true);
      clients_[i] = std::move(client);
    }
  }

  template <typename Fn>
  auto with_client(Fn&& fn) {
    const std::size_t i = cursor_.fetch_add(1) % kSlots;
    std::lock_guard lock(mus_[i]);
    return fn(*clients_[i]);
  }

 private:
  std::unique_ptr<httplib::Client> clients_[kSlots];
  std::mutex mus_[kSlots];
  std::atomic<std::size_t> cursor_{0};
};

}  // namespace detail

namespace {

bool is_piggyback_header(const std::string& name) {
  return name == wire::kCpuLoad || name == wire::kMemLoad || name == wire::kGroupStats;
}

}  // namespace

DedupProxy::DedupProxy(Config config)
    : config_(std::move(config)),
      hasher_(build_hasher(config_.lsh)),
      stats_(config_.lsh.bits, config_.group_count),
      ring_(config_.virtual_nodes),
      rng_(config_.rng_seed) {
  auto empty = std::make_shared<SliceTable>();
  empty->bits = config_.lsh.bits;
  table_ = std::move(empty);
}

DedupProxy::~DedupProxy() { stop(); }

std::vector<ServerId> DedupProxy::live_ids_locked() const {
  std::vector<ServerId> out;
  for (const auto& b : backends_) {
    if (b.live) out.push_back(b.id);
  }
  return out;
}

std::vector<ServerId> DedupProxy::live_servers() const {
  std::lock_guard lock(state_mu_);
  return live_ids_locked();
}

std::string DedupProxy::backend_address(const ServerId& id) const {
  std::lock_guard lock(state_mu_);
  for (const auto& b : backends_) {
    if (b.id == id) return b.address;
  }
  throw InputError("unknown backend " + id);
}

std::shared_ptr<const SliceTable> DedupProxy::table_snapshot() const {
  std::lock_guard lock(state_mu_);
  return table_;
}

void DedupProxy::swap_table(SliceTable next) {
  validate(next);
  auto ptr = std::make_shared<const SliceTable>(std::move(next));
  std::lock_guard lock(state_mu_);
  table_ = std::move(ptr);
}

std::shared_ptr<detail::BackendClients> DedupProxy::pool_for(const std::string& address) {
  std::lock_guard lock(state_mu_);
  auto& slot = pools_[address];
  if (!slot) {
    slot = std::make_shared<detail::BackendClients>(address, config_.response_timeout_s);
  }
  return slot;
}

std::pair<ServerId, std::uint64_t> DedupProxy::lookup_bucket(Bucket bucket) const {
  auto table = table_snapshot();
  if (table->empty()) throw NoLiveServers();
  return {lookup(*table, bucket), table->epoch};
}

ServerId DedupProxy::select_baseline(const std::string& client_id) {
  switch (config_.strategy) {
    case DistributionStrategy::RoundRobin: {
      std::lock_guard lock(state_mu_);
      auto live = live_ids_locked();
      if (live.empty()) throw NoLiveServers();
      return live[rr_cursor_.fetch_add(1) % live.size()];
    }
    case DistributionStrategy::Random: {
      std::lock_guard lock(state_mu_);
      auto live = live_ids_locked();
      if (live.empty()) throw NoLiveServers();
      return live[std::uniform_int_distribution<std::size_t>(0, live.size() - 1)(rng_)];
    }
    case DistributionStrategy::LeastConnection: {
      auto live = live_servers();
      if (live.empty()) throw NoLiveServers();
      ServerId best = live.front();
      std::int64_t best_inflight = stats_.inflight_of(best);
      for (std::size_t i = 1; i < live.size(); ++i) {
        const std::int64_t inflight = stats_.inflight_of(live[i]);
        if (inflight < best_inflight) {
          best_inflight = inflight;
          best = live[i];
        }
      }
      return best;
    }
    case DistributionStrategy::ConsistentHash: {
      std::lock_guard lock(state_mu_);
      if (ring_.empty()) throw NoLiveServers();
      return ring_.pick(client_id);
    }
    default:
      throw ConfigError("select_baseline called for a reuse strategy");
  }
}

void DedupProxy::record_decision(double ms) {
  std::lock_guard lock(decisions_mu_);
  decision_ms_.push_back(ms);
}

RouteDecision DedupProxy::route(const TaskRequest& req) {
  const auto t0 = Clock::now();
  RouteDecision decision;
  if (is_reuse_strategy(config_.strategy)) {
    decision.bucket =
        req.precomputed_signature ? *req.precomputed_signature : hasher_(req.payload);
    std::tie(decision.server, decision.epoch) = lookup_bucket(*decision.bucket);
  } else {
    decision.server = select_baseline(req.client_id);
  }
  decision.decision_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  record_decision(decision.decision_ms);
  stats_.record_routed(decision.server, decision.bucket);
  return decision;
}

RouteDecision DedupProxy::route_wire(const std::string& service,
                                     const std::optional<std::string>& lsh_hex,
                                     std::string_view body, const std::string& client_id) {
  (void)service;
  const auto t0 = Clock::now();
  RouteDecision decision;
  if (is_reuse_strategy(config_.strategy)) {
    if (lsh_hex) {
      decision.bucket = parse_hex_signature(*lsh_hex, config_.lsh.bits);
    } else {
      decision.bucket = hasher_(wire::parse_payload_prefix(body));
    }
    std::tie(decision.server, decision.epoch) = lookup_bucket(*decision.bucket);
  } else {
    decision.server = select_baseline(client_id);
  }
  decision.decision_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  record_decision(decision.decision_ms);
  stats_.record_routed(decision.server, decision.bucket);
  return decision;
}

RelayedResponse DedupProxy::forward_and_relay(const TaskRequest& req,
                                              const RouteDecision& decision,
                                              std::string_view raw_body) {
  const std::string address = backend_address(decision.server);
  auto pool = pool_for(address);

  httplib::Headers headers{{wire::kTaskId, req.task_id},
                           {wire::kClientId, req.client_id},
                           {wire::kThreshold, std::to_string(req.threshold)},
                           {wire::kEpoch, std::to_string(decision.epoch)}};
  if (decision.bucket) {
    headers.emplace(wire::kBucket, signature_to_hex(*decision.bucket, config_.lsh.bits));
  }

  stats_.begin_request(decision.server, Clock::now());
  auto result = pool->with_client([&](httplib::Client& client) {
    return client.Post(("/svc/" + req.service).c_str(), headers,
                       raw_body.data(), raw_body.size(), "application/json");
  });
  const auto now = Clock::now();

  RelayedResponse relayed;
  if (!result) {
    stats_.end_request(decision.server, now, false);
    relayed.status = 502;
    relayed.body = json{{"error", "backend unreachable or timed out"},
                        {"server", decision.server}}
                       .dump();
    return relayed;
  }
  stats_.end_request(decision.server, now, true);

  auto header_of = [&](const char* name) -> std::optional<std::string> {
    auto it = result->headers.find(name);
    if (it == result->headers.end()) return std::nullopt;
    return it->second;
  };
  stats_.ingest_piggyback(decision.server,
                          parse_piggyback(header_of(wire::kCpuLoad), header_of(wire::kMemLoad),
                                          header_of(wire::kGroupStats)),
                          now);

  relayed.status = result->status;
  relayed.body = result->body;
  relayed.reused = header_of(wire::kReused).value_or("0") == "1";
  for (const auto& [name, value] : result->headers) {
    if (is_piggyback_header(name)) continue;
    if (name == "Content-Length" || name == "Content-Type" || name == "Connection" ||
        name == "Keep-Alive") {
      continue;
    }
    relayed.headers.emplace_back(name, value);
  }
  return relayed;
}

void DedupProxy::handle_register(const ServerId& id, const std::string& address) {
  std::lock_guard control(control_mu_);
  {
    std::lock_guard lock(state_mu_);
    for (const auto& b : backends_) {
      if (b.id == id) {
        throw InputError("server " + id + " already registered");
      }
    }
    backends_.push_back({id, address, true});
  }
  stats_.register_server(id, Clock::now());

  if (!is_reuse_strategy(config_.strategy)) {
    if (config_.strategy == DistributionStrategy::ConsistentHash) {
      std::lock_guard lock(state_mu_);
      ring_.add(id);
    }
    return;
  }

  const auto snapshot = table_snapshot();
  switch (config_.strategy) {
    case DistributionStrategy::ReuseAdaptive: {
      auto [next, migrations] = add_server(*snapshot, stats_.peek_window(), id,
                                           config_.min_slice);
      swap_table(std::move(next));
      issue_migrations(migrations);
      break;
    }
    case DistributionStrategy::ReuseVanilla: {
      SliceTable next = initial_equal(live_servers(), config_.lsh.bits);
      next.epoch = snapshot->epoch + 1;
      swap_table(std::move(next));
      break;
    }
    case DistributionStrategy::ReuseMiniBuckets: {
      SliceTable next = mini_buckets_table(live_servers(), config_.lsh.bits);
      next.epoch = snapshot->epoch + 1;
      swap_table(std::move(next));
      break;
    }
    case DistributionStrategy::ReuseIdeal: {
      if (snapshot->empty()) {
        SliceTable next = ideal_table({id}, config_.lsh.bits);
        next.epoch = snapshot->epoch + 1;
        swap_table(std::move(next));
      }
      break;
    }
    default:
      break;
  }
}

void DedupProxy::handle_failure(const ServerId& id) {
  std::lock_guard control(control_mu_);
  {
    std::lock_guard lock(state_mu_);
    bool found = false;
    for (auto& b : backends_) {
      if (b.id == id) {
        if (!b.live) return;  // already handled
        b.live = false;
        found = true;
        break;
      }
    }
    if (!found) return;
    if (config_.strategy == DistributionStrategy::ConsistentHash) {
      ring_.remove(id);
    }
  }

  if (is_reuse_strategy(config_.strategy)) {
    const auto snapshot = table_snapshot();
    const bool in_table = std::find(snapshot->servers.begin(), snapshot->servers.end(), id) !=
                          snapshot->servers.end();
    if (in_table) {
      if (snapshot->servers.size() == 1) {
        SliceTable next;
        next.bits = config_.lsh.bits;
        next.epoch = snapshot->epoch + 1;
        swap_table(std::move(next));
      } else {
        swap_table(remove_server(*snapshot, id, stats_.peek_window()));
      }
    }
  }
  stats_.unregister_server(id);
  std::cerr << "[proxy] server " << id << " removed from routing\n";
}

void DedupProxy::redistribution_tick() {
  if (config_.strategy != DistributionStrategy::ReuseAdaptive) return;
  std::lock_guard control(control_mu_);
  const auto samples = stats_.snapshot_window();
  const auto snapshot = table_snapshot();
  if (snapshot->empty()) return;
  try {
    auto [next, migrations] = adaptive_redistribute(*snapshot, samples, config_.min_slice);
    if (next.epoch == snapshot->epoch) return;  // zero-traffic window
    swap_table(SliceTable(next));
    issue_migrations(migrations);
    const SliceTable merged = merge_adjacent(next);
    if (merged.epoch != next.epoch) {
      swap_table(SliceTable(merged));
    }
    redistributions_.fetch_add(1);
  } catch (const std::exception& e) {
    std::cerr << "[proxy] redistribution failed, keeping previous table: " << e.what() << "\n";
  }
}

void DedupProxy::issue_migrations(const std::vector<MigrationDirective>& migrations) {
  for (const auto& m : migrations) {
    std::string from_addr, to_addr;
    try {
      from_addr = backend_address(m.from);
      to_addr = backend_address(m.to);
    } catch (const InputError&) {
      continue;  // source or target gone
    }
    httplib::Client client(from_addr);
    client.set_connection_timeout(2, 0);
    client.set_read_timeout(10, 0);
    const json body{{"lo", m.lo}, {"hi", m.hi}, {"to_address", to_addr}};
    auto res = client.Post("/migrate", body.dump(), "application/json");
    if (res && res->status == 200) {
      try {
        migrated_entries_.fetch_add(json::parse(res->body).value("moved", 0ull));
      } catch (const json::exception&) {
      }
    } else {
      std::cerr << "[proxy] warm-start migration [" << m.lo << "," << m.hi << "] "
                << m.from << " -> " << m.to << " failed ("
                << (res ? "status " + std::to_string(res->status)
                        : httplib::to_string(res.error()))
                << "); cold start for that range\n";
    }
  }
}

int DedupProxy::apply_overload_adjustments() {
  if (!is_reuse_strategy(config_.strategy)) return 0;
  std::lock_guard control(control_mu_);
  const auto findings = stats_.detect_overload(config_.cpu_threshold, config_.mem_threshold);
  if (findings.empty()) return 0;

  int applied = 0;
  auto samples = stats_.peek_window();
  for (const auto& finding : findings) {
    if (finding.hot_groups.empty()) continue;
    const auto snapshot = table_snapshot();
    const int gid = finding.hot_groups.front();
    const auto position =
        classify_group_position(*snapshot, finding.server, gid, config_.group_count);
    const auto [glo, ghi] = group_span(gid, config_.group_count, config_.lsh.bits);

    try {
      if (position == GroupPosition::Edge) {
        // Move the hot edge of the slice to the adjacent server.
        for (const Slice& s : snapshot->slices) {
          if (s.server != finding.server) continue;
          if (glo > s.hi || ghi < s.lo) continue;
          const std::uint64_t budget = s.size() > config_.min_slice
                                           ? s.size() - config_.min_slice
                                           : 0;
          if (budget == 0) break;
          std::uint64_t left = 0, right = 0;
          if (glo <= s.lo && ghi >= s.lo) {
            left = std::min<std::uint64_t>(std::uint64_t{ghi} - s.lo + 1, budget);
          } else if (ghi >= s.hi && glo <= s.hi) {
            right = std::min<std::uint64_t>(std::uint64_t{s.hi} - glo + 1, budget);
          }
          if (left == 0 && right == 0) break;
          auto [next, migrations] =
              shrink_edges(*snapshot, finding.server, left, right, config_.min_slice);
          swap_table(std::move(next));
          issue_migrations(migrations);
          ++applied;
          break;
        }
      } else if (position == GroupPosition::Interior) {
        // Carve the hot interior range out for the least loaded server.
        ServerId coldest;
        std::uint64_t coldest_tasks = 0;
        for (const auto& id : snapshot->servers) {
          if (id == finding.server) continue;
          std::uint64_t t = 0;
          for (const auto& s : samples) {
            if (s.server == id) t = s.tasks;
          }
          if (coldest.empty() || t < coldest_tasks) {
            coldest = id;
            coldest_tasks = t;
          }
        }
        if (coldest.empty()) continue;
        auto [next, migrations] =
            split_fine(*snapshot, finding.server, glo, ghi, coldest, config_.min_slice);
        swap_table(std::move(next));
        issue_migrations(migrations);
        ++applied;
      }
    } catch (const InvalidAdjustment&) {
      // The finding does not admit this adjustment on the current table.
    }
  }
  return applied;
}

std::pair<double, double> DedupProxy::decision_quantiles_ms() const {
  std::vector<double> copy;
  {
    std::lock_guard lock(decisions_mu_);
    copy = decision_ms_;
  }
  if (copy.empty()) return {0.0, 0.0};
  std::sort(copy.begin(), copy.end());
  const auto at = [&](double q) {
    const std::size_t idx = static_cast<std::size_t>(q * (copy.size() - 1));
    return copy[idx];
  };
  return {at(0.5), at(0.99)};
}

nlohmann::json DedupProxy::admin_metrics() const {
  json servers = json::array();
  {
    std::lock_guard lock(state_mu_);
    for (const auto& b : backends_) {
      json s{{"id", b.id}, {"address", b.address}, {"live", b.live},
             {"routed", stats_.routed_total(b.id)}};
      if (b.live && stats_.is_registered(b.id)) {
        const auto h = stats_.health(b.id);
        s["inflight"] = h.inflight;
        s["cpu"] = h.cpu;
        s["mem"] = h.mem;
      }
      servers.push_back(std::move(s));
    }
  }
  const auto [p50, p99] = decision_quantiles_ms();
  json out{{"strategy", strategy_name(config_.strategy)},
           {"servers", std::move(servers)},
           {"decision_ms", {{"p50", p50}, {"p99", p99}}},
           {"redistributions", redistributions_.load()},
           {"migrated_entries", migrated_entries_.load()},
           {"malformed_piggyback", stats_.malformed_piggyback_count()}};
  const auto snapshot = table_snapshot();
  out["epoch"] = snapshot->epoch;
  if (is_reuse_strategy(config_.strategy) && !snapshot->empty()) {
    json table;
    to_json(table, *snapshot);
    out["table"] = std::move(table);
  }
  return out;
}

void DedupProxy::control_loop() {
  using namespace std::chrono;
  const auto redistribution_interval =
      duration_cast<Clock::duration>(duration<double>(config_.redistribution_interval_s));
  const auto response_timeout =
      duration_cast<Clock::duration>(duration<double>(config_.response_timeout_s));
  const auto notification_interval =
      duration_cast<Clock::duration>(duration<double>(config_.notification_interval_s));
  const auto scan_period = std::max<Clock::duration>(
      milliseconds(20), std::min(response_timeout, notification_interval) / 2);

  auto next_scan = Clock::now() + scan_period;
  auto next_redistribution = Clock::now() + redistribution_interval;
  while (running_) {
    std::this_thread::sleep_for(milliseconds(5));
    const auto now = Clock::now();
    if (config_.failure_detection && now >= next_scan) {
      next_scan = now + scan_period;
      for (const auto& id : stats_.detect_failures(now, response_timeout,
                                                   notification_interval, config_.k_missed)) {
        std::cerr << "[proxy] detected failure of " << id << "\n";
        handle_failure(id);
      }
    }
    if (config_.periodic_redistribution &&
        config_.strategy == DistributionStrategy::ReuseAdaptive &&
        now >= next_redistribution) {
      next_redistribution = now + redistribution_interval;
      redistribution_tick();
    }
  }
}

void DedupProxy::start(int port, const std::string& host) {
  if (running_) return;
  http_ = std::make_unique<httplib::Server>();
  http_->set_tcp_nodelay(true);
  http_->set_keep_alive_timeout(1);

  http_->Post(R"(/svc/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    TaskRequest task;
    task.service = req.matches[1];
    task.task_id = req.get_header_value(wire::kTaskId);
    task.client_id = req.get_header_value(wire::kClientId);
    try {
      if (req.has_header(wire::kThreshold)) {
        try {
          task.threshold = std::stod(req.get_header_value(wire::kThreshold));
        } catch (const std::exception&) {
          throw InputError("bad " + std::string(wire::kThreshold) + " header");
        }
        if (!(task.threshold >= 0.0 && task.threshold <= 1.0)) {
          throw InputError("similarity threshold outside [0,1]");
        }
      }
      std::optional<std::string> lsh_hex;
      if (req.has_header(wire::kLsh)) lsh_hex = req.get_header_value(wire::kLsh);

      const RouteDecision decision = route_wire(task.service, lsh_hex, req.body,
                                                task.client_id);
      const RelayedResponse relayed = forward_and_relay(task, decision, req.body);
      res.status = relayed.status;
      for (const auto& [name, value] : relayed.headers) {
        res.set_header(name, value);
      }
      res.set_content(relayed.body, "application/json");
    } catch (const NoLiveServers& e) {
      res.status = 503;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const InputError& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });

  http_->Post("/register", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json j = json::parse(req.body);
      handle_register(j.at("server").get<std::string>(), j.at("address").get<std::string>());
      res.set_content(json{{"registered", true}}.dump(), "application/json");
    } catch (const InputError& e) {
      res.status = 409;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });

  http_->Post("/stats", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      StatsReport report = json::parse(req.body).get<StatsReport>();
      stats_.ingest_notification(report, Clock::now());
      res.set_content(json{{"ok", true}}.dump(), "application/json");
    } catch (const InputError& e) {
      res.status = 409;
      res.set_content(json{{"error", std::string("registration required: ") + e.what()}}.dump(),
                      "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });

  http_->Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(admin_metrics().dump(), "application/json");
  });

  http_->Post("/admin/redistribute", [this](const httplib::Request&, httplib::Response& res) {
    redistribution_tick();
    res.set_content(json{{"epoch", table_snapshot()->epoch}}.dump(), "application/json");
  });

  http_->Post("/admin/rebalance-overload",
              [this](const httplib::Request&, httplib::Response& res) {
                const int applied = apply_overload_adjustments();
                res.set_content(json{{"applied", applied}}.dump(), "application/json");
              });

  if (port == 0) {
    port_ = http_->bind_to_any_port(host);
  } else {
    if (!http_->bind_to_port(host, port)) {
      throw ConfigError("proxy: cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  running_ = true;
  http_thread_ = std::thread([this] { http_->listen_after_bind(); });
  while (!http_->is_running()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  control_thread_ = std::thread([this] { control_loop(); });
}

void DedupProxy::stop() {
  if (!running_) return;
  running_ = false;
  if (control_thread_.joinable()) control_thread_.join();
  http_->stop();
  if (http_thread_.joinable()) http_thread_.join();
  // Dropping the keep-alive pools closes backend connections so edge
  // servers can stop without waiting out their keep-alive windows.
  std::lock_guard lock(state_mu_);
  pools_.clear();
}

std::string DedupProxy::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

}  // namespace dedup
