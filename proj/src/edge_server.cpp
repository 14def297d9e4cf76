#include "dedup/edge_server.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dedup/wire.hpp"

namespace dedup {

using nlohmann::json;

ServiceDef make_service(const std::string& name, int dim, int centroid_count,
                        std::uint64_t seed) {
  if (dim < 2 || centroid_count < 1) {
    throw ConfigError("make_service: need dim >= 2 and at least one centroid");
  }
  detail::NormalSource normals(seed ^ 0x5eedc0defacadeULL);
  ServiceDef def;
  def.name = name;
  def.centroids.reserve(static_cast<std::size_t>(centroid_count));
  for (int c = 0; c < centroid_count; ++c) {
    FeatureVector v(dim);
    do {
      for (int i = 0; i < dim; ++i) v[i] = normals.next();
    } while (v.norm() == 0.0);
    def.centroids.push_back(v.normalized());
  }
  return def;
}

int classify(const ServiceDef& service, const FeatureVector& payload) {
  if (service.centroids.empty()) {
    throw ConfigError("classify: service " + service.name + " has no centroids");
  }
  int best = 0;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < service.centroids.size(); ++i) {
    const double sim = cosine_similarity(service.centroids[i], payload);
    if (sim > best_sim) {
      best_sim = sim;
      best = static_cast<int>(i);
    }
  }
  return best;
}

void to_json(json& j, const ReuseCacheEntry& e) {
  json vec = json::array();
  for (Eigen::Index i = 0; i < e.vector.size(); ++i) vec.push_back(e.vector[i]);
  j = {{"service", e.service},
       {"vector", std::move(vec)},
       {"signature_hex", signature_to_hex(e.signature, 32)},
       {"label", e.result.label}};
}

ReuseCacheEntry entry_from_json(const json& j, int bits) {
  ReuseCacheEntry e;
  e.service = j.at("service").get<std::string>();
  const auto& vec = j.at("vector");
  e.vector = FeatureVector(static_cast<Eigen::Index>(vec.size()));
  Eigen::Index i = 0;
  for (const auto& x : vec) e.vector[i++] = x.get<double>();
  if (!e.vector.allFinite() || e.vector.norm() == 0.0) {
    throw InputError("migrated entry has a bad vector");
  }
  e.signature = parse_hex_signature(j.at("signature_hex").get<std::string>(), bits);
  e.result.label = j.at("label").get<int>();
  return e;
}

EdgeServer::EdgeServer(Config config)
    : config_(std::move(config)), hasher_(build_hasher(config_.lsh)) {
  if (config_.cache_capacity == 0) {
    throw ConfigError("EdgeServer: cache capacity must be >= 1");
  }
  last_report_at_ = std::chrono::steady_clock::now();
}

EdgeServer::~EdgeServer() { stop(); }

const ServiceDef* EdgeServer::find_service(const std::string& name) const {
  for (const auto& s : config_.services) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

TaskOutcome EdgeServer::handle_task(const std::string& service, const FeatureVector& payload,
                                    double threshold, std::optional<Bucket> bucket) {
  const ServiceDef* svc = find_service(service);
  if (svc == nullptr) {
    throw InputError("unknown service " + service);
  }
  validate_feature(payload, config_.lsh.dim);
  if (payload.norm() == 0.0) {
    throw InputError("zero payload vector");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw InputError("similarity threshold outside [0,1]");
  }

  std::lock_guard lock(mu_);
  const int gid = static_cast<int>(
      std::uint64_t{bucket.value_or(hasher_(payload))} *
      static_cast<std::uint64_t>(config_.group_count) / config_.lsh.space_size());
  group_tasks_[gid] += 1;

  // Nearest neighbor over the per-service cache, newest first so a
  // similarity tie lands on the most recently stored entry.
  const ReuseCacheEntry* best_entry = nullptr;
  double best = -2.0;
  for (auto it = cache_.rbegin(); it != cache_.rend(); ++it) {
    if (it->service != service) continue;
    const double sim = cosine_similarity(it->vector, payload);
    if (sim > best) {
      best = sim;
      best_entry = &*it;
    }
  }

  if (best_entry != nullptr && best >= threshold) {
    ++reused_;
    TaskOutcome out;
    out.result = {best_entry->result.label, ResultValue::Provenance::Reused};
    out.reused = true;
    out.similarity = best;
    return out;
  }

  ResultValue result{classify(*svc, payload), ResultValue::Provenance::FromScratch};
  busy_ms_ += svc->cost_ms;
  ++from_scratch_;
  ReuseCacheEntry entry;
  entry.service = service;
  entry.vector = payload;
  entry.signature = hasher_(payload);
  entry.result = result;
  entry.stored_seq = next_seq_++;
  cache_.push_back(std::move(entry));
  evict_if_full_locked();
  return {result, false, 0.0};
}

ResultValue EdgeServer::execute_from_scratch(const std::string& service,
                                             const FeatureVector& payload) {
  const ServiceDef* svc = find_service(service);
  if (svc == nullptr) {
    throw InputError("unknown service " + service);
  }
  ResultValue result{classify(*svc, payload), ResultValue::Provenance::FromScratch};
  std::lock_guard lock(mu_);
  busy_ms_ += svc->cost_ms;
  ++from_scratch_;
  return result;
}

void EdgeServer::evict_if_full_locked() {
  while (cache_.size() > config_.cache_capacity) {
    cache_.pop_front();  // least recently stored
  }
}

std::size_t EdgeServer::migrate_entries(Bucket lo, Bucket hi, const std::string& to_url) {
  std::vector<ReuseCacheEntry> moving;
  {
    std::lock_guard lock(mu_);
    for (const auto& e : cache_) {
      if (e.signature >= lo && e.signature <= hi) moving.push_back(e);
    }
  }
  if (moving.empty()) return 0;

  json body = json::array();
  for (const auto& e : moving) {
    json je;
    to_json(je, e);
    body.push_back(std::move(je));
  }
  httplib::Client client(to_url);
  client.set_connection_timeout(2, 0);
  client.set_read_timeout(5, 0);
  auto res = client.Post("/migrate", body.dump(), "application/json");
  if (!res || res->status != 200) {
    std::cerr << "[edge " << config_.id << "] migration to " << to_url
              << " failed; keeping " << moving.size() << " entries\n";
    return 0;
  }

  std::lock_guard lock(mu_);
  for (const auto& moved : moving) {
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if (it->stored_seq == moved.stored_seq) {
        cache_.erase(it);
        break;
      }
    }
  }
  return moving.size();
}

std::size_t EdgeServer::receive_entries(std::vector<ReuseCacheEntry> entries) {
  std::lock_guard lock(mu_);
  for (auto& e : entries) {
    e.signature = hasher_(e.vector);  // cache invariant: signature == hash(vector)
    e.stored_seq = next_seq_++;
    cache_.push_back(std::move(e));
  }
  evict_if_full_locked();
  return entries.size();
}

StatsReport EdgeServer::report_stats() {
  std::lock_guard lock(mu_);
  const auto now = std::chrono::steady_clock::now();
  const double elapsed_ms =
      std::chrono::duration<double, std::milli>(now - last_report_at_).count();
  if (elapsed_ms > 1.0) {
    const double fraction =
        std::clamp((busy_ms_ - busy_at_last_report_) / elapsed_ms, 0.0, 1.0);
    cpu_ewma_ = cpu_init_ ? 0.5 * fraction + 0.5 * cpu_ewma_ : fraction;
    cpu_init_ = true;
    last_report_at_ = now;
    busy_at_last_report_ = busy_ms_;
  }

  StatsReport report;
  report.server = config_.id;
  report.cpu = cpu_ewma_;
  report.mem = std::min(1.0, static_cast<double>(cache_.size()) /
                                 static_cast<double>(config_.cache_capacity));
  for (const auto& [gid, tasks] : group_tasks_) {
    report.per_group.push_back({gid, tasks, report.cpu, report.mem});
  }
  group_tasks_.clear();
  return report;
}

std::size_t EdgeServer::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

std::uint64_t EdgeServer::from_scratch_count() const {
  std::lock_guard lock(mu_);
  return from_scratch_;
}

std::uint64_t EdgeServer::reuse_count() const {
  std::lock_guard lock(mu_);
  return reused_;
}

double EdgeServer::busy_ms() const {
  std::lock_guard lock(mu_);
  return busy_ms_;
}

double EdgeServer::current_cpu() const {
  std::lock_guard lock(mu_);
  return cpu_ewma_;
}

double EdgeServer::current_mem() const {
  std::lock_guard lock(mu_);
  return std::min(1.0, static_cast<double>(cache_.size()) /
                           static_cast<double>(config_.cache_capacity));
}

nlohmann::json EdgeServer::cache_stats_json() const {
  std::lock_guard lock(mu_);
  std::map<std::string, std::size_t> per_service;
  for (const auto& e : cache_) per_service[e.service] += 1;
  return json{{"server", config_.id},
              {"entries", cache_.size()},
              {"capacity", config_.cache_capacity},
              {"from_scratch", from_scratch_},
              {"reused", reused_},
              {"busy_ms", busy_ms_},
              {"per_service", per_service}};
}

void EdgeServer::start(int port, const std::string& host) {
  if (running_) return;
  http_ = std::make_unique<httplib::Server>();
  http_->set_tcp_nodelay(true);
  http_->set_keep_alive_timeout(1);

  http_->Post(R"(/svc/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    if (failed_) {
      std::this_thread::sleep_for(std::chrono::duration<double>(config_.fail_hang_s));
      res.status = 503;
      res.set_content(R"({"error":"server failed"})", "application/json");
      return;
    }
    const std::string service = req.matches[1];
    try {
      const FeatureVector payload = wire::parse_payload_prefix(req.body);
      double threshold = 0.9;
      if (req.has_header(wire::kThreshold)) {
        threshold = std::stod(req.get_header_value(wire::kThreshold));
      }
      std::optional<Bucket> bucket;
      if (req.has_header(wire::kBucket)) {
        bucket = parse_hex_signature(req.get_header_value(wire::kBucket), config_.lsh.bits);
      }
      const TaskOutcome outcome = handle_task(service, payload, threshold, bucket);

      json body{{"task_id", req.get_header_value(wire::kTaskId)},
                {"label", outcome.result.label},
                {"reused", outcome.reused}};
      res.set_header(wire::kReused, outcome.reused ? "1" : "0");
      if (outcome.reused) {
        body["similarity"] = outcome.similarity;
        res.set_header(wire::kSimilarity, std::to_string(outcome.similarity));
      }
      // Piggyback current resource usage on the response.
      res.set_header(wire::kCpuLoad, std::to_string(current_cpu()));
      res.set_header(wire::kMemLoad, std::to_string(current_mem()));
      {
        std::lock_guard lock(mu_);
        std::ostringstream groups;
        bool first = true;
        for (const auto& [gid, tasks] : group_tasks_) {
          if (!first) groups << ',';
          groups << gid << ':' << tasks;
          first = false;
        }
        if (!first) res.set_header(wire::kGroupStats, groups.str());
      }
      res.set_content(body.dump(), "application/json");
    } catch (const InputError& e) {
      const bool unknown = std::string(e.what()).find("unknown service") != std::string::npos;
      res.status = unknown ? 404 : 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });

  http_->Post("/migrate", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json j = json::parse(req.body);
      if (j.is_array()) {
        std::vector<ReuseCacheEntry> entries;
        entries.reserve(j.size());
        for (const auto& je : j) entries.push_back(entry_from_json(je, 32));
        const std::size_t n = receive_entries(std::move(entries));
        res.set_content(json{{"received", n}}.dump(), "application/json");
        return;
      }
      const Bucket lo = j.at("lo").get<Bucket>();
      const Bucket hi = j.at("hi").get<Bucket>();
      const std::string to = j.at("to_address").get<std::string>();
      const std::size_t moved = migrate_entries(lo, hi, to);
      res.set_content(json{{"moved", moved}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });

  http_->Post("/control/fail", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json j = json::parse(req.body);
      set_failed(j.at("failed").get<bool>());
      res.set_content(json{{"failed", failed_.load()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });

  http_->Get("/cache/stats", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(cache_stats_json().dump(), "application/json");
  });

  if (port == 0) {
    port_ = http_->bind_to_any_port(host);
  } else {
    if (!http_->bind_to_port(host, port)) {
      throw ConfigError("EdgeServer: cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  running_ = true;
  http_thread_ = std::thread([this] { http_->listen_after_bind(); });
  while (!http_->is_running()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }

  if (!config_.proxy_url.empty()) {
    notifying_ = true;
    notify_thread_ = std::thread([this] { notifier_loop(); });
  }
}

void EdgeServer::notifier_loop() {
  httplib::Client client(config_.proxy_url);
  client.set_connection_timeout(1, 0);
  client.set_read_timeout(2, 0);

  // Explicit registration announces this server to the middlebox.
  const json reg{{"server", config_.id}, {"address", url()}};
  for (int attempt = 0; notifying_ && attempt < 50; ++attempt) {
    auto res = client.Post("/register", reg.dump(), "application/json");
    if (res && (res->status == 200 || res->status == 409)) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }

  const auto interval = std::chrono::duration<double>(config_.notify_interval_s);
  auto next = std::chrono::steady_clock::now() + interval;
  while (notifying_) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    if (std::chrono::steady_clock::now() < next) continue;
    next = std::chrono::steady_clock::now() + interval;
    if (failed_) continue;
    json body;
    to_json(body, report_stats());
    client.Post("/stats", body.dump(), "application/json");
  }
}

void EdgeServer::stop_notifier() {
  notifying_ = false;
  if (notify_thread_.joinable()) notify_thread_.join();
}

void EdgeServer::stop() {
  if (!running_) return;
  running_ = false;
  stop_notifier();
  http_->stop();
  if (http_thread_.joinable()) http_thread_.join();
}

std::string EdgeServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

}  // namespace dedup
