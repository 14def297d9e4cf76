#include "dedup/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <nlohmann/json.hpp>

namespace dedup {

void to_json(nlohmann::json& j, const StatsReport& r) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.per_group) {
    groups.push_back(nlohmann::json::array({g.gid, g.tasks, g.cpu, g.mem}));
  }
  j = {{"server", r.server}, {"cpu", r.cpu}, {"mem", r.mem}, {"per_group", std::move(groups)}};
}

void from_json(const nlohmann::json& j, StatsReport& r) {
  r = StatsReport{};
  r.server = j.at("server").get<std::string>();
  r.cpu = j.at("cpu").get<double>();
  r.mem = j.at("mem").get<double>();
  if (j.contains("per_group")) {
    for (const auto& g : j.at("per_group")) {
      StatsReport::Group group;
      group.gid = g.at(0).get<int>();
      group.tasks = g.at(1).get<std::uint64_t>();
      group.cpu = g.at(2).get<double>();
      group.mem = g.at(3).get<double>();
      r.per_group.push_back(group);
    }
  }
  if (r.cpu < 0.0 || r.cpu > 1.0 || r.mem < 0.0 || r.mem > 1.0) {
    throw InputError("stats report cpu/mem outside [0,1]");
  }
}

namespace {

std::optional<double> parse_load_fraction(const std::string& text) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end || !(value >= 0.0 && value <= 1.0)) {
    return std::nullopt;
  }
  return value;
}

}  // namespace

Piggyback parse_piggyback(const std::optional<std::string>& cpu,
                          const std::optional<std::string>& mem,
                          const std::optional<std::string>& group_stats) {
  Piggyback p;
  if (cpu) {
    p.cpu = parse_load_fraction(*cpu);
    if (!p.cpu) ++p.malformed;
  }
  if (mem) {
    p.mem = parse_load_fraction(*mem);
    if (!p.mem) ++p.malformed;
  }
  if (group_stats && !group_stats->empty()) {
    std::size_t pos = 0;
    const std::string& s = *group_stats;
    while (pos < s.size()) {
      std::size_t comma = s.find(',', pos);
      if (comma == std::string::npos) comma = s.size();
      const std::size_t colon = s.find(':', pos);
      bool ok = colon != std::string::npos && colon < comma;
      if (ok) {
        int gid = 0;
        std::uint64_t tasks = 0;
        auto r1 = std::from_chars(s.data() + pos, s.data() + colon, gid);
        auto r2 = std::from_chars(s.data() + colon + 1, s.data() + comma, tasks);
        ok = r1.ec == std::errc{} && r1.ptr == s.data() + colon && r2.ec == std::errc{} &&
             r2.ptr == s.data() + comma && gid >= 0;
        if (ok) p.group_tasks.emplace_back(gid, tasks);
      }
      if (!ok) ++p.malformed;
      pos = comma + 1;
    }
  }
  return p;
}

StatsCollector::StatsCollector(int bits, int group_count, double ewma_alpha)
    : bits_(bits), group_count_(group_count), alpha_(ewma_alpha) {
  if (bits < 1 || bits > 32) throw ConfigError("StatsCollector: bits out of range");
  if (group_count < 1) throw ConfigError("StatsCollector: group_count must be >= 1");
  if (!(ewma_alpha > 0.0 && ewma_alpha <= 1.0)) {
    throw ConfigError("StatsCollector: ewma alpha must be in (0,1]");
  }
}

int StatsCollector::group_of(Bucket bucket) const {
  const std::uint64_t total = std::uint64_t{1} << bits_;
  return static_cast<int>(std::uint64_t{bucket} * static_cast<std::uint64_t>(group_count_) /
                          total);
}

void StatsCollector::ewma(double& slot, bool& has, double sample) const {
  if (!has) {
    slot = sample;
    has = true;
  } else {
    slot = alpha_ * sample + (1.0 - alpha_) * slot;
  }
}

void StatsCollector::register_server(const ServerId& id, TimePoint now) {
  std::lock_guard lock(mu_);
  auto [it, inserted] = servers_.try_emplace(id);
  if (!inserted) {
    throw InputError("server " + id + " already registered");
  }
  it->second.health.server = id;
  it->second.health.last_response_at = now;
  it->second.health.last_notification_at = now;
}

void StatsCollector::unregister_server(const ServerId& id) {
  std::lock_guard lock(mu_);
  auto it = servers_.find(id);
  if (it != servers_.end()) {
    retired_routed_[id] += it->second.routed_total;
    servers_.erase(it);
  }
}

bool StatsCollector::is_registered(const ServerId& id) const {
  std::lock_guard lock(mu_);
  return servers_.count(id) > 0;
}

std::vector<ServerId> StatsCollector::servers() const {
  std::lock_guard lock(mu_);
  std::vector<ServerId> out;
  out.reserve(servers_.size());
  for (const auto& [id, _] : servers_) out.push_back(id);
  return out;
}

void StatsCollector::ingest_notification(const StatsReport& report, TimePoint now) {
  std::lock_guard lock(mu_);
  auto it = servers_.find(report.server);
  if (it == servers_.end()) {
    throw InputError("notification from unregistered server " + report.server);
  }
  PerServer& ps = it->second;
  ewma(ps.health.cpu, ps.health.has_cpu, report.cpu);
  ewma(ps.health.mem, ps.health.has_mem, report.mem);
  ps.health.last_notification_at = now;
  for (const auto& g : report.per_group) {
    GroupLoad& slot = ps.reported_groups[g.gid];
    slot.tasks = g.tasks;
    slot.cpu = alpha_ * g.cpu + (1.0 - alpha_) * slot.cpu;
    slot.mem = alpha_ * g.mem + (1.0 - alpha_) * slot.mem;
  }
}

void StatsCollector::ingest_piggyback(const ServerId& id, const Piggyback& fields,
                                      TimePoint now) {
  std::lock_guard lock(mu_);
  malformed_ += static_cast<std::uint64_t>(fields.malformed);
  auto it = servers_.find(id);
  if (it == servers_.end()) return;
  PerServer& ps = it->second;
  ps.health.last_response_at = now;
  if (fields.cpu) ewma(ps.health.cpu, ps.health.has_cpu, *fields.cpu);
  if (fields.mem) ewma(ps.health.mem, ps.health.has_mem, *fields.mem);
  for (const auto& [gid, tasks] : fields.group_tasks) {
    ps.reported_groups[gid].tasks = tasks;
  }
}

void StatsCollector::record_routed(const ServerId& server, std::optional<Bucket> bucket) {
  std::lock_guard lock(mu_);
  auto it = servers_.find(server);
  if (it == servers_.end()) return;
  it->second.window_tasks += 1;
  if (bucket) {
    it->second.window_group_tasks[group_of(*bucket)] += 1;
  }
  it->second.routed_total += 1;
}

std::uint64_t StatsCollector::routed_total(const ServerId& server) const {
  std::lock_guard lock(mu_);
  std::uint64_t total = 0;
  if (auto it = servers_.find(server); it != servers_.end()) {
    total += it->second.routed_total;
  }
  if (auto it = retired_routed_.find(server); it != retired_routed_.end()) {
    total += it->second;
  }
  return total;
}

std::int64_t StatsCollector::inflight_of(const ServerId& id) const {
  std::lock_guard lock(mu_);
  auto it = servers_.find(id);
  return it == servers_.end() ? 0 : it->second.health.inflight;
}

std::vector<LoadSample> StatsCollector::build_samples_locked() const {
  std::vector<LoadSample> out;
  out.reserve(servers_.size());
  for (const auto& [id, ps] : servers_) {
    LoadSample sample;
    sample.server = id;
    sample.tasks = ps.window_tasks;
    for (const auto& [gid, tasks] : ps.window_group_tasks) {
      GroupLoad load;
      load.tasks = tasks;
      if (auto rit = ps.reported_groups.find(gid); rit != ps.reported_groups.end()) {
        load.cpu = rit->second.cpu;
        load.mem = rit->second.mem;
      }
      sample.per_range[gid] = load;
    }
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<LoadSample> StatsCollector::snapshot_window() {
  std::lock_guard lock(mu_);
  last_window_ = build_samples_locked();
  for (auto& [id, ps] : servers_) {
    ps.window_tasks = 0;
    ps.window_group_tasks.clear();
  }
  return last_window_;
}

std::vector<LoadSample> StatsCollector::peek_window() const {
  std::lock_guard lock(mu_);
  return build_samples_locked();
}

std::vector<LoadSample> StatsCollector::last_window() const {
  std::lock_guard lock(mu_);
  return last_window_;
}

void StatsCollector::begin_request(const ServerId& id, TimePoint now) {
  std::lock_guard lock(mu_);
  auto it = servers_.find(id);
  if (it == servers_.end()) return;
  if (it->second.health.inflight == 0) {
    it->second.health.inflight_since = now;
  }
  it->second.health.inflight += 1;
}

void StatsCollector::end_request(const ServerId& id, TimePoint now, bool got_response) {
  std::lock_guard lock(mu_);
  auto it = servers_.find(id);
  if (it == servers_.end()) return;
  it->second.health.inflight = std::max<std::int64_t>(0, it->second.health.inflight - 1);
  if (got_response) it->second.health.last_response_at = now;
}

std::vector<ServerId> StatsCollector::detect_failures(TimePoint now, Duration response_timeout,
                                                      Duration notification_timeout,
                                                      int k_missed) const {
  std::lock_guard lock(mu_);
  std::vector<ServerId> failed;
  for (const auto& [id, ps] : servers_) {
    const TimePoint last_sign =
        std::max(ps.health.last_response_at, ps.health.inflight_since);
    const bool silent_requests =
        ps.health.inflight > 0 && now - last_sign > response_timeout;
    const bool silent_notifications =
        now - ps.health.last_notification_at > k_missed * notification_timeout;
    if (silent_requests || silent_notifications) {
      failed.push_back(id);
    }
  }
  return failed;
}

std::vector<OverloadFinding> StatsCollector::detect_overload(double cpu_threshold,
                                                             double mem_threshold,
                                                             int top_groups) const {
  if (!(cpu_threshold > 0.0 && cpu_threshold <= 1.0) ||
      !(mem_threshold > 0.0 && mem_threshold <= 1.0)) {
    throw ConfigError("overload thresholds must be in (0,1]");
  }
  std::lock_guard lock(mu_);
  std::vector<OverloadFinding> out;
  for (const auto& [id, ps] : servers_) {
    if (ps.health.cpu <= cpu_threshold && ps.health.mem <= mem_threshold) continue;
    OverloadFinding f;
    f.server = id;
    f.cpu = ps.health.cpu;
    f.mem = ps.health.mem;
    std::vector<std::pair<std::uint64_t, int>> ranked;
    for (const auto& [gid, tasks] : ps.window_group_tasks) {
      if (tasks > 0) ranked.emplace_back(tasks, gid);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(top_groups); ++i) {
      f.hot_groups.push_back(ranked[i].second);
    }
    out.push_back(std::move(f));
  }
  return out;
}

ServerHealth StatsCollector::health(const ServerId& id) const {
  std::lock_guard lock(mu_);
  auto it = servers_.find(id);
  if (it == servers_.end()) {
    throw InputError("health: unknown server " + id);
  }
  return it->second.health;
}

std::uint64_t StatsCollector::malformed_piggyback_count() const {
  std::lock_guard lock(mu_);
  return malformed_;
}

GroupPosition classify_group_position(const SliceTable& table, const ServerId& server,
                                      int gid, int group_count) {
  const auto [glo, ghi] = group_span(gid, group_count, table.bits);
  if (glo > ghi) return GroupPosition::Outside;
  bool overlaps = false;
  bool touches_edge = false;
  for (const Slice& s : table.slices) {
    if (s.server != server) continue;
    const Bucket olo = std::max(glo, s.lo);
    const Bucket ohi = std::min(ghi, s.hi);
    if (olo > ohi) continue;
    overlaps = true;
    if (olo == s.lo || ohi == s.hi) touches_edge = true;
  }
  if (!overlaps) return GroupPosition::Outside;
  return touches_edge ? GroupPosition::Edge : GroupPosition::Interior;
}

}  // namespace dedup
