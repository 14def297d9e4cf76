#include "dedup/slice_table.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace dedup {

namespace {

std::uint64_t checked_space(int bits) {
  if (bits < 1 || bits > 32) {
    throw ConfigError("slice table bits must be in [1, 32], got " + std::to_string(bits));
  }
  return std::uint64_t{1} << bits;
}

const LoadSample* find_sample(const std::vector<LoadSample>& samples, const ServerId& id) {
  for (const auto& s : samples) {
    if (s.server == id) return &s;
  }
  return nullptr;
}

/// Clamp to min_slice, renormalize to `total`, floor, hand out the
/// remainder by largest fractional part (ties by index). Renormalizing
/// with scale < 1 can drag a clamped-at-min share below min_slice again;
/// the final pass tops those up from the largest slices so every server
/// stays routable.
std::vector<std::uint64_t> apportion(const std::vector<double>& raw, std::uint64_t total,
                                     std::uint64_t min_slice) {
  const std::size_t n = raw.size();
  if (min_slice == 0) min_slice = 1;
  if (total < n * min_slice) {
    throw ConfigError("hash space of " + std::to_string(total) + " buckets cannot hold " +
                      std::to_string(n) + " slices of at least " + std::to_string(min_slice));
  }

  std::vector<double> clamped(n);
  for (std::size_t i = 0; i < n; ++i) {
    clamped[i] = std::max(raw[i], static_cast<double>(min_slice));
  }
  const double sum = std::accumulate(clamped.begin(), clamped.end(), 0.0);
  const double scale = static_cast<double>(total) / sum;

  std::vector<std::uint64_t> sizes(n);
  std::vector<std::pair<double, std::size_t>> fracs(n);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double scaled = clamped[i] * scale;
    sizes[i] = static_cast<std::uint64_t>(std::floor(scaled));
    fracs[i] = {scaled - static_cast<double>(sizes[i]), i};
    assigned += sizes[i];
  }
  std::stable_sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t k = 0; assigned < total; ++k) {
    sizes[fracs[k % n].second] += 1;
    ++assigned;
  }

  for (std::size_t i = 0; i < n; ++i) {
    while (sizes[i] < min_slice) {
      std::size_t donor = n;
      std::uint64_t best = min_slice;
      for (std::size_t j = 0; j < n; ++j) {
        if (sizes[j] > best) {
          best = sizes[j];
          donor = j;
        }
      }
      if (donor == n) {
        throw ConfigError("cannot satisfy min_slice for all servers");
      }
      sizes[donor] -= 1;
      sizes[i] += 1;
    }
  }
  return sizes;
}

SliceTable layout_contiguous(const SliceTable& base, const std::vector<std::uint64_t>& sizes) {
  SliceTable next;
  next.bits = base.bits;
  next.epoch = base.epoch + 1;
  next.servers = base.servers;
  next.slices.reserve(sizes.size());
  std::uint64_t cursor = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    Slice s;
    s.lo = static_cast<Bucket>(cursor);
    s.hi = static_cast<Bucket>(cursor + sizes[i] - 1);
    s.server = base.servers[i];
    next.slices.push_back(std::move(s));
    cursor += sizes[i];
  }
  return next;
}

std::size_t slice_index_containing(const SliceTable& table, Bucket bucket) {
  std::size_t lo = 0, hi = table.slices.size();
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (table.slices[mid].hi < bucket) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return lo;
}

}  // namespace

SliceTable initial_equal(const std::vector<ServerId>& servers, int bits) {
  const std::uint64_t total = checked_space(bits);
  const std::uint64_t n = servers.size();
  if (n == 0) {
    throw ConfigError("initial_equal: no servers");
  }
  if (n > total) {
    throw ConfigError("initial_equal: " + std::to_string(n) + " servers exceed " +
                      std::to_string(total) + " buckets");
  }
  const std::uint64_t base = total / n;
  const std::uint64_t extra = total % n;

  SliceTable table;
  table.bits = bits;
  table.epoch = 0;
  table.servers = servers;
  table.slices.reserve(servers.size());
  std::uint64_t cursor = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t size = base + (i < extra ? 1 : 0);
    table.slices.push_back({static_cast<Bucket>(cursor),
                            static_cast<Bucket>(cursor + size - 1), servers[i]});
    cursor += size;
  }
  validate(table);
  return table;
}

Redistribution adaptive_redistribute(const SliceTable& table,
                                     const std::vector<LoadSample>& samples,
                                     std::uint64_t min_slice) {
  validate(table);
  if (table.empty()) {
    return {table, {}};
  }
  const std::uint64_t total = table.space_size();
  const double n = static_cast<double>(table.servers.size());

  std::vector<std::uint64_t> tasks;
  tasks.reserve(table.servers.size());
  std::uint64_t sum_t = 0;
  for (const auto& id : table.servers) {
    const LoadSample* s = find_sample(samples, id);
    if (s == nullptr) {
      throw InputError("adaptive_redistribute: no load sample for server " + id);
    }
    tasks.push_back(s->tasks);
    sum_t += s->tasks;
  }
  if (sum_t == 0) {
    return {table, {}};
  }

  std::vector<double> raw(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const double share = static_cast<double>(tasks[i]) / static_cast<double>(sum_t);
    raw[i] = static_cast<double>(total) / n +
             static_cast<double>(total) * (1.0 / n - share);
  }

  SliceTable next = layout_contiguous(table, apportion(raw, total, min_slice));
  validate(next);
  return {next, diff_ownership(table, next)};
}

Redistribution shrink_edges(const SliceTable& table, const ServerId& overloaded,
                            std::uint64_t left_amount, std::uint64_t right_amount,
                            std::uint64_t min_slice) {
  validate(table);
  if (min_slice == 0) min_slice = 1;

  std::size_t target = table.slices.size();
  for (std::size_t i = 0; i < table.slices.size(); ++i) {
    const Slice& s = table.slices[i];
    if (s.server != overloaded) continue;
    if (target == table.slices.size() || s.size() > table.slices[target].size()) {
      target = i;
    }
  }
  if (target == table.slices.size()) {
    throw InputError("shrink_edges: server " + overloaded + " owns no slice");
  }
  if (left_amount == 0 && right_amount == 0) {
    return {table, {}};
  }

  const Slice cur = table.slices[target];
  if (cur.size() < min_slice + left_amount + right_amount) {
    throw InvalidAdjustment("shrink_edges: amounts leave slice below min_slice");
  }
  if (left_amount > 0) {
    if (target == 0) {
      throw InvalidAdjustment("shrink_edges: no predecessor slice");
    }
    if (table.slices[target - 1].server == overloaded) {
      throw InvalidAdjustment("shrink_edges: predecessor owned by the same server");
    }
  }
  if (right_amount > 0) {
    if (target + 1 == table.slices.size()) {
      throw InvalidAdjustment("shrink_edges: no successor slice");
    }
    if (table.slices[target + 1].server == overloaded) {
      throw InvalidAdjustment("shrink_edges: successor owned by the same server");
    }
  }

  SliceTable next = table;
  next.epoch = table.epoch + 1;
  std::vector<MigrationDirective> migrations;
  if (left_amount > 0) {
    Slice& pred = next.slices[target - 1];
    Slice& mid = next.slices[target];
    migrations.push_back({mid.lo, static_cast<Bucket>(mid.lo + left_amount - 1),
                          overloaded, pred.server});
    pred.hi = static_cast<Bucket>(pred.hi + left_amount);
    mid.lo = static_cast<Bucket>(mid.lo + left_amount);
  }
  if (right_amount > 0) {
    Slice& mid = next.slices[target];
    Slice& succ = next.slices[target + 1];
    migrations.push_back({static_cast<Bucket>(mid.hi - right_amount + 1), mid.hi,
                          overloaded, succ.server});
    succ.lo = static_cast<Bucket>(succ.lo - right_amount);
    mid.hi = static_cast<Bucket>(mid.hi - right_amount);
  }
  validate(next);
  return {next, std::move(migrations)};
}

Redistribution split_fine(const SliceTable& table, const ServerId& overloaded,
                          Bucket lo, Bucket hi, const ServerId& target,
                          std::uint64_t min_slice) {
  validate(table);
  if (min_slice == 0) min_slice = 1;
  if (lo > hi || std::uint64_t{hi} >= table.space_size()) {
    throw InputError("split_fine: bad subrange");
  }
  if (target == overloaded) {
    throw InvalidAdjustment("split_fine: target equals the overloaded server");
  }

  const std::size_t idx = slice_index_containing(table, lo);
  if (idx >= table.slices.size() || table.slices[idx].lo > lo || table.slices[idx].hi < hi) {
    throw InvalidAdjustment("split_fine: subrange spans multiple slices");
  }
  const Slice cur = table.slices[idx];
  if (cur.server != overloaded) {
    throw InputError("split_fine: slice containing the subrange belongs to " + cur.server);
  }
  const std::uint64_t left_frag = std::uint64_t{lo} - cur.lo;
  const std::uint64_t right_frag = std::uint64_t{cur.hi} - hi;
  if ((left_frag > 0 && left_frag < min_slice) || (right_frag > 0 && right_frag < min_slice)) {
    throw InvalidAdjustment("split_fine: fragment below min_slice");
  }

  SliceTable next = table;
  next.epoch = table.epoch + 1;
  std::vector<Slice> pieces;
  if (left_frag > 0) pieces.push_back({cur.lo, static_cast<Bucket>(lo - 1), cur.server});
  pieces.push_back({lo, hi, target});
  if (right_frag > 0) pieces.push_back({static_cast<Bucket>(hi + 1), cur.hi, cur.server});
  next.slices.erase(next.slices.begin() + static_cast<std::ptrdiff_t>(idx));
  next.slices.insert(next.slices.begin() + static_cast<std::ptrdiff_t>(idx),
                     pieces.begin(), pieces.end());
  validate(next);
  return {next, {{lo, hi, overloaded, target}}};
}

SliceTable merge_adjacent(const SliceTable& table) {
  validate(table);
  bool changed = false;
  SliceTable next = table;
  next.slices.clear();
  for (const Slice& s : table.slices) {
    if (!next.slices.empty() && next.slices.back().server == s.server) {
      next.slices.back().hi = s.hi;
      changed = true;
    } else {
      next.slices.push_back(s);
    }
  }
  if (!changed) {
    return table;
  }
  next.epoch = table.epoch + 1;
  validate(next);
  return next;
}

Redistribution add_server(const SliceTable& table, const std::vector<LoadSample>& samples,
                          const ServerId& new_server, std::uint64_t min_slice) {
  validate(table);
  if (min_slice == 0) min_slice = 1;
  if (std::find(table.servers.begin(), table.servers.end(), new_server) != table.servers.end()) {
    throw InputError("add_server: server " + new_server + " already registered");
  }

  if (table.empty()) {
    SliceTable next;
    next.bits = table.bits;
    next.epoch = table.epoch + 1;
    next.servers = {new_server};
    next.slices = {{0, static_cast<Bucket>(table.space_size() - 1), new_server}};
    validate(next);
    return {next, {}};
  }

  // Donor: most loaded by t_i among servers that own a slice, ties to the
  // earliest registered.
  ServerId donor;
  std::uint64_t donor_tasks = 0;
  for (const auto& id : table.servers) {
    bool owns = false;
    for (const Slice& s : table.slices) {
      if (s.server == id) {
        owns = true;
        break;
      }
    }
    if (!owns) continue;
    const LoadSample* s = find_sample(samples, id);
    const std::uint64_t t = s ? s->tasks : 0;
    if (donor.empty() || t > donor_tasks) {
      donor = id;
      donor_tasks = t;
    }
  }
  if (donor.empty()) {
    throw ConfigError("add_server: no server owns a slice");
  }
  const LoadSample* donor_sample = find_sample(samples, donor);
  const int group_count = 64;  // apportionment granularity only; any G>0 works here

  // Donor's hottest slice by windowed per-range mass (ties: lowest lo).
  std::size_t slice_idx = table.slices.size();
  double best_mass = -1.0;
  for (std::size_t i = 0; i < table.slices.size(); ++i) {
    const Slice& s = table.slices[i];
    if (s.server != donor) continue;
    const double mass =
        donor_sample ? load_in_range(*donor_sample, s.lo, s.hi, group_count, table.bits) : 0.0;
    if (mass > best_mass) {
      best_mass = mass;
      slice_idx = i;
    }
  }
  const Slice cur = table.slices[slice_idx];

  SliceTable next = table;
  next.epoch = table.epoch + 1;
  next.servers.push_back(new_server);
  std::vector<MigrationDirective> migrations;

  if (cur.size() >= 2 * min_slice) {
    const Bucket mid = static_cast<Bucket>(cur.lo + cur.size() / 2);  // upper half starts here
    double lower_mass = 0.0, upper_mass = 0.0;
    if (donor_sample) {
      lower_mass = load_in_range(*donor_sample, cur.lo, static_cast<Bucket>(mid - 1),
                                 group_count, table.bits);
      upper_mass = load_in_range(*donor_sample, mid, cur.hi, group_count, table.bits);
    }
    const bool give_upper = upper_mass >= lower_mass;  // tie: upper half
    Slice moved, kept;
    if (give_upper) {
      moved = {mid, cur.hi, new_server};
      kept = {cur.lo, static_cast<Bucket>(mid - 1), donor};
    } else {
      moved = {cur.lo, static_cast<Bucket>(mid - 1), new_server};
      kept = {mid, cur.hi, donor};
    }
    next.slices[slice_idx] = give_upper ? kept : moved;
    next.slices.insert(next.slices.begin() + static_cast<std::ptrdiff_t>(slice_idx) + 1,
                       give_upper ? moved : kept);
    migrations.push_back({moved.lo, moved.hi, donor, new_server});
  } else {
    // Donor slice too small to halve; take the donor's spare buckets and
    // top up from one adjacent slice so both parties keep >= min_slice.
    const std::uint64_t from_donor = cur.size() - min_slice;
    const std::uint64_t from_neighbor = min_slice - from_donor;
    const bool can_upper =
        slice_idx + 1 < table.slices.size() &&
        table.slices[slice_idx + 1].size() >= from_neighbor + min_slice;
    const bool can_lower =
        slice_idx > 0 && table.slices[slice_idx - 1].size() >= from_neighbor + min_slice;
    if (can_upper) {
      const Slice succ = table.slices[slice_idx + 1];
      Slice moved{static_cast<Bucket>(cur.hi - from_donor + 1),
                  static_cast<Bucket>(cur.hi + from_neighbor), new_server};
      next.slices[slice_idx].hi = static_cast<Bucket>(cur.hi - from_donor);
      next.slices[slice_idx + 1].lo = static_cast<Bucket>(moved.hi + 1);
      next.slices.insert(next.slices.begin() + static_cast<std::ptrdiff_t>(slice_idx) + 1, moved);
      if (from_donor > 0) {
        migrations.push_back({moved.lo, cur.hi, donor, new_server});
      }
      migrations.push_back({static_cast<Bucket>(cur.hi + 1), moved.hi, succ.server, new_server});
    } else if (can_lower) {
      const Slice pred = table.slices[slice_idx - 1];
      Slice moved{static_cast<Bucket>(cur.lo - from_neighbor),
                  static_cast<Bucket>(cur.lo + from_donor - (from_donor > 0 ? 1 : 0)), new_server};
      if (from_donor == 0) {
        moved.hi = static_cast<Bucket>(cur.lo - 1);
      }
      next.slices[slice_idx].lo = static_cast<Bucket>(moved.hi + 1);
      next.slices[slice_idx - 1].hi = static_cast<Bucket>(moved.lo - 1);
      next.slices.insert(next.slices.begin() + static_cast<std::ptrdiff_t>(slice_idx), moved);
      if (from_donor > 0) {
        migrations.push_back({cur.lo, moved.hi, donor, new_server});
      }
      migrations.push_back({moved.lo, static_cast<Bucket>(cur.lo - 1), pred.server, new_server});
    } else {
      throw InvalidAdjustment("add_server: no adjacent slice can cede " +
                              std::to_string(from_neighbor) + " buckets");
    }
  }
  validate(next);
  return {next, std::move(migrations)};
}

SliceTable remove_server(const SliceTable& table, const ServerId& failed,
                         const std::vector<LoadSample>& samples) {
  validate(table);
  if (std::find(table.servers.begin(), table.servers.end(), failed) == table.servers.end()) {
    throw InputError("remove_server: unknown server " + failed);
  }
  if (table.servers.size() < 2) {
    throw ConfigError("remove_server: cannot remove the last server");
  }
  const bool owns_any = std::any_of(table.slices.begin(), table.slices.end(),
                                    [&](const Slice& s) { return s.server == failed; });
  if (!owns_any) {
    SliceTable next = table;
    next.epoch = table.epoch + 1;
    next.servers.erase(std::find(next.servers.begin(), next.servers.end(), failed));
    validate(next);
    return next;
  }

  const auto window_tasks = [&](const ServerId& id) -> std::uint64_t {
    const LoadSample* s = find_sample(samples, id);
    return s ? s->tasks : 0;
  };

  // Collapse runs of failed-owned slices so neighbors are always survivors.
  std::vector<Slice> survivors;
  struct Gap {
    std::size_t after;  // index into survivors of the left neighbor, or npos
    Bucket lo, hi;
  };
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<Gap> gaps;
  for (const Slice& s : table.slices) {
    if (s.server != failed) {
      survivors.push_back(s);
      continue;
    }
    if (!gaps.empty() && gaps.back().after == (survivors.empty() ? npos : survivors.size() - 1) &&
        std::uint64_t{gaps.back().hi} + 1 == s.lo) {
      gaps.back().hi = s.hi;
    } else {
      gaps.push_back({survivors.empty() ? npos : survivors.size() - 1, s.lo, s.hi});
    }
  }

  for (const Gap& gap : gaps) {
    const std::uint64_t size = std::uint64_t{gap.hi} - gap.lo + 1;
    Slice* left = gap.after == npos ? nullptr : &survivors[gap.after];
    const std::size_t right_idx = gap.after == npos ? 0 : gap.after + 1;
    Slice* right = right_idx < survivors.size() ? &survivors[right_idx] : nullptr;

    if (left && right) {
      const std::uint64_t t_left = window_tasks(left->server);
      const std::uint64_t t_right = window_tasks(right->server);
      double w_left;
      if (t_left == 0 && t_right == 0) {
        w_left = 0.5;
      } else {
        w_left = static_cast<double>(t_right) / static_cast<double>(t_left + t_right);
      }
      std::uint64_t left_take = static_cast<std::uint64_t>(
          std::floor(static_cast<double>(size) * w_left));
      std::uint64_t right_take = static_cast<std::uint64_t>(
          std::floor(static_cast<double>(size) * (1.0 - w_left)));
      std::uint64_t rest = size - left_take - right_take;
      if (rest > 0) {
        if (t_left <= t_right) {
          left_take += rest;
        } else {
          right_take += rest;
        }
      }
      left->hi = static_cast<Bucket>(left->hi + left_take);
      right->lo = static_cast<Bucket>(right->lo - right_take);
    } else if (left) {
      left->hi = gap.hi;
    } else if (right) {
      right->lo = gap.lo;
    }
  }

  SliceTable next;
  next.bits = table.bits;
  next.epoch = table.epoch + 1;
  next.slices = std::move(survivors);
  next.servers.reserve(table.servers.size() - 1);
  for (const auto& id : table.servers) {
    if (id != failed) next.servers.push_back(id);
  }
  validate(next);
  return next;
}

const ServerId& lookup(const SliceTable& table, Bucket bucket) {
  if (table.empty()) {
    throw InputError("lookup: empty slice table");
  }
  if (std::uint64_t{bucket} >= table.space_size()) {
    throw InputError("lookup: bucket " + std::to_string(bucket) + " out of range");
  }
  return table.slices[slice_index_containing(table, bucket)].server;
}

void validate(const SliceTable& table) {
  const std::uint64_t total = checked_space(table.bits);
  if (table.servers.empty()) {
    if (!table.slices.empty()) {
      throw ConfigError("slice table has slices but no servers");
    }
    return;
  }
  if (table.slices.empty()) {
    throw ConfigError("slice table has servers but no slices");
  }
  if (table.slices.front().lo != 0) {
    throw ConfigError("slice table does not start at 0");
  }
  std::map<ServerId, std::uint64_t> owned;
  for (std::size_t i = 0; i < table.slices.size(); ++i) {
    const Slice& s = table.slices[i];
    if (s.hi < s.lo || std::uint64_t{s.hi} >= total) {
      throw ConfigError("slice [" + std::to_string(s.lo) + "," + std::to_string(s.hi) +
                        "] malformed");
    }
    if (i > 0 && std::uint64_t{table.slices[i - 1].hi} + 1 != s.lo) {
      throw ConfigError("gap or overlap before bucket " + std::to_string(s.lo));
    }
    if (std::find(table.servers.begin(), table.servers.end(), s.server) == table.servers.end()) {
      throw ConfigError("slice owned by unregistered server " + s.server);
    }
    owned[s.server] += s.size();
  }
  if (std::uint64_t{table.slices.back().hi} != total - 1) {
    throw ConfigError("slice table does not cover the space");
  }
  (void)owned;
}

std::vector<MigrationDirective> diff_ownership(const SliceTable& before,
                                               const SliceTable& after) {
  std::vector<MigrationDirective> out;
  if (before.empty() || after.empty()) {
    return out;
  }
  const std::uint64_t total = after.space_size();
  std::size_t bi = 0, ai = 0;
  std::uint64_t cursor = 0;
  while (cursor < total) {
    while (before.slices[bi].hi < cursor) ++bi;
    while (after.slices[ai].hi < cursor) ++ai;
    const std::uint64_t stop =
        std::min<std::uint64_t>(before.slices[bi].hi, after.slices[ai].hi);
    const ServerId& from = before.slices[bi].server;
    const ServerId& to = after.slices[ai].server;
    if (from != to) {
      if (!out.empty() && out.back().from == from && out.back().to == to &&
          std::uint64_t{out.back().hi} + 1 == cursor) {
        out.back().hi = static_cast<Bucket>(stop);
      } else {
        out.push_back({static_cast<Bucket>(cursor), static_cast<Bucket>(stop), from, to});
      }
    }
    cursor = stop + 1;
  }
  return out;
}

std::pair<Bucket, Bucket> group_span(int gid, int group_count, int bits) {
  const std::uint64_t total = checked_space(bits);
  if (gid < 0 || gid >= group_count) {
    throw InputError("group id " + std::to_string(gid) + " out of range");
  }
  // group(bucket) = bucket * G / 2^b; span is the preimage of gid.
  const std::uint64_t g = static_cast<std::uint64_t>(gid);
  const std::uint64_t gc = static_cast<std::uint64_t>(group_count);
  const std::uint64_t lo = (g * total + gc - 1) / gc;
  std::uint64_t hi = ((g + 1) * total + gc - 1) / gc;
  hi = hi == 0 ? 0 : hi - 1;
  if (lo > hi || lo >= total) {
    return {1, 0};  // empty span (possible when G > 2^b)
  }
  return {static_cast<Bucket>(lo), static_cast<Bucket>(std::min<std::uint64_t>(hi, total - 1))};
}

double load_in_range(const LoadSample& sample, Bucket lo, Bucket hi,
                     int group_count, int bits) {
  double mass = 0.0;
  for (const auto& [gid, load] : sample.per_range) {
    if (load.tasks == 0) continue;
    const auto [glo, ghi] = group_span(gid, group_count, bits);
    if (glo > ghi) continue;
    const std::uint64_t olo = std::max<std::uint64_t>(lo, glo);
    const std::uint64_t ohi = std::min<std::uint64_t>(hi, ghi);
    if (olo > ohi) continue;
    const double overlap = static_cast<double>(ohi - olo + 1);
    const double span = static_cast<double>(std::uint64_t{ghi} - glo + 1);
    mass += static_cast<double>(load.tasks) * overlap / span;
  }
  return mass;
}

void to_json(nlohmann::json& j, const SliceTable& table) {
  nlohmann::json slices = nlohmann::json::array();
  for (const Slice& s : table.slices) {
    slices.push_back({{"lo", s.lo}, {"hi", s.hi}, {"server", s.server}});
  }
  j = {{"bits", table.bits}, {"epoch", table.epoch}, {"slices", std::move(slices)}};
}

void from_json(const nlohmann::json& j, SliceTable& table) {
  table = SliceTable{};
  table.bits = j.at("bits").get<int>();
  table.epoch = j.at("epoch").get<std::uint64_t>();
  for (const auto& js : j.at("slices")) {
    Slice s;
    s.lo = js.at("lo").get<Bucket>();
    s.hi = js.at("hi").get<Bucket>();
    s.server = js.at("server").get<std::string>();
    table.slices.push_back(std::move(s));
    if (std::find(table.servers.begin(), table.servers.end(), table.slices.back().server) ==
        table.servers.end()) {
      table.servers.push_back(table.slices.back().server);
    }
  }
  validate(table);
}

}  // namespace dedup
