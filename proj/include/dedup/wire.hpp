#pragma once

#include <cstring>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dedup/feature.hpp"

namespace dedup::wire {

// Task headers, client -> proxy -> server.
inline constexpr const char* kTaskId = "X-Task-Id";
inline constexpr const char* kClientId = "X-Client-Id";
inline constexpr const char* kThreshold = "X-Sim-Threshold";
inline constexpr const char* kLsh = "X-LSH";  // user-assisted mode
inline constexpr const char* kBucket = "X-Bucket";
inline constexpr const char* kEpoch = "X-Epoch";

// Response headers, server -> proxy (-> client, piggyback stripped).
inline constexpr const char* kReused = "X-Reused";
inline constexpr const char* kSimilarity = "X-Similarity";
inline constexpr const char* kCpuLoad = "X-CPU-Load";
inline constexpr const char* kMemLoad = "X-Mem-Load";
inline constexpr const char* kGroupStats = "X-Group-Stats";

/// Task body: a JSON array of d reals. Generators may append raw padding
/// bytes after the closing bracket to emulate large inputs; receivers
/// parse the leading array and ignore the rest.
inline FeatureVector parse_payload_prefix(std::string_view body) {
  const char* end = static_cast<const char*>(std::memchr(body.data(), ']', body.size()));
  if (end == nullptr) {
    throw InputError("task body is not a JSON array of reals");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body.data(), end + 1);
  } catch (const nlohmann::json::exception&) {
    throw InputError("task body is not a JSON array of reals");
  }
  if (!j.is_array() || j.empty()) {
    throw InputError("task body is not a non-empty JSON array");
  }
  FeatureVector v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& x : j) {
    if (!x.is_number()) {
      throw InputError("task body contains a non-numeric element");
    }
    v[i++] = x.get<double>();
  }
  if (!v.allFinite()) {
    throw InputError("task body contains non-finite values");
  }
  return v;
}

inline std::string payload_to_json(const FeatureVector& v, std::size_t pad_bytes = 0) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  std::string body = j.dump();
  if (pad_bytes > body.size()) {
    body.append(pad_bytes - body.size(), '#');
  }
  return body;
}

}  // namespace dedup::wire
