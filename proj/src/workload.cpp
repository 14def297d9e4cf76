#include "dedup/workload.hpp"

#include <algorithm>
#include <cmath>

#include "dedup/lsh.hpp"

namespace dedup {

void WorkloadConfig::validate() const {
  if (dim < 2) throw ConfigError("workload: dim must be >= 2");
  if (clusters < 1) throw ConfigError("workload: need at least one cluster");
  if (!(intra_similarity > 0.0 && intra_similarity < 1.0)) {
    throw ConfigError("workload: intra_similarity must lie in (0,1)");
  }
  if (zipf_s < 0.0) throw ConfigError("workload: zipf_s must be >= 0");
  if (tasks < 0) throw ConfigError("workload: negative task count");
  if (services.empty()) throw ConfigError("workload: no services");
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("workload: threshold outside [0,1]");
  }
  if (clients < 1) throw ConfigError("workload: need at least one client");
  if (orthogonal_clusters && clusters > dim) {
    throw ConfigError("workload: orthogonal clusters need clusters <= dim");
  }
}

ZipfSampler::ZipfSampler(int n, double s) {
  if (n < 1) throw ConfigError("ZipfSampler: n must be >= 1");
  cdf_.resize(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    sum += 1.0 / std::pow(static_cast<double>(k), s);
    cdf_[static_cast<std::size_t>(k - 1)] = sum;
  }
  for (double& c : cdf_) c /= sum;
  cdf_.back() = 1.0;
}

int ZipfSampler::operator()(std::mt19937_64& rng) const {
  const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1p-53;
  const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
  return static_cast<int>(it - cdf_.begin());
}

double noise_sigma_for_similarity(double target, int dim) {
  // Mean cosine for a given sigma, estimated with a fixed-seed sample so
  // the whole pipeline stays deterministic.
  const auto mean_cos = [dim](double sigma) {
    detail::NormalSource normals(0x9e3779b97f4a7c15ULL);
    const int samples = 4000;
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
      // Rotational symmetry around the centroid: only the component along
      // c (z) and the orthogonal magnitude (r) matter.
      double z = normals.next();
      double r2 = 0.0;
      for (int i = 1; i < dim; ++i) {
        const double x = normals.next();
        r2 += x * x;
      }
      const double along = 1.0 + sigma * z;
      acc += along / std::sqrt(along * along + sigma * sigma * r2);
    }
    return acc / samples;
  };

  double lo = 0.0, hi = 1.0;
  while (mean_cos(hi) > target) {
    hi *= 2.0;
    if (hi > 1e3) break;
  }
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mean_cos(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Workload generate_workload(const WorkloadConfig& cfg) {
  cfg.validate();
  Workload out;
  out.config = cfg;

  detail::NormalSource centroid_normals(cfg.seed ^ 0xc3a5c85c97cb3127ULL);
  out.centroids.reserve(static_cast<std::size_t>(cfg.clusters));
  if (cfg.orthogonal_clusters) {
    for (int c = 0; c < cfg.clusters; ++c) {
      FeatureVector v = FeatureVector::Zero(cfg.dim);
      v[c] = 1.0;
      out.centroids.push_back(std::move(v));
    }
  } else {
    for (int c = 0; c < cfg.clusters; ++c) {
      FeatureVector v(cfg.dim);
      do {
        for (int i = 0; i < cfg.dim; ++i) v[i] = centroid_normals.next();
      } while (v.norm() == 0.0);
      out.centroids.push_back(v.normalized());
    }
  }

  const double sigma = noise_sigma_for_similarity(cfg.intra_similarity, cfg.dim);
  const ZipfSampler zipf(cfg.clusters, cfg.zipf_s);
  const std::uint64_t stream = cfg.stream_seed != 0 ? cfg.stream_seed : cfg.seed;
  std::mt19937_64 pick_rng(stream ^ 0xb492b66fbe98f273ULL);
  detail::NormalSource noise(stream ^ 0x2545f4914f6cdd1dULL);

  out.tasks.reserve(static_cast<std::size_t>(cfg.tasks));
  for (int i = 0; i < cfg.tasks; ++i) {
    WorkloadTask task;
    task.cluster = zipf(pick_rng);
    FeatureVector v = out.centroids[static_cast<std::size_t>(task.cluster)];
    for (int d = 0; d < cfg.dim; ++d) {
      v[d] += sigma * noise.next();
    }
    if (v.norm() == 0.0) {
      v = out.centroids[static_cast<std::size_t>(task.cluster)];
    }
    task.payload = v.normalized();
    task.task_id = "t-" + std::to_string(i);
    task.service = cfg.services[static_cast<std::size_t>(i) % cfg.services.size()];
    task.client_id = "client-" + std::to_string(i % cfg.clients);
    task.threshold = cfg.threshold;
    out.tasks.push_back(std::move(task));
  }
  return out;
}

}  // namespace dedup
