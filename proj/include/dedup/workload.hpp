#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dedup/feature.hpp"

namespace dedup {

/// Synthetic correlated task stream: G_c unit-norm cluster centroids,
/// cluster popularity ~ Zipf(zipf_s), payload = normalize(centroid +
/// gaussian noise) with the noise scaled so the mean cosine similarity to
/// the centroid hits intra_similarity.
struct WorkloadConfig {
  int dim = 16;
  int clusters = 50;
  double intra_similarity = 0.95;  // in (0,1)
  double zipf_s = 1.1;             // >= 0; 0 = uniform popularity
  int tasks = 10000;
  std::vector<std::string> services = {"svc0", "svc1", "svc2", "svc3"};
  double threshold = 0.9;
  std::uint64_t seed = 1;
  std::uint64_t stream_seed = 0;  // 0: follow seed; clusters always derive from seed
  int clients = 256;
  std::size_t pad_bytes = 0;        // pad task bodies up to this size
  bool orthogonal_clusters = false; // centroids = basis vectors (needs clusters <= dim)

  void validate() const;
};

struct WorkloadTask {
  std::string task_id;
  std::string service;
  std::string client_id;
  FeatureVector payload;
  double threshold = 0.9;
  int cluster = 0;
};

struct Workload {
  WorkloadConfig config;
  std::vector<FeatureVector> centroids;
  std::vector<WorkloadTask> tasks;
};

Workload generate_workload(const WorkloadConfig& cfg);

/// Zipf(s) over ranks 1..n via inverse-CDF table; s = 0 degenerates to
/// the uniform distribution.
class ZipfSampler {
 public:
  ZipfSampler(int n, double s);
  int operator()(std::mt19937_64& rng) const;  // 0-based rank

 private:
  std::vector<double> cdf_;
};

/// Noise scale sigma with E[cos(normalize(c + sigma*g), c)] = target for
/// unit c and g ~ N(0, I_dim), found by deterministic Monte-Carlo
/// bisection (the first-order closed form is visibly biased at small d).
double noise_sigma_for_similarity(double target, int dim);

}  // namespace dedup
