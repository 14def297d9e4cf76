#include <doctest.h>

#include <cmath>
#include <vector>

#include "dedup/workload.hpp"

using namespace dedup;

TEST_CASE("workload generation is deterministic per seed") {
  WorkloadConfig cfg;
  cfg.tasks = 200;
  cfg.seed = 42;
  const Workload a = generate_workload(cfg);
  const Workload b = generate_workload(cfg);
  REQUIRE(a.tasks.size() == b.tasks.size());
  for (std::size_t i = 0; i < a.tasks.size(); ++i) {
    CHECK(a.tasks[i].payload == b.tasks[i].payload);
    CHECK(a.tasks[i].cluster == b.tasks[i].cluster);
    CHECK(a.tasks[i].client_id == b.tasks[i].client_id);
  }
  cfg.seed = 43;
  const Workload c = generate_workload(cfg);
  CHECK(a.tasks[0].payload != c.tasks[0].payload);
}

TEST_CASE("mean similarity to the cluster centroid hits the target") {
  for (const double target : {0.8, 0.95, 0.999}) {
    WorkloadConfig cfg;
    cfg.clusters = 4;
    cfg.tasks = 4000;
    cfg.intra_similarity = target;
    cfg.seed = 7;
    const Workload w = generate_workload(cfg);
    double acc = 0.0;
    for (const auto& t : w.tasks) {
      acc += cosine_similarity(t.payload, w.centroids[static_cast<std::size_t>(t.cluster)]);
    }
    const double mean = acc / static_cast<double>(w.tasks.size());
    CHECK(std::abs(mean - target) < 0.01);
  }
}

TEST_CASE("highly similar single-cluster tasks are pairwise close") {
  WorkloadConfig cfg;
  cfg.clusters = 1;
  cfg.tasks = 64;
  cfg.intra_similarity = 0.999;
  cfg.seed = 3;
  const Workload w = generate_workload(cfg);
  for (std::size_t i = 1; i < w.tasks.size(); ++i) {
    CHECK(cosine_similarity(w.tasks[0].payload, w.tasks[i].payload) >= 0.99);
  }
}

TEST_CASE("zipf_s = 0 draws clusters uniformly") {
  const int n = 10;
  ZipfSampler zipf(n, 0.0);
  std::mt19937_64 rng(19);
  std::vector<int> counts(n, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[static_cast<std::size_t>(zipf(rng))] += 1;
  // Chi-square against uniform; 14 dof-ish bound, generous.
  double chi2 = 0.0;
  const double expected = static_cast<double>(draws) / n;
  for (int c : counts) {
    chi2 += (c - expected) * (c - expected) / expected;
  }
  CHECK(chi2 < 30.0);
}

TEST_CASE("zipf skew concentrates on the first cluster") {
  ZipfSampler zipf(50, 1.1);
  std::mt19937_64 rng(23);
  int first = 0;
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    if (zipf(rng) == 0) ++first;
  }
  const double share = static_cast<double>(first) / draws;
  CHECK(share > 0.15);
  CHECK(share < 0.35);
}

TEST_CASE("orthogonal cluster mode uses basis-vector centroids") {
  WorkloadConfig cfg;
  cfg.dim = 8;
  cfg.clusters = 8;
  cfg.orthogonal_clusters = true;
  cfg.tasks = 10;
  const Workload w = generate_workload(cfg);
  for (std::size_t i = 0; i < w.centroids.size(); ++i) {
    for (std::size_t j = i + 1; j < w.centroids.size(); ++j) {
      CHECK(w.centroids[i].dot(w.centroids[j]) == doctest::Approx(0.0));
    }
  }
  cfg.clusters = 9;
  CHECK_THROWS_AS(generate_workload(cfg), ConfigError);
}

TEST_CASE("infeasible configs are rejected") {
  WorkloadConfig cfg;
  cfg.intra_similarity = 1.0;
  CHECK_THROWS_AS(generate_workload(cfg), ConfigError);
  cfg.intra_similarity = 0.9;
  cfg.clusters = 0;
  CHECK_THROWS_AS(generate_workload(cfg), ConfigError);
}

TEST_CASE("payload padding keeps the parseable array prefix") {
  WorkloadConfig cfg;
  cfg.tasks = 1;
  cfg.pad_bytes = 1024;
  const Workload w = generate_workload(cfg);
  CHECK(w.config.pad_bytes == 1024);
}
