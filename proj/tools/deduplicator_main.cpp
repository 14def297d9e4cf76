#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "dedup/proxy.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reuse-aware load-balancing middlebox"};

  std::string strategy = "reuse-adaptive";
  std::string listen = "127.0.0.1:8080";
  dedup::DedupProxy::Config cfg;
  int dim = 16;
  std::uint64_t seed = 0;

  app.add_option("--strategy", strategy,
                 "reuse-ideal|reuse-vanilla|reuse-mini-buckets|reuse-adaptive|"
                 "round-robin|random|least-connection|consistent-hash")
      ->capture_default_str();
  app.add_option("--bits", cfg.lsh.bits, "LSH signature bits (1..32)")
      ->capture_default_str();
  app.add_option("--dim", dim, "feature vector dimension")->capture_default_str();
  app.add_option("--listen", listen, "host:port to listen on")->capture_default_str();
  app.add_option("--redistribution-interval", cfg.redistribution_interval_s,
                 "seconds between adaptive redistribution passes")
      ->capture_default_str();
  app.add_option("--group-count", cfg.group_count, "range groups for load stats")
      ->capture_default_str();
  app.add_option("--min-slice", cfg.min_slice, "minimum slice width in buckets")
      ->capture_default_str();
  app.add_option("--seed", seed, "LSH hyperplane seed")->capture_default_str();
  app.add_option("--cpu-threshold", cfg.cpu_threshold, "overload cpu threshold")
      ->capture_default_str();
  app.add_option("--mem-threshold", cfg.mem_threshold, "overload mem threshold")
      ->capture_default_str();
  app.add_option("--response-timeout", cfg.response_timeout_s,
                 "seconds before a silent backend response counts as absent")
      ->capture_default_str();
  app.add_option("--notification-interval", cfg.notification_interval_s,
                 "expected seconds between server stats notifications")
      ->capture_default_str();
  app.add_option("--k-missed", cfg.k_missed,
                 "missed notification intervals before a server is failed")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  cfg.lsh.dim = dim;
  cfg.lsh.seed = seed;
  cfg.rng_seed = seed ^ 0x9e3779b9;

  std::string host = listen;
  int port = 8080;
  if (const auto colon = listen.rfind(':'); colon != std::string::npos) {
    host = listen.substr(0, colon);
    port = std::stoi(listen.substr(colon + 1));
  }

  try {
    cfg.strategy = dedup::parse_strategy(strategy);
    dedup::DedupProxy proxy(cfg);
    proxy.start(port, host);
    std::cout << "deduplicator (" << strategy << ") listening on " << host << ":"
              << proxy.port() << "\n";

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    proxy.stop();
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
