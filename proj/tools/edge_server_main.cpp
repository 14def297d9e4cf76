#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "dedup/edge_server.hpp"
#include "dedup/strategy.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emulated reuse-caching edge server"};

  dedup::EdgeServer::Config cfg;
  std::string listen = "127.0.0.1:0";
  std::vector<std::string> service_names = {"svc0"};
  int centroids = 8;
  std::uint64_t service_seed = 4242;
  double cost_ms = 10.0;
  std::uint64_t seed = 0;
  int dim = 16;

  app.add_option("--id", cfg.id, "server id (must be unique per deployment)")
      ->capture_default_str();
  app.add_option("--listen", listen, "host:port (port 0 picks a free one)")
      ->capture_default_str();
  app.add_option("--proxy", cfg.proxy_url,
                 "deduplicator URL; when set the server registers itself and "
                 "sends periodic stats notifications");
  app.add_option("--bits", cfg.lsh.bits, "LSH signature bits")->capture_default_str();
  app.add_option("--dim", dim, "feature vector dimension")->capture_default_str();
  app.add_option("--seed", seed, "LSH hyperplane seed (must match the deployment)")
      ->capture_default_str();
  app.add_option("--services", service_names, "service names to offer")
      ->capture_default_str();
  app.add_option("--service-centroids", centroids, "centroids per stand-in service")
      ->capture_default_str();
  app.add_option("--service-seed", service_seed, "seed for stand-in service centroids")
      ->capture_default_str();
  app.add_option("--cost-ms", cost_ms, "virtual cpu cost per from-scratch execution")
      ->capture_default_str();
  app.add_option("--cache-capacity", cfg.cache_capacity, "reuse cache entries")
      ->capture_default_str();
  app.add_option("--group-count", cfg.group_count, "range groups for usage stats")
      ->capture_default_str();
  app.add_option("--notify-interval", cfg.notify_interval_s,
                 "seconds between stats notifications")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  cfg.lsh.dim = dim;
  cfg.lsh.seed = seed;
  for (const auto& name : service_names) {
    auto svc = dedup::make_service(
        name, dim, centroids,
        service_seed ^ dedup::ConsistentHashRing::fnv1a64(name));
    svc.cost_ms = cost_ms;
    cfg.services.push_back(std::move(svc));
  }

  std::string host = listen;
  int port = 0;
  if (const auto colon = listen.rfind(':'); colon != std::string::npos) {
    host = listen.substr(0, colon);
    port = std::stoi(listen.substr(colon + 1));
  }

  try {
    dedup::EdgeServer server(std::move(cfg));
    server.start(port, host);
    std::cout << "edge server " << server.config().id << " listening on " << host << ":"
              << server.port() << "\n";

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    server.stop();
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
