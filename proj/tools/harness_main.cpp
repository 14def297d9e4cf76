#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dedup/experiment.hpp"
#include "dedup/strategy.hpp"

namespace {

void add_workload_flags(CLI::App* cmd, dedup::WorkloadConfig& wl) {
  cmd->add_option("--clusters", wl.clusters, "workload clusters G_c")->capture_default_str();
  cmd->add_option("--intra-sim", wl.intra_similarity,
                  "target mean cosine similarity within a cluster")
      ->capture_default_str();
  cmd->add_option("--zipf", wl.zipf_s, "cluster popularity skew exponent")
      ->capture_default_str();
  cmd->add_option("--tasks", wl.tasks, "tasks per run")->capture_default_str();
  cmd->add_option("--threshold", wl.threshold, "similarity threshold carried by tasks")
      ->capture_default_str();
  cmd->add_option("--seed", wl.seed, "workload seed")->capture_default_str();
  cmd->add_option("--clients", wl.clients, "logical client count")->capture_default_str();
  cmd->add_option("--pad-bytes", wl.pad_bytes, "pad task bodies up to this many bytes")
      ->capture_default_str();
  cmd->add_flag("--orthogonal-clusters", wl.orthogonal_clusters,
                "use mutually orthogonal basis-vector centroids");
}

void add_deployment_flags(CLI::App* cmd, dedup::DeploymentParams& dep) {
  cmd->add_option("--servers", dep.servers, "edge server count")->capture_default_str();
  cmd->add_option("--bits", dep.bits, "LSH signature bits")->capture_default_str();
  cmd->add_option("--dim", dep.dim, "feature dimension")->capture_default_str();
  cmd->add_option("--lsh-seed", dep.lsh_seed, "deployment hyperplane seed")
      ->capture_default_str();
  cmd->add_option("--redistribution-interval", dep.redistribution_interval_s,
                  "seconds between adaptive redistributions")
      ->capture_default_str();
  cmd->add_option("--group-count", dep.group_count, "range groups")->capture_default_str();
  cmd->add_option("--min-slice", dep.min_slice, "minimum slice width")->capture_default_str();
  cmd->add_option("--service-centroids", dep.service_centroids,
                  "centroids per stand-in service")
      ->capture_default_str();
  cmd->add_option("--cache-capacity", dep.cache_capacity, "reuse cache entries per server")
      ->capture_default_str();
  cmd->add_option("--cost-ms", dep.cost_ms, "virtual cpu cost per from-scratch execution")
      ->capture_default_str();
  cmd->add_option("--notification-interval", dep.notification_interval_s,
                  "seconds between server stats notifications")
      ->capture_default_str();
  cmd->add_option("--response-timeout", dep.response_timeout_s, "backend response timeout")
      ->capture_default_str();
}

void write_reports(const std::string& path, const std::vector<dedup::ExperimentReport>& rs) {
  if (path.empty() || path == "-") {
    dedup::emit_csv(std::cout, rs);
    return;
  }
  std::ofstream out(path);
  if (!out) throw dedup::ConfigError("cannot open " + path);
  dedup::emit_csv(out, rs);
  std::cout << "wrote " << path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experiment driver for the reuse-aware middlebox"};
  app.require_subcommand(1);

  dedup::WorkloadConfig wl;
  dedup::DeploymentParams dep;

  // --- run ---------------------------------------------------------------
  auto* run = app.add_subcommand("run", "replay a synthetic workload against a deployment");
  std::vector<std::string> strategies = {"reuse-adaptive"};
  int reps = 10;
  int senders = 1;
  bool user_assisted = false;
  std::string out_path = "results.csv";
  run->add_option("--strategy", strategies, "strategies to run (repeatable)")
      ->capture_default_str();
  run->add_option("--reps", reps, "repetitions per strategy (mean reported)")
      ->capture_default_str();
  run->add_option("--senders", senders, "concurrent senders")->capture_default_str();
  run->add_flag("--user-assisted", user_assisted, "clients attach X-LSH signatures");
  run->add_option("--out", out_path, "CSV output path ('-' for stdout)")
      ->capture_default_str();
  add_workload_flags(run, wl);
  add_deployment_flags(run, dep);

  // --- scenario ------------------------------------------------------------
  auto* scenario = app.add_subcommand("scenario", "scripted topology-change scenarios");
  scenario->require_subcommand(1);
  auto* add_fail = scenario->add_subcommand(
      "add-fail", "register a server mid-stream, fail another later");
  std::string scen_out = "scenario.csv";
  std::string scen_log;
  add_fail->add_option("--out", scen_out, "CSV output path")->capture_default_str();
  add_fail->add_option("--log", scen_log, "event log output path (stdout if empty)");
  add_workload_flags(add_fail, wl);
  add_deployment_flags(add_fail, dep);

  // --- adapt-threshold ------------------------------------------------------
  auto* adapt = app.add_subcommand(
      "adapt-threshold", "tune the similarity threshold by sampling reuse accuracy");
  double initial = 0.9, target = 90.0, delta = 0.01, margin = 5.0;
  int group_size = 20, groups_per_round = 5, rounds = 15;
  adapt->add_option("--initial", initial, "starting threshold")->capture_default_str();
  adapt->add_option("--target-accuracy", target, "target reuse accuracy in percent")
      ->capture_default_str();
  adapt->add_option("--delta", delta, "threshold adjustment step")->capture_default_str();
  adapt->add_option("--margin", margin, "percentage points of slack above the target")
      ->capture_default_str();
  adapt->add_option("--group-size", group_size, "tasks per sampled group")
      ->capture_default_str();
  adapt->add_option("--groups", groups_per_round, "sampled groups per round")
      ->capture_default_str();
  adapt->add_option("--rounds", rounds, "adaptation rounds")->capture_default_str();
  add_workload_flags(adapt, wl);
  add_deployment_flags(adapt, dep);

  CLI11_PARSE(app, argc, argv);
  wl.dim = dep.dim;  // one feature dimension per deployment

  try {
    if (*run) {
      std::vector<dedup::ExperimentReport> reports;
      for (const auto& name : strategies) {
        dedup::DeploymentParams p = dep;
        p.strategy = dedup::parse_strategy(name);
        std::cerr << "running " << name << " x" << reps << " (" << p.servers
                  << " servers, " << wl.tasks << " tasks)...\n";
        dedup::ReplayOptions opts;
        opts.user_assisted = user_assisted;
        opts.senders = senders;
        reports.push_back(dedup::run_experiment(p, wl, reps, opts));
        const auto& r = reports.back();
        std::cerr << "  reuse " << r.percent_reuse << "%"
                  << (r.reuse_accuracy ? ", accuracy " + std::to_string(*r.reuse_accuracy) + "%"
                                       : std::string(", accuracy NA"))
                  << ", p99 " << r.overhead_p99_ms << " ms\n";
      }
      write_reports(out_path, reports);
    } else if (*add_fail) {
      dep.strategy = dedup::DistributionStrategy::ReuseAdaptive;
      const dedup::ScenarioResult result = dedup::failure_and_addition_scenario(dep, wl);
      std::ostream* log = &std::cout;
      std::ofstream log_file;
      if (!scen_log.empty()) {
        log_file.open(scen_log);
        log = &log_file;
      }
      for (const auto& e : result.events) {
        (*log) << e.at_s << "s\t" << e.kind << "\t" << e.detail << "\n";
      }
      (*log) << "partition_valid_throughout\t" << result.partition_valid_throughout << "\n"
             << "added_server_used_within_interval\t"
             << result.added_server_used_within_interval << "\n"
             << "failed_server_removed\t" << result.failed_server_removed << "\n"
             << "routed_to_failed_after_removal\t" << result.routed_to_failed_after_removal
             << "\n";
      write_reports(scen_out, {result.report});
      if (!result.partition_valid_throughout || !result.failed_server_removed ||
          result.routed_to_failed_after_removal != 0) {
        return 2;
      }
    } else if (*adapt) {
      const auto service = dedup::default_services(dep, {"svc0"}).front();
      const dedup::ThresholdAdaptation result = dedup::run_threshold_adaptation(
          wl, service, initial, target, delta, margin, group_size, groups_per_round,
          rounds);
      std::cout << "round,threshold\n";
      for (std::size_t i = 0; i < result.trajectory.size(); ++i) {
        std::cout << (i + 1) << ',' << result.trajectory[i] << "\n";
      }
      std::cout << "final threshold: " << result.final_threshold
                << " (last accuracy estimate " << result.final_accuracy_estimate << "%)\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
