#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "srsm/certificate.hpp"
#include "srsm/synthesis.hpp"
#include "srsm/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitUnknown = 2;       // timeout / gave up
constexpr int kExitNotCertified = 3;  // verification completed with a negative answer

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in);
}

struct CommonFlags {
  std::string env = "lds2d";
  std::string env_spec_path;
  std::string config_path;
  double tau = 0.0007;
  std::uint64_t seed = 0;
  double timeout_s = 14400.0;
  int workers = 0;
  std::string out_dir = "srsm_out";
  bool use_lprime = false;
  std::string bound_mode = "mass";
  int cells_per_dim = 16;
  int max_iterations = 12;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--env", flags.env, "environment id (lds2d, pendulum)");
  cmd->add_option("--env-spec", flags.env_spec_path, "JSON spec of a custom affine system");
  cmd->add_option("--config", flags.config_path, "JSON run configuration (flags override it)");
  cmd->add_option("--tau", flags.tau, "verification grid mesh");
  cmd->add_option("--seed", flags.seed, "master random seed");
  cmd->add_option("--timeout", flags.timeout_s, "wall-clock budget in seconds");
  cmd->add_option("--workers", flags.workers,
                  "worker thread count (default: SRSM_WORKERS or all cores)");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_flag("--use-lprime-cond2", flags.use_lprime, "train with the K*tau decrease margin");
  cmd->add_option("--bound-mode", flags.bound_mode, "expectation bound: mass or maxvol")
      ->check(CLI::IsMember({"mass", "mass_weighted", "maxvol"}));
  cmd->add_option("--cells-per-dim", flags.cells_per_dim, "noise partition cells per dimension");
  cmd->add_option("--max-iterations", flags.max_iterations, "learner-verifier iteration cap");
}

srsm::RunConfig build_config(const CommonFlags& flags, const CLI::App& cmd) {
  srsm::RunConfig cfg;
  if (!flags.config_path.empty()) cfg = srsm::RunConfig::from_json(load_json(flags.config_path));
  auto given = [&](const std::string& name) { return cmd.count(name) > 0; };
  const bool no_file = flags.config_path.empty();
  if (given("--env") || no_file) cfg.env_id = flags.env;
  if (given("--env-spec")) cfg.env_spec = load_json(flags.env_spec_path);
  if (given("--tau") || no_file) cfg.tau = flags.tau;
  if (given("--seed") || no_file) cfg.seed = flags.seed;
  if (given("--timeout") || no_file) cfg.timeout_s = flags.timeout_s;
  if (given("--out") || no_file) cfg.out_dir = flags.out_dir;
  if (given("--use-lprime-cond2")) cfg.train.use_lprime_cond2 = true;
  if (given("--bound-mode") || no_file) {
    cfg.mode = srsm::bound_mode_from_name(flags.bound_mode == "mass" ? "mass_weighted"
                                                                     : flags.bound_mode);
  }
  if (given("--cells-per-dim") || no_file) cfg.cells_per_dim = flags.cells_per_dim;
  if (given("--max-iterations") || no_file) cfg.max_iterations = flags.max_iterations;
  if (given("--workers")) {
    cfg.workers = flags.workers;
  } else if (const char* env_workers = std::getenv("SRSM_WORKERS")) {
    cfg.workers = std::atoi(env_workers);
  }
  return cfg;
}

void write_report(const srsm::RunConfig& cfg, const srsm::SynthesisResult& result) {
  nlohmann::json j = {{"status", result.status == srsm::SynthesisStatus::certified ? "certified"
                                                                                   : "unknown"},
                      {"iterations", result.iterations},
                      {"elapsed_s", result.elapsed_s},
                      {"final_tau", result.final_tau},
                      {"certificate", result.certificate_path}};
  std::ofstream out(cfg.out_dir + "/report.json");
  out << j.dump(2) << "\n";
}

// Certificates are rechecked before any quantity derived from them is used.
srsm::Certificate load_and_recheck(const std::string& path, int workers) {
  srsm::Certificate cert = srsm::Certificate::from_json(load_json(path));
  auto sys = cert.make_env();
  if (!srsm::recheck(cert, *sys, workers)) {
    throw std::runtime_error("certificate failed recheck: " + path);
  }
  return cert;
}

Eigen::VectorXd parse_point(const std::string& text, int dim) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  if (text.empty()) return x;
  std::stringstream ss(text);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',') && i < dim) x(i++) = std::stod(part);
  if (i != dim) throw std::runtime_error("point needs " + std::to_string(dim) + " coordinates");
  return x;
}

int cmd_synthesize(const CommonFlags& flags, const CLI::App& cmd) {
  const srsm::RunConfig cfg = build_config(flags, cmd);
  const srsm::SynthesisResult result = srsm::synthesize(cfg);
  write_report(cfg, result);
  if (result.status == srsm::SynthesisStatus::certified) {
    std::cout << "certified after " << result.iterations << " iterations (" << result.elapsed_s
              << " s); certificate: " << result.certificate_path << "\n";
    if (result.certificate.has_value()) {
      std::cout << "p = " << result.certificate->p
                << ", epsilon = " << result.certificate->epsilon
                << ", delta = " << result.certificate->delta << "\n";
    }
    return kExitOk;
  }
  std::cout << "unknown (not certified within budget after " << result.iterations
            << " iterations, " << result.elapsed_s << " s)\n";
  return kExitUnknown;
}

int cmd_verify(const CommonFlags& flags, const CLI::App& cmd, const std::string& policy_path) {
  const srsm::RunConfig cfg = build_config(flags, cmd);
  const nlohmann::json j = load_json(policy_path);
  srsm::PolicyHandle policy = srsm::PolicyHandle::from_mlp(
      srsm::Mlp::from_json(j.contains("policy") ? j.at("policy") : j));
  std::optional<srsm::Mlp> initial_v;
  if (j.contains("V")) initial_v = srsm::Mlp::from_json(j.at("V"));
  const srsm::SynthesisResult result = srsm::verify_fixed_policy(cfg, policy, initial_v);
  write_report(cfg, result);
  if (result.status == srsm::SynthesisStatus::certified) {
    std::cout << "certified; certificate: " << result.certificate_path << "\n";
    return kExitOk;
  }
  std::cout << "not certified within budget\n";
  return kExitNotCertified;
}

int cmd_bounds(const std::string& cert_path, const std::string& x0_text, int workers) {
  const srsm::Certificate cert = load_and_recheck(cert_path, workers);
  auto sys = cert.make_env();
  const Eigen::VectorXd x0 = parse_point(x0_text, sys->state_dim());
  std::cout << std::setprecision(12);
  std::cout << "V(x0) = " << cert.v.forward(x0)(0) << "\n";
  std::cout << "expected_out_bound = " << srsm::expected_out_bound(cert, x0) << "\n";
  for (double t : {10.0, 100.0, 1000.0}) {
    std::cout << "P[Out >= " << t << "] <= " << srsm::tail_out_bound(cert, x0, t) << "\n";
  }
  return kExitOk;
}

int cmd_simulate(const std::string& cert_path, const std::string& x0_text, std::int64_t n,
                 std::int64_t horizon, std::uint64_t seed, int workers) {
  const srsm::Certificate cert = load_and_recheck(cert_path, workers);
  auto sys = cert.make_env();
  if (n == 0) {
    std::cout << "no trajectories requested\n";
    return kExitOk;
  }
  const Eigen::VectorXd x0 = parse_point(x0_text, sys->state_dim());
  const srsm::SimulationReport report = srsm::simulate(
      srsm::PolicyHandle::from_mlp(cert.policy), *sys, x0, n, horizon, seed, workers);
  std::cout << std::setprecision(12);
  std::cout << "trajectories = " << n << ", horizon = " << horizon << "\n";
  std::cout << "mean_out (truncated) = " << report.mean_out() << "\n";
  std::cout << "tail_stabilization_fraction = " << report.tail_fraction << "\n";
  std::cout << "still_outside_at_horizon = " << report.still_outside_at_horizon
            << " (their true Out exceeds the truncated count)\n";
  std::cout << "expected_out_bound(x0) = " << srsm::expected_out_bound(cert, x0) << "\n";
  return kExitOk;
}

int cmd_export(const std::string& cert_path, int resolution, const std::string& out_dir,
               int workers) {
  const srsm::Certificate cert = load_and_recheck(cert_path, workers);
  auto sys = cert.make_env();
  std::filesystem::create_directories(out_dir);
  srsm::contour_export(cert, *sys, resolution, out_dir + "/contours.csv");
  srsm::stabilizing_mask_export(cert, *sys, resolution, out_dir + "/stabilizing_mask.csv");
  const srsm::Grid grid = srsm::Grid::build(sys->state_space(), cert.tau);
  grid.export_values_csv(
      out_dir + "/value_grid.csv",
      [&](const Eigen::VectorXd& x) { return cert.v.forward(x)(0); },
      std::max<std::int64_t>(grid.counts()[0] / resolution, 1));
  std::cout << "wrote contours.csv, stabilizing_mask.csv, value_grid.csv to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural stabilizing-certificate synthesis and verification"};
  app.set_version_flag("--version", srsm::kToolkitVersion);
  app.require_subcommand(1);

  CommonFlags flags;

  auto* synth = app.add_subcommand("synthesize", "learn a policy and a stability certificate");
  add_common(synth, flags);

  auto* verify_cmd = app.add_subcommand("verify", "learn a certificate for a fixed policy");
  add_common(verify_cmd, flags);
  std::string policy_path;
  verify_cmd->add_option("--policy", policy_path, "policy network JSON (or a certificate)")
      ->required();

  std::string cert_path, x0_text;
  std::int64_t n_traj = 1000, horizon = 1000;
  std::uint64_t sim_seed = 0;
  int workers_flag = 0;
  int resolution = 200;
  std::string export_dir = "srsm_export";

  auto* bounds = app.add_subcommand("bounds", "stabilization-time bounds at a state");
  bounds->add_option("--cert", cert_path, "certificate JSON")->required();
  bounds->add_option("--x0", x0_text, "comma-separated state (default: origin)");
  bounds->add_option("--workers", workers_flag, "worker thread count");

  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo rollouts of a certificate");
  simulate_cmd->add_option("--cert", cert_path, "certificate JSON")->required();
  simulate_cmd->add_option("--x0", x0_text, "comma-separated start state (default: origin)");
  simulate_cmd->add_option("--n", n_traj, "number of trajectories");
  simulate_cmd->add_option("--horizon", horizon, "steps per trajectory");
  simulate_cmd->add_option("--seed", sim_seed, "simulation seed");
  simulate_cmd->add_option("--workers", workers_flag, "worker thread count");

  auto* export_cmd = app.add_subcommand("export", "CSV exports for plotting");
  export_cmd->add_option("--cert", cert_path, "certificate JSON")->required();
  export_cmd->add_option("--resolution", resolution, "lattice resolution per dimension")
      ->check(CLI::Range(2, 4000));
  export_cmd->add_option("--out", export_dir, "output directory");
  export_cmd->add_option("--workers", workers_flag, "worker thread count");

  CLI11_PARSE(app, argc, argv);

  if (workers_flag == 0) {
    if (const char* env_workers = std::getenv("SRSM_WORKERS")) {
      workers_flag = std::atoi(env_workers);
    }
  }
  if (workers_flag <= 0) workers_flag = srsm::default_worker_count();

  try {
    if (synth->parsed()) return cmd_synthesize(flags, *synth);
    if (verify_cmd->parsed()) return cmd_verify(flags, *verify_cmd, policy_path);
    if (bounds->parsed()) return cmd_bounds(cert_path, x0_text, workers_flag);
    if (simulate_cmd->parsed()) {
      return cmd_simulate(cert_path, x0_text, n_traj, horizon, sim_seed, workers_flag);
    }
    if (export_cmd->parsed()) return cmd_export(cert_path, resolution, export_dir, workers_flag);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
