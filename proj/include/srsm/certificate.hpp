#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include "srsm/grid.hpp"
#include "srsm/mlp.hpp"
#include "srsm/parallel.hpp"
#include "srsm/policy.hpp"
#include "srsm/rng.hpp"
#include "srsm/system.hpp"
#include "srsm/verifier.hpp"
#include "srsm/version.hpp"

namespace srsm {

/// Upper bound on the probability of leaving X_s after entering the sublevel
/// set {V <= M}: p = (M + L_V Delta) / (M + L_V Delta + delta), strictly in
/// (0, 1) for positive arguments.
inline double escape_probability(double m_level, double l_v, double delta_step,
                                 double delta_margin) {
  if (!(m_level > 0) || !(l_v > 0) || !(delta_step > 0) || !(delta_margin > 0)) {
    throw std::invalid_argument("escape_probability: all arguments must be positive");
  }
  const double level = m_level + l_v * delta_step;
  return level / (level + delta_margin);
}

/// Sound upper bound on sup_{x in X_s} V(x): max interval upper bound over
/// grid cells that meet X_s (cells buried inside one excluded box are
/// skipped; over-including boundary cells only raises the bound).
inline double gamma_sup(const Mlp& v, const SystemModel& sys, const Grid& grid, int workers = 1) {
  const NetBoundEvaluator eval(v);
  const auto num_chunks = static_cast<std::size_t>((grid.num_cells() + 8191) / 8192);
  std::vector<double> chunk_max(num_chunks, -std::numeric_limits<double>::infinity());
  parallel_for_chunks(grid.num_cells(), 8192, workers, [&](std::int64_t begin, std::int64_t end) {
    std::vector<std::int64_t> ids(static_cast<std::size_t>(end - begin));
    for (std::int64_t i = begin; i < end; ++i) ids[static_cast<std::size_t>(i - begin)] = i;
    BoxBatch boxes;
    grid.fill_cell_boxes(ids.data(), static_cast<Eigen::Index>(ids.size()), boxes);
    const BoxBatch out = eval.bounds(boxes);
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < out.size(); ++c) {
      bool excluded = false;
      const Box cell = boxes.box(c);
      for (const Box& region : sys.excluded_regions()) {
        if (box_subset(cell, region)) {
          excluded = true;
          break;
        }
      }
      if (!excluded) best = std::max(best, out.hi(0, c));
    }
    chunk_max[static_cast<std::size_t>(begin / 8192)] = best;
  });
  double gamma = -std::numeric_limits<double>::infinity();
  for (double g : chunk_max) gamma = std::max(gamma, g);
  return gamma;
}

struct Certificate {
  std::string env_id;
  nlohmann::json env_spec;  // full system spec for custom environments
  Mlp policy;
  Mlp v;
  double m_level = 1.0;
  double tau = 0.0;
  double l_v = 0.0, l_pi = 0.0, l_f = 0.0, k = 0.0;
  double delta_theta = 0.0;
  double epsilon = 0.0, delta = 0.0;
  double p = 0.0;
  double gamma = 0.0;
  int cells_per_dim = 16;
  BoundMode mode = BoundMode::mass_weighted;
  int delta_noise_cells = 8;
  std::string config_hash;
  std::string toolkit_version = kToolkitVersion;

  nlohmann::json to_json() const {
    return {{"env", env_id},
            {"env_spec", env_spec},
            {"policy", policy.to_json()},
            {"V", v.to_json()},
            {"M", m_level},
            {"tau", tau},
            {"L_V", l_v},
            {"L_pi", l_pi},
            {"L_f", l_f},
            {"K", k},
            {"Delta_theta", delta_theta},
            {"epsilon", epsilon},
            {"delta", delta},
            {"p", p},
            {"Gamma", gamma},
            {"noise_partition", {{"cells_per_dim", cells_per_dim},
                                 {"delta_noise_cells", delta_noise_cells}}},
            {"mode", bound_mode_name(mode)},
            {"config_hash", config_hash},
            {"toolkit_version", toolkit_version}};
  }

  static Certificate from_json(const nlohmann::json& j) {
    Certificate c;
    c.env_id = j.at("env").get<std::string>();
    c.env_spec = j.value("env_spec", nlohmann::json());
    c.policy = Mlp::from_json(j.at("policy"));
    c.v = Mlp::from_json(j.at("V"));
    c.m_level = j.at("M").get<double>();
    c.tau = j.at("tau").get<double>();
    c.l_v = j.at("L_V").get<double>();
    c.l_pi = j.at("L_pi").get<double>();
    c.l_f = j.at("L_f").get<double>();
    c.k = j.at("K").get<double>();
    c.delta_theta = j.at("Delta_theta").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.delta = j.at("delta").get<double>();
    c.p = j.at("p").get<double>();
    c.gamma = j.at("Gamma").get<double>();
    c.cells_per_dim = j.at("noise_partition").at("cells_per_dim").get<int>();
    c.delta_noise_cells = j.at("noise_partition").value("delta_noise_cells", 8);
    c.mode = bound_mode_from_name(j.at("mode").get<std::string>());
    c.config_hash = j.value("config_hash", "");
    c.toolkit_version = j.value("toolkit_version", "");
    if (!(c.epsilon > 0) || !(c.delta > 0) || !(c.p > 0) || !(c.p < 1)) {
      throw std::invalid_argument("certificate: margins out of range");
    }
    return c;
  }

  std::shared_ptr<SystemModel> make_env() const {
    if (!env_spec.is_null() && env_spec.is_object()) return system_from_spec(env_spec);
    return make_system(env_id);
  }
};

/// Theorem-2 item 1: E[Out] <= V(x0)/eps + (M + L_V D)(Gamma + L_V D)/(delta eps).
inline double expected_out_bound(const Certificate& cert, const Eigen::VectorXd& x0) {
  const double vx = cert.v.forward(x0)(0);
  const double level = cert.m_level + cert.l_v * cert.delta_theta;
  return vx / cert.epsilon +
         level * (cert.gamma + cert.l_v * cert.delta_theta) / (cert.delta * cert.epsilon);
}

/// Theorem-2 item 2 via Markov: P[Out >= t] <= min(1, E-bound / t).
inline double tail_out_bound(const Certificate& cert, const Eigen::VectorXd& x0, double t) {
  if (!(t >= 1.0)) throw std::invalid_argument("tail_out_bound: t >= 1 required");
  return std::min(1.0, expected_out_bound(cert, x0) / t);
}

struct SimulationReport {
  std::vector<std::int64_t> out_counts;  // steps outside X_s, per trajectory
  double tail_fraction = 0.0;  // trajectories whose last 10% of steps are in X_s
  std::int64_t still_outside_at_horizon = 0;  // their true Out exceeds the count
  double mean_out() const {
    if (out_counts.empty()) return 0.0;
    double s = 0.0;
    for (auto c : out_counts) s += static_cast<double>(c);
    return s / static_cast<double>(out_counts.size());
  }
};

/// Independent-noise rollouts from a fixed start; per-trajectory RNG streams
/// keep the result identical for any worker count. Out counts are truncated
/// at the horizon and trajectories still outside X_s at the end are flagged.
inline SimulationReport simulate(const PolicyHandle& policy, const SystemModel& sys,
                                 const Eigen::VectorXd& x0, std::int64_t n_traj,
                                 std::int64_t horizon, std::uint64_t seed, int workers = 1) {
  if (horizon < 1 && n_traj > 0) throw std::invalid_argument("simulate: horizon >= 1 required");
  SimulationReport report;
  report.out_counts.assign(static_cast<std::size_t>(n_traj), 0);
  if (n_traj == 0) return report;
  std::vector<char> tail_ok(static_cast<std::size_t>(n_traj), 0);
  std::vector<char> outside_at_end(static_cast<std::size_t>(n_traj), 0);
  const auto tail_start = static_cast<std::int64_t>(std::ceil(horizon * 0.9));

  parallel_for_chunks(n_traj, 64, workers, [&](std::int64_t begin, std::int64_t end) {
    const auto count = static_cast<Eigen::Index>(end - begin);
    Eigen::MatrixXd states(sys.state_dim(), count);
    std::vector<std::mt19937_64> streams;
    streams.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) {
      states.col(i) = x0;
      streams.push_back(make_rng(seed, kStreamSimulate, static_cast<std::uint64_t>(begin + i)));
    }
    std::vector<char> tail_all_in(static_cast<std::size_t>(count), 1);
    for (std::int64_t t = 0; t < horizon; ++t) {
      const Eigen::MatrixXd actions = policy.evaluate(states);
      for (Eigen::Index i = 0; i < count; ++i) {
        states.col(i) = sys.step(states.col(i), actions.col(i),
                                 sys.noise().sample(streams[static_cast<std::size_t>(i)]));
        const bool in_xs = sys.membership(states.col(i)).in_xs;
        if (!in_xs) {
          ++report.out_counts[static_cast<std::size_t>(begin + i)];
          if (t >= tail_start) tail_all_in[static_cast<std::size_t>(i)] = 0;
          if (t == horizon - 1) outside_at_end[static_cast<std::size_t>(begin + i)] = 1;
        }
      }
    }
    for (Eigen::Index i = 0; i < count; ++i) {
      tail_ok[static_cast<std::size_t>(begin + i)] = tail_all_in[static_cast<std::size_t>(i)];
    }
  });

  std::int64_t ok = 0;
  for (char c : tail_ok) ok += c;
  for (char c : outside_at_end) report.still_outside_at_horizon += c;
  report.tail_fraction = static_cast<double>(ok) / static_cast<double>(n_traj);
  return report;
}

/// Independent trust path: rebuild the grid from the stored mesh, recompute
/// the Lipschitz constants from the serialized weights, rerun verification,
/// and accept only if it certifies with margins at least as large as stored
/// (up to 1e-12) and the derived quantities match their formulas.
inline bool recheck(const Certificate& cert, const SystemModel& sys, int workers = 1,
                    VerifyOutcome* outcome_out = nullptr) {
  const Grid grid = Grid::build(sys.state_space(), cert.tau);
  VerifierConfig vcfg;
  vcfg.m_level = cert.m_level;
  vcfg.cells_per_dim = cert.cells_per_dim;
  vcfg.mode = cert.mode;
  vcfg.delta_noise_cells = cert.delta_noise_cells;
  vcfg.workers = workers;
  const VerifyOutcome out = verify(cert.v, PolicyHandle::from_mlp(cert.policy), sys, grid, vcfg);
  if (outcome_out != nullptr) *outcome_out = out;
  if (out.status != VerifyStatus::certified) return false;
  if (out.epsilon < cert.epsilon - 1e-12 || out.delta < cert.delta - 1e-12) return false;
  const double k = compose_K(out.l_v, sys.lipschitz_f(), out.l_pi);
  if (std::abs(k - cert.k) > 1e-9 * std::max(1.0, std::abs(cert.k))) return false;
  const double p = escape_probability(cert.m_level, out.l_v, out.delta_theta, out.delta);
  if (cert.p <= 0.0 || cert.p >= 1.0) return false;
  // Stored p must be reproducible from the freshly computed quantities up to
  // the stored-vs-recomputed margin differences.
  const double p_from_stored = escape_probability(cert.m_level, cert.l_v, cert.delta_theta,
                                                  cert.delta);
  if (std::abs(cert.p - p_from_stored) > 1e-9) return false;
  (void)p;
  return true;
}

/// (x1, x2, V, expected-out bound) over a uniform lattice, for contour plots.
inline void contour_export(const Certificate& cert, const SystemModel& sys, int resolution,
                           const std::string& path) {
  if (resolution < 2) throw std::invalid_argument("contour_export: resolution >= 2");
  if (sys.state_dim() != 2) {
    throw std::invalid_argument("contour_export: only 2-D state spaces supported");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << std::setprecision(17);
  out << "x1,x2,V,expected_out_bound\n";
  const Box& bounds = sys.state_space();
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      Eigen::VectorXd x(2);
      x << bounds[0].lo + bounds[0].width() * i / (resolution - 1),
          bounds[1].lo + bounds[1].width() * j / (resolution - 1);
      out << x(0) << "," << x(1) << "," << cert.v.forward(x)(0) << ","
          << expected_out_bound(cert, x) << "\n";
    }
  }
}

/// Cells whose V upper bound stays at or below M: the invariant sublevel
/// region implied by the certificate, written as (center..., flag) rows.
inline void stabilizing_mask_export(const Certificate& cert, const SystemModel& sys,
                                    int resolution, const std::string& path) {
  if (resolution < 2) throw std::invalid_argument("mask export: resolution >= 2");
  if (sys.state_dim() != 2) throw std::invalid_argument("mask export: 2-D only");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << std::setprecision(17);
  out << "x1,x2,in_sublevel\n";
  const Box& bounds = sys.state_space();
  const NetBoundEvaluator eval(cert.v);
  const double hx = bounds[0].width() / resolution;
  const double hy = bounds[1].width() / resolution;
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      Box cell{{bounds[0].lo + hx * i, bounds[0].lo + hx * (i + 1)},
               {bounds[1].lo + hy * j, bounds[1].lo + hy * (j + 1)}};
      BoxBatch batch(2, 1);
      batch.set(0, cell);
      const double hi = eval.bounds(batch).hi(0, 0);
      out << cell[0].mid() << "," << cell[1].mid() << "," << (hi <= cert.m_level ? 1 : 0)
          << "\n";
    }
  }
}

/// FNV-1a over the canonical configuration dump; stored in the certificate.
inline std::string config_fingerprint(const nlohmann::json& config) {
  const std::string text = config.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace srsm
