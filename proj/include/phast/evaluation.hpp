// SPDX-License-Identifier: MIT
//
// Two-axis metric suite. Forecasting metrics score one-step and open-loop
// rollout predictions on the manifold the coordinates live on (wrapped
// angular error, Euclidean error, and their mixed mean); physics metrics
// score what the model claims about the system (damping recovery against
// the simulator law, discrete energy-budget residual, and passivity
// violations on rollouts). Every reported key comes from a documented
// registry so downstream tooling can rely on the names.

#pragma once

#include <Eigen/Dense>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "phast/environments.hpp"
#include "phast/hamiltonian.hpp"
#include "phast/observer.hpp"

namespace phast {

struct EvalConfig {
  int burn_in = 10;  // true-position context length K (at least 2)
  std::vector<int> horizons = {10, 50, 100};
  double passivity_eps = 1e-6;
  Canonicalizer canon = Canonicalizer::MassConsistent;
};

// Named scalar map. Keys are restricted to metric_key_registry(cfg);
// validate_report enforces that and is called by the producers.
struct MetricReport {
  std::map<std::string, double> values;
};

std::set<std::string> metric_key_registry(const EvalConfig& cfg);
void validate_report(const MetricReport& report, const EvalConfig& cfg);

// Manifold-aware squared error of a predicted position block against the
// matching truth rows. Per step, squared differences are summed within
// each coordinate family (angular differences wrapped to [-pi, pi) first),
// then averaged over steps. The mixed value is the arithmetic mean of the
// two family averages; when only one family exists it equals that family's
// value.
struct ManifoldMse {
  double theta = 0.0;  // wrapped angular part
  double x = 0.0;      // Euclidean part
  double mixed = 0.0;
  bool has_theta = false;
  bool has_x = false;
};
ManifoldMse manifold_mse(const Eigen::MatrixXd& pred,
                         const Eigen::MatrixXd& truth,
                         const std::vector<bool>& angular);

// Teacher-forced next-position error over a split: keys theta_wrap_mse,
// mse, mixed_mse (families the environment lacks are omitted), plus
// n_trajectories.
MetricReport one_step_metrics(const HamiltonianModel& m,
                              const std::vector<Trajectory>& split);

// The same forecasting keys for the persistence predictor (next position =
// current position one-step; frozen last context row on rollouts). The
// reference floor every learned model is compared against.
MetricReport persistence_metrics(const EnvSpec& env,
                                 const std::vector<Trajectory>& split,
                                 const EvalConfig& cfg);

// Full rollout protocol: condition on the first K true positions of each
// test trajectory, roll out autoregressively to max(horizons), score the
// forecasting keys at every horizon, and add takeover-mode rollouts as a
// separate diagnostic key family. Physics keys (energy-budget residual and
// passivity violations under the simulator energy, plus damping recovery)
// are attached for environments with a diagonal viscous law; the
// ecological benchmark carries no such certificate and reports forecasting
// keys only.
MetricReport rollout_eval(const HamiltonianModel& m, const ObserverNet* net,
                          const EnvSpec& env,
                          const std::vector<Trajectory>& split,
                          const EvalConfig& cfg);

// Damping recovery against the simulator law over every configuration in
// the split: R^2 = 1 - SS_res / (SS_tot + 1e-12) and mean absolute error.
// The first form compares per-DOF diagonals; the _trace form compares the
// per-configuration mean diagonal (scalar) instead.
std::pair<double, double> damping_recovery(const HamiltonianModel& m,
                                           const EnvSpec& env,
                                           const std::vector<Trajectory>& split);
std::pair<double, double> damping_recovery_trace(
    const HamiltonianModel& m, const EnvSpec& env,
    const std::vector<Trajectory>& split);

// Discrete energy diagnostics on a position sequence (R >= 3 rows; inside
// rollout_eval the sequence is two true context rows followed by the
// predicted rollout, giving exactly H increments at horizon H). Velocities
// come from wrapped finite differences, v_h = wrap(q_{h+1} - q_h) / dt;
// energies are the simulator's, H_env(q_{h+1}, M_env(q_{h+1}) v_h). The
// residual at step h is (H_{h+1} - H_h) / dt + v_h' diag(d_env(q_h)) v_h
// and the return value is the mean of |residual| over the R - 2
// increments. passivity_violation_fraction counts the fraction of those
// increments with H_{h+1} - H_h > eps. Both reject the ecological
// benchmark, whose invariant is not a dissipative energy.
double energy_budget_residual(const EnvSpec& env, const Eigen::MatrixXd& q_rows,
                              double dt);
double passivity_violation_fraction(const EnvSpec& env,
                                    const Eigen::MatrixXd& q_rows, double dt,
                                    double eps = 1e-6);

// Mean and population standard deviation per key over per-seed reports.
// Every report must carry the same key set.
struct AggregateReport {
  int n_seeds = 0;
  std::map<std::string, std::pair<double, double>> stats;  // key -> (mean, std)
};
AggregateReport aggregate_reports(const std::vector<MetricReport>& per_seed);

}  // namespace phast
