// SPDX-License-Identifier: MIT

#include "phast/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "phast/errors.hpp"
#include "phast/integrators.hpp"
#include "phast/scalar_ops.hpp"
#include "phast/structured_linalg.hpp"

namespace phast {

namespace {

void check_eval_config(const EvalConfig& cfg) {
  if (cfg.burn_in < 2)
    throw ContractViolation("EvalConfig: burn_in must be at least 2");
  if (cfg.horizons.empty())
    throw ContractViolation("EvalConfig: no horizons");
  for (int h : cfg.horizons)
    if (h < 1) throw ContractViolation("EvalConfig: horizons must be positive");
  if (cfg.passivity_eps < 0.0)
    throw ContractViolation("EvalConfig: passivity_eps must be nonnegative");
}

bool has_angular(const std::vector<bool>& mask) {
  return std::find(mask.begin(), mask.end(), true) != mask.end();
}
bool has_euclid(const std::vector<bool>& mask) {
  return std::find(mask.begin(), mask.end(), false) != mask.end();
}

void put_family(MetricReport& r, const std::string& theta_key,
                const std::string& x_key, const std::string& mixed_key,
                const ManifoldMse& m) {
  if (m.has_theta) r.values[theta_key] = m.theta;
  if (m.has_x) r.values[x_key] = m.x;
  r.values[mixed_key] = m.mixed;
}

// Simulator energy series of a position sequence: wrapped finite-difference
// velocities mapped through the true mass, H_env(q_{h+1}, p_h) for
// h = 0 .. R-2.
Eigen::VectorXd fd_energy_series(const EnvSpec& env,
                                 const Eigen::MatrixXd& q_rows, double dt) {
  if (env.law == DampingLaw::Ecological)
    throw ContractViolation(
        "energy diagnostics: the ecological benchmark has no dissipative "
        "energy certificate");
  if (q_rows.rows() < 3)
    throw ContractViolation("energy diagnostics: need at least 3 rows");
  if (q_rows.cols() != env.n)
    throw ContractViolation("energy diagnostics: state width mismatch");
  if (dt <= 0.0)
    throw ContractViolation("energy diagnostics: dt must be positive");
  const int R = static_cast<int>(q_rows.rows());
  const MassModel mass = truth_mass(env);
  Eigen::VectorXd energies(R - 1);
  for (int h = 0; h + 1 < R; ++h) {
    Eigen::VectorXd v(env.n);
    for (int j = 0; j < env.n; ++j) {
      const double d = q_rows(h + 1, j) - q_rows(h, j);
      v(j) = (env.angular[static_cast<size_t>(j)] ? wrap_angle(d) : d) / dt;
    }
    const Eigen::VectorXd q_next = q_rows.row(h + 1).transpose();
    energies(h) = env_energy(env, q_next, mass_apply(mass, q_next, v));
  }
  return energies;
}

}  // namespace

std::set<std::string> metric_key_registry(const EvalConfig& cfg) {
  check_eval_config(cfg);
  std::set<std::string> keys = {"theta_wrap_mse", "mse",         "mixed_mse",
                                "damping_r2",     "damping_mae", "damping_r2_trace",
                                "damping_mae_trace", "n_trajectories", "burn_in"};
  for (int h : cfg.horizons) {
    const std::string suffix = "_h" + std::to_string(h);
    for (const std::string& family :
         {std::string("theta_wrap_mse"), std::string("mse"),
          std::string("mixed_mse")}) {
      keys.insert("rollout_" + family + suffix);
      keys.insert("rollout_takeover_" + family + suffix);
    }
    keys.insert("rollout_energy_budget_resid" + suffix);
    keys.insert("rollout_passivity_violations" + suffix);
  }
  return keys;
}

void validate_report(const MetricReport& report, const EvalConfig& cfg) {
  const std::set<std::string> registry = metric_key_registry(cfg);
  for (const auto& [key, value] : report.values) {
    if (!registry.count(key))
      throw ContractViolation("MetricReport: unregistered key '" + key + "'");
    (void)value;
  }
}

ManifoldMse manifold_mse(const Eigen::MatrixXd& pred,
                         const Eigen::MatrixXd& truth,
                         const std::vector<bool>& angular) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw ContractViolation("manifold_mse: shape mismatch");
  if (pred.rows() == 0) throw ContractViolation("manifold_mse: empty block");
  if (static_cast<Eigen::Index>(angular.size()) != pred.cols())
    throw ContractViolation("manifold_mse: mask width mismatch");

  ManifoldMse out;
  out.has_theta = has_angular(angular);
  out.has_x = has_euclid(angular);
  const int S = static_cast<int>(pred.rows());
  for (int t = 0; t < S; ++t) {
    for (int j = 0; j < pred.cols(); ++j) {
      const double d = pred(t, j) - truth(t, j);
      if (angular[static_cast<size_t>(j)]) {
        const double w = wrap_angle(d);
        out.theta += w * w;
      } else {
        out.x += d * d;
      }
    }
  }
  out.theta /= S;
  out.x /= S;
  if (out.has_theta && out.has_x)
    out.mixed = 0.5 * (out.theta + out.x);
  else
    out.mixed = out.has_theta ? out.theta : out.x;
  return out;
}

MetricReport one_step_metrics(const HamiltonianModel& m,
                              const std::vector<Trajectory>& split) {
  if (split.empty()) throw ContractViolation("one_step_metrics: empty split");
  const StepConfig cfg = model_step_config(m);
  ManifoldMse mean;
  for (const Trajectory& tr : split) {
    const int T = static_cast<int>(tr.q.rows());
    if (tr.q.cols() != m.n)
      throw ContractViolation("one_step_metrics: state width mismatch");
    if (T < 2)
      throw ContractViolation("one_step_metrics: need at least 2 samples");
    Eigen::MatrixXd pred(T - 1, m.n);
    for (int t = 0; t + 1 < T; ++t)
      pred.row(t) = compose_substeps(m, tr.q.row(t).transpose(),
                                     tr.p.row(t).transpose(), cfg, t)
                        .first.transpose();
    const ManifoldMse one =
        manifold_mse(pred, tr.q.bottomRows(T - 1), m.angular);
    mean.theta += one.theta;
    mean.x += one.x;
    mean.mixed += one.mixed;
    mean.has_theta = one.has_theta;
    mean.has_x = one.has_x;
  }
  const double B = static_cast<double>(split.size());
  mean.theta /= B;
  mean.x /= B;
  mean.mixed /= B;

  MetricReport report;
  put_family(report, "theta_wrap_mse", "mse", "mixed_mse", mean);
  report.values["n_trajectories"] = B;
  return report;
}

MetricReport persistence_metrics(const EnvSpec& env,
                                 const std::vector<Trajectory>& split,
                                 const EvalConfig& cfg) {
  check_eval_config(cfg);
  if (split.empty()) throw ContractViolation("persistence_metrics: empty split");
  const int K = cfg.burn_in;
  const int h_max = *std::max_element(cfg.horizons.begin(), cfg.horizons.end());

  ManifoldMse one_mean;
  std::map<int, ManifoldMse> roll_mean;
  for (const Trajectory& tr : split) {
    const int T = static_cast<int>(tr.q.rows());
    if (tr.q.cols() != env.n)
      throw ContractViolation("persistence_metrics: state width mismatch");
    if (T < K + h_max)
      throw ContractViolation(
          "persistence_metrics: trajectory shorter than burn-in plus horizon");
    // Next position = current position.
    const ManifoldMse one = manifold_mse(
        tr.q.topRows(T - 1), tr.q.bottomRows(T - 1), env.angular);
    one_mean.theta += one.theta;
    one_mean.x += one.x;
    one_mean.mixed += one.mixed;
    one_mean.has_theta = one.has_theta;
    one_mean.has_x = one.has_x;
    // Rollout: the last context row, frozen.
    for (int h : cfg.horizons) {
      const Eigen::MatrixXd pred =
          tr.q.row(K - 1).replicate(h, 1);
      const ManifoldMse r =
          manifold_mse(pred, tr.q.middleRows(K, h), env.angular);
      roll_mean[h].theta += r.theta;
      roll_mean[h].x += r.x;
      roll_mean[h].mixed += r.mixed;
      roll_mean[h].has_theta = r.has_theta;
      roll_mean[h].has_x = r.has_x;
    }
  }
  const double B = static_cast<double>(split.size());

  MetricReport report;
  one_mean.theta /= B;
  one_mean.x /= B;
  one_mean.mixed /= B;
  put_family(report, "theta_wrap_mse", "mse", "mixed_mse", one_mean);
  for (int h : cfg.horizons) {
    ManifoldMse& r = roll_mean[h];
    r.theta /= B;
    r.x /= B;
    r.mixed /= B;
    const std::string suffix = "_h" + std::to_string(h);
    put_family(report, "rollout_theta_wrap_mse" + suffix, "rollout_mse" + suffix,
               "rollout_mixed_mse" + suffix, r);
  }
  report.values["n_trajectories"] = B;
  report.values["burn_in"] = K;
  validate_report(report, cfg);
  return report;
}

MetricReport rollout_eval(const HamiltonianModel& m, const ObserverNet* net,
                          const EnvSpec& env,
                          const std::vector<Trajectory>& split,
                          const EvalConfig& cfg) {
  check_eval_config(cfg);
  if (split.empty()) throw ContractViolation("rollout_eval: empty split");
  if (m.n != env.n)
    throw ContractViolation("rollout_eval: model and environment disagree on n");
  const int K = cfg.burn_in;
  const int h_max = *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
  const bool physics = env.law != DampingLaw::Ecological;

  std::map<int, ManifoldMse> ar_mean, tk_mean;
  std::map<int, double> resid_mean, viol_mean;
  for (const Trajectory& tr : split) {
    const int T = static_cast<int>(tr.q.rows());
    if (T < K + h_max)
      throw ContractViolation(
          "rollout_eval: trajectory shorter than burn-in plus horizon");
    const Eigen::MatrixXd ctx = tr.q.topRows(K);
    const Eigen::MatrixXd ar =
        rollout_autoregressive(m, net, ctx, tr.dt, h_max, cfg.canon);
    const Eigen::MatrixXd tk =
        rollout_takeover(m, net, ctx, tr.dt, h_max, cfg.canon);
    for (int h : cfg.horizons) {
      const Eigen::MatrixXd truth = tr.q.middleRows(K, h);
      const ManifoldMse a = manifold_mse(ar.topRows(h), truth, env.angular);
      const ManifoldMse t = manifold_mse(tk.topRows(h), truth, env.angular);
      auto accumulate = [](ManifoldMse& dst, const ManifoldMse& one) {
        dst.theta += one.theta;
        dst.x += one.x;
        dst.mixed += one.mixed;
        dst.has_theta = one.has_theta;
        dst.has_x = one.has_x;
      };
      accumulate(ar_mean[h], a);
      accumulate(tk_mean[h], t);
      if (physics) {
        // Two true context rows in front give exactly h energy increments.
        Eigen::MatrixXd seq(h + 2, env.n);
        seq.topRows(2) = tr.q.middleRows(K - 2, 2);
        seq.bottomRows(h) = ar.topRows(h);
        resid_mean[h] += energy_budget_residual(env, seq, tr.dt);
        viol_mean[h] +=
            passivity_violation_fraction(env, seq, tr.dt, cfg.passivity_eps);
      }
    }
  }

  const double B = static_cast<double>(split.size());
  MetricReport report;
  for (int h : cfg.horizons) {
    const std::string suffix = "_h" + std::to_string(h);
    ManifoldMse& a = ar_mean[h];
    a.theta /= B;
    a.x /= B;
    a.mixed /= B;
    put_family(report, "rollout_theta_wrap_mse" + suffix, "rollout_mse" + suffix,
               "rollout_mixed_mse" + suffix, a);
    ManifoldMse& t = tk_mean[h];
    t.theta /= B;
    t.x /= B;
    t.mixed /= B;
    put_family(report, "rollout_takeover_theta_wrap_mse" + suffix,
               "rollout_takeover_mse" + suffix,
               "rollout_takeover_mixed_mse" + suffix, t);
    if (physics) {
      report.values["rollout_energy_budget_resid" + suffix] = resid_mean[h] / B;
      report.values["rollout_passivity_violations" + suffix] = viol_mean[h] / B;
    }
  }
  if (physics) {
    const auto [r2, mae] = damping_recovery(m, env, split);
    const auto [r2t, maet] = damping_recovery_trace(m, env, split);
    report.values["damping_r2"] = r2;
    report.values["damping_mae"] = mae;
    report.values["damping_r2_trace"] = r2t;
    report.values["damping_mae_trace"] = maet;
  }
  report.values["n_trajectories"] = B;
  report.values["burn_in"] = K;
  validate_report(report, cfg);
  return report;
}

namespace {

// Shared R^2 / MAE core over flattened prediction-truth sample pairs.
std::pair<double, double> r2_mae(const std::vector<double>& pred,
                                 const std::vector<double>& truth) {
  const std::size_t N = truth.size();
  double mean = 0.0;
  for (double d : truth) mean += d;
  mean /= static_cast<double>(N);
  double ss_res = 0.0, ss_tot = 0.0, mae = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double e = pred[i] - truth[i];
    ss_res += e * e;
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
    mae += std::abs(e);
  }
  return {1.0 - ss_res / (ss_tot + 1e-12), mae / static_cast<double>(N)};
}

std::pair<double, double> damping_recovery_impl(
    const HamiltonianModel& m, const EnvSpec& env,
    const std::vector<Trajectory>& split, bool trace_variant) {
  if (env.law == DampingLaw::Ecological)
    throw ContractViolation(
        "damping_recovery: the ecological benchmark has no viscous law");
  if (split.empty()) throw ContractViolation("damping_recovery: empty split");
  if (m.n != env.n)
    throw ContractViolation("damping_recovery: model width mismatch");
  std::vector<double> pred, truth;
  for (const Trajectory& tr : split) {
    for (int t = 0; t < tr.q.rows(); ++t) {
      const Eigen::VectorXd q = tr.q.row(t).transpose();
      const Eigen::VectorXd d_hat = damping_matrix(m.D, q).diagonal();
      const Eigen::VectorXd d_env = true_damping(env, q);
      if (trace_variant) {
        pred.push_back(d_hat.mean());
        truth.push_back(d_env.mean());
      } else {
        for (int j = 0; j < m.n; ++j) {
          pred.push_back(d_hat(j));
          truth.push_back(d_env(j));
        }
      }
    }
  }
  return r2_mae(pred, truth);
}

}  // namespace

std::pair<double, double> damping_recovery(
    const HamiltonianModel& m, const EnvSpec& env,
    const std::vector<Trajectory>& split) {
  return damping_recovery_impl(m, env, split, false);
}

std::pair<double, double> damping_recovery_trace(
    const HamiltonianModel& m, const EnvSpec& env,
    const std::vector<Trajectory>& split) {
  return damping_recovery_impl(m, env, split, true);
}

double energy_budget_residual(const EnvSpec& env, const Eigen::MatrixXd& q_rows,
                              double dt) {
  const Eigen::VectorXd energies = fd_energy_series(env, q_rows, dt);
  const int R = static_cast<int>(q_rows.rows());
  double sum = 0.0;
  for (int h = 0; h + 2 < R; ++h) {
    Eigen::VectorXd v(env.n);
    for (int j = 0; j < env.n; ++j) {
      const double d = q_rows(h + 1, j) - q_rows(h, j);
      v(j) = (env.angular[static_cast<size_t>(j)] ? wrap_angle(d) : d) / dt;
    }
    const Eigen::VectorXd d_env =
        true_damping(env, q_rows.row(h).transpose());
    const double dissipation = (d_env.array() * v.array().square()).sum();
    sum += std::abs((energies(h + 1) - energies(h)) / dt + dissipation);
  }
  return sum / static_cast<double>(R - 2);
}

double passivity_violation_fraction(const EnvSpec& env,
                                    const Eigen::MatrixXd& q_rows, double dt,
                                    double eps) {
  if (eps < 0.0)
    throw ContractViolation("passivity_violation_fraction: negative tolerance");
  const Eigen::VectorXd energies = fd_energy_series(env, q_rows, dt);
  int violations = 0;
  for (int h = 0; h + 1 < energies.size(); ++h)
    if (energies(h + 1) - energies(h) > eps) ++violations;
  return static_cast<double>(violations) /
         static_cast<double>(energies.size() - 1);
}

AggregateReport aggregate_reports(const std::vector<MetricReport>& per_seed) {
  if (per_seed.empty())
    throw ContractViolation("aggregate_reports: no reports");
  const auto& first = per_seed.front().values;
  for (const MetricReport& r : per_seed) {
    if (r.values.size() != first.size())
      throw ContractViolation("aggregate_reports: key sets differ");
    for (const auto& [key, value] : r.values) {
      if (!first.count(key))
        throw ContractViolation("aggregate_reports: key sets differ");
      (void)value;
    }
  }
  AggregateReport out;
  out.n_seeds = static_cast<int>(per_seed.size());
  const double n = static_cast<double>(per_seed.size());
  for (const auto& [key, unused] : first) {
    (void)unused;
    double mean = 0.0;
    for (const MetricReport& r : per_seed) mean += r.values.at(key);
    mean /= n;
    double var = 0.0;
    for (const MetricReport& r : per_seed) {
      const double d = r.values.at(key) - mean;
      var += d * d;
    }
    out.stats[key] = {mean, std::sqrt(var / n)};
  }
  return out;
}

}  // namespace phast
