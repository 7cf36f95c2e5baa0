#include "phast/integrators.hpp"

#include <cmath>

#include "phast/scalar_ops.hpp"

namespace phast {

using Eigen::VectorXd;

namespace {

void check_phase(const HamiltonianModel& m, const VectorXd& q,
                 const VectorXd& p, const char* where) {
  if (q.size() != m.n || p.size() != m.n)
    throw ContractViolation(std::string(where) + ": state dimension");
}

void require_finite(const VectorXd& q, const VectorXd& p, const char* where,
                    long step_index) {
  if (!q.allFinite() || !p.allFinite())
    throw IntegrationFault(std::string(where) + ": non-finite state",
                           step_index);
}

// Two-stage explicit update of the frozen-q damping flow dp/dt = -D(q)M^-1 p
// over a half-step h. A single Euler stage degrades the split composition to
// global first order; the second stage matches the exact decay to O(h^3), so
// the full step stays second order. On each damping eigenvalue s = h*lambda
// the momentum is scaled by 1 - s + s^2/2, which is at most 1 exactly when
// s <= 2 — the same kinetic-energy decrease condition as the one-stage form.
Eigen::VectorXd damped_momentum(const HamiltonianModel& m,
                                const MassModel& mass, const VectorXd& q,
                                const VectorXd& p, double h) {
  const VectorXd s1 = damping_apply(m.D, q, mass_solve(mass, q, p));
  const VectorXd inner = p - 0.5 * h * s1;
  const VectorXd s2 = damping_apply(m.D, q, mass_solve(mass, q, inner));
  return p - h * s2;
}

// Conservative part of the field: (dq/dt, dp/dt) = (M^-1 p, -dH/dq).
PhaseState conservative_field(const HamiltonianModel& m, const MassModel& mass,
                              const VectorXd& q, const VectorXd& p) {
  const VectorXd v = mass_solve(mass, q, p);
  VectorXd grad_q = potential_grad(*m.V, q);
  if (mass.kind == MassModel::Kind::KnownAnalytic) {
    const auto jac = mass.analytic->mass_jac(q);
    for (Eigen::Index i = 0; i < q.size(); ++i)
      grad_q[i] += -0.5 * v.dot(jac[static_cast<size_t>(i)] * v);
  }
  return {v, -grad_q};
}

}  // namespace

PhaseState damping_half_step(const HamiltonianModel& m, const VectorXd& q,
                             const VectorXd& p, double h) {
  check_phase(m, q, p, "damping_half_step");
  const MassModel mass = current_mass(m);
  return {q, damped_momentum(m, mass, q, p, h)};
}

PhaseState strang_leapfrog_step(const HamiltonianModel& m, const VectorXd& q,
                                const VectorXd& p, double dt,
                                long step_index) {
  check_phase(m, q, p, "strang_leapfrog_step");
  const MassModel mass = current_mass(m);
  if (mass.kind != MassModel::Kind::ConstantDiagLowRank)
    throw ContractViolation(
        "strang_leapfrog_step: requires a configuration-independent mass");
  const double h = 0.5 * dt;

  // Half dissipation step.
  const VectorXd pw = damped_momentum(m, mass, q, p, h);
  // Conservative step (leapfrog kick-drift-kick).
  const VectorXd p_half = pw - h * potential_grad(*m.V, q);
  const VectorXd q_new = q + dt * mass_solve(mass, q, p_half);
  const VectorXd p_kick = p_half - h * potential_grad(*m.V, q_new);
  // Half dissipation step at the new configuration.
  const VectorXd p_new = damped_momentum(m, mass, q_new, p_kick, h);

  require_finite(q_new, p_new, "strang_leapfrog_step", step_index);
  return {q_new, p_new};
}

PhaseState implicit_midpoint_step(const HamiltonianModel& m, const VectorXd& q,
                                  const VectorXd& p, double dt, double tau_fp,
                                  int n_fp, long step_index) {
  check_phase(m, q, p, "implicit_midpoint_step");
  if (tau_fp <= 0.0 || n_fp < 1)
    throw ContractViolation("implicit_midpoint_step: bad fixed-point controls");
  const MassModel mass = current_mass(m);
  const double h = 0.5 * dt;

  const VectorXd pw = damped_momentum(m, mass, q, p, h);

  // Fixed point of x+ = x + dt f((x + x+)/2), seeded with the Euler step.
  auto [fq, fp] = conservative_field(m, mass, q, pw);
  VectorXd q_new = q + dt * fq;
  VectorXd p_new = pw + dt * fp;
  bool converged = false;
  for (int it = 0; it < n_fp; ++it) {
    const VectorXd q_mid = 0.5 * (q + q_new);
    const VectorXd p_mid = 0.5 * (pw + p_new);
    auto [fqm, fpm] = conservative_field(m, mass, q_mid, p_mid);
    const VectorXd q_next = q + dt * fqm;
    const VectorXd p_next = pw + dt * fpm;
    const double delta =
        std::max((q_next - q_new).lpNorm<Eigen::Infinity>(),
                 (p_next - p_new).lpNorm<Eigen::Infinity>());
    q_new = q_next;
    p_new = p_next;
    if (delta < tau_fp) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw IntegrationFault(
        "implicit_midpoint_step: fixed point did not converge (dt too large)",
        step_index);

  p_new = damped_momentum(m, mass, q_new, p_new, h);
  require_finite(q_new, p_new, "implicit_midpoint_step", step_index);
  return {q_new, p_new};
}

PhaseState compose_substeps(const HamiltonianModel& m, const VectorXd& q,
                            const VectorXd& p, const StepConfig& cfg,
                            long step_index) {
  if (cfg.substeps < 1)
    throw ContractViolation("compose_substeps: substeps must be >= 1");
  if (cfg.tau_fp <= 0.0 || cfg.n_fp < 1)
    throw ContractViolation("compose_substeps: bad fixed-point controls");
  VectorXd sub = cfg.sub_dt;
  if (sub.size() == 0) {
    if (cfg.dt <= 0.0) throw ContractViolation("compose_substeps: dt <= 0");
    sub = VectorXd::Constant(cfg.substeps, cfg.dt / cfg.substeps);
  }
  if (sub.size() != cfg.substeps || sub.minCoeff() < 0.0 || sub.sum() <= 0.0)
    throw ContractViolation("compose_substeps: bad per-substep timesteps");

  PhaseState x{q, p};
  for (int s = 0; s < cfg.substeps; ++s) {
    x = cfg.core == CoreKind::Leapfrog
            ? strang_leapfrog_step(m, x.first, x.second, sub[s], step_index)
            : implicit_midpoint_step(m, x.first, x.second, sub[s], cfg.tau_fp,
                                     cfg.n_fp, step_index);
  }
  return x;
}

VectorXd rk4_step(const std::function<VectorXd(const VectorXd&)>& field,
                  const VectorXd& x, double dt) {
  const VectorXd k1 = field(x);
  const VectorXd k2 = field(x + 0.5 * dt * k1);
  const VectorXd k3 = field(x + 0.5 * dt * k2);
  const VectorXd k4 = field(x + dt * k3);
  VectorXd out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.allFinite()) throw NumericFault("rk4_step: non-finite state");
  return out;
}

// ---------------------------------------------------------------------------
// Graph forms.

std::vector<NodeId> substep_dt_nodes(Graph& g, const HamiltonianModel& m) {
  const NodeId raw = g.param(m.dt_model);
  std::vector<NodeId> dts;
  dts.reserve(static_cast<size_t>(m.substeps));
  for (int s = 0; s < m.substeps; ++s)
    dts.push_back(g.softplus(g.rows(raw, s, 1)));
  return dts;
}

namespace {

NodeId mass_velocity_graph(Graph& g, const HamiltonianModel& m,
                           const MassCtx& mass, NodeId q, NodeId p) {
  return mass_solve_graph(g, m, mass, q, p);
}

// Two-stage explicit damping half-step (see damped_momentum) with h a 1x1
// node; the damping heads at q are shared between the stages.
NodeId damping_half_graph(Graph& g, const HamiltonianModel& m,
                          const MassCtx& mass, NodeId q, NodeId p, NodeId h) {
  const DampingNodes heads = damping_heads_graph(g, m.D, q);
  const NodeId s1 = damping_apply_graph(
      g, heads, mass_velocity_graph(g, m, mass, q, p));
  const NodeId inner = g.sub(p, g.mul(g.scale(h, 0.5), s1));
  const NodeId s2 = damping_apply_graph(
      g, heads, mass_velocity_graph(g, m, mass, q, inner));
  return g.sub(p, g.mul(h, s2));
}

// Conservative field nodes (dq/dt, dp/dt) at (q, p).
std::pair<NodeId, NodeId> conservative_field_graph(Graph& g,
                                                   const HamiltonianModel& m,
                                                   const MassCtx& mass,
                                                   NodeId q, NodeId p) {
  const NodeId v = mass_velocity_graph(g, m, mass, q, p);
  NodeId grad_q = potential_grad_graph(g, *m.V, q);
  const NodeId kin = kinetic_qgrad_graph(g, m, mass, q, p);
  if (kin >= 0) grad_q = g.add(grad_q, kin);
  return {v, g.neg(grad_q)};
}

}  // namespace

std::pair<NodeId, NodeId> strang_leapfrog_step_graph(Graph& g,
                                                     const HamiltonianModel& m,
                                                     const MassCtx& mass,
                                                     NodeId q, NodeId p,
                                                     NodeId dt) {
  if (mass.analytic)
    throw ContractViolation(
        "strang_leapfrog_step_graph: requires a configuration-independent "
        "mass");
  const NodeId h = g.scale(dt, 0.5);
  const NodeId pw = damping_half_graph(g, m, mass, q, p, h);
  const NodeId p_half =
      g.sub(pw, g.mul(h, potential_grad_graph(g, *m.V, q)));
  const NodeId q_new =
      g.add(q, g.mul(dt, mass_velocity_graph(g, m, mass, q, p_half)));
  const NodeId p_kick =
      g.sub(p_half, g.mul(h, potential_grad_graph(g, *m.V, q_new)));
  const NodeId p_new = damping_half_graph(g, m, mass, q_new, p_kick, h);
  return {q_new, p_new};
}

std::pair<NodeId, NodeId> implicit_midpoint_step_graph(
    Graph& g, const HamiltonianModel& m, const MassCtx& mass, NodeId q,
    NodeId p, NodeId dt, double tau_fp, int n_fp) {
  if (tau_fp <= 0.0 || n_fp < 1)
    throw ContractViolation(
        "implicit_midpoint_step_graph: bad fixed-point controls");
  const NodeId h = g.scale(dt, 0.5);
  const NodeId pw = damping_half_graph(g, m, mass, q, p, h);

  // Unrolled fixed-point iteration; the eager forward values drive the stop
  // rule, so the unroll depth adapts to the state while staying a fixed
  // differentiable chain for the backward pass.
  auto [fq0, fp0] = conservative_field_graph(g, m, mass, q, pw);
  NodeId q_new = g.add(q, g.mul(dt, fq0));
  NodeId p_new = g.add(pw, g.mul(dt, fp0));
  bool converged = false;
  for (int it = 0; it < n_fp; ++it) {
    const NodeId q_mid = g.scale(g.add(q, q_new), 0.5);
    const NodeId p_mid = g.scale(g.add(pw, p_new), 0.5);
    auto [fqm, fpm] = conservative_field_graph(g, m, mass, q_mid, p_mid);
    const NodeId q_next = g.add(q, g.mul(dt, fqm));
    const NodeId p_next = g.add(pw, g.mul(dt, fpm));
    const double delta = std::max(
        (g.val(q_next) - g.val(q_new)).lpNorm<Eigen::Infinity>(),
        (g.val(p_next) - g.val(p_new)).lpNorm<Eigen::Infinity>());
    q_new = q_next;
    p_new = p_next;
    if (delta < tau_fp) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw IntegrationFault(
        "implicit_midpoint_step_graph: fixed point did not converge (dt too "
        "large)",
        0);
  const NodeId p_out = damping_half_graph(g, m, mass, q_new, p_new, h);
  return {q_new, p_out};
}

std::pair<NodeId, NodeId> compose_substeps_graph(
    Graph& g, const HamiltonianModel& m, const MassCtx& mass, NodeId q,
    NodeId p, const std::vector<NodeId>& sub_dt, CoreKind core, double tau_fp,
    int n_fp) {
  if (sub_dt.empty())
    throw ContractViolation("compose_substeps_graph: no substep timesteps");
  std::pair<NodeId, NodeId> x{q, p};
  for (NodeId dt : sub_dt) {
    x = core == CoreKind::Leapfrog
            ? strang_leapfrog_step_graph(g, m, mass, x.first, x.second, dt)
            : implicit_midpoint_step_graph(g, m, mass, x.first, x.second, dt,
                                           tau_fp, n_fp);
  }
  return x;
}

StepConfig model_step_config(const HamiltonianModel& m) {
  StepConfig cfg;
  cfg.sub_dt = substep_dts(m);
  cfg.substeps = m.substeps;
  cfg.dt = cfg.sub_dt.sum();
  const bool analytic = !m.mass_is_learned &&
                        m.mass_given.kind == MassModel::Kind::KnownAnalytic;
  cfg.core = analytic ? CoreKind::ImplicitMidpoint : CoreKind::Leapfrog;
  return cfg;
}

}  // namespace phast
