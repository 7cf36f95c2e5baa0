// Structure-preserving time stepping.
//
// The discrete transition map is a Strang composition
//     Phi_dt = Phi_D^{dt/2} o Phi_H^{dt} o Phi_D^{dt/2},
// where Phi_D is an explicit half-step of momentum damping (q is untouched)
// and Phi_H is a conservative core: leapfrog (Stormer-Verlet) when the mass
// is configuration independent, implicit midpoint otherwise. Every step
// exists in a plain form for simulation and a graph form for training, built
// from the same module evaluations so the two agree to rounding.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>

#include "phast/hamiltonian.hpp"

namespace phast {

enum class CoreKind { Leapfrog, ImplicitMidpoint };

// One environment step of duration dt, advanced as `substeps` applications of
// the core. Per-substep timesteps default to dt/substeps; `sub_dt` overrides
// them explicitly (size must then equal substeps, entries nonnegative with a
// positive sum). The fixed-point controls only matter for the midpoint core.
struct StepConfig {
  double dt = 0.05;
  int substeps = 1;
  Eigen::VectorXd sub_dt;  // empty: equal split dt/substeps
  CoreKind core = CoreKind::Leapfrog;
  double tau_fp = 1e-10;
  int n_fp = 50;
};

using PhaseState = std::pair<Eigen::VectorXd, Eigen::VectorXd>;

// Explicit damping half-step: a two-stage update of the frozen-q momentum
// flow dp/dt = -D(q) M^{-1}(q) p, second-order accurate on that flow so the
// Strang composition keeps its order. Exposed separately because the
// composition relies on it leaving q untouched, and because its per-direction
// decay factor 1 - s + s^2/2 never exceeds one while s <= 2.
PhaseState damping_half_step(const HamiltonianModel& m,
                             const Eigen::VectorXd& q,
                             const Eigen::VectorXd& p, double h);

// Damping half / leapfrog kick-drift-kick / damping half. Requires a
// configuration-independent mass (diagonal plus low-rank), throws
// ContractViolation for analytic masses. Non-finite states raise
// IntegrationFault carrying `step_index`.
PhaseState strang_leapfrog_step(const HamiltonianModel& m,
                                const Eigen::VectorXd& q,
                                const Eigen::VectorXd& p, double dt,
                                long step_index = 0);

// Damping halves around an implicit-midpoint conservative core: solves
// x+ = x + dt f((x + x+)/2) for the unforced conservative field f by
// fixed-point iteration from x+ = x + dt f(x), stopping when the max-norm
// update drops below tau_fp; more than n_fp sweeps raises IntegrationFault
// (the step is too large for the field). Works for any mass model.
PhaseState implicit_midpoint_step(const HamiltonianModel& m,
                                  const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& p, double dt,
                                  double tau_fp = 1e-10, int n_fp = 50,
                                  long step_index = 0);

// Applies the configured core once per substep, sharing the model modules
// across substeps.
PhaseState compose_substeps(const HamiltonianModel& m,
                            const Eigen::VectorXd& q,
                            const Eigen::VectorXd& p, const StepConfig& cfg,
                            long step_index = 0);

// Step configuration of the model's own transition: the learned per-substep
// timesteps, a leapfrog core when the mass is configuration independent and
// implicit midpoint otherwise (analytic closures, including frozen constant
// approximations, take the midpoint route so comparisons share one core).
StepConfig model_step_config(const HamiltonianModel& m);

// Classical fourth-order Runge-Kutta on an arbitrary field; used by the
// ground-truth simulators and the control plant, never by the learned map.
Eigen::VectorXd rk4_step(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& field,
    const Eigen::VectorXd& x, double dt);

// ---------------------------------------------------------------------------
// Graph forms. `dt` arguments are 1x1 nodes so the timestep itself can be
// learned; substep_dt_nodes maps the model's softplus raws to positive
// per-substep timestep nodes.

std::vector<NodeId> substep_dt_nodes(Graph& g, const HamiltonianModel& m);

std::pair<NodeId, NodeId> strang_leapfrog_step_graph(Graph& g,
                                                     const HamiltonianModel& m,
                                                     const MassCtx& mass,
                                                     NodeId q, NodeId p,
                                                     NodeId dt);

std::pair<NodeId, NodeId> implicit_midpoint_step_graph(
    Graph& g, const HamiltonianModel& m, const MassCtx& mass, NodeId q,
    NodeId p, NodeId dt, double tau_fp = 1e-10, int n_fp = 50);

// One full environment step: the configured core applied over the given
// per-substep timestep nodes (typically substep_dt_nodes output).
std::pair<NodeId, NodeId> compose_substeps_graph(
    Graph& g, const HamiltonianModel& m, const MassCtx& mass, NodeId q,
    NodeId p, const std::vector<NodeId>& sub_dt, CoreKind core,
    double tau_fp = 1e-10, int n_fp = 50);

}  // namespace phast
