#pragma once

// HamiltonianModel: the (V, M, D) composition H(q, p) = V(q) + 1/2 p^T
// M(q)^{-1} p with PSD damping, assembled under a knowledge regime that
// fixes which components train. Provides the continuous-time vector field,
// port output, and the graph-side building blocks integrators step through.

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "phast/potentials.hpp"
#include "phast/structured_linalg.hpp"

namespace phast {

enum class Regime { Known, Partial, Unknown };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct HamiltonianModel {
  Regime regime = Regime::Unknown;
  int n = 0;
  std::vector<bool> angular;
  ParamStore* store = nullptr;

  std::shared_ptr<Potential> V;
  DampingField D;

  // Exactly one mass route: a given MassModel (KNOWN/PARTIAL, possibly an
  // analytic closure) or the learned diagonal-plus-low-rank parameters.
  MassModel mass_given;
  MassParam mass_learned;
  bool mass_is_learned = false;

  // Internal per-substep timesteps, stored as substeps x 1 softplus raws so
  // each learned substep stays positive. Initialized to dt_init / substeps.
  int dt_model = -1;
  int substeps = 1;
};

// Knobs that are not implied by the regime. Damping fields left at their
// defaults follow the regime conventions (see make_model).
struct ModelOptions {
  double dt_init = 0.05;
  bool dt_learnable = true;
  int substeps = 1;
  int damping_terms = 2;
  double damping_cap = -2.0;  // -2: regime default; -1: unbounded; >=0: cap
  double d0_init = 0.1;
  bool d0_fixed = false;      // forced true in Partial regime default
  bool constant_damping_heads = false;
  int head_hidden = 32;
  int mass_rank = -1;         // learned mass rank; -1 means min(4, n)
  int potential_hidden = 64;
  int potential_layers = 3;
  // Partial variant where the truth template itself carries the trainable
  // coefficients (pair-potential strengths, say) instead of gaining a
  // neural residual. v_true must then have trainable parameters.
  bool partial_structured = false;
};

// Assembles a model under `regime`:
//   Known:   V = structured truth (frozen), M = given, D trainable.
//   Partial: V = truth + softplus-scaled neural residual, M = given,
//            D trainable with a strength cap and fixed d0.
//   Unknown: V neural, M learned (diag plus low-rank), D trainable.
// `v_true`/`m_true` are required for Known/Partial and ignored for Unknown.
HamiltonianModel make_model(ParamStore& store, const std::string& prefix,
                            Regime regime, int n, std::vector<bool> angular,
                            std::shared_ptr<Potential> v_true,
                            std::optional<MassModel> m_true,
                            const ModelOptions& opt, CounterRng& rng);

// Validates the regime/trainability contract on the model's store entries;
// throws ContractViolation on any mismatch.
void validate_regime(const HamiltonianModel& m);

// Parameter ids of each component (hybrids recurse).
std::vector<int> potential_param_ids(const Potential& v);
std::vector<int> damping_param_ids(const DampingField& d);
std::vector<int> mass_param_ids(const HamiltonianModel& m);

// Materialized mass (snapshot of learned parameters when applicable).
MassModel current_mass(const HamiltonianModel& m);

// Current per-substep timesteps softplus(raw), and their sum. The sum is the
// effective duration of one model transition and is reported as a diagnostic;
// it is not constrained to match the data timestep during training.
Eigen::VectorXd substep_dts(const HamiltonianModel& m);
double model_dt(const HamiltonianModel& m);

double hamiltonian_value(const HamiltonianModel& m, const Eigen::VectorXd& q,
                         const Eigen::VectorXd& p);

// Unforced or forced continuous-time dynamics; u enters the momentum rows
// through g_port (state-dimension 2n rows by input columns).
std::pair<Eigen::VectorXd, Eigen::VectorXd> ph_vector_field(
    const HamiltonianModel& m, const Eigen::VectorXd& q,
    const Eigen::VectorXd& p, const Eigen::VectorXd* u = nullptr,
    const Eigen::MatrixXd* g_port = nullptr);

// y = G^T grad H, the port-conjugate output.
Eigen::VectorXd port_output(const HamiltonianModel& m,
                            const Eigen::VectorXd& q,
                            const Eigen::VectorXd& p,
                            const Eigen::MatrixXd& g_port);

// ---------------------------------------------------------------------------
// Graph building blocks
// ---------------------------------------------------------------------------

// Mass context built once per transition graph; nodes are reused across
// substeps when the mass is configuration independent.
struct MassCtx {
  bool analytic = false;
  std::shared_ptr<const AnalyticMass> closure;  // analytic route
  MassNodes nodes;                              // diag-plus-low-rank route
};

MassCtx mass_ctx_graph(Graph& g, const HamiltonianModel& m);
// v = M(q)^{-1} p.
NodeId mass_solve_graph(Graph& g, const HamiltonianModel& m, const MassCtx& c,
                        NodeId q, NodeId p);
// dT/dq of the kinetic term; -1 when the mass is configuration independent.
NodeId kinetic_qgrad_graph(Graph& g, const HamiltonianModel& m,
                           const MassCtx& c, NodeId q, NodeId p);
// Scalar H(q, p) node.
NodeId hamiltonian_graph(Graph& g, const HamiltonianModel& m, const MassCtx& c,
                         NodeId q, NodeId p);

}  // namespace phast
