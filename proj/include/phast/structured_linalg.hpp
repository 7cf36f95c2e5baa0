#pragma once

// Definiteness-guaranteed low-rank operators: the q-dependent damping field
// D(q) = d0 I + sum_i beta_i(q) k_i(q) k_i(q)^T and the constant
// diagonal-plus-low-rank mass M = diag(d) + U U^T, with O(nr) applies, a
// Woodbury solve, spectral diagnostics, and graph nodes that differentiate
// through all of it.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "phast/errors.hpp"
#include "phast/graph.hpp"
#include "phast/params.hpp"
#include "phast/rng.hpp"

namespace phast {

// Inverse of softplus: returns x with softplus(x) = y (y > 0).
inline double softplus_inverse(double y) {
  if (y <= 0.0)
    throw ContractViolation("softplus_inverse: target must be positive");
  // log(expm1(y)), stable for large y where expm1 overflows.
  return y > 30.0 ? y : std::log(std::expm1(y));
}

// ---------------------------------------------------------------------------
// Damping field
// ---------------------------------------------------------------------------

// Evaluated heads at one configuration: base coefficient, strengths, and
// unit directions (columns of K).
struct HeadEval {
  double d0 = 0.0;
  Eigen::VectorXd beta;
  Eigen::MatrixXd K;
};

// Low-rank PSD damping operator. Strengths and directions are produced either
// by constant raw parameters or by one shared two-layer perceptron over
// configuration features; both routes pass through the same positivity and
// unit-norm maps, so D(q) is symmetric PSD by construction and, when cap is
// set, lambda_max(D) <= d0 + cap everywhere.
struct DampingField {
  int n = 0;
  int r = 0;
  double cap = -1.0;  // < 0 means unbounded strengths (softplus)
  bool d0_fixed = false;
  double d0_value = 0.0;  // used when d0_fixed
  bool constant_heads = false;
  int head_hidden = 32;
  std::vector<bool> angular;
  ParamStore* store = nullptr;
  // Parameter ids; -1 where the configuration doesn't use them.
  int raw_d0 = -1;
  int raw_beta = -1;  // (r) constant-head strengths
  int raw_k = -1;     // (n x r) constant-head directions, one per column
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;  // perceptron heads

  // Fixed true-law variant: a known diagonal damping d(q) with no parameters.
  // Plain evaluation only; the graph path rejects it.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> diag_law;
};

// Registers parameters under `prefix.` and returns the wired field.
// d0_init seeds the learned base coefficient (ignored when d0_fixed).
DampingField make_damping_field(ParamStore& store, const std::string& prefix,
                                int n, int r, std::vector<bool> angular,
                                double cap, bool d0_fixed, double d0_init,
                                bool constant_heads, int head_hidden,
                                CounterRng& rng);

// Wraps a known diagonal damping law d(q) >= 0 for diagnostics and
// simulator-truth models.
DampingField make_diag_law_damping(
    int n, std::function<Eigen::VectorXd(const Eigen::VectorXd&)> law);

HeadEval damping_heads(const DampingField& f, const Eigen::VectorXd& q);
Eigen::VectorXd damping_apply(const DampingField& f, const Eigen::VectorXd& q,
                              const Eigen::VectorXd& v);
Eigen::MatrixXd damping_matrix(const DampingField& f, const Eigen::VectorXd& q);
// diag(D(q)), the per-coordinate effective damping used by recovery metrics.
Eigen::VectorXd damping_diagonal(const DampingField& f,
                                 const Eigen::VectorXd& q);

// Graph forms. Heads are built once per configuration node and reused for
// all applies at that configuration.
struct DampingNodes {
  NodeId d0 = -1;               // 1x1
  std::vector<NodeId> beta;     // r scalars
  std::vector<NodeId> k;        // r unit columns
};
DampingNodes damping_heads_graph(Graph& g, const DampingField& f, NodeId q);
NodeId damping_apply_graph(Graph& g, const DampingNodes& h, NodeId v);
// v^T D(q) v >= 0 as a scalar node (energy-balance loss term).
NodeId damping_quadform_graph(Graph& g, const DampingNodes& h, NodeId v);

// ---------------------------------------------------------------------------
// Mass models
// ---------------------------------------------------------------------------

struct FlopCount {
  long mul = 0;
  long add = 0;
  long total() const { return mul + add; }
};

// Numeric mass: either a constant diagonal-plus-low-rank factorization or a
// per-environment analytic closure M(q) (which also covers fixed dense
// matrices via a constant closure).
struct MassModel {
  enum class Kind { ConstantDiagLowRank, KnownAnalytic };
  Kind kind = Kind::ConstantDiagLowRank;
  Eigen::VectorXd d;  // positive diagonal (ConstantDiagLowRank)
  Eigen::MatrixXd U;  // n x r factor, r may be zero
  std::shared_ptr<const AnalyticMass> analytic;  // KnownAnalytic

  int dim() const {
    return kind == Kind::KnownAnalytic ? analytic->dim()
                                       : static_cast<int>(d.size());
  }
};

MassModel identity_mass(int n);
MassModel diag_mass(const Eigen::VectorXd& d);
MassModel diag_lowrank_mass(const Eigen::VectorXd& d, const Eigen::MatrixXd& U);
MassModel analytic_mass(std::shared_ptr<const AnalyticMass> closure);
// Constant dense SPD matrix wrapped as an analytic closure with zero
// derivatives (the constant-mass approximation of a configuration-dependent
// matrix at a reference point).
MassModel const_dense_mass(const Eigen::MatrixXd& m);

Eigen::MatrixXd mass_matrix(const MassModel& m, const Eigen::VectorXd& q);
// v = M(q)^{-1} p. The low-rank path is the Woodbury solve; flops, when
// requested, tally multiplies and adds of that path only.
Eigen::VectorXd mass_solve(const MassModel& m, const Eigen::VectorXd& q,
                           const Eigen::VectorXd& p,
                           FlopCount* flops = nullptr);
Eigen::VectorXd mass_apply(const MassModel& m, const Eigen::VectorXd& q,
                           const Eigen::VectorXd& v);

// Learned parameterization of the constant diagonal-plus-low-rank mass:
// d = softplus(raw_d) + floor, column i of U is sqrt(softplus(raw_alpha_i))
// times the unit-normalized column i of raw_k.
struct MassParam {
  int n = 0;
  int rank = 0;
  double diag_floor = 1e-6;
  ParamStore* store = nullptr;
  int raw_d = -1;      // (n)
  int raw_alpha = -1;  // (rank)
  int raw_k = -1;      // (n x rank)
};

MassParam make_mass_param(ParamStore& store, const std::string& prefix, int n,
                          int rank, CounterRng& rng);
MassModel materialize(const MassParam& mp);

// Graph assembly of (d, U) from the raw parameters.
struct MassNodes {
  NodeId d = -1;  // n x 1
  NodeId U = -1;  // n x rank; -1 when rank == 0
};
MassNodes mass_param_nodes(Graph& g, const MassParam& mp);
MassNodes mass_const_nodes(Graph& g, const MassModel& m);

// v = (diag(d) + U U^T)^{-1} p via Woodbury, differentiable in p, d, U.
// Pass U = -1 for a pure diagonal solve.
NodeId mass_solve_dlr(Graph& g, NodeId p, NodeId d, NodeId U);
// y = (diag(d) + U U^T) x, differentiable in x, d, U.
NodeId mass_apply_dlr(Graph& g, NodeId x, NodeId d, NodeId U);
// v = M(q)^{-1} p for an analytic closure, differentiable in q and p.
NodeId mass_solve_analytic(Graph& g, NodeId q, NodeId p,
                           std::shared_ptr<const AnalyticMass> m);
// Kinetic part of the Hamiltonian configuration gradient,
// g_i = dT/dq_i = -1/2 v^T (dM/dq_i) v with v = M(q)^{-1} p.
NodeId kinetic_grad_analytic(Graph& g, NodeId q, NodeId p,
                             std::shared_ptr<const AnalyticMass> m);

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

// s = (dt/2) lambda_max(D(q)) / lambda_min(M(q)); s <= 2 is the documented
// sufficient condition for kinetic-energy decrease in the damping half-step.
double stiffness_proxy(const DampingField& f, const MassModel& m,
                       const Eigen::VectorXd& q, double dt);

// Eigenvalues of (J - R) Q. Preconditions (J skew, R/Q symmetric) are
// checked; definiteness of R and Q is the caller's contract.
Eigen::VectorXcd linearized_spectrum(const Eigen::MatrixXd& J,
                                     const Eigen::MatrixXd& R,
                                     const Eigen::MatrixXd& Q);

}  // namespace phast
