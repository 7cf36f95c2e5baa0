#include "phast/potentials.hpp"

#include <cmath>

#include "phast/scalar_ops.hpp"
#include "phast/structured_linalg.hpp"

namespace phast {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Perceptron
// ---------------------------------------------------------------------------

Mlp make_mlp(ParamStore& store, const std::string& prefix, int in, int hidden,
             int out, int layers, CounterRng& rng) {
  if (in < 1 || hidden < 1 || out < 1 || layers < 1)
    throw ContractViolation("make_mlp: dimensions must be positive");
  Mlp m;
  m.in = in;
  m.hidden = hidden;
  m.out = out;
  m.layers = layers;
  m.store = &store;
  for (int l = 0; l < layers; ++l) {
    const int fi = l == 0 ? in : hidden;
    const int fo = l == layers - 1 ? out : hidden;
    const double bound = std::sqrt(1.0 / fi);
    const int wid = store.add(prefix + ".w" + std::to_string(l), fo, fi);
    const int bid = store.add(prefix + ".b" + std::to_string(l), fo);
    auto& wv = store.at(wid).value;
    for (Eigen::Index i = 0; i < wv.size(); ++i)
      wv[i] = rng.uniform(-bound, bound);
    auto& bv = store.at(bid).value;
    for (Eigen::Index i = 0; i < bv.size(); ++i)
      bv[i] = rng.uniform(-bound, bound);
    m.w.push_back(wid);
    m.b.push_back(bid);
  }
  return m;
}

VectorXd mlp_eval(const Mlp& m, const VectorXd& x) {
  VectorXd h = x;
  for (int l = 0; l < m.layers; ++l) {
    h = (m.store->matrix(m.w[l]) * h + m.store->at(m.b[l]).value).eval();
    if (l + 1 < m.layers)
      for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = silu_fn(h[i]);
  }
  return h;
}

NodeId mlp_graph(Graph& g, const Mlp& m, NodeId x) {
  NodeId h = x;
  for (int l = 0; l < m.layers; ++l) {
    h = g.add(g.matvec(g.param(m.w[l]), h), g.param(m.b[l]));
    if (l + 1 < m.layers) h = g.silu(h);
  }
  return h;
}

MlpDual mlp_dual(const Mlp& m, const VectorXd& xv, const MatrixXd& xt) {
  VectorXd v = xv;
  MatrixXd t = xt;
  for (int l = 0; l < m.layers; ++l) {
    const auto w = m.store->matrix(m.w[l]);
    v = (w * v + m.store->at(m.b[l]).value).eval();
    t = (w * t).eval();
    if (l + 1 < m.layers) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        t.row(i) *= silu_d1(v[i]);
        v[i] = silu_fn(v[i]);
      }
    }
  }
  return {std::move(v), std::move(t)};
}

// ---------------------------------------------------------------------------
// Reverse-over-forward node for the neural potential gradient
// ---------------------------------------------------------------------------

// Emits grad_q V = (d/dq) MLP(features(q)) by a forward dual pass seeded with
// the feature Jacobian; its backward replays that recorded computation in
// reverse, so losses built on the gradient differentiate through to q and to
// every weight. Layer caches: xin/tin are the inputs entering layer l, pre
// and tpre the affine outputs before activation.
namespace {

struct NeuralGradQNode final : Node {
  NodeId q;
  std::vector<NodeId> wn, bn;
  std::vector<bool> angular;
  std::vector<VectorXd> xin, pre;
  std::vector<MatrixXd> tin, tpre;
  MatrixXd jac, jac_dq;  // feature seeds at the forward point

  void backward(Graph& g) override {
    const int layers = static_cast<int>(wn.size());
    VectorXd vbar = VectorXd::Zero(pre.back().size());
    MatrixXd tbar = adj.transpose();  // (out x n), out == 1
    for (int l = layers - 1; l >= 0; --l) {
      const MatrixXd& w = g.val(wn[l]);
      g.accum(wn[l],
              (vbar * xin[l].transpose() + tbar * tin[l].transpose()).eval());
      g.accum(bn[l], vbar.eval());
      VectorXd xbar = w.transpose() * vbar;
      MatrixXd tbar_in = w.transpose() * tbar;
      if (l > 0) {
        const VectorXd& a = pre[l - 1];
        vbar.resize(a.size());
        for (Eigen::Index i = 0; i < a.size(); ++i) {
          const double d1 = silu_d1(a[i]);
          const double d2 = silu_d2(a[i]);
          vbar[i] = d1 * xbar[i] + d2 * tpre[l - 1].row(i).dot(tbar_in.row(i));
          tbar_in.row(i) *= d1;
        }
        tbar = std::move(tbar_in);
      } else {
        // Feature seeds: xin[0] = phi(q), tin[0] = J_phi(q); each feature row
        // depends on exactly one coordinate.
        VectorXd qbar = jac.transpose() * xbar;
        for (Eigen::Index j = 0; j < qbar.size(); ++j)
          qbar[j] += jac_dq.col(j).dot(tbar_in.col(j));
        g.accum(q, qbar.eval());
      }
    }
  }
};

NodeId neural_grad_graph(Graph& g, const Mlp& m,
                         const std::vector<bool>& angular, NodeId q) {
  auto n = std::make_unique<NeuralGradQNode>();
  n->q = q;
  n->angular = angular;
  const VectorXd qv = g.val(q).col(0);
  n->jac = features_jac(qv, angular);
  n->jac_dq = features_jac_dq(qv, angular);
  VectorXd v = features(qv, angular);
  MatrixXd t = n->jac;
  for (int l = 0; l < m.layers; ++l) {
    n->wn.push_back(g.param(m.w[l]));
    n->bn.push_back(g.param(m.b[l]));
    n->xin.push_back(v);
    n->tin.push_back(t);
    const MatrixXd& w = g.val(n->wn[l]);
    v = (w * v + g.val(n->bn[l]).col(0)).eval();
    t = (w * t).eval();
    n->pre.push_back(v);
    n->tpre.push_back(t);
    if (l + 1 < m.layers) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        t.row(i) *= silu_d1(v[i]);
        v[i] = silu_fn(v[i]);
      }
    }
  }
  n->val = t.transpose();  // (n x 1): d(scalar out)/dq
  return g.add_node(std::move(n));
}

// ---------------------------------------------------------------------------
// Pair-potential helpers (Lennard-Jones, gravity)
// ---------------------------------------------------------------------------

struct PairTerm {
  double value = 0.0;
  double dv_ds = 0.0;  // derivative in the softened squared distance s
};

PairTerm lj_term(const Potential& v, double s) {
  if (s <= 0.0)
    throw ContractViolation(
        "lennard_jones: coincident particles with zero softening");
  const double u = 1.0 / s;
  const double s6 = std::pow(v.sigma_lj, 6);
  const double t3 = s6 * u * u * u;  // (sigma^2 / s)^3
  const double t6 = t3 * t3;         // (sigma^2 / s)^6
  PairTerm out;
  out.value = 4.0 * v.eps_lj * (t6 - t3);
  out.dv_ds = 4.0 * v.eps_lj * u * (3.0 * t3 - 6.0 * t6);
  return out;
}

PairTerm gravity_term(const Potential& v, double mi, double mj, double s) {
  if (s <= 0.0)
    throw ContractViolation(
        "gravity: coincident particles with zero softening");
  const double rinv = 1.0 / std::sqrt(s);
  PairTerm out;
  out.value = -v.g_const * mi * mj * rinv;
  out.dv_ds = 0.5 * v.g_const * mi * mj * rinv / s;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

Potential make_cosine(ParamStore& store, const std::string& prefix,
                      const VectorXd& a, bool trainable) {
  Potential v;
  v.kind = PotentialKind::Cosine;
  v.n = static_cast<int>(a.size());
  v.angular.assign(static_cast<size_t>(v.n), true);
  v.store = &store;
  v.coeff = store.add(prefix + ".a", v.n, 1, trainable, /*no_decay=*/true);
  store.at(v.coeff).value = a;
  return v;
}

Potential make_quadratic(ParamStore& store, const std::string& prefix,
                         const MatrixXd& k, bool trainable) {
  if (k.rows() != k.cols())
    throw ContractViolation("make_quadratic: stiffness must be square");
  const double scale = std::max(1.0, k.norm());
  if ((k - k.transpose()).norm() > 1e-12 * scale)
    throw ContractViolation("make_quadratic: stiffness must be symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(k);
  if (es.eigenvalues().minCoeff() < -1e-10 * scale)
    throw ContractViolation("make_quadratic: stiffness must be PSD");
  Potential v;
  v.kind = PotentialKind::Quadratic;
  v.n = static_cast<int>(k.rows());
  v.angular.assign(static_cast<size_t>(v.n), false);
  v.store = &store;
  v.coeff = store.add(prefix + ".k", v.n, v.n, trainable, /*no_decay=*/true);
  store.matrix_mut(v.coeff) = k;
  return v;
}

Potential make_rlc(ParamStore& store, const std::string& prefix,
                   double capacitance) {
  if (capacitance <= 0.0)
    throw ContractViolation("make_rlc: capacitance must be positive");
  MatrixXd k(1, 1);
  k << 1.0 / capacitance;
  Potential v = make_quadratic(store, prefix, k, /*trainable=*/false);
  v.kind = PotentialKind::Rlc;
  v.capacitance = capacitance;
  return v;
}

Potential make_heat_exchange(ParamStore& store, const std::string& prefix,
                             double c1, double c2, double kappa) {
  if (c1 <= 0.0 || c2 <= 0.0 || kappa < 0.0)
    throw ContractViolation(
        "make_heat_exchange: need c1, c2 > 0 and kappa >= 0");
  // 1/2 c1 T1^2 + 1/2 c2 T2^2 + 1/2 kappa (T1 - T2)^2 as a stiffness form.
  MatrixXd k(2, 2);
  k << c1 + kappa, -kappa, -kappa, c2 + kappa;
  Potential v = make_quadratic(store, prefix, k, /*trainable=*/false);
  v.kind = PotentialKind::HeatExchange;
  v.c1 = c1;
  v.c2 = c2;
  v.kappa = kappa;
  return v;
}

Potential make_lennard_jones(int particles, int space_dim, double eps,
                             double sigma, double eps_soft) {
  if (particles < 2 || space_dim < 1)
    throw ContractViolation("make_lennard_jones: need >= 2 particles");
  if (eps <= 0.0 || sigma <= 0.0 || eps_soft < 0.0)
    throw ContractViolation(
        "make_lennard_jones: need eps, sigma > 0 and eps_soft >= 0");
  Potential v;
  v.kind = PotentialKind::LennardJones;
  v.particles = particles;
  v.space_dim = space_dim;
  v.n = particles * space_dim;
  v.angular.assign(static_cast<size_t>(v.n), false);
  v.eps_lj = eps;
  v.sigma_lj = sigma;
  v.eps_soft = eps_soft;
  return v;
}

Potential make_gravity(ParamStore& store, const std::string& prefix,
                       int particles, int space_dim, double g_const,
                       const VectorXd& masses, double eps_soft,
                       bool trainable) {
  if (particles < 2 || space_dim < 1 || masses.size() != particles)
    throw ContractViolation("make_gravity: bad particle configuration");
  if (g_const <= 0.0 || eps_soft < 0.0 || masses.minCoeff() <= 0.0)
    throw ContractViolation(
        "make_gravity: need G > 0, masses > 0, eps_soft >= 0");
  Potential v;
  v.kind = PotentialKind::GravityN;
  v.particles = particles;
  v.space_dim = space_dim;
  v.n = particles * space_dim;
  v.angular.assign(static_cast<size_t>(v.n), false);
  v.store = &store;
  v.g_const = g_const;
  v.eps_soft = eps_soft;
  v.coeff =
      store.add(prefix + ".raw_m", particles, 1, trainable, /*no_decay=*/true);
  for (int i = 0; i < particles; ++i)
    store.at(v.coeff).value[i] = softplus_inverse(masses[i]);
  return v;
}

Potential make_neural(ParamStore& store, const std::string& prefix, int n,
                      std::vector<bool> angular, int hidden, int layers,
                      CounterRng& rng) {
  if (static_cast<int>(angular.size()) != n)
    throw ContractViolation("make_neural: angular flags must match dimension");
  Potential v;
  v.kind = PotentialKind::Neural;
  v.n = n;
  v.angular = std::move(angular);
  v.store = &store;
  v.mlp = make_mlp(store, prefix + ".mlp", feature_dim(v.angular), hidden, 1,
                   layers, rng);
  return v;
}

Potential make_hybrid(ParamStore& store, const std::string& prefix,
                      std::shared_ptr<Potential> base,
                      std::shared_ptr<Potential> residual, double rho_init) {
  if (!base || !residual || base->n != residual->n)
    throw ContractViolation("make_hybrid: base/residual dimension mismatch");
  if (softplus_fn(rho_init) > 0.05)
    throw ContractViolation(
        "make_hybrid: residual scale must start <= 0.05");
  Potential v;
  v.kind = PotentialKind::Hybrid;
  v.n = base->n;
  v.angular = base->angular;
  v.store = &store;
  v.base = std::move(base);
  v.residual = std::move(residual);
  v.rho_eps = store.add(prefix + ".rho_eps", 1, 1, /*trainable=*/true,
                        /*no_decay=*/true);
  store.at(v.rho_eps).value[0] = rho_init;
  return v;
}

double hybrid_scale(const Potential& v) {
  if (v.kind != PotentialKind::Hybrid)
    throw ContractViolation("hybrid_scale: not a hybrid potential");
  return softplus_fn(v.store->at(v.rho_eps).value[0]);
}

VectorXd gravity_masses(const Potential& v) {
  if (v.kind != PotentialKind::GravityN)
    throw ContractViolation("gravity_masses: not a gravity potential");
  VectorXd m(v.particles);
  for (int i = 0; i < v.particles; ++i)
    m[i] = softplus_fn(v.store->at(v.coeff).value[i]);
  return m;
}

// ---------------------------------------------------------------------------
// Plain evaluation
// ---------------------------------------------------------------------------

namespace {

void check_dim(const Potential& v, const VectorXd& q, const char* where) {
  if (q.size() != v.n)
    throw ContractViolation(std::string(where) + ": configuration dimension " +
                            std::to_string(q.size()) + ", expected " +
                            std::to_string(v.n));
}

MatrixXd effective_stiffness(const Potential& v) {
  const MatrixXd k = v.store->matrix(v.coeff);
  return 0.5 * (k + k.transpose());
}

}  // namespace

double potential_value(const Potential& v, const VectorXd& q) {
  check_dim(v, q, "potential_value");
  switch (v.kind) {
    case PotentialKind::Cosine: {
      const VectorXd& a = v.store->at(v.coeff).value;
      double s = 0.0;
      for (int i = 0; i < v.n; ++i) s += a[i] * (1.0 - std::cos(q[i]));
      return s;
    }
    case PotentialKind::Quadratic:
    case PotentialKind::Rlc:
    case PotentialKind::HeatExchange:
      return 0.5 * q.dot(effective_stiffness(v) * q);
    case PotentialKind::LennardJones:
    case PotentialKind::GravityN: {
      const VectorXd m = v.kind == PotentialKind::GravityN
                             ? gravity_masses(v)
                             : VectorXd();
      double s = 0.0;
      for (int i = 0; i < v.particles; ++i) {
        for (int j = i + 1; j < v.particles; ++j) {
          const VectorXd diff = q.segment(i * v.space_dim, v.space_dim) -
                                q.segment(j * v.space_dim, v.space_dim);
          const double d2 = diff.squaredNorm() + v.eps_soft * v.eps_soft;
          s += (v.kind == PotentialKind::GravityN
                    ? gravity_term(v, m[i], m[j], d2)
                    : lj_term(v, d2))
                   .value;
        }
      }
      return s;
    }
    case PotentialKind::Neural:
      return mlp_eval(v.mlp, features(q, v.angular))[0];
    case PotentialKind::Hybrid:
      return potential_value(*v.base, q) +
             hybrid_scale(v) * potential_value(*v.residual, q);
  }
  throw ContractViolation("potential_value: unreachable");
}

VectorXd potential_grad(const Potential& v, const VectorXd& q) {
  check_dim(v, q, "potential_grad");
  switch (v.kind) {
    case PotentialKind::Cosine: {
      const VectorXd& a = v.store->at(v.coeff).value;
      VectorXd g(v.n);
      for (int i = 0; i < v.n; ++i) g[i] = a[i] * std::sin(q[i]);
      return g;
    }
    case PotentialKind::Quadratic:
    case PotentialKind::Rlc:
    case PotentialKind::HeatExchange:
      return effective_stiffness(v) * q;
    case PotentialKind::LennardJones:
    case PotentialKind::GravityN: {
      const VectorXd m = v.kind == PotentialKind::GravityN
                             ? gravity_masses(v)
                             : VectorXd();
      VectorXd g = VectorXd::Zero(v.n);
      for (int i = 0; i < v.particles; ++i) {
        for (int j = i + 1; j < v.particles; ++j) {
          const VectorXd diff = q.segment(i * v.space_dim, v.space_dim) -
                                q.segment(j * v.space_dim, v.space_dim);
          const double d2 = diff.squaredNorm() + v.eps_soft * v.eps_soft;
          const PairTerm t = v.kind == PotentialKind::GravityN
                                 ? gravity_term(v, m[i], m[j], d2)
                                 : lj_term(v, d2);
          const VectorXd f = 2.0 * t.dv_ds * diff;
          g.segment(i * v.space_dim, v.space_dim) += f;
          g.segment(j * v.space_dim, v.space_dim) -= f;
        }
      }
      return g;
    }
    case PotentialKind::Neural: {
      const MlpDual d =
          mlp_dual(v.mlp, features(q, v.angular), features_jac(q, v.angular));
      return d.tangent.transpose();
    }
    case PotentialKind::Hybrid:
      return potential_grad(*v.base, q) +
             hybrid_scale(v) * potential_grad(*v.residual, q);
  }
  throw ContractViolation("potential_grad: unreachable");
}

// ---------------------------------------------------------------------------
// Graph paths
// ---------------------------------------------------------------------------

namespace {

// Symmetrized stiffness node; coefficient gradients flow when trainable.
NodeId stiffness_graph(Graph& g, const Potential& v) {
  NodeId k = g.param(v.coeff);
  return g.scale(g.add(k, g.transpose(k)), 0.5);
}

struct PairNodes {
  NodeId value = -1;
  NodeId dv_ds = -1;  // 1x1
};

PairNodes lj_pair_graph(Graph& g, const Potential& v, NodeId s) {
  const double s6 = std::pow(v.sigma_lj, 6);
  NodeId u = g.div(g.scalar(1.0), s);
  NodeId u3 = g.mul(g.mul(u, u), u);
  NodeId t3 = g.scale(u3, s6);
  NodeId t6 = g.scale(g.mul(u3, u3), s6 * s6);
  PairNodes out;
  out.value = g.scale(g.sub(t6, t3), 4.0 * v.eps_lj);
  out.dv_ds = g.mul(g.scale(g.sub(g.scale(t3, 3.0), g.scale(t6, 6.0)),
                            4.0 * v.eps_lj),
                    u);
  return out;
}

PairNodes gravity_pair_graph(Graph& g, const Potential& v, NodeId mij,
                             NodeId s) {
  NodeId rinv = g.div(g.scalar(1.0), g.sqrt_(s));
  PairNodes out;
  out.value = g.scale(g.mul(mij, rinv), -v.g_const);
  out.dv_ds = g.scale(g.mul(mij, g.div(rinv, s)), 0.5 * v.g_const);
  return out;
}

// Softened squared pair distance node between particle blocks i and j.
NodeId pair_s_graph(Graph& g, const Potential& v, NodeId q, int i, int j) {
  NodeId diff = g.sub(g.rows(q, i * v.space_dim, v.space_dim),
                      g.rows(q, j * v.space_dim, v.space_dim));
  return g.add(g.sumsq(diff), g.scalar(v.eps_soft * v.eps_soft));
}

NodeId gravity_masses_graph(Graph& g, const Potential& v) {
  return g.softplus(g.param(v.coeff));
}

}  // namespace

NodeId potential_value_graph(Graph& g, const Potential& v, NodeId q) {
  check_dim(v, g.val(q).col(0), "potential_value_graph");
  switch (v.kind) {
    case PotentialKind::Cosine: {
      NodeId ones = g.constant(MatrixXd::Ones(v.n, 1));
      return g.dot(g.param(v.coeff), g.sub(ones, g.cos_(q)));
    }
    case PotentialKind::Quadratic:
    case PotentialKind::Rlc:
    case PotentialKind::HeatExchange:
      return g.scale(g.dot(q, g.matvec(stiffness_graph(g, v), q)), 0.5);
    case PotentialKind::LennardJones:
    case PotentialKind::GravityN: {
      NodeId masses = v.kind == PotentialKind::GravityN
                          ? gravity_masses_graph(g, v)
                          : NodeId(-1);
      NodeId total = -1;
      for (int i = 0; i < v.particles; ++i) {
        for (int j = i + 1; j < v.particles; ++j) {
          NodeId s = pair_s_graph(g, v, q, i, j);
          NodeId term;
          if (v.kind == PotentialKind::GravityN) {
            NodeId mij = g.mul(g.rows(masses, i, 1), g.rows(masses, j, 1));
            term = gravity_pair_graph(g, v, mij, s).value;
          } else {
            term = lj_pair_graph(g, v, s).value;
          }
          total = total < 0 ? term : g.add(total, term);
        }
      }
      return total;
    }
    case PotentialKind::Neural:
      return mlp_graph(g, v.mlp, features_graph(g, q, v.angular));
    case PotentialKind::Hybrid: {
      NodeId eps = g.softplus(g.param(v.rho_eps));
      return g.add(potential_value_graph(g, *v.base, q),
                   g.mul(eps, potential_value_graph(g, *v.residual, q)));
    }
  }
  throw ContractViolation("potential_value_graph: unreachable");
}

NodeId potential_grad_graph(Graph& g, const Potential& v, NodeId q) {
  check_dim(v, g.val(q).col(0), "potential_grad_graph");
  switch (v.kind) {
    case PotentialKind::Cosine:
      return g.mul(g.param(v.coeff), g.sin_(q));
    case PotentialKind::Quadratic:
    case PotentialKind::Rlc:
    case PotentialKind::HeatExchange:
      return g.matvec(stiffness_graph(g, v), q);
    case PotentialKind::LennardJones:
    case PotentialKind::GravityN: {
      NodeId masses = v.kind == PotentialKind::GravityN
                          ? gravity_masses_graph(g, v)
                          : NodeId(-1);
      std::vector<NodeId> per(static_cast<size_t>(v.particles), -1);
      for (int i = 0; i < v.particles; ++i) {
        for (int j = i + 1; j < v.particles; ++j) {
          NodeId diff = g.sub(g.rows(q, i * v.space_dim, v.space_dim),
                              g.rows(q, j * v.space_dim, v.space_dim));
          NodeId s = g.add(g.sumsq(diff), g.scalar(v.eps_soft * v.eps_soft));
          NodeId dv_ds;
          if (v.kind == PotentialKind::GravityN) {
            NodeId mij = g.mul(g.rows(masses, i, 1), g.rows(masses, j, 1));
            dv_ds = gravity_pair_graph(g, v, mij, s).dv_ds;
          } else {
            dv_ds = lj_pair_graph(g, v, s).dv_ds;
          }
          NodeId f = g.mul(diff, g.scale(dv_ds, 2.0));
          per[static_cast<size_t>(i)] =
              per[static_cast<size_t>(i)] < 0
                  ? f
                  : g.add(per[static_cast<size_t>(i)], f);
          per[static_cast<size_t>(j)] =
              per[static_cast<size_t>(j)] < 0
                  ? g.neg(f)
                  : g.sub(per[static_cast<size_t>(j)], f);
        }
      }
      return g.concat_rows(per);
    }
    case PotentialKind::Neural:
      return neural_grad_graph(g, v.mlp, v.angular, q);
    case PotentialKind::Hybrid: {
      NodeId eps = g.softplus(g.param(v.rho_eps));
      return g.add(potential_grad_graph(g, *v.base, q),
                   g.mul(potential_grad_graph(g, *v.residual, q), eps));
    }
  }
  throw ContractViolation("potential_grad_graph: unreachable");
}

}  // namespace phast
