#include "phast/structured_linalg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

#include "phast/features.hpp"
#include "phast/scalar_ops.hpp"

namespace phast {

namespace {

std::string format_config(const Eigen::VectorXd& q) {
  std::ostringstream os;
  os << "q = [";
  for (Eigen::Index i = 0; i < q.size(); ++i)
    os << (i ? ", " : "") << q[i];
  os << "]";
  return os.str();
}

void fill_uniform(ParamStore& store, int id, CounterRng& rng, double bound) {
  auto& e = store.at(id);
  for (Eigen::Index i = 0; i < e.value.size(); ++i)
    e.value[i] = rng.uniform(-bound, bound);
}

// Draw a direction column, re-seeding the rare degenerate draw so the
// normalization floor is never active at initialization.
void fill_directions(ParamStore& store, int id, int n, int r, CounterRng& rng) {
  auto& e = store.at(id);
  for (int j = 0; j < r; ++j) {
    for (int tries = 0; tries < 100; ++tries) {
      double nrm2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double x = rng.uniform(-1.0, 1.0);
        e.value[static_cast<Eigen::Index>(j) * n + i] = x;
        nrm2 += x * x;
      }
      if (std::sqrt(nrm2) >= 1e-8) break;
      if (tries == 99)
        throw NumericFault("direction initialization failed to find a "
                           "non-degenerate draw");
    }
  }
}

constexpr double kDirFloor = 1e-8;

}  // namespace

// ---------------------------------------------------------------------------
// Damping field
// ---------------------------------------------------------------------------

DampingField make_damping_field(ParamStore& store, const std::string& prefix,
                                int n, int r, std::vector<bool> angular,
                                double cap, bool d0_fixed, double d0_init,
                                bool constant_heads, int head_hidden,
                                CounterRng& rng) {
  if (n < 1 || r < 0) throw ContractViolation("make_damping_field: bad n or r");
  if (static_cast<int>(angular.size()) != n)
    throw ContractViolation("make_damping_field: angular mask length");
  DampingField f;
  f.n = n;
  f.r = r;
  f.cap = cap;
  f.d0_fixed = d0_fixed;
  f.d0_value = d0_fixed ? d0_init : 0.0;
  f.constant_heads = constant_heads;
  f.head_hidden = head_hidden;
  f.angular = std::move(angular);
  f.store = &store;

  if (!d0_fixed) {
    f.raw_d0 = store.add(prefix + ".raw_d0", 1, 1, true, /*no_decay=*/true);
    store.at(f.raw_d0).value[0] = softplus_inverse(d0_init);
  }
  if (r == 0) return f;

  if (constant_heads) {
    f.raw_beta = store.add(prefix + ".raw_beta", r);
    const double beta_init = cap >= 0.0 ? 0.0 : softplus_inverse(0.1);
    store.at(f.raw_beta).value.setConstant(beta_init);
    f.raw_k = store.add(prefix + ".raw_k", n, r);
    fill_directions(store, f.raw_k, n, r, rng);
  } else {
    const int fdim = feature_dim(f.angular);
    const int out = r + r * n;
    f.w1 = store.add(prefix + ".head.w1", head_hidden, fdim);
    f.b1 = store.add(prefix + ".head.b1", head_hidden);
    f.w2 = store.add(prefix + ".head.w2", out, head_hidden);
    f.b2 = store.add(prefix + ".head.b2", out);
    fill_uniform(store, f.w1, rng, std::sqrt(1.0 / fdim));
    fill_uniform(store, f.b1, rng, std::sqrt(1.0 / fdim));
    fill_uniform(store, f.w2, rng, std::sqrt(1.0 / head_hidden));
    fill_uniform(store, f.b2, rng, std::sqrt(1.0 / head_hidden));
  }
  return f;
}

DampingField make_diag_law_damping(
    int n, std::function<Eigen::VectorXd(const Eigen::VectorXd&)> law) {
  if (n < 1 || !law)
    throw ContractViolation("make_diag_law_damping: bad dimension or law");
  DampingField f;
  f.n = n;
  f.r = 0;
  f.d0_fixed = true;
  f.angular.assign(static_cast<size_t>(n), false);
  f.diag_law = std::move(law);
  return f;
}

HeadEval damping_heads(const DampingField& f, const Eigen::VectorXd& q) {
  if (q.size() != f.n)
    throw ContractViolation("damping_heads: configuration dimension");
  if (f.diag_law)
    throw ContractViolation(
        "damping_heads: fixed-law damping has no head decomposition");
  HeadEval h;
  h.d0 = f.d0_fixed ? f.d0_value
                    : softplus_fn(f.store->at(f.raw_d0).value[0]);
  h.beta.resize(f.r);
  h.K.resize(f.n, f.r);
  if (f.r > 0) {
    Eigen::VectorXd raw_beta(f.r);
    Eigen::MatrixXd raw_k(f.n, f.r);
    if (f.constant_heads) {
      raw_beta = f.store->at(f.raw_beta).value;
      raw_k = f.store->matrix(f.raw_k);
    } else {
      const Eigen::VectorXd phi = features(q, f.angular);
      const Eigen::VectorXd pre =
          f.store->matrix(f.w1) * phi + f.store->at(f.b1).value;
      Eigen::VectorXd hid(pre.size());
      for (Eigen::Index i = 0; i < pre.size(); ++i) hid[i] = silu_fn(pre[i]);
      const Eigen::VectorXd raw =
          f.store->matrix(f.w2) * hid + f.store->at(f.b2).value;
      raw_beta = raw.head(f.r);
      for (int i = 0; i < f.r; ++i)
        raw_k.col(i) = raw.segment(f.r + static_cast<Eigen::Index>(i) * f.n, f.n);
    }
    for (int i = 0; i < f.r; ++i) {
      h.beta[i] = f.cap >= 0.0 ? (f.cap / f.r) * sigmoid_fn(raw_beta[i])
                               : softplus_fn(raw_beta[i]);
      h.K.col(i) = raw_k.col(i) / std::max(raw_k.col(i).norm(), kDirFloor);
    }
  }
  if (!std::isfinite(h.d0) || !h.beta.allFinite() || !h.K.allFinite())
    throw NumericFault("damping_heads: non-finite head output at " +
                       format_config(q));
  return h;
}

Eigen::VectorXd damping_apply(const DampingField& f, const Eigen::VectorXd& q,
                              const Eigen::VectorXd& v) {
  if (v.size() != f.n)
    throw ContractViolation("damping_apply: vector dimension");
  if (f.diag_law) return (f.diag_law(q).array() * v.array()).matrix();
  const HeadEval h = damping_heads(f, q);
  Eigen::VectorXd out = h.d0 * v;
  for (int i = 0; i < f.r; ++i)
    out += h.beta[i] * (h.K.col(i).dot(v)) * h.K.col(i);
  return out;
}

Eigen::MatrixXd damping_matrix(const DampingField& f,
                               const Eigen::VectorXd& q) {
  if (f.diag_law) return f.diag_law(q).asDiagonal();
  const HeadEval h = damping_heads(f, q);
  Eigen::MatrixXd D =
      h.d0 * Eigen::MatrixXd::Identity(f.n, f.n);
  // Materialize each outer product before scaling so (i,j) and (j,i) stay
  // bit-identical; folding the scalar into the product lets Eigen reassociate.
  for (int i = 0; i < f.r; ++i) {
    const Eigen::MatrixXd outer = h.K.col(i) * h.K.col(i).transpose();
    D += h.beta[i] * outer;
  }
  return D;
}

Eigen::VectorXd damping_diagonal(const DampingField& f,
                                 const Eigen::VectorXd& q) {
  if (f.diag_law) return f.diag_law(q);
  const HeadEval h = damping_heads(f, q);
  Eigen::VectorXd d = Eigen::VectorXd::Constant(f.n, h.d0);
  for (int i = 0; i < f.r; ++i)
    d += h.beta[i] * h.K.col(i).cwiseProduct(h.K.col(i));
  return d;
}

DampingNodes damping_heads_graph(Graph& g, const DampingField& f, NodeId q) {
  if (f.diag_law)
    throw ContractViolation(
        "damping_heads_graph: fixed-law damping has no graph form");
  DampingNodes out;
  out.d0 = f.d0_fixed ? g.scalar(f.d0_value)
                      : g.softplus(g.param(f.raw_d0));
  if (f.r == 0) return out;

  std::vector<NodeId> raw_beta(f.r);
  std::vector<NodeId> raw_k(f.r);
  if (f.constant_heads) {
    NodeId rb = g.param(f.raw_beta);
    NodeId rk = g.param(f.raw_k);
    for (int i = 0; i < f.r; ++i) {
      raw_beta[i] = g.rows(rb, i, 1);
      raw_k[i] = g.col(rk, i);
    }
  } else {
    NodeId phi = features_graph(g, q, f.angular);
    NodeId hid = g.silu(g.add(g.matvec(g.param(f.w1), phi), g.param(f.b1)));
    NodeId raw = g.add(g.matvec(g.param(f.w2), hid), g.param(f.b2));
    for (int i = 0; i < f.r; ++i) {
      raw_beta[i] = g.rows(raw, i, 1);
      raw_k[i] = g.rows(raw, f.r + i * f.n, f.n);
    }
  }
  for (int i = 0; i < f.r; ++i) {
    out.beta.push_back(f.cap >= 0.0
                           ? g.scale(g.sigmoid(raw_beta[i]), f.cap / f.r)
                           : g.softplus(raw_beta[i]));
    out.k.push_back(g.normalize(raw_k[i], kDirFloor));
    if (!g.val(out.beta.back()).allFinite() || !g.val(out.k.back()).allFinite())
      throw NumericFault("damping heads: non-finite output at " +
                         format_config(g.val(q).col(0)));
  }
  return out;
}

NodeId damping_apply_graph(Graph& g, const DampingNodes& h, NodeId v) {
  NodeId out = g.mul(v, h.d0);
  for (size_t i = 0; i < h.beta.size(); ++i) {
    NodeId s = g.mul(g.dot(h.k[i], v), h.beta[i]);
    out = g.add(out, g.mul(h.k[i], s));
  }
  return out;
}

NodeId damping_quadform_graph(Graph& g, const DampingNodes& h, NodeId v) {
  NodeId out = g.mul(g.sumsq(v), h.d0);
  for (size_t i = 0; i < h.beta.size(); ++i)
    out = g.add(out, g.mul(g.square(g.dot(h.k[i], v)), h.beta[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Mass models: numeric paths
// ---------------------------------------------------------------------------

MassModel identity_mass(int n) { return diag_mass(Eigen::VectorXd::Ones(n)); }

MassModel diag_mass(const Eigen::VectorXd& d) {
  if ((d.array() <= 0.0).any())
    throw ContractViolation("diag_mass: diagonal must be positive");
  MassModel m;
  m.kind = MassModel::Kind::ConstantDiagLowRank;
  m.d = d;
  m.U.resize(d.size(), 0);
  return m;
}

MassModel diag_lowrank_mass(const Eigen::VectorXd& d,
                            const Eigen::MatrixXd& U) {
  if ((d.array() <= 0.0).any())
    throw ContractViolation("diag_lowrank_mass: diagonal must be positive");
  if (U.rows() != d.size())
    throw ContractViolation("diag_lowrank_mass: factor row count");
  MassModel m;
  m.kind = MassModel::Kind::ConstantDiagLowRank;
  m.d = d;
  m.U = U;
  return m;
}

MassModel analytic_mass(std::shared_ptr<const AnalyticMass> closure) {
  if (!closure) throw ContractViolation("analytic_mass: null closure");
  MassModel m;
  m.kind = MassModel::Kind::KnownAnalytic;
  m.analytic = std::move(closure);
  return m;
}

namespace {

// Fixed dense matrix as a degenerate analytic closure (zero derivatives).
struct ConstDenseMass final : AnalyticMass {
  Eigen::MatrixXd m;
  explicit ConstDenseMass(Eigen::MatrixXd mm) : m(std::move(mm)) {}
  int dim() const override { return static_cast<int>(m.rows()); }
  Eigen::MatrixXd mass(const Eigen::VectorXd&) const override { return m; }
  std::vector<Eigen::MatrixXd> mass_jac(const Eigen::VectorXd&) const override {
    return std::vector<Eigen::MatrixXd>(
        m.rows(), Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  }
  Eigen::MatrixXd mass_hess_quad(const Eigen::VectorXd&,
                                 const Eigen::VectorXd&) const override {
    return Eigen::MatrixXd::Zero(m.rows(), m.cols());
  }
};

}  // namespace

MassModel const_dense_mass(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols())
    throw ContractViolation("const_dense_mass: matrix must be square");
  return analytic_mass(std::make_shared<ConstDenseMass>(m));
}

Eigen::MatrixXd mass_matrix(const MassModel& m, const Eigen::VectorXd& q) {
  if (m.kind == MassModel::Kind::KnownAnalytic) return m.analytic->mass(q);
  Eigen::MatrixXd out = m.d.asDiagonal();
  if (m.U.cols() > 0) out += m.U * m.U.transpose();
  return out;
}

Eigen::VectorXd mass_solve(const MassModel& m, const Eigen::VectorXd& q,
                           const Eigen::VectorXd& p, FlopCount* flops) {
  if (p.size() != m.dim()) throw ContractViolation("mass_solve: p dimension");
  if (m.kind == MassModel::Kind::KnownAnalytic) {
    Eigen::LLT<Eigen::MatrixXd> llt(m.analytic->mass(q));
    if (llt.info() != Eigen::Success)
      throw NumericFault("mass_solve: analytic mass not SPD at " +
                         format_config(q));
    return llt.solve(p);
  }
  const Eigen::Index n = m.d.size();
  const Eigen::Index r = m.U.cols();
  // Woodbury: z = diag(d)^{-1} p, Z = diag(d)^{-1} U, A = I + U^T Z,
  // c = A^{-1} U^T z, v = z - Z c.
  Eigen::VectorXd z = p.cwiseQuotient(m.d);
  if (flops) flops->mul += n;
  if (r == 0) return z;
  Eigen::MatrixXd Z = m.d.cwiseInverse().asDiagonal() * m.U;
  if (flops) flops->mul += 2 * n * r;  // inverse + scaling
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(r, r) + m.U.transpose() * Z;
  if (flops) {
    flops->mul += n * r * r;
    flops->add += n * r * r + r;
  }
  Eigen::VectorXd uz = m.U.transpose() * z;
  if (flops) {
    flops->mul += n * r;
    flops->add += n * r;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericFault("mass_solve: Woodbury core not positive definite "
                       "(invariant breach)");
  Eigen::VectorXd c = ldlt.solve(uz);
  if (flops) {
    flops->mul += r * r * r + r * r;
    flops->add += r * r * r + r * r;
  }
  Eigen::VectorXd v = z - Z * c;
  if (flops) {
    flops->mul += n * r;
    flops->add += n * r + n;
  }
  return v;
}

Eigen::VectorXd mass_apply(const MassModel& m, const Eigen::VectorXd& q,
                           const Eigen::VectorXd& v) {
  if (v.size() != m.dim()) throw ContractViolation("mass_apply: v dimension");
  if (m.kind == MassModel::Kind::KnownAnalytic)
    return m.analytic->mass(q) * v;
  Eigen::VectorXd out = m.d.cwiseProduct(v);
  if (m.U.cols() > 0) out += m.U * (m.U.transpose() * v);
  return out;
}

// ---------------------------------------------------------------------------
// Learned mass parameterization
// ---------------------------------------------------------------------------

MassParam make_mass_param(ParamStore& store, const std::string& prefix, int n,
                          int rank, CounterRng& rng) {
  if (n < 1 || rank < 0) throw ContractViolation("make_mass_param: bad shape");
  MassParam mp;
  mp.n = n;
  mp.rank = rank;
  mp.store = &store;
  mp.raw_d = store.add(prefix + ".raw_d", n, 1, true, /*no_decay=*/true);
  store.at(mp.raw_d).value.setConstant(softplus_inverse(1.0));
  if (rank > 0) {
    mp.raw_alpha =
        store.add(prefix + ".raw_alpha", rank, 1, true, /*no_decay=*/true);
    store.at(mp.raw_alpha).value.setConstant(softplus_inverse(0.01));
    mp.raw_k = store.add(prefix + ".raw_k", n, rank, true, /*no_decay=*/true);
    fill_directions(store, mp.raw_k, n, rank, rng);
  }
  return mp;
}

MassModel materialize(const MassParam& mp) {
  Eigen::VectorXd d(mp.n);
  const auto& raw_d = mp.store->at(mp.raw_d).value;
  for (int i = 0; i < mp.n; ++i)
    d[i] = softplus_fn(raw_d[i]) + mp.diag_floor;
  Eigen::MatrixXd U(mp.n, mp.rank);
  if (mp.rank > 0) {
    const auto& raw_alpha = mp.store->at(mp.raw_alpha).value;
    const auto raw_k = mp.store->matrix(mp.raw_k);
    for (int i = 0; i < mp.rank; ++i) {
      const double alpha = softplus_fn(raw_alpha[i]);
      U.col(i) = std::sqrt(alpha) * raw_k.col(i) /
                 std::max(raw_k.col(i).norm(), kDirFloor);
    }
  }
  return diag_lowrank_mass(d, U);
}

MassNodes mass_param_nodes(Graph& g, const MassParam& mp) {
  MassNodes out;
  NodeId soft_d = g.softplus(g.param(mp.raw_d));
  out.d = g.add(soft_d,
                g.constant(Eigen::VectorXd::Constant(mp.n, mp.diag_floor)));
  if (mp.rank > 0) {
    NodeId raw_alpha = g.param(mp.raw_alpha);
    NodeId raw_k = g.param(mp.raw_k);
    std::vector<NodeId> cols;
    for (int i = 0; i < mp.rank; ++i) {
      NodeId scale_i = g.sqrt_(g.softplus(g.rows(raw_alpha, i, 1)));
      cols.push_back(g.mul(g.normalize(g.col(raw_k, i), kDirFloor), scale_i));
    }
    out.U = g.concat_cols(cols);
  }
  return out;
}

MassNodes mass_const_nodes(Graph& g, const MassModel& m) {
  if (m.kind != MassModel::Kind::ConstantDiagLowRank)
    throw ContractViolation("mass_const_nodes: needs a diag-plus-low-rank model");
  MassNodes out;
  out.d = g.constant(m.d);
  if (m.U.cols() > 0) out.U = g.constant(Eigen::MatrixXd(m.U));
  return out;
}

// ---------------------------------------------------------------------------
// Mass graph nodes
// ---------------------------------------------------------------------------

namespace {

// v = (diag(d) + U U^T)^{-1} p. Adjoint of a linear solve: with w = M^{-1}
// vbar, pbar += w and Mbar = -w v^T; the diagonal picks out Mbar's diagonal
// and the factor gets the symmetrized chain (Mbar + Mbar^T) U.
struct MassSolveDlrNode final : Node {
  NodeId p, d, U;  // U may be -1
  Eigen::MatrixXd Z;
  Eigen::LDLT<Eigen::MatrixXd> core;
  MassSolveDlrNode(NodeId p_, NodeId d_, NodeId U_) : p(p_), d(d_), U(U_) {}

  Eigen::VectorXd minv(Graph& g, const Eigen::VectorXd& x) const {
    Eigen::VectorXd z = x.cwiseQuotient(g.val(d).col(0));
    if (U < 0) return z;
    return z - Z * core.solve(g.val(U).transpose() * z);
  }

  void backward(Graph& g) override {
    const Eigen::VectorXd v = val.col(0);
    const Eigen::VectorXd w = minv(g, adj.col(0));
    g.accum(p, w);
    g.accum(d, (-w.cwiseProduct(v)).eval());
    if (U >= 0) {
      const Eigen::MatrixXd& Uv = g.val(U);
      g.accum(U, (-(w * (v.transpose() * Uv) + v * (w.transpose() * Uv)))
                     .eval());
    }
  }
};

struct MassApplyDlrNode final : Node {
  NodeId x, d, U;
  MassApplyDlrNode(NodeId x_, NodeId d_, NodeId U_) : x(x_), d(d_), U(U_) {}
  void backward(Graph& g) override {
    const Eigen::VectorXd xv = g.val(x).col(0);
    const Eigen::VectorXd yb = adj.col(0);
    Eigen::VectorXd xb = g.val(d).col(0).cwiseProduct(yb);
    if (U >= 0) {
      const Eigen::MatrixXd& Uv = g.val(U);
      xb += Uv * (Uv.transpose() * yb);
      g.accum(U, (yb * (xv.transpose() * Uv) + xv * (yb.transpose() * Uv))
                     .eval());
    }
    g.accum(x, xb);
    g.accum(d, xv.cwiseProduct(yb).eval());
  }
};

struct MassSolveAnalyticNode final : Node {
  NodeId q, p;
  std::shared_ptr<const AnalyticMass> am;
  Eigen::LLT<Eigen::MatrixXd> llt;
  MassSolveAnalyticNode(NodeId q_, NodeId p_,
                        std::shared_ptr<const AnalyticMass> m)
      : q(q_), p(p_), am(std::move(m)) {}
  void backward(Graph& g) override {
    const Eigen::VectorXd v = val.col(0);
    const Eigen::VectorXd w = llt.solve(adj.col(0));
    g.accum(p, w);
    const auto jac = am->mass_jac(g.val(q).col(0));
    Eigen::VectorXd qb(jac.size());
    for (size_t i = 0; i < jac.size(); ++i)
      qb[static_cast<Eigen::Index>(i)] = -w.dot(jac[i] * v);
    g.accum(q, qb);
  }
};

// g_i = dT/dq_i = -1/2 v^T (dM/dq_i) v with v = M(q)^{-1} p.
struct KineticGradAnalyticNode final : Node {
  NodeId q, p;
  std::shared_ptr<const AnalyticMass> am;
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd v;
  KineticGradAnalyticNode(NodeId q_, NodeId p_,
                          std::shared_ptr<const AnalyticMass> m)
      : q(q_), p(p_), am(std::move(m)) {}
  void backward(Graph& g) override {
    const Eigen::VectorXd qv = g.val(q).col(0);
    const Eigen::VectorXd gb = adj.col(0);
    const auto jac = am->mass_jac(qv);
    const Eigen::Index n = qv.size();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
      w += gb[i] * (jac[static_cast<size_t>(i)] * v);
    const Eigen::VectorXd u = llt.solve(w);
    g.accum(p, (-u).eval());
    // qbar_j = -1/2 (Hquad gbar)_j + u^T (dM/dq_j) v, where
    // Hquad(i, j) = v^T (d2M/dq_i dq_j) v.
    const Eigen::MatrixXd hq = am->mass_hess_quad(qv, v);
    Eigen::VectorXd qb = -0.5 * (hq * gb);
    for (Eigen::Index j = 0; j < n; ++j)
      qb[j] += u.dot(jac[static_cast<size_t>(j)] * v);
    g.accum(q, qb);
  }
};

}  // namespace

NodeId mass_solve_dlr(Graph& g, NodeId p, NodeId d, NodeId U) {
  const Eigen::Index n = g.val(p).rows();
  if (g.val(d).rows() != n || g.val(d).cols() != 1 || g.val(p).cols() != 1)
    throw ContractViolation("mass_solve_dlr: shape mismatch");
  if (U >= 0 && g.val(U).rows() != n)
    throw ContractViolation("mass_solve_dlr: factor row count");
  auto node = std::make_unique<MassSolveDlrNode>(p, d, U);
  const Eigen::VectorXd& dv = g.val(d).col(0);
  Eigen::VectorXd z = g.val(p).col(0).cwiseQuotient(dv);
  if (U < 0) {
    node->val = z;
  } else {
    const Eigen::MatrixXd& Uv = g.val(U);
    const Eigen::Index r = Uv.cols();
    node->Z = dv.cwiseInverse().asDiagonal() * Uv;
    Eigen::MatrixXd A =
        Eigen::MatrixXd::Identity(r, r) + Uv.transpose() * node->Z;
    node->core.compute(A);
    if (node->core.info() != Eigen::Success || !node->core.isPositive())
      throw NumericFault("mass_solve_dlr: Woodbury core not positive definite");
    node->val = z - node->Z * node->core.solve(Uv.transpose() * z);
  }
  return g.add_node(std::move(node));
}

NodeId mass_apply_dlr(Graph& g, NodeId x, NodeId d, NodeId U) {
  const Eigen::Index n = g.val(x).rows();
  if (g.val(d).rows() != n || g.val(x).cols() != 1)
    throw ContractViolation("mass_apply_dlr: shape mismatch");
  auto node = std::make_unique<MassApplyDlrNode>(x, d, U);
  Eigen::VectorXd y = g.val(d).col(0).cwiseProduct(g.val(x).col(0));
  if (U >= 0) {
    const Eigen::MatrixXd& Uv = g.val(U);
    y += Uv * (Uv.transpose() * g.val(x).col(0));
  }
  node->val = y;
  return g.add_node(std::move(node));
}

NodeId mass_solve_analytic(Graph& g, NodeId q, NodeId p,
                           std::shared_ptr<const AnalyticMass> m) {
  if (!m) throw ContractViolation("mass_solve_analytic: null closure");
  if (g.val(p).rows() != m->dim() || g.val(q).rows() != m->dim())
    throw ContractViolation("mass_solve_analytic: shape mismatch");
  auto node = std::make_unique<MassSolveAnalyticNode>(q, p, m);
  node->llt.compute(m->mass(g.val(q).col(0)));
  if (node->llt.info() != Eigen::Success)
    throw NumericFault("mass_solve_analytic: mass not SPD at " +
                       format_config(g.val(q).col(0)));
  node->val = node->llt.solve(g.val(p).col(0));
  return g.add_node(std::move(node));
}

NodeId kinetic_grad_analytic(Graph& g, NodeId q, NodeId p,
                             std::shared_ptr<const AnalyticMass> m) {
  if (!m) throw ContractViolation("kinetic_grad_analytic: null closure");
  if (g.val(p).rows() != m->dim() || g.val(q).rows() != m->dim())
    throw ContractViolation("kinetic_grad_analytic: shape mismatch");
  auto node = std::make_unique<KineticGradAnalyticNode>(q, p, m);
  const Eigen::VectorXd qv = g.val(q).col(0);
  node->llt.compute(m->mass(qv));
  if (node->llt.info() != Eigen::Success)
    throw NumericFault("kinetic_grad_analytic: mass not SPD at " +
                       format_config(qv));
  node->v = node->llt.solve(g.val(p).col(0));
  const auto jac = m->mass_jac(qv);
  Eigen::VectorXd out(qv.size());
  for (Eigen::Index i = 0; i < qv.size(); ++i)
    out[i] = -0.5 * node->v.dot(jac[static_cast<size_t>(i)] * node->v);
  node->val = out;
  return g.add_node(std::move(node));
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

double stiffness_proxy(const DampingField& f, const MassModel& m,
                       const Eigen::VectorXd& q, double dt) {
  if (dt <= 0.0) throw ContractViolation("stiffness_proxy: dt must be > 0");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> dsolve(damping_matrix(f, q));
  if (dsolve.info() != Eigen::Success)
    throw NumericFault("stiffness_proxy: damping eigensolve failed");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> msolve(mass_matrix(m, q));
  if (msolve.info() != Eigen::Success)
    throw NumericFault("stiffness_proxy: mass eigensolve failed");
  const double dmax = dsolve.eigenvalues().maxCoeff();
  const double mmin = msolve.eigenvalues().minCoeff();
  if (mmin <= 0.0)
    throw NumericFault("stiffness_proxy: mass not positive definite");
  return 0.5 * dt * dmax / mmin;
}

Eigen::VectorXcd linearized_spectrum(const Eigen::MatrixXd& J,
                                     const Eigen::MatrixXd& R,
                                     const Eigen::MatrixXd& Q) {
  const Eigen::Index n = J.rows();
  if (J.cols() != n || R.rows() != n || R.cols() != n || Q.rows() != n ||
      Q.cols() != n)
    throw ContractViolation("linearized_spectrum: dimension mismatch");
  const double scale = 1.0 + J.norm() + R.norm() + Q.norm();
  if ((J + J.transpose()).norm() > 1e-10 * scale)
    throw ContractViolation("linearized_spectrum: J must be skew-symmetric");
  if ((R - R.transpose()).norm() > 1e-10 * scale ||
      (Q - Q.transpose()).norm() > 1e-10 * scale)
    throw ContractViolation("linearized_spectrum: R and Q must be symmetric");
  Eigen::EigenSolver<Eigen::MatrixXd> es((J - R) * Q,
                                         /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw NumericFault("linearized_spectrum: eigensolver did not converge");
  return es.eigenvalues();
}

}  // namespace phast
