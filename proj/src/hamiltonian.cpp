#include "phast/hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "phast/scalar_ops.hpp"

namespace phast {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::Known: return "known";
    case Regime::Partial: return "partial";
    case Regime::Unknown: return "unknown";
  }
  throw ContractViolation("regime_name: unreachable");
}

Regime regime_from_name(const std::string& name) {
  if (name == "known") return Regime::Known;
  if (name == "partial") return Regime::Partial;
  if (name == "unknown") return Regime::Unknown;
  throw ContractViolation("regime_from_name: '" + name +
                          "' (expected known|partial|unknown)");
}

HamiltonianModel make_model(ParamStore& store, const std::string& prefix,
                            Regime regime, int n, std::vector<bool> angular,
                            std::shared_ptr<Potential> v_true,
                            std::optional<MassModel> m_true,
                            const ModelOptions& opt, CounterRng& rng) {
  if (n < 1 || static_cast<int>(angular.size()) != n)
    throw ContractViolation("make_model: bad dimension or angular mask");
  if (opt.substeps < 1)
    throw ContractViolation("make_model: substeps must be >= 1");
  HamiltonianModel m;
  m.regime = regime;
  m.n = n;
  m.angular = angular;
  m.store = &store;
  m.substeps = opt.substeps;

  if (opt.dt_init <= 0.0)
    throw ContractViolation("make_model: dt_init must be positive");
  m.dt_model = store.add(prefix + ".dt_model", opt.substeps, 1,
                         opt.dt_learnable, /*no_decay=*/true);
  store.at(m.dt_model)
      .value.setConstant(softplus_inverse(opt.dt_init / opt.substeps));

  // Potential.
  switch (regime) {
    case Regime::Known:
      if (!v_true) throw ContractViolation("make_model: Known needs v_true");
      m.V = std::move(v_true);
      break;
    case Regime::Partial: {
      if (!v_true) throw ContractViolation("make_model: Partial needs v_true");
      if (opt.partial_structured) {
        m.V = std::move(v_true);
        break;
      }
      auto residual = std::make_shared<Potential>(
          make_neural(store, prefix + ".residual", n, angular,
                      opt.potential_hidden, opt.potential_layers, rng));
      m.V = std::make_shared<Potential>(make_hybrid(
          store, prefix + ".hybrid", std::move(v_true), std::move(residual)));
      break;
    }
    case Regime::Unknown:
      m.V = std::make_shared<Potential>(
          make_neural(store, prefix + ".potential", n, angular,
                      opt.potential_hidden, opt.potential_layers, rng));
      break;
  }

  // Mass.
  if (regime == Regime::Unknown) {
    const int rank =
        opt.mass_rank < 0 ? std::min(4, n) : std::min(opt.mass_rank, n);
    m.mass_learned = make_mass_param(store, prefix + ".mass", n, rank, rng);
    m.mass_is_learned = true;
  } else {
    if (!m_true || m_true->dim() != n)
      throw ContractViolation("make_model: regime requires a given mass");
    m.mass_given = std::move(*m_true);
  }

  // Damping. Regime defaults: unbounded strengths with a learned base
  // coefficient, except Partial which caps the total strength and pins d0.
  double cap = opt.damping_cap;
  bool d0_fixed = opt.d0_fixed;
  if (cap == -2.0) cap = regime == Regime::Partial ? 0.5 : -1.0;
  if (regime == Regime::Partial) {
    if (cap < 0.0)
      throw ContractViolation("make_model: Partial requires a damping cap");
    d0_fixed = true;
  }
  m.D = make_damping_field(store, prefix + ".damping", n, opt.damping_terms,
                           angular, cap, d0_fixed, opt.d0_init,
                           opt.constant_damping_heads, opt.head_hidden, rng);
  validate_regime(m);
  return m;
}

std::vector<int> potential_param_ids(const Potential& v) {
  std::vector<int> ids;
  switch (v.kind) {
    case PotentialKind::Cosine:
    case PotentialKind::Quadratic:
    case PotentialKind::Rlc:
    case PotentialKind::HeatExchange:
    case PotentialKind::GravityN:
      ids.push_back(v.coeff);
      break;
    case PotentialKind::LennardJones:
      break;
    case PotentialKind::Neural:
      ids.insert(ids.end(), v.mlp.w.begin(), v.mlp.w.end());
      ids.insert(ids.end(), v.mlp.b.begin(), v.mlp.b.end());
      break;
    case PotentialKind::Hybrid: {
      const auto base = potential_param_ids(*v.base);
      const auto res = potential_param_ids(*v.residual);
      ids.insert(ids.end(), base.begin(), base.end());
      ids.insert(ids.end(), res.begin(), res.end());
      ids.push_back(v.rho_eps);
      break;
    }
  }
  return ids;
}

std::vector<int> damping_param_ids(const DampingField& d) {
  std::vector<int> ids;
  for (int id : {d.raw_d0, d.raw_beta, d.raw_k, d.w1, d.b1, d.w2, d.b2})
    if (id >= 0) ids.push_back(id);
  return ids;
}

std::vector<int> mass_param_ids(const HamiltonianModel& m) {
  std::vector<int> ids;
  if (!m.mass_is_learned) return ids;
  ids.push_back(m.mass_learned.raw_d);
  if (m.mass_learned.rank > 0) {
    ids.push_back(m.mass_learned.raw_alpha);
    ids.push_back(m.mass_learned.raw_k);
  }
  return ids;
}

void validate_regime(const HamiltonianModel& m) {
  const ParamStore& store = *m.store;
  auto all_flagged = [&](const std::vector<int>& ids, bool want) {
    return std::all_of(ids.begin(), ids.end(), [&](int id) {
      return store.at(id).trainable == want;
    });
  };
  const std::vector<int> vids = potential_param_ids(*m.V);
  switch (m.regime) {
    case Regime::Known:
      if (!all_flagged(vids, false))
        throw ContractViolation("validate_regime: Known trains V parameters");
      if (m.mass_is_learned)
        throw ContractViolation("validate_regime: Known learns the mass");
      break;
    case Regime::Partial: {
      if (m.mass_is_learned)
        throw ContractViolation("validate_regime: Partial learns the mass");
      if (m.D.cap < 0.0 || !m.D.d0_fixed)
        throw ContractViolation(
            "validate_regime: Partial requires capped damping with fixed d0");
      if (m.V->kind == PotentialKind::Hybrid) {
        if (!all_flagged(potential_param_ids(*m.V->base), false))
          throw ContractViolation(
              "validate_regime: Partial trains the anchored base potential");
        if (!all_flagged(potential_param_ids(*m.V->residual), true) ||
            !store.at(m.V->rho_eps).trainable)
          throw ContractViolation(
              "validate_regime: Partial residual must be trainable");
      } else if (vids.empty() || !all_flagged(vids, true)) {
        throw ContractViolation(
            "validate_regime: Partial needs trainable coefficients or a "
            "hybrid residual");
      }
      break;
    }
    case Regime::Unknown:
      if (!all_flagged(vids, true))
        throw ContractViolation(
            "validate_regime: Unknown must train the potential");
      if (!m.mass_is_learned)
        throw ContractViolation("validate_regime: Unknown must learn the mass");
      break;
  }
  if (!all_flagged(damping_param_ids(m.D), true))
    throw ContractViolation("validate_regime: damping must be trainable");
  if (m.mass_is_learned && !all_flagged(mass_param_ids(m), true))
    throw ContractViolation("validate_regime: learned mass must be trainable");
}

MassModel current_mass(const HamiltonianModel& m) {
  return m.mass_is_learned ? materialize(m.mass_learned) : m.mass_given;
}

Eigen::VectorXd substep_dts(const HamiltonianModel& m) {
  const VectorXd& raw = m.store->at(m.dt_model).value;
  VectorXd dts(raw.size());
  for (Eigen::Index s = 0; s < raw.size(); ++s) dts[s] = softplus_fn(raw[s]);
  return dts;
}

double model_dt(const HamiltonianModel& m) { return substep_dts(m).sum(); }

namespace {

std::string format_config(const VectorXd& q) {
  std::ostringstream os;
  os << "q = [";
  for (Eigen::Index i = 0; i < q.size(); ++i) os << (i ? ", " : "") << q[i];
  os << "]";
  return os.str();
}

// dT/dq_i = -1/2 v^T (dM/dq_i) v for an analytic mass, zero otherwise.
VectorXd kinetic_qgrad_plain(const MassModel& mass, const VectorXd& q,
                             const VectorXd& v) {
  if (mass.kind != MassModel::Kind::KnownAnalytic)
    return VectorXd::Zero(v.size());
  const auto jac = mass.analytic->mass_jac(q);
  VectorXd g(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    g[i] = -0.5 * v.dot(jac[static_cast<size_t>(i)] * v);
  return g;
}

void check_state(const HamiltonianModel& m, const VectorXd& q,
                 const VectorXd& p, const char* where) {
  if (q.size() != m.n || p.size() != m.n)
    throw ContractViolation(std::string(where) + ": state dimension");
}

}  // namespace

double hamiltonian_value(const HamiltonianModel& m, const VectorXd& q,
                         const VectorXd& p) {
  check_state(m, q, p, "hamiltonian_value");
  const MassModel mass = current_mass(m);
  const double h = potential_value(*m.V, q) + 0.5 * p.dot(mass_solve(mass, q, p));
  if (!std::isfinite(h))
    throw NumericFault("hamiltonian_value: non-finite energy at " +
                       format_config(q));
  return h;
}

std::pair<VectorXd, VectorXd> ph_vector_field(const HamiltonianModel& m,
                                              const VectorXd& q,
                                              const VectorXd& p,
                                              const VectorXd* u,
                                              const MatrixXd* g_port) {
  check_state(m, q, p, "ph_vector_field");
  const MassModel mass = current_mass(m);
  const VectorXd v = mass_solve(mass, q, p);
  const VectorXd grad_q = potential_grad(*m.V, q) + kinetic_qgrad_plain(mass, q, v);
  VectorXd pdot = -grad_q - damping_apply(m.D, q, v);
  if (u) {
    if (!g_port || g_port->rows() != 2 * m.n || g_port->cols() != u->size())
      throw ContractViolation("ph_vector_field: port dimensions");
    pdot += g_port->bottomRows(m.n) * (*u);
  }
  if (!v.allFinite() || !pdot.allFinite())
    throw NumericFault("ph_vector_field: non-finite field at " +
                       format_config(q));
  return {v, pdot};
}

VectorXd port_output(const HamiltonianModel& m, const VectorXd& q,
                     const VectorXd& p, const MatrixXd& g_port) {
  check_state(m, q, p, "port_output");
  if (g_port.rows() != 2 * m.n)
    throw ContractViolation("port_output: port matrix rows");
  const MassModel mass = current_mass(m);
  const VectorXd v = mass_solve(mass, q, p);
  VectorXd grad_h(2 * m.n);
  grad_h.head(m.n) = potential_grad(*m.V, q) + kinetic_qgrad_plain(mass, q, v);
  grad_h.tail(m.n) = v;
  return g_port.transpose() * grad_h;
}

MassCtx mass_ctx_graph(Graph& g, const HamiltonianModel& m) {
  MassCtx c;
  if (m.mass_is_learned) {
    c.nodes = mass_param_nodes(g, m.mass_learned);
    return c;
  }
  if (m.mass_given.kind == MassModel::Kind::KnownAnalytic) {
    c.analytic = true;
    c.closure = m.mass_given.analytic;
    return c;
  }
  c.nodes = mass_const_nodes(g, m.mass_given);
  return c;
}

NodeId mass_solve_graph(Graph& g, const HamiltonianModel& m, const MassCtx& c,
                        NodeId q, NodeId p) {
  if (c.analytic) return mass_solve_analytic(g, q, p, c.closure);
  (void)m;
  return mass_solve_dlr(g, p, c.nodes.d, c.nodes.U);
}

NodeId kinetic_qgrad_graph(Graph& g, const HamiltonianModel& m,
                           const MassCtx& c, NodeId q, NodeId p) {
  if (!c.analytic) return -1;
  (void)m;
  return kinetic_grad_analytic(g, q, p, c.closure);
}

NodeId hamiltonian_graph(Graph& g, const HamiltonianModel& m, const MassCtx& c,
                         NodeId q, NodeId p) {
  NodeId v = mass_solve_graph(g, m, c, q, p);
  return g.add(potential_value_graph(g, *m.V, q),
               g.scale(g.dot(p, v), 0.5));
}

}  // namespace phast
