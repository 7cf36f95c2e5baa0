#include "phast/observer.hpp"

#include <cmath>

#include "phast/scalar_ops.hpp"

namespace phast {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Featurized positions as conv channels: sin/cos per angular coordinate,
// raw value per Euclidean one, followed by the finite-difference channels.
// Channel order is coordinate order within each group.
MatrixXd observer_input(const ObserverNet& net, const MatrixXd& q_seq,
                        const MatrixXd& fd) {
  const Eigen::Index T = q_seq.rows();
  MatrixXd x(net.in_channels(), T);
  Eigen::Index c = 0;
  for (int i = 0; i < net.n; ++i) {
    if (net.angular[static_cast<size_t>(i)]) {
      x.row(c) = q_seq.col(i).array().sin().transpose();
      x.row(c + 1) = q_seq.col(i).array().cos().transpose();
      c += 2;
    } else {
      x.row(c) = q_seq.col(i).transpose();
      c += 1;
    }
  }
  x.bottomRows(net.n) = fd.transpose();
  return x;
}

void check_context(const ObserverNet* net, const MatrixXd& q_context,
                   double dt, int n, int horizon) {
  if (q_context.rows() < 2)
    throw ContractViolation("rollout: context needs at least two rows");
  if (q_context.cols() != n)
    throw ContractViolation("rollout: context width does not match the model");
  if (dt <= 0.0) throw ContractViolation("rollout: dt must be positive");
  if (horizon < 0) throw ContractViolation("rollout: negative horizon");
  if (net && net->n != n)
    throw ContractViolation("rollout: observer width does not match the model");
}

// Velocity estimate at the last row of the prefix.
VectorXd boundary_velocity(const HamiltonianModel& m, const ObserverNet* net,
                           const MatrixXd& prefix, double dt) {
  if (net) {
    MatrixXd v = observer_velocity(*net, prefix, dt);
    return v.row(v.rows() - 1);
  }
  MatrixXd v = fd_velocity(prefix, dt, m.angular);
  return v.row(v.rows() - 1);
}

VectorXd boundary_momentum(const HamiltonianModel& m, const ObserverNet* net,
                           const MatrixXd& prefix, double dt,
                           Canonicalizer canon) {
  VectorXd q = prefix.row(prefix.rows() - 1);
  VectorXd v = boundary_velocity(m, net, prefix, dt);
  return canonicalize(canon, current_mass(m), q, v);
}

}  // namespace

MatrixXd fd_velocity(const MatrixXd& q_seq, double dt,
                     const std::vector<bool>& angular) {
  if (q_seq.rows() < 1)
    throw ContractViolation("fd_velocity: empty sequence");
  if (static_cast<Eigen::Index>(angular.size()) != q_seq.cols())
    throw ContractViolation("fd_velocity: manifold mask width mismatch");
  if (dt <= 0.0) throw ContractViolation("fd_velocity: dt must be positive");
  MatrixXd v = MatrixXd::Zero(q_seq.rows(), q_seq.cols());
  for (Eigen::Index t = 1; t < q_seq.rows(); ++t) {
    for (Eigen::Index i = 0; i < q_seq.cols(); ++i) {
      const double d = q_seq(t, i) - q_seq(t - 1, i);
      v(t, i) = (angular[static_cast<size_t>(i)] ? wrap_angle(d) : d) / dt;
    }
  }
  return v;
}

ObserverNet make_observer(ParamStore& store, const std::string& prefix, int n,
                          std::vector<bool> angular, CounterRng& rng,
                          int hidden) {
  if (n < 1 || hidden < 1)
    throw ContractViolation("make_observer: dimensions must be positive");
  if (static_cast<int>(angular.size()) != n)
    throw ContractViolation("make_observer: manifold mask width mismatch");
  ObserverNet net;
  net.n = n;
  net.angular = std::move(angular);
  net.hidden = hidden;
  net.store = &store;
  const int cin = net.in_channels();
  int fan_in = cin;
  for (size_t l = 0; l < net.dilations.size(); ++l) {
    const int wid = store.add(prefix + ".conv" + std::to_string(l) + ".w",
                              hidden, fan_in * net.kernel);
    const int bid =
        store.add(prefix + ".conv" + std::to_string(l) + ".b", hidden);
    const double bound = std::sqrt(1.0 / (fan_in * net.kernel));
    auto& wv = store.at(wid).value;
    for (Eigen::Index i = 0; i < wv.size(); ++i)
      wv[i] = rng.uniform(-bound, bound);
    auto& bv = store.at(bid).value;
    for (Eigen::Index i = 0; i < bv.size(); ++i)
      bv[i] = rng.uniform(-bound, bound);
    net.w.push_back(wid);
    net.b.push_back(bid);
    fan_in = hidden;
  }
  // Zero projection: the correction starts at zero, so the untrained
  // observer is exactly the finite-difference estimate.
  net.w.push_back(store.add(prefix + ".proj.w", n, hidden));
  net.b.push_back(store.add(prefix + ".proj.b", n));
  return net;
}

NodeId observer_velocity_graph(Graph& g, const ObserverNet& net,
                               const MatrixXd& q_seq, double dt) {
  if (q_seq.cols() != net.n)
    throw ContractViolation("observer_velocity: sequence width mismatch");
  const MatrixXd fd = fd_velocity(q_seq, dt, net.angular);
  NodeId h = g.constant(observer_input(net, q_seq, fd));
  for (size_t l = 0; l < net.dilations.size(); ++l) {
    h = g.conv1d_causal(h, g.param(net.w[l]), g.param(net.b[l]), net.kernel,
                        net.dilations[l]);
    h = g.silu(h);
  }
  const size_t last = net.w.size() - 1;
  NodeId delta =
      g.conv1d_causal(h, g.param(net.w[last]), g.param(net.b[last]), 1, 1);
  return g.add(delta, g.constant(fd.transpose()));
}

MatrixXd observer_velocity(const ObserverNet& net, const MatrixXd& q_seq,
                           double dt) {
  // Runs the graph form without a backward sweep so the trained and the
  // deployed paths are the same arithmetic, bit for bit.
  Graph g(net.store);
  NodeId out = observer_velocity_graph(g, net, q_seq, dt);
  return g.val(out).transpose();
}

VectorXd canonicalize(Canonicalizer mode, const MassModel& mass,
                      const VectorXd& q, const VectorXd& v) {
  if (q.size() != v.size())
    throw ContractViolation("canonicalize: q/v size mismatch");
  if (mode == Canonicalizer::Identity) return v;
  return mass_apply(mass, q, v);
}

MatrixXd rollout_takeover(const HamiltonianModel& m, const ObserverNet* net,
                          const MatrixXd& q_context, double dt, int horizon,
                          Canonicalizer canon) {
  check_context(net, q_context, dt, m.n, horizon);
  MatrixXd out(horizon, m.n);
  if (horizon == 0) return out;
  const StepConfig cfg = model_step_config(m);
  PhaseState x{q_context.row(q_context.rows() - 1),
               boundary_momentum(m, net, q_context, dt, canon)};
  for (int h = 0; h < horizon; ++h) {
    x = compose_substeps(m, x.first, x.second, cfg, h + 1);
    out.row(h) = x.first;
  }
  return out;
}

MatrixXd rollout_autoregressive(const HamiltonianModel& m,
                                const ObserverNet* net,
                                const MatrixXd& q_context, double dt,
                                int horizon, Canonicalizer canon) {
  check_context(net, q_context, dt, m.n, horizon);
  MatrixXd out(horizon, m.n);
  if (horizon == 0) return out;
  const StepConfig cfg = model_step_config(m);
  MatrixXd prefix(q_context.rows() + horizon, m.n);
  prefix.topRows(q_context.rows()) = q_context;
  Eigen::Index filled = q_context.rows();
  for (int h = 0; h < horizon; ++h) {
    const MatrixXd view = prefix.topRows(filled);
    PhaseState x{view.row(filled - 1),
                 boundary_momentum(m, net, view, dt, canon)};
    x = compose_substeps(m, x.first, x.second, cfg, h + 1);
    out.row(h) = x.first;
    prefix.row(filled) = x.first;
    ++filled;
  }
  return out;
}

}  // namespace phast
