// SPDX-License-Identifier: MIT

#include "phast/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phast/errors.hpp"
#include "phast/observer.hpp"
#include "phast/rng.hpp"
#include "phast/scalar_ops.hpp"
#include "phast/structured_linalg.hpp"

namespace phast {

namespace {

// Angular flags of the full state (q then p); momenta are never wrapped.
std::vector<bool> full_state_mask(const HamiltonianModel& m) {
  std::vector<bool> mask(m.angular);
  mask.insert(mask.end(), static_cast<std::size_t>(m.n), false);
  return mask;
}

Eigen::VectorXd full_state_row(const Trajectory& tr, int t) {
  Eigen::VectorXd x(2 * tr.q.cols());
  x << tr.q.row(t).transpose(), tr.p.row(t).transpose();
  return x;
}

}  // namespace

LossNodes trajectory_loss_graph(Graph& g, const HamiltonianModel& m,
                                const Trajectory& tr, const LossWeights& w,
                                bool velocities_available, int t0,
                                double batch_scale) {
  const int T = static_cast<int>(tr.q.rows());
  if (T < 2)
    throw ContractViolation("trajectory_loss_graph: need at least 2 samples");
  if (tr.q.cols() != m.n || tr.p.rows() != T || tr.p.cols() != m.n)
    throw ContractViolation("trajectory_loss_graph: state width mismatch");
  if (tr.dt <= 0.0)
    throw ContractViolation("trajectory_loss_graph: dt must be positive");
  if (w.data < 0.0 || w.passivity < 0.0 || w.energy < 0.0 || w.rollout < 0.0)
    throw ContractViolation("trajectory_loss_graph: negative loss weight");
  if (w.rollout > 0.0) {
    if (w.rollout_horizon < 1 || w.rollout_horizon > T - 1)
      throw ContractViolation(
          "trajectory_loss_graph: rollout horizon must be in [1, T-1]");
    if (t0 < 0 || t0 > T - 1 - w.rollout_horizon)
      throw ContractViolation("trajectory_loss_graph: rollout start out of range");
  }
  const bool need_energy = w.passivity > 0.0 || w.energy > 0.0;
  if (need_energy && !velocities_available && T < 3)
    throw ContractViolation(
        "trajectory_loss_graph: energy terms without velocities need T >= 3");

  MassCtx ctx = mass_ctx_graph(g, m);
  const std::vector<NodeId> sub_dt = substep_dt_nodes(g, m);
  const CoreKind core = model_step_config(m).core;
  const std::vector<bool> mask = full_state_mask(m);

  // Energy-side momenta when the recorded velocities are unusable: finite
  // differences of q mapped through the current mass, treated as data.
  Eigen::MatrixXd p_energy;
  if (need_energy && !velocities_available) {
    const Eigen::MatrixXd v_fd = fd_velocity(tr.q, tr.dt, m.angular);
    const MassModel mass_now = current_mass(m);
    p_energy.resize(T, m.n);
    for (int t = 0; t < T; ++t)
      p_energy.row(t) = mass_apply(mass_now, tr.q.row(t).transpose(),
                                   v_fd.row(t).transpose())
                            .transpose();
  }

  NodeId data_sum = g.scalar(0.0);
  NodeId pass_sum = g.scalar(0.0);
  NodeId energy_sum = g.scalar(0.0);
  int energy_count = 0;

  for (int t = 0; t + 1 < T; ++t) {
    const NodeId qn = g.constant(tr.q.row(t).transpose());
    const NodeId pn = g.constant(tr.p.row(t).transpose());

    std::pair<NodeId, NodeId> step{-1, -1};
    if (w.data > 0.0) {
      step = compose_substeps_graph(g, m, ctx, qn, pn, sub_dt, core);
      data_sum = g.add(
          data_sum,
          g.wrap_sq_err(g.concat_rows({step.first, step.second}),
                        full_state_row(tr, t + 1), mask));
    }

    if (need_energy && (velocities_available || t >= 1)) {
      NodeId pe = pn;
      std::pair<NodeId, NodeId> estep = step;
      if (!velocities_available) {
        pe = g.constant(p_energy.row(t).transpose());
        estep = {-1, -1};
      }
      if (estep.first < 0)
        estep = compose_substeps_graph(g, m, ctx, qn, pe, sub_dt, core);
      const NodeId h_now = hamiltonian_graph(g, m, ctx, qn, pe);
      const NodeId h_next =
          hamiltonian_graph(g, m, ctx, estep.first, estep.second);
      ++energy_count;
      if (w.passivity > 0.0)
        pass_sum = g.add(pass_sum, g.relu(g.sub(h_next, h_now)));
      if (w.energy > 0.0) {
        const NodeId v = mass_solve_graph(g, m, ctx, qn, pe);
        const DampingNodes heads = damping_heads_graph(g, m.D, qn);
        const NodeId quad = damping_quadform_graph(g, heads, v);
        const NodeId resid =
            g.add(g.scale(g.sub(h_next, h_now), 1.0 / tr.dt), quad);
        energy_sum = g.add(energy_sum, g.abs_(resid));
      }
    }
  }

  LossNodes out;
  if (w.data > 0.0) out.data = g.scale(data_sum, 1.0 / (T - 1));
  if (w.passivity > 0.0) out.passivity = g.scale(pass_sum, 1.0 / energy_count);
  if (w.energy > 0.0) out.energy = g.scale(energy_sum, 1.0 / energy_count);

  if (w.rollout > 0.0) {
    NodeId qr = g.constant(tr.q.row(t0).transpose());
    NodeId pr = g.constant(tr.p.row(t0).transpose());
    NodeId roll_sum = g.scalar(0.0);
    for (int h = 1; h <= w.rollout_horizon; ++h) {
      const auto s = compose_substeps_graph(g, m, ctx, qr, pr, sub_dt, core);
      qr = s.first;
      pr = s.second;
      roll_sum = g.add(roll_sum,
                       g.wrap_sq_err(g.concat_rows({qr, pr}),
                                     full_state_row(tr, t0 + h), mask));
    }
    out.rollout = g.scale(roll_sum, 1.0 / w.rollout_horizon);
  }

  NodeId total = g.scalar(0.0);
  if (out.data >= 0) total = g.add(total, g.scale(out.data, w.data));
  if (out.passivity >= 0)
    total = g.add(total, g.scale(out.passivity, w.passivity));
  if (out.energy >= 0) total = g.add(total, g.scale(out.energy, w.energy));
  if (out.rollout >= 0) total = g.add(total, g.scale(out.rollout, w.rollout));
  out.total = g.scale(total, batch_scale);
  return out;
}

LossValues read_losses(const Graph& g, const LossNodes& nodes) {
  LossValues v;
  auto read = [&g](NodeId id) { return id >= 0 ? g.val(id)(0, 0) : 0.0; };
  v.data = read(nodes.data);
  v.passivity = read(nodes.passivity);
  v.energy = read(nodes.energy);
  v.rollout = read(nodes.rollout);
  v.total = read(nodes.total);
  return v;
}

void adamw_step(AdamW& opt, ParamStore& store, double lr) {
  const int P = store.size();
  if (opt.m1.empty()) {
    opt.m1.resize(P);
    opt.m2.resize(P);
    for (int id = 0; id < P; ++id) {
      const auto size = store.at(id).value.size();
      opt.m1[id] = Eigen::VectorXd::Zero(size);
      opt.m2[id] = Eigen::VectorXd::Zero(size);
    }
  }
  if (static_cast<int>(opt.m1.size()) != P)
    throw ContractViolation("adamw_step: optimizer sized for a different store");
  if (lr < 0.0) throw ContractViolation("adamw_step: negative learning rate");

  ++opt.steps;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.steps));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.steps));
  for (int id = 0; id < P; ++id) {
    ParamEntry& e = store.at(id);
    if (!e.trainable) continue;
    if (opt.m1[id].size() != e.value.size())
      throw ContractViolation("adamw_step: optimizer sized for a different store");
    opt.m1[id] = opt.beta1 * opt.m1[id] + (1.0 - opt.beta1) * e.grad;
    opt.m2[id] =
        opt.beta2 * opt.m2[id] + (1.0 - opt.beta2) * e.grad.cwiseAbs2();
    if (!e.no_decay && opt.weight_decay > 0.0)
      e.value *= 1.0 - lr * opt.weight_decay;
    const Eigen::VectorXd m_hat = opt.m1[id] / bc1;
    const Eigen::VectorXd v_hat = opt.m2[id] / bc2;
    e.value -=
        lr * (m_hat.array() / (v_hat.array().sqrt() + opt.eps)).matrix();
  }
}

double cosine_lr(double base, int epoch, int total_epochs) {
  if (total_epochs < 1)
    throw ContractViolation("cosine_lr: total_epochs must be positive");
  if (epoch < 0 || epoch > total_epochs)
    throw ContractViolation("cosine_lr: epoch out of range");
  return base * 0.5 *
         (1.0 + std::cos(kPi * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs)));
}

std::pair<double, double> one_step_validation(
    const HamiltonianModel& m, const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty())
    throw ContractViolation("one_step_validation: empty trajectory set");
  const StepConfig cfg = model_step_config(m);
  double mixed = 0.0, plain = 0.0;
  long count = 0;
  for (const Trajectory& tr : trajectories) {
    const int T = static_cast<int>(tr.q.rows());
    if (tr.q.cols() != m.n)
      throw ContractViolation("one_step_validation: state width mismatch");
    for (int t = 0; t + 1 < T; ++t) {
      const PhaseState next = compose_substeps(
          m, tr.q.row(t).transpose(), tr.p.row(t).transpose(), cfg, t);
      for (int j = 0; j < m.n; ++j) {
        const double dq = next.first(j) - tr.q(t + 1, j);
        const double dp = next.second(j) - tr.p(t + 1, j);
        const double dqw = m.angular[static_cast<size_t>(j)] ? wrap_angle(dq) : dq;
        mixed += dqw * dqw + dp * dp;
        plain += dq * dq + dp * dp;
        count += 2;
      }
    }
  }
  if (count == 0)
    throw ContractViolation("one_step_validation: no transitions");
  return {mixed / static_cast<double>(count),
          plain / static_cast<double>(count)};
}

TrainResult train(HamiltonianModel& m, const Dataset& data,
                  const LossWeights& w, const TrainConfig& cfg) {
  if (m.store == nullptr)
    throw ContractViolation("train: model has no parameter store");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.val_every < 1)
    throw ContractViolation("train: epochs, batch_size, val_every must be positive");
  if (cfg.lr <= 0.0) throw ContractViolation("train: lr must be positive");
  if (data.train.empty()) throw ContractViolation("train: empty training split");
  if (data.val.empty()) throw ContractViolation("train: empty validation split");

  ParamStore& store = *m.store;
  AdamW opt;
  opt.weight_decay = cfg.weight_decay;

  TrainResult out;
  std::vector<double> best_params = store.snapshot();
  const int N = static_cast<int>(data.train.size());
  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // One documented stream per epoch: N-1 shuffle draws, then one rollout
    // start per trajectory in batch order when the rollout term is active.
    CounterRng rng(cfg.seed, 0x7E000000ull + static_cast<std::uint64_t>(epoch));
    for (int i = N - 1; i > 0; --i) {
      int j = static_cast<int>(rng.uniform() * (i + 1));
      if (j > i) j = i;
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    const double lr = cosine_lr(cfg.lr, epoch, cfg.epochs);

    LossValues sums;
    double grad_norm_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < N; start += cfg.batch_size) {
      const int B = std::min(cfg.batch_size, N - start);
      store.zero_grad();
      for (int k = 0; k < B; ++k) {
        const Trajectory& tr = data.train[static_cast<size_t>(order[
            static_cast<size_t>(start + k)])];
        int t0 = 0;
        if (w.rollout > 0.0) {
          const int hi = static_cast<int>(tr.q.rows()) - 1 - w.rollout_horizon;
          t0 = std::min(static_cast<int>(rng.uniform() * (hi + 1)), hi);
        }
        Graph g(&store);
        const LossNodes nodes = trajectory_loss_graph(
            g, m, tr, w, cfg.velocities_available, t0, 1.0 / B);
        const LossValues v = read_losses(g, nodes);
        if (!std::isfinite(v.data) || !std::isfinite(v.passivity) ||
            !std::isfinite(v.energy) || !std::isfinite(v.rollout))
          throw NumericFault("train: non-finite loss at epoch " +
                             std::to_string(epoch));
        sums.data += v.data;
        sums.passivity += v.passivity;
        sums.energy += v.energy;
        sums.rollout += v.rollout;
        sums.total += w.data * v.data + w.passivity * v.passivity +
                      w.energy * v.energy + w.rollout * v.rollout;
        g.backward(nodes.total);
      }
      const double gn = collect_gradients(store).norm();
      if (!std::isfinite(gn))
        throw NumericFault("train: non-finite gradient at epoch " +
                           std::to_string(epoch));
      grad_norm_sum += gn;
      ++batches;
      adamw_step(opt, store, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train.data = sums.data / N;
    rec.train.passivity = sums.passivity / N;
    rec.train.energy = sums.energy / N;
    rec.train.rollout = sums.rollout / N;
    rec.train.total = sums.total / N;
    rec.grad_norm = grad_norm_sum / batches;

    if (epoch % cfg.val_every == 0 || epoch == cfg.epochs - 1) {
      const auto [mixed, plain] = one_step_validation(m, data.val);
      rec.val_mixed = mixed;
      rec.val_mse = plain;
      if (mixed < out.best_val) {
        out.best_val = mixed;
        out.best_epoch = epoch;
        best_params = store.snapshot();
      }
    }
    out.history.push_back(rec);
  }

  store.restore(best_params);
  return out;
}

}  // namespace phast
