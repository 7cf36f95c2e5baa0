// SPDX-License-Identifier: MIT
//
// Loss assembly and the optimization loop. The loss combines a
// teacher-forced one-step error with optional passivity, energy-budget,
// and open-loop rollout terms; optimization is AdamW with decoupled decay
// under cosine learning-rate annealing, with parameters selected by the
// best validation score seen during the run.

#pragma once

#include <Eigen/Dense>
#include <limits>
#include <utility>
#include <vector>

#include "phast/environments.hpp"
#include "phast/hamiltonian.hpp"
#include "phast/integrators.hpp"

namespace phast {

// Relative weights of the loss terms. Terms with zero weight are not built
// into the graph, so the default trains on the one-step data error alone.
struct LossWeights {
  double data = 1.0;
  double passivity = 0.0;   // hinge on model energy increase across a step
  double energy = 0.0;      // energy-budget residual vs the damping quadform
  double rollout = 0.0;     // open-loop window error
  int rollout_horizon = 5;  // window length of the rollout term
};

struct LossValues {
  double data = 0.0;
  double passivity = 0.0;
  double energy = 0.0;
  double rollout = 0.0;
  double total = 0.0;
};

struct LossNodes {
  NodeId data = -1;
  NodeId passivity = -1;
  NodeId energy = -1;
  NodeId rollout = -1;
  NodeId total = -1;  // weighted sum, scaled by the batch-averaging weight
};

// Builds the loss of a single trajectory into g and returns the term nodes
// (unweighted per-term averages; -1 when the term is disabled) plus the
// weighted total scaled by batch_scale, the averaging weight of this
// trajectory inside its minibatch.
//
// Term definitions, each an average over the transitions of the trajectory:
//   data       sum of squared next-state errors (angular position
//              coordinates wrapped to [-pi, pi)) of the one-step map
//              applied to the recorded state x_t.
//   passivity  max(0, H(x̂_{t+1}) - H(x_t)) under the model energy.
//   energy     |(H(x̂_{t+1}) - H(x_t)) / dt + v_t' D(q_t) v_t| with
//              v_t = M(q_t)^{-1} p_t, the discrete energy-balance residual.
//   rollout    squared state error of an open-loop chain of length
//              rollout_horizon started at sample t0 (ignored otherwise).
//
// When velocities_available is false the recorded momenta are treated as
// unusable for energetics: the energy-side state uses finite-difference
// velocities of q mapped through the current mass (held constant, since the
// estimate is data rather than a function of the parameters), and the first
// transition is skipped because no velocity estimate exists at t = 0. The
// data and rollout terms keep teacher forcing on the stored state.
LossNodes trajectory_loss_graph(Graph& g, const HamiltonianModel& m,
                                const Trajectory& tr, const LossWeights& w,
                                bool velocities_available, int t0,
                                double batch_scale);

// Reads the scalar values of the term nodes (zeros for disabled terms).
LossValues read_losses(const Graph& g, const LossNodes& nodes);

// AdamW with decoupled weight decay. Moment buffers are sized lazily to the
// store on first use and must match it afterwards. Parameters registered
// no_decay (physical scalars such as damping floors, masses, and timestep
// raws) are exempt from decay; untrainable entries are never touched.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  long steps = 0;
  std::vector<Eigen::VectorXd> m1, m2;
};

// One update from the gradients currently in the store:
//   theta <- theta * (1 - lr * wd)          [decay, skipped for no_decay]
//   theta <- theta - lr * m̂ / (sqrt(v̂) + eps)
// with bias-corrected first and second moments m̂, v̂.
void adamw_step(AdamW& opt, ParamStore& store, double lr);

// Half-cosine annealing: base at epoch 0, zero at epoch == total_epochs,
// monotone in between.
double cosine_lr(double base, int epoch, int total_epochs);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;  // whole trajectories per optimizer step
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  bool velocities_available = true;
  int val_every = 10;  // validation cadence in epochs (plus the final epoch)
};

struct EpochRecord {
  int epoch = 0;
  LossValues train;  // per-trajectory averages over the epoch
  double lr = 0.0;
  double grad_norm = 0.0;  // mean over batches of the global gradient norm
  // One-step validation errors, NaN on epochs without a validation pass.
  double val_mixed = std::numeric_limits<double>::quiet_NaN();
  double val_mse = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
};

// Full optimization run over data.train with validation on data.val.
// Shuffles whole trajectories into minibatches each epoch, draws one
// rollout start per trajectory per batch when the rollout term is active,
// validates every val_every epochs and on the last epoch, and finishes by
// restoring the parameters of the best validation epoch. All randomness
// derives from cfg.seed through per-epoch counter streams, so a rerun with
// the same seed reproduces the result bit for bit. A non-finite loss or
// gradient raises NumericFault.
TrainResult train(HamiltonianModel& m, const Dataset& data,
                  const LossWeights& w, const TrainConfig& cfg);

// Mean squared one-step prediction error per state coordinate with the
// current parameters: first with angular position differences wrapped to
// [-pi, pi), then the plain Euclidean version.
std::pair<double, double> one_step_validation(
    const HamiltonianModel& m, const std::vector<Trajectory>& trajectories);

}  // namespace phast
