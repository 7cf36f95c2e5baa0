// q-only state inference: finite-difference velocities, a causal
// convolutional correction network, canonicalization to momenta, and the two
// open-loop rollout modes (burn-in takeover and self-conditioned).
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "phast/integrators.hpp"

namespace phast {

// Velocity estimate (q_t - q_{t-1}) / dt with a zero first row. Angular
// coordinates are differenced through the wrap, so a sample crossing the
// branch cut reads as a small step rather than a full turn. q_seq rows are
// time (T x n).
Eigen::MatrixXd fd_velocity(const Eigen::MatrixXd& q_seq, double dt,
                            const std::vector<bool>& angular);

// Causal dilated convolution stack that corrects the finite-difference
// estimate. Input channels are the featurized positions (angular coordinates
// enter as sin/cos pairs, Euclidean ones raw) followed by one
// finite-difference channel per coordinate; output channels are one additive
// correction per coordinate. Strictly causal: every tap reads the current or
// earlier samples only. The output projection starts at zero, so a freshly
// built observer reproduces the finite-difference estimate exactly.
struct ObserverNet {
  int n = 0;
  std::vector<bool> angular;
  int hidden = 32;
  int kernel = 3;
  std::vector<int> dilations{1, 2};
  ParamStore* store = nullptr;
  std::vector<int> w;  // conv weights per layer, then the 1x1 projection
  std::vector<int> b;  // matching biases

  // Featurized positions plus finite-difference channels.
  int in_channels() const {
    int c = 0;
    for (bool a : angular) c += a ? 2 : 1;
    return c + n;
  }
};

// Registers hidden-width conv layers (kernel 3, dilations 1 and 2) and the
// zero-initialized projection. Conv weights and biases draw uniform
// +-sqrt(1/fan_in) in registration order, matching the perceptron scheme.
ObserverNet make_observer(ParamStore& store, const std::string& prefix, int n,
                          std::vector<bool> angular, CounterRng& rng,
                          int hidden = 32);

// Finite-difference estimate plus the network correction, T x n. Row t
// depends on rows <= t only.
Eigen::MatrixXd observer_velocity(const ObserverNet& net,
                                  const Eigen::MatrixXd& q_seq, double dt);

// Graph form of the correction pass for supervised observer training.
// Returns the velocity estimate as an n x T node; the position features are
// constants, so gradients flow into the observer parameters only.
NodeId observer_velocity_graph(Graph& g, const ObserverNet& net,
                               const Eigen::MatrixXd& q_seq, double dt);

// v-hat -> p-hat. Identity treats the estimate as a velocity-like latent;
// MassConsistent maps through the physical relation p = M(q) v.
enum class Canonicalizer { Identity, MassConsistent };

Eigen::VectorXd canonicalize(Canonicalizer mode, const MassModel& mass,
                             const Eigen::VectorXd& q,
                             const Eigen::VectorXd& v);

// Burn-in then pure integration: infer the velocity at the last context row
// (the observer when given, plain finite differences otherwise),
// canonicalize through the model's current mass, and iterate the model
// transition `horizon` times. Returns horizon x n predicted positions (empty
// when horizon = 0); positions after the context are never consulted because
// only the K context rows are passed in. Context length must be >= 2.
// Integration faults surface with the horizon step index.
Eigen::MatrixXd rollout_takeover(const HamiltonianModel& m,
                                 const ObserverNet* net,
                                 const Eigen::MatrixXd& q_context, double dt,
                                 int horizon, Canonicalizer canon);

// Self-conditioned mode: before every step the observer is re-applied to the
// growing position prefix (context plus own predictions), the boundary state
// is re-canonicalized, and one transition is taken.
Eigen::MatrixXd rollout_autoregressive(const HamiltonianModel& m,
                                       const ObserverNet* net,
                                       const Eigen::MatrixXd& q_context,
                                       double dt, int horizon,
                                       Canonicalizer canon);

}  // namespace phast
