#pragma once

// Ground-truth simulators and dataset generation for the thirteen q-only
// benchmarks. Each environment carries its manifold mask, timestep, physical
// constants, damping law, and initial-condition sampler; trajectories are
// integrated with finely substepped RK4 on the true dynamics. The module
// also assembles learnable models for an environment under each knowledge
// regime from the same truth components.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "phast/errors.hpp"
#include "phast/hamiltonian.hpp"
#include "phast/integrators.hpp"
#include "phast/rng.hpp"

namespace phast {

enum class EnvName {
  PendulumCons,
  PendulumDamped,
  PendulumWindy,
  CartpoleWindy,
  OscillatorCons,
  OscillatorDamped,
  DoublependCons,
  DoublependDamped,
  Rlc,
  Lj3,
  Heat,
  Nbody3,
  Predprey,
};

// How the ground-truth diagonal damping coefficients depend on q.
enum class DampingLaw {
  None,          // conservative
  Constant,      // gamma on every degree of freedom
  WindyAngular,  // d(theta) = d0 + dd |sin theta| from the angular coordinate
  Ecological,    // predator-prey losses; not a diagonal viscous law
};

// Static description of one benchmark. Constants are the simulator ground
// truth; fields an environment does not use keep their defaults.
struct EnvSpec {
  EnvName id = EnvName::PendulumCons;
  std::string name;           // canonical token, e.g. "pendulum_windy"
  int n = 1;                  // degrees of freedom
  std::vector<bool> angular;  // manifold mask per coordinate
  double dt = 0.05;           // recorded timestep
  int T = 200;                // trajectory length (samples, including t = 0)
  int rk4_substeps = 10;      // internal RK4 steps per recorded dt

  // Damping law. `gamma` is the Constant-law coefficient and doubles as the
  // resistance (rlc), bath friction (lj3), loss rate (heat), and drag
  // (nbody3) those environments name differently.
  DampingLaw law = DampingLaw::None;
  double gamma = 0.0;
  double windy_d0 = 0.3, windy_dd = 0.5;  // WindyAngular law
  // Cart-pole switch: apply the windy coefficient to the pole only and a
  // separate constant to the cart, diag(cart_dc, d(theta)). Off by default;
  // the default law applies the scalar d(theta) to both coordinates.
  bool cartpole_per_dof = false;
  double cart_dc = 0.0;
  // Double-pendulum option: per-joint windy law d_i = b_i + db_i |sin q_i|.
  // No default constants; enabling requires both vectors sized n.
  bool joint_windy = false;
  Eigen::VectorXd joint_b, joint_db;

  // Physics constants (the subset the environment uses).
  double gravity = 9.81;                     // pendulum family
  double mass_bob = 1.0, length_com = 1.0;   // single pendulum
  double mass_cart = 1.0, mass_pole = 1.0, pole_length = 1.0;  // cart-pole
  double m1 = 1.0, m2 = 1.0, l1 = 1.0, l2 = 1.0;  // double pendulum
  double omega = 1.0;                        // oscillator frequency
  double capacitance = 1.0, inductance = 1.0;  // rlc
  double eps_lj = 1.0, sigma_lj = 1.0;       // lj3 pair potential
  double particle_mass = 1.0;                // lj3 per-particle mass
  double c1 = 1.0, c2 = 1.0, kappa = 0.5;    // heat storage and coupling
  double g_const = 1.0, eps_soft = 0.1;      // nbody3 gravity and softening
  Eigen::VectorXd body_masses;               // nbody3 per-body masses
  int particles = 0, space_dim = 2;          // pair-potential systems
  // Predator-prey growth/interaction/decay constants.
  double pp_alpha = 1.0, pp_beta = 0.1, pp_gamma = 0.4, pp_delta = 0.1,
         pp_k = 100.0, pp_mu = 0.01;

  // Initial-condition sampler parameters. The distribution shape is part of
  // the benchmark definition (see sample_initial_state); draw order is
  // fixed: configuration coordinates first, then momenta (velocities for
  // the double pendulum), each in coordinate order.
  double ic_angle_lo = -M_PI, ic_angle_hi = M_PI;  // angular coordinates
  double ic_cart_lo = -1.0, ic_cart_hi = 1.0;      // cart position
  double ic_q_std = 1.0;                           // gaussian configuration
  double ic_temp_lo = 0.5, ic_temp_hi = 2.0;       // heat temperatures
  double ic_state_lo = -2.0, ic_state_hi = 2.0;    // rlc charge and flux
  double ic_prey_lo = 10.0, ic_prey_hi = 50.0;     // predator-prey
  double ic_pred_lo = 5.0, ic_pred_hi = 20.0;
  double ic_radius = 0.0, ic_jitter = 0.0;  // cluster triangle layout
  double ic_p_std = 0.0;                    // gaussian momentum std
  double ic_p_lo = -2.0, ic_p_hi = 2.0;     // uniform momentum box
  bool ic_p_uniform = false;                // momenta drawn uniformly
  bool ic_vel_draw = false;  // draw velocities, map through the true mass
};

// Specs for the canonical benchmarks; the string overload accepts the
// canonical tokens listed by env_names() and throws on anything else.
EnvSpec env_spec(EnvName id);
EnvSpec env_spec(const std::string& name);
const std::vector<std::string>& env_names();

// One simulated rollout. Angular coordinates are stored unwrapped; metrics
// wrap at comparison time. Momenta are ground truth kept for diagnostics
// (the learning pipeline itself is q-only).
struct Trajectory {
  Eigen::MatrixXd q;  // T x n
  Eigen::MatrixXd p;  // T x n
  double dt = 0.0;
  std::string env;
  std::uint64_t seed = 0;  // rng stream that produced the initial state
};

struct DatasetSizes {
  int train = 1000;
  int val = 200;
  int test = 200;
};

struct Dataset {
  std::vector<Trajectory> train, val, test;
  std::uint64_t seed = 0;
  EnvSpec spec;
};

// Ground-truth per-coordinate damping coefficients at configuration q.
// Conservative environments return zeros. The predator-prey losses are not
// expressible as a diagonal viscous law, so its entry is also zero; damping
// recovery metrics are undefined there.
Eigen::VectorXd true_damping(const EnvSpec& env, const Eigen::VectorXd& q);

// Draws an initial phase-space state per the environment's distribution.
PhaseState sample_initial_state(const EnvSpec& env, CounterRng& rng);

// Integrates the ground truth for T recorded samples (including x0) with
// env.rk4_substeps internal RK4 steps per recorded dt. Mechanical and
// analog environments step the Hamiltonian field with the true potential,
// mass, and damping law; predator-prey steps its population ODE directly
// and records (q, p) = (prey, predator). Throws SimulationFault with the
// recorded-step index if the state leaves the finite range.
Trajectory simulate_trajectory(const EnvSpec& env, const PhaseState& x0,
                               int T);

// Analytic benchmark energy at configuration q and velocity v (momenta are
// formed through the true mass). For predator-prey this is the conservative
// limit invariant of the population model with densities clamped away from
// zero; it is a diagnostic, not a mechanical energy, and is not monotone
// under the dissipative population dynamics.
double env_energy(const EnvSpec& env, const Eigen::VectorXd& q,
                  const Eigen::VectorXd& v);

// Deterministic dataset: trajectory k (counting train, then val, then test)
// draws its initial state from CounterRng(seed, k), so generation is
// bit-reproducible and embarrassingly parallel across trajectories.
Dataset generate_dataset(const EnvSpec& env, const DatasetSizes& sizes,
                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Truth components and model assembly
// ---------------------------------------------------------------------------

// The environment's true potential as a structured family (frozen unless
// `trainable`, which only the gravity-template coefficients support).
// Predator-prey has no truth potential and throws.
std::shared_ptr<Potential> truth_potential(const EnvSpec& env,
                                           ParamStore& store,
                                           const std::string& prefix,
                                           bool trainable = false);

// The true mass model. Cart-pole and double pendulum return their analytic
// configuration-dependent closures; `constant_approx` instead freezes the
// matrix at the stable configuration q = 0 (the separable approximation).
// Predator-prey has no truth mass and throws.
MassModel truth_mass(const EnvSpec& env, bool constant_approx = false);

// The true damping law wrapped as a fixed diagonal field (plain evaluation
// only; carries no parameters).
DampingField truth_damping_field(const EnvSpec& env);

// Assembles a learnable model for this environment under `regime`, wiring
// in the truth components the regime is given. The model's initial internal
// timestep is the environment's recorded dt (opt.dt_init is overwritten).
// The gravity-template environment trains its structured coefficients in
// the Partial regime instead of adding a neural residual. Predator-prey
// supports only Unknown.
HamiltonianModel build_model(const EnvSpec& env, Regime regime,
                             ParamStore& store, const std::string& prefix,
                             ModelOptions opt, CounterRng& rng,
                             bool constant_mass_approx = false);

}  // namespace phast
