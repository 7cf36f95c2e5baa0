#include "phast/environments.hpp"

#include <cmath>
#include <functional>
#include <utility>

namespace phast {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Analytic mass closures
// ---------------------------------------------------------------------------

// Cart-pole inertia over q = (x, theta): constant cart/pole masses with a
// cos(theta) coupling between cart translation and pole rotation.
class CartpoleMass final : public AnalyticMass {
 public:
  CartpoleMass(double mc, double mp, double l) : mc_(mc), mp_(mp), l_(l) {}

  int dim() const override { return 2; }

  MatrixXd mass(const VectorXd& q) const override {
    const double c = std::cos(q(1));
    MatrixXd m(2, 2);
    m << mc_ + mp_, mp_ * l_ * c, mp_ * l_ * c, mp_ * l_ * l_;
    return m;
  }

  std::vector<MatrixXd> mass_jac(const VectorXd& q) const override {
    std::vector<MatrixXd> jac(2, MatrixXd::Zero(2, 2));
    const double s = std::sin(q(1));
    jac[1](0, 1) = jac[1](1, 0) = -mp_ * l_ * s;
    return jac;
  }

  MatrixXd mass_hess_quad(const VectorXd& q,
                          const VectorXd& v) const override {
    MatrixXd out = MatrixXd::Zero(2, 2);
    out(1, 1) = -2.0 * mp_ * l_ * std::cos(q(1)) * v(0) * v(1);
    return out;
  }

 private:
  double mc_, mp_, l_;
};

// Double-pendulum inertia over q = (theta1, theta2) with absolute angles;
// the links couple through cos(theta1 - theta2).
class DoublependMass final : public AnalyticMass {
 public:
  DoublependMass(double m1, double m2, double l1, double l2)
      : a_((m1 + m2) * l1 * l1), b_(m2 * l1 * l2), c_(m2 * l2 * l2) {}

  int dim() const override { return 2; }

  MatrixXd mass(const VectorXd& q) const override {
    const double c12 = std::cos(q(0) - q(1));
    MatrixXd m(2, 2);
    m << a_, b_ * c12, b_ * c12, c_;
    return m;
  }

  std::vector<MatrixXd> mass_jac(const VectorXd& q) const override {
    const double s12 = std::sin(q(0) - q(1));
    std::vector<MatrixXd> jac(2, MatrixXd::Zero(2, 2));
    jac[0](0, 1) = jac[0](1, 0) = -b_ * s12;
    jac[1](0, 1) = jac[1](1, 0) = b_ * s12;
    return jac;
  }

  MatrixXd mass_hess_quad(const VectorXd& q,
                          const VectorXd& v) const override {
    // All second derivatives act on the off-diagonal cos(theta1 - theta2),
    // contributing 2 * d2c12 * v0 * v1 with alternating signs.
    const double f = 2.0 * b_ * std::cos(q(0) - q(1)) * v(0) * v(1);
    MatrixXd out(2, 2);
    out << -f, f, f, -f;
    return out;
  }

 private:
  double a_, b_, c_;
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

void check_config(const EnvSpec& env, const VectorXd& q, const char* who) {
  if (q.size() != env.n)
    throw ContractViolation(std::string(who) + ": configuration dimension " +
                            std::to_string(q.size()) + " does not match " +
                            env.name);
}

// Equilateral-triangle vertex k (of 3) on a circle of `radius`, starting at
// the top and stepping 120 degrees counterclockwise.
std::pair<double, double> triangle_vertex(double radius, int k) {
  const double a = M_PI / 2.0 + 2.0 * M_PI * k / 3.0;
  return {radius * std::cos(a), radius * std::sin(a)};
}

// Population dynamics: logistic prey growth, mass-action predation,
// predator decay, and background mortality on both species.
VectorXd predprey_field(const EnvSpec& env, const VectorXd& x) {
  const double n1 = x(0), n2 = x(1);
  VectorXd dx(2);
  dx(0) = env.pp_alpha * n1 * (1.0 - n1 / env.pp_k) - env.pp_beta * n1 * n2 -
          env.pp_mu * n1;
  dx(1) = env.pp_delta * n1 * n2 - env.pp_gamma * n2 - env.pp_mu * n2;
  return dx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

EnvSpec env_spec(EnvName id) {
  EnvSpec e;
  e.id = id;
  switch (id) {
    case EnvName::PendulumCons:
      e.name = "pendulum_cons";
      e.n = 1;
      e.angular = {true};
      e.dt = 0.05;
      e.law = DampingLaw::None;
      e.ic_p_std = 3.0;
      break;
    case EnvName::PendulumDamped:
      e.name = "pendulum_damped";
      e.n = 1;
      e.angular = {true};
      e.dt = 0.05;
      e.law = DampingLaw::Constant;
      e.gamma = 0.5;
      e.ic_p_std = 3.0;
      break;
    case EnvName::PendulumWindy:
      e.name = "pendulum_windy";
      e.n = 1;
      e.angular = {true};
      e.dt = 0.05;
      e.law = DampingLaw::WindyAngular;
      e.ic_p_std = 4.0;
      break;
    case EnvName::CartpoleWindy:
      e.name = "cartpole_windy";
      e.n = 2;
      e.angular = {false, true};
      e.dt = 0.02;
      e.law = DampingLaw::WindyAngular;
      e.ic_p_uniform = true;
      break;
    case EnvName::OscillatorCons:
      e.name = "oscillator_cons";
      e.n = 2;
      e.angular = {false, false};
      e.dt = 0.02;
      e.law = DampingLaw::None;
      e.ic_q_std = 1.0;
      e.ic_p_std = 1.0;
      break;
    case EnvName::OscillatorDamped:
      e.name = "oscillator_damped";
      e.n = 2;
      e.angular = {false, false};
      e.dt = 0.02;
      e.law = DampingLaw::Constant;
      e.gamma = 0.1;
      e.ic_q_std = 1.0;
      e.ic_p_std = 1.0;
      break;
    case EnvName::DoublependCons:
      e.name = "doublepend_cons";
      e.n = 2;
      e.angular = {true, true};
      e.dt = 0.01;
      e.law = DampingLaw::None;
      e.ic_vel_draw = true;
      break;
    case EnvName::DoublependDamped:
      e.name = "doublepend_damped";
      e.n = 2;
      e.angular = {true, true};
      e.dt = 0.01;
      e.law = DampingLaw::Constant;
      e.gamma = 0.2;
      e.ic_vel_draw = true;
      break;
    case EnvName::Rlc:
      e.name = "rlc";
      e.n = 1;
      e.angular = {false};
      e.dt = 0.02;
      e.law = DampingLaw::Constant;
      e.gamma = 0.5;  // resistance; inductance (mass) is 1
      break;
    case EnvName::Lj3:
      e.name = "lj3";
      e.n = 6;
      e.angular.assign(6, false);
      e.dt = 0.002;
      e.law = DampingLaw::Constant;
      e.gamma = 0.1;
      e.particles = 3;
      // Pair-equilibrium triangle: side 2^(1/6) sigma, so circumradius
      // side / sqrt(3).
      e.ic_radius = std::pow(2.0, 1.0 / 6.0) * e.sigma_lj / std::sqrt(3.0);
      e.ic_jitter = 0.05;
      e.ic_p_std = 0.1;
      break;
    case EnvName::Heat:
      e.name = "heat";
      e.n = 2;
      e.angular = {false, false};
      e.dt = 0.02;
      e.law = DampingLaw::Constant;
      e.gamma = 0.1;  // loss to the environment, distinct from coupling
      e.ic_p_std = 0.3;
      break;
    case EnvName::Nbody3:
      e.name = "nbody3";
      e.n = 6;
      e.angular.assign(6, false);
      e.dt = 0.01;
      e.law = DampingLaw::Constant;
      e.gamma = 0.05;
      e.particles = 3;
      e.body_masses = Eigen::VectorXd::Ones(3);
      e.ic_radius = 2.0;
      e.ic_jitter = 0.3;
      e.ic_p_std = 0.5;
      break;
    case EnvName::Predprey:
      e.name = "predprey";
      e.n = 1;
      e.angular = {false};
      e.dt = 0.1;
      e.law = DampingLaw::Ecological;
      break;
  }
  return e;
}

const std::vector<std::string>& env_names() {
  static const std::vector<std::string> names = {
      "pendulum_cons",  "pendulum_damped",   "pendulum_windy",
      "cartpole_windy", "oscillator_cons",   "oscillator_damped",
      "doublepend_cons", "doublepend_damped", "rlc",
      "lj3",            "heat",              "nbody3",
      "predprey"};
  return names;
}

EnvSpec env_spec(const std::string& name) {
  const auto& names = env_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return env_spec(static_cast<EnvName>(i));
  throw ContractViolation("env_spec: unknown environment '" + name + "'");
}

// ---------------------------------------------------------------------------
// Damping laws
// ---------------------------------------------------------------------------

Eigen::VectorXd true_damping(const EnvSpec& env, const Eigen::VectorXd& q) {
  check_config(env, q, "true_damping");
  if (env.joint_windy) {
    if (env.joint_b.size() != env.n || env.joint_db.size() != env.n)
      throw ContractViolation(
          "true_damping: joint_windy needs per-joint coefficient vectors");
    VectorXd d(env.n);
    for (int i = 0; i < env.n; ++i)
      d(i) = env.joint_b(i) + env.joint_db(i) * std::abs(std::sin(q(i)));
    return d;
  }
  switch (env.law) {
    case DampingLaw::None:
    case DampingLaw::Ecological:
      return VectorXd::Zero(env.n);
    case DampingLaw::Constant:
      return VectorXd::Constant(env.n, env.gamma);
    case DampingLaw::WindyAngular: {
      // The angle-driven coefficient; the single-pendulum variant has only
      // the angular coordinate, the cart-pole reads its pole angle.
      int dof = 0;
      for (int i = 0; i < env.n; ++i)
        if (env.angular[static_cast<size_t>(i)]) dof = i;
      const double s =
          env.windy_d0 + env.windy_dd * std::abs(std::sin(q(dof)));
      if (env.cartpole_per_dof) {
        VectorXd d = VectorXd::Constant(env.n, env.cart_dc);
        d(dof) = s;
        return d;
      }
      return VectorXd::Constant(env.n, s);
    }
  }
  throw ContractViolation("true_damping: unhandled law");
}

// ---------------------------------------------------------------------------
// Initial conditions
// ---------------------------------------------------------------------------

PhaseState sample_initial_state(const EnvSpec& env, CounterRng& rng) {
  const int n = env.n;
  VectorXd q(n), p(n);
  switch (env.id) {
    case EnvName::PendulumCons:
    case EnvName::PendulumDamped:
    case EnvName::PendulumWindy:
      q(0) = rng.uniform(env.ic_angle_lo, env.ic_angle_hi);
      p(0) = rng.gaussian(0.0, env.ic_p_std);
      break;
    case EnvName::CartpoleWindy:
      q(0) = rng.uniform(env.ic_cart_lo, env.ic_cart_hi);
      q(1) = rng.uniform(env.ic_angle_lo, env.ic_angle_hi);
      for (int i = 0; i < n; ++i) p(i) = rng.uniform(env.ic_p_lo, env.ic_p_hi);
      break;
    case EnvName::OscillatorCons:
    case EnvName::OscillatorDamped:
      for (int i = 0; i < n; ++i) q(i) = rng.gaussian(0.0, env.ic_q_std);
      for (int i = 0; i < n; ++i) p(i) = rng.gaussian(0.0, env.ic_p_std);
      break;
    case EnvName::DoublependCons:
    case EnvName::DoublependDamped: {
      for (int i = 0; i < n; ++i)
        q(i) = rng.uniform(env.ic_angle_lo, env.ic_angle_hi);
      // Velocities are the documented draw; convert through the true mass.
      VectorXd w(n);
      for (int i = 0; i < n; ++i)
        w(i) = rng.uniform(env.ic_p_lo, env.ic_p_hi);
      p = mass_apply(truth_mass(env), q, w);
      break;
    }
    case EnvName::Rlc:
      q(0) = rng.uniform(env.ic_state_lo, env.ic_state_hi);
      p(0) = rng.uniform(env.ic_state_lo, env.ic_state_hi);
      break;
    case EnvName::Lj3:
    case EnvName::Nbody3:
      for (int k = 0; k < env.particles; ++k) {
        const auto [bx, by] = triangle_vertex(env.ic_radius, k);
        q(2 * k) = bx + rng.gaussian(0.0, env.ic_jitter);
        q(2 * k + 1) = by + rng.gaussian(0.0, env.ic_jitter);
      }
      for (int i = 0; i < n; ++i) p(i) = rng.gaussian(0.0, env.ic_p_std);
      break;
    case EnvName::Heat:
      for (int i = 0; i < n; ++i)
        q(i) = rng.uniform(env.ic_temp_lo, env.ic_temp_hi);
      for (int i = 0; i < n; ++i) p(i) = rng.gaussian(0.0, env.ic_p_std);
      break;
    case EnvName::Predprey:
      q(0) = rng.uniform(env.ic_prey_lo, env.ic_prey_hi);
      p(0) = rng.uniform(env.ic_pred_lo, env.ic_pred_hi);
      break;
  }
  return {q, p};
}

// ---------------------------------------------------------------------------
// Truth components
// ---------------------------------------------------------------------------

std::shared_ptr<Potential> truth_potential(const EnvSpec& env,
                                           ParamStore& store,
                                           const std::string& prefix,
                                           bool trainable) {
  if (trainable && env.id != EnvName::Nbody3)
    throw ContractViolation(
        "truth_potential: only the gravity template has trainable "
        "coefficients");
  switch (env.id) {
    case EnvName::PendulumCons:
    case EnvName::PendulumDamped:
    case EnvName::PendulumWindy: {
      Eigen::VectorXd a(1);
      a << env.mass_bob * env.gravity * env.length_com;
      return std::make_shared<Potential>(
          make_cosine(store, prefix, a, false));
    }
    case EnvName::CartpoleWindy: {
      // Only the pole angle stores potential energy; the cart coordinate
      // gets a zero amplitude.
      Eigen::VectorXd a(2);
      a << 0.0, env.mass_pole * env.gravity * env.pole_length;
      return std::make_shared<Potential>(
          make_cosine(store, prefix, a, false));
    }
    case EnvName::OscillatorCons:
    case EnvName::OscillatorDamped: {
      const Eigen::MatrixXd k = env.omega * env.omega *
                                Eigen::MatrixXd::Identity(env.n, env.n);
      return std::make_shared<Potential>(
          make_quadratic(store, prefix, k, false));
    }
    case EnvName::DoublependCons:
    case EnvName::DoublependDamped: {
      // Offset so V(0) = 0 (the paper-style pivot reference differs by a
      // constant, which no derivative or energy difference sees).
      Eigen::VectorXd a(2);
      a << (env.m1 + env.m2) * env.gravity * env.l1,
          env.m2 * env.gravity * env.l2;
      return std::make_shared<Potential>(
          make_cosine(store, prefix, a, false));
    }
    case EnvName::Rlc:
      return std::make_shared<Potential>(
          make_rlc(store, prefix, env.capacitance));
    case EnvName::Lj3:
      return std::make_shared<Potential>(make_lennard_jones(
          env.particles, env.space_dim, env.eps_lj, env.sigma_lj, 0.0));
    case EnvName::Heat:
      return std::make_shared<Potential>(
          make_heat_exchange(store, prefix, env.c1, env.c2, env.kappa));
    case EnvName::Nbody3:
      return std::make_shared<Potential>(
          make_gravity(store, prefix, env.particles, env.space_dim,
                       env.g_const, env.body_masses, env.eps_soft, trainable));
    case EnvName::Predprey:
      throw ContractViolation(
          "truth_potential: predator-prey has no truth potential");
  }
  throw ContractViolation("truth_potential: unhandled environment");
}

MassModel truth_mass(const EnvSpec& env, bool constant_approx) {
  switch (env.id) {
    case EnvName::PendulumCons:
    case EnvName::PendulumDamped:
    case EnvName::PendulumWindy:
      return diag_mass(Eigen::VectorXd::Constant(
          1, env.mass_bob * env.length_com * env.length_com));
    case EnvName::CartpoleWindy: {
      auto closure = std::make_shared<CartpoleMass>(
          env.mass_cart, env.mass_pole, env.pole_length);
      if (constant_approx)
        return const_dense_mass(closure->mass(Eigen::VectorXd::Zero(2)));
      return analytic_mass(closure);
    }
    case EnvName::OscillatorCons:
    case EnvName::OscillatorDamped:
      return identity_mass(env.n);
    case EnvName::DoublependCons:
    case EnvName::DoublependDamped: {
      auto closure =
          std::make_shared<DoublependMass>(env.m1, env.m2, env.l1, env.l2);
      if (constant_approx)
        return const_dense_mass(closure->mass(Eigen::VectorXd::Zero(2)));
      return analytic_mass(closure);
    }
    case EnvName::Rlc:
      return diag_mass(Eigen::VectorXd::Constant(1, env.inductance));
    case EnvName::Lj3:
      return diag_mass(
          Eigen::VectorXd::Constant(env.n, env.particle_mass));
    case EnvName::Heat:
      return identity_mass(env.n);
    case EnvName::Nbody3: {
      Eigen::VectorXd d(env.n);
      for (int k = 0; k < env.particles; ++k)
        for (int j = 0; j < env.space_dim; ++j)
          d(env.space_dim * k + j) = env.body_masses(k);
      return diag_mass(d);
    }
    case EnvName::Predprey:
      throw ContractViolation("truth_mass: predator-prey has no truth mass");
  }
  throw ContractViolation("truth_mass: unhandled environment");
}

DampingField truth_damping_field(const EnvSpec& env) {
  return make_diag_law_damping(
      env.n, [env](const Eigen::VectorXd& q) { return true_damping(env, q); });
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

double env_energy(const EnvSpec& env, const Eigen::VectorXd& q,
                  const Eigen::VectorXd& v) {
  check_config(env, q, "env_energy");
  if (v.size() != env.n)
    throw ContractViolation("env_energy: velocity dimension mismatch");
  if (env.id == EnvName::Predprey) {
    // Conservative-limit invariant of the population model; clamp densities
    // so the logarithms stay finite on degenerate inputs.
    const double n1 = std::max(q(0), 1e-12);
    const double n2 = std::max(v(0), 1e-12);
    return env.pp_delta * n1 - env.pp_gamma * std::log(n1) +
           env.pp_beta * n2 - env.pp_alpha * std::log(n2);
  }
  ParamStore store;
  const auto pot = truth_potential(env, store, "energy");
  const MassModel mass = truth_mass(env);
  return potential_value(*pot, q) + 0.5 * v.dot(mass_apply(mass, q, v));
}

Trajectory simulate_trajectory(const EnvSpec& env, const PhaseState& x0,
                               int T) {
  if (T < 1) throw ContractViolation("simulate_trajectory: T must be >= 1");
  if (env.rk4_substeps < 1 || env.dt <= 0.0)
    throw ContractViolation("simulate_trajectory: bad timestep config");
  check_config(env, x0.first, "simulate_trajectory");
  if (x0.second.size() != env.n)
    throw ContractViolation("simulate_trajectory: momentum dimension");

  const int n = env.n;
  Trajectory out;
  out.env = env.name;
  out.dt = env.dt;
  out.q.resize(T, n);
  out.p.resize(T, n);

  // Assemble the truth dynamics once; the store only holds frozen
  // coefficients.
  ParamStore store;
  std::shared_ptr<Potential> pot;
  MassModel mass;
  std::function<VectorXd(const VectorXd&)> field;
  if (env.id == EnvName::Predprey) {
    field = [&env](const VectorXd& x) { return predprey_field(env, x); };
  } else {
    pot = truth_potential(env, store, "truth");
    mass = truth_mass(env);
    field = [&env, &pot, &mass, n](const VectorXd& x) {
      const VectorXd q = x.head(n);
      const VectorXd p = x.tail(n);
      const VectorXd vel = mass_solve(mass, q, p);
      VectorXd grad_q = potential_grad(*pot, q);
      if (mass.kind == MassModel::Kind::KnownAnalytic) {
        const auto jac = mass.analytic->mass_jac(q);
        for (int i = 0; i < n; ++i)
          grad_q(i) += -0.5 * vel.dot(jac[i] * vel);
      }
      const VectorXd d = true_damping(env, q);
      VectorXd dx(2 * n);
      dx << vel, (-grad_q - d.cwiseProduct(vel)).eval();
      return dx;
    };
  }

  VectorXd x(2 * n);
  x << x0.first, x0.second;
  out.q.row(0) = x.head(n).transpose();
  out.p.row(0) = x.tail(n).transpose();
  const double h = env.dt / env.rk4_substeps;
  for (int t = 1; t < T; ++t) {
    try {
      for (int s = 0; s < env.rk4_substeps; ++s) x = rk4_step(field, x, h);
    } catch (const NumericFault&) {
      throw SimulationFault("simulate_trajectory: state left the finite range",
                            t);
    }
    out.q.row(t) = x.head(n).transpose();
    out.p.row(t) = x.tail(n).transpose();
  }
  return out;
}

Dataset generate_dataset(const EnvSpec& env, const DatasetSizes& sizes,
                         std::uint64_t seed) {
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0)
    throw ContractViolation("generate_dataset: negative split size");
  Dataset ds;
  ds.seed = seed;
  ds.spec = env;
  const auto gen_split = [&](int count, std::uint64_t base) {
    std::vector<Trajectory> split;
    split.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      const std::uint64_t stream = base + static_cast<std::uint64_t>(i);
      CounterRng rng(seed, stream);
      Trajectory tr =
          simulate_trajectory(env, sample_initial_state(env, rng), env.T);
      tr.seed = stream;
      split.push_back(std::move(tr));
    }
    return split;
  };
  ds.train = gen_split(sizes.train, 0);
  ds.val = gen_split(sizes.val, static_cast<std::uint64_t>(sizes.train));
  ds.test = gen_split(
      sizes.test, static_cast<std::uint64_t>(sizes.train) +
                      static_cast<std::uint64_t>(sizes.val));
  return ds;
}

// ---------------------------------------------------------------------------
// Model assembly
// ---------------------------------------------------------------------------

HamiltonianModel build_model(const EnvSpec& env, Regime regime,
                             ParamStore& store, const std::string& prefix,
                             ModelOptions opt, CounterRng& rng,
                             bool constant_mass_approx) {
  opt.dt_init = env.dt;
  std::shared_ptr<Potential> v;
  std::optional<MassModel> m;
  if (regime != Regime::Unknown) {
    if (env.id == EnvName::Predprey)
      throw ContractViolation(
          "build_model: predator-prey provides no truth components; use the "
          "unknown regime");
    const bool structured =
        regime == Regime::Partial && env.id == EnvName::Nbody3;
    opt.partial_structured = structured;
    v = truth_potential(env, store, prefix + ".v_true", structured);
    m = truth_mass(env, constant_mass_approx);
  }
  return make_model(store, prefix, regime, env.n, env.angular, std::move(v),
                    std::move(m), opt, rng);
}

}  // namespace phast
