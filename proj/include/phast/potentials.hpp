#pragma once

// Potential-energy variants: closed-form structured families (cosine,
// quadratic and its electrical/thermal specializations, softened pair
// potentials), a SiLU perceptron with optional Fourier features, and the
// hybrid base-plus-scaled-residual composition. Every variant has a plain
// evaluation path and a graph path; graph gradients flow to both the
// configuration and any trainable coefficients.

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "phast/errors.hpp"
#include "phast/features.hpp"
#include "phast/graph.hpp"
#include "phast/params.hpp"
#include "phast/rng.hpp"

namespace phast {

// ---------------------------------------------------------------------------
// Dense perceptron (weight matrices in ParamStore)
// ---------------------------------------------------------------------------

// `layers` counts weight matrices: in -> hidden -> ... -> out with SiLU
// after every layer except the last.
struct Mlp {
  int in = 0;
  int hidden = 0;
  int out = 0;
  int layers = 0;
  ParamStore* store = nullptr;
  std::vector<int> w;  // (fan_out x fan_in) each
  std::vector<int> b;  // (fan_out) each
};

Mlp make_mlp(ParamStore& store, const std::string& prefix, int in, int hidden,
             int out, int layers, CounterRng& rng);

Eigen::VectorXd mlp_eval(const Mlp& m, const Eigen::VectorXd& x);
NodeId mlp_graph(Graph& g, const Mlp& m, NodeId x);

// Forward-mode pass carrying tangent columns alongside the value.
struct MlpDual {
  Eigen::VectorXd value;
  Eigen::MatrixXd tangent;  // (out x n_seed)
};
MlpDual mlp_dual(const Mlp& m, const Eigen::VectorXd& xv,
                 const Eigen::MatrixXd& xt);

// ---------------------------------------------------------------------------
// Potential
// ---------------------------------------------------------------------------

enum class PotentialKind {
  Cosine,        // V = sum_i a_i (1 - cos q_i)
  Quadratic,     // V = 1/2 q^T K q, K symmetric PSD
  Rlc,           // V = q^2 / (2C), the capacitive energy (quadratic, n = 1)
  HeatExchange,  // V = 1/2 c1 T1^2 + 1/2 c2 T2^2 + 1/2 kappa (T1 - T2)^2
  LennardJones,  // V = sum_{i<j} 4 eps [ (sigma/r~)^12 - (sigma/r~)^6 ]
  GravityN,      // V = -sum_{i<j} G m_i m_j / r~,  r~ = sqrt(r^2 + eps_soft^2)
  Neural,        // V = MLP(features(q))
  Hybrid,        // V = base(q) + softplus(rho_eps) * residual(q)
};

struct Potential {
  PotentialKind kind = PotentialKind::Cosine;
  int n = 0;                  // configuration dimension
  std::vector<bool> angular;  // feature map for the neural variant
  ParamStore* store = nullptr;

  // Trainable coefficients (unused ids stay -1):
  // Cosine amplitudes (n), quadratic-family stiffness (n x n), or raw
  // gravity masses (particles), mapped through softplus for positivity.
  int coeff = -1;

  // Fixed physical constants.
  double capacitance = 1.0;                    // Rlc
  double c1 = 1.0, c2 = 1.0, kappa = 0.0;      // HeatExchange
  double eps_lj = 1.0, sigma_lj = 1.0;         // LennardJones
  double g_const = 1.0;                        // GravityN
  double eps_soft = 0.0;                       // pair softening
  int particles = 0;                           // pair variants
  int space_dim = 2;                           // coordinates per particle

  Mlp mlp;  // Neural

  std::shared_ptr<Potential> base, residual;  // Hybrid
  int rho_eps = -1;                           // Hybrid raw scale
};

Potential make_cosine(ParamStore& store, const std::string& prefix,
                      const Eigen::VectorXd& a, bool trainable);
// K must be symmetric PSD (checked at construction).
Potential make_quadratic(ParamStore& store, const std::string& prefix,
                         const Eigen::MatrixXd& k, bool trainable);
Potential make_rlc(ParamStore& store, const std::string& prefix,
                   double capacitance);
Potential make_heat_exchange(ParamStore& store, const std::string& prefix,
                             double c1, double c2, double kappa);
Potential make_lennard_jones(int particles, int space_dim, double eps,
                             double sigma, double eps_soft);
Potential make_gravity(ParamStore& store, const std::string& prefix,
                       int particles, int space_dim, double g_const,
                       const Eigen::VectorXd& masses, double eps_soft,
                       bool trainable);
Potential make_neural(ParamStore& store, const std::string& prefix, int n,
                      std::vector<bool> angular, int hidden, int layers,
                      CounterRng& rng);
// rho_init defaults keep the residual scale small at construction
// (softplus(-3) ~= 0.049); construction asserts scale <= 0.05.
Potential make_hybrid(ParamStore& store, const std::string& prefix,
                      std::shared_ptr<Potential> base,
                      std::shared_ptr<Potential> residual,
                      double rho_init = -3.0);

double potential_value(const Potential& v, const Eigen::VectorXd& q);
Eigen::VectorXd potential_grad(const Potential& v, const Eigen::VectorXd& q);
NodeId potential_value_graph(Graph& g, const Potential& v, NodeId q);
NodeId potential_grad_graph(Graph& g, const Potential& v, NodeId q);

// Current residual scale softplus(rho_eps) of a hybrid.
double hybrid_scale(const Potential& v);
// Positive per-particle masses of a GravityN potential.
Eigen::VectorXd gravity_masses(const Potential& v);

}  // namespace phast
