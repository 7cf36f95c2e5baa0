#pragma once

// Reverse-mode autodiff over Eigen-valued nodes.
//
// A Graph is a flat tape of nodes, each holding a dense value (vectors are
// n-by-1 matrices) and, during the backward sweep, an adjoint of the same
// shape. Nodes are created eagerly: builders compute the forward value at
// construction time, so the tape order is already a topological order and
// backward() is a single reverse scan.
//
// Only generic operations live here (arithmetic, dense products, reductions,
// slicing, causal convolution, the wrapped squared error). Modules with
// structure-specific derivatives (mass solves, potential gradients) register
// their own Node subclasses through add_node(); the base class exposes
// everything they need.
//
// Tapes are rebuilt per trajectory. mark()/rewind() truncate the tape back to
// a watermark so one Graph object can be reused across a batch without
// reallocating; parameter-node deduplication survives truncation for nodes
// below the watermark.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "phast/errors.hpp"
#include "phast/params.hpp"

namespace phast {

using NodeId = std::int32_t;

class Graph;

struct Node {
  Eigen::MatrixXd val;
  Eigen::MatrixXd adj;
  bool touched = false;

  virtual ~Node() = default;
  // Propagate this node's adjoint into its inputs via Graph::accum. Leaves
  // either do nothing or scatter into the ParamStore.
  virtual void backward(Graph& g) {}
};

// Closures describing a configuration-dependent symmetric mass matrix M(q).
// Implementations provide first and second derivatives so that graph nodes
// can solve with M and differentiate kinetic-energy gradients in closed form.
struct AnalyticMass {
  virtual ~AnalyticMass() = default;
  virtual int dim() const = 0;
  virtual Eigen::MatrixXd mass(const Eigen::VectorXd& q) const = 0;
  // One matrix per coordinate: jac[i] = dM/dq_i.
  virtual std::vector<Eigen::MatrixXd> mass_jac(const Eigen::VectorXd& q) const = 0;
  // Packed quadratic forms of the second derivative: out(i, j) = v^T (d^2 M /
  // dq_i dq_j) v. Symmetric in (i, j).
  virtual Eigen::MatrixXd mass_hess_quad(const Eigen::VectorXd& q,
                                         const Eigen::VectorXd& v) const = 0;
};

// A scalar field with closed-form gradient and Hessian-vector product, used
// by the structured-gradient node (the Hessian drives its backward pass).
struct GradField {
  virtual ~GradField() = default;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd grad(const Eigen::VectorXd& q) const = 0;
  virtual Eigen::VectorXd hess_vec(const Eigen::VectorXd& q,
                                   const Eigen::VectorXd& u) const = 0;
};

class Graph {
 public:
  explicit Graph(ParamStore* store = nullptr) : store_(store) {
    nodes_.reserve(4096);
  }

  ParamStore* store() const { return store_; }

  // --- leaves ---
  NodeId constant(const Eigen::MatrixXd& m);
  NodeId scalar(double s);
  // Parameter leaf, deduplicated per graph so adjoints from every use site
  // accumulate on one node before scattering into the store.
  NodeId param(int pid);

  // --- elementwise arithmetic (1x1 operands broadcast) ---
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  // Divide by a 1x1 scalar node.
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId x, double a);
  NodeId neg(NodeId x) { return scale(x, -1.0); }
  // a*x + y with constant a.
  NodeId axpy(double a, NodeId x, NodeId y);

  // --- dense products and reductions ---
  NodeId matvec(NodeId w, NodeId x);
  NodeId dot(NodeId a, NodeId b);
  NodeId sumsq(NodeId x);
  NodeId sum(NodeId x);

  // --- nonlinearities ---
  NodeId silu(NodeId x);
  NodeId tanh_(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softplus(NodeId x);
  NodeId sin_(NodeId x);
  NodeId cos_(NodeId x);
  NodeId abs_(NodeId x);
  NodeId relu(NodeId x);
  NodeId sqrt_(NodeId x);
  NodeId square(NodeId x);

  // --- shape ops ---
  NodeId concat_rows(const std::vector<NodeId>& parts);
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId rows(NodeId x, int r0, int nr);
  NodeId col(NodeId x, int j);
  NodeId transpose(NodeId x);
  // x / max(||x||, floor); below the floor the map is linear.
  NodeId normalize(NodeId x, double floor);

  // Causal dilated 1-D convolution over a (C_in x T) sequence. W is
  // (C_out x C_in*k) with tap j in columns [j*C_in, (j+1)*C_in); tap j reads
  // the input delayed by dilation*(k-1-j) steps, so tap k-1 is the current
  // sample and no output depends on future columns. b is (C_out x 1).
  NodeId conv1d_causal(NodeId x, NodeId w, NodeId b, int k, int dilation);

  // Sum of squared errors against a constant target, with the difference
  // wrapped to [-pi, pi) on coordinates flagged angular.
  NodeId wrap_sq_err(NodeId pred, const Eigen::VectorXd& target,
                     const std::vector<bool>& angular);

  // --- extension API for structure-specific nodes ---
  NodeId add_node(std::unique_ptr<Node> n);
  Node& node(NodeId id) { return *nodes_[static_cast<size_t>(id)]; }
  const Node& node(NodeId id) const { return *nodes_[static_cast<size_t>(id)]; }
  const Eigen::MatrixXd& val(NodeId id) const { return nodes_[static_cast<size_t>(id)]->val; }
  // Adjoint after backward(); zero-sized if the node was never reached.
  const Eigen::MatrixXd& adj(NodeId id) const { return nodes_[static_cast<size_t>(id)]->adj; }
  void accum(NodeId id, const Eigen::Ref<const Eigen::MatrixXd>& g);

  // Reverse sweep from a scalar output. Single-shot per build: rewind or
  // discard the graph before reusing it.
  void backward(NodeId out);

  std::size_t size() const { return nodes_.size(); }
  std::size_t mark() const { return nodes_.size(); }
  void rewind(std::size_t watermark);

 private:
  NodeId push(std::unique_ptr<Node> n);

  ParamStore* store_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::pair<int, NodeId>> param_nodes_;
};

// Forward-mode bundle: a value and a block of tangent columns. Used for
// gradients with respect to inputs (not parameters), e.g. closed-form checks
// and the forward half of the potential-gradient node.
struct DualVec {
  Eigen::VectorXd v;
  Eigen::MatrixXd t;

  static DualVec seed(const Eigen::VectorXd& x) {
    return DualVec{x, Eigen::MatrixXd::Identity(x.size(), x.size())};
  }
};

// Gradient of a scalar-valued dual program at x: runs f on an identity-seeded
// dual and returns the tangent row transposed. f must return a 1-dim value.
Eigen::VectorXd input_gradient(
    const std::function<DualVec(const DualVec&)>& f, const Eigen::VectorXd& x);

// Central-difference check of an analytic gradient for the trainable
// parameters of a store. fn re-evaluates the objective from current store
// values; analytic is the flattened gradient in registration order (only
// trainable entries are checked). Returns the worst relative error, where
// each coordinate's error is |fd - an| / max(1, |fd|, |an|).
double grad_check(ParamStore& store, const std::function<double()>& fn,
                  const Eigen::VectorXd& analytic, double h);

// Collect store gradients (flattened, registration order, all entries) into
// one vector; zeros for non-trainable entries unless they were accumulated.
Eigen::VectorXd collect_gradients(const ParamStore& store);

}  // namespace phast
