#include "phast/graph.hpp"

#include <cmath>
#include <utility>

#include "phast/scalar_ops.hpp"

namespace phast {

namespace {

struct ConstNode final : Node {
  void backward(Graph&) override {}
};

struct ParamNode final : Node {
  int pid;
  explicit ParamNode(int p) : pid(p) {}
  void backward(Graph& g) override {
    ParamEntry& e = g.store()->at(pid);
    e.grad += Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size());
  }
};

struct AddNode final : Node {
  NodeId a, b;
  AddNode(NodeId a_, NodeId b_) : a(a_), b(b_) {}
  void backward(Graph& g) override {
    g.accum(a, adj);
    g.accum(b, adj);
  }
};

struct SubNode final : Node {
  NodeId a, b;
  SubNode(NodeId a_, NodeId b_) : a(a_), b(b_) {}
  void backward(Graph& g) override {
    g.accum(a, adj);
    g.accum(b, -adj);
  }
};

// Elementwise product; if scalar_b is set, b is 1x1 and broadcasts.
struct MulNode final : Node {
  NodeId a, b;
  bool scalar_b;
  MulNode(NodeId a_, NodeId b_, bool sb) : a(a_), b(b_), scalar_b(sb) {}
  void backward(Graph& g) override {
    const Eigen::MatrixXd& av = g.val(a);
    const Eigen::MatrixXd& bv = g.val(b);
    if (scalar_b) {
      g.accum(a, (adj * bv(0, 0)).eval());
      Eigen::MatrixXd bg(1, 1);
      bg(0, 0) = adj.cwiseProduct(av).sum();
      g.accum(b, bg);
    } else {
      g.accum(a, adj.cwiseProduct(bv));
      g.accum(b, adj.cwiseProduct(av));
    }
  }
};

// a divided by a 1x1 scalar node b.
struct DivNode final : Node {
  NodeId a, b;
  DivNode(NodeId a_, NodeId b_) : a(a_), b(b_) {}
  void backward(Graph& g) override {
    const double bv = g.val(b)(0, 0);
    g.accum(a, (adj / bv).eval());
    Eigen::MatrixXd bg(1, 1);
    bg(0, 0) = -adj.cwiseProduct(val).sum() / bv;
    g.accum(b, bg);
  }
};

struct ScaleNode final : Node {
  NodeId x;
  double c;
  ScaleNode(NodeId x_, double c_) : x(x_), c(c_) {}
  void backward(Graph& g) override { g.accum(x, (adj * c).eval()); }
};

struct AxpyNode final : Node {
  NodeId x, y;
  double a;
  AxpyNode(double a_, NodeId x_, NodeId y_) : x(x_), y(y_), a(a_) {}
  void backward(Graph& g) override {
    g.accum(x, (adj * a).eval());
    g.accum(y, adj);
  }
};

struct MatVecNode final : Node {
  NodeId w, x;
  MatVecNode(NodeId w_, NodeId x_) : w(w_), x(x_) {}
  void backward(Graph& g) override {
    g.accum(w, (adj * g.val(x).transpose()).eval());
    g.accum(x, (g.val(w).transpose() * adj).eval());
  }
};

struct DotNode final : Node {
  NodeId a, b;
  DotNode(NodeId a_, NodeId b_) : a(a_), b(b_) {}
  void backward(Graph& g) override {
    const double s = adj(0, 0);
    g.accum(a, (s * g.val(b)).eval());
    g.accum(b, (s * g.val(a)).eval());
  }
};

struct SumSqNode final : Node {
  NodeId x;
  explicit SumSqNode(NodeId x_) : x(x_) {}
  void backward(Graph& g) override {
    g.accum(x, (2.0 * adj(0, 0) * g.val(x)).eval());
  }
};

struct SumNode final : Node {
  NodeId x;
  explicit SumNode(NodeId x_) : x(x_) {}
  void backward(Graph& g) override {
    const Eigen::MatrixXd& xv = g.val(x);
    g.accum(x, Eigen::MatrixXd::Constant(xv.rows(), xv.cols(), adj(0, 0)));
  }
};

enum class UnOp {
  Silu,
  Tanh,
  Sigmoid,
  Softplus,
  Sin,
  Cos,
  Abs,
  Relu,
  Sqrt,
  Square
};

struct UnaryNode final : Node {
  NodeId x;
  UnOp op;
  UnaryNode(NodeId x_, UnOp op_) : x(x_), op(op_) {}

  static double fwd(UnOp op, double v) {
    switch (op) {
      case UnOp::Silu: return v * sigmoid_fn(v);
      case UnOp::Tanh: return std::tanh(v);
      case UnOp::Sigmoid: return sigmoid_fn(v);
      case UnOp::Softplus: return softplus_fn(v);
      case UnOp::Sin: return std::sin(v);
      case UnOp::Cos: return std::cos(v);
      case UnOp::Abs: return std::abs(v);
      case UnOp::Relu: return v > 0.0 ? v : 0.0;
      case UnOp::Sqrt: return std::sqrt(v);
      case UnOp::Square: return v * v;
    }
    return 0.0;
  }

  // Derivative from the input value v and the cached output y.
  static double deriv(UnOp op, double v, double y) {
    switch (op) {
      case UnOp::Silu: {
        const double s = sigmoid_fn(v);
        return s * (1.0 + v * (1.0 - s));
      }
      case UnOp::Tanh: return 1.0 - y * y;
      case UnOp::Sigmoid: return y * (1.0 - y);
      case UnOp::Softplus: return sigmoid_fn(v);
      case UnOp::Sin: return std::cos(v);
      case UnOp::Cos: return -std::sin(v);
      case UnOp::Abs: return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      case UnOp::Relu: return v > 0.0 ? 1.0 : 0.0;
      case UnOp::Sqrt: return y > 0.0 ? 0.5 / y : 0.0;
      case UnOp::Square: return 2.0 * v;
    }
    return 0.0;
  }

  void backward(Graph& g) override {
    const Eigen::MatrixXd& xv = g.val(x);
    Eigen::MatrixXd gx(xv.rows(), xv.cols());
    for (Eigen::Index j = 0; j < xv.cols(); ++j)
      for (Eigen::Index i = 0; i < xv.rows(); ++i)
        gx(i, j) = adj(i, j) * deriv(op, xv(i, j), val(i, j));
    g.accum(x, gx);
  }
};

struct ConcatRowsNode final : Node {
  std::vector<NodeId> parts;
  explicit ConcatRowsNode(std::vector<NodeId> p) : parts(std::move(p)) {}
  void backward(Graph& g) override {
    Eigen::Index r = 0;
    for (NodeId p : parts) {
      const Eigen::Index nr = g.val(p).rows();
      g.accum(p, adj.middleRows(r, nr));
      r += nr;
    }
  }
};

struct ConcatColsNode final : Node {
  std::vector<NodeId> parts;
  explicit ConcatColsNode(std::vector<NodeId> p) : parts(std::move(p)) {}
  void backward(Graph& g) override {
    Eigen::Index c = 0;
    for (NodeId p : parts) {
      const Eigen::Index nc = g.val(p).cols();
      g.accum(p, adj.middleCols(c, nc));
      c += nc;
    }
  }
};

struct RowsNode final : Node {
  NodeId x;
  int r0, nr;
  RowsNode(NodeId x_, int r0_, int nr_) : x(x_), r0(r0_), nr(nr_) {}
  void backward(Graph& g) override {
    const Eigen::MatrixXd& xv = g.val(x);
    Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(xv.rows(), xv.cols());
    gx.middleRows(r0, nr) = adj;
    g.accum(x, gx);
  }
};

struct ColNode final : Node {
  NodeId x;
  int j;
  ColNode(NodeId x_, int j_) : x(x_), j(j_) {}
  void backward(Graph& g) override {
    const Eigen::MatrixXd& xv = g.val(x);
    Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(xv.rows(), xv.cols());
    gx.col(j) = adj;
    g.accum(x, gx);
  }
};

struct TransposeNode final : Node {
  NodeId x;
  explicit TransposeNode(NodeId x_) : x(x_) {}
  void backward(Graph& g) override { g.accum(x, adj.transpose().eval()); }
};

struct NormalizeNode final : Node {
  NodeId x;
  double floor;
  double norm = 0.0;  // cached ||x||
  NormalizeNode(NodeId x_, double f) : x(x_), floor(f) {}
  void backward(Graph& g) override {
    if (norm > floor) {
      // y = x / ||x||; dy = (I - y y^T)/||x|| dx
      const double yg = (val.transpose() * adj)(0, 0);
      g.accum(x, ((adj - val * yg) / norm).eval());
    } else {
      g.accum(x, (adj / floor).eval());
    }
  }
};

struct Conv1dCausalNode final : Node {
  NodeId x, w, b;
  int k, dil;
  Conv1dCausalNode(NodeId x_, NodeId w_, NodeId b_, int k_, int d_)
      : x(x_), w(w_), b(b_), k(k_), dil(d_) {}
  void backward(Graph& g) override {
    const Eigen::MatrixXd& xv = g.val(x);
    const Eigen::MatrixXd& wv = g.val(w);
    const Eigen::Index cin = xv.rows();
    const Eigen::Index cout = wv.rows();
    const Eigen::Index T = xv.cols();
    Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(cin, T);
    Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(cout, cin * k);
    for (int j = 0; j < k; ++j) {
      const Eigen::Index s = static_cast<Eigen::Index>(dil) * (k - 1 - j);
      if (s >= T) continue;
      const Eigen::Index len = T - s;
      const auto wj = wv.middleCols(static_cast<Eigen::Index>(j) * cin, cin);
      gx.leftCols(len).noalias() += wj.transpose() * adj.rightCols(len);
      gw.middleCols(static_cast<Eigen::Index>(j) * cin, cin).noalias() +=
          adj.rightCols(len) * xv.leftCols(len).transpose();
    }
    g.accum(x, gx);
    g.accum(w, gw);
    g.accum(b, adj.rowwise().sum());
  }
};

struct WrapSqErrNode final : Node {
  NodeId pred;
  Eigen::VectorXd err;  // wrapped residual, cached at forward time
  explicit WrapSqErrNode(NodeId p) : pred(p) {}
  void backward(Graph& g) override {
    g.accum(pred, (2.0 * adj(0, 0) * err).eval());
  }
};

}  // namespace

NodeId Graph::push(std::unique_ptr<Node> n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::add_node(std::unique_ptr<Node> n) { return push(std::move(n)); }

void Graph::accum(NodeId id, const Eigen::Ref<const Eigen::MatrixXd>& g) {
  Node& n = *nodes_[static_cast<size_t>(id)];
  if (g.rows() != n.val.rows() || g.cols() != n.val.cols())
    throw ContractViolation("Graph::accum: adjoint shape mismatch");
  if (!n.touched) {
    n.adj = g;
    n.touched = true;
  } else {
    n.adj += g;
  }
}

void Graph::backward(NodeId out) {
  Node& o = *nodes_[static_cast<size_t>(out)];
  if (o.val.size() != 1)
    throw ContractViolation("Graph::backward: output must be scalar");
  o.adj = Eigen::MatrixXd::Ones(1, 1);
  o.touched = true;
  for (NodeId i = out; i >= 0; --i) {
    Node& n = *nodes_[static_cast<size_t>(i)];
    if (n.touched) n.backward(*this);
  }
}

void Graph::rewind(std::size_t watermark) {
  if (watermark > nodes_.size())
    throw ContractViolation("Graph::rewind: watermark beyond tape");
  nodes_.resize(watermark);
  // Surviving nodes (parameter leaves, shared subgraphs) keep their values
  // but must forget adjoints from the previous backward sweep.
  for (auto& n : nodes_) {
    n->touched = false;
    n->adj.resize(0, 0);
  }
  while (!param_nodes_.empty() &&
         static_cast<std::size_t>(param_nodes_.back().second) >= watermark)
    param_nodes_.pop_back();
}

NodeId Graph::constant(const Eigen::MatrixXd& m) {
  auto n = std::make_unique<ConstNode>();
  n->val = m;
  return push(std::move(n));
}

NodeId Graph::scalar(double s) {
  auto n = std::make_unique<ConstNode>();
  n->val = Eigen::MatrixXd::Constant(1, 1, s);
  return push(std::move(n));
}

NodeId Graph::param(int pid) {
  if (!store_) throw ContractViolation("Graph::param: no ParamStore attached");
  for (const auto& [p, id] : param_nodes_)
    if (p == pid) return id;
  auto n = std::make_unique<ParamNode>(pid);
  n->val = store_->matrix(pid);
  NodeId id = push(std::move(n));
  param_nodes_.emplace_back(pid, id);
  return id;
}

namespace {
void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractViolation(std::string("Graph::") + op + ": shape mismatch");
}
}  // namespace

NodeId Graph::add(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "add");
  auto n = std::make_unique<AddNode>(a, b);
  n->val = val(a) + val(b);
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "sub");
  auto n = std::make_unique<SubNode>(a, b);
  n->val = val(a) - val(b);
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const bool a_scalar = val(a).size() == 1;
  const bool b_scalar = val(b).size() == 1;
  if (a_scalar && !b_scalar) std::swap(a, b);
  const bool broadcast = val(b).size() == 1 && val(a).size() != 1;
  if (!broadcast) require_same_shape(val(a), val(b), "mul");
  auto n = std::make_unique<MulNode>(a, b, broadcast);
  n->val = broadcast ? (val(a) * val(b)(0, 0)).eval()
                     : val(a).cwiseProduct(val(b)).eval();
  return push(std::move(n));
}

NodeId Graph::div(NodeId a, NodeId b) {
  if (val(b).size() != 1)
    throw ContractViolation("Graph::div: denominator must be 1x1");
  const double bv = val(b)(0, 0);
  if (bv == 0.0) throw NumericFault("Graph::div: zero denominator");
  auto n = std::make_unique<DivNode>(a, b);
  n->val = val(a) / bv;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double a) {
  auto n = std::make_unique<ScaleNode>(x, a);
  n->val = val(x) * a;
  return push(std::move(n));
}

NodeId Graph::axpy(double a, NodeId x, NodeId y) {
  require_same_shape(val(x), val(y), "axpy");
  auto n = std::make_unique<AxpyNode>(a, x, y);
  n->val = a * val(x) + val(y);
  return push(std::move(n));
}

NodeId Graph::matvec(NodeId w, NodeId x) {
  if (val(w).cols() != val(x).rows() || val(x).cols() != 1)
    throw ContractViolation("Graph::matvec: shape mismatch");
  auto n = std::make_unique<MatVecNode>(w, x);
  n->val = val(w) * val(x);
  return push(std::move(n));
}

NodeId Graph::dot(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "dot");
  auto n = std::make_unique<DotNode>(a, b);
  n->val = Eigen::MatrixXd::Constant(1, 1, val(a).cwiseProduct(val(b)).sum());
  return push(std::move(n));
}

NodeId Graph::sumsq(NodeId x) {
  auto n = std::make_unique<SumSqNode>(x);
  n->val = Eigen::MatrixXd::Constant(1, 1, val(x).squaredNorm());
  return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
  auto n = std::make_unique<SumNode>(x);
  n->val = Eigen::MatrixXd::Constant(1, 1, val(x).sum());
  return push(std::move(n));
}

namespace {
NodeId make_unary(Graph& g, NodeId x, UnOp op) {
  const Eigen::MatrixXd& xv = g.val(x);
  auto n = std::make_unique<UnaryNode>(x, op);
  n->val.resize(xv.rows(), xv.cols());
  for (Eigen::Index j = 0; j < xv.cols(); ++j)
    for (Eigen::Index i = 0; i < xv.rows(); ++i)
      n->val(i, j) = UnaryNode::fwd(op, xv(i, j));
  return g.add_node(std::move(n));
}
}  // namespace

NodeId Graph::silu(NodeId x) { return make_unary(*this, x, UnOp::Silu); }
NodeId Graph::tanh_(NodeId x) { return make_unary(*this, x, UnOp::Tanh); }
NodeId Graph::sigmoid(NodeId x) { return make_unary(*this, x, UnOp::Sigmoid); }
NodeId Graph::softplus(NodeId x) { return make_unary(*this, x, UnOp::Softplus); }
NodeId Graph::sin_(NodeId x) { return make_unary(*this, x, UnOp::Sin); }
NodeId Graph::cos_(NodeId x) { return make_unary(*this, x, UnOp::Cos); }
NodeId Graph::abs_(NodeId x) { return make_unary(*this, x, UnOp::Abs); }
NodeId Graph::relu(NodeId x) { return make_unary(*this, x, UnOp::Relu); }
NodeId Graph::sqrt_(NodeId x) { return make_unary(*this, x, UnOp::Sqrt); }
NodeId Graph::square(NodeId x) { return make_unary(*this, x, UnOp::Square); }

NodeId Graph::concat_rows(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ContractViolation("Graph::concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = val(parts[0]).cols();
  for (NodeId p : parts) {
    if (val(p).cols() != cols)
      throw ContractViolation("Graph::concat_rows: column mismatch");
    rows += val(p).rows();
  }
  auto n = std::make_unique<ConcatRowsNode>(parts);
  n->val.resize(rows, cols);
  Eigen::Index r = 0;
  for (NodeId p : parts) {
    n->val.middleRows(r, val(p).rows()) = val(p);
    r += val(p).rows();
  }
  return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ContractViolation("Graph::concat_cols: empty");
  Eigen::Index cols = 0;
  const Eigen::Index rows = val(parts[0]).rows();
  for (NodeId p : parts) {
    if (val(p).rows() != rows)
      throw ContractViolation("Graph::concat_cols: row mismatch");
    cols += val(p).cols();
  }
  auto n = std::make_unique<ConcatColsNode>(parts);
  n->val.resize(rows, cols);
  Eigen::Index c = 0;
  for (NodeId p : parts) {
    n->val.middleCols(c, val(p).cols()) = val(p);
    c += val(p).cols();
  }
  return push(std::move(n));
}

NodeId Graph::rows(NodeId x, int r0, int nr) {
  if (r0 < 0 || nr < 0 || r0 + nr > val(x).rows())
    throw ContractViolation("Graph::rows: range out of bounds");
  auto n = std::make_unique<RowsNode>(x, r0, nr);
  n->val = val(x).middleRows(r0, nr);
  return push(std::move(n));
}

NodeId Graph::col(NodeId x, int j) {
  if (j < 0 || j >= val(x).cols())
    throw ContractViolation("Graph::col: index out of bounds");
  auto n = std::make_unique<ColNode>(x, j);
  n->val = val(x).col(j);
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId x) {
  auto n = std::make_unique<TransposeNode>(x);
  n->val = val(x).transpose();
  return push(std::move(n));
}

NodeId Graph::normalize(NodeId x, double floor) {
  if (val(x).cols() != 1)
    throw ContractViolation("Graph::normalize: expects a column vector");
  if (floor <= 0.0)
    throw ContractViolation("Graph::normalize: floor must be positive");
  auto n = std::make_unique<NormalizeNode>(x, floor);
  n->norm = val(x).norm();
  n->val = val(x) / std::max(n->norm, floor);
  return push(std::move(n));
}

NodeId Graph::conv1d_causal(NodeId x, NodeId w, NodeId b, int k, int dilation) {
  const Eigen::MatrixXd& xv = val(x);
  const Eigen::MatrixXd& wv = val(w);
  const Eigen::MatrixXd& bv = val(b);
  if (k < 1 || dilation < 1)
    throw ContractViolation("Graph::conv1d_causal: bad kernel/dilation");
  if (wv.cols() != xv.rows() * k)
    throw ContractViolation("Graph::conv1d_causal: weight shape mismatch");
  if (bv.rows() != wv.rows() || bv.cols() != 1)
    throw ContractViolation("Graph::conv1d_causal: bias shape mismatch");
  const Eigen::Index cin = xv.rows();
  const Eigen::Index T = xv.cols();
  auto n = std::make_unique<Conv1dCausalNode>(x, w, b, k, dilation);
  n->val = bv.replicate(1, T);
  for (int j = 0; j < k; ++j) {
    const Eigen::Index s = static_cast<Eigen::Index>(dilation) * (k - 1 - j);
    if (s >= T) continue;
    const Eigen::Index len = T - s;
    n->val.rightCols(len).noalias() +=
        wv.middleCols(static_cast<Eigen::Index>(j) * cin, cin) * xv.leftCols(len);
  }
  return push(std::move(n));
}

NodeId Graph::wrap_sq_err(NodeId pred, const Eigen::VectorXd& target,
                          const std::vector<bool>& angular) {
  const Eigen::MatrixXd& pv = val(pred);
  if (pv.cols() != 1 || pv.rows() != target.size() ||
      static_cast<Eigen::Index>(angular.size()) != target.size())
    throw ContractViolation("Graph::wrap_sq_err: shape mismatch");
  auto n = std::make_unique<WrapSqErrNode>(pred);
  n->err.resize(target.size());
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double d = pv(i, 0) - target[i];
    n->err[i] = angular[static_cast<size_t>(i)] ? wrap_angle(d) : d;
  }
  n->val = Eigen::MatrixXd::Constant(1, 1, n->err.squaredNorm());
  return push(std::move(n));
}

Eigen::VectorXd input_gradient(
    const std::function<DualVec(const DualVec&)>& f, const Eigen::VectorXd& x) {
  DualVec out = f(DualVec::seed(x));
  if (out.v.size() != 1)
    throw ContractViolation("input_gradient: field must be scalar-valued");
  return out.t.row(0).transpose();
}

double grad_check(ParamStore& store, const std::function<double()>& fn,
                  const Eigen::VectorXd& analytic, double h) {
  if (h <= 0.0) throw ContractViolation("grad_check: h must be positive");
  Eigen::Index flat = 0;
  for (const auto& e : store.entries()) flat += e.value.size();
  if (analytic.size() != flat)
    throw ContractViolation("grad_check: gradient length mismatch");
  double worst = 0.0;
  Eigen::Index k = 0;
  for (int id = 0; id < store.size(); ++id) {
    ParamEntry& e = store.at(id);
    if (!e.trainable) {
      k += e.value.size();
      continue;
    }
    for (Eigen::Index i = 0; i < e.value.size(); ++i, ++k) {
      const double orig = e.value[i];
      e.value[i] = orig + h;
      const double fp = fn();
      e.value[i] = orig - h;
      const double fm = fn();
      e.value[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[k];
      const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

Eigen::VectorXd collect_gradients(const ParamStore& store) {
  Eigen::Index flat = 0;
  for (const auto& e : store.entries()) flat += e.value.size();
  Eigen::VectorXd out(flat);
  Eigen::Index k = 0;
  for (const auto& e : store.entries()) {
    out.segment(k, e.grad.size()) = e.grad;
    k += e.grad.size();
  }
  return out;
}

}  // namespace phast
