#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <complex>

#include "phast/scalar_ops.hpp"
#include "phast/structured_linalg.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace phast;

namespace {

void randomize_store(ParamStore& store, CounterRng& rng, double bound) {
  for (int id = 0; id < store.size(); ++id) {
    auto& e = store.at(id);
    for (Eigen::Index i = 0; i < e.value.size(); ++i)
      e.value[i] = rng.uniform(-bound, bound);
  }
}

// Constant-head field with exact strengths/directions for oracle checks.
DampingField exact_field(ParamStore& store, const std::string& prefix, int n,
                         double d0, const VectorXd& beta, const MatrixXd& K,
                         CounterRng& rng) {
  const int r = static_cast<int>(beta.size());
  DampingField f = make_damping_field(store, prefix, n, r,
                                      std::vector<bool>(n, false),
                                      /*cap=*/-1.0, /*d0_fixed=*/true, d0,
                                      /*constant_heads=*/true, 32, rng);
  if (r > 0) {
    for (int i = 0; i < r; ++i)
      store.at(f.raw_beta).value[i] = softplus_inverse(beta[i]);
    store.matrix_mut(f.raw_k) = K;
  }
  return f;
}

// Cart-pole style mass closure, implemented independently here so the graph
// nodes are checked against a second derivation.
struct TestMass final : AnalyticMass {
  int dim() const override { return 2; }
  MatrixXd mass(const VectorXd& q) const override {
    MatrixXd m(2, 2);
    m << 2.0, std::cos(q[1]), std::cos(q[1]), 1.0;
    return m;
  }
  std::vector<MatrixXd> mass_jac(const VectorXd& q) const override {
    std::vector<MatrixXd> j(2, MatrixXd::Zero(2, 2));
    const double s = std::sin(q[1]);
    j[1] << 0.0, -s, -s, 0.0;
    return j;
  }
  MatrixXd mass_hess_quad(const VectorXd& q, const VectorXd& v) const override {
    MatrixXd h = MatrixXd::Zero(2, 2);
    h(1, 1) = -2.0 * std::cos(q[1]) * v[0] * v[1];
    return h;
  }
};

double fd_params(ParamStore& store,
                 const std::function<double(Graph&)>& build) {
  store.zero_grad();
  Graph g(&store);
  build(g);
  const VectorXd analytic = collect_gradients(store);
  auto eval = [&]() {
    Graph h(&store);
    return build(h);
  };
  return grad_check(store, eval, analytic, 1e-6);
}

}  // namespace

TEST_CASE("damping apply matches hand values", "[damping]") {
  ParamStore store;
  CounterRng rng(1, 0);

  // Isotropic case.
  DampingField iso = exact_field(store, "iso", 2, 0.3, VectorXd(0),
                                 MatrixXd(2, 0), rng);
  VectorXd v(2);
  v << 1.0, -2.0;
  VectorXd out = damping_apply(iso, VectorXd::Zero(2), v);
  CHECK(out[0] == Catch::Approx(0.3));
  CHECK(out[1] == Catch::Approx(-0.6));

  // Rank-1 projector.
  VectorXd beta(1);
  beta << 1.0;
  MatrixXd K(2, 1);
  K << 1.0, 0.0;
  DampingField proj = exact_field(store, "proj", 2, 0.0, beta, K, rng);
  VectorXd w(2);
  w << 3.0, 5.0;
  out = damping_apply(proj, VectorXd::Zero(2), w);
  CHECK(out[0] == Catch::Approx(3.0).margin(1e-12));
  CHECK(out[1] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("damping apply agrees with the dense matrix", "[damping]") {
  ParamStore store;
  CounterRng rng(2, 0);
  DampingField f = make_damping_field(store, "f", 4, 2, {true, false, true, false},
                                      -1.0, false, 0.1, false, 32, rng);
  CounterRng qrng(3, 0);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd q(4), v(4);
    for (int i = 0; i < 4; ++i) {
      q[i] = qrng.uniform(-3.0, 3.0);
      v[i] = qrng.uniform(-2.0, 2.0);
    }
    const VectorXd fast = damping_apply(f, q, v);
    const VectorXd dense = damping_matrix(f, q) * v;
    REQUIRE((fast - dense).norm() < 1e-12);
  }
}

TEST_CASE("damping matrix trivial forms and symmetry", "[damping]") {
  ParamStore store;
  CounterRng rng(4, 0);
  DampingField iso = exact_field(store, "iso", 2, 0.5, VectorXd(0),
                                 MatrixXd(2, 0), rng);
  MatrixXd D = damping_matrix(iso, VectorXd::Zero(2));
  CHECK((D - 0.5 * MatrixXd::Identity(2, 2)).norm() == 0.0);

  VectorXd beta(1);
  beta << 2.0;
  MatrixXd K(2, 1);
  K << 1.0, 0.0;
  DampingField r1 = exact_field(store, "r1", 2, 0.25, beta, K, rng);
  D = damping_matrix(r1, VectorXd::Zero(2));
  MatrixXd want(2, 2);
  want << 2.25, 0.0, 0.0, 0.25;
  CHECK((D - want).norm() < 1e-12);

  DampingField f = make_damping_field(store, "rnd", 3, 2, {true, true, false},
                                      -1.0, false, 0.1, false, 32, rng);
  randomize_store(store, rng, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd q = VectorXd::NullaryExpr(3, [&](Eigen::Index) {
      return rng.uniform(-3.0, 3.0);
    });
    const MatrixXd Dq = damping_matrix(f, q);
    REQUIRE((Dq - Dq.transpose()).norm() == 0.0);
  }
}

TEST_CASE("damping fields are PSD by construction", "[damping]") {
  CounterRng rng(5, 0);
  for (int inst = 0; inst < 20; ++inst) {
    ParamStore store;
    const int n = 1 + static_cast<int>(rng.uniform() * 6.0);
    const int r = static_cast<int>(rng.uniform() * 4.0);
    std::vector<bool> ang(n);
    for (int i = 0; i < n; ++i) ang[i] = rng.uniform() < 0.5;
    const bool capped = rng.uniform() < 0.5;
    DampingField f = make_damping_field(store, "f", n, r, ang,
                                        capped ? 0.7 : -1.0, false, 0.2,
                                        rng.uniform() < 0.3, 32, rng);
    randomize_store(store, rng, 2.0);
    if (!f.d0_fixed)
      store.at(f.raw_d0).value[0] = rng.uniform(-3.0, 2.0);  // d0 stays >= 0
    for (int t = 0; t < 50; ++t) {
      VectorXd q = VectorXd::NullaryExpr(n, [&](Eigen::Index) {
        return rng.uniform(-4.0, 4.0);
      });
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(damping_matrix(f, q));
      REQUIRE(es.eigenvalues().minCoeff() >= -1e-10);
    }
  }
}

TEST_CASE("capped strengths respect the total bound", "[damping]") {
  ParamStore store;
  CounterRng rng(6, 0);
  const double cap = 0.5;
  DampingField f = make_damping_field(store, "f", 2, 3, {true, false}, cap,
                                      true, 0.3, false, 32, rng);
  randomize_store(store, rng, 3.0);
  for (int t = 0; t < 1000; ++t) {
    VectorXd q = VectorXd::NullaryExpr(2, [&](Eigen::Index) {
      return rng.uniform(-4.0, 4.0);
    });
    const HeadEval h = damping_heads(f, q);
    REQUIRE(h.beta.sum() <= cap + 1e-12);
    REQUIRE(h.beta.minCoeff() >= 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(damping_matrix(f, q));
    REQUIRE(es.eigenvalues().maxCoeff() <= 0.3 + cap + 1e-10);
  }
}

TEST_CASE("unit directions and nonnegative strengths", "[damping]") {
  ParamStore store;
  CounterRng rng(7, 0);
  DampingField f = make_damping_field(store, "f", 3, 2, {false, true, true},
                                      -1.0, false, 0.1, false, 32, rng);
  randomize_store(store, rng, 2.0);
  for (int t = 0; t < 200; ++t) {
    VectorXd q = VectorXd::NullaryExpr(3, [&](Eigen::Index) {
      return rng.uniform(-4.0, 4.0);
    });
    const HeadEval h = damping_heads(f, q);
    for (int i = 0; i < f.r; ++i) {
      REQUIRE(h.beta[i] >= 0.0);
      REQUIRE(std::abs(h.K.col(i).norm() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("non-finite head output raises a numeric fault", "[damping]") {
  ParamStore store;
  CounterRng rng(8, 0);
  DampingField f = make_damping_field(store, "f", 2, 1, {false, false}, -1.0,
                                      false, 0.1, false, 32, rng);
  store.at(f.w2).value[0] = std::numeric_limits<double>::quiet_NaN();
  VectorXd q = VectorXd::Zero(2);
  CHECK_THROWS_AS(damping_apply(f, q, q), NumericFault);
  CHECK_THROWS_WITH(damping_apply(f, q, q),
                    Catch::Matchers::ContainsSubstring("q = ["));
}

TEST_CASE("fixed-law damping evaluates the given diagonal", "[damping]") {
  DampingField f = make_diag_law_damping(2, [](const VectorXd& q) {
    return (VectorXd(2) << 0.3 + 0.5 * std::abs(std::sin(q[0])), 0.1)
        .finished();
  });
  VectorXd q(2), v(2);
  q << kPi / 2.0, 0.0;
  v << 1.0, 2.0;
  const VectorXd out = damping_apply(f, q, v);
  CHECK(out[0] == Catch::Approx(0.8));
  CHECK(out[1] == Catch::Approx(0.2));
  CHECK(damping_matrix(f, q)(0, 0) == Catch::Approx(0.8));
  CHECK(damping_diagonal(f, q)[1] == Catch::Approx(0.1));
  Graph g;
  CHECK_THROWS_AS(damping_heads_graph(g, f, g.constant(q)),
                  ContractViolation);
}

TEST_CASE("mass solve trivial and Woodbury-vs-dense", "[mass]") {
  // Identity and diagonal cases.
  VectorXd p(3);
  p << 1.0, 2.0, 3.0;
  CHECK((mass_solve(identity_mass(3), VectorXd::Zero(3), p) - p).norm() == 0.0);

  VectorXd d(2);
  d << 2.0, 4.0;
  VectorXd p2(2);
  p2 << 2.0, 4.0;
  const VectorXd v2 = mass_solve(diag_mass(d), VectorXd::Zero(2), p2);
  CHECK(v2[0] == Catch::Approx(1.0));
  CHECK(v2[1] == Catch::Approx(1.0));

  // Random diag-plus-low-rank against a dense solve.
  CounterRng rng(9, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform() * 15.0);  // up to 16
    const int r = static_cast<int>(rng.uniform() * 5.0) % (n + 1);
    VectorXd dd = VectorXd::NullaryExpr(n, [&](Eigen::Index) {
      return rng.uniform(0.1, 3.0);
    });
    MatrixXd U = MatrixXd::NullaryExpr(n, std::min(r, 4), [&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    MassModel m = diag_lowrank_mass(dd, U);
    VectorXd pp = VectorXd::NullaryExpr(n, [&](Eigen::Index) {
      return rng.uniform(-2.0, 2.0);
    });
    const VectorXd fast = mass_solve(m, VectorXd::Zero(n), pp);
    const MatrixXd dense = MatrixXd(dd.asDiagonal()) + U * U.transpose();
    const VectorXd ref = dense.fullPivLu().solve(pp);
    REQUIRE((fast - ref).norm() <= 1e-10 * std::max(1.0, ref.norm()));
  }
}

TEST_CASE("Woodbury flop count is affine in n at fixed rank", "[mass]") {
  CounterRng rng(10, 0);
  auto count_for = [&](int n) {
    VectorXd d = VectorXd::Constant(n, 1.5);
    MatrixXd U = MatrixXd::NullaryExpr(n, 3, [&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    FlopCount fc;
    mass_solve(diag_lowrank_mass(d, U), VectorXd::Zero(n),
               VectorXd::Ones(n), &fc);
    return fc.total();
  };
  const long c8 = count_for(8);
  const long c64 = count_for(64);
  const long c512 = count_for(512);
  // Exactly affine: equal per-n slope between any two spans.
  REQUIRE((c512 - c64) * (64 - 8) == (c64 - c8) * (512 - 64));
  REQUIRE(c512 < 8 * c64);  // far from quadratic growth
}

TEST_CASE("mass apply inverts mass solve", "[mass]") {
  CounterRng rng(11, 0);
  VectorXd d = VectorXd::NullaryExpr(5, [&](Eigen::Index) {
    return rng.uniform(0.2, 2.0);
  });
  MatrixXd U = MatrixXd::NullaryExpr(5, 2, [&](Eigen::Index, Eigen::Index) {
    return rng.uniform(-1.0, 1.0);
  });
  MassModel m = diag_lowrank_mass(d, U);
  VectorXd p = VectorXd::NullaryExpr(5, [&](Eigen::Index) {
    return rng.uniform(-1.0, 1.0);
  });
  const VectorXd back = mass_apply(m, VectorXd::Zero(5),
                                   mass_solve(m, VectorXd::Zero(5), p));
  CHECK((back - p).norm() < 1e-12);
}

TEST_CASE("learned mass materializes SPD with unit directions", "[mass]") {
  ParamStore store;
  CounterRng rng(12, 0);
  MassParam mp = make_mass_param(store, "mass", 4, 3, rng);
  randomize_store(store, rng, 3.0);
  const MassModel m = materialize(mp);
  CHECK((m.d.array() > 0.0).all());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(mass_matrix(m, VectorXd()));
  CHECK(es.eigenvalues().minCoeff() >= 1e-12);
}

TEST_CASE("stiffness proxy values", "[diagnostics]") {
  ParamStore store;
  CounterRng rng(13, 0);
  // 0.8 isotropic damping against identity mass at dt = 0.05.
  DampingField f = exact_field(store, "f", 2, 0.8, VectorXd(0), MatrixXd(2, 0),
                               rng);
  CHECK(stiffness_proxy(f, identity_mass(2), VectorXd::Zero(2), 0.05) ==
        Catch::Approx(0.02));

  DampingField zero = exact_field(store, "zero", 2, 0.0, VectorXd(0),
                                  MatrixXd(2, 0), rng);
  CHECK(stiffness_proxy(zero, identity_mass(2), VectorXd::Zero(2), 0.1) ==
        0.0);

  // Against a power-iteration oracle for lambda_max(D).
  DampingField rnd = make_damping_field(store, "rnd", 3, 2,
                                        {false, true, false}, -1.0, false,
                                        0.3, false, 32, rng);
  randomize_store(store, rng, 1.0);
  store.at(rnd.raw_d0).value[0] = softplus_inverse(0.3);
  VectorXd q(3);
  q << 0.5, -1.0, 2.0;
  const MatrixXd D = damping_matrix(rnd, q);
  VectorXd x = VectorXd::Ones(3).normalized();
  double lam = 0.0;
  for (int it = 0; it < 2000; ++it) {
    x = (D * x).normalized();
    lam = x.dot(D * x);
  }
  const double s = stiffness_proxy(rnd, identity_mass(3), q, 0.05);
  CHECK(s == Catch::Approx(0.025 * lam).epsilon(1e-8));
}

TEST_CASE("linearized spectrum closed forms", "[diagnostics]") {
  MatrixXd J(2, 2), R(2, 2), Q(2, 2);
  J << 0, 1, -1, 0;
  R.setZero();
  Q.setIdentity();
  Eigen::VectorXcd eig = linearized_spectrum(J, R, Q);
  std::complex<double> a = eig[0], b = eig[1];
  if (a.imag() < b.imag()) std::swap(a, b);
  CHECK(std::abs(a - std::complex<double>(0, 1)) < 1e-12);
  CHECK(std::abs(b - std::complex<double>(0, -1)) < 1e-12);

  // Damped scalar oscillator: lambda = -gamma/2 +- i sqrt(1 - gamma^2/4).
  const double gamma = 0.1;
  R << 0, 0, 0, gamma;
  eig = linearized_spectrum(J, R, Q);
  a = eig[0];
  b = eig[1];
  if (a.imag() < b.imag()) std::swap(a, b);
  const double re = -gamma / 2.0;
  const double im = std::sqrt(1.0 - gamma * gamma / 4.0);
  CHECK(std::abs(a - std::complex<double>(re, im)) < 1e-12);
  CHECK(std::abs(b - std::complex<double>(re, -im)) < 1e-12);
}

TEST_CASE("spectrum of random passive triples stays left of the axis",
          "[diagnostics]") {
  CounterRng rng(14, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 * (1 + static_cast<int>(rng.uniform() * 4.0));  // 2..8
    MatrixXd A = MatrixXd::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    MatrixXd J = A - A.transpose();
    MatrixXd B = MatrixXd::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    MatrixXd R = B * B.transpose();
    MatrixXd C = MatrixXd::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    MatrixXd Q = C * C.transpose() + 0.05 * MatrixXd::Identity(n, n);
    const Eigen::VectorXcd eig = linearized_spectrum(J, R, Q);
    REQUIRE(eig.real().maxCoeff() <= 1e-10);
  }
  // Precondition violations are rejected.
  MatrixXd notskew = MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(linearized_spectrum(notskew, MatrixXd::Zero(2, 2),
                                      MatrixXd::Identity(2, 2)),
                  ContractViolation);
}

TEST_CASE("damping graph path matches the plain path", "[damping][graph]") {
  ParamStore store;
  CounterRng rng(15, 0);
  for (bool capped : {false, true}) {
    DampingField f = make_damping_field(
        store, capped ? "cap" : "uncap", 3, 2, {true, false, true},
        capped ? 0.6 : -1.0, false, 0.15, false, 32, rng);
    for (int t = 0; t < 10; ++t) {
      VectorXd q = VectorXd::NullaryExpr(3, [&](Eigen::Index) {
        return rng.uniform(-3.0, 3.0);
      });
      VectorXd v = VectorXd::NullaryExpr(3, [&](Eigen::Index) {
        return rng.uniform(-2.0, 2.0);
      });
      Graph g(&store);
      DampingNodes h = damping_heads_graph(g, f, g.constant(q));
      const VectorXd got = g.val(damping_apply_graph(g, h, g.constant(v)));
      const VectorXd want = damping_apply(f, q, v);
      REQUIRE((got - want).norm() <= 1e-14 * std::max(1.0, want.norm()));
      const double quad = g.val(damping_quadform_graph(g, h, g.constant(v)))(0, 0);
      REQUIRE(quad == Catch::Approx(v.dot(want)).epsilon(1e-12));
      REQUIRE(quad >= 0.0);
    }
  }
}

TEST_CASE("damping graph gradients match finite differences",
          "[damping][graph]") {
  ParamStore store;
  CounterRng rng(16, 0);
  store.add("q", 3);
  store.add("v", 3);
  DampingField f = make_damping_field(store, "f", 3, 2, {true, false, false},
                                      0.5, false, 0.2, false, 8, rng);
  store.at("q").value << 0.4, -1.1, 0.7;
  store.at("v").value << 1.0, 0.3, -0.6;

  auto build = [&](Graph& g) {
    NodeId q = g.param(store.id("q"));
    NodeId v = g.param(store.id("v"));
    DampingNodes h = damping_heads_graph(g, f, q);
    NodeId out = damping_apply_graph(g, h, v);
    NodeId loss = g.add(g.sumsq(out), damping_quadform_graph(g, h, v));
    const double value = g.val(loss)(0, 0);
    g.backward(loss);
    return value;
  };
  CHECK(fd_params(store, build) < 1e-6);
}

TEST_CASE("mass graph nodes match plain solves and finite differences",
          "[mass][graph]") {
  ParamStore store;
  CounterRng rng(17, 0);
  store.add("p", 4);
  MassParam mp = make_mass_param(store, "mass", 4, 2, rng);
  store.at("p").value << 0.5, -1.0, 2.0, 0.25;

  // Value agreement with the plain Woodbury path.
  {
    Graph g(&store);
    MassNodes mn = mass_param_nodes(g, mp);
    NodeId v = mass_solve_dlr(g, g.param(store.id("p")), mn.d, mn.U);
    const VectorXd want =
        mass_solve(materialize(mp), VectorXd(), store.at("p").value);
    REQUIRE((g.val(v).col(0) - want).norm() <=
            1e-13 * std::max(1.0, want.norm()));
  }

  auto build = [&](Graph& g) {
    NodeId p = g.param(store.id("p"));
    MassNodes mn = mass_param_nodes(g, mp);
    NodeId v = mass_solve_dlr(g, p, mn.d, mn.U);
    NodeId y = mass_apply_dlr(g, v, mn.d, mn.U);  // y ~= p, still a good probe
    NodeId loss = g.add(g.sumsq(v), g.dot(y, p));
    const double value = g.val(loss)(0, 0);
    g.backward(loss);
    return value;
  };
  CHECK(fd_params(store, build) < 1e-6);

  // Diagonal-only variant (no low-rank factor).
  ParamStore store2;
  CounterRng rng2(18, 0);
  store2.add("p", 3);
  store2.at("p").value << 1.0, -0.5, 0.75;
  MassParam mp2 = make_mass_param(store2, "mass", 3, 0, rng2);
  auto build2 = [&](Graph& g) {
    NodeId p = g.param(store2.id("p"));
    MassNodes mn = mass_param_nodes(g, mp2);
    NodeId v = mass_solve_dlr(g, p, mn.d, mn.U);
    NodeId loss = g.sumsq(v);
    const double value = g.val(loss)(0, 0);
    g.backward(loss);
    return value;
  };
  CHECK(fd_params(store2, build2) < 1e-6);
}

TEST_CASE("analytic mass nodes match finite differences", "[mass][graph]") {
  ParamStore store;
  store.add("q", 2);
  store.add("p", 2);
  store.at("q").value << 0.3, 1.1;
  store.at("p").value << -0.8, 0.6;
  auto am = std::make_shared<TestMass>();

  auto build = [&](Graph& g) {
    NodeId q = g.param(store.id("q"));
    NodeId p = g.param(store.id("p"));
    NodeId v = mass_solve_analytic(g, q, p, am);
    NodeId kg = kinetic_grad_analytic(g, q, p, am);
    NodeId loss = g.add(g.sumsq(v), g.sumsq(kg));
    loss = g.add(loss, g.dot(v, kg));
    const double value = g.val(loss)(0, 0);
    g.backward(loss);
    return value;
  };
  CHECK(fd_params(store, build) < 1e-6);

  // Forward value of the kinetic gradient against central differences of
  // T(q, p) = 1/2 p^T M(q)^{-1} p in q.
  Graph g(&store);
  NodeId kg = kinetic_grad_analytic(g, g.param(store.id("q")),
                                    g.param(store.id("p")), am);
  const VectorXd got = g.val(kg).col(0);
  const VectorXd q0 = store.at("q").value;
  const VectorXd p0 = store.at("p").value;
  auto kinetic = [&](const VectorXd& q) {
    return 0.5 * p0.dot(am->mass(q).llt().solve(p0));
  };
  for (int j = 0; j < 2; ++j) {
    VectorXd qp = q0, qm = q0;
    qp[j] += 1e-6;
    qm[j] -= 1e-6;
    const double fd = (kinetic(qp) - kinetic(qm)) / 2e-6;
    REQUIRE(got[j] == Catch::Approx(fd).margin(1e-8));
  }
}
