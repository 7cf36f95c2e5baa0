#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "phast/potentials.hpp"
#include "phast/scalar_ops.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace phast;

namespace {

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

// Autodiff gradient of the scalar value graph in q (q registered as a param).
VectorXd value_graph_grad(const Potential& v, ParamStore& store,
                          const VectorXd& q) {
  store.at("q").value = q;
  store.zero_grad();
  Graph g(&store);
  NodeId val = potential_value_graph(g, v, g.param(store.id("q")));
  g.backward(val);
  return store.at("q").grad;
}

}  // namespace

TEST_CASE("cosine potential hand values", "[structured]") {
  ParamStore store;
  VectorXd a(1);
  a << 9.81;
  Potential v = make_cosine(store, "v", a, false);
  VectorXd q(1);
  q << 0.0;
  CHECK(potential_value(v, q) == Catch::Approx(0.0).margin(1e-15));
  q << kPi;
  CHECK(potential_value(v, q) == Catch::Approx(2.0 * 9.81));

  VectorXd a1(1);
  a1 << 1.0;
  Potential v1 = make_cosine(store, "v1", a1, false);
  q << kPi / 2.0;
  CHECK(potential_grad(v1, q)[0] == Catch::Approx(1.0));
}

TEST_CASE("quadratic potential hand values", "[structured]") {
  ParamStore store;
  Potential v = make_quadratic(store, "v", MatrixXd::Identity(2, 2), false);
  VectorXd q(2);
  q << 1.0, 1.0;
  CHECK(potential_value(v, q) == Catch::Approx(1.0));
  q << 2.0, -3.0;
  const VectorXd g = potential_grad(v, q);
  CHECK(g[0] == Catch::Approx(2.0));
  CHECK(g[1] == Catch::Approx(-3.0));

  CHECK_THROWS_AS(
      make_quadratic(store, "bad", (MatrixXd(2, 2) << 0, 1, 0, 0).finished(),
                     false),
      ContractViolation);
  CHECK_THROWS_AS(
      make_quadratic(store, "bad2",
                     (MatrixXd(2, 2) << -1, 0, 0, 1).finished(), false),
      ContractViolation);
}

TEST_CASE("rlc and heat-exchange specializations", "[structured]") {
  ParamStore store;
  Potential rlc = make_rlc(store, "rlc", 1.0);
  VectorXd q(1);
  q << 1.0;
  CHECK(potential_value(rlc, q) == Catch::Approx(0.5));
  CHECK(potential_grad(rlc, q)[0] == Catch::Approx(1.0));

  const double c1 = 0.7, c2 = 1.3, kap = 0.4;
  Potential heat = make_heat_exchange(store, "heat", c1, c2, kap);
  CounterRng rng(21, 0);
  for (int t = 0; t < 20; ++t) {
    VectorXd T(2);
    T << rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0);
    const double want = 0.5 * c1 * T[0] * T[0] + 0.5 * c2 * T[1] * T[1] +
                        0.5 * kap * (T[0] - T[1]) * (T[0] - T[1]);
    REQUIRE(potential_value(heat, T) == Catch::Approx(want).epsilon(1e-12));
  }
  CHECK_THROWS_AS(make_rlc(store, "bad", 0.0), ContractViolation);
}

TEST_CASE("Lennard-Jones well minimum", "[structured]") {
  const double eps = 0.8, sigma = 1.3;
  Potential v = make_lennard_jones(2, 2, eps, sigma, 0.0);
  const double req = std::pow(2.0, 1.0 / 6.0) * sigma;
  VectorXd q(4);
  q << 0.0, 0.0, req, 0.0;
  CHECK(potential_value(v, q) == Catch::Approx(-eps).epsilon(1e-12));
  // The gradient vanishes at the well bottom.
  CHECK(potential_grad(v, q).norm() < 1e-12);
  // Coincident particles with zero softening are rejected.
  VectorXd q0 = VectorXd::Zero(4);
  CHECK_THROWS_AS(potential_value(v, q0), ContractViolation);
}

TEST_CASE("gravity gradient matches central differences", "[structured]") {
  ParamStore store;
  VectorXd m(2);
  m << 1.0, 1.0;
  Potential v = make_gravity(store, "grav", 2, 2, 1.0, m, 0.1, false);
  CounterRng rng(22, 0);
  for (int t = 0; t < 10; ++t) {
    VectorXd q = VectorXd::NullaryExpr(4, [&](Eigen::Index) {
      return rng.uniform(-2.0, 2.0);
    });
    const VectorXd g = potential_grad(v, q);
    for (int j = 0; j < 4; ++j) {
      VectorXd qp = q, qm = q;
      qp[j] += 1e-6;
      qm[j] -= 1e-6;
      const double fd =
          (potential_value(v, qp) - potential_value(v, qm)) / 2e-6;
      REQUIRE(g[j] == Catch::Approx(fd).margin(1e-7));
    }
  }
  const VectorXd masses = gravity_masses(v);
  CHECK(masses[0] == Catch::Approx(1.0));
  CHECK(masses[1] == Catch::Approx(1.0));
}

TEST_CASE("closed-form gradients equal value-graph autodiff", "[graph]") {
  CounterRng rng(23, 0);
  ParamStore store;
  store.add("q", 4, 1, false);

  std::vector<Potential> variants;
  variants.push_back(
      make_cosine(store, "cos",
                  (VectorXd(4) << 1.5, -0.4, 2.0, 0.7).finished(), false));
  MatrixXd b = MatrixXd::NullaryExpr(4, 4, [&](Eigen::Index, Eigen::Index) {
    return rng.uniform(-1.0, 1.0);
  });
  variants.push_back(
      make_quadratic(store, "quad", MatrixXd(b * b.transpose()), false));
  variants.push_back(make_lennard_jones(2, 2, 0.9, 1.1, 0.2));
  variants.push_back(make_gravity(store, "grav", 2, 2, 1.0,
                                  (VectorXd(2) << 1.3, 0.8).finished(), 0.1,
                                  false));

  for (const Potential& v : variants) {
    for (int t = 0; t < 100; ++t) {
      VectorXd q = VectorXd::NullaryExpr(4, [&](Eigen::Index) {
        return rng.uniform(-2.5, 2.5);
      });
      const VectorXd closed = potential_grad(v, q);
      const VectorXd audo = value_graph_grad(v, store, q);
      REQUIRE((closed - audo).norm() <= 1e-10 * std::max(1.0, closed.norm()));
    }
  }

  // 1-dimensional variants.
  ParamStore store1;
  store1.add("q", 1, 1, false);
  Potential rlc = make_rlc(store1, "rlc", 2.0);
  ParamStore store2;
  store2.add("q", 2, 1, false);
  Potential heat = make_heat_exchange(store2, "heat", 0.7, 1.3, 0.4);
  for (int t = 0; t < 100; ++t) {
    VectorXd q1(1);
    q1 << rng.uniform(-2.0, 2.0);
    REQUIRE((potential_grad(rlc, q1) - value_graph_grad(rlc, store1, q1))
                .norm() < 1e-10);
    VectorXd q2(2);
    q2 << rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0);
    REQUIRE((potential_grad(heat, q2) - value_graph_grad(heat, store2, q2))
                .norm() < 1e-10);
  }
}

TEST_CASE("grad-graph forward values match closed forms", "[graph]") {
  CounterRng rng(24, 0);
  ParamStore store;
  Potential grav = make_gravity(store, "grav", 3, 2, 1.0,
                                (VectorXd(3) << 1.0, 2.0, 0.5).finished(),
                                0.1, false);
  Potential lj = make_lennard_jones(3, 2, 1.0, 1.0, 0.05);
  for (int t = 0; t < 25; ++t) {
    VectorXd q = VectorXd::NullaryExpr(6, [&](Eigen::Index) {
      return rng.uniform(-2.0, 2.0);
    });
    Graph g(&store);
    NodeId qn = g.constant(q);
    REQUIRE((g.val(potential_grad_graph(g, grav, qn)).col(0) -
             potential_grad(grav, q))
                .norm() < 1e-12);
    REQUIRE((g.val(potential_grad_graph(g, lj, qn)).col(0) -
             potential_grad(lj, q))
                .norm() < 1e-12);
    REQUIRE(g.val(potential_value_graph(g, grav, qn))(0, 0) ==
            Catch::Approx(potential_value(grav, q)).epsilon(1e-12));
    REQUIRE(g.val(potential_value_graph(g, lj, qn))(0, 0) ==
            Catch::Approx(potential_value(lj, q)).epsilon(1e-12));
  }
}

TEST_CASE("neural potential: dual gradient matches autodiff", "[neural]") {
  ParamStore store;
  CounterRng rng(25, 0);
  store.add("q", 3, 1, false);
  Potential v = make_neural(store, "v", 3, {true, false, true}, 16, 3, rng);
  for (int t = 0; t < 50; ++t) {
    VectorXd q = VectorXd::NullaryExpr(3, [&](Eigen::Index) {
      return rng.uniform(-3.0, 3.0);
    });
    const VectorXd dual = potential_grad(v, q);
    const VectorXd audo = value_graph_grad(v, store, q);
    REQUIRE((dual - audo).norm() <= 1e-10 * std::max(1.0, dual.norm()));
    // The reverse-over-forward node emits the same forward value.
    Graph g(&store);
    const VectorXd node =
        g.val(potential_grad_graph(g, v, g.constant(q))).col(0);
    REQUIRE((node - dual).norm() <= 1e-13 * std::max(1.0, dual.norm()));
  }
}

TEST_CASE("neural gradient node differentiates to q and weights",
          "[neural][graph]") {
  ParamStore store;
  CounterRng rng(26, 0);
  store.add("q", 2);
  store.at("q").value << 0.6, -1.2;
  Potential v = make_neural(store, "v", 2, {true, false}, 8, 3, rng);

  auto build = [&](Graph& g) {
    NodeId q = g.param(store.id("q"));
    NodeId grad = potential_grad_graph(g, v, q);
    NodeId loss = g.add(g.sumsq(grad), g.sum(grad));
    const double value = g.val(loss)(0, 0);
    g.backward(loss);
    return value;
  };
  CHECK(fd_params(store, build) < 1e-6);
}

TEST_CASE("structured coefficient gradients flow through both paths",
          "[graph]") {
  ParamStore store;
  CounterRng rng(27, 0);
  store.add("q", 2);
  store.at("q").value << 0.8, -0.3;
  Potential cosv = make_cosine(store, "cos",
                               (VectorXd(2) << 1.2, 0.5).finished(), true);
  MatrixXd k(2, 2);
  k << 2.0, 0.3, 0.3, 1.0;
  Potential quad = make_quadratic(store, "quad", k, true);

  auto build = [&](Graph& g) {
    NodeId q = g.param(store.id("q"));
    NodeId loss = g.add(
        g.add(potential_value_graph(g, cosv, q),
              g.sumsq(potential_grad_graph(g, cosv, q))),
        g.add(potential_value_graph(g, quad, q),
              g.sumsq(potential_grad_graph(g, quad, q))));
    const double value = g.val(loss)(0, 0);
    g.backward(loss);
    return value;
  };
  CHECK(fd_params(store, build) < 1e-6);
}

TEST_CASE("gravity mass gradients flow when trainable", "[graph]") {
  ParamStore store;
  CounterRng rng(28, 0);
  store.add("q", 4);
  store.at("q").value << 0.0, 0.0, 1.4, 0.7;
  Potential grav = make_gravity(store, "grav", 2, 2, 1.0,
                                (VectorXd(2) << 1.0, 2.0).finished(), 0.1,
                                true);
  auto build = [&](Graph& g) {
    NodeId q = g.param(store.id("q"));
    NodeId loss = g.add(potential_value_graph(g, grav, q),
                        g.sumsq(potential_grad_graph(g, grav, q)));
    const double value = g.val(loss)(0, 0);
    g.backward(loss);
    return value;
  };
  CHECK(fd_params(store, build) < 1e-6);
}

TEST_CASE("hybrid scale starts small and differentiates", "[hybrid]") {
  ParamStore store;
  CounterRng rng(29, 0);
  auto base = std::make_shared<Potential>(
      make_cosine(store, "base", (VectorXd(1) << 9.81).finished(), false));
  auto res = std::make_shared<Potential>(
      make_neural(store, "res", 1, {true}, 8, 3, rng));
  Potential hyb = make_hybrid(store, "hyb", base, res);
  CHECK(hybrid_scale(hyb) <= 0.05);
  CHECK(hybrid_scale(hyb) > 0.0);
  CHECK_THROWS_AS(make_hybrid(store, "hyb2", base, res, /*rho_init=*/1.0),
                  ContractViolation);

  // Value is base + eps * residual.
  VectorXd q(1);
  q << 1.1;
  CHECK(potential_value(hyb, q) ==
        Catch::Approx(potential_value(*base, q) +
                      hybrid_scale(hyb) * potential_value(*res, q)));

  store.add("q", 1);
  store.at("q").value << 0.9;
  auto build = [&](Graph& g) {
    NodeId qn = g.param(store.id("q"));
    NodeId loss = g.add(potential_value_graph(g, hyb, qn),
                        g.sumsq(potential_grad_graph(g, hyb, qn)));
    const double value = g.val(loss)(0, 0);
    g.backward(loss);
    return value;
  };
  CHECK(fd_params(store, build) < 1e-6);
  // Base coefficients stay frozen: non-trainable entries take no gradient
  // into account in fd_params, but also verify the flag directly.
  CHECK_FALSE(store.at("base.a").trainable);
}

TEST_CASE("dimension mismatches are rejected", "[contracts]") {
  ParamStore store;
  Potential v = make_cosine(store, "v", VectorXd::Ones(2), false);
  CHECK_THROWS_AS(potential_value(v, VectorXd::Zero(3)), ContractViolation);
  CHECK_THROWS_AS(potential_grad(v, VectorXd::Zero(1)), ContractViolation);
}
