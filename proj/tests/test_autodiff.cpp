#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gmid/autodiff/dual.hpp"
#include "gmid/autodiff/tape.hpp"
#include "gmid/network.hpp"
#include "support.hpp"

using namespace gmid;
using ad::DualSecond;
using ad::Var;

TEST(Grad, Square) {
  const auto g = ad::grad([](std::span<const Var> x) { return x[0] * x[0]; }, std::vector<double>{3.0});
  ASSERT_EQ(g.size(), 1u);
  EXPECT_DOUBLE_EQ(g[0], 6.0);
}

TEST(Grad, Product) {
  const auto g = ad::grad([](std::span<const Var> x) { return x[0] * x[1]; }, std::vector<double>{2.0, 5.0});
  EXPECT_DOUBLE_EQ(g[0], 5.0);
  EXPECT_DOUBLE_EQ(g[1], 2.0);
}

TEST(Grad, ConstantHasZeroGradient) {
  double v = 0.0;
  const auto g = ad::grad([](std::span<const Var>) { return Var(4.0); }, std::vector<double>{1.0, 2.0}, &v);
  EXPECT_EQ(v, 4.0);
  EXPECT_EQ(g, (std::vector<double>{0.0, 0.0}));
}

TEST(Grad, ReusedNodesAccumulate) {
  // y = x * x * x built from one shared node.
  const auto g = ad::grad(
      [](std::span<const Var> x) {
        const Var sq = x[0] * x[0];
        return sq * x[0] + sq;
      },
      std::vector<double>{1.5});
  EXPECT_NEAR(g[0], 3 * 1.5 * 1.5 + 2 * 1.5, 1e-14);
}

TEST(Grad, NonFiniteObjectiveReported) {
  EXPECT_THROW(ad::grad([](std::span<const Var> x) { return ad::log(x[0]); }, std::vector<double>{-1.0}),
               ad::NonFiniteError);
  try {
    ad::grad([](std::span<const Var> x) { return x[0] + x[1]; }, std::vector<double>{1.0, std::nan("")});
    FAIL();
  } catch (const ad::NonFiniteError& e) {
    EXPECT_EQ(e.index(), 1);
  }
}

// Each primitive against central differences on 100 random inputs.
TEST(Grad, PrimitivesMatchFiniteDifferences) {
  using F = std::function<Var(const Var&, const Var&)>;
  using D = std::function<double(double, double)>;
  const std::vector<std::pair<F, D>> prims = {
      {[](const Var& a, const Var& b) { return a + b; }, [](double a, double b) { return a + b; }},
      {[](const Var& a, const Var& b) { return a - b; }, [](double a, double b) { return a - b; }},
      {[](const Var& a, const Var& b) { return a * b; }, [](double a, double b) { return a * b; }},
      {[](const Var& a, const Var& b) { return a / (b * b + Var(0.5)); }, [](double a, double b) { return a / (b * b + 0.5); }},
      {[](const Var& a, const Var&) { return -a; }, [](double a, double) { return -a; }},
      {[](const Var& a, const Var&) { return ad::exp(a); }, [](double a, double) { return std::exp(a); }},
      {[](const Var& a, const Var&) { return ad::log(a * a + Var(0.1)); }, [](double a, double) { return std::log(a * a + 0.1); }},
      {[](const Var& a, const Var&) { return ad::sqrt(a * a + Var(0.1)); }, [](double a, double) { return std::sqrt(a * a + 0.1); }},
      {[](const Var& a, const Var&) { return ad::tanh(a); }, [](double a, double) { return std::tanh(a); }},
      {[](const Var& a, const Var&) { return ad::sin(a); }, [](double a, double) { return std::sin(a); }},
      {[](const Var& a, const Var&) { return ad::cos(a); }, [](double a, double) { return std::cos(a); }},
      {[](const Var& a, const Var&) { return ad::pow(a * a + Var(0.2), 1.7); }, [](double a, double) { return std::pow(a * a + 0.2, 1.7); }},
      {[](const Var& a, const Var&) { return ad::square(a); }, [](double a, double) { return a * a; }},
      {[](const Var& a, const Var&) { return ad::log1p(a * a); }, [](double a, double) { return std::log1p(a * a); }},
  };
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (std::size_t p = 0; p < prims.size(); ++p) {
    for (int i = 0; i < 100; ++i) {
      const std::vector<double> x{u(rng), u(rng)};
      const auto g = ad::grad([&](std::span<const Var> v) { return prims[p].first(v[0], v[1]); }, x);
      const auto fd = oracle::fd_gradient([&](std::span<const double> v) { return prims[p].second(v[0], v[1]); }, x);
      EXPECT_LT(oracle::max_rel_error(g, fd), 1e-6) << "primitive " << p << " case " << i;
    }
  }
}

TEST(Grad, RandomExpressionsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (std::uint64_t c = 0; c < 100; ++c) {
    const oracle::RandomExpression expr(1 + c % 6, 20 + c % 17, c);
    std::vector<double> x(expr.n_inputs());
    for (double& v : x) v = normal(rng);
    const auto g = ad::grad([&](std::span<const Var> v) { return expr(v); }, x);
    const auto fd = oracle::fd_gradient([&](std::span<const double> v) { return expr(v); }, x);
    EXPECT_LT(oracle::max_rel_error(g, fd), 1e-5) << "case " << c;
  }
}

TEST(Dual, ProductRuleForSecondDerivative) {
  const DualSecond<double> a(1.5, 0.3, -0.7), b(-2.0, 1.1, 0.4);
  const auto p = a * b;
  EXPECT_DOUBLE_EQ(p.value, 1.5 * -2.0);
  EXPECT_DOUBLE_EQ(p.d1, 0.3 * -2.0 + 1.5 * 1.1);
  EXPECT_DOUBLE_EQ(p.d2, -0.7 * -2.0 + 2 * 0.3 * 1.1 + 1.5 * 0.4);
}

TEST(Dual, ElementaryFunctions) {
  const double x = 0.37;
  const auto v = DualSecond<double>::variable(x);
  const auto th = ad::tanh(v);
  const double h = std::tanh(x);
  EXPECT_NEAR(th.d1, 1 - h * h, 1e-15);
  EXPECT_NEAR(th.d2, -2 * h * (1 - h * h), 1e-15);
  const auto e = ad::exp(v * v);
  EXPECT_NEAR(e.d1, 2 * x * std::exp(x * x), 1e-14);
  EXPECT_NEAR(e.d2, (2 + 4 * x * x) * std::exp(x * x), 1e-14);
  const auto s = ad::sin(v);
  EXPECT_NEAR(s.d2, -std::sin(x), 1e-15);
  const auto q = DualSecond<double>(1.0) / v;
  EXPECT_NEAR(q.d1, -1 / (x * x), 1e-12);
  EXPECT_NEAR(q.d2, 2 / (x * x * x), 1e-10);
}

TEST(InputDerivs, Polynomials) {
  auto sq = [](const DualSecond<double>& s, const DualSecond<double>&, std::span<const double>) { return s * s; };
  const auto d = ad::input_derivs<double>(sq, 1.3, 0.8, std::span<const double>{});
  EXPECT_DOUBLE_EQ(d.u, 1.3 * 1.3);
  EXPECT_DOUBLE_EQ(d.du_dt, 0.0);
  EXPECT_DOUBLE_EQ(d.du_ds, 2.6);
  EXPECT_DOUBLE_EQ(d.d2u_ds2, 2.0);

  auto bil = [](const DualSecond<double>& s, const DualSecond<double>& t, std::span<const double>) { return s * t; };
  const auto b = ad::input_derivs<double>(bil, 1.3, 0.8, std::span<const double>{});
  EXPECT_DOUBLE_EQ(b.u, 1.3 * 0.8);
  EXPECT_DOUBLE_EQ(b.du_dt, 1.3);
  EXPECT_DOUBLE_EQ(b.du_ds, 0.8);
  EXPECT_DOUBLE_EQ(b.d2u_ds2, 0.0);
}

TEST(InputDerivs, QuadraticNetworkIsExact) {
  // u = p0 s^2 + p1 s t + p2 t^2 + p3 s, every derivative exact.
  auto net = [](const DualSecond<double>& s, const DualSecond<double>& t, std::span<const double> p) {
    return p[0] * (s * s) + p[1] * (s * t) + p[2] * (t * t) + p[3] * s;
  };
  const std::vector<double> p{0.7, -1.2, 0.4, 2.5};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 50; ++i) {
    const double s = u(rng), t = u(rng);
    const auto d = ad::input_derivs<double>(net, s, t, std::span<const double>(p));
    EXPECT_NEAR(d.du_ds, 2 * p[0] * s + p[1] * t + p[3], 1e-13);
    EXPECT_NEAR(d.du_dt, p[1] * s + 2 * p[2] * t, 1e-13);
    EXPECT_NEAR(d.d2u_ds2, 2 * p[0], 1e-14);
  }
}

TEST(InputDerivs, DeepNetworkMatchesFiniteDifferences) {
  NeuralNetSpec spec;
  spec.hidden_layers = 3;
  spec.hidden_width = 16;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0.0, 0.5);
  std::vector<double> theta(spec.n_params());
  for (double& w : theta) w = normal(rng);
  auto net = [&spec](const DualSecond<double>& s, const DualSecond<double>& t, std::span<const double> p) {
    return nn_forward_generic<double, DualSecond<double>>(spec, p, s, t);
  };
  auto u = [&](double s, double t) { return nn_forward(spec, theta, s, t); };
  std::uniform_real_distribution<double> us(-3.0, 3.0), ut(0.0, 5.0);
  for (int i = 0; i < 20; ++i) {
    const double s = us(rng), t = ut(rng);
    const auto d = ad::input_derivs<double>(net, s, t, std::span<const double>(theta));
    const double hs = 1e-4 * (1 + std::abs(s)), ht = 1e-4 * (1 + std::abs(t));
    EXPECT_NEAR(d.u, u(s, t), 1e-14);
    EXPECT_LT(oracle::rel_error(d.du_ds, (u(s + hs, t) - u(s - hs, t)) / (2 * hs)), 1e-4);
    EXPECT_LT(oracle::rel_error(d.du_dt, (u(s, t + ht) - u(s, t - ht)) / (2 * ht)), 1e-4);
    EXPECT_LT(oracle::rel_error(d.d2u_ds2, (u(s + hs, t) - 2 * u(s, t) + u(s - hs, t)) / (hs * hs)), 1e-4);
  }
}

// Parameter gradient through input derivatives inside the objective.
TEST(InputDerivs, NestedGradientMatchesFiniteDifferences) {
  NeuralNetSpec spec;
  spec.hidden_layers = 2;
  spec.hidden_width = 6;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal(0.0, 0.7);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> theta(spec.n_params());
    for (double& w : theta) w = normal(rng);
    const auto g = ad::grad([&](std::span<const Var> p) { return oracle::nested_residual_objective<Var>(spec, p, 0.1); }, theta);
    const auto fd = oracle::fd_gradient(
        [&](std::span<const double> p) { return oracle::nested_residual_objective<double>(spec, p, 0.1); }, theta);
    EXPECT_LT(oracle::max_rel_error(g, fd), 1e-4) << "rep " << rep;
  }
}
