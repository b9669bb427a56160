#pragma once

#include <cmath>
#include <span>

#include "gmid/autodiff/tape.hpp"

namespace gmid::ad {

/// Truncated second-order Taylor number along one input direction:
/// value, first and second directional derivatives. The component type may
/// itself be a tape Var, so derivatives with respect to the inputs stay
/// differentiable with respect to parameters.
template <class S>
struct DualSecond {
  S value{};
  S d1{};
  S d2{};

  DualSecond() = default;
  DualSecond(S v) : value(v), d1(0.0), d2(0.0) {}  // NOLINT: constants promote implicitly
  DualSecond(S v, S first, S second) : value(v), d1(first), d2(second) {}

  static DualSecond variable(S v) { return DualSecond(v, S(1.0), S(0.0)); }
};

template <class S>
DualSecond<S> operator+(const DualSecond<S>& a, const DualSecond<S>& b) {
  return {a.value + b.value, a.d1 + b.d1, a.d2 + b.d2};
}
template <class S>
DualSecond<S> operator-(const DualSecond<S>& a, const DualSecond<S>& b) {
  return {a.value - b.value, a.d1 - b.d1, a.d2 - b.d2};
}
template <class S>
DualSecond<S> operator-(const DualSecond<S>& a) {
  return {-a.value, -a.d1, -a.d2};
}
template <class S>
DualSecond<S> operator*(const DualSecond<S>& a, const DualSecond<S>& b) {
  return {a.value * b.value, a.d1 * b.value + a.value * b.d1,
          a.d2 * b.value + S(2.0) * a.d1 * b.d1 + a.value * b.d2};
}
template <class S>
DualSecond<S> operator*(const S& c, const DualSecond<S>& a) {
  return {c * a.value, c * a.d1, c * a.d2};
}
template <class S>
DualSecond<S> operator*(const DualSecond<S>& a, const S& c) {
  return c * a;
}
template <class S>
DualSecond<S> operator+(const DualSecond<S>& a, const S& c) {
  return {a.value + c, a.d1, a.d2};
}
template <class S>
DualSecond<S> operator+(const S& c, const DualSecond<S>& a) {
  return a + c;
}

/// Chain rule for f(a) given f, f', f'' at a.value.
template <class S>
DualSecond<S> compose(const DualSecond<S>& a, const S& f, const S& df, const S& d2f) {
  return {f, df * a.d1, d2f * a.d1 * a.d1 + df * a.d2};
}

template <class S>
DualSecond<S> operator/(const DualSecond<S>& a, const DualSecond<S>& b) {
  const S inv = S(1.0) / b.value;
  const S inv2 = inv * inv;
  return a * compose(b, inv, -inv2, S(2.0) * inv2 * inv);
}

template <class S>
DualSecond<S> tanh(const DualSecond<S>& a) {
  using std::tanh;
  const S h = tanh(a.value);
  const S g1 = S(1.0) - h * h;
  return compose(a, h, g1, S(-2.0) * h * g1);
}

template <class S>
DualSecond<S> exp(const DualSecond<S>& a) {
  using std::exp;
  const S e = exp(a.value);
  return compose(a, e, e, e);
}

template <class S>
DualSecond<S> sin(const DualSecond<S>& a) {
  using std::sin;
  using std::cos;
  const S sv = sin(a.value);
  return compose(a, sv, cos(a.value), -sv);
}

/// u and its partial derivatives in (s, t) for the residual of a
/// first-order-in-time, second-order-in-space PDE.
template <class S>
struct InputDerivatives {
  S u;
  S du_dt;
  S du_ds;
  S d2u_ds2;
};

/// Evaluates `net` (callable as net(DualSecond<S> s, DualSecond<S> t, params))
/// twice: once seeded along s (value, du/ds, d2u/ds2) and once along t.
template <class S, class Net>
InputDerivatives<S> input_derivs(Net&& net, double s, double t, std::span<const S> params) {
  const DualSecond<S> along_s = net(DualSecond<S>::variable(S(s)), DualSecond<S>(S(t)), params);
  const DualSecond<S> along_t = net(DualSecond<S>(S(s)), DualSecond<S>::variable(S(t)), params);
  return {along_s.value, along_t.d1, along_s.d1, along_s.d2};
}

}  // namespace gmid::ad
