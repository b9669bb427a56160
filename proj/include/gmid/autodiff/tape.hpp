#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmid::ad {

class Tape;

/// Reverse-mode scalar. A Var with a null tape is a constant.
class Var {
 public:
  Var() = default;
  Var(double value) : value_(value) {}  // NOLINT: implicit constant promotion
  Var(double value, Tape* tape, std::int32_t index) : value_(value), tape_(tape), index_(index) {}

  double value() const { return value_; }
  Tape* tape() const { return tape_; }
  std::int32_t index() const { return index_; }
  bool is_constant() const { return tape_ == nullptr; }

 private:
  double value_ = 0.0;
  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
};

/// Linear record of primitive operations. Each node has at most two parents
/// with their local partial derivatives; the reverse sweep walks the record
/// backwards, which is a reverse topological order by construction.
class Tape {
 public:
  struct Node {
    std::int32_t parent[2];
    double partial[2];
  };

  Var variable(double value) { return push(value, -1, 0.0, -1, 0.0); }

  Var push(double value, std::int32_t p0, double d0, std::int32_t p1, double d1) {
    nodes_.push_back(Node{{p0, p1}, {d0, d1}});
    return Var(value, this, static_cast<std::int32_t>(nodes_.size() - 1));
  }

  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  void clear() {
    nodes_.clear();
    adjoint_.clear();
  }

  /// Seeds d(output)/d(output) = 1 and propagates adjoints to every node.
  void reverse(const Var& output) {
    adjoint_.assign(nodes_.size(), 0.0);
    if (output.is_constant()) return;
    if (output.tape() != this) throw std::logic_error("reverse: output recorded on another tape");
    adjoint_[static_cast<std::size_t>(output.index())] = 1.0;
    for (std::size_t k = static_cast<std::size_t>(output.index()) + 1; k-- > 0;) {
      const double a = adjoint_[k];
      if (a == 0.0) continue;
      const Node& node = nodes_[k];
      if (node.parent[0] >= 0) adjoint_[static_cast<std::size_t>(node.parent[0])] += a * node.partial[0];
      if (node.parent[1] >= 0) adjoint_[static_cast<std::size_t>(node.parent[1])] += a * node.partial[1];
    }
  }

  double adjoint(const Var& v) const {
    if (v.is_constant()) return 0.0;
    return adjoint_.at(static_cast<std::size_t>(v.index()));
  }

 private:
  std::vector<Node> nodes_;
  std::vector<double> adjoint_;
};

namespace detail {

inline Tape* common_tape(const Var& a, const Var& b) {
  if (a.tape() && b.tape() && a.tape() != b.tape()) {
    throw std::logic_error("autodiff: operands recorded on different tapes");
  }
  return a.tape() ? a.tape() : b.tape();
}

inline Var unary(const Var& a, double value, double da) {
  if (a.is_constant()) return Var(value);
  return a.tape()->push(value, a.index(), da, -1, 0.0);
}

inline Var binary(const Var& a, const Var& b, double value, double da, double db) {
  Tape* tape = common_tape(a, b);
  if (!tape) return Var(value);
  return tape->push(value, a.is_constant() ? -1 : a.index(), da, b.is_constant() ? -1 : b.index(), db);
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value() + b.value(), 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value() - b.value(), 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value() * b.value(), b.value(), a.value());
}
inline Var operator/(const Var& a, const Var& b) {
  const double q = a.value() / b.value();
  return detail::binary(a, b, q, 1.0 / b.value(), -q / b.value());
}
inline Var operator-(const Var& a) { return detail::unary(a, -a.value(), -1.0); }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }

inline Var exp(const Var& a) {
  const double e = std::exp(a.value());
  return detail::unary(a, e, e);
}
inline Var log(const Var& a) { return detail::unary(a, std::log(a.value()), 1.0 / a.value()); }
inline Var sqrt(const Var& a) {
  const double r = std::sqrt(a.value());
  return detail::unary(a, r, 0.5 / r);
}
inline Var tanh(const Var& a) {
  const double h = std::tanh(a.value());
  return detail::unary(a, h, 1.0 - h * h);
}
inline Var sin(const Var& a) { return detail::unary(a, std::sin(a.value()), std::cos(a.value())); }
inline Var cos(const Var& a) { return detail::unary(a, std::cos(a.value()), -std::sin(a.value())); }
inline Var pow(const Var& a, double p) {
  return detail::unary(a, std::pow(a.value(), p), p * std::pow(a.value(), p - 1.0));
}
inline Var square(const Var& a) { return detail::unary(a, a.value() * a.value(), 2.0 * a.value()); }
inline Var log1p(const Var& a) { return detail::unary(a, std::log1p(a.value()), 1.0 / (1.0 + a.value())); }

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }
inline double square(double x) { return x * x; }

/// Error raised when an objective evaluates to a non-finite value.
class NonFiniteError : public std::domain_error {
 public:
  NonFiniteError(const std::string& what, std::ptrdiff_t index)
      : std::domain_error(what), index_(index) {}
  /// Offending parameter index, or -1 when it could not be attributed.
  std::ptrdiff_t index() const { return index_; }

 private:
  std::ptrdiff_t index_;
};

/// Gradient of `objective` (callable on std::span<const Var> returning Var)
/// at `at`. `value_out`, when given, receives the objective value.
template <class Objective>
std::vector<double> grad(Objective&& objective, std::span<const double> at, double* value_out = nullptr) {
  for (std::size_t i = 0; i < at.size(); ++i) {
    if (!std::isfinite(at[i])) {
      throw NonFiniteError("grad: non-finite parameter at index " + std::to_string(i),
                           static_cast<std::ptrdiff_t>(i));
    }
  }
  Tape tape;
  std::vector<Var> x;
  x.reserve(at.size());
  for (double v : at) x.push_back(tape.variable(v));
  const Var y = objective(std::span<const Var>(x));
  if (!std::isfinite(y.value())) {
    throw NonFiniteError("grad: objective is not finite (value " + std::to_string(y.value()) + ")", -1);
  }
  tape.reverse(y);
  std::vector<double> g(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    g[i] = tape.adjoint(x[i]);
    if (!std::isfinite(g[i])) {
      throw NonFiniteError("grad: non-finite gradient component at index " + std::to_string(i),
                           static_cast<std::ptrdiff_t>(i));
    }
  }
  if (value_out) *value_out = y.value();
  return g;
}

}  // namespace gmid::ad
