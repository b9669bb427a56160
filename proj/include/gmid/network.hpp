#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmid/autodiff/dual.hpp"
#include "gmid/gp.hpp"

namespace gmid {

/// Fully connected tanh network (s, t) -> u with a linear output unit.
///
/// Inputs are rescaled to [-1, 1]: s_n = 2 (s - s_lo) / (s_hi - s_lo) - 1 and
/// t_n = 2 t / t_max - 1. Parameters are one flat vector; layer l occupies
/// [offset(l), offset(l+1)) and stores its weight matrix row-major
/// (out x in) followed by its bias vector (out).
struct NeuralNetSpec {
  std::size_t hidden_layers = 3;
  std::size_t hidden_width = 16;
  double s_lo = -3.14159265358979323846;
  double s_hi = 3.14159265358979323846;
  double t_max = 5.0;

  static constexpr std::size_t input_dim = 2;
  static constexpr std::size_t output_dim = 1;

  std::size_t n_layers() const { return hidden_layers + 1; }
  std::size_t fan_in(std::size_t l) const { return l == 0 ? input_dim : hidden_width; }
  std::size_t fan_out(std::size_t l) const { return l == hidden_layers ? output_dim : hidden_width; }

  std::size_t offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t j = 0; j < l; ++j) off += fan_out(j) * (fan_in(j) + 1);
    return off;
  }
  std::size_t weight_offset(std::size_t l) const { return offset(l); }
  std::size_t bias_offset(std::size_t l) const { return offset(l) + fan_out(l) * fan_in(l); }
  std::size_t n_params() const { return offset(n_layers()); }

  double s_scale() const { return 2.0 / (s_hi - s_lo); }
  double t_scale() const { return 2.0 / t_max; }

  void validate() const {
    if (hidden_layers < 1 || hidden_width < 1) throw std::invalid_argument("NeuralNetSpec: need >= 1 hidden unit/layer");
    if (!(s_lo < s_hi) || !(t_max > 0.0)) throw std::invalid_argument("NeuralNetSpec: invalid input ranges");
  }
};

/// Generic forward pass. `In` is the input scalar type: S itself, or
/// ad::DualSecond<S> when input derivatives are wanted.
template <class S, class In>
In nn_forward_generic(const NeuralNetSpec& spec, std::span<const S> theta, const In& s, const In& t) {
  if (theta.size() != spec.n_params()) {
    throw std::invalid_argument("nn_forward: theta has " + std::to_string(theta.size()) + " entries, expected " +
                                std::to_string(spec.n_params()));
  }
  using std::tanh;
  using ad::tanh;
  std::vector<In> act = {s * S(spec.s_scale()) + S(-1.0 - spec.s_lo * spec.s_scale()),
                         t * S(spec.t_scale()) + S(-1.0)};
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const std::size_t in = spec.fan_in(l), out = spec.fan_out(l);
    const std::size_t w0 = spec.weight_offset(l), b0 = spec.bias_offset(l);
    std::vector<In> next(out);
    for (std::size_t r = 0; r < out; ++r) {
      In acc = In(theta[b0 + r]);
      for (std::size_t c = 0; c < in; ++c) acc = acc + theta[w0 + r * in + c] * act[c];
      next[r] = l + 1 < spec.n_layers() ? tanh(acc) : acc;
    }
    act = std::move(next);
  }
  return act[0];
}

inline double nn_forward(const NeuralNetSpec& spec, std::span<const double> theta, double s, double t) {
  return nn_forward_generic<double, double>(spec, theta, s, t);
}

/// Network values and input derivatives at a batch of points, with a
/// hand-written reverse pass for the parameter gradient. Arrays are indexed
/// by point.
class NetworkBatch {
 public:
  struct Channels {
    Eigen::RowVectorXd u, u_t, u_s, u_ss;
  };

  struct Layer {
    Eigen::MatrixXd a, a_t, a_s, a_ss;
    Eigen::MatrixXd z_t, z_s, z_ss;
    Eigen::MatrixXd h, g1, g2;
  };

  /// Per-evaluation state; one per thread.
  struct Workspace {
    std::vector<Layer> layers;
    Channels out;
  };

  NetworkBatch(NeuralNetSpec spec, std::span<const Coord> points) : spec_(spec) {
    spec_.validate();
    const auto P = static_cast<Eigen::Index>(points.size());
    input_.resize(2, P);
    for (Eigen::Index p = 0; p < P; ++p) {
      const Coord& c = points[static_cast<std::size_t>(p)];
      input_(0, p) = (c.s - spec_.s_lo) * spec_.s_scale() - 1.0;
      input_(1, p) = c.t * spec_.t_scale() - 1.0;
    }
  }

  std::size_t n_points() const { return static_cast<std::size_t>(input_.cols()); }
  const NeuralNetSpec& spec() const { return spec_; }

  const Channels& forward(std::span<const double> theta, Workspace& ws) const {
    if (theta.size() != spec_.n_params()) throw std::invalid_argument("NetworkBatch: theta length mismatch");
    const Eigen::Index P = input_.cols();
    ws.layers.resize(spec_.n_layers());
    Eigen::MatrixXd a = input_;
    Eigen::MatrixXd a_t = Eigen::MatrixXd::Zero(2, P), a_s = Eigen::MatrixXd::Zero(2, P);
    Eigen::MatrixXd a_ss = Eigen::MatrixXd::Zero(2, P);
    a_t.row(1).setConstant(spec_.t_scale());
    a_s.row(0).setConstant(spec_.s_scale());
    for (std::size_t l = 0; l < spec_.n_layers(); ++l) {
      Layer& L = ws.layers[l];
      const auto W = weights(theta, l);
      const auto b = bias(theta, l);
      L.a = std::move(a);
      L.a_t = std::move(a_t);
      L.a_s = std::move(a_s);
      L.a_ss = std::move(a_ss);
      Eigen::MatrixXd z = W * L.a;
      z.colwise() += b;
      L.z_t = W * L.a_t;
      L.z_s = W * L.a_s;
      L.z_ss = W * L.a_ss;
      if (l + 1 < spec_.n_layers()) {
        L.h = z.array().tanh().matrix();
        L.g1 = (1.0 - L.h.array().square()).matrix();
        L.g2 = (-2.0 * L.h.array() * L.g1.array()).matrix();
        a = L.h;
        a_t = (L.g1.array() * L.z_t.array()).matrix();
        a_s = (L.g1.array() * L.z_s.array()).matrix();
        a_ss = (L.g2.array() * L.z_s.array().square() + L.g1.array() * L.z_ss.array()).matrix();
      } else {
        ws.out.u = z.row(0);
        ws.out.u_t = L.z_t.row(0);
        ws.out.u_s = L.z_s.row(0);
        ws.out.u_ss = L.z_ss.row(0);
      }
    }
    return ws.out;
  }

  /// Accumulates d(objective)/d(theta) into `grad` given the adjoints of
  /// the four output channels from the forward() call that filled `ws`.
  void backward(std::span<const double> theta, const Workspace& ws, const Channels& adj,
                std::span<double> grad) const {
    if (grad.size() != spec_.n_params()) throw std::invalid_argument("NetworkBatch: gradient length mismatch");
    Eigen::MatrixXd y = adj.u, y_t = adj.u_t, y_s = adj.u_s, y_ss = adj.u_ss;
    for (std::size_t l = spec_.n_layers(); l-- > 0;) {
      const Layer& L = ws.layers[l];
      Eigen::MatrixXd z_bar, zt_bar, zs_bar, zss_bar;
      if (l + 1 < spec_.n_layers()) {
        const auto g1 = L.g1.array(), g2 = L.g2.array(), h = L.h.array();
        const Eigen::ArrayXXd g3 = -2.0 * g1.square() - 2.0 * h * g2;
        const Eigen::ArrayXXd g1_bar =
            y_t.array() * L.z_t.array() + y_s.array() * L.z_s.array() + y_ss.array() * L.z_ss.array();
        const Eigen::ArrayXXd g2_bar = y_ss.array() * L.z_s.array().square();
        z_bar = (y.array() * g1 + g1_bar * g2 + g2_bar * g3).matrix();
        zt_bar = (y_t.array() * g1).matrix();
        zs_bar = (y_s.array() * g1 + 2.0 * y_ss.array() * g2 * L.z_s.array()).matrix();
        zss_bar = (y_ss.array() * g1).matrix();
      } else {
        z_bar = std::move(y);
        zt_bar = std::move(y_t);
        zs_bar = std::move(y_s);
        zss_bar = std::move(y_ss);
      }
      const std::size_t in = spec_.fan_in(l), out = spec_.fan_out(l);
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W_bar(
          grad.data() + spec_.weight_offset(l), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
      Eigen::Map<Eigen::VectorXd> b_bar(grad.data() + spec_.bias_offset(l), static_cast<Eigen::Index>(out));
      W_bar.noalias() += z_bar * L.a.transpose();
      W_bar.noalias() += zt_bar * L.a_t.transpose();
      W_bar.noalias() += zs_bar * L.a_s.transpose();
      W_bar.noalias() += zss_bar * L.a_ss.transpose();
      b_bar += z_bar.rowwise().sum();
      if (l > 0) {
        const auto W = weights(theta, l);
        y = W.transpose() * z_bar;
        y_t = W.transpose() * zt_bar;
        y_s = W.transpose() * zs_bar;
        y_ss = W.transpose() * zss_bar;
      }
    }
  }

 private:
  using ConstRowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  ConstRowMap weights(std::span<const double> theta, std::size_t l) const {
    return ConstRowMap(theta.data() + spec_.weight_offset(l), static_cast<Eigen::Index>(spec_.fan_out(l)),
                       static_cast<Eigen::Index>(spec_.fan_in(l)));
  }
  Eigen::Map<const Eigen::VectorXd> bias(std::span<const double> theta, std::size_t l) const {
    return Eigen::Map<const Eigen::VectorXd>(theta.data() + spec_.bias_offset(l),
                                             static_cast<Eigen::Index>(spec_.fan_out(l)));
  }

  NeuralNetSpec spec_;
  Eigen::MatrixXd input_;
};

}  // namespace gmid
