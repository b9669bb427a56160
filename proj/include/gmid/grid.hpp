#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmid/rng.hpp"

namespace gmid {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kPi = 3.14159265358979323846;

/// Equally spaced 1-D space by time grid. Rows of every field are time
/// points, columns are spatial nodes.
class SpaceTimeGrid {
 public:
  SpaceTimeGrid(std::vector<double> s_nodes, std::vector<double> t_nodes)
      : s_(std::move(s_nodes)), t_(std::move(t_nodes)) {
    if (s_.size() < 3 || t_.size() < 2) {
      throw std::invalid_argument("SpaceTimeGrid: need n >= 3 and T >= 2");
    }
    if (std::adjacent_find(s_.begin(), s_.end(), std::greater_equal<>{}) != s_.end()) {
      throw std::invalid_argument("SpaceTimeGrid: s nodes must be strictly increasing");
    }
    if (std::adjacent_find(t_.begin(), t_.end(), std::greater_equal<>{}) != t_.end()) {
      throw std::invalid_argument("SpaceTimeGrid: t nodes must be strictly increasing");
    }
  }

  std::size_t n() const { return s_.size(); }
  std::size_t T() const { return t_.size(); }
  std::size_t size() const { return n() * T(); }

  const std::vector<double>& s_nodes() const { return s_; }
  const std::vector<double>& t_nodes() const { return t_; }
  double s(std::size_t i) const { return s_[i]; }
  double t(std::size_t k) const { return t_[k]; }
  double s_min() const { return s_.front(); }
  double s_max() const { return s_.back(); }
  double t_max() const { return t_.back(); }

  std::vector<std::size_t> boundary_idx() const { return {0, n() - 1}; }
  std::size_t ic_time_idx() const { return 0; }

  bool operator==(const SpaceTimeGrid& o) const { return s_ == o.s_ && t_ == o.t_; }

 private:
  std::vector<double> s_;
  std::vector<double> t_;
};

inline SpaceTimeGrid build_grid(std::size_t n, std::size_t T, double s_min, double s_max,
                                double t_max) {
  if (n < 3) throw std::invalid_argument("build_grid: n must be >= 3");
  if (T < 2) throw std::invalid_argument("build_grid: T must be >= 2");
  if (!(s_min < s_max)) throw std::invalid_argument("build_grid: s_min must be < s_max");
  if (!(t_max > 0.0)) throw std::invalid_argument("build_grid: t_max must be > 0");
  std::vector<double> s(n), t(T);
  const double ds = (s_max - s_min) / static_cast<double>(n - 1);
  const double dt = t_max / static_cast<double>(T - 1);
  for (std::size_t i = 0; i < n; ++i) s[i] = s_min + ds * static_cast<double>(i);
  for (std::size_t k = 0; k < T; ++k) t[k] = dt * static_cast<double>(k);
  s.back() = s_max;
  t.back() = t_max;
  return SpaceTimeGrid(std::move(s), std::move(t));
}

/// Real values on a grid with an observation mask (true = observed).
struct Field {
  std::shared_ptr<const SpaceTimeGrid> grid;
  RowMatrix values;
  Mask mask;

  Field() = default;

  explicit Field(std::shared_ptr<const SpaceTimeGrid> g)
      : grid(std::move(g)),
        values(RowMatrix::Zero(grid->T(), grid->n())),
        mask(Mask::Constant(grid->T(), grid->n(), true)) {}

  Field(std::shared_ptr<const SpaceTimeGrid> g, RowMatrix v)
      : grid(std::move(g)), values(std::move(v)), mask(Mask::Constant(grid->T(), grid->n(), true)) {
    if (values.rows() != static_cast<Eigen::Index>(grid->T()) ||
        values.cols() != static_cast<Eigen::Index>(grid->n())) {
      throw std::invalid_argument("Field: values shape does not match grid");
    }
  }

  std::size_t T() const { return grid->T(); }
  std::size_t n() const { return grid->n(); }

  bool fully_observed() const { return mask.all(); }

  // Finite values are required wherever the mask is set.
  void check_finite() const {
    for (Eigen::Index k = 0; k < values.rows(); ++k) {
      for (Eigen::Index i = 0; i < values.cols(); ++i) {
        if (mask(k, i) && !std::isfinite(values(k, i))) {
          std::ostringstream msg;
          msg << "Field: non-finite observed value at (t=" << k << ", s=" << i << ")";
          throw std::domain_error(msg.str());
        }
      }
    }
  }
};

/// Column-constant missingness: floor(missing_fraction * n) spatial columns,
/// chosen by a seeded Fisher-Yates shuffle, are missing at every time.
inline Mask make_mask(const SpaceTimeGrid& grid, double missing_fraction, std::uint64_t seed) {
  if (!(missing_fraction >= 0.0 && missing_fraction <= 1.0)) {
    throw std::invalid_argument("make_mask: missing_fraction must lie in [0, 1]");
  }
  const std::size_t n = grid.n();
  const auto n_missing =
      static_cast<std::size_t>(std::floor(missing_fraction * static_cast<double>(n) + 1e-12));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, stream::missing_mask);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(idx[i], idx[uniform_index(rng, i + 1)]);
  }
  Mask mask = Mask::Constant(grid.T(), n, true);
  for (std::size_t j = 0; j < std::min(n_missing, n); ++j) {
    mask.col(static_cast<Eigen::Index>(idx[j])).setConstant(false);
  }
  return mask;
}

/// Per-time incidence structure H_t stored as sorted index lists.
class ObservationOperator {
 public:
  ObservationOperator(std::size_t n, std::vector<std::vector<std::size_t>> per_time)
      : n_(n), idx_(std::move(per_time)) {
    for (const auto& row : idx_) {
      std::vector<std::size_t> sorted = row;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw std::invalid_argument("ObservationOperator: duplicate index");
      }
      if (!sorted.empty() && sorted.back() >= n_) {
        throw std::invalid_argument("ObservationOperator: index >= n");
      }
    }
  }

  static ObservationOperator identity(std::size_t n, std::size_t T) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return ObservationOperator(n, std::vector<std::vector<std::size_t>>(T, all));
  }

  static ObservationOperator from_mask(const Mask& mask) {
    std::vector<std::vector<std::size_t>> per_time(static_cast<std::size_t>(mask.rows()));
    for (Eigen::Index k = 0; k < mask.rows(); ++k) {
      for (Eigen::Index i = 0; i < mask.cols(); ++i) {
        if (mask(k, i)) per_time[static_cast<std::size_t>(k)].push_back(static_cast<std::size_t>(i));
      }
    }
    return ObservationOperator(static_cast<std::size_t>(mask.cols()), std::move(per_time));
  }

  std::size_t n() const { return n_; }
  std::size_t T() const { return idx_.size(); }
  const std::vector<std::size_t>& indices(std::size_t t_index) const {
    if (t_index >= idx_.size()) throw std::out_of_range("ObservationOperator: t_index out of range");
    return idx_[t_index];
  }

  /// Dense m_t x n incidence matrix.
  Matrix matrix(std::size_t t_index) const {
    const auto& ix = indices(t_index);
    Matrix H = Matrix::Zero(static_cast<Eigen::Index>(ix.size()), static_cast<Eigen::Index>(n_));
    for (std::size_t j = 0; j < ix.size(); ++j) H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(ix[j])) = 1.0;
    return H;
  }

  Vector apply(const Eigen::Ref<const Vector>& state_row, std::size_t t_index) const {
    const auto& ix = indices(t_index);
    if (static_cast<std::size_t>(state_row.size()) != n_) {
      throw std::invalid_argument("ObservationOperator: state length mismatch");
    }
    Vector out(static_cast<Eigen::Index>(ix.size()));
    for (std::size_t j = 0; j < ix.size(); ++j) out(static_cast<Eigen::Index>(j)) = state_row(static_cast<Eigen::Index>(ix[j]));
    return out;
  }

  /// Transpose: scatter an observation vector into a zero state row.
  Vector scatter(const Eigen::Ref<const Vector>& obs, std::size_t t_index) const {
    const auto& ix = indices(t_index);
    if (static_cast<std::size_t>(obs.size()) != ix.size()) {
      throw std::invalid_argument("ObservationOperator: observation length mismatch");
    }
    Vector out = Vector::Zero(static_cast<Eigen::Index>(n_));
    for (std::size_t j = 0; j < ix.size(); ++j) out(static_cast<Eigen::Index>(ix[j])) = obs(static_cast<Eigen::Index>(j));
    return out;
  }

 private:
  std::size_t n_;
  std::vector<std::vector<std::size_t>> idx_;
};

inline Vector apply_observation(const ObservationOperator& op, const Field& state, std::size_t t_index) {
  if (t_index >= state.T()) throw std::out_of_range("apply_observation: t_index out of range");
  return op.apply(state.values.row(static_cast<Eigen::Index>(t_index)).transpose(), t_index);
}

}  // namespace gmid
