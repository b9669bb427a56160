#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "gmid/grid.hpp"
#include "gmid/nuts.hpp"

namespace gmid {

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q500 = 0.0;
  double q975 = 0.0;
  /// NaN for a constant column.
  double ess = 0.0;
  std::optional<double> split_rhat;
  /// Set when ESS could not be estimated (zero variance).
  bool ess_flagged = false;
};

/// Sample quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> x, double p) {
  if (x.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(x.begin(), x.end());
  const double h = p * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

/// Biased autocovariance (divided by n) at every lag, via zero-padded FFT.
inline std::vector<double> autocovariance(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  std::size_t m = 1;
  while (m < 2 * n) m <<= 1;
  std::vector<double> padded(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& c : freq) c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> back;
  fft.inv(back, freq);
  std::vector<double> acov(n);
  for (std::size_t k = 0; k < n; ++k) acov[k] = back[k] / static_cast<double>(n);
  return acov;
}

/// Effective sample size over chains of equal length, with Geyer's initial
/// monotone sequence truncation of the combined autocorrelation.
inline double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  if (m == 0 || chains[0].size() < 4) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = chains[0].size();
  std::vector<std::vector<double>> acov(m);
  std::vector<double> means(m);
  double mean_var = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    if (chains[c].size() != n) throw std::invalid_argument("effective_sample_size: chains differ in length");
    acov[c] = autocovariance(chains[c]);
    double s = 0.0;
    for (double v : chains[c]) s += v;
    means[c] = s / static_cast<double>(n);
    mean_var += acov[c][0] * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  mean_var /= static_cast<double>(m);
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) {
    double mm = 0.0;
    for (double v : means) mm += v;
    mm /= static_cast<double>(m);
    double b = 0.0;
    for (double v : means) b += (v - mm) * (v - mm);
    var_plus += b / static_cast<double>(m - 1);
  }
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  auto rho_at = [&](std::size_t t) {
    double a = 0.0;
    for (std::size_t c = 0; c < m; ++c) a += acov[c][t];
    a /= static_cast<double>(m);
    return 1.0 - (mean_var - a) / var_plus;
  };
  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double even = 1.0, odd = rho_at(1);
  rho[1] = odd;
  std::size_t s = 1;
  while (s + 4 < n && even + odd > 0.0) {
    even = rho_at(s + 1);
    odd = rho_at(s + 2);
    if (even + odd >= 0.0) {
      rho[s + 1] = even;
      rho[s + 2] = odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  for (std::size_t k = 1; k + 3 <= max_s; k += 2) {
    if (rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k]) {
      rho[k + 1] = 0.5 * (rho[k - 1] + rho[k]);
      rho[k + 2] = rho[k + 1];
    }
  }
  double tau = -1.0;
  for (std::size_t k = 0; k <= max_s && k < n; ++k) tau += 2.0 * rho[k];
  const double total = static_cast<double>(m * n);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

/// Split-R-hat: each chain is halved and the Gelman-Rubin ratio computed
/// over the 2m half-chains.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) return std::numeric_limits<double>::quiet_NaN();
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(h));
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(h), c.end());
  }
  const std::size_t m = halves.size(), n = halves[0].size();
  std::vector<double> means(m), vars(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (double v : halves[j]) s += v;
    means[j] = s / static_cast<double>(n);
    double ss = 0.0;
    for (double v : halves[j]) ss += (v - means[j]) * (v - means[j]);
    vars[j] = ss / static_cast<double>(n - 1);
  }
  double mm = 0.0, W = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    mm += means[j];
    W += vars[j];
  }
  mm /= static_cast<double>(m);
  W /= static_cast<double>(m);
  double B = 0.0;
  for (double v : means) B += (v - mm) * (v - mm);
  B *= static_cast<double>(n) / static_cast<double>(m - 1);
  if (!(W > 0.0)) return B > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_hat = (static_cast<double>(n - 1) / static_cast<double>(n)) * W + B / static_cast<double>(n);
  return std::sqrt(var_hat / W);
}

/// Summary of one column from `n_chains` equal-length chain blocks.
inline ParameterSummary summarize_column(const std::string& name, const std::vector<double>& column,
                                         std::size_t n_chains = 1) {
  if (column.empty()) throw std::invalid_argument("summarize: no draws for " + name);
  if (n_chains == 0 || column.size() % n_chains != 0) throw std::invalid_argument("summarize: bad chain count");
  ParameterSummary s;
  s.name = name;
  const double n = static_cast<double>(column.size());
  for (double v : column) s.mean += v;
  s.mean /= n;
  double ss = 0.0;
  for (double v : column) ss += (v - s.mean) * (v - s.mean);
  s.sd = column.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.q025 = quantile(column, 0.025);
  s.q500 = quantile(column, 0.5);
  s.q975 = quantile(column, 0.975);
  const std::size_t per = column.size() / n_chains;
  std::vector<std::vector<double>> chains;
  for (std::size_t c = 0; c < n_chains; ++c) {
    chains.emplace_back(column.begin() + static_cast<std::ptrdiff_t>(c * per),
                        column.begin() + static_cast<std::ptrdiff_t>((c + 1) * per));
  }
  s.ess = effective_sample_size(chains);
  s.ess_flagged = !std::isfinite(s.ess);
  if (n_chains >= 2) s.split_rhat = split_rhat(chains);
  return s;
}

struct DiagnosticsReport {
  std::vector<ParameterSummary> parameters;
  std::size_t divergences = 0;
  double accept_rate = 0.0;
  std::size_t n_draws = 0;
  std::size_t n_chains = 0;
};

/// Summaries of arbitrary per-draw quantities (`columns[j][i]` is quantity j
/// at draw i) laid out chain-major as in `samples`.
inline DiagnosticsReport diagnostics(const PosteriorSamples& samples, const std::vector<std::string>& names,
                                     const std::vector<std::vector<double>>& columns) {
  if (samples.size() == 0) throw std::invalid_argument("diagnostics: no draws");
  if (names.size() != columns.size()) throw std::invalid_argument("diagnostics: names/columns mismatch");
  DiagnosticsReport r;
  r.divergences = samples.divergences();
  r.accept_rate = samples.accept_rate();
  r.n_draws = samples.size();
  r.n_chains = samples.n_chains;
  for (std::size_t j = 0; j < names.size(); ++j) {
    r.parameters.push_back(summarize_column(names[j], columns[j], samples.n_chains));
  }
  return r;
}

/// Summaries of the raw unconstrained coordinates.
inline DiagnosticsReport diagnostics(const PosteriorSamples& samples) {
  std::vector<std::string> names;
  std::vector<std::vector<double>> cols;
  for (std::size_t j = 0; j < samples.dim(); ++j) {
    names.push_back("q" + std::to_string(j));
    const auto c = samples.draws.col(static_cast<Eigen::Index>(j));
    cols.emplace_back(c.data(), c.data() + c.size());
  }
  return diagnostics(samples, names, cols);
}

}  // namespace gmid
