#pragma once

// Mean-zero Gaussian random fields on the periodic square lattice with a
// Matern-type spectral density.
//
// Conventions. Frequencies are measured in radians per lattice step,
// w = 2 pi k / n with k the signed FFT index, so the inverse correlation
// length `m` is in lattice-step units. The spectral density is
//
//     S(k) = (|w_k|^2 + m^2)^(-nu).
//
// A field is synthesized as u = sigma / c * IFFT(sqrt(S) * FFT(white)), where
// `white` is iid standard normal and c^2 = (1/n^2) sum_k S(k) is the lag-0
// variance of the unscaled field. Hence `sigma` is the exact pointwise
// standard deviation, and the covariance between pixels depends only on the
// periodic lag r:
//
//     E[u(x) u(x + r)] = sigma^2 * C(r) / C(0),
//     C(r) = (1/n^2) sum_k S(k) cos(w_k . r).

#include <cmath>
#include <numbers>
#include <vector>

#include "tokdyn/fft.hpp"
#include "tokdyn/rng.hpp"
#include "tokdyn/types.hpp"

namespace tokdyn {

struct GrfParams {
  int grid_size = 64;
  double sigma = 10.0;
  double m = 0.1;
  double nu = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(grid_size >= 2, "GRF grid_size must be >= 2");
    require(sigma >= 0.0 && std::isfinite(sigma), "GRF sigma must be >= 0");
    require(m > 0.0 && std::isfinite(m), "GRF m must be > 0");
    require(nu > 0.0 && std::isfinite(nu), "GRF nu must be > 0");
  }
};

inline double matern_spectral_density(double w2, double m, double nu) {
  return std::pow(w2 + m * m, -nu);
}

namespace detail {

inline double lattice_frequency(int k, int n) { return 2.0 * std::numbers::pi * k / n; }

}  // namespace detail

inline Field sample_matern_field(const GrfParams& params) {
  params.validate();
  const int n = params.grid_size;
  Field out = Field::Zero(static_cast<Eigen::Index>(n) * n);
  if (params.sigma == 0.0) return out;

  Rng rng(params.seed);
  std::vector<double> white(static_cast<std::size_t>(n) * n);
  for (auto& w : white) w = rng.normal();

  RealFft2d fft(n, n);
  const int nc = fft.spectrum_cols();
  std::vector<Complex> spec(fft.spectrum_size());
  fft.forward(white, spec);

  // Lag-0 variance of the unscaled field sums S over the full spectrum.
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    const double wr = detail::lattice_frequency(signed_frequency(r, n), n);
    for (int c = 0; c < n; ++c) {
      const double wc = detail::lattice_frequency(signed_frequency(c, n), n);
      total += matern_spectral_density(wr * wr + wc * wc, params.m, params.nu);
    }
  }
  const double scale = params.sigma / std::sqrt(total / (static_cast<double>(n) * n));

  for (int r = 0; r < n; ++r) {
    const double wr = detail::lattice_frequency(signed_frequency(r, n), n);
    for (int c = 0; c < nc; ++c) {
      const double wc = detail::lattice_frequency(c, n);
      spec[static_cast<std::size_t>(r) * nc + c] *=
          scale * std::sqrt(matern_spectral_density(wr * wr + wc * wc, params.m, params.nu));
    }
  }
  fft.inverse(spec, std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

/// Conductivity a = exp(Z) with Z a Matern field; strictly positive.
inline Field build_conductivity(const GrfParams& params) {
  return sample_matern_field(params).array().exp().matrix();
}

/// Truncated covariance series C(r) for lattice offset (di, dj) on an n-grid:
/// (1/n^2) sum over |k1|, |k2| <= truncation of S(k) cos(w_k . r), with half
/// weight on the boundary shell |k_i| = truncation. At truncation = n/2 this
/// equals the covariance of sample_matern_field with sigma^2 = C(0).
inline double periodic_matern_covariance(int di, int dj, double m, double nu, int grid_size,
                                         int truncation) {
  require(truncation >= 1, "covariance truncation must be >= 1");
  require(grid_size >= 2, "covariance grid_size must be >= 2");
  const int n = grid_size;
  double sum = 0.0;
  for (int k1 = -truncation; k1 <= truncation; ++k1) {
    const double w1 = detail::lattice_frequency(k1, n);
    const double a1 = std::abs(k1) == truncation ? 0.5 : 1.0;
    for (int k2 = -truncation; k2 <= truncation; ++k2) {
      const double w2 = detail::lattice_frequency(k2, n);
      const double a2 = std::abs(k2) == truncation ? 0.5 : 1.0;
      sum += a1 * a2 * matern_spectral_density(w1 * w1 + w2 * w2, m, nu) *
             std::cos(w1 * di + w2 * dj);
    }
  }
  return sum / (static_cast<double>(n) * n);
}

}  // namespace tokdyn
