#pragma once

// Time integrators: explicit Euler for the linear lattice equations and
// exponential time differencing (ETDRK2 / ETDRK4) for the Kuramoto-Sivashinsky
// equation in one and two dimensions.

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tokdyn/fft.hpp"
#include "tokdyn/lattice_ops.hpp"
#include "tokdyn/log.hpp"
#include "tokdyn/types.hpp"

namespace tokdyn {

// ---------------------------------------------------------------------------
// Linear equations

inline Vector step_forward_euler(const SparseOperator& op, const Vector& state, double dt) {
  require(op.rows() == op.cols(), "operator must be square");
  require(op.cols() == state.size(), "operator/state dimension mismatch: " + std::to_string(op.cols()) +
                                         " vs " + std::to_string(state.size()));
  return state + dt * (op * state);
}

/// Gershgorin bound on the spectral radius, max_r sum_c |A_rc|.
inline double gershgorin_radius(const SparseOperator& op) {
  double best = 0.0;
  for (std::int64_t r = 0; r < op.outerSize(); ++r) {
    double s = 0.0;
    for (SparseOperator::InnerIterator it(op, r); it; ++it) s += std::abs(it.value());
    best = std::max(best, s);
  }
  return best;
}

/// Forward-Euler run storing every `skip`-th state. Stored frames are the
/// states at steps 0, skip, 2 skip, ... below `steps`, so there are
/// ceil(steps / skip) of them and the first is x0.
inline Trajectory simulate_linear(const SparseOperator& op, const Vector& x0, double dt, int steps, int skip = 1) {
  require(op.rows() == op.cols() && op.cols() == x0.size(), "operator/state dimension mismatch");
  require(steps >= 1, "steps must be >= 1");
  require(skip >= 1, "skip must be >= 1");
  require(dt > 0.0, "dt must be positive");

  Trajectory traj;
  traj.dt = dt * skip;
  traj.skip = skip;
  const double bound = dt * gershgorin_radius(op);
  if (bound >= 2.0) {
    traj.stability_warning = true;
    log_warning("explicit Euler step bound exceeded: dt * |lambda|_max estimate = " + std::to_string(bound));
  }

  const int stored = (steps + skip - 1) / skip;
  traj.frames.resize(x0.size(), stored);
  Vector x = x0;
  Vector ax(x0.size());
  traj.frames.col(0) = x;
  const int last = (stored - 1) * skip;
  for (int s = 1; s <= last; ++s) {
    ax.noalias() = op * x;
    x += dt * ax;
    if (!x.allFinite()) throw DivergenceError(static_cast<std::size_t>(s), "non-finite state in linear simulation");
    if (s % skip == 0) traj.frames.col(s / skip) = x;
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Exponential time differencing coefficients

/// Per-mode stage coefficients for ETDRK2 (Cox-Matthews) and ETDRK4
/// (Kassam-Trefethen). The phi-functions are evaluated as means over
/// `contour_points` points on the upper unit semicircle centred at each
/// z = dt * L, which avoids the cancellation of the direct formulas near 0.
struct EtdrkCoefficients {
  double dt = 0.0;
  int contour_points = 0;
  std::vector<double> e;     ///< exp(z)
  std::vector<double> e2;    ///< exp(z / 2)
  std::vector<double> q;     ///< ETDRK4 half-step weight, dt * (exp(z/2) - 1) / z
  std::vector<double> f1;    ///< ETDRK4 final weights
  std::vector<double> f2;
  std::vector<double> f3;
  std::vector<double> phi1;  ///< ETDRK2: dt * (exp(z) - 1) / z
  std::vector<double> phi2;  ///< ETDRK2: dt * (exp(z) - 1 - z) / z^2
};

inline EtdrkCoefficients etdrk_coefficients(std::span<const double> linear_symbol, double dt,
                                            int contour_points = 32) {
  require(contour_points >= 16, "contour_points must be >= 16");
  require(dt > 0.0, "dt must be positive");
  EtdrkCoefficients c;
  c.dt = dt;
  c.contour_points = contour_points;
  const std::size_t n = linear_symbol.size();
  for (auto* v : {&c.e, &c.e2, &c.q, &c.f1, &c.f2, &c.f3, &c.phi1, &c.phi2}) v->assign(n, 0.0);

  std::vector<std::complex<double>> roots(static_cast<std::size_t>(contour_points));
  for (int j = 0; j < contour_points; ++j)
    roots[static_cast<std::size_t>(j)] =
        std::exp(std::complex<double>(0.0, std::numbers::pi * (j + 0.5) / contour_points));

  for (std::size_t k = 0; k < n; ++k) {
    const double z = dt * linear_symbol[k];
    c.e[k] = std::exp(z);
    c.e2[k] = std::exp(z / 2.0);
    double q = 0.0, f1 = 0.0, f2 = 0.0, f3 = 0.0, p1 = 0.0, p2 = 0.0;
    for (const auto& r : roots) {
      const std::complex<double> lr = z + r;
      const std::complex<double> ez = std::exp(lr);
      const std::complex<double> lr2 = lr * lr;
      const std::complex<double> lr3 = lr2 * lr;
      q += ((std::exp(lr / 2.0) - 1.0) / lr).real();
      f1 += ((-4.0 - lr + ez * (4.0 - 3.0 * lr + lr2)) / lr3).real();
      f2 += ((2.0 + lr + ez * (-2.0 + lr)) / lr3).real();
      f3 += ((-4.0 - 3.0 * lr - lr2 + ez * (4.0 - lr)) / lr3).real();
      p1 += ((ez - 1.0) / lr).real();
      p2 += ((ez - 1.0 - lr) / lr2).real();
    }
    const double inv = dt / contour_points;
    c.q[k] = q * inv;
    c.f1[k] = f1 * inv;
    c.f2[k] = f2 * inv;
    c.f3[k] = f3 * inv;
    c.phi1[k] = p1 * inv;
    c.phi2[k] = p2 * inv;
    for (double v : {c.q[k], c.f1[k], c.f2[k], c.f3[k], c.phi1[k], c.phi2[k]})
      if (!std::isfinite(v)) throw SolverError("non-finite ETDRK coefficient");
  }
  return c;
}

// ---------------------------------------------------------------------------
// 2D Kuramoto-Sivashinsky

/// Scalar reading of the quadratic term in u_t + N(u) + lap u + lap^2 u = 0.
/// `half_gradient_squared` is N = |grad u|^2 / 2, whose mean drifts and is
/// removed after every step; `convective` is N = u (u_x + u_y).
enum class KseNonlinearity { half_gradient_squared, convective };

/// Pseudo-spectral ETDRK4 integrator for the 2D KSE on [0, L)^2 with n^2
/// collocation points, 2/3-rule dealiasing, and the mean mode held at zero.
class Kse2dSolver {
 public:
  Kse2dSolver(int n, double domain_length, double dt, int contour_points = 32,
              KseNonlinearity form = KseNonlinearity::half_gradient_squared)
      : n_(n), nc_(n / 2 + 1), length_(domain_length), dt_(dt), form_(form), fft_(n, n) {
    require(n >= 4 && n % 2 == 0, "2D KSE grid must be even and >= 4");
    require(domain_length > 0.0, "domain length must be positive");
    require(dt > 0.0, "dt must be positive");
    const std::size_t ns = spectrum_size();
    kx_.resize(ns);
    ky_.resize(ns);
    mask_.resize(ns);
    std::vector<double> symbol(ns);
    const double base = 2.0 * std::numbers::pi / length_;
    for (int r = 0; r < n_; ++r) {
      const int kr = signed_frequency(r, n_);
      for (int c = 0; c < nc_; ++c) {
        const std::size_t idx = static_cast<std::size_t>(r) * nc_ + c;
        const double wx = base * kr;
        const double wy = base * c;
        const double k2 = wx * wx + wy * wy;
        symbol[idx] = k2 - k2 * k2;
        // First derivatives drop the unpaired Nyquist mode.
        kx_[idx] = (2 * r == n_) ? 0.0 : wx;
        ky_[idx] = (2 * c == n_) ? 0.0 : wy;
        mask_[idx] = (3 * std::abs(kr) < n_ && 3 * c < n_) ? 1.0 : 0.0;
      }
    }
    coeffs_ = etdrk_coefficients(symbol, dt_, contour_points);
    ux_.resize(real_size());
    uy_.resize(real_size());
    work_.resize(ns);
  }

  int n() const { return n_; }
  double dt() const { return dt_; }
  std::size_t real_size() const { return static_cast<std::size_t>(n_) * n_; }
  std::size_t spectrum_size() const { return static_cast<std::size_t>(n_) * nc_; }
  const EtdrkCoefficients& coefficients() const { return coeffs_; }

  std::vector<Complex> to_spectral(const Field& u) {
    require(u.size() == static_cast<Eigen::Index>(real_size()), "field size does not match KSE grid");
    std::vector<Complex> v(spectrum_size());
    fft_.forward(std::span<const double>(u.data(), real_size()), v);
    return v;
  }

  Field to_physical(const std::vector<Complex>& v) {
    Field u(static_cast<Eigen::Index>(real_size()));
    fft_.inverse(v, std::span<double>(u.data(), real_size()));
    return u;
  }

  /// Dealiased -N(u) in spectral space.
  void nonlinear(const std::vector<Complex>& v, std::vector<Complex>& out) {
    const std::size_t ns = spectrum_size();
    const Complex i(0.0, 1.0);
    for (std::size_t k = 0; k < ns; ++k) work_[k] = i * kx_[k] * v[k];
    fft_.inverse(work_, ux_);
    for (std::size_t k = 0; k < ns; ++k) work_[k] = i * ky_[k] * v[k];
    fft_.inverse(work_, uy_);
    if (form_ == KseNonlinearity::half_gradient_squared) {
      for (std::size_t p = 0; p < ux_.size(); ++p) ux_[p] = 0.5 * (ux_[p] * ux_[p] + uy_[p] * uy_[p]);
    } else {
      std::vector<double> u(real_size());
      fft_.inverse(v, u);
      for (std::size_t p = 0; p < ux_.size(); ++p) ux_[p] = u[p] * (ux_[p] + uy_[p]);
    }
    out.resize(ns);
    fft_.forward(ux_, out);
    for (std::size_t k = 0; k < ns; ++k) out[k] *= -mask_[k];
  }

  /// One ETDRK4 step; the mean mode is zeroed afterwards.
  void step(std::vector<Complex>& v) {
    const auto& c = coeffs_;
    const std::size_t ns = spectrum_size();
    nonlinear(v, nv_);
    a_.resize(ns);
    for (std::size_t k = 0; k < ns; ++k) a_[k] = c.e2[k] * v[k] + c.q[k] * nv_[k];
    nonlinear(a_, na_);
    b_.resize(ns);
    for (std::size_t k = 0; k < ns; ++k) b_[k] = c.e2[k] * v[k] + c.q[k] * na_[k];
    nonlinear(b_, nb_);
    c_.resize(ns);
    for (std::size_t k = 0; k < ns; ++k) c_[k] = c.e2[k] * a_[k] + c.q[k] * (2.0 * nb_[k] - nv_[k]);
    nonlinear(c_, nc_buf_);
    for (std::size_t k = 0; k < ns; ++k)
      v[k] = c.e[k] * v[k] + nv_[k] * c.f1[k] + 2.0 * (na_[k] + nb_[k]) * c.f2[k] + nc_buf_[k] * c.f3[k];
    v[0] = 0.0;
  }

 private:
  int n_, nc_;
  double length_, dt_;
  KseNonlinearity form_;
  RealFft2d fft_;
  std::vector<double> kx_, ky_, mask_;
  EtdrkCoefficients coeffs_;
  std::vector<double> ux_, uy_;
  std::vector<Complex> work_, nv_, a_, na_, b_, nb_, c_, nc_buf_;
};

/// Integrates the 2D KSE from u0 (mean removed) and stores every `skip`-th
/// state among steps 0 .. steps-1; the first `burn_in` stored frames are
/// dropped. The stored count is ceil(steps / skip) - burn_in.
inline Trajectory simulate_kse2d(const Field& u0, int n, double domain_length, double dt, int steps, int skip = 1,
                                 int burn_in = 0, int contour_points = 32,
                                 KseNonlinearity form = KseNonlinearity::half_gradient_squared) {
  require(u0.size() == static_cast<Eigen::Index>(n) * n, "u0 must be an n x n field");
  require(steps >= 1 && skip >= 1 && burn_in >= 0, "invalid step counts");
  const int stored_all = (steps + skip - 1) / skip;
  require(burn_in < stored_all, "burn_in discards every stored frame");

  Kse2dSolver solver(n, domain_length, dt, contour_points, form);
  Trajectory traj;
  traj.dt = dt * skip;
  traj.skip = skip;
  traj.burn_in = burn_in;
  traj.equation = Equation::kse2d;
  traj.grid = GridSpec{n, domain_length / n};
  traj.domain_length = domain_length;
  traj.frames.resize(u0.size(), stored_all - burn_in);

  auto v = solver.to_spectral(u0);
  v[0] = 0.0;
  auto store = [&](int s, const std::vector<Complex>& spec) {
    const int idx = s / skip - burn_in;
    if (idx >= 0) traj.frames.col(idx) = solver.to_physical(spec);
  };
  store(0, v);
  const int last = (stored_all - 1) * skip;
  for (int s = 1; s <= last; ++s) {
    solver.step(v);
    if (s % skip == 0) {
      store(s, v);
      const int idx = s / skip - burn_in;
      if (idx >= 0 && !traj.frames.col(idx).allFinite())
        throw DivergenceError(static_cast<std::size_t>(s), "non-finite KSE state");
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// 1D Kuramoto-Sivashinsky: u_t + u u_x + u_xx + u_xxxx = 0 on [0, L)

enum class EtdScheme { etdrk2, etdrk4 };

class Kse1dSolver {
 public:
  Kse1dSolver(int n, double domain_length, double dt, int contour_points = 32)
      : n_(n), nc_(n / 2 + 1), length_(domain_length), dt_(dt), fft_(n) {
    require(n >= 8 && n % 2 == 0, "1D KSE grid must be even and >= 8");
    require(domain_length > 0.0 && dt > 0.0, "domain length and dt must be positive");
    k_.resize(static_cast<std::size_t>(nc_));
    std::vector<double> symbol(static_cast<std::size_t>(nc_));
    for (int j = 0; j < nc_; ++j) {
      const double k = 2.0 * std::numbers::pi * j / length_;
      symbol[static_cast<std::size_t>(j)] = k * k - k * k * k * k;
      k_[static_cast<std::size_t>(j)] = (2 * j == n_) ? 0.0 : k;
    }
    coeffs_ = etdrk_coefficients(symbol, dt_, contour_points);
    u_.resize(static_cast<std::size_t>(n_));
    w_.resize(static_cast<std::size_t>(n_));
  }

  int n() const { return n_; }
  double dt() const { return dt_; }
  double domain_length() const { return length_; }
  std::size_t spectrum_size() const { return static_cast<std::size_t>(nc_); }

  std::vector<Complex> to_spectral(std::span<const double> u) {
    std::vector<Complex> v(spectrum_size());
    fft_.forward(u, v);
    return v;
  }
  Vector to_physical(const std::vector<Complex>& v) {
    Vector u(n_);
    fft_.inverse(v, std::span<double>(u.data(), static_cast<std::size_t>(n_)));
    return u;
  }

  /// -(1/2) d/dx (u^2) in spectral space.
  void nonlinear(const std::vector<Complex>& v, std::vector<Complex>& out) {
    fft_.inverse(v, u_);
    for (auto& x : u_) x = x * x;
    out.resize(spectrum_size());
    fft_.forward(u_, out);
    const Complex i(0.0, 1.0);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] *= -0.5 * i * k_[j];
  }

  /// Directional derivative of `nonlinear` at v along w: -d/dx (u du).
  void nonlinear_tangent(const std::vector<Complex>& v, const std::vector<Complex>& w, std::vector<Complex>& out) {
    fft_.inverse(v, u_);
    fft_.inverse(w, w_);
    for (std::size_t p = 0; p < u_.size(); ++p) u_[p] *= w_[p];
    out.resize(spectrum_size());
    fft_.forward(u_, out);
    const Complex i(0.0, 1.0);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] *= -i * k_[j];
  }

  void step_etdrk2(std::vector<Complex>& v) {
    const auto& c = coeffs_;
    nonlinear(v, nv_);
    a_.resize(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) a_[k] = c.e[k] * v[k] + c.phi1[k] * nv_[k];
    nonlinear(a_, na_);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = a_[k] + c.phi2[k] * (na_[k] - nv_[k]);
  }

  void step_etdrk4(std::vector<Complex>& v) {
    const auto& c = coeffs_;
    const std::size_t ns = v.size();
    nonlinear(v, nv_);
    a_.resize(ns);
    for (std::size_t k = 0; k < ns; ++k) a_[k] = c.e2[k] * v[k] + c.q[k] * nv_[k];
    nonlinear(a_, na_);
    b_.resize(ns);
    for (std::size_t k = 0; k < ns; ++k) b_[k] = c.e2[k] * v[k] + c.q[k] * na_[k];
    nonlinear(b_, nb_);
    c_.resize(ns);
    for (std::size_t k = 0; k < ns; ++k) c_[k] = c.e2[k] * a_[k] + c.q[k] * (2.0 * nb_[k] - nv_[k]);
    nonlinear(c_, nc_buf_);
    for (std::size_t k = 0; k < ns; ++k)
      v[k] = c.e[k] * v[k] + nv_[k] * c.f1[k] + 2.0 * (na_[k] + nb_[k]) * c.f2[k] + nc_buf_[k] * c.f3[k];
  }

  void step(std::vector<Complex>& v, EtdScheme scheme) {
    if (scheme == EtdScheme::etdrk2) step_etdrk2(v);
    else step_etdrk4(v);
  }

  /// Jacobian of one ETDRK2 step at physical state u, as a dense n x n
  /// matrix acting on physical-space perturbations.
  Matrix step_jacobian_etdrk2(const Vector& u) {
    const auto& c = coeffs_;
    auto v = to_spectral(std::span<const double>(u.data(), static_cast<std::size_t>(n_)));
    std::vector<Complex> nv, a(v.size()), na;
    nonlinear(v, nv);
    for (std::size_t k = 0; k < v.size(); ++k) a[k] = c.e[k] * v[k] + c.phi1[k] * nv[k];
    nonlinear(a, na);

    Matrix jac(n_, n_);
    std::vector<double> basis(static_cast<std::size_t>(n_), 0.0);
    std::vector<Complex> w, dnv, da(v.size()), dna, out(v.size());
    std::vector<double> col(static_cast<std::size_t>(n_));
    for (int d = 0; d < n_; ++d) {
      basis[static_cast<std::size_t>(d)] = 1.0;
      w = to_spectral(basis);
      basis[static_cast<std::size_t>(d)] = 0.0;
      nonlinear_tangent(v, w, dnv);
      for (std::size_t k = 0; k < v.size(); ++k) da[k] = c.e[k] * w[k] + c.phi1[k] * dnv[k];
      nonlinear_tangent(a, da, dna);
      for (std::size_t k = 0; k < v.size(); ++k) out[k] = da[k] + c.phi2[k] * (dna[k] - dnv[k]);
      fft_.inverse(out, col);
      for (int r = 0; r < n_; ++r) jac(r, d) = col[static_cast<std::size_t>(r)];
    }
    return jac;
  }

 private:
  int n_, nc_;
  double length_, dt_;
  RealFft1d fft_;
  std::vector<double> k_;
  EtdrkCoefficients coeffs_;
  std::vector<double> u_, w_;
  std::vector<Complex> nv_, a_, na_, b_, nb_, c_, nc_buf_;
};

/// Stores `steps` frames: u0 followed by steps-1 integrator steps.
inline Trajectory simulate_kse1d(const Vector& u0, double domain_length, int n, double dt, int steps,
                                 EtdScheme scheme = EtdScheme::etdrk2, int contour_points = 32) {
  require(u0.size() == n, "u0 must have n entries");
  require(steps >= 1, "steps must be >= 1");
  Kse1dSolver solver(n, domain_length, dt, contour_points);
  Trajectory traj;
  traj.dt = dt;
  traj.equation = Equation::kse1d;
  traj.one_dimensional = true;
  traj.grid = GridSpec{n, domain_length / n};
  traj.domain_length = domain_length;
  traj.frames.resize(n, steps);
  traj.frames.col(0) = u0;
  auto v = solver.to_spectral(std::span<const double>(u0.data(), static_cast<std::size_t>(n)));
  for (int s = 1; s < steps; ++s) {
    solver.step(v, scheme);
    traj.frames.col(s) = solver.to_physical(v);
    if (!traj.frames.col(s).allFinite()) throw DivergenceError(static_cast<std::size_t>(s), "non-finite 1D KSE state");
  }
  return traj;
}

}  // namespace tokdyn
