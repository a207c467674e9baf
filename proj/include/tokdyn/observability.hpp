#pragma once

// Linear observability certificates for lattice dynamics under a linear
// tokenizer, explicit non-observability witnesses for constant-coefficient
// operators, Gramian-based state reconstruction, and a numerical
// Lie-derivative rank diagnostic for nonlinear dynamics.

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <numbers>
#include <vector>

#include "tokdyn/lattice_ops.hpp"
#include "tokdyn/rng.hpp"
#include "tokdyn/solvers.hpp"
#include "tokdyn/types.hpp"

namespace tokdyn {

using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

/// One eigenspace checked by the Hautus test: the eigenvalue, the eigenspace
/// dimension, and min ||h v|| over unit vectors v in it.
struct EigenspaceCheck {
  std::complex<double> eigenvalue;
  int dimension = 1;
  double min_output_norm = 0.0;
};

struct ObservabilityReport {
  int rank = 0;
  int state_dim = 0;
  bool observable = false;
  Vector singular_values;                      ///< nonincreasing
  std::vector<EigenspaceCheck> failing_eigenvectors;
  std::vector<EigenspaceCheck> eigenspaces;    ///< every checked eigenspace
  int eigenpairs_computed = 0;                 ///< Hautus coverage
};

// ---------------------------------------------------------------------------
// Kalman rank condition

/// Stacked blocks h, hA, ..., hA^{b-1} with b = min(n, block_cap) blocks
/// (block_cap <= 0 means n). Shape (b m) x n.
inline Matrix kalman_observability_matrix(const SparseOperator& a, const SparseOperator& h, int block_cap = 0) {
  require(a.rows() == a.cols(), "A must be square");
  require(h.cols() == a.rows(), "h must have as many columns as A has rows");
  const auto n = a.rows();
  const auto m = h.rows();
  const auto blocks = block_cap > 0 ? std::min<std::int64_t>(n, block_cap) : n;
  Matrix o(m * blocks, n);
  Matrix block = Matrix(h);
  for (std::int64_t b = 0; b < blocks; ++b) {
    o.middleRows(b * m, m) = block;
    if (b + 1 < blocks) {
      Matrix next = block * a;
      block.swap(next);
    }
  }
  return o;
}

inline Matrix kalman_observability_matrix(const Matrix& a, const Matrix& h, int block_cap = 0) {
  return kalman_observability_matrix(SparseOperator(a.sparseView()), SparseOperator(h.sparseView()), block_cap);
}

/// Numerical rank of O: the count of singular values above rel_tol * sigma_max,
/// computed after scaling every row to unit norm. Row scaling leaves the rank
/// unchanged and removes the geometric growth of the blocks hA^j. Rows with
/// norm at or below zero_row_tol are rounding residue (an output map that
/// cancels to ~1e-16) and are zeroed instead of being blown up to unit norm.
inline ObservabilityReport rank_test(const Matrix& o, double rel_tol = 1e-10, double zero_row_tol = 1e-12) {
  require(o.rows() > 0 && o.cols() > 0, "rank test on an empty matrix");
  require(rel_tol > 0.0 && rel_tol < 1.0, "rel_tol must lie in (0, 1)");
  require(zero_row_tol >= 0.0, "zero_row_tol must be >= 0");
  Matrix scaled = o;
  for (Eigen::Index r = 0; r < scaled.rows(); ++r) {
    const double nrm = scaled.row(r).norm();
    if (nrm > zero_row_tol) scaled.row(r) /= nrm;
    else scaled.row(r).setZero();
  }
  ObservabilityReport rep;
  rep.state_dim = static_cast<int>(o.cols());
  Eigen::BDCSVD<Matrix> svd(scaled);
  rep.singular_values = svd.singularValues();
  const double smax = rep.singular_values.size() ? rep.singular_values(0) : 0.0;
  rep.rank = 0;
  for (Eigen::Index i = 0; i < rep.singular_values.size(); ++i)
    if (rep.singular_values(i) > rel_tol * smax) ++rep.rank;
  rep.observable = rep.rank == rep.state_dim;
  return rep;
}

// ---------------------------------------------------------------------------
// Hautus eigenvector test

struct HautusOptions {
  double cluster_tol = 1e-8;    ///< relative eigenvalue distance merged into one eigenspace
  int dense_limit = 4096;       ///< largest n handled by a full dense eigensolve
  int max_iterations = 20000;   ///< subspace-iteration cap beyond the dense limit
};

namespace detail {

inline bool is_symmetric(const SparseOperator& a, double tol = 1e-12) {
  const SparseOperator at = SparseOperator(a.transpose());
  const double scale = std::max(1.0, a.norm());
  return (a - at).norm() <= tol * scale;
}

/// Groups eigenvalues (sorted as given) into clusters closer than tol.
template <typename T>
std::vector<std::vector<Eigen::Index>> cluster_eigenvalues(const std::vector<T>& values, double tol) {
  std::vector<Eigen::Index> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) {
    const auto vx = std::complex<double>(values[static_cast<std::size_t>(x)]);
    const auto vy = std::complex<double>(values[static_cast<std::size_t>(y)]);
    return vx.real() != vy.real() ? vx.real() < vy.real() : vx.imag() < vy.imag();
  });
  std::vector<std::vector<Eigen::Index>> clusters;
  std::vector<bool> used(values.size(), false);
  for (std::size_t a = 0; a < order.size(); ++a) {
    const auto ia = order[a];
    if (used[static_cast<std::size_t>(ia)]) continue;
    std::vector<Eigen::Index> c{ia};
    used[static_cast<std::size_t>(ia)] = true;
    const auto va = std::complex<double>(values[static_cast<std::size_t>(ia)]);
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const auto ib = order[b];
      const auto vb = std::complex<double>(values[static_cast<std::size_t>(ib)]);
      if (vb.real() - va.real() > tol) break;
      if (!used[static_cast<std::size_t>(ib)] && std::abs(vb - va) <= tol) {
        c.push_back(ib);
        used[static_cast<std::size_t>(ib)] = true;
      }
    }
    clusters.push_back(std::move(c));
  }
  return clusters;
}

inline double min_output_norm(const ComplexMatrix& h_basis) {
  // h_basis = h V with V an orthonormal eigenspace basis.
  if (h_basis.cols() > h_basis.rows()) return 0.0;
  Eigen::JacobiSVD<ComplexMatrix> svd(h_basis);
  const auto& s = svd.singularValues();
  return s.size() ? s(s.size() - 1) : 0.0;
}

inline void finish_hautus(ObservabilityReport& rep, double tol) {
  for (const auto& e : rep.eigenspaces)
    if (e.min_output_norm < tol) rep.failing_eigenvectors.push_back(e);
  rep.observable = rep.failing_eigenvectors.empty() && rep.eigenpairs_computed == rep.state_dim;
}

/// Eigenpairs of a symmetric A nearest zero (its slowest modes), by subspace
/// iteration on A + rho I with rho a Gershgorin bound.
inline std::pair<Vector, Matrix> slowest_symmetric_eigenpairs(const SparseOperator& a, int count, int max_iterations) {
  const auto n = a.rows();
  const int block = std::min<int>(static_cast<int>(n), count + 16);
  const double rho = gershgorin_radius(a);
  Matrix q(n, block);
  Rng rng(0x5EED);
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    for (Eigen::Index i = 0; i < n; ++i) q(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr0(q);
  q = qr0.householderQ() * Matrix::Identity(n, block);
  for (int it = 1; it <= max_iterations; ++it) {
    Matrix z = a * q + rho * q;
    Eigen::HouseholderQR<Matrix> qr(z);
    q = qr.householderQ() * Matrix::Identity(n, block);
    if (it % 20 == 0 || it == max_iterations) {
      Matrix aq = a * q;
      Eigen::SelfAdjointEigenSolver<Matrix> es(q.transpose() * aq);
      // Largest eigenvalues of A are the ones nearest zero (A is nonpositive for heat).
      Vector vals = es.eigenvalues().reverse();
      Matrix vecs = q * es.eigenvectors().rowwise().reverse();
      double worst = 0.0;
      for (int j = 0; j < count; ++j) {
        const double res = (a * vecs.col(j) - vals(j) * vecs.col(j)).norm();
        worst = std::max(worst, res);
      }
      if (worst <= 1e-9 * std::max(1.0, rho)) return {vals.head(count), vecs.leftCols(count)};
    }
  }
  throw SolverError("subspace iteration did not converge within " + std::to_string(max_iterations) + " iterations");
}

}  // namespace detail

/// Reports, for every computed eigenspace of A, the smallest output norm
/// ||h v|| over unit eigenvectors; eigenspaces below `tol` fail. Dense
/// eigensolves are used up to `options.dense_limit`; beyond it only the
/// `eig_budget` slowest modes of a symmetric A are checked and the report is
/// marked incomplete through `eigenpairs_computed`.
inline ObservabilityReport hautus_test(const SparseOperator& a, const SparseOperator& h, double tol = 1e-8,
                                       int eig_budget = 0, const HautusOptions& options = {}) {
  require(a.rows() == a.cols(), "A must be square");
  require(h.cols() == a.rows(), "h must have as many columns as A has rows");
  require(tol > 0.0, "Hautus tolerance must be positive");
  const auto n = a.rows();
  ObservabilityReport rep;
  rep.state_dim = static_cast<int>(n);
  const bool symmetric = detail::is_symmetric(a);

  if (n > options.dense_limit) {
    require(symmetric, "Hautus test beyond the dense limit requires a symmetric generator");
    require(eig_budget > 0, "Hautus test beyond the dense limit requires eig_budget > 0");
    auto [vals, vecs] = detail::slowest_symmetric_eigenpairs(a, eig_budget, options.max_iterations);
    std::vector<double> v(vals.data(), vals.data() + vals.size());
    const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
    for (const auto& c : detail::cluster_eigenvalues(v, options.cluster_tol * scale)) {
      Matrix basis(n, static_cast<Eigen::Index>(c.size()));
      for (std::size_t j = 0; j < c.size(); ++j) basis.col(static_cast<Eigen::Index>(j)) = vecs.col(c[j]);
      rep.eigenspaces.push_back({vals(c.front()), static_cast<int>(c.size()),
                                 detail::min_output_norm((h * basis).cast<std::complex<double>>())});
    }
    rep.eigenpairs_computed = static_cast<int>(vals.size());
    detail::finish_hautus(rep, tol);
    return rep;
  }

  const Matrix dense = Matrix(a);
  if (symmetric) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(dense);
    if (es.info() != Eigen::Success) throw SolverError("symmetric eigensolver failed");
    const Vector& vals = es.eigenvalues();
    std::vector<double> v(vals.data(), vals.data() + vals.size());
    const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
    const Matrix hv = h * es.eigenvectors();
    for (const auto& c : detail::cluster_eigenvalues(v, options.cluster_tol * scale)) {
      ComplexMatrix block(hv.rows(), static_cast<Eigen::Index>(c.size()));
      for (std::size_t j = 0; j < c.size(); ++j) block.col(static_cast<Eigen::Index>(j)) = hv.col(c[j]).cast<std::complex<double>>();
      rep.eigenspaces.push_back({vals(c.front()), static_cast<int>(c.size()), detail::min_output_norm(block)});
    }
  } else {
    Eigen::EigenSolver<Matrix> es(dense, true);
    if (es.info() != Eigen::Success) throw SolverError("eigensolver did not converge");
    const ComplexVector vals = es.eigenvalues();
    const ComplexMatrix vecs = es.eigenvectors();
    std::vector<std::complex<double>> v(vals.data(), vals.data() + vals.size());
    const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
    const ComplexMatrix hc = Matrix(h).cast<std::complex<double>>();
    for (const auto& c : detail::cluster_eigenvalues(v, options.cluster_tol * scale)) {
      ComplexMatrix basis(n, static_cast<Eigen::Index>(c.size()));
      for (std::size_t j = 0; j < c.size(); ++j) basis.col(static_cast<Eigen::Index>(j)) = vecs.col(c[j]);
      // Orthonormalize so min ||h v|| is taken over unit vectors of the span.
      Eigen::HouseholderQR<ComplexMatrix> qr(basis);
      const ComplexMatrix q = qr.householderQ() * ComplexMatrix::Identity(n, basis.cols());
      rep.eigenspaces.push_back({vals(c.front()), static_cast<int>(c.size()), detail::min_output_norm(hc * q)});
    }
  }
  rep.eigenpairs_computed = static_cast<int>(n);
  detail::finish_hautus(rep, tol);
  return rep;
}

inline ObservabilityReport hautus_test(const Matrix& a, const Matrix& h, double tol = 1e-8) {
  return hautus_test(SparseOperator(a.sparseView(0.0, 0.0)), SparseOperator(h.sparseView(0.0, 0.0)), tol);
}

// ---------------------------------------------------------------------------
// Constant-coefficient non-observability witness

/// Angular frequency per lattice step of the witness mode: exactly one full
/// period across each patch along the x axis.
inline double witness_frequency(int patch) { return 2.0 * std::numbers::pi / patch; }

/// Eigenvalue of the a = const five-point operator for the witness mode.
inline double witness_eigenvalue(const GridSpec& grid, int patch, double conductivity = 1.0) {
  return conductivity * (2.0 * std::cos(witness_frequency(patch)) - 2.0) / (grid.dx * grid.dx);
}

/// Field v(i, j) = sin(theta i) with theta = 2 pi / patch (cos when
/// patch = 2, where the sine vanishes on the lattice). v is an eigenvector of
/// the constant-coefficient A_h and every patch average of v is zero.
inline Field annihilation_witness(const GridSpec& grid, int patch) {
  grid.validate();
  require(patch >= 2, "witness needs patch >= 2");
  require(grid.n % patch == 0, "patch must divide n");
  const double theta = witness_frequency(patch);
  Field v(grid.size());
  for (int i = 0; i < grid.n; ++i) {
    const double value = patch == 2 ? std::cos(theta * i) : std::sin(theta * i);
    for (int j = 0; j < grid.n; ++j) v(grid.index(i, j)) = value;
  }
  return v;
}

/// Complex eigenpair of the constant-coefficient wave generator built from
/// the witness: A_w (v, mu v) = mu (v, mu v) with mu^2 = lambda(A_h).
struct WaveWitness {
  ComplexVector state;
  std::complex<double> eigenvalue;
};

inline WaveWitness wave_annihilation_witness(const GridSpec& grid, int patch, double conductivity = 1.0) {
  const Field v = annihilation_witness(grid, patch);
  const std::complex<double> mu = std::sqrt(std::complex<double>(witness_eigenvalue(grid, patch, conductivity), 0.0));
  WaveWitness w;
  w.eigenvalue = mu;
  w.state.resize(2 * v.size());
  w.state.head(v.size()) = v.cast<std::complex<double>>();
  w.state.tail(v.size()) = mu * v.cast<std::complex<double>>();
  return w;
}

// ---------------------------------------------------------------------------
// Observability Gramian and linear reconstruction

inline constexpr int kGramianDenseLimit = 256;

namespace detail {
inline double simpson_weight(int j, int steps, double ds) {
  if (j == 0 || j == steps) return ds / 3.0;
  return (j % 2 ? 4.0 : 2.0) * ds / 3.0;
}
}  // namespace detail

/// Q(T) = int_0^T exp(A^T s) h^T h exp(A s) ds by composite Simpson with
/// `steps` (even) intervals; exp(A s_j) is formed by powers of exp(A ds).
inline Matrix observability_gramian(const Matrix& a, const Matrix& h, double horizon, int steps) {
  require(a.rows() == a.cols() && h.cols() == a.rows(), "Gramian dimension mismatch");
  require(a.rows() <= kGramianDenseLimit, "Gramian is limited to n <= " + std::to_string(kGramianDenseLimit));
  require(horizon > 0.0, "Gramian horizon must be positive");
  require(steps >= 2 && steps % 2 == 0, "Gramian quadrature needs an even step count >= 2");
  const double ds = horizon / steps;
  const Matrix step = (a * ds).exp();
  const Matrix hth = h.transpose() * h;
  Matrix e = Matrix::Identity(a.rows(), a.cols());
  Matrix q = Matrix::Zero(a.rows(), a.cols());
  for (int j = 0; j <= steps; ++j) {
    q.noalias() += detail::simpson_weight(j, steps, ds) * (e.transpose() * hth * e);
    e = step * e;
  }
  return 0.5 * (q + q.transpose());
}

/// Output samples y(t_j) = h exp(A t_j) x0 on the uniform grid t_j = j T / steps,
/// one column per sample, with each exponential formed directly.
inline Matrix sample_linear_output(const Matrix& a, const Matrix& h, const Vector& x0, double horizon, int steps) {
  Matrix y(h.rows(), steps + 1);
  for (int j = 0; j <= steps; ++j) y.col(j) = h * ((a * (horizon * j / steps)).exp() * x0);
  return y;
}

/// x0 = Q(T)^{-1} int_0^T exp(A^T t) h^T y(t) dt with the same Simpson rule as
/// the Gramian. `outputs` holds y at t_j = j T / steps, j = 0 .. steps.
inline Vector linear_reconstruct_initial_state(const Matrix& a, const Matrix& h, const Matrix& outputs, double horizon,
                                               double max_condition = 1e12) {
  require(outputs.rows() == h.rows(), "output samples must have one row per output");
  const int steps = static_cast<int>(outputs.cols()) - 1;
  const Matrix q = observability_gramian(a, h, horizon, steps);
  Eigen::SelfAdjointEigenSolver<Matrix> es(q);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  if (!(lmax > 0.0) || lmin <= lmax / max_condition)
    throw NotObservableError("observability Gramian is singular (eigenvalue range [" + std::to_string(lmin) + ", " +
                             std::to_string(lmax) + "])");
  const double ds = horizon / steps;
  const Matrix step_t = (a * ds).exp().transpose();
  Matrix e_t = Matrix::Identity(a.rows(), a.cols());
  Vector rhs = Vector::Zero(a.rows());
  const Matrix ht = h.transpose();
  for (int j = 0; j <= steps; ++j) {
    rhs.noalias() += detail::simpson_weight(j, steps, ds) * (e_t * (ht * outputs.col(j)));
    e_t = e_t * step_t;
  }
  return es.eigenvectors() * (es.eigenvalues().cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * rhs));
}

// ---------------------------------------------------------------------------
// Lie-derivative rank diagnostic

/// One-step map linearization used to differentiate sampled outputs with
/// respect to the state.
class TangentModel {
 public:
  virtual ~TangentModel() = default;
  virtual Matrix step_jacobian(const Vector& state) = 0;
};

class LinearTangent final : public TangentModel {
 public:
  explicit LinearTangent(Matrix step) : step_(std::move(step)) {}
  Matrix step_jacobian(const Vector&) override { return step_; }

 private:
  Matrix step_;
};

/// Tangent of the ETDRK2 1D KSE step that produced a kse1d trajectory.
class Kse1dTangent final : public TangentModel {
 public:
  Kse1dTangent(int n, double domain_length, double dt, int contour_points = 32)
      : solver_(n, domain_length, dt, contour_points) {}
  explicit Kse1dTangent(const Trajectory& traj)
      : Kse1dTangent(static_cast<int>(traj.frame_size()), traj.domain_length, traj.dt) {
    require(traj.equation == Equation::kse1d, "Kse1dTangent needs a kse1d trajectory");
  }
  Matrix step_jacobian(const Vector& state) override { return solver_.step_jacobian_etdrk2(state); }

 private:
  Kse1dSolver solver_;
};

struct LieLogDetSeries {
  std::vector<double> log_abs_det;   ///< -inf where the matrix is flagged singular
  std::vector<int> sign;             ///< sign of det, 0 when singular
  std::vector<bool> singular;
  std::vector<int> rank;             ///< numerical rank at rel_tol after equilibration
  std::vector<double> rolling_mean;  ///< centered mean of finite log|det| values
  int state_dim = 0;

  std::size_t size() const { return log_abs_det.size(); }
};

struct LieLogDetOptions {
  double rel_tol = 1e-10;
  int equilibration_passes = 4;
};

namespace detail {

inline long long binomial(int n, int k) {
  long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Alternating row/column scaling to unit infinity norm; rank-preserving.
inline Matrix equilibrate(Matrix m, int passes) {
  for (int p = 0; p < passes; ++p) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double s = m.row(r).cwiseAbs().maxCoeff();
      if (s > 0.0) m.row(r) /= s;
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double s = m.col(c).cwiseAbs().maxCoeff();
      if (s > 0.0) m.col(c) /= s;
    }
  }
  return m;
}

inline std::vector<double> centered_rolling_mean(const std::vector<double>& x, int window) {
  std::vector<double> out(x.size(), std::numeric_limits<double>::quiet_NaN());
  const long lo_off = (window - 1) / 2;
  const long hi_off = window / 2;
  const long n = static_cast<long>(x.size());
  for (long i = 0; i < n; ++i) {
    double sum = 0.0;
    long cnt = 0;
    for (long j = std::max(0L, i - lo_off); j <= std::min(n - 1, i + hi_off); ++j)
      if (std::isfinite(x[static_cast<std::size_t>(j)])) {
        sum += x[static_cast<std::size_t>(j)];
        ++cnt;
      }
    if (cnt) out[static_cast<std::size_t>(i)] = sum / static_cast<double>(cnt);
  }
  return out;
}

}  // namespace detail

/// Per-time log|det O(x_t)| where O(x_t) stacks, for orders l = 0 .. p-1,
/// the state gradients of the order-l forward difference of the tokenized
/// output y = h x:
///
///     block_l = dt^{-l} sum_{j=0}^{l} (-1)^{l-j} C(l, j) h J_j(x_t),
///
/// with J_j the Jacobian of the j-step flow along the stored trajectory
/// (J_0 = I). With m tokens and p orders the matrix is (m p) x N and must be
/// square. The trajectory must store every integrator step (skip = 1).
/// Rank-deficient times (numerical rank below N) are flagged, not thrown.
inline LieLogDetSeries empirical_lie_logdet(const Trajectory& traj, const SparseOperator& tokenizer,
                                            TangentModel& model, int derivative_order, int window,
                                            const LieLogDetOptions& options = {}) {
  traj.validate();
  require(derivative_order >= 1, "derivative_order must be >= 1");
  require(window >= 1, "rolling window must be >= 1");
  require(traj.skip == 1, "Lie diagnostic needs consecutive integrator steps (skip = 1)");
  const auto n = traj.frame_size();
  const auto m = tokenizer.rows();
  const int p = derivative_order;
  require(tokenizer.cols() == n, "tokenizer width does not match the state dimension");
  require(m * p == n, "tokens x derivative orders must equal the state dimension");
  const Eigen::Index steps = traj.length();
  require(steps >= p + 1, "trajectory too short for the requested derivative order");

  const Eigen::Index count = steps - p + 1;  // t = 0 .. T-p
  LieLogDetSeries out;
  out.state_dim = static_cast<int>(n);
  out.log_abs_det.assign(static_cast<std::size_t>(count), 0.0);
  out.sign.assign(static_cast<std::size_t>(count), 0);
  out.singular.assign(static_cast<std::size_t>(count), false);
  out.rank.assign(static_cast<std::size_t>(count), 0);

  const Matrix h = Matrix(tokenizer);
  std::vector<Matrix> prev(static_cast<std::size_t>(p), h), cur(static_cast<std::size_t>(p), h);
  const double dt = traj.dt;
  for (Eigen::Index t = steps - 2; t >= 0; --t) {
    const Matrix jac = model.step_jacobian(traj.frame(t));
    cur[0] = h;
    for (int j = 1; j < p; ++j) cur[static_cast<std::size_t>(j)].noalias() = prev[static_cast<std::size_t>(j - 1)] * jac;
    std::swap(prev, cur);
    if (t >= count) continue;

    Matrix o(n, n);
    for (int l = 0; l < p; ++l) {
      Matrix block = Matrix::Zero(m, n);
      for (int j = 0; j <= l; ++j) {
        const double c = static_cast<double>(detail::binomial(l, j)) * (((l - j) % 2) ? -1.0 : 1.0);
        block += c * prev[static_cast<std::size_t>(j)];
      }
      o.middleRows(l * m, m) = block / std::pow(dt, l);
    }
    const auto idx = static_cast<std::size_t>(t);
    Eigen::BDCSVD<Matrix> svd(detail::equilibrate(o, options.equilibration_passes));
    const Vector& s = svd.singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (s(i) > options.rel_tol * s(0)) ++rank;
    out.rank[idx] = rank;
    Eigen::PartialPivLU<Matrix> lu(o);
    const Matrix& u = lu.matrixLU();
    double logdet = 0.0;
    int sign = lu.permutationP().determinant();
    bool zero = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = u(i, i);
      if (d == 0.0 || !std::isfinite(d)) {
        zero = true;
        break;
      }
      logdet += std::log(std::abs(d));
      if (d < 0.0) sign = -sign;
    }
    if (zero || rank < n) {
      out.singular[idx] = true;
      out.log_abs_det[idx] = -std::numeric_limits<double>::infinity();
      out.sign[idx] = 0;
    } else {
      out.log_abs_det[idx] = logdet;
      out.sign[idx] = sign;
    }
  }
  out.rolling_mean = detail::centered_rolling_mean(out.log_abs_det, window);
  return out;
}

/// Convenience overload for 1D KSE trajectories: window-averaging tokenizer
/// of width `patch` and the ETDRK2 tangent rebuilt from trajectory metadata.
inline LieLogDetSeries empirical_lie_logdet(const Trajectory& traj, int patch, int derivative_order, int window,
                                            const LieLogDetOptions& options = {}) {
  require(traj.one_dimensional, "this overload expects a 1D trajectory");
  Kse1dTangent model(traj);
  const SparseOperator h = build_window_tokenizer_1d(static_cast<int>(traj.frame_size()), patch);
  return empirical_lie_logdet(traj, h, model, derivative_order, window, options);
}

}  // namespace tokdyn
