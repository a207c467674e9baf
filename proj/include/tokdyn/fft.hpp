#pragma once

// Thin RAII wrappers over FFTW real-to-complex transforms.
//
// Plans are created with FFTW_ESTIMATE so the chosen algorithm, and therefore
// every output bit, does not depend on timing measurements. The FFTW planner
// is not thread-safe; plan creation and destruction are serialized.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <mutex>
#include <span>

#include "tokdyn/error.hpp"

namespace tokdyn {

using Complex = std::complex<double>;

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

template <typename T>
struct FftwBuffer {
  T* data = nullptr;
  std::size_t size = 0;

  explicit FftwBuffer(std::size_t n) : data(static_cast<T*>(fftw_malloc(sizeof(T) * n))), size(n) {
    if (!data) throw SolverError("fftw_malloc failed");
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

}  // namespace detail

/// Real 2D transform on an n0 x n1 row-major grid. The half spectrum has
/// n0 x (n1/2 + 1) entries, row-major. `inverse` includes the 1/(n0 n1) factor.
class RealFft2d {
 public:
  RealFft2d(int n0, int n1)
      : n0_(n0), n1_(n1), nc_(n1 / 2 + 1),
        real_(static_cast<std::size_t>(n0) * n1),
        spec_(static_cast<std::size_t>(n0) * (n1 / 2 + 1)) {
    require(n0 >= 1 && n1 >= 1, "FFT dimensions must be positive");
    std::lock_guard lock(detail::fftw_planner_mutex());
    auto* spec = reinterpret_cast<fftw_complex*>(spec_.data);
    forward_ = fftw_plan_dft_r2c_2d(n0_, n1_, real_.data, spec, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r_2d(n0_, n1_, spec, real_.data, FFTW_ESTIMATE);
    if (!forward_ || !backward_) throw SolverError("FFTW planning failed");
  }

  ~RealFft2d() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  RealFft2d(const RealFft2d&) = delete;
  RealFft2d& operator=(const RealFft2d&) = delete;

  int rows() const { return n0_; }
  int cols() const { return n1_; }
  std::size_t real_size() const { return real_.size; }
  std::size_t spectrum_size() const { return spec_.size; }
  int spectrum_cols() const { return nc_; }

  void forward(std::span<const double> in, std::span<Complex> out) {
    require(in.size() == real_.size && out.size() == spec_.size, "FFT size mismatch");
    std::copy(in.begin(), in.end(), real_.data);
    fftw_execute(forward_);
    const auto* s = reinterpret_cast<const Complex*>(spec_.data);
    std::copy(s, s + spec_.size, out.begin());
  }

  void inverse(std::span<const Complex> in, std::span<double> out) {
    require(in.size() == spec_.size && out.size() == real_.size, "FFT size mismatch");
    auto* s = reinterpret_cast<Complex*>(spec_.data);
    std::copy(in.begin(), in.end(), s);
    fftw_execute(backward_);
    const double scale = 1.0 / static_cast<double>(real_.size);
    for (std::size_t i = 0; i < real_.size; ++i) out[i] = real_.data[i] * scale;
  }

 private:
  int n0_, n1_, nc_;
  detail::FftwBuffer<double> real_;
  detail::FftwBuffer<fftw_complex> spec_;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

/// Real 1D transform of length n; half spectrum of n/2 + 1 entries.
class RealFft1d {
 public:
  explicit RealFft1d(int n) : n_(n), real_(static_cast<std::size_t>(n)), spec_(static_cast<std::size_t>(n / 2 + 1)) {
    require(n >= 1, "FFT length must be positive");
    std::lock_guard lock(detail::fftw_planner_mutex());
    auto* spec = reinterpret_cast<fftw_complex*>(spec_.data);
    forward_ = fftw_plan_dft_r2c_1d(n_, real_.data, spec, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_c2r_1d(n_, spec, real_.data, FFTW_ESTIMATE);
    if (!forward_ || !backward_) throw SolverError("FFTW planning failed");
  }

  ~RealFft1d() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  RealFft1d(const RealFft1d&) = delete;
  RealFft1d& operator=(const RealFft1d&) = delete;

  int size() const { return n_; }
  std::size_t spectrum_size() const { return spec_.size; }

  void forward(std::span<const double> in, std::span<Complex> out) {
    require(in.size() == real_.size && out.size() == spec_.size, "FFT size mismatch");
    std::copy(in.begin(), in.end(), real_.data);
    fftw_execute(forward_);
    const auto* s = reinterpret_cast<const Complex*>(spec_.data);
    std::copy(s, s + spec_.size, out.begin());
  }

  void inverse(std::span<const Complex> in, std::span<double> out) {
    require(in.size() == spec_.size && out.size() == real_.size, "FFT size mismatch");
    auto* s = reinterpret_cast<Complex*>(spec_.data);
    std::copy(in.begin(), in.end(), s);
    fftw_execute(backward_);
    const double scale = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < real_.size; ++i) out[i] = real_.data[i] * scale;
  }

 private:
  int n_;
  detail::FftwBuffer<double> real_;
  detail::FftwBuffer<fftw_complex> spec_;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

/// Signed frequency index of bin `i` in a length-`n` transform.
constexpr int signed_frequency(int i, int n) noexcept { return i <= n / 2 ? i : i - n; }

}  // namespace tokdyn
