#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "tokdyn/error.hpp"

namespace tokdyn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Scalar lattice state, flattened row-major: entry (i, j) lives at n*i + j.
/// Wave states stack the amplitude block u and the momentum block v.
using Field = Eigen::VectorXd;

/// Periodic square lattice with n points per axis and spacing dx.
struct GridSpec {
  int n = 0;
  double dx = 1.0;

  int size() const { return n * n; }
  int index(int i, int j) const {
    const int ii = ((i % n) + n) % n;
    const int jj = ((j % n) + n) % n;
    return n * ii + jj;
  }
  double length() const { return n * dx; }

  void validate() const {
    require(n >= 2, "grid needs n >= 2 points per axis, got " + std::to_string(n));
    require(dx > 0.0, "grid spacing must be positive");
  }
};

enum class Equation { heat, wave, kse2d, kse1d, synthetic };

inline std::string to_string(Equation e) {
  switch (e) {
    case Equation::heat: return "heat";
    case Equation::wave: return "wave";
    case Equation::kse2d: return "kse2d";
    case Equation::kse1d: return "kse1d";
    case Equation::synthetic: return "synthetic";
  }
  return "unknown";
}

inline Equation equation_from_string(const std::string& s) {
  if (s == "heat") return Equation::heat;
  if (s == "wave") return Equation::wave;
  if (s == "kse2d") return Equation::kse2d;
  if (s == "kse1d") return Equation::kse1d;
  if (s == "synthetic") return Equation::synthetic;
  throw ParameterError("unknown equation tag '" + s + "'");
}

/// Time-ordered stored frames, one per column. For scalar 2D equations a
/// frame has grid.n^2 entries; wave frames have 2 grid.n^2 (u block first);
/// 1D equations use grid.n entries with `one_dimensional` set.
struct Trajectory {
  Matrix frames;
  double dt = 0.0;  ///< time between stored frames
  int skip = 1;
  int burn_in = 0;
  Equation equation = Equation::synthetic;
  GridSpec grid{};
  int components = 1;
  bool one_dimensional = false;
  double domain_length = 0.0;  ///< spectral solvers only
  std::uint64_t seed = 0;
  bool stability_warning = false;

  Eigen::Index length() const { return frames.cols(); }
  Eigen::Index frame_size() const { return frames.rows(); }
  auto frame(Eigen::Index t) const { return frames.col(t); }

  void validate() const {
    require(frames.cols() > 0, "trajectory has no frames");
    require(dt > 0.0, "trajectory dt must be positive");
  }
};

}  // namespace tokdyn
