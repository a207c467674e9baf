#pragma once

// Sparse operators on the periodic square lattice.
//
// Index map: lattice point (i, j) is entry n*i + j. The x axis runs along i
// (the slow index), the y axis along j. All operators are row-major
// compressed with sorted columns; assembly order is deterministic.

#include <Eigen/Sparse>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "tokdyn/types.hpp"

namespace tokdyn {

using SparseOperator = Eigen::SparseMatrix<double, Eigen::RowMajor, std::int64_t>;
using Triplet = Eigen::Triplet<double, std::int64_t>;

enum class Axis { x, y };
enum class Direction { forward, backward };

inline SparseOperator build_difference(Axis axis, Direction direction, const GridSpec& grid) {
  grid.validate();
  const int n = grid.n;
  const double inv = 1.0 / grid.dx;
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(2 * grid.size()));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int row = grid.index(i, j);
      const int step = direction == Direction::forward ? 1 : -1;
      const int nb = axis == Axis::x ? grid.index(i + step, j) : grid.index(i, j + step);
      // D+ u = (u_next - u) / dx, D- u = (u - u_prev) / dx
      const double sign = direction == Direction::forward ? 1.0 : -1.0;
      t.emplace_back(row, nb, sign * inv);
      t.emplace_back(row, row, -sign * inv);
    }
  }
  SparseOperator op(grid.size(), grid.size());
  op.setFromTriplets(t.begin(), t.end());
  op.makeCompressed();
  return op;
}

/// A_h = Dx- diag(a) Dx+ + Dy- diag(a) Dy+, the divergence-form Laplacian.
inline SparseOperator build_modified_laplacian(const Field& a, const GridSpec& grid) {
  grid.validate();
  require(a.size() == grid.size(), "conductivity size does not match grid");
  require((a.array() > 0.0).all() && a.allFinite(), "conductivity must be strictly positive");
  const SparseOperator dxp = build_difference(Axis::x, Direction::forward, grid);
  const SparseOperator dxm = build_difference(Axis::x, Direction::backward, grid);
  const SparseOperator dyp = build_difference(Axis::y, Direction::forward, grid);
  const SparseOperator dym = build_difference(Axis::y, Direction::backward, grid);
  const auto diag_a = a.asDiagonal();
  SparseOperator ax = dxm * (diag_a * dxp);
  SparseOperator ay = dym * (diag_a * dyp);
  SparseOperator op = ax + ay;
  op.prune(0.0);
  op.makeCompressed();
  return op;
}

/// First-order wave generator [[0, I], [A_h, 0]] acting on (u, v).
inline SparseOperator build_wave_generator(const Field& a, const GridSpec& grid) {
  const SparseOperator ah = build_modified_laplacian(a, grid);
  const auto n2 = static_cast<std::int64_t>(grid.size());
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(n2 + ah.nonZeros()));
  for (std::int64_t r = 0; r < n2; ++r) t.emplace_back(r, n2 + r, 1.0);
  for (std::int64_t r = 0; r < ah.outerSize(); ++r)
    for (SparseOperator::InnerIterator it(ah, r); it; ++it) t.emplace_back(n2 + r, it.col(), it.value());
  SparseOperator op(2 * n2, 2 * n2);
  op.setFromTriplets(t.begin(), t.end());
  op.makeCompressed();
  return op;
}

/// Patch-averaging tokenizer. Token (I, J) on the (n/patch)^2 token grid is
/// row I*(n/patch) + J. In wave mode the matrix acts on the stacked (u, v)
/// state and reads the amplitude block only.
inline SparseOperator build_tokenizer_matrix(const GridSpec& grid, int patch, bool wave_mode = false) {
  grid.validate();
  require(patch >= 1, "patch must be >= 1");
  require(grid.n % patch == 0, "patch " + std::to_string(patch) + " does not divide n = " + std::to_string(grid.n));
  const int nt = grid.n / patch;
  const double w = 1.0 / (static_cast<double>(patch) * patch);
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(grid.size()));
  for (int ti = 0; ti < nt; ++ti)
    for (int tj = 0; tj < nt; ++tj)
      for (int pi = 0; pi < patch; ++pi)
        for (int pj = 0; pj < patch; ++pj)
          t.emplace_back(ti * nt + tj, grid.index(ti * patch + pi, tj * patch + pj), w);
  SparseOperator op(nt * nt, wave_mode ? 2 * grid.size() : grid.size());
  op.setFromTriplets(t.begin(), t.end());
  op.makeCompressed();
  return op;
}

/// 1D window-averaging tokenizer on n points with non-overlapping windows.
inline SparseOperator build_window_tokenizer_1d(int n, int window) {
  require(window >= 1 && n % window == 0, "window must divide the 1D grid size");
  std::vector<Triplet> t;
  for (int i = 0; i < n; ++i) t.emplace_back(i / window, i, 1.0 / window);
  SparseOperator op(n / window, n);
  op.setFromTriplets(t.begin(), t.end());
  op.makeCompressed();
  return op;
}

// Binary triplet format, all little-endian:
//   8 bytes  magic "TKDSPOP1"
//   u64      rows, cols, nnz
//   nnz x { u64 row, u64 col, f64 value }   in row-major, sorted-column order

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

template <typename T>
T read_le(std::istream& is, const std::filesystem::path& path) {
  const T value = read_le<T>(is);
  if (!is) throw IoError(path.string(), "unexpected end of file");
  return value;
}

}  // namespace detail

inline void write_operator(const SparseOperator& op, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(tmp.string(), "cannot open for writing");
    os.write("TKDSPOP1", 8);
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(op.rows()));
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(op.cols()));
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(op.nonZeros()));
    for (std::int64_t r = 0; r < op.outerSize(); ++r)
      for (SparseOperator::InnerIterator it(op, r); it; ++it) {
        detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(r));
        detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(it.col()));
        detail::write_le<double>(os, it.value());
      }
    if (!os) throw IoError(tmp.string(), "write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline SparseOperator read_operator(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "cannot open for reading");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "TKDSPOP1") throw IoError(path.string(), "bad operator magic");
  const auto rows = detail::read_le<std::uint64_t>(is);
  const auto cols = detail::read_le<std::uint64_t>(is);
  const auto nnz = detail::read_le<std::uint64_t>(is);
  if (!is) throw IoError(path.string(), "truncated operator header");
  std::vector<Triplet> t;
  t.reserve(nnz);
  for (std::uint64_t k = 0; k < nnz; ++k) {
    const auto r = detail::read_le<std::uint64_t>(is);
    const auto c = detail::read_le<std::uint64_t>(is);
    const auto v = detail::read_le<double>(is);
    if (!is) throw IoError(path.string(), "truncated operator body at entry " + std::to_string(k));
    if (r >= rows || c >= cols) throw IoError(path.string(), "operator index out of range");
    t.emplace_back(static_cast<std::int64_t>(r), static_cast<std::int64_t>(c), v);
  }
  SparseOperator op(static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols));
  op.setFromTriplets(t.begin(), t.end());
  op.makeCompressed();
  return op;
}

}  // namespace tokdyn
