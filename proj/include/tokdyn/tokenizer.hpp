#pragma once

// Patch-average tokenization and history windows.

#include <optional>
#include <vector>

#include "tokdyn/lattice_ops.hpp"
#include "tokdyn/types.hpp"

namespace tokdyn {

struct TokenFrame {
  Vector values;
  int source_n = 0;
  int patch = 1;

  int token_grid() const { return source_n / patch; }
};

/// Direct patch averaging. A field with 2 n^2 entries is treated as a wave
/// state and only its amplitude block is read.
inline TokenFrame tokenize(const Eigen::Ref<const Vector>& field, int n, int patch) {
  require(n >= 1 && patch >= 1 && n % patch == 0,
          "patch " + std::to_string(patch) + " does not divide n = " + std::to_string(n));
  const Eigen::Index n2 = static_cast<Eigen::Index>(n) * n;
  require(field.size() == n2 || field.size() == 2 * n2, "field size does not match grid");
  const int nt = n / patch;
  TokenFrame out;
  out.source_n = n;
  out.patch = patch;
  out.values = Vector::Zero(static_cast<Eigen::Index>(nt) * nt);
  const double w = 1.0 / (static_cast<double>(patch) * patch);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.values(static_cast<Eigen::Index>(i / patch) * nt + j / patch) += field(n * i + j);
  out.values *= w;
  return out;
}

/// 1D windowed average with non-overlapping windows of `window` points.
inline Vector tokenize_1d(const Eigen::Ref<const Vector>& u, int window) {
  require(window >= 1 && u.size() % window == 0, "window must divide the 1D grid size");
  Vector out = Vector::Zero(u.size() / window);
  for (Eigen::Index i = 0; i < u.size(); ++i) out(i / window) += u(i);
  return out / window;
}

/// Tokens of every frame, one column per frame.
inline Matrix tokenize_trajectory(const Trajectory& traj, int patch) {
  traj.validate();
  const int n = traj.grid.n;
  if (traj.one_dimensional) {
    Matrix out(traj.frame_size() / patch, traj.length());
    for (Eigen::Index t = 0; t < traj.length(); ++t) out.col(t) = tokenize_1d(traj.frame(t), patch);
    return out;
  }
  require(n % patch == 0, "patch does not divide the trajectory grid");
  const Eigen::Index m = static_cast<Eigen::Index>(n / patch) * (n / patch);
  Matrix out(m, traj.length());
  for (Eigen::Index t = 0; t < traj.length(); ++t) out.col(t) = tokenize(traj.frame(t), n, patch).values;
  return out;
}

/// Full-resolution target of a frame: the amplitude block for wave states.
inline Vector field_of_frame(const Trajectory& traj, Eigen::Index t) {
  if (traj.components == 2) return traj.frame(t).head(traj.grid.size());
  return traj.frame(t);
}

/// Training windows over one tokenized trajectory.
///
/// g-samples: for t = k-1 .. T-2 the history is token frames t-k+1 .. t
/// (oldest first) and the target is token frame t+1, giving T - k samples.
/// G-samples: for t = k-1 .. T-1 the history ends at t and the target is the
/// raw frame t, giving T - k + 1 samples.
struct HistorySample {
  Vector history;                ///< k*m entries, oldest frame first
  Vector token_target;           ///< token frame t+1 (g-samples only)
  std::optional<Vector> field_target;
  Eigen::Index time = 0;         ///< index t of the newest history frame
};

inline Vector history_at(const Matrix& tokens, Eigen::Index t, int k) {
  const Eigen::Index m = tokens.rows();
  Vector h(m * k);
  for (int s = 0; s < k; ++s) h.segment(s * m, m) = tokens.col(t - k + 1 + s);
  return h;
}

inline std::vector<HistorySample> build_histories(const Trajectory& traj, int k, int patch, bool with_field_target = false) {
  require(k >= 1, "history length k must be >= 1");
  require(traj.length() > k, "trajectory of length " + std::to_string(traj.length()) +
                                 " is too short for history length " + std::to_string(k));
  const Matrix tokens = tokenize_trajectory(traj, patch);
  std::vector<HistorySample> out;
  out.reserve(static_cast<std::size_t>(traj.length() - k));
  for (Eigen::Index t = k - 1; t + 1 < traj.length(); ++t) {
    HistorySample s;
    s.history = history_at(tokens, t, k);
    s.token_target = tokens.col(t + 1);
    if (with_field_target) s.field_target = field_of_frame(traj, t + 1);
    s.time = t;
    out.push_back(std::move(s));
  }
  return out;
}

/// Reconstruction samples: history of k frames ending at t, target raw frame t.
inline std::vector<HistorySample> build_reconstruction_samples(const Trajectory& traj, int k, int patch) {
  require(k >= 1, "history length k must be >= 1");
  require(traj.length() >= k, "trajectory is too short for reconstruction history length");
  const Matrix tokens = tokenize_trajectory(traj, patch);
  std::vector<HistorySample> out;
  for (Eigen::Index t = k - 1; t < traj.length(); ++t) {
    HistorySample s;
    s.history = history_at(tokens, t, k);
    s.field_target = field_of_frame(traj, t);
    s.time = t;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tokdyn
