#pragma once

// Autoregressive rollout of a learned latent map, full-state reconstruction,
// and the evaluation metrics used on generated videos.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tokdyn/learners.hpp"
#include "tokdyn/log.hpp"
#include "tokdyn/parallel.hpp"
#include "tokdyn/types.hpp"

namespace tokdyn {

struct RolloutResult {
  Matrix tokens;                 ///< m x (k + steps), one token frame per column
  std::optional<Matrix> fields;  ///< reconstructed states for the generated frames
  int seed_length = 0;
  std::vector<bool> generated;   ///< false for the k seed frames

  Eigen::Index length() const { return tokens.cols(); }
};

/// Seeds with k token frames (columns, oldest first) and repeatedly appends
/// g(last k frames), dropping the oldest entry of the window.
inline RolloutResult autoregressive_rollout(const LinearMap& g, const Matrix& seed, int steps) {
  g.validate();
  require(steps >= 0, "steps must be >= 0");
  require(seed.cols() == g.history, "seed has " + std::to_string(seed.cols()) + " frames, map history is " +
                                        std::to_string(g.history));
  require(seed.rows() == g.token_dim && g.out_dim() == g.token_dim, "seed token size does not match the map");
  const int k = g.history;
  const Eigen::Index m = seed.rows();
  RolloutResult r;
  r.seed_length = k;
  r.tokens.resize(m, k + steps);
  r.tokens.leftCols(k) = seed;
  r.generated.assign(static_cast<std::size_t>(k + steps), true);
  std::fill_n(r.generated.begin(), k, false);
  Vector window(m * k);
  for (int s = 0; s < steps; ++s) {
    for (int j = 0; j < k; ++j) window.segment(j * m, m) = r.tokens.col(s + j);
    const Vector next = g.predict(window);
    if (!next.allFinite()) throw DivergenceError(static_cast<std::size_t>(s), "non-finite rollout prediction");
    r.tokens.col(k + s) = next;
  }
  return r;
}

/// Rollout followed by reconstruction of every generated frame from the most
/// recent k' token frames (k' = G's history, which may not exceed g's).
inline RolloutResult full_pipeline_rollout(const LinearMap& g, const LinearMap& big_g, const Matrix& seed, int steps) {
  big_g.validate();
  require(big_g.token_dim == g.token_dim, "g and G disagree on the token size");
  require(big_g.history <= g.history, "G history exceeds the available token history");
  RolloutResult r = autoregressive_rollout(g, seed, steps);
  const int k = g.history;
  const int kg = big_g.history;
  const Eigen::Index m = seed.rows();
  Matrix fields(big_g.out_dim(), steps);
  Vector window(m * kg);
  for (int s = 0; s < steps; ++s) {
    const Eigen::Index t = k + s;
    for (int j = 0; j < kg; ++j) window.segment(j * m, m) = r.tokens.col(t - kg + 1 + j);
    fields.col(s) = big_g.predict(window);
    if (!fields.col(s).allFinite()) throw DivergenceError(static_cast<std::size_t>(s), "non-finite reconstruction");
  }
  r.fields = std::move(fields);
  return r;
}

// ---------------------------------------------------------------------------
// Residues

enum class Norm { l1, l2, linf };

inline Norm norm_from_string(const std::string& s) {
  if (s == "L1" || s == "l1") return Norm::l1;
  if (s == "L2" || s == "l2") return Norm::l2;
  if (s == "Linf" || s == "linf") return Norm::linf;
  throw ParameterError("unknown norm '" + s + "'");
}

inline std::string to_string(Norm n) {
  switch (n) {
    case Norm::l1: return "L1";
    case Norm::l2: return "L2";
    case Norm::linf: return "Linf";
  }
  return "?";
}

/// Per-frame mean absolute (L1), mean squared (L2) or max absolute (Linf)
/// difference over pixels; frames are columns.
inline std::vector<double> residue_norms(const Matrix& pred, const Matrix& truth, Norm norm) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(),
          "residue shapes differ: " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) + " vs " +
              std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()));
  std::vector<double> out(static_cast<std::size_t>(pred.cols()));
  for (Eigen::Index t = 0; t < pred.cols(); ++t) {
    const auto d = (pred.col(t) - truth.col(t)).cwiseAbs();
    switch (norm) {
      case Norm::l1: out[static_cast<std::size_t>(t)] = d.mean(); break;
      case Norm::l2: out[static_cast<std::size_t>(t)] = d.cwiseAbs2().mean(); break;
      case Norm::linf: out[static_cast<std::size_t>(t)] = d.maxCoeff(); break;
    }
  }
  return out;
}

inline std::vector<double> residue_norms(const Trajectory& pred, const Trajectory& truth, Norm norm) {
  return residue_norms(pred.frames, truth.frames, norm);
}

// ---------------------------------------------------------------------------
// Temporal correlation

struct CorrelationSeries {
  std::vector<int> lags;
  std::vector<double> mean;
  std::vector<double> std;  ///< zero for a single video
  int pixel = 0;
  int ensemble_size = 1;
};

namespace detail {
inline double pearson(const double* x, const double* y, std::size_t n) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DegenerateStatisticError("pixel series has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}
}  // namespace detail

/// Pearson correlation between a pixel's values at t and t + lag, over all
/// valid t, for lag = 0 .. dt_max. Frames are columns.
inline CorrelationSeries temporal_correlation(const Matrix& video, int pixel, int dt_max) {
  require(pixel >= 0 && pixel < video.rows(), "pixel index " + std::to_string(pixel) + " out of range");
  require(dt_max >= 0 && video.cols() > dt_max + 1, "video is too short for dt_max = " + std::to_string(dt_max));
  const std::vector<double> series = [&] {
    std::vector<double> s(static_cast<std::size_t>(video.cols()));
    for (Eigen::Index t = 0; t < video.cols(); ++t) s[static_cast<std::size_t>(t)] = video(pixel, t);
    return s;
  }();
  CorrelationSeries out;
  out.pixel = pixel;
  const std::size_t total = series.size();
  for (int lag = 0; lag <= dt_max; ++lag) {
    const auto n = total - static_cast<std::size_t>(lag);
    out.lags.push_back(lag);
    out.mean.push_back(detail::pearson(series.data(), series.data() + lag, n));
    out.std.push_back(0.0);
  }
  return out;
}

inline CorrelationSeries temporal_correlation(const Trajectory& video, int pixel, int dt_max) {
  return temporal_correlation(video.frames, pixel, dt_max);
}

/// Per-lag sample mean and standard deviation of the per-video correlation
/// series. Videos whose pixel series is degenerate are skipped with a warning.
inline CorrelationSeries correlation_ensemble_stats(const std::vector<Matrix>& videos, int pixel, int dt_max) {
  require(videos.size() >= 2, "ensemble statistics need at least two videos");
  std::vector<std::optional<CorrelationSeries>> per(videos.size());
  parallel_for(videos.size(), [&](std::size_t i) {
    try {
      per[i] = temporal_correlation(videos[i], pixel, dt_max);
    } catch (const DegenerateStatisticError&) {
    }
  });
  std::vector<const CorrelationSeries*> ok;
  for (std::size_t i = 0; i < per.size(); ++i) {
    if (per[i]) ok.push_back(&*per[i]);
    else log_warning("video " + std::to_string(i) + " has a degenerate series at pixel " + std::to_string(pixel) +
                     "; excluded");
  }
  if (ok.empty()) throw DegenerateStatisticError("every video is degenerate at pixel " + std::to_string(pixel));
  CorrelationSeries out;
  out.pixel = pixel;
  out.ensemble_size = static_cast<int>(ok.size());
  const double n = static_cast<double>(ok.size());
  for (int lag = 0; lag <= dt_max; ++lag) {
    const auto l = static_cast<std::size_t>(lag);
    double sum = 0.0;
    for (const auto* s : ok) sum += s->mean[l];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto* s : ok) ss += (s->mean[l] - mean) * (s->mean[l] - mean);
    out.lags.push_back(lag);
    out.mean.push_back(mean);
    out.std.push_back(ok.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nearest sub-video distance

/// min over offsets s of the Euclidean distance between the flattened clip
/// (its first n_c frames, frame-major) and reference frames s .. s+n_c-1.
/// Squared differences are summed in flattening order.
inline double nearest_subvideo_distance(const Matrix& clip, const Matrix& reference, int n_c) {
  require(n_c >= 1 && clip.cols() >= n_c, "clip must have at least n_c >= 1 frames");
  require(clip.rows() == reference.rows(), "clip and reference frame sizes differ");
  require(reference.cols() >= n_c, "reference has " + std::to_string(reference.cols()) + " frames, fewer than n_c = " +
                                       std::to_string(n_c));
  const auto offsets = static_cast<std::size_t>(reference.cols() - n_c + 1);
  std::vector<double> dist(offsets);
  const Eigen::Index rows = clip.rows();
  parallel_for(offsets, [&](std::size_t s) {
    double acc = 0.0;
    for (Eigen::Index f = 0; f < n_c; ++f)
      for (Eigen::Index p = 0; p < rows; ++p) {
        const double d = clip(p, f) - reference(p, static_cast<Eigen::Index>(s) + f);
        acc += d * d;
      }
    dist[s] = acc;
  });
  return std::sqrt(*std::min_element(dist.begin(), dist.end()));
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(tmp.string(), "cannot open for writing");
    os << text;
    if (!os) throw IoError(tmp.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string(), "rename failed: " + ec.message());
}

namespace detail {
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

/// One row per frame. `source` names what was compared.
inline std::string residues_csv(const std::vector<std::vector<double>>& columns, const std::vector<Norm>& norms,
                                const std::string& source) {
  std::string s = "# source: " + source + "; units: raw field units (L2 is a mean of squares)\nframe";
  for (Norm n : norms) s += "," + to_string(n);
  s += "\n";
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (std::size_t r = 0; r < rows; ++r) {
    s += std::to_string(r);
    for (const auto& c : columns) s += "," + detail::fmt(c[r]);
    s += "\n";
  }
  return s;
}

inline std::string correlation_csv(const CorrelationSeries& c, const std::string& source) {
  std::string s = "# source: " + source + "; pixel: " + std::to_string(c.pixel) +
                  "; ensemble: " + std::to_string(c.ensemble_size) + "; lag in stored frames\nlag,mean_rho,std_rho\n";
  for (std::size_t i = 0; i < c.lags.size(); ++i)
    s += std::to_string(c.lags[i]) + "," + detail::fmt(c.mean[i]) + "," + detail::fmt(c.std[i]) + "\n";
  return s;
}

}  // namespace tokdyn
