#pragma once

// On-disk dataset store: a JSON manifest next to one little-endian f64 blob
// per trajectory (frame-major, each frame row-major), plus normalization and
// image export.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tokdyn/learners.hpp"
#include "tokdyn/rollout_metrics.hpp"
#include "tokdyn/types.hpp"

namespace tokdyn {

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  Equation equation = Equation::heat;
  GridSpec grid{};
  bool one_dimensional = false;
  int components = 1;
  double dt = 0.0;  ///< time between stored frames
  int skip = 1;
  int burn_in = 0;
  int frames_per_init = 0;
  std::vector<std::uint64_t> init_seeds;
  std::uint64_t conductivity_seed = 0;
  int train_count = 0;  ///< the first train_count inits form the training split
  Normalization normalization{};
  int patch = 1;
  double domain_length = 0.0;
  std::string created;
  nlohmann::json generator = nlohmann::json::object();  ///< every parameter used to generate
  std::vector<std::string> blobs;

  int init_count() const { return static_cast<int>(init_seeds.size()); }
  Eigen::Index frame_size() const {
    const Eigen::Index base = one_dimensional ? grid.n : static_cast<Eigen::Index>(grid.n) * grid.n;
    return base * components;
  }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Trajectory> trajectories;

  std::vector<Trajectory> train() const {
    return {trajectories.begin(), trajectories.begin() + manifest.train_count};
  }
  std::vector<Trajectory> test() const {
    return {trajectories.begin() + manifest.train_count, trajectories.end()};
  }
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"format_version", m.format_version},
          {"equation", to_string(m.equation)},
          {"grid", {{"n", m.grid.n}, {"dx", m.grid.dx}}},
          {"one_dimensional", m.one_dimensional},
          {"components", m.components},
          {"dt", m.dt},
          {"skip", m.skip},
          {"burn_in", m.burn_in},
          {"frames_per_init", m.frames_per_init},
          {"init_seeds", m.init_seeds},
          {"conductivity_seed", m.conductivity_seed},
          {"train_count", m.train_count},
          {"normalization", normalization_to_json(m.normalization)},
          {"patch", m.patch},
          {"domain_length", m.domain_length},
          {"created", m.created},
          {"generator", m.generator},
          {"blobs", m.blobs},
          {"blob_layout", "little-endian float64, frame-major, row-major within a frame"}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, const std::string& where) {
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kDatasetFormatVersion)
      throw IoError(where, "dataset format version " + std::to_string(m.format_version) + " is not supported (expected " +
                               std::to_string(kDatasetFormatVersion) + ")");
    m.equation = equation_from_string(j.at("equation").get<std::string>());
    m.grid.n = j.at("grid").at("n").get<int>();
    m.grid.dx = j.at("grid").at("dx").get<double>();
    m.one_dimensional = j.at("one_dimensional").get<bool>();
    m.components = j.at("components").get<int>();
    m.dt = j.at("dt").get<double>();
    m.skip = j.at("skip").get<int>();
    m.burn_in = j.at("burn_in").get<int>();
    m.frames_per_init = j.at("frames_per_init").get<int>();
    m.init_seeds = j.at("init_seeds").get<std::vector<std::uint64_t>>();
    m.conductivity_seed = j.at("conductivity_seed").get<std::uint64_t>();
    m.train_count = j.at("train_count").get<int>();
    m.normalization = normalization_from_json(j.at("normalization"));
    m.patch = j.at("patch").get<int>();
    m.domain_length = j.at("domain_length").get<double>();
    m.created = j.at("created").get<std::string>();
    m.generator = j.at("generator");
    m.blobs = j.at("blobs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(where, std::string("malformed manifest: ") + e.what());
  }
  if (m.blobs.size() != m.init_seeds.size())
    throw IoError(where, "manifest lists " + std::to_string(m.blobs.size()) + " blobs for " +
                             std::to_string(m.init_seeds.size()) + " initial conditions");
  if (m.train_count < 0 || m.train_count > m.init_count()) throw IoError(where, "train_count out of range");
  return m;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_frames_blob(const Matrix& frames, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(tmp.string(), "cannot open for writing");
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    // Column-major storage puts each frame contiguously: exactly frame-major order.
    os.write(reinterpret_cast<const char*>(frames.data()),
             static_cast<std::streamsize>(frames.size() * static_cast<Eigen::Index>(sizeof(double))));
    if (!os) throw IoError(tmp.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string(), "rename failed: " + ec.message());
}

inline Matrix read_frames_blob(const std::filesystem::path& path, Eigen::Index frame_size, Eigen::Index frames) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) throw IoError(path.string(), "cannot stat blob: " + ec.message());
  const auto expected = static_cast<std::uintmax_t>(frame_size * frames) * sizeof(double);
  if (bytes != expected)
    throw IoError(path.string(), "blob holds " + std::to_string(bytes) + " bytes, manifest implies " +
                                     std::to_string(expected) + " (" + std::to_string(frames) + " frames of " +
                                     std::to_string(frame_size) + " values)");
  Matrix m(frame_size, frames);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "cannot open for reading");
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
  if (!is) throw IoError(path.string(), "short read");
  return m;
}

/// Writes every blob and then the manifest, each through a temporary file.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<Trajectory>& trajs,
                          DatasetManifest manifest) {
  require(!trajs.empty(), "dataset has no trajectories");
  require(trajs.size() == manifest.init_seeds.size(), "one init seed per trajectory is required");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
  manifest.frames_per_init = static_cast<int>(trajs.front().length());
  manifest.blobs.clear();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    require(trajs[i].length() == manifest.frames_per_init, "trajectories differ in length");
    require(trajs[i].frame_size() == manifest.frame_size(), "trajectory frame size does not match the manifest grid");
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%05zu.bin", i);
    manifest.blobs.emplace_back(name);
  }
  parallel_for(trajs.size(), [&](std::size_t i) { write_frames_blob(trajs[i].frames, dir / manifest.blobs[i]); });
  if (manifest.created.empty()) manifest.created = utc_timestamp();
  write_text_atomic(dir / "manifest.json", to_json(manifest).dump(2) + "\n");
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw IoError(path.string(), "cannot open manifest");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("manifest is not valid JSON: ") + e.what());
  }
  return manifest_from_json(j, path.string());
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir);
  const auto& m = d.manifest;
  d.trajectories.resize(m.blobs.size());
  parallel_for(m.blobs.size(), [&](std::size_t i) {
    Trajectory& t = d.trajectories[i];
    t.frames = read_frames_blob(dir / m.blobs[i], m.frame_size(), m.frames_per_init);
    t.dt = m.dt;
    t.skip = m.skip;
    t.burn_in = m.burn_in;
    t.equation = m.equation;
    t.grid = m.grid;
    t.components = m.components;
    t.one_dimensional = m.one_dimensional;
    t.domain_length = m.domain_length;
    t.seed = m.init_seeds[i];
  });
  return d;
}

/// Range of every value in the given trajectories.
inline Normalization compute_normalization(const std::vector<Trajectory>& trajs) {
  require(!trajs.empty(), "normalization needs at least one trajectory");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& t : trajs) {
    lo = std::min(lo, t.frames.minCoeff());
    hi = std::max(hi, t.frames.maxCoeff());
  }
  return Normalization::from_range(lo, hi);
}

/// Scales every trajectory in place with constants taken from the training
/// split only, and records them in the manifest.
inline Normalization normalize_dataset(Dataset& d) {
  require(d.manifest.train_count >= 1, "normalization needs a non-empty training split");
  const Normalization n = compute_normalization(d.train());
  if (n.constant) log_warning("training split is constant; normalization reduces to a shift");
  for (auto& t : d.trajectories) t.frames = n.apply(t.frames);
  d.manifest.normalization = n;
  return n;
}

// ---------------------------------------------------------------------------
// Images

enum class Colormap { gray, diverging };

inline Colormap colormap_from_string(const std::string& s) {
  if (s == "gray") return Colormap::gray;
  if (s == "diverging") return Colormap::diverging;
  throw ParameterError("unknown colormap '" + s + "' (expected gray or diverging)");
}

/// Level in 0..255: lround(255 (v - lo) / (hi - lo)), clamped. With the
/// range [-1, 1] a zero value maps to 128.
inline unsigned char gray_level(double v, double lo, double hi) {
  const double t = (v - lo) / (hi - lo);
  return static_cast<unsigned char>(std::clamp<long>(std::lround(255.0 * t), 0, 255));
}

/// Diverging map: level 0 is blue (0, 0, 255), 128 white, 255 red (255, 0, 0),
/// linear on each side.
inline std::array<unsigned char, 3> diverging_rgb(unsigned char level) {
  if (level <= 128) {
    const auto c = static_cast<unsigned char>(std::lround(255.0 * level / 128.0));
    return {c, c, 255};
  }
  const auto c = static_cast<unsigned char>(std::lround(255.0 * (255 - level) / 127.0));
  return {255, c, c};
}

/// Writes an n x n field (row-major, row i is image row i) as binary PGM,
/// or PPM for the diverging colormap.
inline void export_frame_image(const Eigen::Ref<const Vector>& field, int n, const std::filesystem::path& path,
                               double lo = -1.0, double hi = 1.0, Colormap cmap = Colormap::gray) {
  require(field.size() == static_cast<Eigen::Index>(n) * n, "field size does not match n x n");
  require(field.allFinite(), "cannot export a non-finite field");
  require(hi > lo, "image range must satisfy hi > lo");
  std::string data = (cmap == Colormap::gray ? "P5\n" : "P6\n") + std::to_string(n) + " " + std::to_string(n) +
                     "\n255\n";
  for (Eigen::Index i = 0; i < field.size(); ++i) {
    const unsigned char g = gray_level(field(i), lo, hi);
    if (cmap == Colormap::gray) {
      data.push_back(static_cast<char>(g));
    } else {
      for (unsigned char c : diverging_rgb(g)) data.push_back(static_cast<char>(c));
    }
  }
  write_text_atomic(path, data);
}

}  // namespace tokdyn
