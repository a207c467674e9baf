#pragma once

// Dataset generation recipes shared by the command-line driver and the
// acceptance suite. Every random draw is derived from `seed` through fixed
// stream indices, so a recipe and its seed determine the data bit for bit.

#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tokdyn/dataset.hpp"
#include "tokdyn/lattice_ops.hpp"
#include "tokdyn/parallel.hpp"
#include "tokdyn/random_fields.hpp"
#include "tokdyn/solvers.hpp"

namespace tokdyn {

struct GenerateConfig {
  Equation equation = Equation::heat;
  int n = 32;
  double dx = 1.0;
  double dt = 0.4;
  int frames = 2000;  ///< stored frames per initial condition, after burn-in
  int skip = 1;
  int burn_in = 0;    ///< stored frames discarded at the start
  int inits = 100;
  double train_fraction = 0.9;
  int patch = 4;
  std::uint64_t seed = 0;

  // Initial condition: Matern field (2D) or sin(wavenumber pi x / L) (1D KSE).
  double init_sigma = 10.0;
  double init_m = 0.1;
  double init_nu = 1.0;
  double init_wavenumber = 7.0;

  // Conductivity a for heat and wave: "grf" gives a = a_max exp(Z - max Z)
  // with Z a Matern field, "constant" gives a = conductivity_value.
  std::string conductivity = "grf";
  double conductivity_value = 0.25;
  double conductivity_sigma = 0.5;
  double conductivity_m = 0.1;
  double conductivity_nu = 1.0;
  double a_max = 0.6;

  // Kuramoto-Sivashinsky.
  double domain_length = 16.0 * std::numbers::pi;
  int contour_points = 32;
  std::string nonlinearity = "half_gradient_squared";
  std::string scheme = "etdrk2";  ///< 1D only

  void validate() const {
    require(n >= 2, "n must be >= 2");
    require(dx > 0.0 && dt > 0.0, "dx and dt must be positive");
    require(frames >= 1 && skip >= 1 && burn_in >= 0 && inits >= 1, "invalid frame, skip, burn-in or init counts");
    require(train_fraction > 0.0 && train_fraction <= 1.0, "train_fraction must lie in (0, 1]");
    require(patch >= 1 && n % patch == 0, "patch must divide n");
    require(conductivity == "grf" || conductivity == "constant", "conductivity must be grf or constant");
    require(conductivity_value > 0.0 && a_max > 0.0, "conductivity values must be positive");
    require(domain_length > 0.0, "domain_length must be positive");
  }

  int train_count() const {
    return std::clamp(static_cast<int>(std::lround(train_fraction * inits)), 1, inits);
  }
  std::uint64_t conductivity_seed() const { return derive_seed(seed, 0xA11); }
  std::uint64_t init_seed(int i) const { return derive_seed(seed, 0x1000 + static_cast<std::uint64_t>(i)); }
};

inline void to_json(nlohmann::json& j, const GenerateConfig& c) {
  j = {{"equation", to_string(c.equation)},
       {"n", c.n},
       {"dx", c.dx},
       {"dt", c.dt},
       {"frames", c.frames},
       {"skip", c.skip},
       {"burn_in", c.burn_in},
       {"inits", c.inits},
       {"train_fraction", c.train_fraction},
       {"patch", c.patch},
       {"seed", c.seed},
       {"init_sigma", c.init_sigma},
       {"init_m", c.init_m},
       {"init_nu", c.init_nu},
       {"init_wavenumber", c.init_wavenumber},
       {"conductivity", c.conductivity},
       {"conductivity_value", c.conductivity_value},
       {"conductivity_sigma", c.conductivity_sigma},
       {"conductivity_m", c.conductivity_m},
       {"conductivity_nu", c.conductivity_nu},
       {"a_max", c.a_max},
       {"domain_length", c.domain_length},
       {"contour_points", c.contour_points},
       {"nonlinearity", c.nonlinearity},
       {"scheme", c.scheme}};
}

/// Overrides the fields present in `j`; unknown keys are rejected.
inline void update_from_json(GenerateConfig& c, const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "equation") c.equation = equation_from_string(value.get<std::string>());
      else if (key == "n") c.n = value.get<int>();
      else if (key == "dx") c.dx = value.get<double>();
      else if (key == "dt") c.dt = value.get<double>();
      else if (key == "frames") c.frames = value.get<int>();
      else if (key == "skip") c.skip = value.get<int>();
      else if (key == "burn_in") c.burn_in = value.get<int>();
      else if (key == "inits") c.inits = value.get<int>();
      else if (key == "train_fraction") c.train_fraction = value.get<double>();
      else if (key == "patch") c.patch = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "init_sigma") c.init_sigma = value.get<double>();
      else if (key == "init_m") c.init_m = value.get<double>();
      else if (key == "init_nu") c.init_nu = value.get<double>();
      else if (key == "init_wavenumber") c.init_wavenumber = value.get<double>();
      else if (key == "conductivity") c.conductivity = value.get<std::string>();
      else if (key == "conductivity_value") c.conductivity_value = value.get<double>();
      else if (key == "conductivity_sigma") c.conductivity_sigma = value.get<double>();
      else if (key == "conductivity_m") c.conductivity_m = value.get<double>();
      else if (key == "conductivity_nu") c.conductivity_nu = value.get<double>();
      else if (key == "a_max") c.a_max = value.get<double>();
      else if (key == "domain_length") c.domain_length = value.get<double>();
      else if (key == "contour_points") c.contour_points = value.get<int>();
      else if (key == "nonlinearity") c.nonlinearity = value.get<std::string>();
      else if (key == "scheme") c.scheme = value.get<std::string>();
      else throw ParameterError("unknown generate setting '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ParameterError("setting '" + key + "' has the wrong type: " + e.what());
    }
  }
}

/// Conductivity field shared by every initial condition of a recipe.
inline Field make_conductivity(const GenerateConfig& c) {
  const Eigen::Index size = static_cast<Eigen::Index>(c.n) * c.n;
  if (c.conductivity == "constant") return Field::Constant(size, c.conductivity_value);
  const Field z = sample_matern_field({c.n, c.conductivity_sigma, c.conductivity_m, c.conductivity_nu,
                                       c.conductivity_seed()});
  return (c.a_max * (z.array() - z.maxCoeff()).exp()).matrix();
}

inline KseNonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "half_gradient_squared") return KseNonlinearity::half_gradient_squared;
  if (s == "convective") return KseNonlinearity::convective;
  throw ParameterError("unknown KSE nonlinearity '" + s + "'");
}

inline EtdScheme scheme_from_string(const std::string& s) {
  if (s == "etdrk2") return EtdScheme::etdrk2;
  if (s == "etdrk4") return EtdScheme::etdrk4;
  throw ParameterError("unknown ETD scheme '" + s + "'");
}

/// Linear-equation generator for one recipe; the operator is built once.
class Generator {
 public:
  explicit Generator(GenerateConfig config) : c_(std::move(config)) {
    c_.validate();
    const GridSpec grid{c_.n, c_.dx};
    if (c_.equation == Equation::heat || c_.equation == Equation::wave) {
      conductivity_ = make_conductivity(c_);
      op_ = c_.equation == Equation::heat ? build_modified_laplacian(conductivity_, grid)
                                          : build_wave_generator(conductivity_, grid);
    } else {
      require(c_.equation == Equation::kse2d || c_.equation == Equation::kse1d,
              "generation supports heat, wave, kse2d and kse1d");
    }
  }

  const GenerateConfig& config() const { return c_; }
  const Field& conductivity() const { return conductivity_; }
  const SparseOperator& op() const { return op_; }

  Field initial_condition(int i) const {
    const std::uint64_t seed = c_.init_seed(i);
    if (c_.equation == Equation::kse1d) {
      Field u(c_.n);
      for (int j = 0; j < c_.n; ++j)
        u(j) = std::sin(c_.init_wavenumber * std::numbers::pi * (c_.domain_length * j / c_.n) / c_.domain_length);
      return u;
    }
    Field u = sample_matern_field({c_.n, c_.init_sigma, c_.init_m, c_.init_nu, seed});
    if (c_.equation == Equation::wave) {
      Field state = Field::Zero(2 * u.size());
      state.head(u.size()) = u;  // starts at rest
      return state;
    }
    return u;
  }

  Trajectory trajectory(int i) const {
    const Field x0 = initial_condition(i);
    const int steps = (c_.frames + c_.burn_in) * c_.skip;
    Trajectory t;
    switch (c_.equation) {
      case Equation::heat:
      case Equation::wave: {
        t = simulate_linear(op_, x0, c_.dt, steps, c_.skip);
        if (c_.burn_in > 0) t.frames = Matrix(t.frames.rightCols(t.frames.cols() - c_.burn_in));
        t.burn_in = c_.burn_in;
        t.grid = GridSpec{c_.n, c_.dx};
        t.components = c_.equation == Equation::wave ? 2 : 1;
        break;
      }
      case Equation::kse2d:
        t = simulate_kse2d(x0, c_.n, c_.domain_length, c_.dt, steps, c_.skip, c_.burn_in, c_.contour_points,
                           nonlinearity_from_string(c_.nonlinearity));
        break;
      case Equation::kse1d: {
        require(c_.skip == 1 && c_.burn_in == 0, "1D KSE generation stores every step (skip 1, no burn-in)");
        t = simulate_kse1d(x0, c_.domain_length, c_.n, c_.dt, c_.frames, scheme_from_string(c_.scheme),
                           c_.contour_points);
        break;
      }
      default: throw ParameterError("unsupported equation");
    }
    t.equation = c_.equation;
    t.seed = c_.init_seed(i);
    return t;
  }

  /// Trajectories for inits [first, first + count), generated in parallel.
  std::vector<Trajectory> trajectories(int first, int count) const {
    std::vector<Trajectory> out(static_cast<std::size_t>(count));
    parallel_for(out.size(), [&](std::size_t i) { out[i] = trajectory(first + static_cast<int>(i)); });
    return out;
  }

  DatasetManifest manifest() const {
    DatasetManifest m;
    m.equation = c_.equation;
    m.grid = GridSpec{c_.n, c_.equation == Equation::kse2d || c_.equation == Equation::kse1d
                                ? c_.domain_length / c_.n
                                : c_.dx};
    m.one_dimensional = c_.equation == Equation::kse1d;
    m.components = c_.equation == Equation::wave ? 2 : 1;
    m.dt = c_.dt * c_.skip;
    m.skip = c_.skip;
    m.burn_in = c_.burn_in;
    m.frames_per_init = c_.frames;
    for (int i = 0; i < c_.inits; ++i) m.init_seeds.push_back(c_.init_seed(i));
    m.conductivity_seed = c_.conductivity_seed();
    m.train_count = c_.train_count();
    m.patch = c_.patch;
    m.domain_length = c_.equation == Equation::kse2d || c_.equation == Equation::kse1d ? c_.domain_length : 0.0;
    m.generator = c_;
    return m;
  }

 private:
  GenerateConfig c_;
  Field conductivity_;
  SparseOperator op_;
};

}  // namespace tokdyn
