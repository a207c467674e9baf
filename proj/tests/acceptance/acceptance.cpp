// Acceptance runner: one PASS/FAIL line per criterion. Usage:
//   acceptance [--criterion N]...
// Exit status is 0 only when every selected criterion passes.

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>

#include "../support/random_systems.hpp"
#include "tokdyn/tokdyn.hpp"

using namespace tokdyn;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kWitnessOutputTol = 1e-12;
constexpr double kWitnessEigenTol = 1e-10;
constexpr double kHautusTol = 1e-8;
constexpr double kGramianErrorTol = 1e-5;
constexpr int kGramianSteps = 10000;
constexpr double kHistoryDropFactor = 10.0;
constexpr double kObservabilityGapFactor = 3.0;
constexpr double kGapLearningRate = 1e-3;
constexpr long kGapSteps = 4000;
constexpr double kSgdWeightTol = 1e-4;
constexpr double kGradientRelTol = 1e-6;
constexpr double kKseMeanTol = 1e-10;
constexpr double kKseSlope = 4.0;
constexpr double kKseSlopeTol = 0.3;
constexpr double kLieRankTol = 1e-10;
constexpr double kLieFullRankFraction = 0.95;
constexpr double kCorrelationPeriodMin = 0.99;
constexpr double kSubvideoTol = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// ---------------------------------------------------------------------------
// CLI helpers

const fs::path kWork = fs::temp_directory_path() / "tokdyn_acceptance";

int cli(const std::string& args) {
  const std::string cmd = std::string(TOKDYN_CLI_PATH) + " " + args + " >>" + (kWork / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------
// In-memory datasets

struct TokenData {
  std::vector<Matrix> train_tokens, test_tokens;  // normalized
  std::vector<Matrix> train_fields, test_fields;  // normalized amplitude fields, if kept
  Normalization norm;
};

// Generates inits one at a time, keeps tokens (and optionally the amplitude
// fields) and normalizes with the training range of the full states.
TokenData token_data(const GenerateConfig& cfg, int train_count, bool keep_fields) {
  const Generator gen(cfg);
  TokenData d;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int i = 0; i < cfg.inits; ++i) {
    const Trajectory t = gen.trajectory(i);
    const bool train = i < train_count;
    if (train) {
      lo = std::min(lo, t.frames.minCoeff());
      hi = std::max(hi, t.frames.maxCoeff());
    }
    (train ? d.train_tokens : d.test_tokens).push_back(tokenize_trajectory(t, cfg.patch));
    if (keep_fields)
      (train ? d.train_fields : d.test_fields).push_back(t.components == 2 ? Matrix(t.frames.topRows(t.grid.size()))
                                                                           : t.frames);
  }
  d.norm = Normalization::from_range(lo, hi);
  for (auto* set : {&d.train_tokens, &d.test_tokens, &d.train_fields, &d.test_fields})
    for (auto& m : *set) m = d.norm.apply(m);
  return d;
}

GenerateConfig low_res_heat() {
  GenerateConfig c;
  c.equation = Equation::heat;
  c.n = 32;
  c.dt = 0.4;
  c.patch = 4;
  c.frames = 2000;
  return c;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome criterion_1() {
  fs::create_directories(kWork);
  const std::string base = "observability --n 16 --patch 4 ";
  bool ok = cli(base + "--witness --conductivity constant --report " + (kWork / "c1_witness.json").string() +
                " --field-out " + (kWork / "c1_witness").string()) == 0;
  ok = ok && cli(base + "--kalman --conductivity constant --report " + (kWork / "c1_kalman.json").string()) == 0;
  if (!ok) return {false, "CLI run failed, see " + (kWork / "cli.log").string()};
  const auto w = read_json(kWork / "c1_witness.json");
  const auto k = read_json(kWork / "c1_kalman.json");
  const double out_norm = w.at("output_inf_norm"), eig_res = w.at("eigen_residual_inf");
  const Dataset field = read_dataset(kWork / "c1_witness");
  const bool field_ok = field.trajectories.front().frames.rows() == 256 &&
                        (build_tokenizer_matrix(GridSpec{16, 1.0}, 4) * field.trajectories.front().frames.col(0))
                                .cwiseAbs()
                                .maxCoeff() < kWitnessOutputTol;
  const int rank = k.at("rank");
  bool pass = out_norm < kWitnessOutputTol && eig_res < kWitnessEigenTol && rank < 256 && field_ok;
  std::string detail = "witness |hv|inf " + fmt(out_norm) + ", eigen residual " + fmt(eig_res) + ", Kalman rank " +
                       std::to_string(rank) + "/256; Hautus failing eigenspaces for exp-GRF a:";
  for (int seed : {1, 2, 3}) {
    const fs::path rep = kWork / ("c1_hautus_" + std::to_string(seed) + ".json");
    if (cli(base + "--hautus --conductivity grf --tol 1e-8 --seed " + std::to_string(seed) + " --report " +
            rep.string()) != 0)
      return {false, "hautus CLI run failed"};
    const auto h = read_json(rep);
    const std::size_t failing = h.at("failing").size();
    pass = pass && failing == 0 && h.at("observable").get<bool>();
    detail += " " + std::to_string(failing);
  }
  return {pass, detail};
}

Outcome criterion_2() {
  Rng rng(20240601);
  int agree = 0, unobservable = 0, matches_construction = 0;
  const int systems = 200;
  for (int s = 0; s < systems; ++s) {
    const int n = 1 + static_cast<int>(rng.below(12));
    const int m = 1 + static_cast<int>(rng.below(3));
    const bool hide = rng.uniform() < 0.5;
    const auto sys = test_support::random_system(rng, n, m, hide);
    const bool kalman = rank_test(kalman_observability_matrix(sys.a, sys.h)).observable;
    const bool hautus = hautus_test(sys.a, sys.h, kHautusTol).observable;
    agree += kalman == hautus;
    matches_construction += kalman == sys.observable;
    unobservable += !sys.observable;
  }
  return {agree == systems, std::to_string(agree) + "/" + std::to_string(systems) + " verdicts agree (" +
                                std::to_string(unobservable) + " unobservable by construction, " +
                                std::to_string(matches_construction) + " match the construction)"};
}

Outcome criterion_3() {
  Rng rng(7331);
  // m <= 3 outputs as in criterion 2. Single-output draws with closely spaced
  // spectra reach Gramian condition numbers near 1e15, where any
  // reconstruction is limited by conditioning rather than by the method.
  const double horizon = 4.0;
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    const int n = 1 + static_cast<int>(rng.below(6));
    const int m = 1 + static_cast<int>(rng.below(3));
    const auto sys = test_support::random_system(rng, n, m, false);
    const Vector x0 = gaussian(n, 1, rng);
    const Matrix y = sample_linear_output(sys.a, sys.h, x0, horizon, kGramianSteps);
    const Vector xr = linear_reconstruct_initial_state(sys.a, sys.h, y, horizon);
    worst = std::max(worst, (xr - x0).cwiseAbs().maxCoeff());
  }
  int refused = 0;
  const int hidden = 20;
  for (int s = 0; s < hidden; ++s) {
    const int n = 2 + static_cast<int>(rng.below(5));
    const auto sys = test_support::random_system(rng, n, 1, true);
    const Matrix y = sample_linear_output(sys.a, sys.h, gaussian(n, 1, rng), horizon, 200);
    try {
      linear_reconstruct_initial_state(sys.a, sys.h, y, horizon);
    } catch (const NotObservableError&) {
      ++refused;
    }
  }
  return {worst < kGramianErrorTol && refused == hidden,
          "max |x0 error| " + fmt(worst) + " over 50 systems (tol " + fmt(kGramianErrorTol) + "), refused " +
              std::to_string(refused) + "/" + std::to_string(hidden) + " non-observable pairs"};
}

Outcome criterion_4() {
  GenerateConfig c = low_res_heat();
  c.inits = 110;
  c.seed = 4;
  const TokenData d = token_data(c, 100, false);
  SweepOptions o;
  o.trials = 20;
  o.seed = 44;
  o.normalization = d.norm;
  const std::vector<int> ks = {1, 2, 4, 8, 12, 16, 20};
  const auto pts = history_sweep(d.train_tokens, d.test_tokens, ks, o);
  std::string detail = "mean L1 by k:";
  for (const auto& p : pts) detail += " " + std::to_string(p.k) + ":" + fmt(p.mean_l1);
  const SweepPoint& k1 = pts[0];
  const SweepPoint& k16 = pts[5];
  const SweepPoint& k20 = pts[6];
  const double factor = k1.mean_l1 / k16.mean_l1;
  const double pooled = std::sqrt(0.5 * (k16.std_l1 * k16.std_l1 + k20.std_l1 * k20.std_l1));
  const double gap = std::abs(k16.mean_l1 - k20.mean_l1);
  detail += "; drop k1/k16 " + fmt(factor) + " (need >= " + fmt(kHistoryDropFactor) + "), |k16-k20| " + fmt(gap) +
            " vs pooled sd " + fmt(pooled);
  return {factor >= kHistoryDropFactor && gap <= pooled, detail};
}

// Held-out one-step L2 (normalized units) of g at k = 16 trained with Adam,
// plus the least-squares optimum for reference.
struct GapMeasure {
  double sgd = 0.0;
  double lstsq = 0.0;
};

GapMeasure autoregressive_heldout_l2(const GenerateConfig& cfg, int train_count) {
  const TokenData d = token_data(cfg, train_count, false);
  const HistorySource train(d.train_tokens, 16), test(d.test_tokens, 16);
  TrainConfig tc;
  tc.learning_rate = kGapLearningRate;
  tc.steps = kGapSteps;
  tc.batch_size = 64;
  tc.seed = 5;
  return {mean_squared_residue(fit_sgd(train, tc).map, test),
          mean_squared_residue(fit_least_squares(train), test)};
}

Outcome criterion_5() {
  GenerateConfig c = low_res_heat();
  c.frames = 300;
  c.inits = 50;
  c.seed = 5;
  GenerateConfig constant = c;
  constant.conductivity = "constant";
  constant.conductivity_value = 0.25;
  const GapMeasure grf = autoregressive_heldout_l2(c, 45);
  const GapMeasure con = autoregressive_heldout_l2(constant, 45);
  const double ratio = con.sgd / grf.sgd;
  return {ratio >= kObservabilityGapFactor,
          "held-out g L2 at k=16 after " + std::to_string(kGapSteps) + " Adam steps: constant a " + fmt(con.sgd) +
              ", exp-GRF a " + fmt(grf.sgd) + ", ratio " + fmt(ratio) + " (need >= " + fmt(kObservabilityGapFactor) +
              "); least squares " + fmt(con.lstsq) + " vs " + fmt(grf.lstsq)};
}

// Per-frame raw L2 of the full pipeline, averaged over the held-out inits.
std::vector<double> pipeline_error_curve(const GenerateConfig& cfg, int train_count, int k, int k_recon, int steps) {
  const TokenData d = token_data(cfg, train_count, true);
  const LinearMap g = fit_least_squares(HistorySource(d.train_tokens, k));
  LinearMap big_g = fit_superres(HistorySource(d.train_tokens, k_recon, d.train_fields));
  std::vector<double> mean(static_cast<std::size_t>(steps), 0.0);
  const double s = d.norm.scale();
  for (std::size_t i = 0; i < d.test_tokens.size(); ++i) {
    const RolloutResult r = full_pipeline_rollout(g, big_g, d.test_tokens[i].leftCols(k), steps);
    const auto l2 = residue_norms(*r.fields, Matrix(d.test_fields[i].middleCols(k, steps)), Norm::l2);
    for (int t = 0; t < steps; ++t) mean[static_cast<std::size_t>(t)] += l2[static_cast<std::size_t>(t)] / (s * s);
  }
  for (double& v : mean) v /= static_cast<double>(d.test_tokens.size());
  return mean;
}

Outcome criterion_6() {
  GenerateConfig heat = low_res_heat();
  heat.frames = 300;
  heat.inits = 100;
  heat.seed = 6;
  GenerateConfig wave = heat;
  wave.equation = Equation::wave;
  wave.dt = 0.05;
  wave.a_max = 0.1;
  // 32x32 datasets use history 16 for both maps. With 7 frames the slow
  // waves barely move and the reconstruction floor swamps any trend.
  const auto eh = pipeline_error_curve(heat, 90, 16, 16, 100);
  const auto ew = pipeline_error_curve(wave, 90, 16, 16, 100);
  const bool heat_ok = eh.back() < eh.front();
  const bool wave_ok = ew.back() > ew.front();
  return {heat_ok && wave_ok, "heat L2 frame 1 " + fmt(eh.front()) + " -> frame 100 " + fmt(eh.back()) +
                                  "; wave L2 frame 1 " + fmt(ew.front()) + " -> frame 100 " + fmt(ew.back()) +
                                  " (10 unseen inits)"};
}

Outcome criterion_7() {
  // 9 inputs + bias, 20 outputs: 200 unknowns, noisy targets.
  Rng rng(77);
  const Matrix w = gaussian(20, 9, rng);
  const Vector b = gaussian(20, 1, rng);
  const Matrix x = gaussian(9, 1000, rng);
  Matrix y = w * x;
  y.colwise() += b;
  y += 0.2 * gaussian(20, 1000, rng);
  const SampleSet s(x, y);
  const LinearMap exact = fit_least_squares(s);
  TrainConfig cfg;
  cfg.learning_rate = 2e-2;
  cfg.final_learning_rate = 1e-7;
  cfg.steps = 6000;
  cfg.batch_size = 1000;
  cfg.seed = 7;
  const LinearMap sgd = fit_sgd(s, cfg).map;
  const double werr = std::max((sgd.weights - exact.weights).cwiseAbs().maxCoeff(),
                               (*sgd.bias - *exact.bias).cwiseAbs().maxCoeff());

  // Gradient check by central differences on a small batch.
  const Matrix w0 = gaussian(4, 6, rng), xb = gaussian(6, 15, rng), yb = gaussian(4, 15, rng);
  const std::optional<Vector> b0 = Vector(gaussian(4, 1, rng));
  const double ridge = 0.05, h = 1e-6;
  const LossGradient g = mse_loss_gradient(w0, b0, xb, yb, ridge);
  double worst_rel = 0.0;
  for (Eigen::Index i = 0; i < w0.size(); ++i) {
    Matrix wp = w0, wm = w0;
    wp.data()[i] += h;
    wm.data()[i] -= h;
    const double fd =
        (mse_loss_gradient(wp, b0, xb, yb, ridge).loss - mse_loss_gradient(wm, b0, xb, yb, ridge).loss) / (2 * h);
    worst_rel = std::max(worst_rel, std::abs(fd - g.grad_weights.data()[i]) / std::max(1.0, std::abs(fd)));
  }
  for (Eigen::Index i = 0; i < 4; ++i) {
    std::optional<Vector> bp = b0, bm = b0;
    (*bp)(i) += h;
    (*bm)(i) -= h;
    const double fd =
        (mse_loss_gradient(w0, bp, xb, yb, ridge).loss - mse_loss_gradient(w0, bm, xb, yb, ridge).loss) / (2 * h);
    worst_rel = std::max(worst_rel, std::abs(fd - g.grad_bias(i)) / std::max(1.0, std::abs(fd)));
  }
  return {werr < kSgdWeightTol && worst_rel < kGradientRelTol,
          "max |W_sgd - W_lstsq| " + fmt(werr) + " (tol " + fmt(kSgdWeightTol) + "), gradient relative error " +
              fmt(worst_rel) + " (tol " + fmt(kGradientRelTol) + ")"};
}

Outcome criterion_8() {
  const int n = 64;
  const double length = 16.0 * std::numbers::pi;
  const double zero_max = simulate_kse2d(Field::Zero(n * n), n, length, 0.01, 200).frames.cwiseAbs().maxCoeff();

  // Long chaotic run from a Matern initial condition: stored-frame means.
  const Field grf = sample_matern_field({n, 1.0, 0.1, 1.0, 8});
  const Trajectory long_run = simulate_kse2d(grf, n, length, 0.05, 4000, 10);
  const double mean_max = long_run.frames.colwise().mean().cwiseAbs().maxCoeff();

  // Self-convergence over three dt halvings to T = 1.
  const double w = 2.0 * std::numbers::pi / length;
  Field u0(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = length * i / n, y = length * j / n;
      u0(n * i + j) = 10.0 * (std::sin(w * x) * std::cos(2.0 * w * y) + 0.5 * std::cos(w * (x + y)));
    }
  std::vector<Field> finals;
  for (double dt : {1e-2, 5e-3, 2.5e-3, 1.25e-3}) {
    const int steps = static_cast<int>(std::lround(1.0 / dt)) + 1;
    finals.push_back(simulate_kse2d(u0, n, length, dt, steps).frames.rightCols(1));
  }
  std::vector<double> slopes;
  for (std::size_t i = 0; i + 2 < finals.size(); ++i)
    slopes.push_back(std::log2((finals[i] - finals[i + 1]).norm() / (finals[i + 1] - finals[i + 2]).norm()));
  bool slope_ok = true;
  for (double s : slopes) slope_ok = slope_ok && std::abs(s - kKseSlope) <= kKseSlopeTol;
  return {zero_max == 0.0 && mean_max < kKseMeanTol && slope_ok,
          "zero state max " + fmt(zero_max) + ", max |frame mean| " + fmt(mean_max) + " over " +
              std::to_string(long_run.length()) + " frames, slopes " + fmt(slopes[0]) + ", " + fmt(slopes[1]) +
              " (target 4 +- 0.3)"};
}

Outcome criterion_9() {
  GenerateConfig c;
  c.equation = Equation::kse1d;
  c.n = 200;
  c.domain_length = 80.0;
  c.dt = 0.01;
  c.frames = 10000;
  c.inits = 1;
  c.patch = 5;
  const Trajectory traj = Generator(c).trajectory(0);
  LieLogDetOptions opt;
  opt.rel_tol = kLieRankTol;
  const int order = 5;
  const LieLogDetSeries s = empirical_lie_logdet(traj, c.patch, order, 50, opt);
  // Burn-in: the first 20 time units (2000 steps) cover the transition from
  // the sine initial condition into the chaotic regime.
  const std::size_t burn = 2000;
  std::size_t full = 0, capped = 0, total = 0;
  const int cap = s.state_dim - (c.patch - 1);
  int min_rank = s.state_dim, max_rank = 0;
  for (std::size_t t = burn; t < s.size(); ++t) {
    ++total;
    full += !s.singular[t];
    capped += s.rank[t] == cap;
    min_rank = std::min(min_rank, s.rank[t]);
    max_rank = std::max(max_rank, s.rank[t]);
  }
  const double frac = static_cast<double>(full) / static_cast<double>(total);
  return {frac >= kLieFullRankFraction,
          "full-rank fraction " + fmt(frac) + " after burn-in (need >= " + fmt(kLieFullRankFraction) +
              "); rank range " + std::to_string(min_rank) + ".." + std::to_string(max_rank) + " of " +
              std::to_string(s.state_dim) + ", rank == N-(p-1) = " + std::to_string(cap) + " at " +
              std::to_string(capped) + "/" + std::to_string(total) + " times (conserved mean forces p-1 row dependencies)"};
}

Outcome criterion_10() {
  // rho(0) = 1 and a period-P sinusoid recurs at lag P.
  const int period = 25;
  Matrix video(1, 500);
  for (int t = 0; t < 500; ++t) video(0, t) = std::sin(2.0 * std::numbers::pi * t / period + 0.3);
  const CorrelationSeries c = temporal_correlation(video, 0, period);
  const bool rho_ok = std::abs(c.mean[0] - 1.0) < 1e-14 && c.mean[period] >= kCorrelationPeriodMin;

  // Nearest sub-video distance against a brute-force oracle.
  Rng rng(10);
  double worst = 0.0;
  for (int v = 0; v < 20; ++v) {
    const int pixels = 1 + static_cast<int>(rng.below(9));
    const int frames = 3 + static_cast<int>(rng.below(10));
    const int nc = 1 + static_cast<int>(rng.below(3));
    const Matrix ref = gaussian(pixels, frames, rng);
    const Matrix clip = gaussian(pixels, nc + static_cast<int>(rng.below(3)), rng);
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s + nc <= frames; ++s) {
      double acc = 0.0;
      for (int f = 0; f < nc; ++f)
        for (int p = 0; p < pixels; ++p) acc += (clip(p, f) - ref(p, s + f)) * (clip(p, f) - ref(p, s + f));
      best = std::min(best, std::sqrt(acc));
    }
    worst = std::max(worst, std::abs(nearest_subvideo_distance(clip, ref, nc) - best));
  }

  // Constant offsets on dyadic data make every residue exact.
  Matrix truth(16, 4);
  for (Eigen::Index i = 0; i < truth.size(); ++i) truth.data()[i] = static_cast<double>(rng.below(64)) / 8.0 - 4.0;
  const double off = 0.375;
  const Matrix pred = truth.array() + off;
  bool exact = true;
  for (double r : residue_norms(pred, truth, Norm::l1)) exact = exact && r == off;
  for (double r : residue_norms(pred, truth, Norm::l2)) exact = exact && r == off * off;
  for (double r : residue_norms(pred, truth, Norm::linf)) exact = exact && r == off;

  return {rho_ok && worst < kSubvideoTol && exact,
          "rho(0) " + fmt(c.mean[0]) + ", rho(P) " + fmt(c.mean[period]) + ", max |d - brute force| " + fmt(worst) +
              " over 20 videos, offset identities " + (exact ? "exact" : "violated")};
}

// Byte comparison of every data file of `a` against `b` (run manifests,
// which record the output path, are skipped).
bool same_tree(const fs::path& a, const fs::path& b, int& compared, std::string& mismatch) {
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "run.json") continue;
    const fs::path rel = fs::relative(e.path(), a);
    ++compared;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) {
      mismatch = rel.string();
      return false;
    }
  }
  return true;
}

Outcome criterion_11() {
  const fs::path w = kWork / "c11";
  fs::remove_all(w);
  fs::create_directories(w);
  auto at = [&](const std::string& rel) { return (w / rel).string(); };
  const std::vector<std::string> runs = {
      "generate --equation heat --n 16 --frames 80 --inits 10 --patch 4 --seed 11 --out " + at("heat"),
      "generate --equation wave --n 16 --frames 60 --inits 3 --patch 4 --dt 0.05 --a-max 0.1 --seed 11 --out " +
          at("wave"),
      "generate --equation kse2d --n 32 --domain-length 25.132741228718345 --dt 0.05 --frames 20 --skip 5 --inits 2 "
      "--patch 4 --seed 11 --out " + at("kse"),
      "fit --data " + at("heat") + " --k 8 --out " + at("g.bin"),
      "fit --data " + at("heat") + " --role G --k 3 --out " + at("G.bin"),
      "fit --data " + at("heat") + " --learner sgd --k 8 --steps 200 --batch 32 --lr 1e-3 --seed 3 --out " +
          at("g_sgd.bin"),
      "rollout --data " + at("heat") + " --model " + at("g.bin") + " --recon " + at("G.bin") +
          " --pipeline --seed-frames 8 --steps 40 --out " + at("roll"),
      "rollout --data " + at("heat") + " --model " + at("g_sgd.bin") + " --seed-frames 8 --steps 40 --out " +
          at("roll_sgd")};
  for (const auto& r : runs)
    if (cli(r) != 0) return {false, "CLI run failed: " + r};

  struct Replay {
    std::string manifest, original, copy;
  };
  const std::vector<Replay> replays = {{at("heat/run.json"), at("heat"), at("heat_r")},
                                       {at("wave/run.json"), at("wave"), at("wave_r")},
                                       {at("kse/run.json"), at("kse"), at("kse_r")},
                                       {at("g.bin.run.json"), at("g.bin"), at("g_r.bin")},
                                       {at("G.bin.run.json"), at("G.bin"), at("G_r.bin")},
                                       {at("g_sgd.bin.run.json"), at("g_sgd.bin"), at("g_sgd_r.bin")},
                                       {at("roll/run.json"), at("roll"), at("roll_r")},
                                       {at("roll_sgd/run.json"), at("roll_sgd"), at("roll_sgd_r")}};
  int compared = 0;
  for (const auto& r : replays) {
    if (cli("replay " + r.manifest + " --out " + r.copy) != 0) return {false, "replay failed: " + r.manifest};
    std::string mismatch;
    if (fs::is_directory(r.original)) {
      if (!same_tree(r.original, r.copy, compared, mismatch)) return {false, "replay differs: " + mismatch};
    } else {
      ++compared;
      if (slurp(r.original) != slurp(r.copy)) return {false, "replay differs: " + r.original};
    }
  }
  return {true, std::to_string(replays.size()) + " generate/fit/rollout replays, " + std::to_string(compared) +
                    " files byte-identical"};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> c = {
      {"constant-a witness and exp-GRF Hautus", criterion_1},
      {"Kalman/Hautus equivalence on 200 random systems", criterion_2},
      {"Gramian reconstruction and refusal", criterion_3},
      {"history-length drop and plateau", criterion_4},
      {"observable vs non-observable learning gap", criterion_5},
      {"full-pipeline error trend", criterion_6},
      {"SGD/least-squares equivalence and gradient check", criterion_7},
      {"KSE solver properties", criterion_8},
      {"Lie log-det full rank", criterion_9},
      {"metric oracles", criterion_10},
      {"CLI replay reproducibility", criterion_11}};
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--criterion N]...\n";
      return 2;
    }
  }
  if (selected.empty())
    for (int i = 1; i <= static_cast<int>(criteria().size()); ++i) selected.push_back(i);

  set_log_level(LogLevel::warning);
  fs::create_directories(kWork);
  bool all = true;
  for (int id : selected) {
    if (id < 1 || id > static_cast<int>(criteria().size())) {
      std::cerr << "no criterion " << id << "\n";
      return 2;
    }
    const auto& [name, run] = criteria()[static_cast<std::size_t>(id - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << " ["
              << fmt(secs) << " s]" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
