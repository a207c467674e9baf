#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "tokdyn/learners.hpp"
#include "tokdyn/random_fields.hpp"

using namespace tokdyn;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

SampleSet linear_problem(Eigen::Index d, Eigen::Index o, Eigen::Index s, double noise, std::uint64_t seed,
                         Matrix* w_true = nullptr, Vector* b_true = nullptr) {
  Rng rng(seed);
  const Matrix w = gaussian(o, d, rng);
  const Vector b = gaussian(o, 1, rng);
  const Matrix x = gaussian(d, s, rng);
  Matrix y = w * x;
  y.colwise() += b;
  if (noise > 0.0) y += noise * gaussian(o, s, rng);
  if (w_true) *w_true = w;
  if (b_true) *b_true = b;
  return SampleSet(x, y);
}

}  // namespace

TEST(LeastSquares, RecoversExactLinearMap) {
  Matrix w;
  Vector b;
  const SampleSet s = linear_problem(12, 5, 80, 0.0, 1, &w, &b);
  const LinearMap map = fit_least_squares(s);
  EXPECT_LT((map.weights - w).cwiseAbs().maxCoeff(), 1e-8);
  ASSERT_TRUE(map.bias.has_value());
  EXPECT_LT((*map.bias - b).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(sum_squared_residue(map, s), 1e-10);
  EXPECT_FALSE(map.rank_deficient);
  EXPECT_EQ(map.rank, 13);
}

TEST(LeastSquares, StreamingChunksMatchSingleBlock) {
  const SampleSet s = linear_problem(6, 3, 500, 0.3, 2);
  LeastSquaresOptions small;
  small.memory_limit_bytes = 64 * 10 * sizeof(double);  // forces many chunks
  const LinearMap a = fit_least_squares(s);
  const LinearMap b = fit_least_squares(s, small);
  EXPECT_LT((a.weights - b.weights).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((*a.bias - *b.bias).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LeastSquares, MatchesNormalEquations) {
  const SampleSet s = linear_problem(7, 2, 60, 0.5, 3);
  for (double ridge : {0.0, 0.3, 25.0}) {
    LeastSquaresOptions opt;
    opt.ridge = ridge;
    const LinearMap map = fit_least_squares(s, opt);
    // Augmented normal equations with the bias column left unpenalized.
    Matrix xa(8, s.size());
    xa << s.inputs, Matrix::Ones(1, s.size());
    Matrix reg = Matrix::Zero(8, 8);
    reg.topLeftCorner(7, 7).diagonal().setConstant(ridge);
    const Matrix coef = (xa * xa.transpose() + reg).ldlt().solve(xa * s.targets.transpose());
    EXPECT_LT((map.weights - coef.topRows(7).transpose()).cwiseAbs().maxCoeff(), 1e-10) << "ridge " << ridge;
    EXPECT_LT((*map.bias - coef.row(7).transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(LeastSquares, PerturbationsNeverImproveObjective) {
  const SampleSet s = linear_problem(5, 3, 40, 0.4, 4);
  Rng rng(99);
  for (double ridge : {0.0, 2.0}) {
    LeastSquaresOptions opt;
    opt.ridge = ridge;
    const LinearMap best = fit_least_squares(s, opt);
    const double f0 = least_squares_objective(best, s, ridge);
    for (int trial = 0; trial < 100; ++trial) {
      LinearMap p = best;
      Matrix dw = gaussian(3, 5, rng);
      Vector db = gaussian(3, 1, rng);
      const double norm = std::sqrt(dw.squaredNorm() + db.squaredNorm());
      p.weights += 1e-3 * dw / norm;
      *p.bias += 1e-3 * db / norm;
      EXPECT_GE(least_squares_objective(p, s, ridge), f0);
    }
  }
}

TEST(LeastSquares, RidgeShrinksWeightsToZero) {
  const SampleSet s = linear_problem(6, 2, 50, 0.1, 5);
  double prev = fit_least_squares(s).weights.norm();
  for (double ridge : {1.0, 1e2, 1e4, 1e8}) {
    LeastSquaresOptions opt;
    opt.ridge = ridge;
    const double nrm = fit_least_squares(s, opt).weights.norm();
    EXPECT_LT(nrm, prev);
    prev = nrm;
  }
  EXPECT_LT(prev, 1e-5);
}

TEST(LeastSquares, RankDeficientGivesMinimumNorm) {
  Rng rng(6);
  Matrix x = gaussian(3, 30, rng);
  x.row(2) = x.row(1);  // duplicated feature
  Matrix y = 2.0 * x.row(0) + 4.0 * x.row(1);
  LeastSquaresOptions opt;
  opt.bias = false;
  const LinearMap map = fit_least_squares(SampleSet(x, y), opt);
  EXPECT_TRUE(map.rank_deficient);
  EXPECT_EQ(map.rank, 2);
  EXPECT_NEAR(map.weights(0, 0), 2.0, 1e-10);
  EXPECT_NEAR(map.weights(0, 1), 2.0, 1e-10);  // weight split evenly
  EXPECT_NEAR(map.weights(0, 2), 2.0, 1e-10);
}

TEST(LeastSquares, PermutationInvariantBitForBit) {
  const SampleSet s = linear_problem(9, 4, 120, 0.7, 7);
  std::vector<Eigen::Index> perm(120);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(8);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  SampleSet shuffled(Matrix(9, 120), Matrix(4, 120));
  for (Eigen::Index c = 0; c < 120; ++c) {
    shuffled.inputs.col(c) = s.inputs.col(perm[static_cast<std::size_t>(c)]);
    shuffled.targets.col(c) = s.targets.col(perm[static_cast<std::size_t>(c)]);
  }
  const LinearMap a = fit_least_squares(s);
  const LinearMap b = fit_least_squares(shuffled);
  EXPECT_TRUE((a.weights.array() == b.weights.array()).all());
  EXPECT_TRUE((a.bias->array() == b.bias->array()).all());
}

TEST(LeastSquares, RejectsBadInput) {
  EXPECT_THROW(fit_least_squares(SampleSet(Matrix(3, 0), Matrix(1, 0))), ParameterError);
  Matrix x = Matrix::Ones(2, 5);
  x(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fit_least_squares(SampleSet(x, Matrix::Ones(1, 5))), ParameterError);
  LeastSquaresOptions opt;
  opt.ridge = -1.0;
  EXPECT_THROW(fit_least_squares(SampleSet(Matrix::Ones(2, 5), Matrix::Ones(1, 5)), opt), ParameterError);
}

TEST(HistorySource, CountsAndLayout) {
  Matrix seq(2, 10);
  for (int t = 0; t < 10; ++t) seq.col(t) << t, 100 + t;
  const HistorySource g({seq, seq.leftCols(6)}, 3);
  EXPECT_EQ(g.size(), 7 + 3);
  EXPECT_EQ(g.in_dim(), 6);
  EXPECT_EQ(g.out_dim(), 2);
  Vector x(6), y(2);
  g.fill(0, x, y);
  EXPECT_EQ(x, (Vector(6) << 0, 100, 1, 101, 2, 102).finished());
  EXPECT_EQ(y, (Vector(2) << 3, 103).finished());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    g.fill(i, x, y);
    for (Eigen::Index r = 0; r < 6; ++r) EXPECT_EQ(g.key(i, r), x(r));
    for (Eigen::Index r = 0; r < 2; ++r) EXPECT_EQ(g.key(i, 6 + r), y(r));
  }

  const Matrix fields = Matrix::Random(5, 10);
  const HistorySource big_g({seq}, 3, {fields});
  EXPECT_EQ(big_g.size(), 8);
  EXPECT_EQ(big_g.out_dim(), 5);
  Vector yf(5);
  big_g.fill(0, x, yf);
  EXPECT_EQ(yf, Vector(fields.col(2)));

  EXPECT_THROW(HistorySource({seq}, 0), ParameterError);
  EXPECT_THROW(HistorySource({seq}, 10), ParameterError);
}

TEST(Sgd, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  const Matrix w = gaussian(3, 4, rng), x = gaussian(4, 9, rng), y = gaussian(3, 9, rng);
  const std::optional<Vector> b = Vector(gaussian(3, 1, rng));
  const double ridge = 0.2;
  const LossGradient g = mse_loss_gradient(w, b, x, y, ridge);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Matrix wp = w, wm = w;
    wp.data()[i] += h;
    wm.data()[i] -= h;
    const double fd = (mse_loss_gradient(wp, b, x, y, ridge).loss - mse_loss_gradient(wm, b, x, y, ridge).loss) / (2 * h);
    EXPECT_NEAR(fd, g.grad_weights.data()[i], 1e-6 * std::max(1.0, std::abs(fd)));
  }
  for (Eigen::Index i = 0; i < 3; ++i) {
    std::optional<Vector> bp = b, bm = b;
    (*bp)(i) += h;
    (*bm)(i) -= h;
    const double fd = (mse_loss_gradient(w, bp, x, y, ridge).loss - mse_loss_gradient(w, bm, x, y, ridge).loss) / (2 * h);
    EXPECT_NEAR(fd, g.grad_bias(i), 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Sgd, ZeroStepsReturnsInitialMap) {
  const SampleSet s = linear_problem(4, 2, 20, 0.0, 12);
  TrainConfig cfg;
  cfg.steps = 0;
  const SgdResult r = fit_sgd(s, cfg);
  EXPECT_EQ(r.map.weights.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.map.bias->cwiseAbs().maxCoeff(), 0.0);
  ASSERT_EQ(r.curve.size(), 1u);
  EXPECT_EQ(r.curve[0].step, 0);
}

TEST(Sgd, DeterministicForSeedAndRecordsEpochs) {
  const SampleSet train = linear_problem(4, 2, 100, 0.1, 13);
  const SampleSet test = linear_problem(4, 2, 30, 0.1, 13);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.steps = 250;
  cfg.batch_size = 20;
  cfg.seed = 5;
  const SgdResult a = fit_sgd(train, cfg, &test);
  const SgdResult b = fit_sgd(train, cfg, &test);
  EXPECT_TRUE((a.map.weights.array() == b.map.weights.array()).all());
  ASSERT_EQ(a.curve.size(), 50u);  // 5 batches per epoch, 250 steps
  EXPECT_LT(a.curve.back().train_l2, a.curve.front().train_l2);
  EXPECT_TRUE(std::isfinite(a.curve.back().test_l2));
  cfg.seed = 6;
  const SgdResult c = fit_sgd(train, cfg, &test);
  EXPECT_FALSE((a.map.weights.array() == c.map.weights.array()).all());
}

TEST(Sgd, ConvergesToLeastSquaresSolution) {
  // 9 inputs + bias, 20 outputs: 200 unknowns, well conditioned, noisy targets.
  const SampleSet s = linear_problem(9, 20, 1000, 0.2, 14);
  const LinearMap exact = fit_least_squares(s);
  TrainConfig cfg;
  cfg.learning_rate = 2e-2;
  cfg.final_learning_rate = 1e-7;
  cfg.steps = 6000;
  cfg.batch_size = 1000;
  const LinearMap sgd = fit_sgd(s, cfg).map;
  EXPECT_LT((sgd.weights - exact.weights).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT((*sgd.bias - *exact.bias).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Sgd, DivergenceIsReported) {
  Matrix x = Matrix::Constant(2, 8, 1e200);
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 4;
  try {
    fit_sgd(SampleSet(x, Matrix::Constant(1, 8, 1e200)), cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 0u);
  }
  cfg.learning_rate = 0.0;
  EXPECT_THROW(fit_sgd(SampleSet(Matrix::Ones(2, 4), Matrix::Ones(1, 4)), cfg), ParameterError);
}

TEST(SuperRes, ExactRecoveryThroughInvertibleTokenizer) {
  // Fields x = B z live in an m-dimensional subspace and tokens are h x; with
  // h B invertible the reconstruction G = B (h B)^{-1} is linear and exact.
  const int n = 8, patch = 4, m = 4;
  const GridSpec grid{n, 1.0};
  const Matrix h(build_tokenizer_matrix(grid, patch));
  Rng rng(15);
  const Matrix basis = gaussian(n * n, m, rng);
  const Matrix z = gaussian(m, 40, rng);
  const Matrix fields = basis * z;
  const Matrix tokens = h * fields;
  const LinearMap g = fit_superres(HistorySource({tokens}, 1, {fields}));
  EXPECT_EQ(g.role, "G");
  const Matrix expected = basis * (h * basis).inverse();
  EXPECT_LT((g.weights - expected).cwiseAbs().maxCoeff(), 1e-8);
  const Vector zt = gaussian(m, 1, rng);
  EXPECT_LT((g.predict(h * basis * zt) - basis * zt).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SuperRes, ConstantFieldsAreReproduced) {
  const int n = 8;
  Matrix fields(n * n, 12), tokens(4, 12);
  for (int t = 0; t < 12; ++t) {
    fields.col(t).setConstant(0.5 * t - 2.0);
    tokens.col(t).setConstant(0.5 * t - 2.0);
  }
  const LinearMap g = fit_superres(HistorySource({tokens}, 3, {fields}));
  for (int t = 2; t < 12; ++t) {
    Vector x(12);
    for (int j = 0; j < 3; ++j) x.segment(4 * j, 4) = tokens.col(t - 2 + j);
    EXPECT_LT((g.predict(x) - fields.col(t)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Sweep, ExactLinearSequencesAndParameterChecks) {
  // Token sequences from a fixed linear recursion: k = 1 is already exact.
  Rng rng(16);
  Matrix a = 0.3 * gaussian(3, 3, rng);
  std::vector<Matrix> train, test;
  for (int s = 0; s < 6; ++s) {
    Matrix seq(3, 30);
    seq.col(0) = gaussian(3, 1, rng);
    for (int t = 1; t < 30; ++t) seq.col(t) = a * seq.col(t - 1);
    (s < 4 ? train : test).push_back(seq);
  }
  SweepOptions opt;
  opt.trials = 5;
  opt.lstsq.bias = false;
  const auto pts = history_sweep(train, test, {1, 2, 3}, opt);
  ASSERT_EQ(pts.size(), 3u);
  for (const auto& p : pts) {
    EXPECT_EQ(p.trial_l1.size(), 5u);
    EXPECT_LT(p.mean_l1, 1e-10);
  }
  EXPECT_THROW(history_sweep(train, test, {0, 1}, opt), ParameterError);
  EXPECT_THROW(history_sweep(train, test, {}, opt), ParameterError);
}

TEST(Sweep, ErrorsAreReportedInRawUnits) {
  Rng rng(17);
  std::vector<Matrix> train{gaussian(2, 40, rng)}, test{gaussian(2, 40, rng)};
  SweepOptions opt;
  opt.trials = 3;
  const auto base = history_sweep(train, test, {2}, opt);
  opt.normalization = Normalization::from_range(-10.0, 10.0);  // raw = normalized * 10
  const auto raw = history_sweep(train, test, {2}, opt);
  EXPECT_NEAR(raw[0].mean_l1, 10.0 * base[0].mean_l1, 1e-12);
}

TEST(LinearMapIo, RoundTripAndCorruption) {
  const auto dir = std::filesystem::temp_directory_path() / "tokdyn_test_learners";
  std::filesystem::create_directories(dir);
  Matrix seq = Matrix::Random(4, 30);
  LinearMap map = fit_least_squares(HistorySource({seq}, 2));
  map.normalization = Normalization::from_range(-3.0, 7.0);
  map.provenance = {{"seed", 42}};
  write_linear_map(map, dir / "g.bin");
  const LinearMap back = read_linear_map(dir / "g.bin");
  EXPECT_TRUE((back.weights.array() == map.weights.array()).all());
  EXPECT_TRUE((back.bias->array() == map.bias->array()).all());
  EXPECT_EQ(back.history, 2);
  EXPECT_EQ(back.token_dim, 4);
  EXPECT_EQ(back.normalization, map.normalization);
  EXPECT_EQ(back.provenance, map.provenance);

  std::string bytes;
  {
    std::ifstream in(dir / "g.bin", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  std::ofstream(dir / "magic.bin", std::ios::binary) << "XXXXXXXX" << bytes.substr(8);
  EXPECT_THROW(read_linear_map(dir / "short.bin"), IoError);
  EXPECT_THROW(read_linear_map(dir / "magic.bin"), IoError);
  std::filesystem::remove_all(dir);
}
