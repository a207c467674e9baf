#pragma once

// Linear hypothesis class for the latent update g and the reconstruction map
// G: exact fits by streaming Householder QR, and Adam mini-batch descent.

#include <Eigen/QR>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tokdyn/lattice_ops.hpp"
#include "tokdyn/log.hpp"
#include "tokdyn/parallel.hpp"
#include "tokdyn/rng.hpp"
#include "tokdyn/tokenizer.hpp"
#include "tokdyn/types.hpp"

namespace tokdyn {

/// Affine map of raw values onto [-1, 1]. A constant range is flagged and
/// handled as a pure shift to zero.
struct Normalization {
  double min = -1.0;
  double max = 1.0;
  bool constant = false;

  static Normalization identity() { return {}; }
  static Normalization from_range(double lo, double hi) {
    Normalization n;
    n.min = lo;
    n.max = hi;
    n.constant = !(hi > lo);
    return n;
  }
  double scale() const { return constant ? 1.0 : 2.0 / (max - min); }
  double apply(double x) const { return constant ? x - min : (x - min) * scale() - 1.0; }
  double invert(double y) const { return constant ? y + min : (y + 1.0) / scale() + min; }
  Matrix apply(const Matrix& x) const { return x.unaryExpr([this](double v) { return apply(v); }); }
  Matrix invert(const Matrix& y) const { return y.unaryExpr([this](double v) { return invert(v); }); }
  bool operator==(const Normalization&) const = default;
};

struct LinearMap {
  Matrix weights;               ///< out_dim x in_dim
  std::optional<Vector> bias;   ///< out_dim
  int history = 1;              ///< k: token frames in the input
  int token_dim = 0;            ///< m: entries per token frame
  std::string role = "g";       ///< "g" predicts tokens, "G" reconstructs fields
  bool rank_deficient = false;
  int rank = 0;
  Normalization normalization;  ///< scaling of the data the map was fitted on
  nlohmann::json provenance = nlohmann::json::object();

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }

  Vector predict(const Eigen::Ref<const Vector>& input) const {
    require(input.size() == in_dim(), "input has " + std::to_string(input.size()) + " entries, map expects " +
                                          std::to_string(in_dim()));
    Vector y = weights * input;
    if (bias) y += *bias;
    return y;
  }

  /// Column-wise prediction for a batch of inputs.
  Matrix predict_batch(const Matrix& inputs) const {
    Matrix y = weights * inputs;
    if (bias) y.colwise() += *bias;
    return y;
  }

  void validate() const {
    require(weights.allFinite(), "linear map has non-finite weights");
    require(!bias || (bias->size() == out_dim() && bias->allFinite()), "linear map bias is inconsistent");
    require(history >= 1 && token_dim >= 1, "linear map needs history >= 1 and token_dim >= 1");
    require(in_dim() == static_cast<Eigen::Index>(history) * token_dim,
            "linear map input width " + std::to_string(in_dim()) + " != history * token_dim");
  }
};

/// Row provider for the fitting routines: sample i is an input vector and a
/// target vector. `key` exposes entry r of the concatenated (input, target)
/// pair so samples can be ordered without materializing them.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual Eigen::Index size() const = 0;
  virtual Eigen::Index in_dim() const = 0;
  virtual Eigen::Index out_dim() const = 0;
  virtual void fill(Eigen::Index i, Eigen::Ref<Vector> input, Eigen::Ref<Vector> target) const = 0;
  virtual double key(Eigen::Index i, Eigen::Index r) const = 0;
};

/// In-memory design data, one column per sample.
struct SampleSet final : SampleSource {
  Matrix inputs;   ///< in_dim x S
  Matrix targets;  ///< out_dim x S

  SampleSet() = default;
  SampleSet(Matrix x, Matrix y) : inputs(std::move(x)), targets(std::move(y)) {
    require(inputs.cols() == targets.cols(), "inputs and targets disagree on the sample count");
  }
  Eigen::Index size() const override { return inputs.cols(); }
  Eigen::Index in_dim() const override { return inputs.rows(); }
  Eigen::Index out_dim() const override { return targets.rows(); }
  void fill(Eigen::Index i, Eigen::Ref<Vector> input, Eigen::Ref<Vector> target) const override {
    input = inputs.col(i);
    target = targets.col(i);
  }
  double key(Eigen::Index i, Eigen::Index r) const override {
    return r < inputs.rows() ? inputs(r, i) : targets(r - inputs.rows(), i);
  }
};

/// History windows over tokenized sequences, assembled on demand.
///
/// Role g: for each sequence and t = k-1 .. T-2 the input is token frames
/// t-k+1 .. t (oldest first) and the target is token frame t+1.
/// Role G: for t = k-1 .. T-1 the input ends at t and the target is the
/// full-resolution frame t from `fields`.
class HistorySource final : public SampleSource {
 public:
  HistorySource(std::vector<Matrix> tokens, int k, std::vector<Matrix> fields = {})
      : tokens_(std::move(tokens)), fields_(std::move(fields)), k_(k) {
    require(k >= 1, "history length k must be >= 1");
    require(!tokens_.empty(), "no token sequences supplied");
    const bool g_role = fields_.empty();
    require(g_role || fields_.size() == tokens_.size(), "one field sequence per token sequence is required");
    for (std::size_t s = 0; s < tokens_.size(); ++s) {
      const Eigen::Index len = tokens_[s].cols();
      require(tokens_[s].rows() == tokens_.front().rows(), "token sequences disagree on the token size");
      require(g_role ? len > k : len >= k, "sequence of length " + std::to_string(len) +
                                               " is too short for history length " + std::to_string(k));
      if (!g_role) require(fields_[s].cols() == len, "field and token sequences differ in length");
      const Eigen::Index count = g_role ? len - k : len - k + 1;
      for (Eigen::Index c = 0; c < count; ++c) index_.emplace_back(static_cast<int>(s), static_cast<Eigen::Index>(k - 1 + c));
    }
  }

  Eigen::Index size() const override { return static_cast<Eigen::Index>(index_.size()); }
  Eigen::Index in_dim() const override { return tokens_.front().rows() * k_; }
  Eigen::Index out_dim() const override {
    return fields_.empty() ? tokens_.front().rows() : fields_.front().rows();
  }
  int history() const { return k_; }
  Eigen::Index token_dim() const { return tokens_.front().rows(); }

  void fill(Eigen::Index i, Eigen::Ref<Vector> input, Eigen::Ref<Vector> target) const override {
    const auto [s, t] = index_[static_cast<std::size_t>(i)];
    const Matrix& tk = tokens_[static_cast<std::size_t>(s)];
    const Eigen::Index m = tk.rows();
    for (int j = 0; j < k_; ++j) input.segment(j * m, m) = tk.col(t - k_ + 1 + j);
    target = fields_.empty() ? Vector(tk.col(t + 1)) : Vector(fields_[static_cast<std::size_t>(s)].col(t));
  }

  double key(Eigen::Index i, Eigen::Index r) const override {
    const auto [s, t] = index_[static_cast<std::size_t>(i)];
    const Matrix& tk = tokens_[static_cast<std::size_t>(s)];
    const Eigen::Index m = tk.rows();
    if (r < m * k_) return tk(r % m, t - k_ + 1 + r / m);
    r -= m * k_;
    return fields_.empty() ? tk(r, t + 1) : fields_[static_cast<std::size_t>(s)](r, t);
  }

 private:
  std::vector<Matrix> tokens_;
  std::vector<Matrix> fields_;
  int k_;
  std::vector<std::pair<int, Eigen::Index>> index_;
};

/// Records the input layout of a fitted map: k token frames of m entries for
/// history sources, a single frame otherwise.
inline void annotate_shape(LinearMap& map, const SampleSource& src) {
  if (const auto* h = dynamic_cast<const HistorySource*>(&src)) {
    map.history = h->history();
    map.token_dim = static_cast<int>(h->token_dim());
  } else {
    map.history = 1;
    map.token_dim = static_cast<int>(src.in_dim());
  }
}

/// Materializes a source (small problems and tests).
inline SampleSet materialize(const SampleSource& src) {
  SampleSet s(Matrix(src.in_dim(), src.size()), Matrix(src.out_dim(), src.size()));
  for (Eigen::Index i = 0; i < src.size(); ++i) src.fill(i, s.inputs.col(i), s.targets.col(i));
  return s;
}

inline std::vector<Matrix> tokenize_all(const std::vector<Trajectory>& trajs, int patch) {
  std::vector<Matrix> tokens(trajs.size());
  parallel_for(trajs.size(), [&](std::size_t i) { tokens[i] = tokenize_trajectory(trajs[i], patch); });
  return tokens;
}

inline std::vector<Matrix> fields_all(const std::vector<Trajectory>& trajs) {
  std::vector<Matrix> out;
  for (const auto& tr : trajs)
    out.push_back(tr.components == 2 ? Matrix(tr.frames.topRows(tr.grid.size())) : tr.frames);
  return out;
}

/// g-samples (token history -> next token frame) from every trajectory.
inline HistorySource make_g_source(const std::vector<Trajectory>& trajs, int k, int patch) {
  return HistorySource(tokenize_all(trajs, patch), k);
}

/// G-samples (token history ending at t -> full field at t).
inline HistorySource make_G_source(const std::vector<Trajectory>& trajs, int k, int patch) {
  return HistorySource(tokenize_all(trajs, patch), k, fields_all(trajs));
}

inline SampleSet make_g_samples(const std::vector<Trajectory>& trajs, int k, int patch) {
  return materialize(make_g_source(trajs, k, patch));
}

inline SampleSet make_G_samples(const std::vector<Trajectory>& trajs, int k, int patch) {
  return materialize(make_G_source(trajs, k, patch));
}

inline SampleSet to_sample_set(const std::vector<HistorySample>& samples, bool field_targets) {
  require(!samples.empty(), "at least one sample is required");
  const auto& first = samples.front();
  const Eigen::Index out = field_targets ? first.field_target.value().size() : first.token_target.size();
  SampleSet s(Matrix(first.history.size(), static_cast<Eigen::Index>(samples.size())),
              Matrix(out, static_cast<Eigen::Index>(samples.size())));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    require(samples[i].history.size() == s.inputs.rows(), "inconsistent history sizes across samples");
    s.inputs.col(c) = samples[i].history;
    const Vector& target = field_targets ? samples[i].field_target.value() : samples[i].token_target;
    require(target.size() == out, "inconsistent target sizes across samples");
    s.targets.col(c) = target;
  }
  return s;
}

struct LeastSquaresOptions {
  double ridge = 0.0;
  bool bias = true;
  std::size_t memory_limit_bytes = std::size_t{512} << 20;  ///< bound on the streamed design block
  double rank_tol = 1e-12;                                  ///< relative pivot threshold of the final COD
};

namespace detail {

/// Sample order used by the factorization: lexicographic on (input, target).
/// Fixing it makes the fit independent of how samples were supplied.
inline std::vector<Eigen::Index> canonical_order(const SampleSource& s) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(s.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index width = s.in_dim() + s.out_dim();
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index r = 0; r < width; ++r) {
      const double x = s.key(a, r), y = s.key(b, r);
      if (x != y) return x < y;
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), less);
  return order;
}

}  // namespace detail

/// Minimizes sum_i ||W x_i + b - y_i||^2 + ridge ||W||^2 (the bias is not
/// penalized). Rows are streamed through a Householder QR in chunks bounded by
/// `memory_limit_bytes`; the final triangular factor is solved with a complete
/// orthogonal decomposition, which yields the minimum-norm solution and the
/// numerical rank when the design is rank deficient.
inline LinearMap fit_least_squares(const SampleSource& samples, const LeastSquaresOptions& options = {}) {
  require(samples.size() >= 1, "at least one sample is required");
  require(options.ridge >= 0.0 && std::isfinite(options.ridge), "ridge must be finite and >= 0");
  const Eigen::Index d = samples.in_dim();
  const Eigen::Index o = samples.out_dim();
  const Eigen::Index p = d + (options.bias ? 1 : 0);

  const auto order = detail::canonical_order(samples);
  const std::size_t row_bytes = static_cast<std::size_t>(p + o) * sizeof(double);
  const Eigen::Index chunk = std::max<Eigen::Index>(
      std::max<Eigen::Index>(p, 64), static_cast<Eigen::Index>(options.memory_limit_bytes / row_bytes) - p);

  // Running triangular factor [R | Q^T Y] with at most p rows.
  Matrix r_top(0, p + o);
  auto absorb = [&](Matrix block) {
    Matrix stacked(r_top.rows() + block.rows(), p + o);
    stacked << r_top, block;
    const Eigen::HouseholderQR<Matrix> qr(stacked.leftCols(p));
    // Apply Q^T to the target columns, then keep the leading rows.
    stacked.rightCols(o).applyOnTheLeft(qr.householderQ().adjoint());
    const Eigen::Index keep = std::min<Eigen::Index>(p, stacked.rows());
    Matrix next(keep, p + o);
    next.leftCols(p) = qr.matrixQR().topRows(keep).template triangularView<Eigen::Upper>();
    next.rightCols(o) = stacked.rightCols(o).topRows(keep);
    r_top.swap(next);
  };

  const Eigen::Index total = samples.size();
  for (Eigen::Index start = 0; start < total; start += chunk) {
    const Eigen::Index rows = std::min(chunk, total - start);
    Matrix block(rows, p + o);
    Vector x(d), y(o);
    for (Eigen::Index r = 0; r < rows; ++r) {
      samples.fill(order[static_cast<std::size_t>(start + r)], x, y);
      if (!x.allFinite() || !y.allFinite()) throw ParameterError("samples contain non-finite values");
      block.row(r).head(d) = x.transpose();
      if (options.bias) block(r, d) = 1.0;
      block.row(r).tail(o) = y.transpose();
    }
    absorb(std::move(block));
  }
  if (options.ridge > 0.0) {
    Matrix block = Matrix::Zero(d, p + o);
    block.leftCols(d).diagonal().setConstant(std::sqrt(options.ridge));
    absorb(std::move(block));
  }

  Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
  cod.setThreshold(options.rank_tol);
  cod.compute(r_top.leftCols(p));
  const Matrix coef = cod.solve(r_top.rightCols(o));  // p x o

  LinearMap map;
  map.weights = coef.topRows(d).transpose();
  if (options.bias) map.bias = coef.row(d).transpose();
  annotate_shape(map, samples);
  map.rank = static_cast<int>(cod.rank());
  map.rank_deficient = cod.rank() < p;
  if (map.rank_deficient)
    log_info("least-squares design is rank deficient (rank " + std::to_string(cod.rank()) + " of " +
             std::to_string(p) + "); returning the minimum-norm solution");
  return map;
}

/// The objective minimized by fit_least_squares, for verification.
inline double sum_squared_residue(const LinearMap& map, const SampleSource& s) {
  constexpr Eigen::Index kBatch = 4096;
  double acc = 0.0;
  Vector x(s.in_dim()), y(s.out_dim());
  for (Eigen::Index start = 0; start < s.size(); start += kBatch) {
    const Eigen::Index rows = std::min(kBatch, s.size() - start);
    Matrix xb(s.in_dim(), rows), yb(s.out_dim(), rows);
    for (Eigen::Index j = 0; j < rows; ++j) s.fill(start + j, xb.col(j), yb.col(j));
    acc += (map.predict_batch(xb) - yb).squaredNorm();
  }
  return acc;
}

inline double least_squares_objective(const LinearMap& map, const SampleSource& s, double ridge) {
  return sum_squared_residue(map, s) + ridge * map.weights.squaredNorm();
}

// ---------------------------------------------------------------------------
// Adam

struct TrainConfig {
  double learning_rate = 1e-5;
  double final_learning_rate = -1.0;  ///< cosine decay target; < 0 keeps the rate constant
  long steps = 1000;                  ///< optimizer updates; steps = 0 returns the initial map
  int batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double ridge = 0.0;
  bool bias = true;
  std::uint64_t seed = 0;

  void validate() const {
    require(learning_rate > 0.0, "learning_rate must be > 0");
    require(steps >= 0, "steps must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam moments must lie in [0, 1)");
    require(epsilon > 0.0, "epsilon must be > 0");
    require(ridge >= 0.0, "ridge must be >= 0");
  }

  double rate_at(long step) const {
    if (final_learning_rate < 0.0 || steps <= 1) return learning_rate;
    const double t = static_cast<double>(step) / static_cast<double>(steps - 1);
    return final_learning_rate + 0.5 * (learning_rate - final_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
  }
};

/// Mean-squared objective over a batch, matching the least-squares objective
/// divided by the full sample count:
///     L = (1/B) sum_batch ||W x + b - y||^2 + (ridge / S) ||W||^2.
struct LossGradient {
  double loss = 0.0;
  Matrix grad_weights;
  Vector grad_bias;
};

inline LossGradient mse_loss_gradient(const Matrix& weights, const std::optional<Vector>& bias, const Matrix& inputs,
                                      const Matrix& targets, double ridge_per_sample) {
  const double b = static_cast<double>(inputs.cols());
  Matrix r = weights * inputs - targets;
  if (bias) r.colwise() += *bias;
  LossGradient g;
  g.loss = r.squaredNorm() / b + ridge_per_sample * weights.squaredNorm();
  g.grad_weights = (2.0 / b) * (r * inputs.transpose()) + 2.0 * ridge_per_sample * weights;
  if (bias) g.grad_bias = (2.0 / b) * r.rowwise().sum();
  return g;
}

struct LossPoint {
  long step = 0;
  double train_l2 = 0.0;  ///< mean squared residue over the training samples
  double test_l2 = std::numeric_limits<double>::quiet_NaN();
};

struct SgdResult {
  LinearMap map;
  std::vector<LossPoint> curve;  ///< one point per epoch
};

inline double mean_squared_residue(const LinearMap& map, const SampleSource& s) {
  if (s.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum_squared_residue(map, s) / static_cast<double>(s.size() * s.out_dim());
}

/// Adam on the mean-squared objective from a zero initial map. Each epoch
/// visits the samples in a fresh seeded permutation; the curve records
/// train and held-out residues after every epoch.
inline SgdResult fit_sgd(const SampleSource& train, const TrainConfig& config, const SampleSource* eval = nullptr) {
  config.validate();
  require(train.size() >= 1, "at least one sample is required");
  const Eigen::Index d = train.in_dim();
  const Eigen::Index o = train.out_dim();
  SgdResult res;
  LinearMap& map = res.map;
  map.weights = Matrix::Zero(o, d);
  if (config.bias) map.bias = Vector::Zero(o);
  annotate_shape(map, train);

  Matrix m_w = Matrix::Zero(o, d), v_w = Matrix::Zero(o, d);
  Vector m_b = Vector::Zero(o), v_b = Vector::Zero(o);
  const Eigen::Index total = train.size();
  const Eigen::Index batch = std::min<Eigen::Index>(config.batch_size, total);
  const double ridge_per_sample = config.ridge / static_cast<double>(total);
  Rng rng(derive_seed(config.seed, 0x5D6));
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(total));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Eigen::Index cursor = total;  // forces a shuffle on the first step
  Matrix xb(d, batch), yb(o, batch);
  double p1 = 1.0, p2 = 1.0;

  auto record = [&](long step) {
    LossPoint pt;
    pt.step = step;
    pt.train_l2 = mean_squared_residue(map, train);
    if (eval) pt.test_l2 = mean_squared_residue(map, *eval);
    res.curve.push_back(pt);
  };

  for (long step = 0; step < config.steps; ++step) {
    if (cursor + batch > total) {
      for (Eigen::Index i = total - 1; i > 0; --i)
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
      cursor = 0;
      if (step > 0) record(step);
    }
    for (Eigen::Index j = 0; j < batch; ++j) train.fill(perm[static_cast<std::size_t>(cursor + j)], xb.col(j), yb.col(j));
    cursor += batch;
    const LossGradient g = mse_loss_gradient(map.weights, map.bias, xb, yb, ridge_per_sample);
    if (!std::isfinite(g.loss)) throw DivergenceError(static_cast<std::size_t>(step), "non-finite training loss");

    p1 *= config.beta1;
    p2 *= config.beta2;
    const double lr = config.rate_at(step);
    const double c1 = 1.0 / (1.0 - p1), c2 = 1.0 / (1.0 - p2);
    m_w = config.beta1 * m_w + (1.0 - config.beta1) * g.grad_weights;
    v_w = config.beta2 * v_w + (1.0 - config.beta2) * g.grad_weights.cwiseAbs2();
    map.weights.array() -= lr * (m_w.array() * c1) / ((v_w.array() * c2).sqrt() + config.epsilon);
    if (map.bias) {
      m_b = config.beta1 * m_b + (1.0 - config.beta1) * g.grad_bias;
      v_b = config.beta2 * v_b + (1.0 - config.beta2) * g.grad_bias.cwiseAbs2();
      map.bias->array() -= lr * (m_b.array() * c1) / ((v_b.array() * c2).sqrt() + config.epsilon);
    }
  }
  record(config.steps);
  return res;
}

/// Least-squares fit of the reconstruction map G.
inline LinearMap fit_superres(const SampleSource& samples, const LeastSquaresOptions& options = {}) {
  LinearMap map = fit_least_squares(samples, options);
  map.role = "G";
  return map;
}

// ---------------------------------------------------------------------------
// History sweep

enum class Learner { lstsq, sgd };

inline Learner learner_from_string(const std::string& s) {
  if (s == "lstsq") return Learner::lstsq;
  if (s == "sgd") return Learner::sgd;
  throw ParameterError("unknown learner '" + s + "' (expected lstsq or sgd)");
}

struct SweepPoint {
  int k = 0;
  double mean_l1 = 0.0, std_l1 = 0.0;
  double mean_linf = 0.0, std_linf = 0.0;
  std::vector<double> trial_l1, trial_linf;
};

struct SweepOptions {
  int patch = 4;
  int trials = 20;
  Learner learner = Learner::lstsq;
  LeastSquaresOptions lstsq{};
  TrainConfig sgd{};
  std::uint64_t seed = 0;
  /// Scaling of the training data; errors are reported in raw units.
  Normalization normalization = Normalization::identity();
};

namespace detail {
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}
}  // namespace detail

/// Fits g for every k on the (already normalized) training token sequences
/// and scores it on held-out ones. Each trial draws one held-out initial
/// condition and averages the one-step token prediction errors over all of
/// its history windows; L1 is the mean and Linf the max absolute error, both
/// in raw units.
inline std::vector<SweepPoint> history_sweep(const std::vector<Matrix>& train_tokens,
                                             const std::vector<Matrix>& test_tokens, const std::vector<int>& k_values,
                                             const SweepOptions& options) {
  require(!k_values.empty(), "k_values must not be empty");
  require(options.trials >= 1, "trials must be >= 1");
  require(!train_tokens.empty() && !test_tokens.empty(), "sweep needs training and held-out sequences");
  for (int k : k_values) require(k >= 1, "history length must be >= 1, got " + std::to_string(k));

  Rng pick(derive_seed(options.seed, 0x5EE9));
  std::vector<std::size_t> chosen(static_cast<std::size_t>(options.trials));
  for (auto& c : chosen) c = static_cast<std::size_t>(pick.below(test_tokens.size()));

  std::vector<SweepPoint> out;
  const double raw_scale = 1.0 / options.normalization.scale();
  for (int k : k_values) {
    const HistorySource s(train_tokens, k);
    LinearMap g = options.learner == Learner::lstsq ? fit_least_squares(s, options.lstsq)
                                                    : fit_sgd(s, options.sgd).map;
    SweepPoint pt;
    pt.k = k;
    for (std::size_t tr = 0; tr < chosen.size(); ++tr) {
      const SampleSet e = materialize(HistorySource({test_tokens[chosen[tr]]}, k));
      const Matrix err = ((g.predict_batch(e.inputs) - e.targets) * raw_scale).cwiseAbs();
      pt.trial_l1.push_back(err.mean());
      pt.trial_linf.push_back(err.maxCoeff());
    }
    std::tie(pt.mean_l1, pt.std_l1) = detail::mean_std(pt.trial_l1);
    std::tie(pt.mean_linf, pt.std_linf) = detail::mean_std(pt.trial_linf);
    log_info("sweep k=" + std::to_string(k) + " mean L1 " + std::to_string(pt.mean_l1));
    out.push_back(std::move(pt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: magic, u64 header length, JSON header, f64 weights
// (row-major) then the bias.

inline constexpr char kLinearMapMagic[8] = {'T', 'K', 'D', 'L', 'M', 'A', 'P', '1'};

inline nlohmann::json normalization_to_json(const Normalization& n) {
  return {{"min", n.min}, {"max", n.max}, {"constant", n.constant}};
}
inline Normalization normalization_from_json(const nlohmann::json& j) {
  Normalization n;
  n.min = j.at("min").get<double>();
  n.max = j.at("max").get<double>();
  n.constant = j.at("constant").get<bool>();
  return n;
}

inline void write_linear_map(const LinearMap& map, const std::filesystem::path& path) {
  map.validate();
  nlohmann::json header = {{"format_version", 1},
                           {"role", map.role},
                           {"rows", map.out_dim()},
                           {"cols", map.in_dim()},
                           {"history", map.history},
                           {"token_dim", map.token_dim},
                           {"bias", map.bias.has_value()},
                           {"rank", map.rank},
                           {"rank_deficient", map.rank_deficient},
                           {"normalization", normalization_to_json(map.normalization)},
                           {"provenance", map.provenance}};
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(tmp.string(), "cannot open for writing");
    os.write(kLinearMapMagic, sizeof(kLinearMapMagic));
    detail::write_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (Eigen::Index r = 0; r < map.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < map.weights.cols(); ++c) detail::write_le<double>(os, map.weights(r, c));
    if (map.bias)
      for (Eigen::Index r = 0; r < map.bias->size(); ++r) detail::write_le<double>(os, (*map.bias)(r));
    if (!os) throw IoError(tmp.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string(), "rename failed: " + ec.message());
}

inline LinearMap read_linear_map(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "cannot open for reading");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kLinearMapMagic)) throw IoError(path.string(), "not a linear map file");
  const auto len = detail::read_le<std::uint64_t>(is, path);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError(path.string(), "truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw IoError(path.string(), std::string("malformed header: ") + e.what());
  }
  if (h.value("format_version", 0) != 1) throw IoError(path.string(), "unsupported linear map format version");
  LinearMap map;
  map.role = h.at("role").get<std::string>();
  map.history = h.at("history").get<int>();
  map.token_dim = h.at("token_dim").get<int>();
  map.rank = h.at("rank").get<int>();
  map.rank_deficient = h.at("rank_deficient").get<bool>();
  map.normalization = normalization_from_json(h.at("normalization"));
  map.provenance = h.at("provenance");
  const auto rows = h.at("rows").get<Eigen::Index>();
  const auto cols = h.at("cols").get<Eigen::Index>();
  map.weights.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) map.weights(r, c) = detail::read_le<double>(is, path);
  if (h.at("bias").get<bool>()) {
    Vector b(rows);
    for (Eigen::Index r = 0; r < rows; ++r) b(r) = detail::read_le<double>(is, path);
    map.bias = b;
  }
  map.validate();
  return map;
}

}  // namespace tokdyn
