// Command-line driver. Every verb resolves its settings as
//   built-in defaults <- --config file <- command-line flags
// into one JSON object, runs from that object alone, and stores it in a run
// manifest so `tokdyn replay` can re-execute the run bit for bit.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tokdyn/tokdyn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tokdyn;

namespace {

constexpr const char* kToolVersion = "1.0.0";

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string(), "cannot open config");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

template <typename T>
T get(const json& cfg, const char* key) {
  if (!cfg.contains(key) || cfg.at(key).is_null()) throw ParameterError(std::string("missing setting '") + key + "'");
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParameterError(std::string("setting '") + key + "' has the wrong type: " + e.what());
  }
}

void write_run_manifest(const fs::path& path, const std::string& verb, const json& cfg, const json& outputs) {
  const json run = {{"tool", "tokdyn"},
                    {"version", kToolVersion},
                    {"verb", verb},
                    {"config", cfg},
                    {"outputs", outputs},
                    {"threads_env", std::getenv("TOKDYN_THREADS") ? std::getenv("TOKDYN_THREADS") : ""}};
  write_text_atomic(path, run.dump(2) + "\n");
}

// Resolved settings as recorded inside written files. The output path is
// left out so a replay into another directory produces the same bytes.
json provenance_config(const json& cfg) {
  json j = cfg;
  j.erase("out");
  return j;
}

Dataset load_normalized(const fs::path& dir) {
  Dataset d = read_dataset(dir);
  normalize_dataset(d);
  return d;
}

int patch_of(const json& cfg, const Dataset& d) {
  const int p = cfg.value("patch", 0);
  return p > 0 ? p : d.manifest.patch;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ParameterError("cannot parse '" + item + "' as an integer");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// generate

json generate_defaults() { return json(GenerateConfig{}); }

json run_generate(const json& cfg) {
  GenerateConfig gc;
  json recipe = cfg;
  recipe.erase("out");
  recipe.erase("created");
  update_from_json(gc, recipe);
  const fs::path out = get<std::string>(cfg, "out");
  Generator gen(gc);
  std::vector<Trajectory> trajs = gen.trajectories(0, gc.inits);
  bool warned = false;
  for (const auto& t : trajs) warned = warned || t.stability_warning;
  DatasetManifest m = gen.manifest();
  m.normalization = compute_normalization({trajs.begin(), trajs.begin() + m.train_count});
  m.created = get<std::string>(cfg, "created");
  write_dataset(out, trajs, m);
  write_run_manifest(out / "run.json", "generate", cfg, {{"dataset", out.string()}, {"stability_warning", warned}});
  std::cout << "wrote " << trajs.size() << " trajectories of " << trajs.front().length() << " frames to " << out
            << "\n";
  return {{"dataset", out.string()}};
}

// ---------------------------------------------------------------------------
// tokenize

json run_tokenize(const json& cfg) {
  const fs::path data = get<std::string>(cfg, "data");
  const fs::path out = get<std::string>(cfg, "out");
  Dataset d = read_dataset(data);
  const int patch = patch_of(cfg, d);
  std::vector<Trajectory> tokens(d.trajectories.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Trajectory t = d.trajectories[i];
    t.frames = tokenize_trajectory(d.trajectories[i], patch);
    t.components = 1;
    t.grid.n = d.manifest.grid.n / patch;
    t.grid.dx = d.manifest.grid.dx * patch;
    tokens[i] = std::move(t);
  }
  DatasetManifest m = d.manifest;
  m.grid = tokens.front().grid;
  m.components = 1;
  m.patch = 1;
  m.created = get<std::string>(cfg, "created");
  m.generator["tokenized_from"] = data.string();
  m.generator["token_patch"] = patch;
  m.normalization = compute_normalization({tokens.begin(), tokens.begin() + m.train_count});
  write_dataset(out, tokens, m);
  write_run_manifest(out / "run.json", "tokenize", cfg, {{"dataset", out.string()}});
  return {{"dataset", out.string()}};
}

// ---------------------------------------------------------------------------
// fit

json fit_defaults() {
  return {{"learner", "lstsq"}, {"role", "g"},   {"k", 16},          {"patch", 0},         {"ridge", 0.0},
          {"bias", true},       {"memory_mb", 512}, {"lr", 1e-5},     {"final_lr", -1.0},   {"steps", 1000},
          {"batch", 64},        {"seed", 0}};
}

json run_fit(const json& cfg) {
  const fs::path data = get<std::string>(cfg, "data");
  const fs::path out = get<std::string>(cfg, "out");
  const Dataset d = load_normalized(data);
  const int patch = patch_of(cfg, d);
  const int k = get<int>(cfg, "k");
  const std::string role = get<std::string>(cfg, "role");
  require(role == "g" || role == "G", "role must be g or G");
  const Learner learner = learner_from_string(get<std::string>(cfg, "learner"));
  const auto train = d.train();
  const auto test = d.test();
  auto make_source = [&](const std::vector<Trajectory>& ts) {
    return role == "g" ? make_g_source(ts, k, patch) : make_G_source(ts, k, patch);
  };
  const HistorySource train_src = make_source(train);
  std::optional<HistorySource> test_src;
  if (!test.empty()) test_src.emplace(make_source(test));

  LinearMap map;
  std::vector<LossPoint> curve;
  if (learner == Learner::lstsq) {
    LeastSquaresOptions o;
    o.ridge = get<double>(cfg, "ridge");
    o.bias = get<bool>(cfg, "bias");
    o.memory_limit_bytes = static_cast<std::size_t>(get<double>(cfg, "memory_mb") * (1 << 20));
    map = fit_least_squares(train_src, o);
  } else {
    TrainConfig tc;
    tc.learning_rate = get<double>(cfg, "lr");
    tc.final_learning_rate = get<double>(cfg, "final_lr");
    tc.steps = get<long>(cfg, "steps");
    tc.batch_size = get<int>(cfg, "batch");
    tc.ridge = get<double>(cfg, "ridge");
    tc.bias = get<bool>(cfg, "bias");
    tc.seed = get<std::uint64_t>(cfg, "seed");
    SgdResult r = fit_sgd(train_src, tc, test_src ? &*test_src : nullptr);
    map = std::move(r.map);
    curve = std::move(r.curve);
  }
  map.role = role;
  map.normalization = d.manifest.normalization;
  map.provenance = {{"dataset", data.string()}, {"config", provenance_config(cfg)}};
  write_linear_map(map, out);

  json outputs = {{"model", out.string()}, {"rank", map.rank}, {"rank_deficient", map.rank_deficient}};
  const double train_mse = mean_squared_residue(map, train_src);
  outputs["train_mse_normalized"] = train_mse;
  if (test_src) outputs["test_mse_normalized"] = mean_squared_residue(map, *test_src);
  if (!curve.empty()) {
    std::string csv = "# source: " + data.string() + "; mean squared residue in normalized units\nstep,train_l2,test_l2\n";
    for (const auto& p : curve)
      csv += std::to_string(p.step) + "," + detail::fmt(p.train_l2) + "," + detail::fmt(p.test_l2) + "\n";
    write_text_atomic(out.string() + ".loss.csv", csv);
    outputs["loss_curve"] = out.string() + ".loss.csv";
  }
  write_run_manifest(out.string() + ".run.json", "fit", cfg, outputs);
  std::cout << outputs.dump(2) << "\n";
  return outputs;
}

// ---------------------------------------------------------------------------
// sweep

json sweep_defaults() {
  return {{"k_list", "1,2,4,8,12,16,20"}, {"trials", 20}, {"learner", "lstsq"}, {"patch", 0},
          {"ridge", 0.0},                  {"seed", 0},    {"lr", 1e-5},         {"steps", 1000},
          {"batch", 64}};
}

json run_sweep(const json& cfg) {
  const fs::path data = get<std::string>(cfg, "data");
  const fs::path out = get<std::string>(cfg, "out");
  const Dataset d = load_normalized(data);
  SweepOptions o;
  o.patch = patch_of(cfg, d);
  o.trials = get<int>(cfg, "trials");
  o.learner = learner_from_string(get<std::string>(cfg, "learner"));
  o.lstsq.ridge = get<double>(cfg, "ridge");
  o.sgd.learning_rate = get<double>(cfg, "lr");
  o.sgd.steps = get<long>(cfg, "steps");
  o.sgd.batch_size = get<int>(cfg, "batch");
  o.seed = get<std::uint64_t>(cfg, "seed");
  o.sgd.seed = o.seed;
  o.normalization = d.manifest.normalization;
  const auto pts = history_sweep(tokenize_all(d.train(), o.patch), tokenize_all(d.test(), o.patch),
                                 parse_int_list(get<std::string>(cfg, "k_list")), o);
  std::string csv = "# source: " + data.string() + "; one-step token errors in raw units over " +
                    std::to_string(o.trials) + " held-out trials\nk,mean_l1,std_l1,mean_linf,std_linf\n";
  for (const auto& p : pts)
    csv += std::to_string(p.k) + "," + detail::fmt(p.mean_l1) + "," + detail::fmt(p.std_l1) + "," +
           detail::fmt(p.mean_linf) + "," + detail::fmt(p.std_linf) + "\n";
  write_text_atomic(out, csv);
  write_run_manifest(out.string() + ".run.json", "sweep", cfg, {{"csv", out.string()}});
  std::cout << csv;
  return {{"csv", out.string()}};
}

// ---------------------------------------------------------------------------
// rollout

json rollout_defaults() { return {{"seed_frames", 16}, {"steps", 100}, {"init", 0}, {"pipeline", false}, {"seed", 0}}; }

json run_rollout(const json& cfg) {
  const fs::path data = get<std::string>(cfg, "data");
  const fs::path out = get<std::string>(cfg, "out");
  const LinearMap g = read_linear_map(get<std::string>(cfg, "model"));
  const Dataset d = load_normalized(data);
  const auto test = d.test().empty() ? d.train() : d.test();
  const int init = get<int>(cfg, "init");
  require(init >= 0 && init < static_cast<int>(test.size()), "init index out of range for the held-out split");
  const Trajectory& truth = test[static_cast<std::size_t>(init)];
  const int k = get<int>(cfg, "seed_frames");
  const int steps = get<int>(cfg, "steps");
  require(k == g.history, "seed_frames must equal the model history (" + std::to_string(g.history) + ")");
  require(truth.length() >= k + steps, "held-out trajectory is shorter than seed_frames + steps");
  require(g.normalization == d.manifest.normalization, "model was fitted with different normalization constants");
  const int patch = static_cast<int>(std::lround(std::sqrt(static_cast<double>(field_of_frame(truth, 0).size()) /
                                                           static_cast<double>(g.token_dim))));
  const Matrix tokens = tokenize_trajectory(truth, patch);
  const bool pipeline = get<bool>(cfg, "pipeline");
  RolloutResult r;
  Matrix truth_out, pred_out;
  if (pipeline) {
    const LinearMap big_g = read_linear_map(get<std::string>(cfg, "recon"));
    r = full_pipeline_rollout(g, big_g, tokens.leftCols(k), steps);
    pred_out = *r.fields;
    truth_out.resize(pred_out.rows(), steps);
    for (int s = 0; s < steps; ++s) truth_out.col(s) = field_of_frame(truth, k + s);
  } else {
    r = autoregressive_rollout(g, tokens.leftCols(k), steps);
    pred_out = r.tokens.rightCols(steps);
    truth_out = tokens.middleCols(k, steps);
  }
  const Normalization& nrm = d.manifest.normalization;
  pred_out = nrm.invert(pred_out);
  truth_out = nrm.invert(truth_out);

  DatasetManifest m = d.manifest;
  m.components = 1;
  m.init_seeds = {truth.seed};
  m.train_count = 1;
  m.burn_in = 0;
  m.created = get<std::string>(cfg, "created");
  if (!pipeline) m.grid = GridSpec{d.manifest.grid.n / patch, d.manifest.grid.dx * patch};
  m.generator = {{"rollout", provenance_config(cfg)}};
  Trajectory tp = truth, tt = truth;
  tp.frames = pred_out;
  tt.frames = truth_out;
  tp.components = tt.components = 1;
  m.normalization = Normalization::identity();
  write_dataset(out / "generated", {tp}, m);
  write_dataset(out / "truth", {tt}, m);
  std::vector<std::vector<double>> cols;
  for (Norm n : {Norm::l1, Norm::l2, Norm::linf}) cols.push_back(residue_norms(pred_out, truth_out, n));
  write_text_atomic(out / "residues.csv",
                    residues_csv(cols, {Norm::l1, Norm::l2, Norm::linf}, "rollout of " + data.string()));
  const json outputs = {{"generated", (out / "generated").string()},
                        {"truth", (out / "truth").string()},
                        {"residues", (out / "residues.csv").string()},
                        {"first_l2", cols[1].front()},
                        {"last_l2", cols[1].back()}};
  write_run_manifest(out / "run.json", "rollout", cfg, outputs);
  std::cout << outputs.dump(2) << "\n";
  return outputs;
}

// ---------------------------------------------------------------------------
// metrics

json metrics_defaults() { return {{"mode", "residues"}, {"pixel", "0,0"}, {"dt_max", 100}, {"nc", 16}, {"seed", 0}}; }

json run_metrics(const json& cfg) {
  const std::string mode = get<std::string>(cfg, "mode");
  const fs::path out = get<std::string>(cfg, "out");
  std::string csv;
  json outputs = {{"csv", out.string()}};
  if (mode == "residues") {
    const Dataset pred = read_dataset(get<std::string>(cfg, "pred"));
    const Dataset truth = read_dataset(get<std::string>(cfg, "truth"));
    require(pred.trajectories.size() == truth.trajectories.size(), "pred and truth hold different trajectory counts");
    std::vector<std::vector<double>> cols(3);
    for (std::size_t i = 0; i < pred.trajectories.size(); ++i) {
      std::size_t c = 0;
      for (Norm n : {Norm::l1, Norm::l2, Norm::linf}) {
        const auto r = residue_norms(pred.trajectories[i], truth.trajectories[i], n);
        cols[c].insert(cols[c].end(), r.begin(), r.end());
        ++c;
      }
    }
    csv = residues_csv(cols, {Norm::l1, Norm::l2, Norm::linf}, get<std::string>(cfg, "pred"));
  } else if (mode == "correlation") {
    const Dataset d = read_dataset(get<std::string>(cfg, "data"));
    const auto px = parse_int_list(get<std::string>(cfg, "pixel"));
    require(px.size() == 2, "pixel must be given as i,j");
    const int n = d.manifest.grid.n;
    require(px[0] >= 0 && px[0] < n && px[1] >= 0 && px[1] < n, "pixel out of range");
    const int pixel = d.manifest.one_dimensional ? px[1] : n * px[0] + px[1];
    std::vector<Matrix> videos;
    for (const auto& t : d.trajectories) videos.push_back(t.components == 2 ? Matrix(t.frames.topRows(t.grid.size())) : t.frames);
    const int dt_max = get<int>(cfg, "dt_max");
    const CorrelationSeries c = videos.size() >= 2 ? correlation_ensemble_stats(videos, pixel, dt_max)
                                                   : temporal_correlation(videos.front(), pixel, dt_max);
    csv = correlation_csv(c, get<std::string>(cfg, "data"));
  } else if (mode == "subvideo-distance") {
    const Dataset clip = read_dataset(get<std::string>(cfg, "clip"));
    const Dataset ref = read_dataset(get<std::string>(cfg, "reference"));
    const int nc = get<int>(cfg, "nc");
    csv = "# clip: " + get<std::string>(cfg, "clip") + "; reference: " + get<std::string>(cfg, "reference") +
          "; Euclidean distance over flattened frame-major row-major clips\nclip,distance\n";
    for (std::size_t i = 0; i < clip.trajectories.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& r : ref.trajectories)
        if (r.length() >= nc) best = std::min(best, nearest_subvideo_distance(clip.trajectories[i].frames, r.frames, nc));
      require(std::isfinite(best), "every reference video is shorter than nc");
      csv += std::to_string(i) + "," + detail::fmt(best) + "\n";
    }
  } else {
    throw ParameterError("unknown metrics mode '" + mode + "'");
  }
  write_text_atomic(out, csv);
  write_run_manifest(out.string() + ".run.json", "metrics", cfg, outputs);
  std::cout << csv;
  return outputs;
}

// ---------------------------------------------------------------------------
// observability

json observability_defaults() {
  json j = generate_defaults();
  j.update({{"mode", "hautus"},
            {"equation", "heat"},
            {"n", 16},
            {"patch", 4},
            {"tol", 1e-8},
            {"rank_tol", 1e-10},
            {"eig_budget", 64},
            {"horizon", 1.0},
            {"quadrature_steps", 10000},
            {"order", 5},
            {"window", 50},
            {"steps", 10000},
            {"lie_n", 200},
            {"lie_length", 80.0},
            {"lie_dt", 0.01}});
  return j;
}

json run_observability(const json& cfg) {
  const std::string mode = get<std::string>(cfg, "mode");
  json report = {{"mode", mode}};
  if (mode == "lie-logdet") {
    GenerateConfig gc;
    gc.equation = Equation::kse1d;
    gc.n = get<int>(cfg, "lie_n");
    gc.domain_length = get<double>(cfg, "lie_length");
    gc.dt = get<double>(cfg, "lie_dt");
    gc.frames = get<int>(cfg, "steps");
    gc.inits = 1;
    gc.patch = get<int>(cfg, "patch");
    gc.init_wavenumber = get<double>(cfg, "init_wavenumber");
    const Trajectory traj = Generator(gc).trajectory(0);
    const auto series = empirical_lie_logdet(traj, gc.patch, get<int>(cfg, "order"), get<int>(cfg, "window"));
    std::size_t finite = 0;
    for (bool s : series.singular) finite += s ? 0 : 1;
    report["times"] = series.size();
    report["full_rank_fraction"] = static_cast<double>(finite) / static_cast<double>(series.size());
    if (cfg.contains("out")) {
      std::string csv = "# 1D KSE Lie log-det; log|det| is -inf where the matrix is rank deficient\nt,log_abs_det,sign,rank,rolling_mean\n";
      for (std::size_t t = 0; t < series.size(); ++t)
        csv += std::to_string(t) + "," + detail::fmt(series.log_abs_det[t]) + "," + std::to_string(series.sign[t]) +
               "," + std::to_string(series.rank[t]) + "," + detail::fmt(series.rolling_mean[t]) + "\n";
      write_text_atomic(get<std::string>(cfg, "out"), csv);
    }
  } else {
    GenerateConfig gc;
    json recipe;
    const json recipe_keys = generate_defaults();
    for (const auto& [key, value] : recipe_keys.items())
      if (cfg.contains(key)) recipe[key] = cfg.at(key);
    update_from_json(gc, recipe);
    require(gc.equation == Equation::heat || gc.equation == Equation::wave, "observability expects heat or wave");
    const GridSpec grid{gc.n, gc.dx};
    const Field a = make_conductivity(gc);
    const bool wave = gc.equation == Equation::wave;
    const SparseOperator op = wave ? build_wave_generator(a, grid) : build_modified_laplacian(a, grid);
    const SparseOperator h = build_tokenizer_matrix(grid, gc.patch, wave);
    report["state_dim"] = op.rows();
    report["tokens"] = h.rows();
    if (mode == "kalman") {
      const auto rep = rank_test(kalman_observability_matrix(op, h), get<double>(cfg, "rank_tol"));
      report["rank"] = rep.rank;
      report["observable"] = rep.observable;
    } else if (mode == "hautus") {
      const auto rep = hautus_test(op, h, get<double>(cfg, "tol"), get<int>(cfg, "eig_budget"));
      report["observable"] = rep.observable;
      report["eigenspaces"] = rep.eigenspaces.size();
      report["eigenpairs_computed"] = rep.eigenpairs_computed;
      json failing = json::array();
      for (const auto& f : rep.failing_eigenvectors)
        failing.push_back({{"eigenvalue_re", f.eigenvalue.real()},
                           {"eigenvalue_im", f.eigenvalue.imag()},
                           {"dimension", f.dimension},
                           {"min_output_norm", f.min_output_norm}});
      report["failing"] = failing;
    } else if (mode == "gramian") {
      const Matrix q = observability_gramian(Matrix(op), Matrix(h), get<double>(cfg, "horizon"),
                                             get<int>(cfg, "quadrature_steps"));
      Eigen::SelfAdjointEigenSolver<Matrix> es(q);
      report["min_eigenvalue"] = es.eigenvalues().minCoeff();
      report["max_eigenvalue"] = es.eigenvalues().maxCoeff();
    } else if (mode == "witness") {
      require(!wave, "the witness mode expects the heat operator");
      const Field v = annihilation_witness(grid, gc.patch);
      const double lambda = gc.conductivity == "constant" ? witness_eigenvalue(grid, gc.patch, gc.conductivity_value)
                                                          : v.dot(op * v) / v.squaredNorm();
      report["output_inf_norm"] = (h * v).cwiseAbs().maxCoeff();
      report["eigen_residual_inf"] = (op * v - lambda * v).cwiseAbs().maxCoeff() / v.cwiseAbs().maxCoeff();
      report["eigenvalue"] = lambda;
      if (cfg.contains("field_out")) {
        Trajectory t;
        t.frames = v;
        t.dt = 1.0;
        t.grid = grid;
        t.equation = Equation::heat;
        DatasetManifest m;
        m.grid = grid;
        m.dt = 1.0;
        m.init_seeds = {0};
        m.train_count = 1;
        m.patch = gc.patch;
        m.generator = {{"witness", provenance_config(cfg)}};
        m.created = get<std::string>(cfg, "created");
        write_dataset(get<std::string>(cfg, "field_out"), {t}, m);
      }
    } else {
      throw ParameterError("unknown observability mode '" + mode + "'");
    }
  }
  if (cfg.contains("report")) write_text_atomic(get<std::string>(cfg, "report"), report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// export

json export_defaults() { return {{"init", 0}, {"frame", 0}, {"colormap", "gray"}, {"normalized", true}}; }

json run_export(const json& cfg) {
  const fs::path data = get<std::string>(cfg, "data");
  const fs::path out = get<std::string>(cfg, "out");
  Dataset d = read_dataset(data);
  require(!d.manifest.one_dimensional, "image export needs a 2D dataset");
  const int init = get<int>(cfg, "init");
  const int frame = get<int>(cfg, "frame");
  require(init >= 0 && init < static_cast<int>(d.trajectories.size()), "init index out of range");
  const Trajectory& t = d.trajectories[static_cast<std::size_t>(init)];
  require(frame >= 0 && frame < t.length(), "frame index out of range");
  Vector f = field_of_frame(t, frame);
  double lo = -1.0, hi = 1.0;
  if (get<bool>(cfg, "normalized")) {
    f = d.manifest.normalization.apply(Matrix(f));
  } else {
    lo = f.minCoeff();
    hi = f.maxCoeff() > lo ? f.maxCoeff() : lo + 1.0;
  }
  export_frame_image(f, d.manifest.grid.n, out, lo, hi, colormap_from_string(get<std::string>(cfg, "colormap")));
  return {{"image", out.string()}};
}

// ---------------------------------------------------------------------------

using Runner = std::function<json(const json&)>;

const std::map<std::string, Runner>& runners() {
  static const std::map<std::string, Runner> r = {
      {"generate", run_generate}, {"tokenize", run_tokenize},         {"fit", run_fit},
      {"sweep", run_sweep},       {"rollout", run_rollout},           {"metrics", run_metrics},
      {"observability", run_observability}, {"export", run_export}};
  return r;
}

/// Collects flags into JSON overrides, applied after the config file.
struct Overrides {
  json values = json::object();
  std::vector<std::function<void()>> commits;

  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto holder = std::make_shared<std::optional<T>>();
    app->add_option(flag, *holder, help);
    commits.emplace_back([this, holder, key] {
      if (*holder) values[key] = **holder;
    });
  }
  void add_switch(CLI::App* app, const std::string& flag, const std::string& key, const json& value,
                  const std::string& help) {
    auto holder = std::make_shared<bool>(false);
    app->add_flag(flag, *holder, help);
    commits.emplace_back([this, holder, key, value] {
      if (*holder) values[key] = value;
    });
  }
  json finish() {
    for (auto& c : commits) c();
    return values;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tokenized lattice dynamics: data generation, observability checks, linear learners and metrics"};
  app.require_subcommand(1);
  std::string log_level = "warning";
  app.add_option("--log-level", log_level, "debug, info, warning or quiet");

  std::map<std::string, std::pair<CLI::App*, std::shared_ptr<Overrides>>> verbs;
  std::map<std::string, json> defaults = {{"generate", generate_defaults()},
                                          {"tokenize", json{{"patch", 0}}},
                                          {"fit", fit_defaults()},
                                          {"sweep", sweep_defaults()},
                                          {"rollout", rollout_defaults()},
                                          {"metrics", metrics_defaults()},
                                          {"observability", observability_defaults()},
                                          {"export", export_defaults()}};
  std::map<std::string, std::string> config_paths;
  auto verb = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    auto ov = std::make_shared<Overrides>();
    sub->add_option("--config", config_paths[name], "JSON settings file; flags override it");
    ov->add<std::uint64_t>(sub, "--seed", "seed", "base random seed");
    ov->add<std::string>(sub, "--out", "out", "output path");
    verbs[name] = {sub, ov};
    return std::pair{sub, ov.get()};
  };

  {
    auto [s, o] = verb("generate", "simulate a dataset");
    o->add<std::string>(s, "--equation", "equation", "heat, wave, kse2d or kse1d");
    o->add<int>(s, "--n", "n", "grid points per axis");
    o->add<double>(s, "--dt", "dt", "integrator step");
    o->add<int>(s, "--frames", "frames", "stored frames per initial condition");
    o->add<int>(s, "--skip", "skip", "integrator steps per stored frame");
    o->add<int>(s, "--burn-in", "burn_in", "stored frames discarded at the start");
    o->add<int>(s, "--inits", "inits", "number of initial conditions");
    o->add<int>(s, "--patch", "patch", "tokenizer patch width");
    o->add<std::string>(s, "--conductivity", "conductivity", "grf or constant");
    o->add<double>(s, "--conductivity-value", "conductivity_value", "value for constant conductivity");
    o->add<double>(s, "--a-max", "a_max", "largest conductivity of the grf recipe");
    o->add<double>(s, "--domain-length", "domain_length", "KSE domain length");
  }
  {
    auto [s, o] = verb("tokenize", "patch-average every frame of a dataset");
    o->add<std::string>(s, "--data", "data", "dataset directory");
    o->add<int>(s, "--patch", "patch", "patch width (default: dataset patch)");
  }
  {
    auto [s, o] = verb("fit", "fit the latent map g or the reconstruction map G");
    o->add<std::string>(s, "--data", "data", "dataset directory");
    o->add<std::string>(s, "--learner", "learner", "lstsq or sgd");
    o->add<std::string>(s, "--role", "role", "g or G");
    o->add<int>(s, "--k", "k", "history length");
    o->add<int>(s, "--patch", "patch", "patch width (default: dataset patch)");
    o->add<double>(s, "--ridge", "ridge", "ridge penalty");
    o->add<double>(s, "--lr", "lr", "Adam learning rate");
    o->add<double>(s, "--final-lr", "final_lr", "cosine-decay target rate (negative: constant)");
    o->add<long>(s, "--steps", "steps", "Adam updates");
    o->add<int>(s, "--batch", "batch", "mini-batch size");
    o->add_switch(s, "--no-bias", "bias", false, "fit without a bias term");
  }
  {
    auto [s, o] = verb("sweep", "history-length sweep of held-out one-step errors");
    o->add<std::string>(s, "--data", "data", "dataset directory");
    o->add<std::string>(s, "--k-list", "k_list", "comma-separated history lengths");
    o->add<int>(s, "--trials", "trials", "held-out draws per k");
    o->add<std::string>(s, "--learner", "learner", "lstsq or sgd");
    o->add<int>(s, "--patch", "patch", "patch width (default: dataset patch)");
    o->add<double>(s, "--ridge", "ridge", "ridge penalty");
  }
  {
    auto [s, o] = verb("rollout", "autoregressive generation from held-out seed frames");
    o->add<std::string>(s, "--data", "data", "dataset directory");
    o->add<std::string>(s, "--model", "model", "fitted g");
    o->add<std::string>(s, "--recon", "recon", "fitted G (with --pipeline)");
    o->add<int>(s, "--seed-frames", "seed_frames", "ground-truth token frames used as the seed");
    o->add<int>(s, "--steps", "steps", "generated frames");
    o->add<int>(s, "--init", "init", "index into the held-out split");
    o->add_switch(s, "--pipeline", "pipeline", true, "reconstruct full states with G");
  }
  {
    auto [s, o] = verb("metrics", "residues, temporal correlation, nearest sub-video distance");
    o->add_switch(s, "--residues", "mode", "residues", "per-frame L1, L2, Linf residues");
    o->add_switch(s, "--correlation", "mode", "correlation", "temporal Pearson correlation");
    o->add_switch(s, "--subvideo-distance", "mode", "subvideo-distance", "nearest sub-video distance");
    o->add<std::string>(s, "--pred", "pred", "predicted dataset");
    o->add<std::string>(s, "--truth", "truth", "ground-truth dataset");
    o->add<std::string>(s, "--data", "data", "videos for --correlation");
    o->add<std::string>(s, "--pixel", "pixel", "pixel as i,j");
    o->add<int>(s, "--dt-max", "dt_max", "largest lag");
    o->add<std::string>(s, "--clip", "clip", "clip dataset");
    o->add<std::string>(s, "--reference", "reference", "reference dataset");
    o->add<int>(s, "--nc", "nc", "clip length in frames");
  }
  {
    auto [s, o] = verb("observability", "observability certificates and witnesses");
    o->add_switch(s, "--kalman", "mode", "kalman", "Kalman rank test");
    o->add_switch(s, "--hautus", "mode", "hautus", "Hautus eigenvector test");
    o->add_switch(s, "--gramian", "mode", "gramian", "observability Gramian spectrum");
    o->add_switch(s, "--lie-logdet", "mode", "lie-logdet", "1D KSE Lie-derivative log-det series");
    o->add_switch(s, "--witness", "mode", "witness", "constant-coefficient annihilation witness");
    o->add<std::string>(s, "--equation", "equation", "heat or wave");
    o->add<int>(s, "--n", "n", "grid points per axis");
    o->add<int>(s, "--patch", "patch", "tokenizer patch width (window for --lie-logdet)");
    o->add<std::string>(s, "--conductivity", "conductivity", "grf or constant");
    o->add<double>(s, "--conductivity-value", "conductivity_value", "value for constant conductivity");
    o->add<double>(s, "--tol", "tol", "Hautus tolerance");
    o->add<double>(s, "--rank-tol", "rank_tol", "relative rank tolerance");
    o->add<int>(s, "--eig-budget", "eig_budget", "eigenpairs checked beyond the dense limit");
    o->add<double>(s, "--horizon", "horizon", "Gramian horizon");
    o->add<int>(s, "--quadrature-steps", "quadrature_steps", "Gramian Simpson intervals");
    o->add<int>(s, "--steps", "steps", "1D KSE steps for --lie-logdet");
    o->add<int>(s, "--order", "order", "derivative orders for --lie-logdet");
    o->add<int>(s, "--window", "window", "rolling-mean window for --lie-logdet");
    o->add<std::string>(s, "--report", "report", "write the JSON report here");
    o->add<std::string>(s, "--field-out", "field_out", "dataset directory for the witness field");
  }
  {
    auto [s, o] = verb("export", "write one frame as PGM or PPM");
    o->add<std::string>(s, "--data", "data", "dataset directory");
    o->add<int>(s, "--init", "init", "trajectory index");
    o->add<int>(s, "--frame", "frame", "frame index");
    o->add<std::string>(s, "--colormap", "colormap", "gray (PGM) or diverging (PPM)");
    o->add_switch(s, "--raw-range", "normalized", false, "map the frame's own range instead of [-1, 1]");
  }
  std::string replay_path, replay_out;
  CLI::App* replay = app.add_subcommand("replay", "re-execute a run manifest");
  replay->add_option("manifest", replay_path, "run manifest (run.json)")->required();
  replay->add_option("--out", replay_out, "new output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::parameter);
  }

  try {
    if (log_level == "debug") set_log_level(LogLevel::debug);
    else if (log_level == "info") set_log_level(LogLevel::info);
    else if (log_level == "warning") set_log_level(LogLevel::warning);
    else if (log_level == "quiet") set_log_level(LogLevel::quiet);
    else throw ParameterError("unknown log level '" + log_level + "'");

    if (replay->parsed()) {
      const json run = read_json_file(replay_path);
      const std::string name = get<std::string>(run, "verb");
      json cfg = run.at("config");
      if (!replay_out.empty()) cfg["out"] = replay_out;
      runners().at(name)(cfg);
      return 0;
    }
    for (auto& [name, entry] : verbs) {
      if (!entry.first->parsed()) continue;
      json cfg = defaults.at(name);
      if (!config_paths[name].empty()) cfg.update(read_json_file(config_paths[name]));
      cfg.update(entry.second->finish());
      // The creation stamp is resolved once and stored with the settings,
      // so replaying the run manifest rewrites identical files.
      if (!cfg.contains("created")) cfg["created"] = utc_timestamp();
      runners().at(name)(cfg);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "tokdyn: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "tokdyn: internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
