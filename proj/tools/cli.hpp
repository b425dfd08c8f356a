#pragma once

#include "csv.hpp"
#include "heavytail/gram.hpp"
#include "heavytail/harness.hpp"
#include "heavytail/matrix_mean.hpp"
#include "heavytail/regression.hpp"
#include "heavytail/vector_mean.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace heavytail::cli {

using json = nlohmann::json;

inline json to_json(const Vector& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (long i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

inline json to_json(const FitDiagnostics& d) {
  return {{"iterations", d.iterations}, {"oracle_calls", d.oracle_calls}, {"cuts", d.cuts},
          {"gap", d.gap},               {"target", d.target},             {"reached_target", d.reached_target}};
}

inline std::uint64_t env_seed() {
  const char* s = std::getenv("HEAVYTAIL_SEED");
  if (s == nullptr || *s == '\0') return 0;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0' || errno == ERANGE || *s == '-')
    throw InputError(std::string("HEAVYTAIL_SEED: not an unsigned integer: '") + s + "'");
  return v;
}

inline CsvTable load_csv(const std::string& path) {
  if (path == "-") return read_csv(std::cin, "<stdin>");
  std::ifstream f(path);
  if (!f) throw InputError(path + ": cannot open");
  return read_csv(f, path);
}

struct Common {
  std::string input;
  double delta = 0.05;
  std::uint64_t seed = 0;
  bool require_certified = false;
};

inline void add_common(CLI::App* app, Common& c, bool input = true) {
  if (input) app->add_option("--input", c.input, "CSV file, one observation per row ('-' reads stdin)")->required();
  app->add_option("--delta", c.delta, "failure probability")->capture_default_str();
  app->add_option("--seed", c.seed, "random seed (default: $HEAVYTAIL_SEED or 0)")->capture_default_str();
  app->add_flag("--require-certified", c.require_certified, "exit with status 3 unless the fit is certified");
}

inline int finish(const json& j, bool certified, const Common& c, std::ostream& out, std::ostream& err) {
  out << j.dump(2) << '\n';
  if (c.require_certified && !certified) {
    err << "heavytail: result is not certified\n";
    return 3;
  }
  return 0;
}

// mean

struct MeanArgs {
  Common c;
  std::string method = "uncentered";
  double v = 0.0, T = 0.0, b = 0.0;
  std::optional<long> split;
};

inline int run_mean(const MeanArgs& a, std::ostream& out, std::ostream& err) {
  const CsvTable t = load_csv(a.c.input);
  MeanOptions opt;
  opt.center.search.seed = a.c.seed;
  MeanEstimate m;
  if (a.method == "uncentered") {
    m = estimate_mean_uncentered(t.values, {a.v, a.T}, a.c.delta, opt);
  } else if (a.method == "centered") {
    m = estimate_mean_centered(t.values, {a.v, a.T, a.b}, a.c.delta, a.split, opt);
  } else {
    throw InputError("--method: expected uncentered or centered, got '" + a.method + "'");
  }
  json j{{"schema", "1"},
         {"command", "mean"},
         {"method", a.method},
         {"n", t.values.rows()},
         {"d", t.values.cols()},
         {"delta", m.delta},
         {"m_hat", to_json(m.m_hat)},
         {"radius", m.radius},
         {"certified", m.certified},
         {"diagnostics", to_json(m.diagnostics)}};
  return finish(j, m.certified, a.c, out, err);
}

// matrix-mean

struct MatrixArgs {
  Common c;
  int rows = 0, cols = 0;
  MatMomentBounds b;
  int draws = 1000;
  bool hs = false;
};

inline int run_matrix(const MatrixArgs& a, std::ostream& out, std::ostream& err) {
  const CsvTable t = load_csv(a.c.input);
  if (t.values.cols() != static_cast<long>(a.rows) * a.cols)
    throw InputError(a.c.input + ": rows have " + std::to_string(t.values.cols()) + " fields, --rows x --cols is " +
                     std::to_string(static_cast<long>(a.rows) * a.cols));
  const MatrixSample s = MatrixSample::from_rows(t.values, a.rows, a.cols);
  const McConfig mc{a.draws, a.c.seed};
  MatrixFitOptions opt;
  opt.search.seed = a.c.seed;
  const MatrixEstimate m =
      a.hs ? fit_matrix_combined(s, a.b, a.c.delta, mc, opt) : fit_matrix_operator(s, a.b, a.c.delta, mc, opt);
  json j{{"schema", "1"},
         {"command", "matrix-mean"},
         {"n", s.size()},
         {"rows", a.rows},
         {"cols", a.cols},
         {"delta", m.delta},
         {"m_hat", to_json(m.m_hat)},
         {"op_radius", m.op_radius},
         {"op_gap", m.op_gap},
         {"mc_stderr", m.mc_stderr},
         {"certified", m.certified},
         {"diagnostics", to_json(m.diagnostics)}};
  j["hs_radius"] = m.hs_radius ? json(*m.hs_radius) : json(nullptr);
  j["hs_gap"] = m.hs_gap ? json(*m.hs_gap) : json(nullptr);
  return finish(j, m.certified, a.c, out, err);
}

// gram

struct GramArgs {
  Common c;
  double T = 0.0;
  int max_rounds = GramFitOptions{}.max_rounds;
};

inline int run_gram(const GramArgs& a, std::ostream& out, std::ostream& err) {
  const CsvTable t = load_csv(a.c.input);
  GramConfig cfg;
  cfg.T = a.T;
  cfg.delta = a.c.delta;
  if (a.max_rounds < 1) throw InputError("--max-rounds: must be at least 1");
  GramFitOptions opt;
  opt.search.seed = a.c.seed;
  opt.max_rounds = a.max_rounds;
  const GramEstimate g = fit_gram(t.values, cfg, opt);
  const EigenEstimates e = estimate_eigenvalues(t.values, cfg, g, opt);
  json j{{"schema", "1"},
         {"command", "gram"},
         {"n", t.values.rows()},
         {"d", t.values.cols()},
         {"delta", g.delta},
         {"G_hat", to_json(g.G_hat)},
         {"G_low", to_json(g.G_low)},
         {"sup_gap", g.sup_gap},
         {"sigma_hat", to_json(e.sigma_hat)},
         {"certified", g.certified},
         {"diagnostics", to_json(g.diagnostics)}};
  return finish(j, g.certified, a.c, out, err);
}

// regress

struct RegressArgs {
  Common c;
  double ridge = 0.0;
  std::string bounds;
  std::string family = "none";
  std::optional<double> norm_cap;
  std::string route = "quadratic";
  int draws = 1000;
};

/// Inline JSON object or a path to one, with keys v, T, v_prime (or v'), T_prime (or T').
inline PluginBounds parse_bounds(const std::string& arg) {
  std::string text = arg;
  if (arg.empty() || arg.front() != '{') {
    std::ifstream f(arg);
    if (!f) throw InputError("--bounds: cannot open '" + arg + "'");
    text.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("--bounds: ") + e.what());
  }
  auto get = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys)
      if (j.contains(k) && j[k].is_number()) return j[k].get<double>();
    throw InputError(std::string("--bounds: missing numeric key '") + *keys.begin() + "'");
  };
  return {get({"v"}), get({"T"}), get({"v_prime", "v'"}), get({"T_prime", "T'"})};
}

inline std::vector<int> parse_ints(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string f;
  while (std::getline(ss, f, ',')) {
    f = detail::trim(f);
    char* end = nullptr;
    const long v = std::strtol(f.c_str(), &end, 10);
    if (f.empty() || *end != '\0') throw InputError(what + ": not an integer: '" + f + "'");
    out.push_back(static_cast<int>(v));
  }
  if (out.empty()) throw InputError(what + ": empty list");
  return out;
}

/// none | nested:k1,k2,... (prefix sizes) | supports:i,j;k;... (0-based coordinates)
inline std::optional<ModelFamily> parse_model_family(const std::string& s, int d) {
  if (s == "none") return std::nullopt;
  if (s.rfind("nested:", 0) == 0) {
    std::vector<std::vector<int>> sup;
    for (int k : parse_ints(s.substr(7), "--family")) {
      if (k < 1 || k > d) throw InputError("--family: prefix size out of range: " + std::to_string(k));
      std::vector<int> idx(k);
      for (int j = 0; j < k; ++j) idx[j] = j;
      sup.push_back(std::move(idx));
    }
    return coordinate_family(d, sup, true);
  }
  if (s.rfind("supports:", 0) == 0) {
    std::vector<std::vector<int>> sup;
    std::stringstream ss(s.substr(9));
    std::string part;
    while (std::getline(ss, part, ';')) {
      auto idx = parse_ints(part, "--family");
      for (int j : idx)
        if (j < 0 || j >= d) throw InputError("--family: coordinate out of range: " + std::to_string(j));
      sup.push_back(std::move(idx));
    }
    if (sup.empty()) throw InputError("--family: no supports given");
    return coordinate_family(d, sup, false);
  }
  throw InputError("--family: expected none, nested:... or supports:..., got '" + s + "'");
}

inline int run_regress(const RegressArgs& a, std::ostream& out, std::ostream& err) {
  const CsvTable t = load_csv(a.c.input);
  if (t.values.cols() < 2) throw InputError(a.c.input + ": need at least one feature column and the response");
  const int d = static_cast<int>(t.values.cols()) - 1;
  RegressionData data{t.values.leftCols(d), t.values.col(d)};
  const PluginBounds b = parse_bounds(a.bounds);
  const auto family = parse_model_family(a.family, d);

  PluginOptions opt;
  if (a.route == "quadratic") {
    opt.route = GramRoute::quadratic_form;
  } else if (a.route == "operator") {
    opt.route = GramRoute::operator_norm;
  } else {
    throw InputError("--route: expected quadratic or operator, got '" + a.route + "'");
  }
  opt.mc = {a.draws, a.c.seed};
  opt.matrix.search.seed = a.c.seed;
  opt.gram.search.seed = a.c.seed;
  opt.mean.center.search.seed = a.c.seed;
  const PluginEstimates p = build_plugin(data, b, a.c.delta, opt);
  const RegionSpec r = make_region(p, a.ridge, a.norm_cap);

  json j{{"schema", "1"},
         {"command", "regress"},
         {"n", data.X.rows()},
         {"d", d},
         {"delta", a.c.delta},
         {"lambda", a.ridge},
         {"route", a.route},
         {"epsilon", p.epsilon},
         {"eta", p.eta},
         {"G_hat", to_json(p.G_hat)},
         {"V_hat", to_json(p.V_hat)},
         {"theta_hat", to_json(r.theta_hat)},
         {"certified", p.certified}};
  j["norm_cap"] = a.norm_cap ? json(*a.norm_cap) : json(nullptr);

  double sigma = 0.0;
  if (!family) {
    const MinNormResult mn = min_norm_in_region(r);
    j["theta"] = to_json(mn.theta);
    j["model"] = nullptr;
    sigma = restricted_sigma(p.G_hat, Matrix::Identity(d, d));
  } else {
    const ModelSelection sel = family->nested ? select_model_nested(r, *family) : select_model_general(r, *family, p.G_hat);
    j["theta"] = to_json(sel.theta);
    j["model"] = {{"index", sel.index},
                  {"support", basis_support(family->subspaces[sel.index])},
                  {"admissible", sel.admissible},
                  {"sigma_hat", sel.sigma_hat}};
    sigma = sel.sigma_hat;
  }
  // Both need |theta_lambda| <= A, so they are only reported under a cap.
  if (a.norm_cap) {
    const double s = p.epsilon * *a.norm_cap + p.eta;
    const double denom = a.ridge + sigma;
    j["bounds"] = {{"prediction", 2.0 * s}, {"excess_risk", denom > 0.0 ? json(4.0 * s * s / denom) : json(nullptr)}};
  } else {
    j["bounds"] = nullptr;
  }
  return finish(j, p.certified, a.c, out, err);
}

// simulate

struct SimulateArgs {
  Common c;
  std::string scenario = "gaussian";
  std::string estimator = "mean";
  FamilyParams family;
  int d = 3, p = 0, q = 0;
  long n = 500;
  int trials = 200;
  int directions = 50;
  double ridge = 0.1;
  double mean_value = 0.0;
  double theta_value = 1.0;
  double noise_sd = 1.0;
  int draws = 1000;
  unsigned threads = 0;
  bool timing = false;
  std::string dump;
};

inline DatasetSpec simulate_spec(const SimulateArgs& a) {
  DatasetSpec s;
  s.family = a.family;
  s.family.family = parse_family(a.scenario);
  s.d = a.d;
  s.p = a.p;
  s.q = a.q;
  s.n = a.n;
  s.noise_sd = a.noise_sd;
  s.seed = a.c.seed;
  if (a.estimator == "matrix-mean") {
    if (a.p < 1 || a.q < 1) throw InputError("--p and --q are required for matrix-mean");
    s.true_mean = Vector::Constant(static_cast<long>(a.p) * a.q, a.mean_value);
  } else if (a.estimator == "regression-region") {
    s.true_theta = Vector::Constant(a.d, a.theta_value);
  } else if (a.estimator == "mean") {
    s.true_mean = Vector::Constant(a.d, a.mean_value);
  }
  return s;
}

/// The first trial's sample: vector rows, flattened matrices (row-major), or [X, Y].
inline void dump_first_trial(const SimulateArgs& a, const DatasetSpec& spec) {
  DatasetSpec s = spec;
  s.seed = CounterRng(spec.seed).substream(0).key();
  Matrix rows;
  std::vector<std::string> header;
  if (a.estimator == "matrix-mean") {
    const MatrixScenario m = generate_matrix(s);
    rows.resize(m.sample.size(), static_cast<long>(s.p) * s.q);
    for (long i = 0; i < m.sample.size(); ++i)
      for (int r = 0; r < s.p; ++r)
        for (int c = 0; c < s.q; ++c) rows(i, static_cast<long>(r) * s.q + c) = m.sample.data[i](r, c);
    for (int r = 0; r < s.p; ++r)
      for (int c = 0; c < s.q; ++c) header.push_back("m" + std::to_string(r) + "_" + std::to_string(c));
  } else if (a.estimator == "regression-region") {
    const RegressionScenario g = generate_regression(s);
    rows.resize(g.data.X.rows(), s.d + 1);
    rows << g.data.X, g.data.Y;
    for (int j = 0; j < s.d; ++j) header.push_back("x" + std::to_string(j));
    header.push_back("y");
  } else {
    rows = generate_vector(s).x;
    for (int j = 0; j < s.d; ++j) header.push_back("x" + std::to_string(j));
  }
  std::ofstream f(a.dump);
  if (!f) throw InputError("--dump: cannot write '" + a.dump + "'");
  write_csv(f, rows, header);
}

inline int run_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  const DatasetSpec spec = simulate_spec(a);
  CoverageOptions opt;
  opt.gram_directions = a.directions;
  opt.ridge = a.ridge;
  opt.threads = a.threads;
  opt.mc.n_draws = a.draws;
  opt.plugin.route = GramRoute::quadratic_form;
  const ExperimentReport r = run_coverage(a.estimator, spec, a.trials, a.c.delta, opt);
  if (!a.dump.empty()) dump_first_trial(a, spec);
  json j{{"schema", "1"},
         {"command", "simulate"},
         {"scenario", family_name(spec.family.family)},
         {"estimator", r.estimator},
         {"n", spec.n},
         {"trials", r.trials},
         {"checks", r.checks},
         {"failures", r.failures},
         {"delta", r.nominal_delta},
         {"failure_level", r.failure_level},
         {"allowed", r.allowed},
         {"radius", {{"min", r.radius_min}, {"median", r.radius_median}, {"max", r.radius_max}}},
         {"passed", r.passed}};
  if (a.timing) j["wall_seconds"] = r.wall_seconds;
  return finish(j, true, a.c, out, err);
}

// entry point

inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Certified estimators for heavy-tailed data", "heavytail"};
  app.require_subcommand(1);

  std::uint64_t seed0 = 0;
  try {
    seed0 = env_seed();
  } catch (const InputError& e) {
    err << "heavytail: " << e.what() << '\n';
    return 2;
  }

  MeanArgs mean;
  mean.c.seed = seed0;
  auto* s_mean = app.add_subcommand("mean", "vector mean with a confidence radius");
  add_common(s_mean, mean.c);
  s_mean->add_option("--method", mean.method, "uncentered | centered")->capture_default_str();
  s_mean->add_option("--v", mean.v, "bound on sup E<theta,X>^2 (centered: of the covariance)")->required();
  s_mean->add_option("--T", mean.T, "bound on E|X|^2 (centered: trace of the covariance)")->required();
  s_mean->add_option("--b", mean.b, "centered only: bound on |E X|^2");
  s_mean->add_option("--split", mean.split, "centered only: rows used for pre-centering");

  MatrixArgs mat;
  mat.c.seed = seed0;
  auto* s_mat = app.add_subcommand("matrix-mean", "matrix mean in operator norm");
  add_common(s_mat, mat.c);
  s_mat->add_option("--rows", mat.rows, "rows p of each observation")->required();
  s_mat->add_option("--cols", mat.cols, "columns q of each observation")->required();
  s_mat->add_option("--v", mat.b.v, "bound on sup E<xi, M theta>^2")->required();
  s_mat->add_option("--t", mat.b.t, "bound on sup E|M theta|^2")->required();
  s_mat->add_option("--u", mat.b.u, "bound on sup E|M' xi|^2")->required();
  s_mat->add_option("--T", mat.b.T, "bound on E|M|_HS^2")->required();
  s_mat->add_option("--v-hs", mat.b.v_hs, "bound on sup over HS-unit Theta of E<Theta, M>^2");
  s_mat->add_option("--draws", mat.draws, "Monte-Carlo draws")->capture_default_str();
  s_mat->add_flag("--hs", mat.hs, "also certify a Hilbert-Schmidt radius");

  GramArgs gram;
  gram.c.seed = seed0;
  auto* s_gram = app.add_subcommand("gram", "Gram matrix and eigenvalue lower bounds");
  add_common(s_gram, gram.c);
  s_gram->add_option("--T", gram.T, "bound on E|X|^4")->required();
  s_gram->add_option("--max-rounds", gram.max_rounds, "exchange rounds before giving up certification")
      ->capture_default_str();

  RegressArgs reg;
  reg.c.seed = seed0;
  auto* s_reg = app.add_subcommand("regress", "ridge confidence region and model selection");
  add_common(s_reg, reg.c);
  s_reg->add_option("--ridge", reg.ridge, "ridge parameter lambda")->capture_default_str();
  s_reg->add_option("--bounds", reg.bounds, "JSON object or file with v, T, v_prime, T_prime")->required();
  s_reg->add_option("--family", reg.family, "none | nested:k1,k2,... | supports:i,j;k;...")->capture_default_str();
  s_reg->add_option("--norm-cap", reg.norm_cap, "bound A on |theta|");
  s_reg->add_option("--route", reg.route, "quadratic | operator")->capture_default_str();
  s_reg->add_option("--draws", reg.draws, "Monte-Carlo draws (operator route)")->capture_default_str();

  SimulateArgs sim;
  sim.c.seed = seed0;
  auto* s_sim = app.add_subcommand("simulate", "coverage experiment on synthetic data");
  add_common(s_sim, sim.c, false);
  s_sim->add_option("--scenario", sim.scenario, "gaussian | student_t | pareto_tail | contaminated")
      ->capture_default_str();
  s_sim->add_option("--estimator", sim.estimator,
                    "mean | matrix-mean | gram-lower | gram-upper | regression-region")
      ->capture_default_str();
  s_sim->add_option("--nu", sim.family.nu, "student_t degrees of freedom")->capture_default_str();
  s_sim->add_option("--a", sim.family.a, "pareto_tail index")->capture_default_str();
  s_sim->add_option("--p-out", sim.family.p_out, "contaminated: outlier probability")->capture_default_str();
  s_sim->add_option("--out-scale", sim.family.scale, "contaminated: outlier scale")->capture_default_str();
  s_sim->add_option("--d", sim.d, "dimension")->capture_default_str();
  s_sim->add_option("--p", sim.p, "matrix rows");
  s_sim->add_option("--q", sim.q, "matrix columns");
  s_sim->add_option("--n", sim.n, "sample size")->capture_default_str();
  s_sim->add_option("--trials", sim.trials, "repetitions")->capture_default_str();
  s_sim->add_option("--directions", sim.directions, "random directions per Gram trial")->capture_default_str();
  s_sim->add_option("--ridge", sim.ridge, "ridge parameter for regression-region")->capture_default_str();
  s_sim->add_option("--mean", sim.mean_value, "every coordinate of the true mean")->capture_default_str();
  s_sim->add_option("--theta", sim.theta_value, "every regression coefficient")->capture_default_str();
  s_sim->add_option("--noise-sd", sim.noise_sd, "regression noise level")->capture_default_str();
  s_sim->add_option("--draws", sim.draws, "Monte-Carlo draws (matrix-mean)")->capture_default_str();
  s_sim->add_option("--threads", sim.threads, "worker threads (0: hardware)");
  s_sim->add_flag("--timing", sim.timing, "report wall-clock seconds");
  s_sim->add_option("--dump", sim.dump, "write the first trial's sample as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    std::string usage = app.help();
    for (const auto* s : app.get_subcommands()) usage = s->help();
    err << "heavytail: " << e.what() << "\n\n" << usage;
    return 2;
  }

  try {
    if (*s_mean) return run_mean(mean, out, err);
    if (*s_mat) return run_matrix(mat, out, err);
    if (*s_gram) return run_gram(gram, out, err);
    if (*s_reg) return run_regress(reg, out, err);
    if (*s_sim) return run_simulate(sim, out, err);
  } catch (const InputError& e) {
    err << "heavytail: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    err << "heavytail: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "heavytail: internal error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace heavytail::cli
