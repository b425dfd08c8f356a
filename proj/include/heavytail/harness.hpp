#pragma once

// Synthetic scenarios with exact population moments, and Monte-Carlo
// coverage runs that check certified radii against the known truth.
//
// Every family draws independent, symmetric coordinates with unit-scale
// moments m2 = E Z^2 and m4 = E Z^4, then scales coordinate j by scale[j].

#include "heavytail/core.hpp"
#include "heavytail/gram.hpp"
#include "heavytail/matrix_mean.hpp"
#include "heavytail/parallel.hpp"
#include "heavytail/regression.hpp"
#include "heavytail/rng.hpp"
#include "heavytail/vector_mean.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace heavytail {

enum class Family { gaussian, student_t, pareto_tail, contaminated };

struct FamilyParams {
  Family family = Family::gaussian;
  double nu = 5.0;     ///< student_t degrees of freedom
  double a = 5.0;      ///< pareto_tail index
  double p_out = 0.0;  ///< contaminated: outlier probability
  double scale = 1.0;  ///< contaminated: outlier scale
};

inline std::string family_name(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::student_t: return "student_t";
    case Family::pareto_tail: return "pareto_tail";
    case Family::contaminated: return "contaminated";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "student_t") return Family::student_t;
  if (s == "pareto_tail") return Family::pareto_tail;
  if (s == "contaminated") return Family::contaminated;
  throw DomainError("unknown family '" + s + "'");
}

inline void validate(const FamilyParams& f) {
  switch (f.family) {
    case Family::gaussian: break;
    case Family::student_t: require(f.nu > 0.0 && std::isfinite(f.nu), "student_t: nu must be positive"); break;
    case Family::pareto_tail: require(f.a > 0.0 && std::isfinite(f.a), "pareto_tail: index must be positive"); break;
    case Family::contaminated:
      require(f.p_out >= 0.0 && f.p_out < 1.0, "contaminated: p_out must lie in [0, 1)");
      require(f.scale > 0.0 && std::isfinite(f.scale), "contaminated: scale must be positive");
      break;
  }
}

/// E Z^2 of the unit-scale family; infinity when it does not exist.
inline double family_m2(const FamilyParams& f) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (f.family) {
    case Family::gaussian: return 1.0;
    case Family::student_t: return f.nu > 2.0 ? f.nu / (f.nu - 2.0) : inf;
    // Symmetric Lomax: |Z| = U^(-1/a) - 1.
    case Family::pareto_tail: return f.a > 2.0 ? 2.0 / ((f.a - 1.0) * (f.a - 2.0)) : inf;
    case Family::contaminated: return 1.0 - f.p_out + f.p_out * f.scale * f.scale;
  }
  return inf;
}

inline double family_m4(const FamilyParams& f) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (f.family) {
    case Family::gaussian: return 3.0;
    case Family::student_t: return f.nu > 4.0 ? 3.0 * f.nu * f.nu / ((f.nu - 2.0) * (f.nu - 4.0)) : inf;
    case Family::pareto_tail:
      return f.a > 4.0 ? 24.0 / ((f.a - 1.0) * (f.a - 2.0) * (f.a - 3.0) * (f.a - 4.0)) : inf;
    case Family::contaminated: return 3.0 * (1.0 - f.p_out + f.p_out * std::pow(f.scale, 4));
  }
  return inf;
}

/// Draws unit-scale variates. The contamination indicator has its own
/// stream, so p_out = 0 reproduces the Gaussian family exactly.
class FamilySampler {
 public:
  FamilySampler(const FamilyParams& f, const CounterRng& rng) : f_(f), rng_(rng), flag_(rng.substream(0xC0FFEE)) {
    validate(f);
  }

  double operator()() {
    switch (f_.family) {
      case Family::gaussian: return rng_.normal();
      case Family::student_t: {
        const double z = rng_.normal();
        std::gamma_distribution<double> chi2(0.5 * f_.nu, 2.0);
        return z / std::sqrt(chi2(rng_) / f_.nu);
      }
      case Family::pareto_tail: {
        const double u = 1.0 - rng_.uniform();
        const double mag = std::pow(u, -1.0 / f_.a) - 1.0;
        return rng_.uniform() < 0.5 ? -mag : mag;
      }
      case Family::contaminated: {
        const double z = rng_.normal();
        return flag_.uniform() < f_.p_out ? f_.scale * z : z;
      }
    }
    return 0.0;
  }

 private:
  FamilyParams f_;
  CounterRng rng_;
  CounterRng flag_;
};

/// Exact moments of X = mean + diag(scale) Z for independent coordinates.
struct VectorMoments {
  Vector mean;
  Vector var;         ///< per-coordinate variance
  Vector m4;          ///< per-coordinate E (X_j - mean_j)^4
  double v = 0.0;     ///< sup over unit theta of E<theta, X>^2
  double T = 0.0;     ///< E|X|^2
  double v_bar = 0.0; ///< largest variance
  double T_bar = 0.0; ///< trace of the covariance
  double b = 0.0;     ///< |E X|^2
  double e4_sup = std::numeric_limits<double>::infinity();  ///< sup E<theta, X - mean>^4
  double T4 = std::numeric_limits<double>::infinity();      ///< E|X - mean|^4

  /// E<theta, X - mean>^4 = 3 (sum theta_j^2 var_j)^2 + sum theta_j^4 (m4_j - 3 var_j^2).
  double e4(const Vector& theta) const {
    const Vector t2 = theta.cwiseAbs2();
    const double s = t2.dot(var);
    return 3.0 * s * s + t2.cwiseAbs2().dot(m4 - 3.0 * var.cwiseAbs2());
  }
  double e2(const Vector& theta) const { return theta.cwiseAbs2().dot(var); }
};

inline VectorMoments vector_moments(const FamilyParams& f, const Vector& scale, const Vector& mean) {
  require(scale.size() == mean.size() && scale.size() >= 1, "vector_moments: shape mismatch");
  const double m2 = family_m2(f), m4 = family_m4(f);
  VectorMoments m;
  m.mean = mean;
  m.var = scale.cwiseAbs2() * m2;
  m.v_bar = m.var.maxCoeff();
  m.T_bar = m.var.sum();
  m.b = mean.squaredNorm();
  m.T = m.T_bar + m.b;
  if (std::isfinite(m2)) {
    Matrix S = m.var.asDiagonal();
    S += mean * mean.transpose();
    m.v = Eigen::SelfAdjointEigenSolver<Matrix>(S, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  } else {
    m.v = std::numeric_limits<double>::infinity();
  }
  m.m4 = scale.cwiseAbs2().cwiseAbs2() * m4;
  if (std::isfinite(m4)) {
    // Every family has m4 >= 3 m2^2, so E<theta,X>^4 is convex in theta_j^2
    // and its sup over the sphere sits on a coordinate axis.
    m.e4_sup = m.m4.maxCoeff();
    m.T4 = m.m4.sum() + m.T_bar * m.T_bar - m.var.squaredNorm();
  }
  return m;
}

struct DatasetSpec {
  FamilyParams family{};
  int d = 1;
  int p = 0, q = 0;     ///< matrix scenarios
  long n = 100;
  Vector scale;         ///< per coordinate (or per entry, column-major); empty means ones
  Vector true_mean;     ///< vector mean, or vec of the mean matrix; empty means zero
  Vector true_theta;    ///< regression coefficients; empty means zero
  double noise_sd = 1.0;  ///< regression noise, drawn from the same family
  std::uint64_t seed = 0;
};

inline Vector spec_scale(const DatasetSpec& s, int k) {
  if (s.scale.size() == 0) return Vector::Ones(k);
  require(s.scale.size() == k, "DatasetSpec: scale has the wrong length");
  require((s.scale.array() >= 0.0).all(), "DatasetSpec: scale must be nonnegative");
  return s.scale;
}

inline Vector spec_mean(const DatasetSpec& s, int k) {
  if (s.true_mean.size() == 0) return Vector::Zero(k);
  require(s.true_mean.size() == k, "DatasetSpec: true_mean has the wrong length");
  return s.true_mean;
}

inline Matrix draw_rows(const FamilyParams& f, long n, const Vector& scale, const Vector& mean, const CounterRng& rng) {
  FamilySampler z(f, rng);
  Matrix x(n, scale.size());
  for (long i = 0; i < n; ++i)
    for (int j = 0; j < scale.size(); ++j) x(i, j) = mean[j] + scale[j] * z();
  return x;
}

struct VectorScenario {
  VectorSample x;
  VectorMoments moments;
};

/// Requires a finite second moment.
inline VectorScenario generate_vector(const DatasetSpec& s) {
  validate(s.family);
  require(s.d >= 1 && s.n >= 1, "generate_vector: need d >= 1 and n >= 1");
  const Vector sc = spec_scale(s, s.d), mu = spec_mean(s, s.d);
  VectorScenario out;
  out.moments = vector_moments(s.family, sc, mu);
  require(std::isfinite(out.moments.T), "generate_vector: the family has no finite second moment");
  out.x = draw_rows(s.family, s.n, sc, mu, CounterRng(s.seed));
  return out;
}

struct MatrixScenario {
  MatrixSample sample;
  Matrix mean;
  MatMomentBounds bounds;  ///< exact uncentered moments
};

/// I.i.d.-structure entries: M = mean + (scale_ab Z_ab).
inline MatrixScenario generate_matrix(const DatasetSpec& s) {
  validate(s.family);
  require(s.p >= 1 && s.q >= 1 && s.n >= 1, "generate_matrix: need p, q, n >= 1");
  const int k = s.p * s.q;
  const Vector sc = spec_scale(s, k), mu = spec_mean(s, k);
  const double m2 = family_m2(s.family);
  require(std::isfinite(m2), "generate_matrix: the family has no finite second moment");
  MatrixScenario out;
  out.mean = unvec(mu, s.p, s.q);
  const Matrix var = unvec(sc.cwiseAbs2() * m2, s.p, s.q);
  // E<xi, M theta>^2 = sum var_ab xi_a^2 theta_b^2 + <xi, mean theta>^2; each
  // bound adds the sups of the two terms, exact for a zero mean.
  const double op2 = out.mean.size() ? std::pow(Eigen::JacobiSVD<Matrix>(out.mean).singularValues()(0), 2) : 0.0;
  out.bounds.v = var.maxCoeff() + op2;
  out.bounds.t = var.colwise().sum().maxCoeff() + op2;
  out.bounds.u = var.rowwise().sum().maxCoeff() + op2;
  out.bounds.T = var.sum() + out.mean.squaredNorm();
  out.bounds.v_hs = var.maxCoeff() + out.mean.squaredNorm();
  const Matrix rows = draw_rows(s.family, s.n, sc, mu, CounterRng(s.seed));
  out.sample.p = s.p;
  out.sample.q = s.q;
  out.sample.data.reserve(s.n);
  for (long i = 0; i < s.n; ++i) out.sample.data.push_back(unvec(rows.row(i).transpose(), s.p, s.q));
  return out;
}

struct RegressionScenario {
  RegressionData data;
  Matrix G;            ///< E X X'
  Vector V;            ///< E Y X
  PluginBounds bounds; ///< exact v, T, v', T'
  VectorMoments x_moments;

  /// argmin R(theta) + lambda |theta|^2.
  Vector theta_lambda(double lambda) const {
    const int d = static_cast<int>(V.size());
    return (G + lambda * Matrix::Identity(d, d)).ldlt().solve(V);
  }
};

/// X with zero mean, Y = <theta, X> + noise_sd * e, e an independent
/// unit-variance draw from the same family. Requires finite fourth moments.
inline RegressionScenario generate_regression(const DatasetSpec& s) {
  validate(s.family);
  require(s.d >= 1 && s.n >= 1, "generate_regression: need d >= 1 and n >= 1");
  require(s.noise_sd >= 0.0, "generate_regression: noise_sd must be nonnegative");
  const Vector sc = spec_scale(s, s.d);
  const Vector th = s.true_theta.size() ? s.true_theta : Vector::Zero(s.d);
  require(th.size() == s.d, "generate_regression: true_theta has the wrong length");
  RegressionScenario out;
  out.x_moments = vector_moments(s.family, sc, Vector::Zero(s.d));
  require(std::isfinite(out.x_moments.T4), "generate_regression: the family has no finite fourth moment");
  const Vector& var = out.x_moments.var;
  const Vector kurt = out.x_moments.m4 - 3.0 * var.cwiseAbs2();
  out.G = var.asDiagonal();
  out.V = var.cwiseProduct(th);
  // E Y^2 <t,X>^2 = t' Q t with
  // Q = (th'D th + s^2) D + 2 (D th)(D th)' + diag(th_j^2 kurt_j).
  const double s0 = th.cwiseAbs2().dot(var);
  Matrix Q = (s0 + s.noise_sd * s.noise_sd) * Matrix(var.asDiagonal());
  Q += 2.0 * out.V * out.V.transpose();
  Q += th.cwiseAbs2().cwiseProduct(kurt).asDiagonal();
  out.bounds.v = out.x_moments.e4_sup;
  out.bounds.T = out.x_moments.T4;
  out.bounds.v_prime = Eigen::SelfAdjointEigenSolver<Matrix>(Q, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  out.bounds.T_prime = Q.trace();

  const CounterRng rng(s.seed);
  out.data.X = draw_rows(s.family, s.n, sc, Vector::Zero(s.d), rng);
  const double unit_sd = std::sqrt(family_m2(s.family));
  FamilySampler noise(s.family, rng.substream(0x4E4F495345ULL));
  out.data.Y = out.data.X * th;
  for (long i = 0; i < s.n; ++i) out.data.Y[i] += s.noise_sd * noise() / unit_sd;
  return out;
}

struct ExperimentReport {
  std::string estimator;
  int trials = 0;
  long checks = 0;     ///< inequalities tested (trials times directions for Gram runs)
  long failures = 0;
  double nominal_delta = 0.0;
  double failure_level = 0.0;  ///< allowed failure probability per check
  double allowed = 0.0;        ///< level * checks + 3 sigma
  double radius_min = 0.0, radius_median = 0.0, radius_max = 0.0;
  double wall_seconds = 0.0;
  bool passed = false;
};

/// floor(level * checks + 3 sqrt(checks level (1 - level))).
inline double coverage_allowance(long checks, double level) {
  const double c = static_cast<double>(checks);
  return std::floor(level * c + 3.0 * std::sqrt(c * level * (1.0 - level)));
}

struct CoverageOptions {
  int gram_directions = 50;
  double ridge = 0.1;
  unsigned threads = 0;
  McConfig mc{};
  MatrixFitOptions matrix{};
  PluginOptions plugin{};
  MeanOptions mean{};
};

namespace detail {

struct TrialOutcome {
  long checks = 0;
  long failures = 0;
  double radius = 0.0;
};

inline Vector random_unit(CounterRng& rng, int d) {
  Vector x(d);
  for (int j = 0; j < d; ++j) x[j] = rng.normal();
  return x.normalized();
}

}  // namespace detail

/// Estimators: "mean" (uncentered vector mean, radius 2 (sqrt(T/n) + sqrt(2 v log(1/delta)/n))),
/// "matrix-mean" (operator norm, radius 2 B_n), "gram-lower" (E~ <= E<theta,X>^2),
/// "gram-upper" (E<theta,X>^2 <= E~ + B(theta)), "regression-region" (theta_lambda in the region).
/// A run passes when failures <= 2 delta checks + 3 sigma.
inline ExperimentReport run_coverage(const std::string& estimator, const DatasetSpec& spec, int trials, double delta,
                                     const CoverageOptions& opt = {}) {
  require(trials >= 100, "run_coverage: at least 100 trials");
  validate_delta(delta, "run_coverage");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<detail::TrialOutcome> out(trials);
  const CounterRng root(spec.seed);
  auto trial_spec = [&](int t) {
    DatasetSpec s = spec;
    s.seed = root.substream(static_cast<std::uint64_t>(t)).key();
    return s;
  };

  std::function<void(std::size_t)> body;
  if (estimator == "mean") {
    body = [&](std::size_t t) {
      const VectorScenario sc = generate_vector(trial_spec(static_cast<int>(t)));
      if (sc.moments.v <= 0.0) {
        out[t] = {1, 0, 0.0};
        return;
      }
      const MeanEstimate m = estimate_mean_uncentered(sc.x, {sc.moments.v, sc.moments.T}, delta, opt.mean);
      out[t] = {1, (m.m_hat - sc.moments.mean).norm() > m.radius ? 1L : 0L, m.radius};
    };
  } else if (estimator == "matrix-mean") {
    body = [&](std::size_t t) {
      const MatrixScenario sc = generate_matrix(trial_spec(static_cast<int>(t)));
      McConfig mc = opt.mc;
      mc.seed = root.substream(1000003ULL + t).key();
      const MatrixEstimate m = fit_matrix_operator(sc.sample, sc.bounds, delta, mc, opt.matrix);
      const double err = Eigen::JacobiSVD<Matrix>(m.m_hat - sc.mean).singularValues()(0);
      out[t] = {1, err > m.op_radius ? 1L : 0L, m.op_radius};
    };
  } else if (estimator == "gram-lower" || estimator == "gram-upper") {
    const bool lower = estimator == "gram-lower";
    body = [&, lower](std::size_t t) {
      const DatasetSpec s = trial_spec(static_cast<int>(t));
      const VectorScenario sc = generate_vector(s);
      require(sc.moments.b == 0.0, "run_coverage: Gram scenarios need zero mean");
      require(std::isfinite(sc.moments.T4), "run_coverage: Gram scenarios need finite fourth moments");
      GramConfig c;
      c.T = sc.moments.T4;
      c.delta = delta;
      const GramDirectional e(sc.x, c, true);
      CounterRng dr = CounterRng(s.seed).substream(0xD1AEC7ULL);
      detail::TrialOutcome o;
      double rmax = 0.0;
      for (int k = 0; k < opt.gram_directions; ++k) {
        const Vector th = detail::random_unit(dr, s.d);
        const double truth = sc.moments.e2(th);
        const double est = e(th);
        const double b = gram_bound(sc.moments.e4(th), c.T, s.n, delta);
        rmax = std::max(rmax, b);
        ++o.checks;
        o.failures += lower ? (est > truth) : (truth > est + b);
      }
      o.radius = rmax;
      out[t] = o;
    };
  } else if (estimator == "regression-region") {
    body = [&](std::size_t t) {
      const RegressionScenario sc = generate_regression(trial_spec(static_cast<int>(t)));
      PluginOptions po = opt.plugin;
      po.mc.seed = root.substream(2000003ULL + t).key();
      const PluginEstimates p = build_plugin(sc.data, sc.bounds, delta, po);
      const RegionSpec r = make_region(p, opt.ridge);
      out[t] = {1, region_contains(r, sc.theta_lambda(opt.ridge)) ? 0L : 1L, p.epsilon};
    };
  } else {
    throw DomainError("run_coverage: unknown estimator '" + estimator + "'");
  }
  parallel_for(static_cast<std::size_t>(trials), body, opt.threads);

  ExperimentReport rep;
  rep.estimator = estimator;
  rep.trials = trials;
  rep.nominal_delta = delta;
  std::vector<double> radii;
  for (const auto& o : out) {
    rep.checks += o.checks;
    rep.failures += o.failures;
    radii.push_back(o.radius);
  }
  std::sort(radii.begin(), radii.end());
  rep.radius_min = radii.front();
  rep.radius_max = radii.back();
  const std::size_t m = radii.size();
  rep.radius_median = m % 2 ? radii[m / 2] : 0.5 * (radii[m / 2 - 1] + radii[m / 2]);
  rep.failure_level = std::min(1.0, 2.0 * delta);
  rep.allowed = coverage_allowance(rep.checks, rep.failure_level);
  rep.passed = static_cast<double>(rep.failures) <= rep.allowed;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace heavytail
