#pragma once

// Second moments along directions. Lower bounds on E<theta, X>^2 built from
// the smoothed squared influence, the variant adaptive over a geometric
// family of smoothing levels, a quadratic form fitted above the directional
// bounds, and lower estimates of the Gram eigenvalues.

#include "heavytail/bundle.hpp"
#include "heavytail/core.hpp"
#include "heavytail/influence.hpp"
#include "heavytail/sphere.hpp"
#include "heavytail/vector_mean.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

namespace heavytail {

struct LambdaSearch {
  double log10_lo = -8.0;
  double log10_hi = 8.0;
  int points = 200;
  int refine_iter = 40;  ///< evaluation cap for the refinement around the best grid point
};

struct GramConfig {
  double T = 0.0;  ///< bound on E|X|^4
  double delta = 0.05;
  LambdaSearch lambda_search{};
  int k_max = -1;     ///< adaptive levels 0..k_max; negative: ceil(log(10 T n)) + 5
  double beta = 0.0;  ///< fixed-level smoothing; 0: sqrt(10 T n), the k = 0 level
};

struct DirectionalLowerBound {
  double value = 0.0;
  double lambda_star = 0.0;
  int k_star = -1;  ///< adaptive only
};

inline void validate(const GramConfig& c) {
  require(c.T > 0.0 && std::isfinite(c.T), "GramConfig: T must be positive");
  validate_delta(c.delta, "GramConfig");
  const auto& s = c.lambda_search;
  require(s.points >= 2 && s.log10_lo < s.log10_hi && s.refine_iter >= 0, "GramConfig: bad lambda grid");
  require(c.beta >= 0.0 && std::isfinite(c.beta), "GramConfig: beta must be nonnegative");
}

inline int default_gram_k_max(double T, long n) {
  return static_cast<int>(std::ceil(std::log(10.0 * T * static_cast<double>(n)))) + 5;
}

/// phi_sq(sqrt(lambda) <theta, x>, |x| / sqrt(beta)) - log(1 + |x|^2 / beta).
inline double a_penalized(const Vector& theta, const Vector& x, double lambda, double beta) {
  require(lambda > 0.0 && beta > 0.0, "a_penalized: lambda and beta must be positive");
  require(theta.size() == x.size(), "a_penalized: dimension mismatch");
  return phi_sq({std::sqrt(lambda) * theta.dot(x), x.norm() / std::sqrt(beta)}) - std::log1p(x.squaredNorm() / beta);
}

namespace detail {

// Away from |m + sW| = 1 the kernel is a polynomial or the constant 1/2 up to
// Gaussian tails below 1e-16.
inline constexpr double kSqTail = 8.5;

inline double sq_value(double m, double s) {
  const double am = std::abs(m);
  if (am + kSqTail * s <= 1.0) {
    const double m2 = m * m, s2 = s * s;
    return m2 + s2 - 0.5 * (m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2);
  }
  if (am - kSqTail * s >= 1.0) return 0.5;
  if (!closed_form_regime(am, s) || s < kDegenerateSigma) return smooth_sq(m, s).value;
  // Value-only closed form; the far boundary is skipped when out of reach.
  const double m2 = am * am, s2 = s * s;
  const double lo = (-1.0 - am) / s, hi = (1.0 - am) / s;
  const bool near_lo = lo > -kSqTail;
  const double below = near_lo ? std_normal_cdf(lo) : 0.0;
  const double above = std_normal_cdf(-hi);
  const double fl = near_lo ? std_normal_pdf(lo) : 0.0;
  const double fh = std_normal_pdf(hi);
  const double r2 = 0.5 * ((m2 - 1.0) * (m2 - 1.0) + (6.0 * m2 - 2.0) * s2 + 3.0 * s2 * s2) * (below + above) +
                    0.5 * s * (s2 * (3.0 - 5.0 * am) - (1.0 + am) * (1.0 - am) * (1.0 - am)) * fl +
                    0.5 * s * (s2 * (3.0 + 5.0 * am) - (1.0 - am) * (1.0 + am) * (1.0 + am)) * fh;
  return std::clamp(m2 + s2 - 0.5 * (m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2) + r2, 0.0, 0.5);
}

inline double sq_dm(double m, double s) {
  const double am = std::abs(m);
  if (am + kSqTail * s <= 1.0) return 2.0 * m * (1.0 - m * m - 3.0 * s * s);
  if (am - kSqTail * s >= 1.0) return 0.0;
  return smooth_sq(m, s).dm;
}

}  // namespace detail

/// Directional lower bound, maximized over lambda on a log grid and over the
/// smoothing levels (one level for the fixed-beta estimator).
class GramDirectional {
 public:
  GramDirectional(const VectorSample& x, const GramConfig& cfg, bool adaptive) : x_(x), cfg_(cfg) {
    validate_sample(x, "gram_directional");
    validate(cfg);
    const long n = x.rows();
    const double nn = static_cast<double>(n);
    r2_ = x.rowwise().squaredNorm();
    std::vector<std::pair<double, double>> lv;  // beta, log term
    if (adaptive) {
      const int km = cfg.k_max >= 0 ? cfg.k_max : default_gram_k_max(cfg.T, n);
      for (int k = 0; k <= km; ++k) {
        const double beta = std::sqrt(10.0 * cfg.T * nn / std::exp(static_cast<double>(k)));
        lv.emplace_back(beta, std::log((k + 1.0) * (k + 2.0) / cfg.delta));
      }
    } else {
      const double beta = cfg.beta > 0.0 ? cfg.beta : std::sqrt(10.0 * cfg.T * nn);
      lv.emplace_back(beta, std::log(1.0 / cfg.delta));
    }
    for (const auto& [beta, logterm] : lv) {
      Level l;
      l.beta = beta;
      l.s = r2_.cwiseSqrt() / std::sqrt(beta);
      l.s2 = l.s.squaredNorm();
      double c = -logterm - nn * cfg.T / (beta * beta);
      for (long i = 0; i < n; ++i) c -= std::log1p(r2_[i] / beta);
      l.c = c;
      l.pen = beta / (2.0 * nn);
      levels_.push_back(std::move(l));
    }
    adaptive_ = adaptive;
    const auto& s = cfg.lambda_search;
    grid_.resize(s.points);
    for (int j = 0; j < s.points; ++j)
      grid_[j] = std::pow(10.0, s.log10_lo + (s.log10_hi - s.log10_lo) * j / (s.points - 1.0));
  }

  DirectionalLowerBound eval(const Vector& theta, Vector* grad = nullptr) const {
    require_unit(theta, "gram_directional", 1e-10);
    const Vector a = x_ * theta;
    const long n = x_.rows();
    const double nn = static_cast<double>(n);
    const double a2 = a.squaredNorm();
    const int K = static_cast<int>(levels_.size());
    const int P = static_cast<int>(grid_.size());

    // Best-first search over (level, lambda). Keys start at an O(1) bound,
    // phi_sq(m, s) <= min(m^2 + s^2, 1/2), are tightened once by Jensen,
    // psi being concave, and only then replaced by the exact value.
    struct Node {
      double key;
      int stage;  // 0: O(1) bound, 1: Jensen bound
      int k, j;
      bool operator<(const Node& o) const {
        if (key != o.key) return key < o.key;
        if (k != o.k) return k > o.k;
        return j > o.j;
      }
    };
    std::vector<Node> heap;
    heap.reserve(static_cast<std::size_t>(K) * P);
    for (int k = 0; k < K; ++k) {
      const Level& l = levels_[k];
      for (int j = 0; j < P; ++j) {
        const double lam = grid_[j];
        const double ub =
            std::min(a2 / nn + (l.s2 + l.c) / (nn * lam), (0.5 * nn + l.c) / (nn * lam)) - l.pen;
        heap.push_back({ub, 0, k, j});
      }
    }
    std::make_heap(heap.begin(), heap.end());

    double best = -std::numeric_limits<double>::infinity();
    int bk = 0, bj = 0;
    while (!heap.empty() && heap.front().key > best) {
      std::pop_heap(heap.begin(), heap.end());
      Node nd = heap.back();
      heap.pop_back();
      if (nd.stage == 0) {
        nd.key = jensen(a, nd.k, grid_[nd.j]);
        nd.stage = 1;
        if (nd.key > best) {
          heap.push_back(nd);
          std::push_heap(heap.begin(), heap.end());
        }
        continue;
      }
      const double v = value(a, nd.k, grid_[nd.j]);
      if (v > best || (v == best && (nd.k < bk || (nd.k == bk && nd.j < bj)))) {
        best = v;
        bk = nd.k;
        bj = nd.j;
      }
    }
    if (!std::isfinite(best)) {
      // Every bound was -inf or nan; fall back to the plain grid maximum.
      for (int k = 0; k < K; ++k)
        for (int j = 0; j < P; ++j) {
          const double v = value(a, k, grid_[j]);
          if (v > best) {
            best = v;
            bk = k;
            bj = j;
          }
        }
    }

    double lam_star = grid_[bj];
    if (cfg_.lambda_search.refine_iter > 0) {
      // Brent's method (golden section with parabolic steps) in log lambda
      // between the grid neighbours of the best point.
      const double lo = std::log(grid_[std::max(bj - 1, 0)]);
      const double hi = std::log(grid_[std::min(bj + 1, P - 1)]);
      std::uintmax_t it = static_cast<std::uintmax_t>(cfg_.lambda_search.refine_iter);
      const auto r = boost::math::tools::brent_find_minima(
          [&](double u) { return -value(a, bk, std::exp(u)); }, lo, hi, 32, it);
      if (-r.second > best) {
        best = -r.second;
        lam_star = std::exp(r.first);
      }
    }

    if (grad) {
      // Envelope: derivative of the maximizing term at fixed (k, lambda).
      const Level& l = levels_[bk];
      const double sl = std::sqrt(lam_star);
      Vector w(n);
      for (long i = 0; i < n; ++i) w[i] = detail::sq_dm(sl * a[i], l.s[i]);
      *grad = x_.transpose() * w / (nn * sl);
    }
    DirectionalLowerBound out;
    out.value = best;
    out.lambda_star = lam_star;
    out.k_star = adaptive_ ? bk : -1;
    return out;
  }

  double operator()(const Vector& theta, Vector* grad = nullptr) const { return eval(theta, grad).value; }

  /// Objective at level k and scale lambda for projections a = X theta.
  double value(const Vector& a, int k, double lam) const {
    const Level& l = levels_[k];
    const double sl = std::sqrt(lam);
    double sum = 0.0;
    for (long i = 0; i < a.size(); ++i) sum += detail::sq_value(sl * a[i], l.s[i]);
    return (sum + l.c) / (static_cast<double>(a.size()) * lam) - l.pen;
  }

  int levels() const { return static_cast<int>(levels_.size()); }
  double level_beta(int k) const { return levels_[k].beta; }
  const std::vector<double>& grid() const { return grid_; }
  int dim() const { return static_cast<int>(x_.cols()); }

 private:
  struct Level {
    double beta = 0.0;
    Vector s;
    double s2 = 0.0;
    double c = 0.0;    ///< -sum log(1 + |x|^2/beta) - log term - n T / beta^2
    double pen = 0.0;  ///< beta / (2n)
  };

  // psi is concave, so phi_sq(m, s) <= psi(m^2 + s^2).
  double jensen(const Vector& a, int k, double lam) const {
    const Level& l = levels_[k];
    double sum = 0.0;
    for (long i = 0; i < a.size(); ++i) {
      const double t = lam * a[i] * a[i] + l.s[i] * l.s[i];
      sum += t < 1.0 ? t - 0.5 * t * t : 0.5;
    }
    return (sum + l.c) / (static_cast<double>(a.size()) * lam) - l.pen;
  }



  const VectorSample& x_;
  GramConfig cfg_;
  bool adaptive_ = false;
  Vector r2_;
  std::vector<Level> levels_;
  std::vector<double> grid_;
};

inline DirectionalLowerBound gram_directional(const VectorSample& x, const Vector& theta, const GramConfig& cfg) {
  return GramDirectional(x, cfg, false).eval(theta);
}

inline DirectionalLowerBound gram_directional_adaptive(const VectorSample& x, const Vector& theta,
                                                       const GramConfig& cfg) {
  return GramDirectional(x, cfg, true).eval(theta);
}

/// Width of the upper complement of the adaptive lower bound in a direction
/// with fourth moment e4 = E<theta, X>^4.
inline double gram_bound(double e4, double T, long n, double delta) {
  require(e4 > 0.0 && std::isfinite(e4), "gram_bound: fourth moment must be positive");
  require(T > 0.0 && std::isfinite(T), "gram_bound: T must be positive");
  require(e4 <= T, "gram_bound: fourth moment exceeds T");
  require(n >= 1, "gram_bound: n must be positive");
  validate_delta(delta, "gram_bound");
  const double ratio = T / e4;
  const double inner = 4.0 * std::log(0.5 * std::log(ratio) + 2.5) + 2.0 * std::log(1.0 / delta);
  return 2.0 * std::sqrt(e4 / static_cast<double>(n)) * (3.3 * std::pow(ratio, 0.25) + std::sqrt(inner));
}

struct GramEstimate {
  Matrix G_hat;
  double sup_gap = 0.0;
  double delta = 0.0;
  bool certified = false;
  Matrix G_low;  ///< quadratic form below the directional bounds
  FitDiagnostics diagnostics;
};

struct EigenEstimates {
  Vector sigma_hat;
};

struct GramFitOptions {
  SphereOptions search{64, 200, 1e-8, 0, 12};  ///< certificate searches: random starts, ascent limits, seed
  int screened = 4;        ///< certificate starts kept for ascent after ranking the random ones
  int quick_restarts = 1;  ///< random starts per search between certificates
  int warm_starts = 3;     ///< best cached directions reused per search
  int init_factor = 20;    ///< initial direction set of init_factor d^2 random directions
  int max_rounds = 60;     ///< exchange rounds before giving up certification
  BundleOptions bundle{};
  double tol = 1e-7;  ///< spread accuracy
};

namespace detail {

inline int sym_params(int d) { return d * (d + 1) / 2; }

/// Coefficients a with <theta, M theta> = a . vech(M).
inline Vector quad_features(const Vector& th) {
  const int d = static_cast<int>(th.size());
  Vector a(sym_params(d));
  int p = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) a[p++] = (i == j ? 1.0 : 2.0) * th[i] * th[j];
  return a;
}

inline Matrix sym_from_params(const Vector& v, int d) {
  Matrix m(d, d);
  int p = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) m(i, j) = m(j, i) = v[p++];
  return m;
}

/// Directions where the directional bound has been evaluated, with sphere
/// searches for the extreme gaps between a quadratic form and the bound.
class DirectionSet {
 public:
  DirectionSet(const GramDirectional& est, const GramFitOptions& opt) : est_(est), opt_(opt) {}

  double add(const Vector& th) {
    const double e = est_(th);
    add(th, e);
    return e;
  }

  void add(const Vector& th, double e) {
    for (const auto& q : feats_)
      if ((q - quad_features(th)).lpNorm<Eigen::Infinity>() <= 1e-12) return;
    dirs_.push_back(th);
    feats_.push_back(quad_features(th));
    vals_.push_back(e);
  }

  /// sign = +1: max over the set of q_M - E; sign = -1: max of E - q_M.
  std::pair<double, int> best_cached(const Vector& p, int sign) const {
    double b = -std::numeric_limits<double>::infinity();
    int at = -1;
    for (int j = 0; j < size(); ++j) {
      const double g = sign * (feats_[j].dot(p) - vals_[j]);
      if (g > b) {
        b = g;
        at = j;
      }
    }
    return {b, at};
  }

  /// Local ascents of sign (q_M - E) from the best cached directions and
  /// from random starts; thorough searches rank opt.search.restarts random
  /// starts and ascend from the best opt.screened of them.
  SphereResult search(const Matrix& M, int sign, bool thorough, const std::vector<Vector>& extra = {}) {
    const int d = static_cast<int>(M.rows());
    SphereObjective obj = [&](const Vector& th, Vector* g) {
      const double e = est_(th, g);
      const Vector mt = M * th;
      if (g) *g = sign * (2.0 * mt - *g);
      return sign * (th.dot(mt) - e);
    };
    if (d == 1) {
      const double v = sign * (M(0, 0) - est_(Vector::Ones(1)));
      return SphereResult{Vector::Ones(1), v, 1};
    }
    std::vector<std::pair<double, int>> ranked;
    for (int j = 0; j < size(); ++j) ranked.emplace_back(sign * (dirs_[j].dot(M * dirs_[j]) - vals_[j]), j);
    const int w = std::min<int>(opt_.warm_starts, size());
    std::partial_sort(ranked.begin(), ranked.begin() + w, ranked.end(), std::greater<>());
    std::vector<Vector> starts;
    for (int j = 0; j < w; ++j) starts.push_back(dirs_[ranked[j].second]);
    for (const auto& v : extra) starts.push_back(v);
    CounterRng rng(opt_.search.seed + 0x9E37ULL * static_cast<std::uint64_t>(++calls_));
    if (thorough) {
      std::vector<std::pair<double, Vector>> cand;
      for (int r = 0; r < opt_.search.restarts; ++r) {
        CounterRng sub = rng.substream(static_cast<std::uint64_t>(r));
        const Vector th = random_unit(d, sub);
        const double e = add(th);
        cand.emplace_back(sign * (th.dot(M * th) - e), th);
      }
      const int keep = std::min<int>(opt_.screened, static_cast<int>(cand.size()));
      std::partial_sort(cand.begin(), cand.begin() + keep, cand.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first; });
      for (int j = 0; j < keep; ++j) starts.push_back(cand[j].second);
    } else {
      for (int r = 0; r < opt_.quick_restarts; ++r) {
        CounterRng sub = rng.substream(static_cast<std::uint64_t>(r));
        starts.push_back(random_unit(d, sub));
      }
    }
    SphereOptions so = opt_.search;
    so.restarts = 0;
    SphereResult best;
    for (const auto& s : starts) {
      SphereResult r = sphere_ascent(obj, s, so);
      add(r.theta, r.theta.dot(M * r.theta) - sign * r.value);
      if (r.value > best.value || best.theta.size() == 0) best = std::move(r);
    }
    return best;
  }

  int size() const { return static_cast<int>(dirs_.size()); }
  const std::vector<Vector>& features() const { return feats_; }
  const std::vector<double>& values() const { return vals_; }

 private:
  const GramDirectional& est_;
  const GramFitOptions& opt_;
  std::vector<Vector> dirs_, feats_;
  std::vector<double> vals_;
  std::uint64_t calls_ = 0;
};

inline Matrix clip_psd(const Matrix& m, double* clipped = nullptr) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  Vector ev = es.eigenvalues();
  double worst = 0.0;
  for (int i = 0; i < ev.size(); ++i)
    if (ev[i] < 0.0) {
      worst = std::max(worst, -ev[i]);
      ev[i] = 0.0;
    }
  if (clipped) *clipped = worst;
  Matrix out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

/// Symmetric PSD G_hat with <theta, G_hat theta> >= E(theta) at every probed
/// direction, minimizing the probed sup of the gap. The spread
/// sup(q_M - E) + sup(E - q_M) is convex in M and unchanged by M + cI, so it
/// is minimized first and the minimizer shifted up afterwards. Exchange
/// method: the spread is minimized over a finite direction set, sphere
/// searches look for directions the set misses, and those are added.
inline GramEstimate fit_gram(const VectorSample& x, const GramConfig& cfg, const GramFitOptions& opt = {}) {
  GramDirectional est(x, cfg, true);
  const int d = est.dim();
  detail::DirectionSet set(est, opt);

  CounterRng rng(opt.search.seed ^ 0x5DEECE66DULL);
  for (int i = 0; i < d; ++i) set.add(Vector::Unit(d, i));
  const int m0n = d == 1 ? 0 : std::max(opt.init_factor * d * d, detail::sym_params(d) + 1);
  for (int r = 0; r < m0n; ++r) {
    CounterRng sub = rng.substream(static_cast<std::uint64_t>(r));
    set.add(random_unit(d, sub));
  }
  Vector p;
  {
    const int k = set.size(), D = detail::sym_params(d);
    Matrix F(k, D);
    Vector y(k);
    for (int j = 0; j < k; ++j) {
      F.row(j) = set.features()[j].transpose();
      y[j] = set.values()[j];
    }
    p = F.colPivHouseholderQr().solve(y);
  }

  // Spread over the finite set; cuts are exact, so the bundle converges.
  CutOracle finite = [&](const Vector& q, const std::vector<Cut>&, bool) {
    const auto [hv, hj] = set.best_cached(q, +1);
    const auto [lv, lj] = set.best_cached(q, -1);
    Cut c;
    c.a = set.features()[hj] - set.features()[lj];
    c.value = hv + lv;
    c.e = c.a.dot(q) - c.value;
    return c;
  };

  GramEstimate out;
  out.delta = cfg.delta;
  BundleOptions bo = opt.bundle;
  bo.tol = opt.tol;
  SphereResult hi, lo;
  bool done = false;
  int rounds = 0;
  for (; rounds < opt.max_rounds && !done; ++rounds) {
    FitDiagnostics dg;
    p = minimize_sup_affine(finite, p, 0.0, bo, &dg);
    out.diagnostics.iterations += dg.iterations;
    const Matrix M = detail::sym_from_params(p, d);
    const double spread = set.best_cached(p, +1).first + set.best_cached(p, -1).first;
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    for (bool thorough : {false, true}) {
      hi = set.search(M, +1, thorough, {es.eigenvectors().col(d - 1)});
      lo = set.search(M, -1, thorough, {es.eigenvectors().col(0)});
      out.diagnostics.oracle_calls += 2;
      if (hi.value + lo.value > spread + opt.tol) break;
      if (thorough) done = true;
    }
  }
  out.diagnostics.cuts = set.size();

  const Matrix M = detail::sym_from_params(p, d);
  const Matrix I = Matrix::Identity(d, d);
  // lo.value = max (E - q_M), hi.value = max (q_M - E).
  Matrix G = M + lo.value * I;
  out.G_low = M - hi.value * I;
  out.sup_gap = std::max(0.0, hi.value + lo.value);
  double clipped = 0.0;
  out.G_hat = detail::clip_psd(G, &clipped);
  if (clipped > 1e-10) {
    // Raising eigenvalues keeps feasibility but can widen the gap.
    const SphereResult r = set.search(out.G_hat, +1, true);
    out.sup_gap = std::max(out.sup_gap, r.value);
  }
  out.certified = done && out.G_hat.allFinite();
  out.diagnostics.gap = out.sup_gap;
  out.diagnostics.reached_target = done;
  return out;
}

/// Lower estimates of the Gram eigenvalues: eigenvalues of the fitted form
/// below the directional bounds, the top one refined by direct ascent.
inline EigenEstimates estimate_eigenvalues(const VectorSample& x, const GramConfig& cfg, const GramEstimate& fit,
                                           const GramFitOptions& opt = {}) {
  GramDirectional est(x, cfg, true);
  const int d = est.dim();
  require(fit.G_low.rows() == d && fit.G_hat.rows() == d, "estimate_eigenvalues: fit does not match sample");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (fit.G_low + fit.G_low.transpose()));
  Vector ev = es.eigenvalues().reverse();
  Eigen::SelfAdjointEigenSolver<Matrix> eh(fit.G_hat);
  detail::DirectionSet set(est, opt);
  // Maximizing E - q_0 is maximizing E.
  const SphereResult top =
      set.search(Matrix::Zero(d, d), -1, true, {eh.eigenvectors().col(d - 1), es.eigenvectors().col(d - 1)});
  ev[0] = std::max(ev[0], top.value);
  EigenEstimates out;
  out.sigma_hat = ev.cwiseMax(0.0);
  for (int i = 1; i < d; ++i) out.sigma_hat[i] = std::min(out.sigma_hat[i], out.sigma_hat[i - 1]);
  return out;
}

inline EigenEstimates estimate_eigenvalues(const VectorSample& x, const GramConfig& cfg,
                                           const GramFitOptions& opt = {}) {
  return estimate_eigenvalues(x, cfg, fit_gram(x, cfg, opt), opt);
}

}  // namespace heavytail
