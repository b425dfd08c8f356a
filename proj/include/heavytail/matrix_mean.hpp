#pragma once

// Mean of a random p x q matrix in operator norm.
//
// The bilinear estimator E(xi, theta) smooths xi and theta with independent
// Gaussians. The xi layer and the polynomial part of the theta layer are
// integrated exactly; only the correction r is averaged over a fixed set of
// draws W_1..W_K shared by every direction pair, so the estimator stays a
// smooth deterministic function of (xi, theta).

#include "heavytail/bundle.hpp"
#include "heavytail/core.hpp"
#include "heavytail/influence.hpp"
#include "heavytail/rng.hpp"
#include "heavytail/sphere.hpp"
#include "heavytail/vector_mean.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace heavytail {

struct MatrixSample {
  int p = 0;
  int q = 0;
  std::vector<Matrix> data;

  long size() const { return static_cast<long>(data.size()); }

  /// One observation per row, each flattened row-major.
  static MatrixSample from_rows(const Matrix& rows, int p, int q) {
    require(p >= 1 && q >= 1, "MatrixSample: shape must be positive");
    require(rows.cols() == static_cast<long>(p) * q, "MatrixSample: row length does not match rows*cols");
    MatrixSample s;
    s.p = p;
    s.q = q;
    s.data.reserve(rows.rows());
    for (long i = 0; i < rows.rows(); ++i) {
      Matrix m(p, q);
      for (int a = 0; a < p; ++a)
        for (int b = 0; b < q; ++b) m(a, b) = rows(i, static_cast<long>(a) * q + b);
      s.data.push_back(std::move(m));
    }
    return s;
  }

  /// n x (p q) matrix of column-major vectorizations, matching vec(m).
  Matrix vectorized() const {
    Matrix out(size(), static_cast<long>(p) * q);
    for (long i = 0; i < size(); ++i) out.row(i) = Eigen::Map<const Vector>(data[i].data(), data[i].size()).transpose();
    return out;
  }
};

inline void validate(const MatrixSample& s) {
  require(s.size() >= 1, "MatrixSample: empty sample");
  require(s.p >= 1 && s.q >= 1, "MatrixSample: shape must be positive");
  for (const auto& m : s.data) {
    require(m.rows() == s.p && m.cols() == s.q, "MatrixSample: inconsistent shapes");
    require(m.allFinite(), "MatrixSample: non-finite entries");
  }
}

inline Matrix unvec(const Vector& v, int p, int q) { return Eigen::Map<const Matrix>(v.data(), p, q); }
inline Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

struct MatMomentBounds {
  double v = 0.0;     ///< sup E<xi, M theta>^2
  double t = 0.0;     ///< sup_theta E|M theta|^2
  double u = 0.0;     ///< sup_xi E|M' xi|^2
  double T = 0.0;     ///< E|M|_HS^2
  double v_hs = 0.0;  ///< sup over HS-unit Theta of E<Theta, M>^2; 0 means "use v"

  double hs_directional() const { return v_hs > 0.0 ? v_hs : v; }
};

inline void validate(const MatMomentBounds& b) {
  require(b.v > 0.0 && b.v <= b.t && b.v <= b.u && b.t <= b.T && b.u <= b.T && std::isfinite(b.T),
          "MatMomentBounds: need 0 < v <= t, u <= T");
  require(b.v_hs == 0.0 || (b.v_hs >= b.v && b.v_hs <= b.T), "MatMomentBounds: need v <= v_hs <= T");
}

struct CenteredMatMomentBounds {
  double v_bar = 0.0, t_bar = 0.0, u_bar = 0.0, T_bar = 0.0;
  double b = 0.0;  ///< bound on |E M|_op^2
  double c = 0.0;  ///< bound on |E M|_HS^2
  double v_hs_bar = 0.0;
};

inline void validate(const CenteredMatMomentBounds& cb) {
  validate(MatMomentBounds{cb.v_bar, cb.t_bar, cb.u_bar, cb.T_bar, cb.v_hs_bar});
  require(cb.b >= 0.0 && cb.b <= cb.c && std::isfinite(cb.c), "CenteredMatMomentBounds: need 0 <= b <= c");
}

struct BilinearScaleParams {
  double lambda = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

struct McConfig {
  int n_draws = 1000;
  std::uint64_t seed = 0;
};

struct MatrixEstimate {
  Matrix m_hat;
  double op_radius = 0.0;
  std::optional<double> hs_radius;
  double delta = 0.0;
  bool certified = false;
  double mc_stderr = 0.0;
  double op_gap = 0.0;
  std::optional<double> hs_gap;
  double constant_C = 0.0;  ///< adaptive estimator only
  FitDiagnostics diagnostics;
};

struct MatrixParamChoice {
  BilinearScaleParams params;
  double B_n = 0.0;
};

/// Deviation bound for explicit (lambda-optimal) beta, gamma.
inline double bilinear_bound(long n, const MatMomentBounds& b, double beta, double gamma, double delta) {
  const double var = b.v + b.t / beta + b.u / gamma + b.T / (beta * gamma);
  return std::sqrt(var * (beta + gamma + 2.0 * std::log(1.0 / delta)) / static_cast<double>(n));
}

inline MatrixParamChoice select_params_matrix(long n, const MatMomentBounds& b, double delta) {
  require(n >= 1, "select_params_matrix: n must be positive");
  validate_delta(delta, "select_params_matrix");
  validate(b);
  MatrixParamChoice out;
  const double s = 2.0 * std::max((b.t + b.u) / b.v, std::sqrt(b.T / b.v));
  out.params.beta = out.params.gamma = s;
  const double var = b.v + b.t / s + b.u / s + b.T / (s * s);
  out.params.lambda = std::sqrt((2.0 * s + 2.0 * std::log(1.0 / delta)) / (static_cast<double>(n) * var));
  out.B_n = bilinear_bound(n, b, s, s, delta);
  return out;
}

/// 4 max{(t+u)/v, sqrt(T/v)} + log(1/delta).
inline double matrix_complexity(const MatMomentBounds& b, double delta) {
  return 4.0 * std::max((b.t + b.u) / b.v, std::sqrt(b.T / b.v)) + std::log(1.0 / delta);
}

/// sqrt((2v/n)(2 log(1/delta) + 4 max{...})), the closed upper bound at beta = gamma = 2 max{...}.
inline double bilinear_bound_simplified(long n, const MatMomentBounds& b, double delta) {
  return std::sqrt(2.0 * b.v / static_cast<double>(n) *
                   (2.0 * std::log(1.0 / delta) + 4.0 * std::max((b.t + b.u) / b.v, std::sqrt(b.T / b.v))));
}

namespace detail {

/// Shared Gaussian draws and the products M_i W.
struct DrawCache {
  Matrix W;               // q x K
  std::vector<Matrix> P;  // M_i W, empty when too large to keep
  Matrix Pn2;             // n x K, |M_i W_k|^2
  double wmax = 0.0;      // max_k |W_k|
  Vector opn;             // spectral-norm bounds (Frobenius) of M_i

  DrawCache(const MatrixSample& s, const McConfig& mc) {
    require(mc.n_draws >= 1, "McConfig: n_draws must be positive");
    const int K = mc.n_draws;
    CounterRng rng(mc.seed ^ 0xB11EA5ULL);
    W.resize(s.q, K);
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < s.q; ++j) W(j, k) = rng.normal();
    wmax = W.colwise().norm().maxCoeff();
    const double bytes = 8.0 * static_cast<double>(s.size()) * s.p * K;
    const bool keep = bytes <= 64.0 * 1024 * 1024;
    Pn2.resize(s.size(), K);
    opn.resize(s.size());
    if (keep) P.reserve(s.size());
    for (long i = 0; i < s.size(); ++i) {
      Matrix pi = s.data[i] * W;
      Pn2.row(i) = pi.colwise().squaredNorm();
      opn[i] = s.data[i].norm();
      if (keep) P.push_back(std::move(pi));
    }
  }

  int draws() const { return static_cast<int>(W.cols()); }

  const Matrix& product(const MatrixSample& s, long i, Matrix& scratch) const {
    if (!P.empty()) return P[i];
    scratch.noalias() = s.data[i] * W;
    return scratch;
  }
};

}  // namespace detail

/// Typical smoothed argument above which an observation's term is averaged
/// directly instead of as expansion plus residual. Both are unbiased.
inline constexpr double kDirectScale = 4.0;

/// Explicit expansion plus Monte-Carlo correction of E(xi, theta).
class BilinearEstimator {
 public:
  BilinearEstimator(const MatrixSample& s, BilinearScaleParams prm, const McConfig& mc)
      : s_(s), prm_(prm), cache_(s, mc) {
    validate(s);
    require(prm.lambda > 0.0 && prm.beta > 0.0 && prm.gamma > 0.0 && std::isfinite(prm.lambda) &&
                std::isfinite(prm.beta) && std::isfinite(prm.gamma),
            "bilinear_estimate: lambda, beta, gamma must be positive");
    hs2_.resize(s.size());
    for (long i = 0; i < s.size(); ++i) hs2_[i] = s.data[i].squaredNorm();
  }

  struct Value {
    double value = 0.0;
    double mc_stderr = 0.0;
    double explicit_part = 0.0;
  };

  Value evaluate(const Vector& xi, const Vector& theta, Vector* gxi = nullptr, Vector* gth = nullptr,
                 bool want_stderr = false) const {
    const long n = s_.size();
    const int K = cache_.draws();
    const double lam = prm_.lambda, beta = prm_.beta, gamma = prm_.gamma;
    const double l2 = lam * lam;
    const double rg = 1.0 / std::sqrt(gamma), rb = 1.0 / std::sqrt(beta);
    const bool grads = gxi && gth;
    if (grads) {
      gxi->setZero(s_.p);
      gth->setZero(s_.q);
    }
    double expl = 0.0;
    Vector resid = Vector::Zero(K);
    Vector y(s_.p), z(s_.q), mty(s_.q), mz(s_.p), u(K), w(K), rm(K), rs(K);
    Matrix scratch;
    for (long i = 0; i < n; ++i) {
      const Matrix& M = s_.data[i];
      y.noalias() = M * theta;
      z.noalias() = M.transpose() * xi;
      mty.noalias() = M.transpose() * y;
      const double a = xi.dot(y), y2 = y.squaredNorm(), z2 = z.squaredNorm(), h = hs2_[i];
      const double c = z.dot(mty);
      const double coef = 1.0 - l2 * a * a / 2.0 - l2 * y2 / (2.0 * beta) - l2 * z2 / (2.0 * gamma) -
                          l2 * h / (2.0 * beta * gamma);
      const double ei = a * coef + l2 * a * a * a / 3.0 - l2 * c / (beta * gamma);
      expl += ei;
      // Far outside the polynomial piece the residual cancels a cubic and its
      // draws scatter like (lambda |M|)^3; average the bounded phi directly.
      const double typical = lam * (std::abs(a) + rg * std::sqrt(z2) + rb * std::sqrt(y2 + h / gamma));
      const bool direct = typical > kDirectScale;
      if (grads && !direct) {
        mz.noalias() = M * z;
        *gxi += coef * y - (l2 * a / gamma) * mz - (l2 / (beta * gamma)) * (M * mty);
        *gth += coef * z - (l2 * a / beta) * mty - (l2 / (beta * gamma)) * (M.transpose() * mz);
      }
      // Skip observations whose smoothed argument stays inside the
      // polynomial piece for every draw; the correction is then ~ 0.
      const double m_hi = lam * (std::abs(a) + z.norm() * cache_.wmax * rg);
      const double s_hi = lam * rb * (std::sqrt(y2) + cache_.opn[i] * cache_.wmax * rg);
      if (!direct && m_hi + 8.0 * s_hi < kSqrt2) continue;
      const Matrix& Pi = cache_.product(s_, i, scratch);
      u.noalias() = Pi.transpose() * xi;
      w.noalias() = Pi.transpose() * y;
      bool any = false;
      for (int k = 0; k < K; ++k) {
        const double m = lam * (a + rg * u[k]);
        const double yy = std::max(y2 + 2.0 * rg * w[k] + cache_.Pn2(i, k) / gamma, 0.0);
        const double sg = lam * rb * std::sqrt(yy);
        rm[k] = rs[k] = 0.0;
        if (!direct && std::abs(m) + 8.0 * sg < kSqrt2) continue;
        const SmoothEval e = direct ? smooth_sym(m, sg) : residual_sym(m, sg);
        resid[k] += direct ? e.value - lam * ei : e.value;
        any = true;
        if (grads) {
          rm[k] = e.dm;
          rs[k] = yy > 0.0 ? e.ds * rb / std::sqrt(yy) : 0.0;
        }
      }
      if (grads && any) {
        *gxi += (rm.sum() / K) * y + (rg / K) * (Pi * rm);
        const Vector comb = rs.sum() * y + rg * (Pi * rs);
        *gth += (rm.sum() / K) * z + M.transpose() * comb / K;
      }
    }
    const double nn = static_cast<double>(n);
    Value out;
    out.explicit_part = expl / nn;
    out.value = out.explicit_part + resid.sum() / (lam * nn * K);
    if (grads) {
      *gxi /= nn;
      *gth /= nn;
    }
    if (want_stderr && K > 1) {
      const Vector R = resid / (lam * nn);
      const double mean = R.mean();
      out.mc_stderr = std::sqrt((R.array() - mean).square().sum() / (K - 1) / K);
    }
    return out;
  }

  const MatrixSample& sample() const { return s_; }
  const BilinearScaleParams& params() const { return prm_; }

 private:
  const MatrixSample& s_;
  BilinearScaleParams prm_;
  detail::DrawCache cache_;
  Vector hs2_;
};

struct BilinearResult {
  double value = 0.0;
  double mc_stderr = 0.0;
};

inline BilinearResult bilinear_estimate(const MatrixSample& s, const Vector& xi, const Vector& theta,
                                        BilinearScaleParams prm, const McConfig& mc) {
  require(xi.size() == s.p && theta.size() == s.q, "bilinear_estimate: direction sizes do not match the sample");
  require_unit(xi, "bilinear_estimate");
  require_unit(theta, "bilinear_estimate");
  BilinearEstimator est(s, prm, mc);
  const auto v = est.evaluate(xi, theta, nullptr, nullptr, true);
  return {v.value, v.mc_stderr};
}

/// Value and block gradients of a bilinear-type estimator at unit (xi, theta).
using PairOracle = std::function<double(const Vector& xi, const Vector& theta, Vector* gxi, Vector* gth)>;

struct MatrixFitOptions {
  double tol = 1e-9;
  SphereOptions search{};
  int quick_restarts = 2;
  int warm_cuts = 4;
  BundleOptions bundle{};
};

namespace detail {

/// (xi, theta) with xi theta' = A for a rank-one A of unit HS norm.
inline std::pair<Vector, Vector> rank_one_factors(const Matrix& A) {
  Eigen::Index j = 0;
  A.colwise().norm().maxCoeff(&j);
  Vector xi = A.col(j);
  const double nx = xi.norm();
  if (nx > 0.0) xi /= nx;
  Vector th = A.transpose() * xi;
  const double nt = th.norm();
  if (nt > 0.0) th /= nt;
  return {xi, th};
}

struct PairSearch {
  const PairOracle& est;
  int p, q;
  const Matrix& m0;
  const MatrixFitOptions& opt;
  int calls = 0;
  Vector last_xi, last_theta;

  Cut operator()(const Vector& mv, const std::vector<Cut>& hints, bool thorough) {
    const Matrix m = unvec(mv, p, q);
    SphereObjective obj = [&](const Vector& x, Vector* g) {
      const Vector xi = x.head(p), th = x.tail(q);
      Vector gx, gt;
      const double e = est(xi, th, g ? &gx : nullptr, g ? &gt : nullptr);
      if (g) {
        g->resize(p + q);
        g->head(p) = m * th - gx;
        g->tail(q) = m.transpose() * xi - gt;
      }
      return xi.dot(m * th) - e;
    };
    std::vector<Vector> warm;
    const Matrix diff = m - m0;
    if (diff.norm() > 0.0 && p > 1 && q > 1) {
      Eigen::JacobiSVD<Matrix> svd(diff, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const int r = std::min<int>(2, static_cast<int>(svd.singularValues().size()));
      for (int j = 0; j < r; ++j) {
        Vector x(p + q);
        x << svd.matrixU().col(j), svd.matrixV().col(j);
        warm.push_back(x);
        x.head(p) *= -1.0;
        warm.push_back(x);
      }
    }
    std::vector<std::pair<double, int>> ranked;
    for (int j = 0; j < static_cast<int>(hints.size()); ++j) ranked.emplace_back(hints[j].a.dot(mv) - hints[j].e, j);
    std::sort(ranked.begin(), ranked.end(), std::greater<>());
    for (int j = 0; j < std::min<int>(opt.warm_cuts, static_cast<int>(ranked.size())); ++j) {
      const auto [xi, th] = rank_one_factors(unvec(hints[ranked[j].second].a, p, q));
      if (xi.norm() > 0.0 && th.norm() > 0.0) {
        Vector x(p + q);
        x << xi, th;
        warm.push_back(x);
      }
    }
    SphereOptions so = opt.search;
    so.seed = opt.search.seed + 0x51ED27ULL * static_cast<std::uint64_t>(++calls);
    if (!thorough) so.restarts = opt.quick_restarts;
    const SphereResult r = product_sphere_maximize(obj, {p, q}, warm, so);
    last_xi = r.theta.head(p);
    last_theta = r.theta.tail(q);
    Cut c;
    c.a = vec(last_xi * last_theta.transpose());
    c.value = r.value;
    c.e = c.a.dot(mv) - r.value;
    return c;
  }
};

inline Matrix entrywise_start(const PairOracle& est, int p, int q) {
  Matrix m0(p, q);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < q; ++b) m0(a, b) = est(Vector::Unit(p, a), Vector::Unit(q, b), nullptr, nullptr);
  return m0;
}

inline PairOracle pair_oracle(const BilinearEstimator& est) {
  return [&est](const Vector& xi, const Vector& th, Vector* gx, Vector* gt) {
    return est.evaluate(xi, th, gx, gt).value;
  };
}

/// Minimizes sup (<xi, m theta> - E(xi, theta)) down to `target`.
inline Matrix fit_pairs(const PairOracle& est, int p, int q, double target, const MatrixFitOptions& opt,
                        FitDiagnostics* diag, Vector* worst_xi = nullptr, Vector* worst_theta = nullptr) {
  const Matrix m0 = entrywise_start(est, p, q);
  PairSearch search{est, p, q, m0, opt};
  CutOracle oracle = std::ref(search);
  BundleOptions bo = opt.bundle;
  bo.tol = opt.tol;
  bo.max_cuts = std::min(bo.max_cuts, 50 * p * q);
  const Vector m = minimize_sup_affine(oracle, vec(m0), target, bo, diag);
  if (worst_xi) *worst_xi = search.last_xi;
  if (worst_theta) *worst_theta = search.last_theta;
  return unvec(m, p, q);
}

}  // namespace detail

/// Operator-norm fit with certified radius 2 B_n once the gap reaches B_n.
inline MatrixEstimate fit_matrix_operator_at(const MatrixSample& s, const MatMomentBounds& b, double delta,
                                             const McConfig& mc, double target, const MatrixFitOptions& opt = {}) {
  validate(s);
  const MatrixParamChoice choice = select_params_matrix(s.size(), b, delta);
  BilinearEstimator est(s, choice.params, mc);
  const PairOracle po = detail::pair_oracle(est);
  MatrixEstimate out;
  out.delta = delta;
  Vector wx, wt;
  out.m_hat = detail::fit_pairs(po, s.p, s.q, target, opt, &out.diagnostics, &wx, &wt);
  out.op_gap = out.diagnostics.gap;
  out.op_radius = 2.0 * target;
  out.certified = out.diagnostics.reached_target;
  if (wx.size() == s.p && wt.size() == s.q) out.mc_stderr = est.evaluate(wx, wt, nullptr, nullptr, true).mc_stderr;
  return out;
}

inline MatrixEstimate fit_matrix_operator(const MatrixSample& s, const MatMomentBounds& b, double delta,
                                          const McConfig& mc = {}, const MatrixFitOptions& opt = {}) {
  validate(s);
  const double B = select_params_matrix(s.size(), b, delta).B_n;
  return fit_matrix_operator_at(s, b, delta, mc, B, opt);
}

/// Hilbert-Schmidt radius A_n = sqrt(T/n) + sqrt(2 v_hs log(1/delta) / n).
inline double hs_bound(long n, const MatMomentBounds& b, double delta) {
  return deviation_radius(n, {b.hs_directional(), b.T}, delta);
}

/// Both constraint families at once; each pipeline runs at level delta, so the
/// pair of radii holds with probability 1 - 2 delta.
inline MatrixEstimate fit_matrix_combined(const MatrixSample& s, const MatMomentBounds& b, double delta,
                                          const McConfig& mc = {}, const MatrixFitOptions& opt = {}) {
  validate(s);
  const long n = s.size();
  const int p = s.p, q = s.q;
  const MatrixParamChoice choice = select_params_matrix(n, b, delta);
  const double B = choice.B_n;
  const double A = hs_bound(n, b, delta);
  BilinearEstimator est(s, choice.params, mc);
  const PairOracle po = detail::pair_oracle(est);
  const Matrix flat = s.vectorized();
  DirectionalMean hs(flat, select_params_uncentered(n, {b.hs_directional(), b.T}, delta));

  const Matrix m0 = detail::entrywise_start(po, p, q);
  detail::PairSearch op_search{po, p, q, m0, opt};
  int hs_calls = 0;
  auto hs_cut = [&](const Vector& mv, const std::vector<Cut>& hints, bool thorough) {
    SphereObjective obj = [&](const Vector& th, Vector* g) {
      const double e = hs(th, g);
      if (g) *g = mv - *g;
      return th.dot(mv) - e;
    };
    std::vector<Vector> warm;
    const Vector shift = mv - vec(m0);
    if (shift.norm() > 0.0) {
      warm.push_back(shift);
      warm.push_back(-shift);
    }
    for (const auto& h : hints)
      if (warm.size() < 8) warm.push_back(h.a);
    SphereOptions so = opt.search;
    so.seed = opt.search.seed + 0xC0FFEEULL * static_cast<std::uint64_t>(++hs_calls);
    if (!thorough) so.restarts = opt.quick_restarts;
    const SphereResult r = sphere_maximize(obj, p * q, warm, so);
    Cut c;
    c.a = r.theta;
    c.value = r.value;
    c.e = c.a.dot(mv) - r.value;
    return c;
  };
  CutOracle joint = [&](const Vector& mv, const std::vector<Cut>& hints, bool thorough) {
    Cut co = op_search(mv, hints, thorough);
    Cut ch = hs_cut(mv, hints, thorough);
    co.value -= B;
    co.e += B;
    ch.value -= A;
    ch.e += A;
    return co.value >= ch.value ? co : ch;
  };
  BundleOptions bo = opt.bundle;
  bo.tol = opt.tol;
  bo.max_cuts = std::min(bo.max_cuts, 50 * p * q);
  MatrixEstimate out;
  out.delta = delta;
  const Vector m = minimize_sup_affine(joint, vec(m0), 0.0, bo, &out.diagnostics);
  out.m_hat = unvec(m, p, q);
  // Report each family's own gap from a fresh thorough search.
  const Cut fo = op_search(m, {}, true);
  const Cut fh = hs_cut(m, {}, true);
  out.op_gap = fo.value;
  out.hs_gap = fh.value;
  out.op_radius = 2.0 * B;
  out.hs_radius = 2.0 * A;
  out.certified = out.op_gap <= B + opt.tol && *out.hs_gap <= A + opt.tol && out.diagnostics.reached_target;
  out.mc_stderr = est.evaluate(op_search.last_xi, op_search.last_theta, nullptr, nullptr, true).mc_stderr;
  return out;
}

/// Stage-one constants (A, B) and the final bound C_{n,k} of the split estimator.
struct CenteredMatrixConstants {
  double A = 0.0;
  double B = 0.0;
  double C_nk = 0.0;
};

inline CenteredMatrixConstants centered_matrix_constants(long n, long k, const CenteredMatMomentBounds& cb,
                                                         double delta) {
  require(k >= 1 && k < n, "estimate_matrix_centered: split_k must lie in [1, n)");
  const double l4 = std::log(4.0 / delta), l2 = std::log(2.0 / delta);
  const double vb = cb.v_bar + cb.b;
  const double v_hs = (cb.v_hs_bar > 0.0 ? cb.v_hs_bar : cb.v_bar) + cb.c;
  CenteredMatrixConstants out;
  out.A = 4.0 * std::pow(std::sqrt(2.0 * v_hs * l4) + std::sqrt(cb.T_bar + cb.c), 2);
  out.B = 8.0 * vb * (2.0 * l4 + 4.0 * std::max((cb.t_bar + cb.u_bar + 2.0 * cb.b) / vb, std::sqrt((cb.T_bar + cb.c) / vb)));
  const double kk = static_cast<double>(k);
  const double v2 = cb.v_bar + out.B / kk;
  out.C_nk = std::sqrt(2.0 * v2 / static_cast<double>(n - k) *
                       (2.0 * l2 + 4.0 * std::max((cb.t_bar + cb.u_bar + 2.0 * out.B / kk) / v2,
                                                  std::sqrt((cb.T_bar + out.A / kk) / v2))));
  return out;
}

/// Combined fit on the first split_k matrices at level delta/2, operator fit
/// of the recentered remainder at level delta/2.
inline MatrixEstimate estimate_matrix_centered(const MatrixSample& s, const CenteredMatMomentBounds& cb, double delta,
                                               std::optional<long> split_k = std::nullopt, const McConfig& mc = {},
                                               const MatrixFitOptions& opt = {}) {
  validate(s);
  validate(cb);
  validate_delta(delta, "estimate_matrix_centered");
  const long n = s.size();
  const long k = split_k.value_or(default_split(n));
  const CenteredMatrixConstants cc = centered_matrix_constants(n, k, cb, delta);
  const double kk = static_cast<double>(k);

  MatrixSample first{s.p, s.q, {s.data.begin(), s.data.begin() + k}};
  MatMomentBounds b1{cb.v_bar + cb.b, cb.t_bar + cb.b, cb.u_bar + cb.b, cb.T_bar + cb.c,
                     (cb.v_hs_bar > 0.0 ? cb.v_hs_bar : cb.v_bar) + cb.c};
  b1.v_hs = std::min(std::max(b1.v_hs, b1.v), b1.T);
  const MatrixEstimate pre = fit_matrix_combined(first, b1, delta / 4.0, mc, opt);

  MatrixSample rest{s.p, s.q, {}};
  rest.data.reserve(n - k);
  for (long i = k; i < n; ++i) rest.data.push_back(s.data[i] - pre.m_hat);
  MatMomentBounds b2{cb.v_bar + cc.B / kk, cb.t_bar + cc.B / kk, cb.u_bar + cc.B / kk, cb.T_bar + cc.A / kk};
  // B can exceed A; any bound on t or u also bounds T, and raising T up to
  // max(t, u) leaves C_{n,k} unchanged.
  b2.T = std::max({b2.T, b2.t, b2.u});
  const double exact = select_params_matrix(n - k, b2, delta / 2.0).B_n;
  MatrixEstimate post = fit_matrix_operator_at(rest, b2, delta / 2.0, mc, std::max(exact, cc.C_nk), opt);

  MatrixEstimate out = post;
  out.m_hat = pre.m_hat + post.m_hat;
  out.op_radius = 2.0 * cc.C_nk;
  out.certified = pre.certified && post.certified;
  out.diagnostics.iterations += pre.diagnostics.iterations;
  out.diagnostics.oracle_calls += pre.diagnostics.oracle_calls;
  return out;
}

/// chi = max{sqrt(T/v*)/log(1/delta), 1}.
inline double optimal_chi(double T, double v_star, double delta) {
  return std::max(std::sqrt(T / v_star) / std::log(1.0 / delta), 1.0);
}

inline double adaptive_matrix_constant(double alpha, double delta, double chi, const MatMomentBounds& b,
                                       double sigma_guess) {
  const double ell = std::log(1.0 / delta);
  const double la = std::log(alpha);
  const double core = ell * b.v + (b.t + b.u) / chi + b.T / (ell * chi * chi);
  const double mismatch = std::abs(std::log(core / (2.0 * sigma_guess * sigma_guess * (1.0 + chi) * ell * ell)));
  return std::cosh(la / 2.0) +
         std::sqrt(alpha) / ((1.0 + chi) * ell) * std::log(mismatch / (std::numbers::sqrt2 * la) + 5.0 / std::numbers::sqrt2);
}

/// B(xi, theta) = 2 C sqrt((2(1+chi)/n)(v ell + (t+u)/chi + T/(chi^2 ell))).
inline double adaptive_matrix_bound(long n, double alpha, double delta, double chi, const MatMomentBounds& b,
                                    double sigma_guess) {
  const double ell = std::log(1.0 / delta);
  const double C = adaptive_matrix_constant(alpha, delta, chi, b, sigma_guess);
  return 2.0 * C *
         std::sqrt(2.0 * (1.0 + chi) / static_cast<double>(n) *
                   (b.v * ell + (b.t + b.u) / chi + b.T / (chi * chi * ell)));
}

/// E(xi, theta) = E+(xi, theta) - E+(-xi, theta) with beta = gamma = 2 chi log(1/delta).
class AdaptiveBilinear {
 public:
  AdaptiveBilinear(const MatrixSample& s, const AdaptiveGrid& grid, double chi, double delta, const McConfig& mc)
      : s_(s), grid_(grid), cache_(s, mc) {
    validate(s);
    validate(grid);
    validate_delta(delta, "adaptive_bilinear_estimate");
    require(chi > 0.0 && std::isfinite(chi), "adaptive_bilinear_estimate: chi must be positive");
    ell_ = std::log(1.0 / delta);
    beta_ = gamma_ = 2.0 * chi * ell_;
    ks_ = grid_indices(grid.resolved_k_max(s.size()));
    require(!ks_.empty(), "adaptive_bilinear_estimate: empty grid");
  }

  struct Side {
    double value = 0.0;
    int k = 0;
    double mc_stderr = 0.0;
  };

  Side plus(const Vector& xi, const Vector& theta, Vector* gxi = nullptr, Vector* gth = nullptr,
            bool want_stderr = false) const {
    const long n = s_.size();
    const int K = cache_.draws();
    const double rg = 1.0 / std::sqrt(gamma_), rb = 1.0 / std::sqrt(beta_);
    Matrix A(n, K), S(n, K), Y2(n, K);
    std::vector<Vector> ys(n), zs(n);
    Matrix scratch;
    double mean_pos = 0.0;
    // Per draw E(A + S W)_+ and P(A + S W > 0); psi_asym(t) <= min(t_+, 1(t > 0)/2).
    Matrix pos(n, K), prob(n, K);
    for (long i = 0; i < n; ++i) {
      const Matrix& M = s_.data[i];
      ys[i] = M * theta;
      zs[i] = M.transpose() * xi;
      const double a = xi.dot(ys[i]), y2 = ys[i].squaredNorm();
      const Matrix& Pi = cache_.product(s_, i, scratch);
      const Vector u = Pi.transpose() * xi;
      const Vector w = Pi.transpose() * ys[i];
      for (int k = 0; k < K; ++k) {
        A(i, k) = a + rg * u[k];
        Y2(i, k) = std::max(y2 + 2.0 * rg * w[k] + cache_.Pn2(i, k) / gamma_, 0.0);
        S(i, k) = rb * std::sqrt(Y2(i, k));
        if (S(i, k) > 0.0) {
          const double zz = A(i, k) / S(i, k);
          prob(i, k) = std_normal_cdf(zz);
          pos(i, k) = A(i, k) * prob(i, k) + S(i, k) * std_normal_pdf(zz);
        } else {
          prob(i, k) = A(i, k) > 0.0 ? 1.0 : 0.0;
          pos(i, k) = std::max(A(i, k), 0.0);
        }
        mean_pos += pos(i, k);
      }
    }
    const double nk = static_cast<double>(n) * K;
    mean_pos /= nk;
    struct Cand {
      double upper;
      int order;
    };
    std::vector<Cand> cands;
    for (int j = 0; j < static_cast<int>(ks_.size()); ++j) {
      const double lam = grid_.lambda(ks_[j], n);
      cands.push_back({std::min(mean_pos, 0.5 / lam) - penalty(ks_[j], lam), j});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& l, const Cand& r) { return l.upper > r.upper; });
    double best = -std::numeric_limits<double>::infinity();
    int best_order = -1;
    const bool derivs = gxi || want_stderr;
    Matrix cur_v(n, K), cur_m(n, K), cur_s(n, K), best_v, best_m, best_s;
    for (const auto& c : cands) {
      if (c.upper < best) break;
      const double lam = grid_.lambda(ks_[c.order], n);
      const double tight = (pos.array().min(prob.array() * (0.5 / lam))).sum() / nk - penalty(ks_[c.order], lam);
      if (tight < best) continue;
      double sum = 0.0;
      for (long i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k) {
          const SmoothEval e = smooth_asym(lam * A(i, k), lam * S(i, k));
          sum += e.value;
          if (derivs) {
            cur_v(i, k) = e.value;
            cur_m(i, k) = e.dm;
            cur_s(i, k) = e.ds;
          }
        }
      const double val = sum / (nk * lam) - penalty(ks_[c.order], lam);
      if (val > best || (val == best && c.order < best_order)) {
        best = val;
        best_order = c.order;
        if (derivs) {
          best_v.swap(cur_v);
          best_m.swap(cur_m);
          best_s.swap(cur_s);
          cur_v.resize(n, K);
          cur_m.resize(n, K);
          cur_s.resize(n, K);
        }
      }
    }
    Side out{best, ks_[best_order], 0.0};
    if (derivs) {
      const double lam = grid_.lambda(ks_[best_order], n);
      if (gxi) {
        gxi->setZero(s_.p);
        gth->setZero(s_.q);
        Vector dm(K), ds(K);
        for (long i = 0; i < n; ++i) {
          const Matrix& Pi = cache_.product(s_, i, scratch);
          for (int k = 0; k < K; ++k) {
            dm[k] = best_m(i, k);
            ds[k] = Y2(i, k) > 0.0 ? best_s(i, k) * rb / std::sqrt(Y2(i, k)) : 0.0;
          }
          *gxi += dm.sum() * ys[i] + rg * (Pi * dm);
          *gth += dm.sum() * zs[i] + s_.data[i].transpose() * (ds.sum() * ys[i] + rg * (Pi * ds));
        }
        *gxi /= nk;
        *gth /= nk;
      }
      if (want_stderr && K > 1) {
        const Vector R = best_v.colwise().sum().transpose() / (lam * static_cast<double>(n));
        const double mean = R.mean();
        out.mc_stderr = std::sqrt((R.array() - mean).square().sum() / (K - 1) / K);
      }
    }
    return out;
  }

  double operator()(const Vector& xi, const Vector& theta, Vector* gxi = nullptr, Vector* gth = nullptr) const {
    Vector gpx, gpt, gmx, gmt;
    const bool g = gxi && gth;
    const Side p = plus(xi, theta, g ? &gpx : nullptr, g ? &gpt : nullptr);
    const Side m = plus(-xi, theta, g ? &gmx : nullptr, g ? &gmt : nullptr);
    if (g) {
      *gxi = gpx + gmx;
      *gth = gpt - gmt;
    }
    return p.value - m.value;
  }

  double mc_stderr(const Vector& xi, const Vector& theta) const {
    const double a = plus(xi, theta, nullptr, nullptr, true).mc_stderr;
    const double b = plus(-xi, theta, nullptr, nullptr, true).mc_stderr;
    return std::sqrt(a * a + b * b);
  }

  double beta() const { return beta_; }

 private:
  double penalty(int k, double lam) const {
    const double nn = static_cast<double>(s_.size());
    return (beta_ + gamma_ + 2.0 * (ell_ - std::log(AdaptiveGrid::weight(k)))) / (2.0 * lam * nn);
  }

  const MatrixSample& s_;
  AdaptiveGrid grid_;
  detail::DrawCache cache_;
  double ell_ = 0.0, beta_ = 0.0, gamma_ = 0.0;
  std::vector<int> ks_;
};

inline double adaptive_bilinear_estimate(const MatrixSample& s, const Vector& xi, const Vector& theta,
                                         const AdaptiveGrid& grid, double chi, double delta, const McConfig& mc) {
  require(xi.size() == s.p && theta.size() == s.q, "adaptive_bilinear_estimate: direction sizes do not match");
  require_unit(xi, "adaptive_bilinear_estimate");
  require_unit(theta, "adaptive_bilinear_estimate");
  return AdaptiveBilinear(s, grid, chi, delta, mc)(xi, theta);
}

/// With diagnostic (v*, t*, u*, T) the radius 2 B is certified once the gap
/// is at most B; otherwise the fit runs to convergence and twice the gap is
/// reported, uncertified.
inline MatrixEstimate estimate_matrix_adaptive(const MatrixSample& s, const AdaptiveGrid& grid, double chi,
                                               double delta, const McConfig& mc = {},
                                               std::optional<MatMomentBounds> diagnostic = std::nullopt,
                                               const MatrixFitOptions& opt = {}) {
  validate(s);
  AdaptiveBilinear est(s, grid, chi, delta, mc);
  const PairOracle po = [&est](const Vector& xi, const Vector& th, Vector* gx, Vector* gt) { return est(xi, th, gx, gt); };
  MatrixEstimate out;
  out.delta = delta;
  double target = 1e-12;
  if (diagnostic) {
    validate(*diagnostic);
    out.constant_C = adaptive_matrix_constant(grid.alpha, delta, chi, *diagnostic, grid.sigma_guess);
    target = adaptive_matrix_bound(s.size(), grid.alpha, delta, chi, *diagnostic, grid.sigma_guess);
  }
  Vector wx, wt;
  out.m_hat = detail::fit_pairs(po, s.p, s.q, target, opt, &out.diagnostics, &wx, &wt);
  out.op_gap = out.diagnostics.gap;
  if (diagnostic) {
    out.op_radius = 2.0 * target;
    out.certified = out.diagnostics.reached_target;
  } else {
    out.op_radius = 2.0 * std::max(out.op_gap, 0.0);
  }
  if (wx.size() == s.p && wt.size() == s.q) out.mc_stderr = est.mc_stderr(wx, wt);
  return out;
}

}  // namespace heavytail
