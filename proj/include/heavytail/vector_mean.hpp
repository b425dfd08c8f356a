#pragma once

// Mean of a heavy-tailed random vector: smoothed directional estimators,
// their minimax center, the sample-split centered variant and the adaptive
// estimator over a geometric grid of scales.

#include "heavytail/bundle.hpp"
#include "heavytail/core.hpp"
#include "heavytail/influence.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace heavytail {

/// Rows are observations.
using VectorSample = Matrix;

struct VecMomentBounds {
  double v = 0.0;  ///< sup over unit theta of E<theta, X>^2
  double T = 0.0;  ///< E|X|^2
};

struct CenteredVecMomentBounds {
  double v_bar = 0.0;
  double T_bar = 0.0;
  double b = 0.0;  ///< bound on |E X|^2
};

struct ScaleParams {
  double lambda = 0.0;
  double beta = 0.0;
};

struct MeanEstimate {
  Vector m_hat;
  double radius = 0.0;
  double delta = 0.0;
  bool certified = false;
  double constant_C = 0.0;  ///< adaptive estimator only
  FitDiagnostics diagnostics;
};

struct MeanOptions {
  double tol = 1e-9;
  CenterOptions center{};
};

inline void validate_sample(const Matrix& x, const char* who) {
  require(x.rows() >= 1 && x.cols() >= 1, std::string(who) + ": empty sample");
  require(x.allFinite(), std::string(who) + ": sample has non-finite entries");
}

inline void validate_delta(double delta, const char* who) {
  require(delta > 0.0 && delta < 1.0, std::string(who) + ": delta must lie in (0, 1)");
}

inline void validate(const VecMomentBounds& b) {
  require(b.v > 0.0 && b.v <= b.T && std::isfinite(b.T), "VecMomentBounds: need 0 < v <= T");
}

inline void validate(const CenteredVecMomentBounds& b) {
  require(b.v_bar > 0.0 && b.v_bar <= b.T_bar && std::isfinite(b.T_bar),
          "CenteredVecMomentBounds: need 0 < v_bar <= T_bar");
  require(b.b >= 0.0 && std::isfinite(b.b), "CenteredVecMomentBounds: b must be nonnegative");
}

inline ScaleParams select_params_uncentered(long n, const VecMomentBounds& bounds, double delta) {
  require(n >= 1, "select_params_uncentered: n must be positive");
  validate_delta(delta, "select_params_uncentered");
  validate(bounds);
  ScaleParams p;
  p.lambda = std::sqrt(2.0 * std::log(1.0 / delta) / (static_cast<double>(n) * bounds.v));
  p.beta = std::sqrt(static_cast<double>(n) * bounds.T) * p.lambda;
  return p;
}

/// sqrt(T/n) + sqrt(2 v log(1/delta) / n); the estimate is within twice this.
inline double deviation_radius(long n, const VecMomentBounds& bounds, double delta) {
  require(n >= 1, "deviation_radius: n must be positive");
  validate_delta(delta, "deviation_radius");
  validate(bounds);
  const double nn = static_cast<double>(n);
  return std::sqrt(bounds.T / nn) + std::sqrt(2.0 * bounds.v * std::log(1.0 / delta) / nn);
}

/// (1/(n lambda)) sum_i phi_sym(lambda <theta, X_i>, lambda |X_i| / sqrt(beta)).
class DirectionalMean {
 public:
  DirectionalMean(const VectorSample& x, ScaleParams params) : x_(x), params_(params) {
    validate_sample(x, "directional_estimate");
    require(params.lambda > 0.0 && params.beta > 0.0 && std::isfinite(params.lambda) && std::isfinite(params.beta),
            "directional_estimate: lambda and beta must be positive");
    sig_ = x.rowwise().norm() * (params.lambda / std::sqrt(params.beta));
  }

  double operator()(const Vector& theta, Vector* grad = nullptr) const {
    require_unit(theta, "directional_estimate");
    const Vector a = x_ * theta;
    const double lam = params_.lambda;
    const long n = x_.rows();
    double sum = 0.0;
    Vector w(grad ? n : 0);
    for (long i = 0; i < n; ++i) {
      const SmoothEval e = smooth_sym(lam * a[i], sig_[i]);
      sum += e.value;
      if (grad) w[i] = e.dm;
    }
    if (grad) *grad = x_.transpose() * w / static_cast<double>(n);
    return sum / (static_cast<double>(n) * lam);
  }

  int dim() const { return static_cast<int>(x_.cols()); }

 private:
  const VectorSample& x_;
  ScaleParams params_;
  Vector sig_;
};

inline double directional_estimate(const VectorSample& x, const Vector& theta, ScaleParams params) {
  return DirectionalMean(x, params)(theta);
}

inline MeanEstimate estimate_mean_uncentered(const VectorSample& x, const VecMomentBounds& bounds, double delta,
                                             const MeanOptions& opt = {}) {
  validate_sample(x, "estimate_mean_uncentered");
  const long n = x.rows();
  const ScaleParams p = select_params_uncentered(n, bounds, delta);
  const double b = deviation_radius(n, bounds, delta);
  DirectionalMean est(x, p);
  MeanEstimate out;
  out.delta = delta;
  out.m_hat = fit_center(std::cref(est), est.dim(), b, opt.tol, opt.center, &out.diagnostics);
  out.radius = 2.0 * b;
  out.certified = out.diagnostics.reached_target;
  return out;
}

/// Stage-two deviation bound for the split estimator, at log(1/delta) = ell:
/// sqrt((T_bar + A/k)/(n-k)) + sqrt(2 (v_bar + A/k) ell / (n-k)) with
/// A = 4 (sqrt(T_bar + b) + sqrt(2 (v_bar + b) ell1))^2.
inline double centered_split_bound(long n, long k, const CenteredVecMomentBounds& cb, double ell1, double ell2) {
  require(k >= 1 && k < n, "centered_split_bound: split_k must lie in [1, n)");
  const double A = 4.0 * std::pow(std::sqrt(cb.T_bar + cb.b) + std::sqrt(2.0 * (cb.v_bar + cb.b) * ell1), 2);
  const double kk = static_cast<double>(k);
  const double rest = static_cast<double>(n - k);
  return std::sqrt((cb.T_bar + A / kk) / rest) + std::sqrt(2.0 * (cb.v_bar + A / kk) * ell2 / rest);
}

inline long default_split(long n) { return std::max(1L, std::min(n - 1, static_cast<long>(std::ceil(std::sqrt(static_cast<double>(n)))))); }

/// Pre-centers on the first split_k rows, then estimates the remainder.
/// Each stage runs at delta/2, so the radius holds with probability 1 - 2 delta overall.
inline MeanEstimate estimate_mean_centered(const VectorSample& x, const CenteredVecMomentBounds& cb, double delta,
                                           std::optional<long> split_k = std::nullopt, const MeanOptions& opt = {}) {
  validate_sample(x, "estimate_mean_centered");
  validate_delta(delta, "estimate_mean_centered");
  validate(cb);
  const long n = x.rows();
  const long k = split_k.value_or(default_split(n));
  require(k >= 1 && k < n, "estimate_mean_centered: split_k must lie in [1, n)");
  const double half = 0.5 * delta;
  const double ell = std::log(1.0 / half);

  const VectorSample first = x.topRows(k);
  MeanEstimate pre = estimate_mean_uncentered(first, {cb.v_bar + cb.b, cb.T_bar + cb.b}, half, opt);

  const double A = 4.0 * std::pow(std::sqrt(cb.T_bar + cb.b) + std::sqrt(2.0 * (cb.v_bar + cb.b) * ell), 2);
  const double kk = static_cast<double>(k);
  const VectorSample rest = x.bottomRows(n - k).rowwise() - pre.m_hat.transpose();
  MeanEstimate post = estimate_mean_uncentered(rest, {cb.v_bar + A / kk, cb.T_bar + A / kk}, half, opt);

  MeanEstimate out;
  out.delta = delta;
  out.m_hat = pre.m_hat + post.m_hat;
  out.radius = 2.0 * centered_split_bound(n, k, cb, ell, ell);
  out.certified = pre.certified && post.certified;
  out.diagnostics = post.diagnostics;
  out.diagnostics.iterations += pre.diagnostics.iterations;
  out.diagnostics.oracle_calls += pre.diagnostics.oracle_calls;
  return out;
}

/// Geometric scale grid lambda_k = alpha^k / (sigma sqrt(n)), |k| <= k_max,
/// with prior weights mu(lambda_0) = 1/2 and 1/(2(|k|+1)(|k|+2)) otherwise.
struct AdaptiveGrid {
  double sigma_guess = 1.0;
  double alpha = std::numbers::e;
  int k_max = -1;  ///< negative: ceil(log(n)/log(alpha)) + 30

  int resolved_k_max(long n) const {
    if (k_max >= 0) return k_max;
    return static_cast<int>(std::ceil(std::log(static_cast<double>(n)) / std::log(alpha))) + 30;
  }
  double lambda(int k, long n) const { return std::pow(alpha, k) / (sigma_guess * std::sqrt(static_cast<double>(n))); }
  static double weight(int k) {
    if (k == 0) return 0.5;
    const double a = std::abs(k);
    return 1.0 / (2.0 * (a + 1.0) * (a + 2.0));
  }
};

inline void validate(const AdaptiveGrid& g) {
  require(g.sigma_guess > 0.0 && std::isfinite(g.sigma_guess), "AdaptiveGrid: sigma_guess must be positive");
  require(g.alpha > 1.0 && std::isfinite(g.alpha), "AdaptiveGrid: alpha must exceed 1");
}

/// Grid indices ordered by the tie-break rule: smallest |k|, negative first.
inline std::vector<int> grid_indices(int k_max) {
  std::vector<int> ks;
  if (k_max < 0) return ks;
  ks.push_back(0);
  for (int a = 1; a <= k_max; ++a) {
    ks.push_back(-a);
    ks.push_back(a);
  }
  return ks;
}

/// Constant C of the adaptive vector bound 4 C sqrt(2 (2 v ell + T) / n).
inline double adaptive_vector_constant(double alpha, double delta, double v, double T, double sigma_guess) {
  const double ell = std::log(1.0 / delta);
  const double la = std::log(alpha);
  const double mismatch = std::abs(std::log((2.0 * v * ell + T) / (8.0 * sigma_guess * sigma_guess * ell * ell)));
  return std::cosh(la / 2.0) +
         std::sqrt(alpha) / (2.0 * ell) * std::log(mismatch / (std::numbers::sqrt2 * la) + 5.0 / std::numbers::sqrt2);
}

/// E(theta) = E+(theta) - E+(-theta), where E+ maximizes the penalized
/// asymmetric smoothed mean over the scale grid.
class AdaptiveDirectionalMean {
 public:
  AdaptiveDirectionalMean(const VectorSample& x, const AdaptiveGrid& grid, double beta, double delta)
      : x_(x), grid_(grid), beta_(beta), ell_(std::log(1.0 / delta)) {
    validate_sample(x, "adaptive_directional_estimate");
    validate(grid);
    validate_delta(delta, "adaptive_directional_estimate");
    require(beta > 0.0, "adaptive_directional_estimate: beta must be positive");
    ks_ = grid_indices(grid.resolved_k_max(x.rows()));
    require(!ks_.empty(), "adaptive_directional_estimate: empty grid");
    s_ = x.rowwise().norm() / std::sqrt(beta);
  }

  struct Side {
    double value;
    int k;
  };

  /// One-sided estimate, with Danskin gradient at the maximizing scale.
  Side plus(const Vector& theta, Vector* grad = nullptr) const {
    const long n = x_.rows();
    const double nn = static_cast<double>(n);
    const Vector a = x_ * theta;
    // psi_asym(t) <= min(t_+, 1(t > 0)/2), so per observation the smoothed
    // value is below min(E(a + s W)_+, P(a + s W > 0) / (2 lambda)).
    Vector pos(n), prob(n);
    for (long i = 0; i < n; ++i) {
      if (s_[i] > 0.0) {
        const double z = a[i] / s_[i];
        prob[i] = std_normal_cdf(z);
        pos[i] = a[i] * prob[i] + s_[i] * std_normal_pdf(z);
      } else {
        prob[i] = a[i] > 0.0 ? 1.0 : 0.0;
        pos[i] = std::max(a[i], 0.0);
      }
    }
    const double mean_pos = pos.sum() / nn;
    struct Cand {
      double upper;
      int order;
    };
    std::vector<Cand> cands;
    cands.reserve(ks_.size());
    for (int j = 0; j < static_cast<int>(ks_.size()); ++j) {
      const double lam = grid_.lambda(ks_[j], n);
      cands.push_back({std::min(mean_pos, 0.5 / lam) - penalty(ks_[j], lam), j});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& l, const Cand& r) { return l.upper > r.upper; });
    double best = -std::numeric_limits<double>::infinity();
    int best_order = -1;
    for (const auto& c : cands) {
      if (c.upper < best) break;
      const double lam = grid_.lambda(ks_[c.order], n);
      if (pos.cwiseMin(prob * (0.5 / lam)).sum() / nn - penalty(ks_[c.order], lam) < best) continue;
      double sum = 0.0;
      for (long i = 0; i < n; ++i) sum += smooth_asym(lam * a[i], lam * s_[i]).value;
      const double val = sum / (nn * lam) - penalty(ks_[c.order], lam);
      if (val > best || (val == best && c.order < best_order)) {
        best = val;
        best_order = c.order;
      }
    }
    if (grad) {
      const double lam = grid_.lambda(ks_[best_order], n);
      Vector w(n);
      for (long i = 0; i < n; ++i) w[i] = smooth_asym(lam * a[i], lam * s_[i]).dm;
      *grad = x_.transpose() * w / nn;
    }
    return {best, ks_[best_order]};
  }

  double operator()(const Vector& theta, Vector* grad = nullptr) const {
    require_unit(theta, "adaptive_directional_estimate");
    Vector gp, gm;
    const double p = plus(theta, grad ? &gp : nullptr).value;
    const double m = plus(-theta, grad ? &gm : nullptr).value;
    if (grad) *grad = gp + gm;
    return p - m;
  }

  int dim() const { return static_cast<int>(x_.cols()); }

 private:
  double penalty(int k, double lam) const {
    const double nn = static_cast<double>(x_.rows());
    return (beta_ + 2.0 * (ell_ - std::log(AdaptiveGrid::weight(k)))) / (2.0 * lam * nn);
  }

  const VectorSample& x_;
  AdaptiveGrid grid_;
  double beta_;
  double ell_;
  std::vector<int> ks_;
  Vector s_;
};

inline double default_adaptive_beta(double delta) { return 2.0 * std::log(1.0 / delta); }

inline double adaptive_directional_estimate(const VectorSample& x, const Vector& theta, const AdaptiveGrid& grid,
                                            double beta, double delta) {
  return AdaptiveDirectionalMean(x, grid, beta, delta)(theta);
}

/// With known (v, T) the radius 4 C sqrt(2 (2 v ell + T) / n) is certified
/// once the minimax gap is at most half of it. Without them the fit runs to
/// convergence and twice the achieved gap is reported, uncertified.
inline MeanEstimate estimate_mean_adaptive(const VectorSample& x, const AdaptiveGrid& grid, double delta,
                                           std::optional<VecMomentBounds> diagnostic = std::nullopt,
                                           const MeanOptions& opt = {}) {
  validate_sample(x, "estimate_mean_adaptive");
  validate_delta(delta, "estimate_mean_adaptive");
  validate(grid);
  const long n = x.rows();
  AdaptiveDirectionalMean est(x, grid, default_adaptive_beta(delta), delta);
  MeanEstimate out;
  out.delta = delta;
  double target = 1e-12;
  if (diagnostic) {
    validate(*diagnostic);
    out.constant_C = adaptive_vector_constant(grid.alpha, delta, diagnostic->v, diagnostic->T, grid.sigma_guess);
    const double ell = std::log(1.0 / delta);
    out.radius = 4.0 * out.constant_C * std::sqrt(2.0 * (2.0 * diagnostic->v * ell + diagnostic->T) / static_cast<double>(n));
    target = 0.5 * out.radius;
  }
  out.m_hat = fit_center(std::cref(est), est.dim(), target, opt.tol, opt.center, &out.diagnostics);
  if (diagnostic) {
    out.certified = out.diagnostics.reached_target;
  } else {
    out.radius = 2.0 * std::max(out.diagnostics.gap, 0.0);
    out.certified = false;
  }
  return out;
}

}  // namespace heavytail
