#pragma once

// Least squares regression from robust plug-in estimates of G = E(X X') and
// V = E(Y X): bounded-domain minimization, ridge fits, the confidence region
// around the ridge solution, improved picks, min-norm selection and model
// selection over families of subspaces.

#include "heavytail/core.hpp"
#include "heavytail/gram.hpp"
#include "heavytail/matrix_mean.hpp"
#include "heavytail/parallel.hpp"
#include "heavytail/vector_mean.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace heavytail {

struct RegressionData {
  Matrix X;  ///< n x d, one observation per row
  Vector Y;
};

inline void validate(const RegressionData& data) {
  require(data.X.rows() >= 1 && data.X.cols() >= 1, "RegressionData: empty sample");
  require(data.X.rows() == data.Y.size(), "RegressionData: X and Y row counts differ");
  require(data.X.allFinite() && data.Y.allFinite(), "RegressionData: non-finite entries");
}

struct PluginEstimates {
  Matrix G_hat;
  Vector V_hat;
  double epsilon = 0.0;  ///< operator-norm radius of G_hat
  double eta = 0.0;      ///< Euclidean radius of V_hat
  double delta = 0.0;    ///< both radii hold jointly with probability 1 - 2 delta
  bool certified = true;
  double psd_clip = 0.0;  ///< part of epsilon spent on eigenvalue clipping

  int dim() const { return static_cast<int>(V_hat.size()); }
};

inline void validate(const PluginEstimates& p) {
  require(p.G_hat.rows() == p.G_hat.cols() && p.G_hat.rows() == p.V_hat.size() && p.V_hat.size() >= 1,
          "PluginEstimates: shape mismatch");
  require(p.G_hat.allFinite() && p.V_hat.allFinite(), "PluginEstimates: non-finite entries");
  require(p.epsilon >= 0.0 && p.eta >= 0.0 && std::isfinite(p.epsilon) && std::isfinite(p.eta),
          "PluginEstimates: epsilon and eta must be nonnegative");
}

/// Symmetrizes G and clips negative eigenvalues; the clipped magnitude is
/// added to epsilon.
inline PluginEstimates make_plugin(const Matrix& G, const Vector& V, double epsilon, double eta, double delta = 0.0) {
  require(G.rows() == G.cols() && G.rows() == V.size(), "make_plugin: shape mismatch");
  PluginEstimates p;
  const Matrix S = 0.5 * (G + G.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  const double neg = std::max(0.0, -es.eigenvalues().minCoeff());
  if (neg > 0.0) {
    const Matrix C = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
    p.G_hat = 0.5 * (C + C.transpose());
  } else {
    p.G_hat = S;
  }
  p.V_hat = V;
  p.psd_clip = neg;
  p.epsilon = epsilon + neg;
  p.eta = eta;
  p.delta = delta;
  validate(p);
  return p;
}

/// Moment bounds for the plug-in radii.
struct PluginBounds {
  double v = 0.0;        ///< sup over unit theta of E<theta, X>^4
  double T = 0.0;        ///< E|X|^4
  double v_prime = 0.0;  ///< sup over unit theta of E Y^2 <theta, X>^2
  double T_prime = 0.0;  ///< E Y^2 |X|^2
};

inline void validate(const PluginBounds& b) {
  require(b.v > 0.0 && b.v <= b.T && std::isfinite(b.T), "PluginBounds: need 0 < v <= T");
  require(b.v_prime >= 0.0 && b.v_prime <= b.T_prime && std::isfinite(b.T_prime),
          "PluginBounds: need 0 <= v' <= T'");
}

/// 2 sqrt((2v/n)(2 log(1/delta) + 12 sqrt(T/v))).
inline double plugin_epsilon(long n, double v, double T, double delta) {
  require(n >= 1, "plugin_epsilon: n must be positive");
  validate_delta(delta, "plugin_epsilon");
  require(v > 0.0 && v <= T, "plugin_epsilon: need 0 < v <= T");
  const double nn = static_cast<double>(n);
  return 2.0 * std::sqrt(2.0 * v / nn * (2.0 * std::log(1.0 / delta) + 12.0 * std::sqrt(T / v)));
}

/// 2 (sqrt(T'/n) + sqrt(2 v' log(1/delta) / n)).
inline double plugin_eta(long n, double v_prime, double T_prime, double delta) {
  require(n >= 1, "plugin_eta: n must be positive");
  validate_delta(delta, "plugin_eta");
  require(v_prime >= 0.0 && v_prime <= T_prime, "plugin_eta: need 0 <= v' <= T'");
  const double nn = static_cast<double>(n);
  return 2.0 * (std::sqrt(T_prime / nn) + std::sqrt(2.0 * v_prime * std::log(1.0 / delta) / nn));
}

/// Mean of Y X with radius eta; holds with probability 1 - delta.
inline MeanEstimate estimate_plugin_vector(const RegressionData& data, const PluginBounds& b, double delta,
                                           const MeanOptions& opt = {}) {
  validate(data);
  validate(b);
  if (b.v_prime == 0.0) {
    // Y X = 0 almost surely.
    MeanEstimate out;
    out.m_hat = Vector::Zero(data.X.cols());
    out.delta = delta;
    out.certified = true;
    return out;
  }
  const Matrix Z = data.X.array().colwise() * data.Y.array();
  return estimate_mean_uncentered(Z, {b.v_prime, b.T_prime}, delta, opt);
}

/// Which estimator produces G_hat.
enum class GramRoute {
  operator_norm,   ///< bilinear matrix-mean fit on X X'
  quadratic_form,  ///< sup-inf fit of the directional Gram bounds
};

struct PluginOptions {
  GramRoute route = GramRoute::operator_norm;
  McConfig mc{};
  MatrixFitOptions matrix{};
  GramFitOptions gram{};
  MeanOptions mean{};
};

/// G_hat and V_hat at level delta each, so both radii hold with probability 1 - 2 delta.
inline PluginEstimates build_plugin(const RegressionData& data, const PluginBounds& b, double delta,
                                    const PluginOptions& opt = {}) {
  validate(data);
  validate(b);
  validate_delta(delta, "build_plugin");
  const long n = data.X.rows();
  const int d = static_cast<int>(data.X.cols());
  Matrix G;
  double eps = 0.0;
  bool certified = true;
  if (opt.route == GramRoute::operator_norm) {
    MatrixSample s;
    s.p = s.q = d;
    s.data.reserve(n);
    for (long i = 0; i < n; ++i) s.data.push_back(data.X.row(i).transpose() * data.X.row(i));
    // E<xi,X>^2<theta,X>^2 <= v and E|X|^2<theta,X>^2 <= sqrt(T v) by Cauchy-Schwarz.
    const double t = std::sqrt(b.T * b.v);
    const MatrixEstimate m = fit_matrix_operator(s, {b.v, t, t, b.T}, delta, opt.mc, opt.matrix);
    G = m.m_hat;
    eps = std::max(plugin_epsilon(n, b.v, b.T, delta), m.op_radius);
    certified = m.certified;
  } else {
    GramConfig cfg;
    cfg.T = b.T;
    cfg.delta = 0.5 * delta;
    const GramEstimate g = fit_gram(data.X, cfg, opt.gram);
    G = g.G_hat;
    eps = std::max(g.sup_gap, gram_bound(b.v, b.T, n, cfg.delta));
    certified = g.certified;
  }

  const MeanEstimate mv = estimate_plugin_vector(data, b, delta, opt.mean);
  certified = certified && mv.certified;
  PluginEstimates p = make_plugin(G, mv.m_hat, eps, mv.radius, delta);
  p.certified = certified;
  return p;
}

/// <theta, (G_hat + lambda I) theta> - 2 <theta, V_hat>.
inline double empirical_risk(const Vector& theta, const PluginEstimates& p, double lambda = 0.0) {
  require(theta.size() == p.V_hat.size(), "empirical_risk: dimension mismatch");
  return theta.dot(p.G_hat * theta) + lambda * theta.squaredNorm() - 2.0 * theta.dot(p.V_hat);
}

namespace detail {

/// min |M z - b| over |z| <= r, from one SVD of M. The minimizer is
/// z(mu) = (M'M + mu I)^+ M'b with mu >= 0 fixed by |z(mu)| = r, found by
/// Newton on 1/|z(mu)| - 1/r, which is concave in mu.
class BallLeastSquares {
 public:
  BallLeastSquares(const Matrix& M, const Vector& b) : b_(b) {
    require(M.rows() == b.size(), "BallLeastSquares: shape mismatch");
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    W_ = svd.matrixV();
    s_ = svd.singularValues();
    c_ = svd.matrixU().transpose() * b;
    const double smax = s_.size() ? s_.maxCoeff() : 0.0;
    cut_ = smax * 1e-13 * std::max<double>(M.rows(), M.cols());
    // Part of b outside range(U), formed explicitly; |b|^2 - |c|^2 cancels.
    out2_ = (b - svd.matrixU() * c_).squaredNorm();
    // Unconstrained min-norm solution.
    y0_ = Vector::Zero(s_.size());
    for (int i = 0; i < s_.size(); ++i)
      if (s_[i] > cut_) y0_[i] = c_[i] / s_[i];
  }

  int dim() const { return static_cast<int>(W_.rows()); }
  double min_norm_solution_norm() const { return y0_.norm(); }
  Vector min_norm_solution() const { return W_ * y0_; }

  struct Result {
    Vector z;
    double residual = 0.0;
    double mu = 0.0;
  };

  Result solve(double r) const {
    require(r >= 0.0, "BallLeastSquares: negative radius");
    Result out;
    if (r == 0.0 || s_.size() == 0) {
      out.z = Vector::Zero(dim());
      out.residual = b_.norm();
      out.mu = std::numeric_limits<double>::infinity();
      return out;
    }
    Vector y;
    if (y0_.norm() <= r) {
      y = y0_;
    } else {
      // Components with s_i <= cut_ carry no weight in the solution.
      const Vector g = s_.cwiseProduct(c_);
      const Vector p2 = s_.cwiseAbs2();
      auto norm_at = [&](double mu, double* dnorm) {
        double n2 = 0.0, d2 = 0.0;
        for (int i = 0; i < s_.size(); ++i) {
          if (s_[i] <= cut_) continue;
          const double den = p2[i] + mu;
          const double yi = g[i] / den;
          n2 += yi * yi;
          d2 += yi * yi / den;
        }
        const double nrm = std::sqrt(n2);
        if (dnorm) *dnorm = nrm > 0.0 ? -d2 / nrm : 0.0;
        return nrm;
      };
      // Left starting point: |z(mu)| >= |g_i|/(p_i + mu) >= r for every i.
      double mu = 0.0;
      for (int i = 0; i < s_.size(); ++i)
        if (s_[i] > cut_) mu = std::max(mu, std::abs(g[i]) / r - p2[i]);
      for (int it = 0; it < 200; ++it) {
        double dn = 0.0;
        const double nrm = norm_at(mu, &dn);
        if (!(nrm > 0.0)) break;
        const double h = 1.0 / nrm - 1.0 / r;
        if (std::abs(h) * r <= 1e-15) break;
        const double dh = -dn / (nrm * nrm);
        if (!(dh > 0.0)) break;
        const double next = mu - h / dh;
        if (!(next > mu) && h < 0.0) break;
        mu = std::max(0.0, next);
      }
      y.resize(s_.size());
      for (int i = 0; i < s_.size(); ++i) y[i] = s_[i] > cut_ ? g[i] / (p2[i] + mu) : 0.0;
      // Land exactly on the sphere.
      const double yn = y.norm();
      if (yn > r) y *= r / yn;
      out.mu = mu;
    }
    out.z = W_ * y;
    const Vector res = s_.cwiseProduct(y) - c_;
    out.residual = std::sqrt(res.squaredNorm() + out2_);
    return out;
  }

 private:
  Vector b_;
  Matrix W_;
  Vector s_, c_, y0_;
  double cut_ = 0.0, out2_ = 0.0;
};

}  // namespace detail

struct BallFit {
  Vector theta;
  double excess_bound = 0.0;
};

/// 2 B (epsilon B + 2 eta).
inline double ball_excess_bound(double B, double epsilon, double eta) { return 2.0 * B * (epsilon * B + 2.0 * eta); }

/// Minimizes the plug-in risk over |theta| <= B.
inline BallFit minimize_over_ball(const PluginEstimates& p, double B) {
  validate(p);
  require(B > 0.0 && std::isfinite(B), "minimize_over_ball: B must be positive");
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.G_hat);
  const Vector ev = es.eigenvalues().cwiseMax(0.0);
  const Matrix& Q = es.eigenvectors();
  const Vector c = Q.transpose() * p.V_hat;
  const double cut = std::max(ev.maxCoeff(), 0.0) * 1e-13 * p.dim();
  // Stationarity: (G + mu I) theta = V, mu >= 0, mu (|theta| - B) = 0.
  auto theta_at = [&](double mu) {
    Vector y(ev.size());
    for (int i = 0; i < ev.size(); ++i) {
      const double den = ev[i] + mu;
      y[i] = den > cut ? c[i] / den : 0.0;
    }
    return y;
  };
  bool interior = true;
  for (int i = 0; i < ev.size(); ++i)
    if (ev[i] <= cut && std::abs(c[i]) > 1e-14 * std::max(1.0, c.norm())) interior = false;
  Vector y = theta_at(0.0);
  if (!interior || y.norm() > B) {
    double lo = 0.0, hi = c.norm() / B + 1.0;
    while (theta_at(hi).norm() > B) hi *= 2.0;
    // |theta(mu)| >= |c_i|/(ev_i + mu), so the root lies above each |c_i|/B - ev_i.
    for (int i = 0; i < ev.size(); ++i) lo = std::max(lo, std::abs(c[i]) / B - ev[i]);
    lo = std::min(lo, hi);
    double mu = lo;
    for (int it = 0; it < 200; ++it) {
      const Vector yy = theta_at(mu);
      const double nrm = yy.norm();
      if (!(nrm > 0.0)) break;
      const double h = 1.0 / nrm - 1.0 / B;
      if (std::abs(h) * B <= 1e-15) break;
      double d2 = 0.0;
      for (int i = 0; i < ev.size(); ++i) {
        const double den = ev[i] + mu;
        if (den > cut) d2 += yy[i] * yy[i] / den;
      }
      const double dh = d2 / (nrm * nrm * nrm);
      if (!(dh > 0.0)) break;
      const double next = mu - h / dh;
      if (!(next > mu) && h < 0.0) break;
      mu = std::clamp(next, lo, hi);
    }
    y = theta_at(mu);
    const double yn = y.norm();
    if (yn > B) y *= B / yn;
  }
  BallFit out;
  out.theta = Q * y;
  out.excess_bound = ball_excess_bound(B, p.epsilon, p.eta);
  return out;
}

inline Matrix ridge_system(const PluginEstimates& p, double lambda) {
  return p.G_hat + lambda * Matrix::Identity(p.dim(), p.dim());
}

struct RidgeFit {
  double lambda = 0.0;
  Vector theta_hat;
  bool singular = false;  ///< G_hat + lambda I was singular; theta_hat is the min-norm least-squares solution
};

inline RidgeFit ridge_fit(const PluginEstimates& p, double lambda) {
  validate(p);
  require(lambda >= 0.0 && std::isfinite(lambda), "ridge_fit: lambda must be nonnegative");
  const Matrix A = ridge_system(p, lambda);
  RidgeFit out;
  out.lambda = lambda;
  Eigen::LDLT<Matrix> ldlt(A);
  const double scale = std::max(1.0, A.diagonal().cwiseAbs().maxCoeff());
  const double dmin = ldlt.info() == Eigen::Success ? ldlt.vectorD().minCoeff() : 0.0;
  if (dmin > 1e-13 * scale) {
    out.theta_hat = ldlt.solve(p.V_hat);
    // One refinement step for the residual contract.
    out.theta_hat += ldlt.solve(p.V_hat - A * out.theta_hat);
  }
  if (out.theta_hat.size() == 0 || (A * out.theta_hat - p.V_hat).norm() > 1e-10 * std::max(p.V_hat.norm(), 1e-300)) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
    cod.setThreshold(1e-13);
    out.theta_hat = cod.solve(p.V_hat);
    out.singular = true;
  }
  return out;
}

struct RegionSpec {
  PluginEstimates plugin;
  double lambda = 0.0;
  Vector theta_hat;
  std::optional<double> norm_cap;

  /// G_hat + lambda I.
  Matrix system() const { return ridge_system(plugin, lambda); }
};

inline RegionSpec make_region(const PluginEstimates& p, double lambda, std::optional<double> norm_cap = std::nullopt) {
  if (norm_cap) require(*norm_cap > 0.0, "make_region: norm cap must be positive");
  RegionSpec r;
  r.plugin = p;
  r.lambda = lambda;
  r.theta_hat = ridge_fit(p, lambda).theta_hat;
  r.norm_cap = norm_cap;
  return r;
}

/// |(G_hat + lambda I)(theta - theta_hat)| - (epsilon |theta| + eta); the
/// region is where this is <= 0.
inline double region_slack(const RegionSpec& r, const Vector& theta) {
  require(theta.size() == r.theta_hat.size(), "region_slack: dimension mismatch");
  return (r.system() * (theta - r.theta_hat)).norm() - (r.plugin.epsilon * theta.norm() + r.plugin.eta);
}

inline bool region_contains(const RegionSpec& r, const Vector& theta, double tol = 1e-9) {
  if (r.norm_cap && theta.norm() > *r.norm_cap * (1.0 + tol)) return false;
  const double scale = std::max(1.0, r.plugin.epsilon * theta.norm() + r.plugin.eta);
  return region_slack(r, theta) <= tol * scale;
}

struct PickResult {
  Vector theta;
  double surrogate = 0.0;   ///< gamma(theta_bad, theta)
  double stationarity = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// R_hat(xi) - R_hat(theta_bad) + eps |xi - theta_bad|^2 + 2 |xi - theta_bad| (eps |theta_bad| + eta).
inline double pick_surrogate(const RegionSpec& r, const Vector& theta_bad, const Vector& xi) {
  const Matrix A = r.system();
  const Vector u = xi - theta_bad;
  const Vector g = r.plugin.V_hat - A * theta_bad;
  const double c = r.plugin.epsilon * theta_bad.norm() + r.plugin.eta;
  return u.dot(A * u) - 2.0 * u.dot(g) + r.plugin.epsilon * u.squaredNorm() + 2.0 * c * u.norm();
}

/// Accelerated proximal gradient on the surrogate, with the norm term's prox
/// (shrinkage toward theta_bad) in closed form.
inline PickResult improved_pick(const RegionSpec& r, const Vector& theta_bad, double tol = 1e-8, int max_iter = 10000) {
  require(theta_bad.size() == r.theta_hat.size(), "improved_pick: dimension mismatch");
  const Matrix A = r.system();
  const double eps = r.plugin.epsilon;
  const Vector g = r.plugin.V_hat - A * theta_bad;
  const double c = eps * theta_bad.norm() + r.plugin.eta;
  if (!(g.norm() > c)) throw DomainError("improved_pick: theta lies in the confidence region");
  const int d = static_cast<int>(g.size());
  const Matrix H = A + eps * Matrix::Identity(d, d);
  const double Lnorm = Eigen::SelfAdjointEigenSolver<Matrix>(r.plugin.G_hat, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
  const double step = 1.0 / (2.0 * (Lnorm + r.lambda + eps));
  const double gtol = tol * std::max(1.0, g.norm());

  auto prox = [&](const Vector& w) {
    const double nw = w.norm();
    const double k = 2.0 * c * step;
    return nw > k ? Vector(w * (1.0 - k / nw)) : Vector(Vector::Zero(d));
  };
  // Half gradient of the smooth part, in u coordinates.
  auto half_grad = [&](const Vector& u) { return Vector(H * u - g); };
  auto objective = [&](const Vector& u) { return u.dot(H * u) - 2.0 * u.dot(g) + 2.0 * c * u.norm(); };
  auto residual = [&](const Vector& u) {
    const double nu = u.norm();
    if (nu == 0.0) return std::max(0.0, g.norm() - c);
    return (H * u - g + c * u / nu).norm();
  };

  PickResult out;
  Vector u = prox(2.0 * step * g), y = u;
  double tk = 1.0, fu = objective(u);
  int it = 0;
  for (; it < max_iter; ++it) {
    if (residual(u) <= gtol) {
      out.converged = true;
      break;
    }
    const Vector next = prox(y - 2.0 * step * half_grad(y));
    const double fn = objective(next);
    if (fn > fu) {
      // Restart momentum.
      tk = 1.0;
      y = u;
      continue;
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    y = next + ((tk - 1.0) / tn) * (next - u);
    u = next;
    fu = fn;
    tk = tn;
  }
  out.iterations = it;
  out.stationarity = residual(u);
  out.converged = out.stationarity <= gtol;
  out.theta = theta_bad + u;
  out.surrogate = objective(u);
  return out;
}

struct MinNormResult {
  Vector theta;
  double radius = 0.0;
  bool feasible = true;   ///< false when the (capped) region misses the subspace
  bool monotone = true;   ///< feasibility was monotone in r at every probe
  int probes = 0;
};

namespace detail {

/// Smallest |z| with |M z - b| <= eps |z| + eta, by bisection on r = |z|.
/// The inner minimum over |z| <= r is nonincreasing in r and the right side
/// increases, so feasibility switches once.
inline MinNormResult min_norm_feasible(const Matrix& M, const Vector& b, double eps, double eta,
                                       std::optional<double> cap, double rtol = 1e-13) {
  BallLeastSquares ls(M, b);
  MinNormResult out;
  std::vector<std::pair<double, double>> probes;  // (r, slack)
  auto slack = [&](double r, Vector* z) {
    const auto s = ls.solve(r);
    if (z) *z = s.z;
    const double v = s.residual - (eps * r + eta);
    probes.emplace_back(r, v);
    return v;
  };
  const double tol0 = 1e-12 * std::max(1.0, eta);
  Vector z;
  if (slack(0.0, &z) <= tol0) {
    out.theta = Vector::Zero(ls.dim());
    out.probes = 1;
    return out;
  }
  // Upper end: the least-squares solution, or the cap, or growth until feasible.
  double hi = ls.min_norm_solution_norm();
  if (cap) hi = std::min(hi, *cap);
  Vector zhi;
  bool ok = slack(hi, &zhi) <= tol0;
  if (!ok && !cap && eps > 0.0) {
    for (int k = 0; k < 200 && !ok; ++k) {
      hi = std::max(2.0 * hi, 1e-300);
      ok = slack(hi, &zhi) <= tol0;
    }
  }
  if (!ok) {
    out.feasible = false;
    out.theta = zhi;
    out.radius = hi;
    out.probes = static_cast<int>(probes.size());
    return out;
  }
  double lo = 0.0;
  while (hi - lo > rtol * std::max(hi, 1e-300)) {
    const double mid = 0.5 * (lo + hi);
    Vector zm;
    if (slack(mid, &zm) <= tol0) {
      hi = mid;
      zhi = zm;
    } else {
      lo = mid;
    }
  }
  std::sort(probes.begin(), probes.end());
  bool seen_feasible = false;
  for (const auto& [r, v] : probes) {
    if (v <= tol0) seen_feasible = true;
    else if (seen_feasible) out.monotone = false;
  }
  out.theta = zhi;
  out.radius = zhi.norm();
  out.probes = static_cast<int>(probes.size());
  return out;
}

}  // namespace detail

/// Min-norm point of the confidence region (capped if norm_cap is set).
/// Throws when the cap excludes every point.
inline MinNormResult min_norm_in_region(const RegionSpec& r) {
  validate(r.plugin);
  const Matrix A = r.system();
  MinNormResult out = detail::min_norm_feasible(A, A * r.theta_hat, r.plugin.epsilon, r.plugin.eta, r.norm_cap);
  if (!out.feasible) throw DomainError("min_norm_in_region: region is empty under the norm cap");
  return out;
}

struct SlowRatePick {
  Vector theta;
  double lambda_used = 0.0;
  std::function<double(double)> bound;  ///< excess risk bound as a function of |theta_0|
};

/// [a + 1/2] [(2 eps + eta) a + eta] at a = |theta_0|.
inline double slow_rate_bound(double theta0_norm, double epsilon, double eta) {
  return (theta0_norm + 0.5) * ((2.0 * epsilon + eta) * theta0_norm + eta);
}

inline SlowRatePick slow_rate_pick(const PluginEstimates& p) {
  validate(p);
  require(p.epsilon + p.eta > 0.0, "slow_rate_pick: epsilon + eta must be positive");
  SlowRatePick out;
  out.lambda_used = 2.0 * (p.epsilon + p.eta);
  out.theta = min_norm_in_region(make_region(p, out.lambda_used)).theta;
  const double e = p.epsilon, h = p.eta;
  out.bound = [e, h](double a) { return slow_rate_bound(a, e, h); };
  return out;
}

/// Checks B'B = I to 1e-12.
inline void validate_basis(const Matrix& B, int d, const char* who) {
  require(B.rows() == d && B.cols() >= 1 && B.cols() <= d, std::string(who) + ": basis shape mismatch");
  const Matrix I = Matrix::Identity(B.cols(), B.cols());
  require((B.transpose() * B - I).cwiseAbs().maxCoeff() <= 1e-12, std::string(who) + ": basis is not orthonormal");
}

/// inf { |G xi| : xi in L, |xi| = 1 }, the smallest singular value of G B.
inline double restricted_sigma(const Matrix& G, const Matrix& B) {
  validate_basis(B, static_cast<int>(G.rows()), "restricted_sigma");
  Eigen::JacobiSVD<Matrix> svd(G * B);
  return svd.singularValues().minCoeff();
}

struct SubspaceFit {
  Matrix basis;
  Vector theta_hat;  ///< ridge solution restricted to L
  Matrix A_L;        ///< B'(G_hat + lambda I) B
  Vector rhs;        ///< B' V_hat
  double epsilon = 0.0, eta = 0.0;
  bool singular = false;

  /// Projected region |pi_L (G_hat + lambda I)(xi - theta_hat)| <= eps |xi| + eta, xi in L.
  bool contains(const Vector& xi, double tol = 1e-9) const {
    const Vector z = basis.transpose() * xi;
    if ((basis * z - xi).norm() > tol * std::max(1.0, xi.norm())) return false;
    const Vector zh = basis.transpose() * theta_hat;
    const double rhs_v = epsilon * xi.norm() + eta;
    return (A_L * (z - zh)).norm() <= rhs_v + tol * std::max(1.0, rhs_v);
  }

  /// Min-norm point of the projected region.
  MinNormResult min_norm() const {
    const Vector zh = basis.transpose() * theta_hat;
    MinNormResult r = detail::min_norm_feasible(A_L, A_L * zh, epsilon, eta, std::nullopt);
    r.theta = basis * r.theta;
    return r;
  }
};

inline SubspaceFit fit_subspace(const PluginEstimates& p, const Matrix& B, double lambda) {
  validate(p);
  validate_basis(B, p.dim(), "fit_subspace");
  require(lambda >= 0.0 && std::isfinite(lambda), "fit_subspace: lambda must be nonnegative");
  SubspaceFit out;
  out.basis = B;
  out.A_L = B.transpose() * ridge_system(p, lambda) * B;
  out.rhs = B.transpose() * p.V_hat;
  out.epsilon = p.epsilon;
  out.eta = p.eta;
  const RidgeFit inner = ridge_fit(make_plugin(out.A_L, out.rhs, 0.0, 0.0), 0.0);
  out.singular = inner.singular;
  out.theta_hat = B * inner.theta_hat;
  return out;
}

struct ModelFamily {
  std::vector<Matrix> subspaces;
  bool nested = false;
};

/// Coordinate subspaces span(e_j : j in support), one per support.
inline ModelFamily coordinate_family(int d, const std::vector<std::vector<int>>& supports, bool nested = false) {
  ModelFamily f;
  f.nested = nested;
  for (const auto& s : supports) {
    require(!s.empty(), "coordinate_family: empty support");
    Matrix B = Matrix::Zero(d, static_cast<long>(s.size()));
    for (std::size_t j = 0; j < s.size(); ++j) {
      require(s[j] >= 0 && s[j] < d, "coordinate_family: index out of range");
      B(s[j], static_cast<long>(j)) = 1.0;
    }
    f.subspaces.push_back(std::move(B));
  }
  return f;
}

inline void validate(const ModelFamily& f, int d) {
  require(!f.subspaces.empty(), "ModelFamily: empty family");
  for (const auto& B : f.subspaces) validate_basis(B, d, "ModelFamily");
  if (f.nested) {
    for (std::size_t k = 1; k < f.subspaces.size(); ++k) {
      const Matrix& a = f.subspaces[k - 1];
      const Matrix& b = f.subspaces[k];
      require(b.cols() >= a.cols() && (b.leftCols(a.cols()) - a).cwiseAbs().maxCoeff() <= 1e-12,
              "ModelFamily: nested bases must be prefixes of one ordered basis");
    }
  }
}

/// Row indices where the basis is nonzero.
inline std::vector<int> basis_support(const Matrix& B) {
  std::vector<int> s;
  for (int i = 0; i < B.rows(); ++i)
    if (B.row(i).norm() > 1e-12) s.push_back(i);
  return s;
}

struct ModelSelection {
  int index = -1;              ///< position of L_hat in the family
  Vector theta;                ///< min-norm point of the region within L_hat
  double sigma_hat = 0.0;      ///< restricted sigma of G_hat on L_hat
  std::vector<int> admissible; ///< subspaces meeting the region
  double bound = 0.0;          ///< 4 (eps A + eta)^2 / (lambda + sigma_hat)
};

namespace detail {

inline std::vector<MinNormResult> intersect_family(const RegionSpec& r, const ModelFamily& f) {
  const Matrix A = r.system();
  const Vector b = A * r.theta_hat;
  std::vector<MinNormResult> hits(f.subspaces.size());
  parallel_for(f.subspaces.size(), [&](std::size_t k) {
    const Matrix& B = f.subspaces[k];
    MinNormResult m = min_norm_feasible(A * B, b, r.plugin.epsilon, r.plugin.eta, r.norm_cap);
    m.theta = B * m.theta;
    hits[k] = std::move(m);
  });
  return hits;
}

inline double selection_bound(const RegionSpec& r, double sigma) {
  const double a = r.plugin.epsilon * *r.norm_cap + r.plugin.eta;
  return 4.0 * a * a / (r.lambda + sigma);
}

}  // namespace detail

/// L_hat maximizes sigma_hat over the subspaces meeting the capped region.
/// Ties (relative 1e-12) go to the smaller dimension, then the
/// lexicographically smaller support.
inline ModelSelection select_model_general(const RegionSpec& r, const ModelFamily& f, const Matrix& G_hat) {
  validate(r.plugin);
  require(r.norm_cap.has_value(), "select_model_general: norm cap must be set");
  validate(f, r.plugin.dim());
  const auto hits = detail::intersect_family(r, f);
  ModelSelection out;
  std::vector<double> sig(f.subspaces.size(), 0.0);
  for (std::size_t k = 0; k < hits.size(); ++k) {
    if (!hits[k].feasible) continue;
    out.admissible.push_back(static_cast<int>(k));
    sig[k] = restricted_sigma(G_hat, f.subspaces[k]);
  }
  if (out.admissible.empty())
    throw DomainError("select_model_general: no subspace meets the region (good event failed or cap too small)");
  auto better = [&](int a, int b) {
    const double sa = sig[a], sb = sig[b];
    const double t = 1e-12 * std::max({1.0, std::abs(sa), std::abs(sb)});
    if (std::abs(sa - sb) > t) return sa > sb;
    const auto da = f.subspaces[a].cols(), db = f.subspaces[b].cols();
    if (da != db) return da < db;
    return basis_support(f.subspaces[a]) < basis_support(f.subspaces[b]);
  };
  int best = out.admissible.front();
  for (int k : out.admissible)
    if (better(k, best)) best = k;
  out.index = best;
  out.theta = hits[best].theta;
  out.sigma_hat = sig[best];
  out.bound = detail::selection_bound(r, out.sigma_hat);
  return out;
}

/// Smallest index whose subspace meets the capped region.
inline ModelSelection select_model_nested(const RegionSpec& r, const ModelFamily& f) {
  validate(r.plugin);
  require(r.norm_cap.has_value(), "select_model_nested: norm cap must be set");
  require(f.nested, "select_model_nested: family is not nested");
  validate(f, r.plugin.dim());
  const Matrix A = r.system();
  const Vector b = A * r.theta_hat;
  ModelSelection out;
  for (std::size_t k = 0; k < f.subspaces.size(); ++k) {
    const Matrix& B = f.subspaces[k];
    MinNormResult m = detail::min_norm_feasible(A * B, b, r.plugin.epsilon, r.plugin.eta, r.norm_cap);
    if (!m.feasible) continue;
    out.index = static_cast<int>(k);
    out.admissible.push_back(out.index);
    out.theta = B * m.theta;
    out.sigma_hat = restricted_sigma(r.plugin.G_hat, B);
    out.bound = detail::selection_bound(r, out.sigma_hat);
    return out;
  }
  throw DomainError("select_model_nested: no subspace meets the region (good event failed or cap too small)");
}

}  // namespace heavytail
