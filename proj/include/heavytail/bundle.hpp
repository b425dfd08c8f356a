#pragma once

// Minimization of g(m) = sup_c (<a_c, m> - e_c) where the supremum is only
// reachable through a worst-cut oracle. Proximal bundle method: the cut
// model is minimized with a proximal term around the current center, the
// dual of that subproblem is a concave quadratic over the simplex, solved by
// FISTA with Euclidean projection.

#include "heavytail/core.hpp"
#include "heavytail/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace heavytail {

/// Affine minorant m -> <a, m> - e of g. `value` caches it at the query point.
struct Cut {
  Vector a;
  double e = 0.0;
  double value = -std::numeric_limits<double>::infinity();
};

/// Worst-cut oracle. `hints` are the cuts collected so far; `thorough`
/// requests a more exhaustive search, used before declaring convergence.
using CutOracle = std::function<Cut(const Vector& m, const std::vector<Cut>& hints, bool thorough)>;

struct BundleOptions {
  int max_iter = 400;
  int max_cuts = 200;
  double tol = 1e-9;
};

inline Vector project_simplex(const Vector& y) {
  const int k = static_cast<int>(y.size());
  std::vector<double> u(y.data(), y.data() + k);
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, tau = 0.0;
  for (int j = 0; j < k; ++j) {
    css += u[j];
    const double t = (css - 1.0) / (j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  return (y.array() - tau).max(0.0).matrix();
}

namespace detail {

/// max_{alpha in simplex} alpha.b - (t/2) alpha' Q alpha.
inline Vector solve_bundle_dual(const Matrix& Q, const Vector& b, double t, Vector alpha) {
  const int k = static_cast<int>(b.size());
  if (k == 1) return Vector::Ones(1);
  const double L = std::max(t * Q.diagonal().sum(), 1e-300);
  Vector y = alpha, prev = alpha;
  double mom = 1.0;
  for (int it = 0; it < 5000; ++it) {
    const Vector grad = b - t * (Q * y);
    Vector next = project_simplex(y + grad / L);
    const double mom_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * mom * mom));
    y = next + ((mom - 1.0) / mom_next) * (next - prev);
    prev = next;
    mom = mom_next;
    if (it % 20 == 19) {
      const Vector gp = b - t * (Q * prev);
      const double fw_gap = gp.maxCoeff() - prev.dot(gp);
      if (fw_gap <= 1e-13 * (1.0 + b.cwiseAbs().maxCoeff())) break;
    }
  }
  return prev;
}

}  // namespace detail

/// Minimizes g starting from m0; stops as soon as g <= target + tol is
/// confirmed by a thorough oracle call, or when the model predicts no
/// further decrease above tol.
inline Vector minimize_sup_affine(const CutOracle& oracle, Vector m0, double target, const BundleOptions& opt,
                                  FitDiagnostics* diag = nullptr) {
  FitDiagnostics local;
  FitDiagnostics& dg = diag ? *diag : local;
  dg = FitDiagnostics{};
  dg.target = target;
  const int D = static_cast<int>(m0.size());
  const int max_cuts = std::max(4, opt.max_cuts);

  std::vector<Cut> cuts;
  Matrix Q(0, 0);
  auto add_cut = [&](const Cut& c) {
    for (const auto& old : cuts)
      if ((old.a - c.a).norm() <= 1e-13 * (1.0 + c.a.norm()) && std::abs(old.e - c.e) <= 1e-13 * (1.0 + std::abs(c.e)))
        return;
    cuts.push_back(c);
    const int k = static_cast<int>(cuts.size());
    Q.conservativeResize(k, k);
    for (int j = 0; j < k; ++j) Q(k - 1, j) = Q(j, k - 1) = cuts[j].a.dot(c.a);
  };
  auto rebuild_q = [&] {
    const int k = static_cast<int>(cuts.size());
    Q.resize(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j <= i; ++j) Q(i, j) = Q(j, i) = cuts[i].a.dot(cuts[j].a);
  };

  Vector hat = std::move(m0);
  Cut c = oracle(hat, cuts, false);
  ++dg.oracle_calls;
  double fhat = c.value;
  add_cut(c);
  double t = std::max(std::abs(fhat - target), 1e-8 * (1.0 + hat.norm())) / std::max(c.a.squaredNorm(), 1e-300);
  Vector alpha = Vector::Ones(1);
  int nulls = 0;

  auto certify = [&]() -> bool {
    Cut w = oracle(hat, cuts, true);
    ++dg.oracle_calls;
    if (w.value > fhat + opt.tol) {
      fhat = w.value;
      add_cut(w);
      // Still below target after a thorough search: certified as it stands.
      return target > 0.0 && fhat <= target + opt.tol;
    }
    return true;
  };

  for (dg.iterations = 0; dg.iterations < opt.max_iter; ++dg.iterations) {
    if (fhat <= target + opt.tol) {
      if (certify()) break;
      continue;
    }
    const int k = static_cast<int>(cuts.size());
    Vector b(k);
    for (int j = 0; j < k; ++j) b[j] = cuts[j].a.dot(hat) - cuts[j].e;
    if (alpha.size() != k) {
      Vector a2 = Vector::Zero(k);
      a2.head(std::min<int>(k, alpha.size())) = alpha.head(std::min<int>(k, alpha.size()));
      a2[k - 1] = 0.0;
      alpha = a2.sum() > 0 ? Vector(a2 / a2.sum()) : Vector(Vector::Constant(k, 1.0 / k));
    }
    alpha = detail::solve_bundle_dual(Q, b, t, alpha);
    Vector dir = Vector::Zero(D);
    for (int j = 0; j < k; ++j)
      if (alpha[j] > 0.0) dir += alpha[j] * cuts[j].a;
    const Vector cand = hat - t * dir;
    double model = -std::numeric_limits<double>::infinity();
    for (const auto& cc : cuts) model = std::max(model, cc.a.dot(cand) - cc.e);
    const double pred = fhat - model;
    if (!(pred > opt.tol)) {
      if (certify()) break;
      continue;
    }
    Cut nc = oracle(cand, cuts, false);
    ++dg.oracle_calls;
    add_cut(nc);
    if (nc.value <= fhat - 0.1 * pred) {
      hat = cand;
      fhat = nc.value;
      t *= 2.0;
      nulls = 0;
    } else if (++nulls >= 10) {
      t *= 0.5;
      nulls = 0;
    }
    if (static_cast<int>(cuts.size()) > max_cuts) {
      // Drop cuts inactive in the last subproblem, oldest first; fall back
      // to the aggregate cut when everything is active.
      std::vector<Cut> kept;
      const int old = static_cast<int>(alpha.size());
      int excess = static_cast<int>(cuts.size()) - max_cuts / 2;
      for (int j = 0; j < static_cast<int>(cuts.size()); ++j) {
        const bool inactive = j < old && alpha[j] <= 0.0;
        if (inactive && excess > 0) {
          --excess;
          continue;
        }
        kept.push_back(cuts[j]);
      }
      if (static_cast<int>(kept.size()) > max_cuts) {
        Cut agg;
        agg.a = Vector::Zero(D);
        for (int j = 0; j < old; ++j) {
          agg.a += alpha[j] * cuts[j].a;
          agg.e += alpha[j] * cuts[j].e;
        }
        kept.assign(cuts.end() - std::min<int>(8, static_cast<int>(cuts.size())), cuts.end());
        kept.insert(kept.begin(), agg);
      }
      cuts = std::move(kept);
      rebuild_q();
      alpha = Vector::Constant(static_cast<int>(cuts.size()), 1.0 / cuts.size());
    }
  }
  dg.cuts = static_cast<int>(cuts.size());
  dg.gap = fhat;
  dg.reached_target = fhat <= target + opt.tol;
  return hat;
}

/// Directional estimator on the sphere with an optional gradient.
using DirectionalOracle = std::function<double(const Vector& theta, Vector* grad)>;

struct CenterOptions {
  SphereOptions search{};       ///< thorough worst-direction search
  int quick_restarts = 4;       ///< random restarts on ordinary bundle steps
  int warm_cuts = 4;            ///< best existing cuts reused as warm starts
  BundleOptions bundle{};
};

/// Finds m with sup_theta (<theta, m> - E(theta)) <= radius + tol for an
/// antisymmetric directional estimator E. Starts from (E(e_1), ..., E(e_d)).
inline Vector fit_center(const DirectionalOracle& estimator, int d, double radius, double tol,
                         const CenterOptions& opt = {}, FitDiagnostics* diag = nullptr) {
  require(d >= 1, "fit_center: dimension must be positive");
  require(radius > 0.0, "fit_center: radius must be positive");
  Vector m0(d);
  for (int i = 0; i < d; ++i) m0[i] = estimator(Vector::Unit(d, i), nullptr);
  int calls = 0;
  CutOracle cut = [&](const Vector& m, const std::vector<Cut>& hints, bool thorough) {
    SphereObjective obj = [&](const Vector& th, Vector* g) {
      const double e = estimator(th, g);
      if (g) *g = m - *g;
      return th.dot(m) - e;
    };
    std::vector<std::pair<double, int>> ranked;
    for (int j = 0; j < static_cast<int>(hints.size()); ++j) ranked.emplace_back(hints[j].a.dot(m) - hints[j].e, j);
    std::sort(ranked.begin(), ranked.end(), std::greater<>());
    std::vector<Vector> warm;
    for (int j = 0; j < std::min<int>(opt.warm_cuts, static_cast<int>(ranked.size())); ++j)
      warm.push_back(hints[ranked[j].second].a);
    const Vector shift = m - m0;
    if (shift.norm() > 0.0) {
      warm.push_back(shift);
      warm.push_back(-shift);
    }
    SphereOptions so = opt.search;
    so.seed = opt.search.seed + 0x9E37ULL * static_cast<std::uint64_t>(++calls);
    if (!thorough) so.restarts = opt.quick_restarts;
    const SphereResult r = sphere_maximize(obj, d, warm, so);
    Cut c;
    c.a = r.theta;
    c.e = r.theta.dot(m) - r.value;
    c.value = r.value;
    return c;
  };
  BundleOptions bo = opt.bundle;
  bo.tol = tol;
  bo.max_cuts = std::min(bo.max_cuts, 50 * d);
  return minimize_sup_affine(cut, m0, radius, bo, diag);
}

}  // namespace heavytail
