#pragma once

// Maximization of a smooth function over the unit sphere by projected
// gradient ascent with Armijo backtracking and random restarts.

#include "heavytail/core.hpp"
#include "heavytail/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

namespace heavytail {

/// Objective on the sphere: returns f(theta) and, when grad is non-null,
/// writes the Euclidean gradient there.
using SphereObjective = std::function<double(const Vector&, Vector*)>;

struct SphereOptions {
  int restarts = 16;
  int max_iter = 500;
  double tol = 1e-9;
  std::uint64_t seed = 0;
  int max_backtracks = 50;  ///< step halvings before a line search gives up
};

struct SphereResult {
  Vector theta;
  double value = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

inline Vector random_unit(int d, CounterRng& rng) {
  Vector v(d);
  for (;;) {
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    const double n = v.norm();
    if (n > 1e-300) return v / n;
  }
}

namespace detail {

inline void normalize_blocks(Vector& x, const std::vector<int>& blocks) {
  int off = 0;
  for (int b : blocks) {
    const double n = x.segment(off, b).norm();
    require(n > 0.0, "sphere search: zero block in start vector");
    x.segment(off, b) /= n;
    off += b;
  }
}

inline Vector tangent_part(const Vector& x, const Vector& g, const std::vector<int>& blocks) {
  Vector t = g;
  int off = 0;
  for (int b : blocks) {
    t.segment(off, b) -= x.segment(off, b).dot(g.segment(off, b)) * x.segment(off, b);
    off += b;
  }
  return t;
}

}  // namespace detail

/// Local ascent on a product of unit spheres; `blocks` lists their sizes.
inline SphereResult product_sphere_ascent(const SphereObjective& f, Vector start, const std::vector<int>& blocks,
                                          const SphereOptions& opt = {}) {
  SphereResult res;
  Vector theta = std::move(start);
  detail::normalize_blocks(theta, blocks);
  Vector g(theta.size());
  double val = f(theta, &g);
  ++res.evaluations;
  Vector cand(theta.size()), cg(theta.size());
  double step = -1.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    const Vector gt = detail::tangent_part(theta, g, blocks);
    const double gn = gt.norm();
    if (!(gn > opt.tol)) break;
    if (step <= 0.0) step = 0.5 / gn;
    step = std::min(step, 1.0 / gn);
    bool accepted = false;
    double cv = val;
    for (int ls = 0; ls < opt.max_backtracks; ++ls) {
      cand = theta + step * gt;
      detail::normalize_blocks(cand, blocks);
      cv = f(cand, &cg);
      ++res.evaluations;
      if (cv >= val + 1e-4 * step * gn * gn) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double gain = cv - val;
    // Barzilai-Borwein step from the tangent gradients, doubling as fallback.
    const Vector sdiff = cand - theta;
    const double sy = -sdiff.dot(detail::tangent_part(cand, cg, blocks) - gt);
    theta = cand;
    g = cg;
    val = cv;
    step = sy > 0.0 ? sdiff.squaredNorm() / sy : 2.0 * step;
    if (gain <= opt.tol * std::max(1.0, std::abs(val))) break;
  }
  res.theta = theta;
  res.value = val;
  return res;
}

/// Local ascent from `start` (normalized internally).
inline SphereResult sphere_ascent(const SphereObjective& f, Vector start, const SphereOptions& opt = {}) {
  require(start.norm() > 0.0, "sphere_ascent: zero start vector");
  const int d = static_cast<int>(start.size());
  return product_sphere_ascent(f, std::move(start), {d}, opt);
}

/// Best local maximum over the warm starts and `opt.restarts` uniform
/// random starts on the product of spheres.
inline SphereResult product_sphere_maximize(const SphereObjective& f, const std::vector<int>& blocks,
                                            const std::vector<Vector>& warm, const SphereOptions& opt = {}) {
  int total = 0;
  for (int b : blocks) {
    require(b >= 1, "sphere_maximize: dimension must be positive");
    total += b;
  }
  SphereResult best;
  int evals = 0;
  auto consider = [&](SphereResult r) {
    evals += r.evaluations;
    if (r.value > best.value || best.theta.size() == 0) best = std::move(r);
  };
  for (const auto& w : warm) {
    if (w.size() != total) continue;
    bool ok = true;
    int off = 0;
    for (int b : blocks) {
      ok = ok && w.segment(off, b).norm() > 0.0;
      off += b;
    }
    if (ok) consider(product_sphere_ascent(f, w, blocks, opt));
  }
  CounterRng rng(opt.seed);
  for (int r = 0; r < opt.restarts; ++r) {
    CounterRng sub = rng.substream(static_cast<std::uint64_t>(r));
    Vector x(total);
    int off = 0;
    for (int b : blocks) {
      x.segment(off, b) = random_unit(b, sub);
      off += b;
    }
    consider(product_sphere_ascent(f, x, blocks, opt));
  }
  if (best.theta.size() == 0) {
    Vector x = Vector::Zero(total);
    int off = 0;
    for (int b : blocks) {
      x[off] = 1.0;
      off += b;
    }
    consider(product_sphere_ascent(f, x, blocks, opt));
  }
  best.evaluations = evals;
  return best;
}

inline SphereResult sphere_maximize(const SphereObjective& f, int d, const std::vector<Vector>& warm,
                                    const SphereOptions& opt = {}) {
  require(d >= 1, "sphere_maximize: dimension must be positive");
  if (d == 1) {
    // The sphere is {-1, +1}.
    SphereResult best;
    for (double s : {1.0, -1.0}) {
      const Vector x = Vector::Constant(1, s);
      const double v = f(x, nullptr);
      if (v > best.value) {
        best.value = v;
        best.theta = x;
      }
    }
    best.evaluations = 2;
    return best;
  }
  return product_sphere_maximize(f, {d}, warm, opt);
}

/// Wraps a value-only function on the sphere with a central-difference
/// tangent gradient, f evaluated only at unit vectors.
inline SphereObjective finite_difference_objective(std::function<double(const Vector&)> value, double h = 1e-6) {
  return [value = std::move(value), h](const Vector& theta, Vector* grad) {
    const double v = value(theta);
    if (grad) {
      grad->resize(theta.size());
      for (int i = 0; i < theta.size(); ++i) {
        Vector up = theta, dn = theta;
        up[i] += h;
        dn[i] -= h;
        up.normalize();
        dn.normalize();
        (*grad)[i] = (value(up) - value(dn)) / (2.0 * h);
      }
    }
    return v;
  };
}

}  // namespace heavytail
