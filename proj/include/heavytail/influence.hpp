#pragma once

// Influence functions and their exact Gaussian smoothings.
//
// For t = m + sigma*W with W standard normal, phi_*(m, sigma) = E[psi(...)].
// Inside |m| <= 10, sigma <= 10 the closed forms are evaluated directly.
// Outside that box they would cancel catastrophically (terms like m^3 or
// sigma^4 against their own tails), so the same expectation is assembled
// region by region: plateau probabilities from the tails plus a
// Gauss-Legendre integral of the polynomial piece over its bounded support.

#include "heavytail/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>

namespace heavytail {

struct SmoothInput {
  double m = 0.0;
  double sigma = 0.0;
};

enum class InfluenceKind { symmetric, asymmetric, squared };

inline constexpr double kSqrt2 = std::numbers::sqrt2;
inline constexpr double kSymCap = 2.0 * std::numbers::sqrt2 / 3.0;
inline constexpr double kInvSqrt2Pi = 0.5 * std::numbers::sqrt2 * std::numbers::inv_sqrtpi;
inline constexpr double kDegenerateSigma = 1e-10;

/// t - t^3/6 on [-sqrt2, sqrt2], +-2sqrt2/3 outside.
inline double psi_sym(double t) {
  if (!std::isfinite(t)) throw DomainError("psi_sym: non-finite argument");
  if (t >= kSqrt2) return kSymCap;
  if (t <= -kSqrt2) return -kSymCap;
  return t - t * t * t / 6.0;
}

/// t - t^2/2 on [0, 1], 1/2 beyond. Defined on t >= 0 only.
inline double psi_asym(double t) {
  if (!(t >= 0.0)) throw DomainError("psi_asym: argument must be nonnegative");
  if (t >= 1.0) return 0.5;
  return t - 0.5 * t * t;
}

inline double psi(InfluenceKind kind, double t) {
  switch (kind) {
    case InfluenceKind::symmetric: return psi_sym(t);
    case InfluenceKind::asymmetric: return psi_asym(t > 0.0 ? t : 0.0);
    case InfluenceKind::squared: return psi_asym(t * t);
  }
  return 0.0;
}

inline double std_normal_pdf(double a) {
  if (!(std::abs(a) < 40.0)) return 0.0;
  return kInvSqrt2Pi * std::exp(-0.5 * a * a);
}

/// F(a) = P(W <= a).
inline double std_normal_cdf(double a) { return 0.5 * std::erfc(-a / kSqrt2); }

/// E[1(W <= a) W^p] for p in 0..4.
inline double truncated_moment(double a, int p) {
  if (p < 0 || p > 4) throw DomainError("truncated_moment: p must lie in 0..4");
  const double F = std_normal_cdf(a);
  const double f = std_normal_pdf(a);
  // Guard the 0*inf products at a = +-inf.
  auto times_f = [f](double poly) { return f == 0.0 ? 0.0 : poly * f; };
  switch (p) {
    case 0: return F;
    case 1: return -f;
    case 2: return F - times_f(a);
    case 3: return -times_f(a * a + 2.0);
    default: return 3.0 * F - times_f(a * a * a + 3.0 * a);
  }
}

namespace detail {

struct GaussLegendre16 {
  std::array<double, 16> x{}, w{};
  GaussLegendre16() {
    constexpr int n = 16;
    for (int i = 0; i < n; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double pp = 1.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = z;
        for (int j = 2; j <= n; ++j) {
          const double p2 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p0) / j;
          p0 = p1;
          p1 = p2;
        }
        pp = n * (z * p1 - p0) / (z * z - 1.0);
        const double dz = p1 / pp;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
      x[i] = z;
      w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    }
  }
};

inline const GaussLegendre16& gauss_legendre16() {
  static const GaussLegendre16 rule;
  return rule;
}

/// P(lo <= W <= hi), taking both tails from the same side to avoid 1 - 1.
inline double interval_prob(double lo, double hi, double below, double above) {
  if (lo > 0.0) return std_normal_cdf(-lo) - above;
  if (hi < 0.0) return std_normal_cdf(hi) - below;
  return (1.0 - below) - above;
}

/// E[W^p 1(lo <= W <= hi)], p = 0..4, given P(W < lo) and P(W > hi).
inline std::array<double, 5> interval_moments(double lo, double hi, double below, double above) {
  const double fl = std_normal_pdf(lo);
  const double fh = std_normal_pdf(hi);
  auto tl = [fl](double poly) { return fl == 0.0 ? 0.0 : poly * fl; };
  auto th = [fh](double poly) { return fh == 0.0 ? 0.0 : poly * fh; };
  std::array<double, 5> I{};
  I[0] = interval_prob(lo, hi, below, above);
  I[1] = fl - fh;
  I[2] = I[0] + tl(lo) - th(hi);
  I[3] = tl(lo * lo + 2.0) - th(hi * hi + 2.0);
  I[4] = 3.0 * I[0] + tl(lo * lo * lo + 3.0 * lo) - th(hi * hi * hi + 3.0 * hi);
  return I;
}

/// E[P(m + s W) 1(lo <= W <= hi)] from the interval moments, P given by coefficients in t.
template <std::size_t N>
double poly_from_moments(const std::array<double, N>& c, double m, double s,
                         const std::array<double, 5>& I) {
  static_assert(N >= 1 && N <= 5);
  static constexpr double binom[5][5] = {
      {1, 0, 0, 0, 0}, {1, 1, 0, 0, 0}, {1, 2, 1, 0, 0}, {1, 3, 3, 1, 0}, {1, 4, 6, 4, 1}};
  double total = 0.0;
  double sk = 1.0;
  for (std::size_t k = 0; k < N; ++k) {
    double bk = 0.0;
    double mp = 1.0;
    for (std::size_t j = k; j < N; ++j) {
      bk += binom[j][k] * c[j] * mp;
      mp *= m;
    }
    total += bk * sk * I[k];
    sk *= s;
  }
  return total;
}

/// Same expectation by composite Gauss-Legendre in t over [a, b] clipped to m +- 40 s.
template <std::size_t N>
double poly_by_quadrature(const std::array<double, N>& c, double m, double s, double a, double b) {
  const double lo = std::max(a, m - 40.0 * s);
  const double hi = std::min(b, m + 40.0 * s);
  if (!(lo < hi)) return 0.0;
  const auto& gl = gauss_legendre16();
  // Panels at most 4 sigma wide, where 16 nodes are exact to rounding.
  const int panels = std::clamp(static_cast<int>(std::ceil((hi - lo) / (4.0 * s))), 1, 20);
  const double width = (hi - lo) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = lo + (p + 0.5) * width;
    const double half = 0.5 * width;
    double acc = 0.0;
    for (int i = 0; i < 16; ++i) {
      const double t = mid + half * gl.x[i];
      double poly = 0.0;
      for (std::size_t j = N; j-- > 0;) poly = poly * t + c[j];
      const double z = (t - m) / s;
      acc += gl.w[i] * poly * std::exp(-0.5 * z * z);
    }
    total += acc * half;
  }
  return total * kInvSqrt2Pi / s;
}

/// Value, m-derivative and sigma-derivative integrands in one pass, so the
/// Gaussian weight is computed once per node. f(t) returns the three
/// integrands at t.
template <class F>
std::array<double, 3> triple_by_quadrature(F f, double m, double s, double a, double b) {
  std::array<double, 3> total{};
  const double lo = std::max(a, m - 40.0 * s);
  const double hi = std::min(b, m + 40.0 * s);
  if (!(lo < hi)) return total;
  const auto& gl = gauss_legendre16();
  const int panels = std::clamp(static_cast<int>(std::ceil((hi - lo) / (4.0 * s))), 1, 20);
  const double width = (hi - lo) / panels;
  const double half = 0.5 * width;
  for (int p = 0; p < panels; ++p) {
    const double mid = lo + (p + 0.5) * width;
    for (int i = 0; i < 16; ++i) {
      const double t = mid + half * gl.x[i];
      const double z = (t - m) / s;
      const double w = gl.w[i] * half * std::exp(-0.5 * z * z);
      const std::array<double, 3> v = f(t);
      for (int j = 0; j < 3; ++j) total[j] += w * v[j];
    }
  }
  for (double& x : total) x *= kInvSqrt2Pi / s;
  return total;
}

inline bool closed_form_regime(double m, double s) { return std::abs(m) <= 10.0 && s <= 10.0; }

}  // namespace detail

/// Smoothed value together with its partial derivatives in m and sigma.
struct SmoothEval {
  double value = 0.0;
  double dm = 0.0;
  double ds = 0.0;
};

/// Closed-form correction r(m, sigma) so that phi_sym = m(1 - s^2/2) - m^3/6 + r.
inline double correction_sym(double m, double s) {
  const double a = (kSqrt2 + m) / s;
  const double b = (kSqrt2 - m) / s;
  const double Fa = std_normal_cdf(-a);  // P(t < -sqrt2)
  const double Fb = std_normal_cdf(-b);  // P(t > sqrt2)
  const double ea = std_normal_pdf(a);
  const double eb = std_normal_pdf(b);
  const double m2 = m * m;
  const double s2 = s * s;
  return kSymCap * (Fb - Fa) - (m - m2 * m / 6.0) * (Fb + Fa) + s * (1.0 - 0.5 * m2) * (ea - eb) +
         0.5 * m * s2 * (Fa + Fb + a * ea + b * eb) +
         s2 * s / 6.0 * ((b * b + 2.0) * eb - (a * a + 2.0) * ea);
}

/// Closed-form correction r2(m, sigma) so that
/// phi_sq = m^2 + s^2 - (m^4 + 6 m^2 s^2 + 3 s^4)/2 + r2.
inline double correction_sq(double m, double s) {
  const double lo = (-1.0 - m) / s;
  const double hi = (1.0 - m) / s;
  const double tails = std_normal_cdf(lo) + std_normal_cdf(-hi);
  const double m2 = m * m;
  const double s2 = s * s;
  return 0.5 * ((m2 - 1.0) * (m2 - 1.0) + (6.0 * m2 - 2.0) * s2 + 3.0 * s2 * s2) * tails +
         0.5 * s * (s2 * (3.0 - 5.0 * m) - (1.0 + m) * (1.0 - m) * (1.0 - m)) * std_normal_pdf(lo) +
         0.5 * s * (s2 * (3.0 + 5.0 * m) - (1.0 - m) * (1.0 + m) * (1.0 + m)) * std_normal_pdf(hi);
}

namespace detail {

inline SmoothEval eval_sym_nonneg(double m, double s) {
  SmoothEval out;
  if (s < kDegenerateSigma) {
    out.value = psi_sym(m);
    out.dm = m < kSqrt2 ? 1.0 - 0.5 * m * m : 0.0;
    return out;
  }
  const double lo = (-kSqrt2 - m) / s;
  const double hi = (kSqrt2 - m) / s;
  const double below = std_normal_cdf(lo);
  const double above = std_normal_cdf(-hi);
  constexpr std::array<double, 3> dpsi{1.0, 0.0, -0.5};
  constexpr std::array<double, 2> ident{0.0, 1.0};
  if (closed_form_regime(m, s)) {
    const double a = -lo;
    const double b = hi;
    const double ea = std_normal_pdf(a);
    const double eb = std_normal_pdf(b);
    const double m2 = m * m;
    const double s2 = s * s;
    const double r = kSymCap * (above - below) - (m - m2 * m / 6.0) * (above + below) +
                     s * (1.0 - 0.5 * m2) * (ea - eb) + 0.5 * m * s2 * (below + above + a * ea + b * eb) +
                     s2 * s / 6.0 * ((b * b + 2.0) * eb - (a * a + 2.0) * ea);
    out.value = m * (1.0 - 0.5 * s2) - m2 * m / 6.0 + r;
    const auto I = interval_moments(lo, hi, below, above);
    out.dm = poly_from_moments(dpsi, m, s, I);
    out.ds = -s * poly_from_moments(ident, m, s, I);
  } else {
    // The sigma derivative uses the score form E[psi'(t) (t - m)] / s; the
    // Stein form loses everything to cancellation once sigma is large.
    const auto r = triple_by_quadrature(
        [m, s](double t) {
          const double d = 1.0 - 0.5 * t * t;
          return std::array<double, 3>{t - t * t * t / 6.0, d, d * (t - m) / s};
        },
        m, s, -kSqrt2, kSqrt2);
    out.value = kSymCap * (above - below) + r[0];
    out.dm = r[1];
    out.ds = r[2];
  }
  return out;
}

inline SmoothEval eval_sq_nonneg(double m, double s) {
  SmoothEval out;
  if (s < kDegenerateSigma) {
    out.value = psi_asym(m * m);
    out.dm = m < 1.0 ? 2.0 * m * (1.0 - m * m) : 0.0;
    return out;
  }
  const double lo = (-1.0 - m) / s;
  const double hi = (1.0 - m) / s;
  const double below = std_normal_cdf(lo);
  const double above = std_normal_cdf(-hi);
  constexpr std::array<double, 4> dpsi{0.0, 2.0, 0.0, -2.0};
  constexpr std::array<double, 3> curv{2.0, 0.0, -6.0};
  if (closed_form_regime(m, s)) {
    const double m2 = m * m;
    const double s2 = s * s;
    const double fl = std_normal_pdf(lo);
    const double fh = std_normal_pdf(hi);
    const double r2 = 0.5 * ((m2 - 1.0) * (m2 - 1.0) + (6.0 * m2 - 2.0) * s2 + 3.0 * s2 * s2) * (below + above) +
                      0.5 * s * (s2 * (3.0 - 5.0 * m) - (1.0 + m) * (1.0 - m) * (1.0 - m)) * fl +
                      0.5 * s * (s2 * (3.0 + 5.0 * m) - (1.0 - m) * (1.0 + m) * (1.0 + m)) * fh;
    out.value = m2 + s2 - 0.5 * (m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2) + r2;
    const auto I = interval_moments(lo, hi, below, above);
    out.dm = poly_from_moments(dpsi, m, s, I);
    out.ds = s * poly_from_moments(curv, m, s, I);
    out.value = std::clamp(out.value, 0.0, 0.5);
  } else {
    const auto r = triple_by_quadrature(
        [m, s](double t) {
          const double t2 = t * t;
          const double d = 2.0 * t * (1.0 - t2);
          return std::array<double, 3>{t2 - 0.5 * t2 * t2, d, d * (t - m) / s};
        },
        m, s, -1.0, 1.0);
    out.value = 0.5 * (below + above) + r[0];
    out.dm = r[1];
    out.ds = r[2];
  }
  return out;
}

}  // namespace detail

/// E[psi_sym(m + sigma W)] with derivatives. Exactly odd in m.
inline SmoothEval smooth_sym(double m, double s) {
  if (m < 0.0) {
    SmoothEval e = detail::eval_sym_nonneg(-m, s);
    e.value = -e.value;
    e.ds = -e.ds;
    return e;
  }
  SmoothEval e = detail::eval_sym_nonneg(m, s);
  if (m == 0.0) e.value = e.ds = 0.0;  // odd in m; quadrature leaves rounding residue
  return e;
}

/// E[psi_asym((m + sigma W)_+)] with derivatives.
inline SmoothEval smooth_asym(double m, double s) {
  SmoothEval out;
  if (s < kDegenerateSigma) {
    out.value = psi_asym(m > 0.0 ? m : 0.0);
    out.dm = (m >= 0.0 && m < 1.0) ? 1.0 - m : 0.0;
    return out;
  }
  const double lo = -m / s;
  const double hi = (1.0 - m) / s;
  const double below = std_normal_cdf(lo);
  const double above = std_normal_cdf(-hi);
  const double flo = std_normal_pdf(lo);
  constexpr std::array<double, 2> dpsi{1.0, -1.0};
  if (detail::closed_form_regime(m, s)) {
    const auto I = detail::interval_moments(lo, hi, below, above);
    out.value = (m - 0.5 * m * m - 0.5 * s * s) * I[0] + 0.5 * above + s * (1.0 - 0.5 * m) * flo -
                0.5 * s * (1.0 - m) * std_normal_pdf(hi);
    out.dm = detail::poly_from_moments(dpsi, m, s, I);
    out.ds = -s * I[0] + flo;
    // Cancellation can leave a few ulp outside the exact range [0, 1/2].
    out.value = std::clamp(out.value, 0.0, 0.5);
  } else {
    // Score form for the sigma derivative, as in the symmetric case.
    const auto r = detail::triple_by_quadrature(
        [m, s](double t) {
          const double d = 1.0 - t;
          return std::array<double, 3>{t - 0.5 * t * t, d, d * (t - m) / s};
        },
        m, s, 0.0, 1.0);
    out.value = 0.5 * above + r[0];
    out.dm = r[1];
    out.ds = r[2];
  }
  return out;
}

/// E[psi_asym((m + sigma W)^2)] with derivatives. Exactly even in m.
inline SmoothEval smooth_sq(double m, double s) {
  if (m < 0.0) {
    SmoothEval e = detail::eval_sq_nonneg(-m, s);
    e.dm = -e.dm;
    return e;
  }
  return detail::eval_sq_nonneg(m, s);
}

inline double phi_sym(SmoothInput in) {
  require(in.sigma >= 0.0, "phi_sym: sigma must be nonnegative");
  return smooth_sym(in.m, in.sigma).value;
}

inline double phi_asym(SmoothInput in) {
  require(in.sigma >= 0.0, "phi_asym: sigma must be nonnegative");
  return smooth_asym(in.m, in.sigma).value;
}

inline double phi_sq(SmoothInput in) {
  require(in.sigma >= 0.0, "phi_sq: sigma must be nonnegative");
  return smooth_sq(in.m, in.sigma).value;
}

inline double phi(InfluenceKind kind, SmoothInput in) {
  switch (kind) {
    case InfluenceKind::symmetric: return phi_sym(in);
    case InfluenceKind::asymmetric: return phi_asym(in);
    case InfluenceKind::squared: return phi_sq(in);
  }
  return 0.0;
}

/// r(m, s) = phi_sym - (m(1 - s^2/2) - m^3/6) with its partial derivatives.
inline SmoothEval residual_sym(double m, double s) {
  SmoothEval e = smooth_sym(m, s);
  if (s >= kDegenerateSigma && detail::closed_form_regime(m, s)) {
    e.value = (m < 0.0) ? -correction_sym(-m, s) : correction_sym(m, s);
  } else {
    e.value -= m * (1.0 - 0.5 * s * s) - m * m * m / 6.0;
  }
  e.dm -= 1.0 - 0.5 * s * s - 0.5 * m * m;
  e.ds += m * s;
  return e;
}

}  // namespace heavytail
