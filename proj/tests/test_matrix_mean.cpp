#include "heavytail/matrix_mean.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace heavytail;

namespace {

Vector unit(std::initializer_list<double> v) {
  Vector x(static_cast<int>(v.size()));
  int i = 0;
  for (double a : v) x[i++] = a;
  return x.normalized();
}

MatrixSample small_2x2() {
  MatrixSample s;
  s.p = s.q = 2;
  Matrix a(2, 2), b(2, 2), c(2, 2);
  a << 1.2, -0.4, 0.3, 0.9;
  b << -0.7, 1.5, 2.1, 0.2;
  c << 0.1, -1.1, -0.6, 1.8;
  s.data = {a, b, c};
  return s;
}

MatrixSample random_sample(int n, int p, int q, std::uint64_t seed, double shift = 0.0) {
  CounterRng rng(seed);
  MatrixSample s;
  s.p = p;
  s.q = q;
  for (int i = 0; i < n; ++i) {
    Matrix m(p, q);
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < q; ++b) m(a, b) = rng.normal() / std::sqrt(std::max(0.1, rng.uniform())) + shift;
    s.data.push_back(m);
  }
  return s;
}

MatrixSample constant_sample(const Matrix& m0, int n) {
  MatrixSample s;
  s.p = static_cast<int>(m0.rows());
  s.q = static_cast<int>(m0.cols());
  s.data.assign(n, m0);
  return s;
}

double op_norm(const Matrix& m) { return Eigen::JacobiSVD<Matrix>(m).singularValues()[0]; }

// Gauss-Hermite nodes and weights for a standard normal, exact to degree 5.
constexpr double kGhNode[3] = {-1.7320508075688772, 0.0, 1.7320508075688772};
constexpr double kGhWeight[3] = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};

}  // namespace

TEST(MatrixSample, RowMajorIngest) {
  Matrix rows(1, 6);
  rows << 1, 2, 3, 4, 5, 6;
  const MatrixSample s = MatrixSample::from_rows(rows, 2, 3);
  EXPECT_EQ(s.data[0](0, 2), 3.0);
  EXPECT_EQ(s.data[0](1, 0), 4.0);
  EXPECT_THROW(MatrixSample::from_rows(rows, 4, 2), DomainError);
  const Matrix v = s.vectorized();
  EXPECT_EQ(unvec(v.row(0).transpose(), 2, 3), s.data[0]);
}

TEST(MatrixSample, RejectsBadSamples) {
  MatrixSample s = small_2x2();
  s.data[1](0, 0) = std::nan("");
  EXPECT_THROW(validate(s), DomainError);
  MatrixSample e;
  e.p = e.q = 2;
  EXPECT_THROW(validate(e), DomainError);
}

TEST(BilinearEstimate, ZeroSample) {
  const MatrixSample s = constant_sample(Matrix::Zero(3, 2), 5);
  const BilinearResult r = bilinear_estimate(s, unit({1, 2, 2}), unit({1, -1}), {0.7, 3.0, 3.0}, {200, 1});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.mc_stderr, 0.0);
}

TEST(BilinearEstimate, RejectsNonUnitDirections) {
  const MatrixSample s = small_2x2();
  EXPECT_THROW(bilinear_estimate(s, Vector::Ones(2), unit({1, 0}), {1, 1, 1}, {}), DomainError);
  EXPECT_THROW(bilinear_estimate(s, unit({1, 0}), unit({1, 0, 0}), {1, 1, 1}, {}), DomainError);
  EXPECT_THROW(bilinear_estimate(s, unit({1, 0}), unit({1, 0}), {1, 0, 1}, {}), DomainError);
}

TEST(BilinearEstimate, ScalarCaseMatchesDirectionalEstimate) {
  // theta' is nearly deterministic for huge gamma.
  MatrixSample s;
  s.p = s.q = 1;
  for (double x : {0.4, -1.3, 2.2, 0.05, 9.0, -0.6}) s.data.push_back(Matrix::Constant(1, 1, x));
  const Matrix flat = s.vectorized();
  const double lam = 0.9, beta = 2.5;
  for (double sx : {1.0, -1.0}) {
    const BilinearResult r =
        bilinear_estimate(s, Vector::Constant(1, sx), Vector::Ones(1), {lam, beta, 1e12}, {500, 3});
    const double ref = directional_estimate(flat, Vector::Constant(1, sx), {lam, beta});
    EXPECT_NEAR(r.value, ref, r.mc_stderr + 1e-10);
  }
}

TEST(BilinearEstimate, ScalarCaseMatchesNestedQuadrature) {
  MatrixSample s;
  s.p = s.q = 1;
  for (double x : {0.8, -2.4, 3.5}) s.data.push_back(Matrix::Constant(1, 1, x));
  const double lam = 0.8, beta = 1.5, gamma = 2.0;
  double ref = 0.0;
  for (const auto& m : s.data) {
    const double x = m(0, 0);
    // theta' = 1 + W / sqrt(gamma); xi' integrated by the scalar oracle.
    auto inner = [&](double th) { return oracle::phi_sym(lam * x * th, lam * std::abs(x * th) / std::sqrt(beta)); };
    ref += oracle::gaussian_expectation(inner, 1.0, 1.0 / std::sqrt(gamma), {0.0});
  }
  ref /= lam * 3.0;
  const BilinearResult r = bilinear_estimate(s, Vector::Ones(1), Vector::Ones(1), {lam, beta, gamma}, {20000, 8});
  EXPECT_GT(r.mc_stderr, 0.0);
  EXPECT_NEAR(r.value, ref, 4.0 * r.mc_stderr + 1e-12);
}

TEST(BilinearEstimate, OutliersKeepMonteCarloErrorSmall) {
  MatrixSample s;
  s.p = s.q = 1;
  for (double x : {0.3, -1.1, 0.7, 450.0, -2.0e4}) s.data.push_back(Matrix::Constant(1, 1, x));
  const double lam = 0.6, beta = 2.0, gamma = 3.0;
  double ref = 0.0;
  for (const auto& m : s.data) {
    const double x = m(0, 0);
    auto inner = [&](double th) { return oracle::phi_sym(lam * x * th, lam * std::abs(x * th) / std::sqrt(beta)); };
    ref += oracle::gaussian_expectation(inner, 1.0, 1.0 / std::sqrt(gamma), {0.0});
  }
  ref /= lam * 5.0;
  const BilinearResult r = bilinear_estimate(s, Vector::Ones(1), Vector::Ones(1), {lam, beta, gamma}, {4000, 12});
  // A residual around a huge explicit term would put the variance at the outlier's scale.
  EXPECT_LT(r.mc_stderr, 0.05);
  EXPECT_NEAR(r.value, ref, 4.0 * r.mc_stderr + 1e-12);
}

TEST(BilinearEstimate, ExplicitPartMatchesGaussHermite) {
  const MatrixSample s = small_2x2();
  const BilinearScaleParams prm{0.6, 1.8, 2.7};
  const Vector xi = unit({0.3, -0.8}), th = unit({1.0, 0.45});
  BilinearEstimator est(s, prm, {10, 0});
  const double got = est.evaluate(xi, th).explicit_part;
  // E of lambda t - lambda^3 t^3 / 6 with t = <xi', M theta'>: a cubic in
  // four independent Gaussians, so the 3-node rule per axis is exact.
  double ref = 0.0;
  for (const auto& m : s.data)
    for (int i0 = 0; i0 < 3; ++i0)
      for (int i1 = 0; i1 < 3; ++i1)
        for (int j0 = 0; j0 < 3; ++j0)
          for (int j1 = 0; j1 < 3; ++j1) {
            const Vector xp = xi + Vector((Vector(2) << kGhNode[i0], kGhNode[i1]).finished()) / std::sqrt(prm.beta);
            const Vector tp = th + Vector((Vector(2) << kGhNode[j0], kGhNode[j1]).finished()) / std::sqrt(prm.gamma);
            const double t = prm.lambda * xp.dot(m * tp);
            ref += kGhWeight[i0] * kGhWeight[i1] * kGhWeight[j0] * kGhWeight[j1] * (t - t * t * t / 6.0);
          }
  ref /= prm.lambda * 3.0;
  EXPECT_NEAR(got, ref, 1e-12);
}

TEST(BilinearEstimate, MatchesNaiveTwoLayerMonteCarlo) {
  const MatrixSample s = small_2x2();
  const BilinearScaleParams prm{1.0, 2.0, 2.0};
  const Vector xi = unit({0.6, 0.8}), th = unit({-0.2, 1.0});
  const BilinearResult r = bilinear_estimate(s, xi, th, prm, {1000000, 21});
  CounterRng rng(77);
  const int draws = 1000000;
  double sum = 0.0, sum2 = 0.0;
  Vector xp(2), tp(2);
  for (int k = 0; k < draws; ++k) {
    xp << rng.normal(), rng.normal();
    tp << rng.normal(), rng.normal();
    xp = xi + xp / std::sqrt(prm.beta);
    tp = th + tp / std::sqrt(prm.gamma);
    double v = 0.0;
    for (const auto& m : s.data) v += oracle::psi_sym(prm.lambda * xp.dot(m * tp));
    v /= prm.lambda * 3.0;
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sum2 / draws - mean * mean) / (draws - 1));
  EXPECT_NEAR(r.value, mean, 3.0 * std::hypot(se, r.mc_stderr));
}

TEST(BilinearEstimate, GradientsMatchFiniteDifferences) {
  const MatrixSample s = random_sample(8, 3, 4, 4);
  BilinearEstimator est(s, {0.9, 2.0, 3.0}, {300, 2});
  const Vector xi = unit({0.5, -1.0, 0.2}), th = unit({0.3, 0.1, -0.7, 1.0});
  Vector gx, gt;
  est.evaluate(xi, th, &gx, &gt);
  const double h = 1e-6;
  for (int j = 0; j < 3; ++j) {
    const Vector e = Vector::Unit(3, j);
    const double fd = (est.evaluate((xi + h * e).normalized(), th).value -
                       est.evaluate((xi - h * e).normalized(), th).value) / (2 * h);
    const Vector tang = e - xi[j] * xi;
    EXPECT_NEAR(gx.dot(tang), fd, 1e-6);
  }
  for (int j = 0; j < 4; ++j) {
    const Vector e = Vector::Unit(4, j);
    const double fd = (est.evaluate(xi, (th + h * e).normalized()).value -
                       est.evaluate(xi, (th - h * e).normalized()).value) / (2 * h);
    const Vector tang = e - th[j] * th;
    EXPECT_NEAR(gt.dot(tang), fd, 1e-6);
  }
}

TEST(BilinearEstimate, StderrShrinksWithDraws) {
  const MatrixSample s = random_sample(20, 2, 2, 9);
  const Vector xi = unit({1, 1}), th = unit({1, -0.3});
  double r2 = 0.0, r4 = 0.0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) {
    const auto se = [&](int k) { return bilinear_estimate(s, xi, th, {1.2, 1.0, 1.0}, {k, 1000ULL + rep}).mc_stderr; };
    const double a = se(400), b = se(800), c = se(1600);
    r2 += a / b;
    r4 += a / c;
  }
  EXPECT_NEAR(r2 / reps, std::numbers::sqrt2, 0.2 * std::numbers::sqrt2);
  EXPECT_NEAR(r4 / reps, 2.0, 0.4);
}

TEST(BilinearEstimate, DeterministicGivenSeed) {
  const MatrixSample s = random_sample(10, 3, 3, 2);
  const Vector xi = unit({1, 2, 3}), th = unit({-1, 0, 1});
  const BilinearResult a = bilinear_estimate(s, xi, th, {1.0, 2.0, 2.0}, {100, 5});
  const BilinearResult b = bilinear_estimate(s, xi, th, {1.0, 2.0, 2.0}, {100, 5});
  const BilinearResult c = bilinear_estimate(s, xi, th, {1.0, 2.0, 2.0}, {100, 6});
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.mc_stderr, b.mc_stderr);
  EXPECT_NE(a.value, c.value);
}

TEST(SelectParamsMatrix, WorkedExample) {
  const MatrixParamChoice c = select_params_matrix(100, {1.0, 5.0, 3.0, 15.0}, 0.05);
  EXPECT_EQ(c.params.beta, 16.0);
  EXPECT_EQ(c.params.gamma, 16.0);
  const double var = 1.0 + 5.0 / 16 + 3.0 / 16 + 15.0 / 256;
  EXPECT_NEAR(c.params.lambda, std::sqrt((32.0 + 2 * std::log(20.0)) / (100 * var)), 1e-15);
  EXPECT_NEAR(c.B_n, std::sqrt(var * (32.0 + 2 * std::log(20.0)) / 100), 1e-15);
}

TEST(SelectParamsMatrix, IidEntries) {
  const int p = 7, q = 4;
  const double s2 = 2.5, delta = 0.01;
  const MatMomentBounds b{s2, p * s2, q * s2, p * q * s2};
  const MatrixParamChoice c = select_params_matrix(50, b, delta);
  EXPECT_NEAR(c.params.beta, 2.0 * (p + q), 1e-12);
  EXPECT_NEAR(matrix_complexity(b, delta), 4.0 * (p + q) + std::log(1.0 / delta), 1e-12);
}

TEST(SelectParamsMatrix, SimplifiedBoundDominates) {
  CounterRng rng(31);
  for (int i = 0; i < 20; ++i) {
    const double v = 0.1 + rng.uniform();
    const double t = v * (1.0 + 5.0 * rng.uniform());
    const double u = v * (1.0 + 5.0 * rng.uniform());
    const double T = std::max(t, u) * (1.0 + 20.0 * rng.uniform());
    const double delta = 0.001 + 0.5 * rng.uniform();
    const long n = 10 + static_cast<long>(1000 * rng.uniform());
    const MatMomentBounds b{v, t, u, T};
    EXPECT_LE(select_params_matrix(n, b, delta).B_n, bilinear_bound_simplified(n, b, delta) * (1 + 1e-14));
  }
}

TEST(SelectParamsMatrix, RejectsUnorderedBounds) {
  EXPECT_THROW(select_params_matrix(10, {2.0, 1.0, 3.0, 4.0}, 0.1), DomainError);
  EXPECT_THROW(select_params_matrix(10, {1.0, 5.0, 3.0, 4.0}, 0.1), DomainError);
  EXPECT_THROW(select_params_matrix(10, {1.0, 1.0, 1.0, 1.0}, 1.0), DomainError);
}

TEST(SelectParamsMatrix, OperatorRadiusBelowHilbertSchmidt) {
  const int p = 30, q = 30;
  const MatMomentBounds b{1.0, 1.0 * p, 1.0 * q, 1.0 * p * q};
  for (long n : {100L, 1000L, 100000L}) EXPECT_LT(select_params_matrix(n, b, 0.05).B_n, hs_bound(n, b, 0.05));
}

TEST(MatrixFit, ConstantSampleOperator) {
  Matrix m0(3, 2);
  m0 << 0.01, -0.02, 0.005, 0.0, 0.015, -0.01;
  const MatrixSample s = constant_sample(m0, 40);
  const MatrixEstimate e = fit_matrix_operator(s, {1.0, 2.0, 3.0, 6.0}, 0.05, {200, 1});
  EXPECT_TRUE(e.certified);
  EXPECT_LE(e.op_gap, 0.5 * e.op_radius + 1e-9);
  EXPECT_LE(op_norm(e.m_hat - m0), e.op_radius);
}

TEST(MatrixFit, ScalarCaseMatchesVectorPipeline) {
  CounterRng rng(3);
  Matrix x(200, 1);
  for (int i = 0; i < 200; ++i) x(i, 0) = 0.5 + rng.normal() / std::sqrt(std::max(0.1, rng.uniform()));
  const MatrixSample s = MatrixSample::from_rows(x, 1, 1);
  const MatMomentBounds b{4.0, 4.0, 4.0, 4.0};
  const double delta = 0.05;
  const MatrixEstimate e = fit_matrix_operator(s, b, delta, {2000, 4});
  const BilinearScaleParams prm = select_params_matrix(200, b, delta).params;
  // Same scale parameters on the scalar side; gamma's extra smoothing is
  // covered by the explicit terms, so compare against the estimator itself.
  const double e_plus = bilinear_estimate(s, Vector::Ones(1), Vector::Ones(1), prm, {2000, 4}).value;
  const double e_minus = -bilinear_estimate(s, -Vector::Ones(1), Vector::Ones(1), prm, {2000, 4}).value;
  EXPECT_NEAR(e_plus, e_minus, 1e-15);
  EXPECT_NEAR(e.m_hat(0, 0), e_plus, 1e-8);
  const double scalar = directional_estimate(x, Vector::Ones(1), {prm.lambda, prm.beta});
  EXPECT_NEAR(e.m_hat(0, 0), scalar, std::abs(scalar) * 0.05 + 3 * e.mc_stderr + 0.02);
}

TEST(MatrixFit, CertificateSurvivesFreshRestarts) {
  const MatrixSample s = random_sample(150, 3, 3, 12, 0.7);
  const MatMomentBounds b{12.0, 36.0, 36.0, 108.0};
  const double delta = 0.05;
  const McConfig mc{200, 8};
  const MatrixEstimate e = fit_matrix_operator(s, b, delta, mc);
  ASSERT_TRUE(e.certified);
  BilinearEstimator est(s, select_params_matrix(150, b, delta).params, mc);
  SphereOptions so;
  so.restarts = 64;
  so.seed = 4242;
  const SphereResult r = product_sphere_maximize(
      [&](const Vector& x, Vector* g) {
        const Vector xi = x.head(3), th = x.tail(3);
        Vector gx, gt;
        const double v = est.evaluate(xi, th, g ? &gx : nullptr, g ? &gt : nullptr).value;
        if (g) {
          g->resize(6);
          g->head(3) = e.m_hat * th - gx;
          g->tail(3) = e.m_hat.transpose() * xi - gt;
        }
        return xi.dot(e.m_hat * th) - v;
      },
      {3, 3}, {}, so);
  EXPECT_LE(r.value, 0.5 * e.op_radius + 2e-9);
}

TEST(MatrixFit, CombinedConstantSample) {
  Matrix m0(2, 3);
  m0 << 0.02, 0.0, -0.01, 0.01, 0.03, 0.0;
  const MatrixSample s = constant_sample(m0, 30);
  const MatrixEstimate e = fit_matrix_combined(s, {1.0, 2.0, 2.0, 4.0, 2.0}, 0.05, {200, 1});
  EXPECT_TRUE(e.certified);
  ASSERT_TRUE(e.hs_radius.has_value());
  ASSERT_TRUE(e.hs_gap.has_value());
  EXPECT_LE(e.op_gap, 0.5 * e.op_radius + 1e-9);
  EXPECT_LE(*e.hs_gap, 0.5 * *e.hs_radius + 1e-9);
  EXPECT_LE(op_norm(e.m_hat - m0), e.op_radius);
  EXPECT_LE((e.m_hat - m0).norm(), *e.hs_radius);
}

TEST(MatrixFit, CombinedHeavyTailGapsWithinRadii) {
  const MatrixSample s = random_sample(120, 2, 2, 17, 0.3);
  const MatMomentBounds b{12.0, 24.0, 24.0, 48.0, 12.0};
  const MatrixEstimate e = fit_matrix_combined(s, b, 0.05, {200, 2});
  EXPECT_TRUE(e.certified);
  EXPECT_LE(e.op_gap, 0.5 * e.op_radius + 1e-9);
  EXPECT_LE(*e.hs_gap, 0.5 * *e.hs_radius + 1e-9);
}

TEST(CenteredMatrix, ConstantSample) {
  Matrix m0(2, 2);
  m0 << 0.5, -0.2, 0.1, 0.3;
  const MatrixSample s = constant_sample(m0, 30);
  const CenteredMatMomentBounds cb{0.5, 1.0, 1.0, 2.0, 0.5, 0.5};
  const MatrixEstimate e = estimate_matrix_centered(s, cb, 0.1, std::nullopt, {200, 1});
  EXPECT_TRUE(e.certified);
  EXPECT_LE(op_norm(e.m_hat - m0), e.op_radius);
}

TEST(CenteredMatrix, SplitOutOfRange) {
  const MatrixSample s = constant_sample(Matrix::Ones(2, 2), 5);
  const CenteredMatMomentBounds cb{1.0, 1.0, 1.0, 2.0, 4.0, 4.0};
  EXPECT_THROW(estimate_matrix_centered(s, cb, 0.1, 0L), DomainError);
  EXPECT_THROW(estimate_matrix_centered(s, cb, 0.1, 5L), DomainError);
  EXPECT_THROW(estimate_matrix_centered(s, {1.0, 1.0, 1.0, 2.0, 3.0, 2.0}, 0.1), DomainError);
}

TEST(CenteredMatrix, BoundApproachesAsymptoticForm) {
  // Smallest possible complexity: t = u = T = v, known zero mean.
  const CenteredMatMomentBounds cb{1.0, 1.0, 1.0, 1.0, 0.0, 0.0};
  const double delta = 0.05;
  auto ratio = [&](long n) {
    const double c = centered_matrix_constants(n, default_split(n), cb, delta).C_nk;
    const double lim = std::sqrt(2.0 * cb.v_bar / n *
                                 (2.0 * std::log(2.0 / delta) +
                                  4.0 * std::max((cb.t_bar + cb.u_bar) / cb.v_bar, std::sqrt(cb.T_bar / cb.v_bar))));
    return c / lim;
  };
  EXPECT_GT(ratio(10000), ratio(1000000));
  EXPECT_GT(ratio(1000000), ratio(100000000));
  EXPECT_NEAR(ratio(100000000), 1.0, 0.01);
  EXPECT_NEAR(ratio(1000000), 1.0, 0.05);
}

TEST(CenteredMatrix, ZeroMeanAgreesWithUncentered) {
  const MatrixSample s = random_sample(200, 2, 2, 41);
  const MatMomentBounds b{10.0, 20.0, 20.0, 40.0, 10.0};
  const McConfig mc{200, 3};
  const MatrixEstimate u = fit_matrix_operator(s, b, 0.05, mc);
  const MatrixEstimate c = estimate_matrix_centered(s, {10.0, 20.0, 20.0, 40.0, 0.1, 0.2, 10.0}, 0.05, std::nullopt, mc);
  EXPECT_LE(op_norm(u.m_hat - c.m_hat), u.op_radius + c.op_radius);
}

TEST(AdaptiveMatrix, ZeroSample) {
  const MatrixSample s = constant_sample(Matrix::Zero(2, 3), 6);
  EXPECT_EQ(adaptive_bilinear_estimate(s, unit({1, 1}), unit({1, 0, 1}), AdaptiveGrid{}, 1.0, 0.05, {100, 1}), 0.0);
}

TEST(AdaptiveMatrix, Antisymmetric) {
  const MatrixSample s = small_2x2();
  AdaptiveBilinear est(s, AdaptiveGrid{}, 1.0, 0.05, {300, 2});
  for (double a = 0.2; a < 6.3; a += 0.9) {
    const Vector xi = unit({std::cos(a), std::sin(a)}), th = unit({std::sin(2 * a), 1.0});
    EXPECT_EQ(est(-xi, th), -est(xi, th));
  }
}

TEST(AdaptiveMatrix, SingleColumnMatchesQuadrature) {
  // q = 1: theta' = 1 + W / sqrt(gamma) is scalar, so E+ is a 1-D integral
  // of phi_asym inside the grid maximum.
  MatrixSample s;
  s.p = 2;
  s.q = 1;
  Matrix a(2, 1), b(2, 1);
  a << 1.3, -0.4;
  b << -0.2, 0.9;
  s.data = {a, b};
  const double delta = 0.1, chi = 1.0;
  AdaptiveGrid g;
  g.k_max = 6;
  const Vector xi = unit({0.8, 0.6});
  const double ell = std::log(1.0 / delta), beta = 2.0 * chi * ell, gamma = beta;
  auto side = [&](const Vector& x) {
    double best = -1e300;
    for (int k = -6; k <= 6; ++k) {
      const double lam = std::exp(static_cast<double>(k)) / std::sqrt(2.0);
      const double mu = k == 0 ? 0.5 : 1.0 / (2.0 * (std::abs(k) + 1) * (std::abs(k) + 2));
      double sum = 0.0;
      for (const auto& m : s.data) {
        const double am = x.dot(m.col(0)), nm = m.col(0).norm();
        auto inner = [&](double th) { return oracle::phi_asym(lam * am * th, lam * nm * std::abs(th) / std::sqrt(beta)); };
        sum += oracle::gaussian_expectation(inner, 1.0, 1.0 / std::sqrt(gamma), {0.0});
      }
      best = std::max(best, sum / (2.0 * lam) - (beta + gamma + 2.0 * std::log(1.0 / (delta * mu))) / (4.0 * lam));
    }
    return best;
  };
  const double ref = side(xi) - side(-xi);
  AdaptiveBilinear est(s, g, chi, delta, {40000, 6});
  const double got = est(xi, Vector::Ones(1));
  EXPECT_NEAR(got, ref, 4.0 * est.mc_stderr(xi, Vector::Ones(1)) + 1e-12);
}

TEST(AdaptiveMatrix, GradientsMatchFiniteDifferences) {
  const MatrixSample s = random_sample(60, 2, 3, 23);
  AdaptiveBilinear est(s, AdaptiveGrid{}, 1.0, 0.05, {200, 3});
  const Vector xi = unit({0.4, -1.0}), th = unit({0.3, 0.8, -0.2});
  Vector gx, gt;
  est(xi, th, &gx, &gt);
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    const Vector e = Vector::Unit(2, j);
    const double fd = (est((xi + h * e).normalized(), th) - est((xi - h * e).normalized(), th)) / (2 * h);
    EXPECT_NEAR(gx.dot(e - xi[j] * xi), fd, 1e-6);
  }
  for (int j = 0; j < 3; ++j) {
    const Vector e = Vector::Unit(3, j);
    const double fd = (est(xi, (th + h * e).normalized()) - est(xi, (th - h * e).normalized())) / (2 * h);
    EXPECT_NEAR(gt.dot(e - th[j] * th), fd, 1e-6);
  }
}

TEST(AdaptiveMatrix, OptimalChiRadiusForm) {
  // At chi = sqrt(T/v)/ell the radius 2B is at most (8C/sqrt n) sqrt(v ell + t + u + sqrt(v T)).
  const MatMomentBounds b{1.0, 10.0, 10.0, 2500.0};
  const double delta = 0.05, ell = std::log(1.0 / delta);
  const long n = 4000;
  const double chi = optimal_chi(b.T, b.v, delta);
  ASSERT_GT(chi, 1.0);
  const double C = adaptive_matrix_constant(std::numbers::e, delta, chi, b, 1.0);
  const double radius = 2.0 * adaptive_matrix_bound(n, std::numbers::e, delta, chi, b, 1.0);
  const double exact = 4.0 * C *
                       std::sqrt(2.0 / n * (2.0 * b.v * ell + 2.0 * std::sqrt(b.v * b.T) + (b.t + b.u) * (1.0 + chi) / chi));
  EXPECT_NEAR(radius, exact, 1e-12 * exact);
  EXPECT_LE(radius, 8.0 * C / std::sqrt(static_cast<double>(n)) * std::sqrt(b.v * ell + b.t + b.u + std::sqrt(b.v * b.T)));
  EXPECT_EQ(optimal_chi(1.0, 1.0, delta), 1.0);
}

TEST(AdaptiveMatrix, LargerChiShrinksTraceTerm) {
  const MatMomentBounds b{1.0, 5.0, 5.0, 5000.0};
  const double delta = 0.05, ell = std::log(1.0 / delta);
  auto t_term = [&](double chi) { return 2.0 * (1.0 + chi) * b.T / (chi * chi * ell); };
  EXPECT_LT(t_term(4.0), t_term(1.0));
  EXPECT_LT(adaptive_matrix_bound(1000, std::numbers::e, delta, 4.0, b, 1.0),
            adaptive_matrix_bound(1000, std::numbers::e, delta, 1.0, b, 1.0));
}

TEST(AdaptiveMatrix, EstimateWithKnownMoments) {
  const MatrixSample s = random_sample(120, 2, 2, 55, 0.4);
  const MatMomentBounds b{10.0, 20.0, 20.0, 40.0};
  const double delta = 0.05;
  MatrixFitOptions opt;
  opt.search.restarts = 6;
  const MatrixEstimate e = estimate_matrix_adaptive(s, AdaptiveGrid{}, 1.0, delta, {60, 4}, b, opt);
  EXPECT_TRUE(e.certified);
  EXPECT_GT(e.constant_C, 0.0);
  EXPECT_LE(op_norm(e.m_hat - Matrix::Constant(2, 2, 0.4)), e.op_radius);
  // Without moments the fit runs to convergence; a looser tolerance keeps it short.
  opt.tol = 1e-6;
  const MatrixEstimate u = estimate_matrix_adaptive(s, AdaptiveGrid{}, 1.0, delta, {60, 4}, std::nullopt, opt);
  EXPECT_FALSE(u.certified);
  EXPECT_NEAR(u.op_radius, 2.0 * u.op_gap, 1e-15);
  EXPECT_LE(u.op_gap, e.op_gap + 1e-6);
}

TEST(MatrixFit, DeterministicAcrossRuns) {
  const MatrixSample s = random_sample(60, 2, 3, 8);
  const MatMomentBounds b{10.0, 30.0, 20.0, 60.0};
  const MatrixEstimate a = fit_matrix_operator(s, b, 0.05, {100, 9});
  const MatrixEstimate c = fit_matrix_operator(s, b, 0.05, {100, 9});
  EXPECT_EQ(a.m_hat, c.m_hat);
  EXPECT_EQ(a.op_gap, c.op_gap);
}
