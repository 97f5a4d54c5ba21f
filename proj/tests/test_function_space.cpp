#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ngd/function_space.hpp"
#include "ngd/model_linear.hpp"
#include "ngd/random.hpp"
#include "ngd/sampling.hpp"

using namespace ngd;

namespace {

FunctionHandle monomial(int k) {
  return FunctionHandle([k](double x) { return std::pow(x, k); }, "x^" + std::to_string(k));
}

// Closed-form Legendre polynomials, normalized on Uniform[-1, 1].
double normalized_legendre(int k, double x) {
  switch (k) {
    case 0: return 1.0;
    case 1: return std::sqrt(3.0) * x;
    case 2: return std::sqrt(5.0) * 0.5 * (3.0 * x * x - 1.0);
    default: return std::sqrt(7.0) * 0.5 * (5.0 * x * x * x - 3.0 * x);
  }
}

}  // namespace

TEST(Quadrature, TwoPointGaussIsExactForCubics) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 2);
  EXPECT_NEAR(q.integrate([](double x) { return x * x; }), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(q.integrate([](double x) { return x * x * x; }), 0.0, 1e-15);
}

TEST(Quadrature, GaussianSecondMoment) {
  const Quadrature q = build_quadrature(ReferenceMeasure::gaussian(), 64);
  EXPECT_NEAR(q.integrate([](double x) { return x * x; }), 1.0, 1e-12);
}

TEST(Quadrature, ExponentialOnUniform) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 128);
  EXPECT_NEAR(q.integrate([](double x) { return std::exp(x); }), std::sinh(1.0), 1e-12);
}

TEST(Quadrature, RejectsFewerThanTwoNodes) {
  EXPECT_THROW(build_quadrature(ReferenceMeasure::uniform(), 1), InvalidArgument);
  EXPECT_THROW(build_quadrature(ReferenceMeasure::gaussian(), 0), InvalidArgument);
}

TEST(Quadrature, WeightsArePositiveAndSumToOne) {
  for (const auto& m : {ReferenceMeasure::uniform(), ReferenceMeasure::gaussian()}) {
    for (int n : {2, 7, 64, 128}) {
      const Quadrature q = build_quadrature(m, n);
      double total = 0.0;
      for (double w : q.weights) {
        EXPECT_GT(w, 0.0);
        total += w;
      }
      EXPECT_NEAR(total, 1.0, 1e-12) << m.name() << " n=" << n;
    }
  }
}

TEST(Quadrature, DeclaredDegreeExactness) {
  // Uniform moments 1/(k+1) for even k; Gaussian moments (k-1)!! for even k.
  const int n = 6;
  const Quadrature qu = build_quadrature(ReferenceMeasure::uniform(), n);
  const Quadrature qg = build_quadrature(ReferenceMeasure::gaussian(), n);
  double double_factorial = 1.0;
  for (int k = 0; k <= 2 * n - 1; ++k) {
    const double uniform_moment = k % 2 ? 0.0 : 1.0 / (k + 1);
    if (k >= 2 && k % 2 == 0) double_factorial *= (k - 1);
    const double gaussian_moment = k % 2 ? 0.0 : double_factorial;
    EXPECT_NEAR(qu.integrate([k](double x) { return std::pow(x, k); }), uniform_moment, 1e-13) << k;
    EXPECT_NEAR(qg.integrate([k](double x) { return std::pow(x, k); }), gaussian_moment, 1e-9 * std::max(1.0, gaussian_moment)) << k;
  }
}

TEST(ExactInnerProduct, ConstantHasUnitNorm) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 16);
  EXPECT_NEAR(exact_inner_product(FunctionHandle::constant(1.0), FunctionHandle::constant(1.0), q), 1.0, 1e-14);
}

TEST(ExactInnerProduct, OddProductVanishes) {
  for (int n : {2, 3, 10}) {
    const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), n);
    EXPECT_NEAR(exact_inner_product(monomial(1), monomial(2), q), 0.0, 1e-15);
  }
}

TEST(ExactInnerProduct, GaussianMomentGeneratingFunction) {
  const Quadrature q = build_quadrature(ReferenceMeasure::gaussian(), 64);
  const FunctionHandle e([](double x) { return std::exp(x); });
  EXPECT_NEAR(exact_inner_product(e, e, q), std::exp(2.0), 1e-10);
}

TEST(ExactInnerProduct, SymmetricAndBilinear) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 32);
  const FunctionHandle u([](double x) { return std::sin(2.0 * x); });
  const FunctionHandle v([](double x) { return std::exp(-x); });
  const FunctionHandle w([](double x) { return x * x; });
  EXPECT_NEAR(exact_inner_product(u, v, q), exact_inner_product(v, u, q), 1e-15);
  EXPECT_NEAR(exact_inner_product(2.0 * u + w, v, q), 2.0 * exact_inner_product(u, v, q) + exact_inner_product(w, v, q),
              1e-14);
}

TEST(ExactInnerProduct, NonFiniteEvaluationCarriesNode) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 4);
  const FunctionHandle bad([](double x) { return x < 0 ? std::log(x) : 1.0; });
  try {
    exact_inner_product(bad, FunctionHandle::constant(1.0), q);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_LT(e.node(), 0.0);
  }
}

TEST(EmpiricalInnerProduct, DirectArithmetic) {
  SampleBatch b;
  b.points = {-0.5, 0.5};
  b.weights = {1.0, 1.0};
  EXPECT_DOUBLE_EQ(empirical_inner_product(monomial(1), monomial(1), b), 0.25);
  EXPECT_DOUBLE_EQ(empirical_inner_product(FunctionHandle::constant(0.0), monomial(1), b), 0.0);
}

TEST(EmpiricalInnerProduct, EmptyBatchRejected) {
  SampleBatch b;
  EXPECT_THROW(empirical_inner_product(monomial(1), monomial(1), b), InvalidArgument);
}

TEST(EmpiricalInnerProduct, UnbiasedForUniformSamples) {
  const int reps = 100000;
  Rng rng(stream_seed(11, 0, 0, StreamPurpose::Verification));
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const SampleBatch b = draw_reference(ReferenceMeasure::uniform(), 1, rng);
    const double v = empirical_inner_product(monomial(1), monomial(1), b);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
  EXPECT_LE(std::abs(mean - 1.0 / 3.0), 3.0 * se);
}

TEST(EmpiricalInnerProduct, UnbiasedUnderOptimalSampling) {
  const OrthonormalBasis basis = legendre_basis(3);
  const TabulatedChristoffelSampler sampler(basis, ReferenceMeasure::uniform());
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 64);
  const FunctionHandle u([](double x) { return std::exp(x); });
  const FunctionHandle v([](double x) { return std::cos(2.0 * x); });
  const double exact = exact_inner_product(u, v, q);
  Rng rng(stream_seed(12, 0, 0, StreamPurpose::Verification));
  const int reps = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const SampleBatch b = draw_iid_optimal(basis, sampler, 2, rng);
    const double x = empirical_inner_product(u, v, b);
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
  EXPECT_LE(std::abs(mean - exact), 4.0 * se);
}

TEST(Gramian, LegendreBasisIsIdentity) {
  const OrthonormalBasis basis = legendre_basis(3);
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 128);
  const Eigen::MatrixXd g = gramian(basis.functions(), q);
  EXPECT_LE((g - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gramian, MonomialMoments) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 8);
  const Eigen::MatrixXd g = gramian({monomial(0), monomial(1)}, q);
  EXPECT_NEAR(g(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(g(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(g(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(g(1, 1), 1.0 / 3.0, 1e-15);
}

TEST(Gramian, DuplicatedFunctionIsRankOne) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 8);
  const Eigen::MatrixXd g = gramian({monomial(0), monomial(0)}, q);
  EXPECT_LE((g - Eigen::MatrixXd::Ones(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
  EXPECT_NEAR(eig.eigenvalues()(0), 0.0, 1e-14);
}

TEST(Gramian, PositiveSemidefiniteAndSymmetric) {
  const Quadrature q = build_quadrature(ReferenceMeasure::gaussian(), 40);
  FunctionSystem sys = {monomial(0), monomial(1), monomial(2), FunctionHandle([](double x) { return std::sin(x); }),
                        FunctionHandle([](double x) { return std::sin(x) + x; })};
  const Eigen::MatrixXd g = gramian(sys, q);
  EXPECT_LE((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
  EXPECT_GE(eig.eigenvalues()(0), -1e-10);
}

TEST(Orthonormalize, MonomialsGiveLegendreUpToSign) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 128);
  const OrthonormalBasis basis = orthonormalize({monomial(0), monomial(1), monomial(2)}, q);
  ASSERT_EQ(basis.dimension(), 3);
  for (double x : {-0.9, -0.3, 0.0, 0.4, 1.0}) {
    const Eigen::VectorXd b = basis.evaluate(x);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(std::abs(b(k)), std::abs(normalized_legendre(k, x)), 1e-10) << k << " " << x;
  }
}

TEST(Orthonormalize, OrthonormalInputGivesIdentityTransform) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 128);
  FunctionSystem sys;
  for (int k = 0; k < 4; ++k) sys.emplace_back([k](double x) { return normalized_legendre(k, x); });
  const OrthonormalBasis basis = orthonormalize(sys, q);
  EXPECT_LE((basis.transform().cwiseAbs() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Orthonormalize, NearDuplicateCollapses) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 16);
  const OrthonormalBasis basis =
      orthonormalize({monomial(0), FunctionHandle([](double x) { return 1.0 + 1e-15 * x; })}, q, 1e-10);
  EXPECT_EQ(basis.dimension(), 1);
  EXPECT_EQ(basis.system_size(), 2);
}

TEST(Orthonormalize, ZeroGramianIsDegenerate) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 16);
  EXPECT_THROW(orthonormalize({FunctionHandle::constant(0.0)}, q), DegenerateSystem);
}

TEST(Orthonormalize, RankTolMustLieInUnitInterval) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 16);
  EXPECT_THROW(orthonormalize({monomial(0)}, q, 0.0), InvalidArgument);
  EXPECT_THROW(orthonormalize({monomial(0)}, q, 1.0), InvalidArgument);
}

TEST(Orthonormalize, RankDeficientSystemYieldsOrthonormalBasis) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 64);
  FunctionSystem sys = {monomial(0), monomial(1), FunctionHandle([](double x) { return 2.0 - 3.0 * x; }), monomial(2)};
  const OrthonormalBasis basis = orthonormalize(sys, q);
  EXPECT_EQ(basis.dimension(), 3);
  const Eigen::MatrixXd g = gramian(basis.functions(), q);
  EXPECT_LE((g - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Orthonormalize, EquilibratedRankDecisionKeepsSmallElements) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 64);
  FunctionSystem sys = {monomial(0), FunctionHandle([](double x) { return 1e-4 * x; }), monomial(2)};
  const Eigen::MatrixXd g = gramian(sys, q);
  const OrthonormalBasis plain = orthonormalize_gramian(sys, g, 1e-6);
  const OrthonormalBasis scaled = orthonormalize_gramian(sys, g, 1e-6, {}, true);
  EXPECT_EQ(plain.dimension(), 2);
  EXPECT_EQ(scaled.dimension(), 3);
  const Eigen::MatrixXd gs = gramian(scaled.functions(), q);
  EXPECT_LE((gs - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Christoffel, ConstantBasis) {
  const OrthonormalBasis basis = legendre_basis(1);
  for (double x : {-1.0, 0.0, 0.7}) EXPECT_NEAR(christoffel(basis, x), 1.0, 1e-14);
}

TEST(Christoffel, LegendreEndpointIsDimensionSquared) {
  const OrthonormalBasis basis = legendre_basis(2);
  EXPECT_NEAR(christoffel(basis, 1.0), 4.0, 1e-12);
}

TEST(Christoffel, IntegratesToDimension) {
  const Quadrature qu = build_quadrature(ReferenceMeasure::uniform(), 128);
  const Quadrature qg = build_quadrature(ReferenceMeasure::gaussian(), 128);
  for (int d : {1, 2, 3, 7}) {
    const OrthonormalBasis leg = legendre_basis(d);
    const OrthonormalBasis her = hermite_basis(d);
    EXPECT_NEAR(qu.integrate([&](double x) { return christoffel(leg, x); }), d, 1e-8);
    EXPECT_NEAR(qg.integrate([&](double x) { return christoffel(her, x); }), d, 1e-8);
  }
}

TEST(Christoffel, DominatesEachSquaredBasisFunction) {
  const OrthonormalBasis basis = hermite_basis(5);
  for (double x = -6.0; x <= 6.0; x += 0.37) {
    const Eigen::VectorXd b = basis.evaluate(x);
    const double k = christoffel(basis, x);
    for (int j = 0; j < b.size(); ++j) EXPECT_GE(k + 1e-15, b(j) * b(j));
  }
}
