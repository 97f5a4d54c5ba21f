#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ngd/descent.hpp"
#include "ngd/model_shallow_nn.hpp"

using namespace ngd;

namespace {

const FunctionHandle kSine([](double x) { return std::sin(2.0 * std::numbers::pi * x); }, "sin(2 pi x)");

ShallowNet sample_net(int m, std::uint64_t seed) {
  Rng rng(stream_seed(seed, 0, 0, StreamPurpose::Initialization));
  return initial_net(m, Activation::RePU, rng);
}

double brute_inner(const ShallowNet& f, const ShallowNet& g) {
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 4000);
  return q.integrate([&](double x) { return net_eval(f, x) * net_eval(g, x); });
}

}  // namespace

TEST(ShallowNet, ParameterRoundTrip) {
  const ShallowNet net = sample_net(4, 1);
  const Eigen::VectorXd p = net.parameters();
  ASSERT_EQ(p.size(), 13);
  const ShallowNet back = ShallowNet::from_parameters(p);
  EXPECT_EQ(back.parameters(), p);
  EXPECT_THROW(ShallowNet::from_parameters(Eigen::VectorXd::Zero(5)), InvalidArgument);
}

TEST(ShallowNet, EvaluationClosedForm) {
  ShallowNet net = ShallowNet::zero(2);
  net.A1 << 2.0, -1.0;
  net.b1 = 0.5;
  net.A0 << 1.0, -2.0;
  net.b0 << 0.0, 1.0;
  for (double x : {-0.9, -0.2, 0.4, 0.8}) {
    const double expected = 0.5 + 2.0 * std::pow(std::max(x, 0.0), 2) - std::pow(std::max(1.0 - 2.0 * x, 0.0), 2);
    EXPECT_NEAR(net_eval(net, x), expected, 1e-14);
  }
}

TEST(ShallowNet, InitialNetRanges) {
  const ShallowNet net = sample_net(50, 2);
  for (int j = 0; j < 50; ++j) {
    EXPECT_GE(std::abs(net.A0(j)), 1.0);
    EXPECT_LE(std::abs(net.A0(j)), 3.0);
    const double kink = -net.b0(j) / net.A0(j);
    EXPECT_GE(kink, -1.0);
    EXPECT_LE(kink, 1.0);
    EXPECT_LE(std::abs(net.A1(j)), 1.0 / 50.0);
  }
  EXPECT_EQ(net.b1, 0.0);
  Rng rng(1);
  EXPECT_THROW(initial_net(0, Activation::RePU, rng), InvalidArgument);
}

TEST(NetInnerProduct, ExactAgainstFineQuadrature) {
  const ShallowNet f = sample_net(5, 3), g = sample_net(7, 4);
  EXPECT_NEAR(net_inner_product(f, g, ReferenceMeasure::uniform()), brute_inner(f, g), 1e-9);
  EXPECT_NEAR(net_norm(f, ReferenceMeasure::uniform()), std::sqrt(brute_inner(f, f)), 1e-9);
}

TEST(NetSimplify, PreservesFunction) {
  const ShallowNet f = sample_net(4, 5);
  const ShallowNet doubled = net_add(f, f);
  const ShallowNet s = net_simplify(doubled);
  EXPECT_LE(s.width(), 4);
  for (double x = -1.0; x <= 1.0; x += 0.1) EXPECT_NEAR(net_eval(s, x), 2.0 * net_eval(f, x), 1e-12);
}

TEST(TangentSystem, ShapeAndConstantElement) {
  const TangentSystem sys = tangent_system(sample_net(6, 6));
  EXPECT_EQ(sys.size(), 19);
  const std::vector<double> xs = {-0.5, 0.25};
  const Eigen::MatrixXd v = sys.evaluate(xs);
  EXPECT_EQ(v.cols(), 19);
  EXPECT_EQ(v(0, 6), 1.0);
  EXPECT_THROW(tangent_system(sample_net(2, 1), 0.0), InvalidArgument);
}

TEST(TangentSystem, SurrogatesApproximateParameterDerivatives) {
  const ShallowNet net = sample_net(3, 7);
  const TangentSystem sys = tangent_system(net, 1e-6);
  for (double x : {-0.7, 0.1, 0.6}) {
    const Eigen::MatrixXd v = sys.evaluate(std::vector<double>{x});
    for (int j = 0; j < 3; ++j) {
      const double z = net.A0(j) * x + net.b0(j);
      const double dz = net.A1(j) * activate_derivative(Activation::RePU, z);
      EXPECT_NEAR(v(0, j), activate(Activation::RePU, z), 1e-14);
      EXPECT_NEAR(v(0, 4 + j), dz * x, 1e-5);
      EXPECT_NEAR(v(0, 7 + j), dz, 1e-5);
    }
  }
}

TEST(TangentSystem, CombinationMatchesSpanElement) {
  const TangentSystem sys = tangent_system(sample_net(4, 8));
  Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(sys.size(), -1.0, 2.0);
  const ShallowNet comb = sys.combination(c);
  for (double x = -1.0; x <= 1.0; x += 0.13) {
    const Eigen::MatrixXd v = sys.evaluate(std::vector<double>{x});
    EXPECT_NEAR(net_eval(comb, x), (v * c)(0), 1e-9);
  }
  EXPECT_THROW(sys.combination(Eigen::VectorXd::Zero(3)), InvalidArgument);
}

TEST(Retraction, ErrorIsSecondOrderInStep) {
  const ShallowNet net = sample_net(5, 9);
  const TangentSystem sys = tangent_system(net);
  const Eigen::VectorXd dir = Eigen::VectorXd::LinSpaced(sys.size(), -0.3, 0.3);
  EXPECT_EQ(nn_retraction(sys, 0.0, dir, ReferenceMeasure::uniform()).epsilon, 0.0);
  const double e1 = nn_retraction(sys, 1e-2, dir, ReferenceMeasure::uniform()).epsilon;
  const double e2 = nn_retraction(sys, 5e-3, dir, ReferenceMeasure::uniform()).epsilon;
  EXPECT_GT(e1, 0.0);
  EXPECT_NEAR(e1 / e2, 4.0, 0.5);
  EXPECT_EQ(nn_retraction(sys, 0.1, dir, ReferenceMeasure::uniform()).net.parameters(),
            apply_increment(net, 0.1, dir).parameters());
}

TEST(PiecewiseSampler, MassEqualsDimensionAndMatchesChristoffel) {
  const ShallowNetModel model(ReferenceMeasure::uniform(), kSine, ShallowNetOptions{.rank_tol = 1e-7});
  const ShallowNet net = sample_net(5, 10);
  const NetLinearization lin = model.linearize(net);
  const auto* sampler = dynamic_cast<const PiecewiseChristoffelSampler*>(lin.sampler.get());
  ASSERT_NE(sampler, nullptr);
  EXPECT_NEAR(sampler->mass(), lin.basis->dimension(), 1e-6 * lin.basis->dimension());
  double grid_sup = 0.0;
  for (double x = -1.0; x <= 1.0; x += 1e-4) grid_sup = std::max(grid_sup, christoffel(*lin.basis, x));
  EXPECT_NEAR(sampler->sup(), grid_sup, 1e-2 * grid_sup);
}

TEST(PiecewiseSampler, KolmogorovSmirnovAgainstTabulatedDensity) {
  const ShallowNetModel model(ReferenceMeasure::uniform(), kSine, ShallowNetOptions{.rank_tol = 1e-7});
  const NetLinearization lin = model.linearize(sample_net(4, 11));
  const int grid = 20001;
  std::vector<double> xs(grid), cdf(grid);
  for (int i = 0; i < grid; ++i) xs[i] = -1.0 + 2.0 * i / (grid - 1);
  const Eigen::VectorXd k = christoffel(*lin.basis, xs);
  cdf[0] = 0.0;
  for (int i = 1; i < grid; ++i) cdf[i] = cdf[i - 1] + 0.5 * (k(i) + k(i - 1)) * (xs[i] - xs[i - 1]);
  for (double& c : cdf) c /= cdf.back();
  const auto cdf_at = [&](double x) {
    const auto it = std::lower_bound(xs.begin(), xs.end(), x);
    const std::size_t i = std::clamp<std::size_t>(static_cast<std::size_t>(it - xs.begin()), 1, grid - 1);
    const double t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    return cdf[i - 1] + t * (cdf[i] - cdf[i - 1]);
  };
  Rng rng(12);
  const int n = 20000;
  std::vector<double> draws(n);
  for (double& x : draws) x = lin.sampler->draw(rng);
  std::sort(draws.begin(), draws.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = cdf_at(draws[i]);
    d = std::max({d, (i + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  EXPECT_LT(d, 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST(ShallowNetModel, DiagnosticsAgreeWithQuadrature) {
  const ShallowNetModel model(ReferenceMeasure::uniform(), kSine, ShallowNetOptions{.rank_tol = 1e-7});
  const ShallowNet net = sample_net(6, 13);
  const NetLinearization lin = model.linearize(net);
  const Diagnostics d = model.diagnose(net, lin);
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 4000);
  const double loss = 0.5 * q.integrate([&](double x) { return std::pow(net_eval(net, x) - kSine(x), 2); });
  EXPECT_NEAR(d.loss, loss, 1e-8);
  EXPECT_EQ(d.loss_gap, d.loss);
  EXPECT_NEAR(d.proj_norm * d.proj_norm + d.orth_norm * d.orth_norm, 2.0 * d.loss, 1e-8);
}

TEST(ShallowNetModel, TangentBasisIsOrthonormal) {
  const ShallowNetModel model(ReferenceMeasure::uniform(), kSine, ShallowNetOptions{.rank_tol = 1e-7});
  const NetLinearization lin = model.linearize(sample_net(5, 14));
  const int d = lin.basis->dimension();
  EXPECT_LE(d, 16);
  EXPECT_GE(d, 5);
  const Quadrature q = build_quadrature(ReferenceMeasure::uniform(), 4000);
  const Eigen::MatrixXd g = gramian(lin.basis->functions(), q);
  EXPECT_LE((g - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ShallowNetModel, ShortLeastSquaresRunDecreasesLoss) {
  const ShallowNetModel model(ReferenceMeasure::uniform(), kSine, ShallowNetOptions{.rank_tol = 1e-7});
  DescentConfig c;
  c.loss.target = kSine;
  c.estimator = EstimatorKind::LeastSquares;
  c.sampling = SamplingStrategy::conditioned(0.5);
  c.n = 200;
  c.schedule = StepSizeSchedule::adaptive();
  c.T = 10;
  c.master_seed = 3;
  const RunResult r = run(model, sample_net(8, 15), c);
  ASSERT_EQ(r.records.size(), 11u);
  EXPECT_FALSE(r.diverged);
  EXPECT_LT(r.records.back().loss, r.records.front().loss);
  for (const auto& rec : r.records) EXPECT_TRUE(std::isfinite(rec.loss));
}
