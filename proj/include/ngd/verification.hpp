#pragma once

// Monte-Carlo verification of the bias/variance constants of the projection estimators on
// Legendre spaces over Uniform[-1, 1].

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "function_space.hpp"
#include "model_linear.hpp"
#include "projectors.hpp"
#include "random.hpp"
#include "sampling.hpp"

namespace ngd {

struct VerifyOptions {
  EstimatorKind kind = EstimatorKind::Quasi;
  int d = 3;
  int n = 1;
  int replications = 100000;
  std::uint64_t seed = 1;
  double delta = 0.5;
  /// Non-projection only: use the generating system {1, 1 + x} instead of the Legendre basis.
  bool skewed_system = false;
  int grid_size = kDefaultVolumeGrid;
};

struct VerifyCheck {
  enum class Relation { AtLeast, AtMost, Equal };
  std::string label;
  Relation relation = Relation::AtLeast;
  double estimate = 0.0;
  double standard_error = 0.0;
  double reference = 0.0;
  double margin_se = 3.0;
  bool pass = false;
};

struct VerifyReport {
  VerifyOptions options;
  BiasVarianceConstants constants;
  double p_stable = 1.0;
  double k = 0.0;
  std::vector<VerifyCheck> checks;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

/// The five test functions used by verify_constants.
inline std::vector<FunctionHandle> canonical_test_functions() {
  return {FunctionHandle([](double x) { return std::exp(x); }, "exp(x)"),
          FunctionHandle([](double x) { return std::sin(3.0 * x); }, "sin(3x)"),
          FunctionHandle([](double x) { return 1.0 / (1.0 + 4.0 * x * x); }, "1/(1+4x^2)"),
          FunctionHandle([](double x) { return x * x * x; }, "x^3"),
          FunctionHandle([](double x) { return 1.0 + 2.0 * x; }, "1+2x")};
}

namespace detail {

struct RunningMoments {
  double sum = 0.0, sum_sq = 0.0;
  long count = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  double mean() const { return sum / static_cast<double>(count); }
  double standard_error() const {
    const double m = mean();
    const double var = std::max(0.0, sum_sq / static_cast<double>(count) - m * m) * count / std::max<long>(1, count - 1);
    return std::sqrt(var / static_cast<double>(count));
  }
};

inline VerifyCheck make_check(std::string label, VerifyCheck::Relation rel, const RunningMoments& m, double reference,
                              double margin) {
  VerifyCheck c;
  c.label = std::move(label);
  c.relation = rel;
  c.estimate = m.mean();
  c.standard_error = m.standard_error();
  c.reference = reference;
  c.margin_se = margin;
  const double slack = margin * c.standard_error + 1e-9 * std::max(1.0, std::abs(reference));
  switch (rel) {
    case VerifyCheck::Relation::AtLeast: c.pass = c.estimate + slack >= reference; break;
    case VerifyCheck::Relation::AtMost: c.pass = c.estimate - slack <= reference; break;
    case VerifyCheck::Relation::Equal: c.pass = std::abs(c.estimate - reference) <= slack; break;
  }
  return c;
}

}  // namespace detail

/// Estimates E(g, P^n g) and E||P^n g||^2 for the canonical test functions and checks them
/// against the (BBV) inequalities with the constants of `constants_for`, at a 3 standard error
/// margin. Unbiased estimators additionally get coefficientwise mean checks at 4 standard errors.
inline VerifyReport verify_constants(const VerifyOptions& opt) {
  if (opt.replications < 2) throw InvalidArgument("verify_constants: replications must be >= 2");
  if (opt.n < 1 || opt.d < 1) throw InvalidArgument("verify_constants: n and d must be >= 1");
  const EstimatorKind kind = opt.kind;
  if (kind == EstimatorKind::Exact) throw InvalidArgument("verify_constants: nothing to verify for the exact projection");
  const ReferenceMeasure measure = ReferenceMeasure::uniform();
  const Quadrature q = build_quadrature(measure, kLinearQuadratureNodes);

  // The basis of the linearization space and, for non-projection, the generating system.
  FunctionSystem system;
  OrthonormalBasis basis = legendre_basis(opt.skewed_system ? 2 : opt.d);
  if (kind == EstimatorKind::NonProjection && opt.skewed_system) {
    system = {FunctionHandle([](double) { return 1.0; }, "1"), FunctionHandle([](double x) { return 1.0 + x; }, "1+x")};
    basis = orthonormalize(system, q);
  } else {
    system = basis.functions();
  }
  const int d = basis.dimension();
  const Eigen::MatrixXd G = gramian(system, q);
  const TabulatedChristoffelSampler sampler(basis, measure);
  std::optional<VolumeRescaledSampler> volume;
  if (kind == EstimatorKind::LeastSquaresVolume) {
    if (opt.n < 2 * d + 2) throw InvalidArgument("verify_constants: volume sampling requires n >= 2d + 2");
    volume.emplace(basis, measure, opt.grid_size);
  }
  const bool reference_sampling = kind == EstimatorKind::NonProjection;
  const int n_tilde = std::max(opt.n, 2 * d);

  // Exact quantities per test function.
  const std::vector<FunctionHandle> tests = canonical_test_functions();
  const std::size_t m = tests.size();
  std::vector<Eigen::VectorXd> eta(m), zeta(m);
  std::vector<double> proj_sq(m), orth_sq(m);
  for (std::size_t j = 0; j < m; ++j) {
    eta[j] = exact_projection(basis, tests[j], q);
    zeta[j].resize(static_cast<Eigen::Index>(system.size()));
    for (std::size_t k = 0; k < system.size(); ++k) zeta[j](static_cast<Eigen::Index>(k)) = exact_inner_product(tests[j], system[k], q);
    proj_sq[j] = eta[j].squaredNorm();
    orth_sq[j] = std::max(0.0, exact_inner_product(tests[j], tests[j], q) - proj_sq[j]);
  }

  std::vector<detail::RunningMoments> bias(m), var(m);
  std::vector<std::vector<detail::RunningMoments>> coeff(m, std::vector<detail::RunningMoments>(static_cast<std::size_t>(d)));
  long accepted = 0, attempted = 0;

  auto draw_conditioned = [&](int size, Rng& rng, std::uint64_t seed) {
    SampleBatch b = draw_conditioned_stable(basis, sampler, size, opt.delta, rng, kDefaultMaxAttempts, seed);
    accepted += 1;
    attempted += b.attempts;
    return b;
  };

  for (int r = 0; r < opt.replications; ++r) {
    const std::uint64_t seed = stream_seed(opt.seed, static_cast<std::uint64_t>(r), 0, StreamPurpose::Verification);
    Rng rng(seed);
    SampleBatch batch;
    switch (kind) {
      case EstimatorKind::NonProjection: batch = draw_reference(measure, opt.n, rng, seed); break;
      case EstimatorKind::Quasi:
      case EstimatorKind::Debiased: batch = draw_iid_optimal(basis, sampler, opt.n, rng, seed); break;
      case EstimatorKind::LeastSquares: batch = draw_conditioned(opt.n, rng, seed); break;
      case EstimatorKind::LeastSquaresVolume: batch = volume->draw(opt.n, rng, seed); break;
      case EstimatorKind::Exact: break;
    }
    const Eigen::MatrixXd values = basis.evaluate(batch.points);
    Eigen::MatrixXd sys_values;
    if (kind == EstimatorKind::NonProjection) sys_values = opt.skewed_system ? basis.evaluate_system(batch.points) : values;
    SampleBatch tilde;
    Eigen::MatrixXd tilde_values;
    if (kind == EstimatorKind::Debiased) {
      const std::uint64_t aux = stream_seed(opt.seed, static_cast<std::uint64_t>(r), 0, StreamPurpose::AuxiliaryBatch);
      Rng aux_rng(aux);
      tilde = draw_conditioned(n_tilde, aux_rng, aux);
      tilde_values = basis.evaluate(tilde.points);
    }
    for (std::size_t j = 0; j < m; ++j) {
      const Eigen::VectorXd g = detail::values_at(tests[j], batch.points);
      Eigen::VectorXd c;
      double inner = 0.0, norm_sq = 0.0;
      if (kind == EstimatorKind::NonProjection) {
        c = quasi_coefficients(sys_values, batch.weights, g);
        inner = zeta[j].dot(c);
        norm_sq = c.dot(G * c);
      } else {
        switch (kind) {
          case EstimatorKind::Quasi: c = quasi_coefficients(values, batch.weights, g); break;
          case EstimatorKind::LeastSquares:
          case EstimatorKind::LeastSquaresVolume: c = least_squares_coefficients(values, batch.weights, g); break;
          case EstimatorKind::Debiased:
            c = debiased_coefficients(tilde_values, tilde.weights, detail::values_at(tests[j], tilde.points), values,
                                      batch.weights, g);
            break;
          default: break;
        }
        inner = eta[j].dot(c);
        norm_sq = c.squaredNorm();
        for (int k = 0; k < d; ++k) coeff[j][static_cast<std::size_t>(k)].add(c(k));
      }
      bias[j].add(inner);
      var[j].add(norm_sq);
    }
  }

  VerifyReport report;
  report.options = opt;
  report.p_stable = attempted > 0 ? static_cast<double>(accepted) / static_cast<double>(attempted) : 1.0;
  ConstantsQuery cq;
  cq.n = opt.n;
  cq.d = d;
  if (reference_sampling) {
    const KConstant kc = k_constant(basis, measure, [](double) { return 1.0; });
    cq.k = kc.unbounded ? std::numeric_limits<double>::infinity() : kc.value;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
    cq.lambda_min = eig.eigenvalues()(0);
    cq.lambda_max = eig.eigenvalues()(G.rows() - 1);
  } else {
    cq.k = d;
  }
  report.k = cq.k;
  switch (kind) {
    case EstimatorKind::LeastSquares:
      cq.delta = opt.delta;
      cq.p_stable = report.p_stable;
      break;
    case EstimatorKind::LeastSquaresVolume:
      cq.delta = opt.delta;
      break;
    case EstimatorKind::Debiased: {
      cq.q_constants = constants_for(EstimatorKind::Quasi, cq);
      ConstantsQuery pt = cq;
      pt.n = n_tilde;
      pt.delta = opt.delta;
      pt.p_stable = report.p_stable;
      cq.p_tilde_constants = constants_for(EstimatorKind::LeastSquares, pt);
      break;
    }
    default:
      break;
  }
  const BiasVarianceConstants c = constants_for(kind, cq);
  report.constants = c;

  using Rel = VerifyCheck::Relation;
  const bool unbiased = kind == EstimatorKind::Quasi || kind == EstimatorKind::LeastSquaresVolume || kind == EstimatorKind::Debiased;
  const bool tight = kind == EstimatorKind::Quasi;
  for (std::size_t j = 0; j < m; ++j) {
    const std::string name = tests[j].tag();
    const double pn = std::sqrt(proj_sq[j]), on = std::sqrt(orth_sq[j]);
    const double bias_bound = c.c_bias1 * proj_sq[j] - c.c_bias2 * pn * on;
    const double var_bound = c.c_var1 * proj_sq[j] + c.c_var2 * orth_sq[j];
    report.checks.push_back(detail::make_check("bias " + name, Rel::AtLeast, bias[j], bias_bound, 3.0));
    report.checks.push_back(detail::make_check("variance " + name, Rel::AtMost, var[j], var_bound, 3.0));
    if (tight) {
      report.checks.push_back(detail::make_check("bias tight " + name, Rel::Equal, bias[j], bias_bound, 3.0));
      report.checks.push_back(detail::make_check("variance tight " + name, Rel::Equal, var[j], var_bound, 3.0));
    }
    if (unbiased)
      for (int k = 0; k < d; ++k)
        report.checks.push_back(detail::make_check("unbiased " + name + " coefficient " + std::to_string(k), Rel::Equal,
                                                   coeff[j][static_cast<std::size_t>(k)], eta[j](k), 4.0));
  }
  return report;
}

}  // namespace ngd
