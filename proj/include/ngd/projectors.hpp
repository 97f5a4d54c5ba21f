#pragma once

// Estimators of the orthogonal projection onto a linearization space, and the bias and
// variance constants (c_bias1, c_bias2, c_var1, c_var2) they satisfy.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "errors.hpp"
#include "function_space.hpp"
#include "sampling.hpp"

namespace ngd {

enum class EstimatorKind { Exact, NonProjection, Quasi, LeastSquares, LeastSquaresVolume, Debiased };

inline std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Exact: return "exact";
    case EstimatorKind::NonProjection: return "non-projection";
    case EstimatorKind::Quasi: return "quasi";
    case EstimatorKind::LeastSquares: return "least-squares";
    case EstimatorKind::LeastSquaresVolume: return "least-squares-volume";
    case EstimatorKind::Debiased: return "debiased";
  }
  return "unknown";
}

/// Coefficients refer to the orthonormal basis, or to the generating system for the
/// non-projection.
enum class CoefficientSpace { Basis, System };

struct ProjectionEstimate {
  Eigen::VectorXd coefficients;
  EstimatorKind kind = EstimatorKind::Exact;
  CoefficientSpace space = CoefficientSpace::Basis;
  std::optional<std::uint64_t> batch_seed;
  std::optional<double> stability_delta;
  int rank = 0;
};

namespace detail {

inline Eigen::VectorXd weighted_moments(const Eigen::MatrixXd& values, const std::vector<double>& weights,
                                        const Eigen::VectorXd& g) {
  if (weights.empty()) throw InvalidArgument("empirical estimate on an empty batch");
  const Eigen::Map<const Eigen::VectorXd> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  return values.transpose() * w.cwiseProduct(g) / static_cast<double>(weights.size());
}

inline Eigen::VectorXd values_at(const FunctionHandle& g, const std::vector<double>& xs) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) out(static_cast<Eigen::Index>(i)) = checked_eval(g, xs[i]);
  return out;
}

}  // namespace detail

inline constexpr double kPseudoInverseCutoff = 1e-12;

/// Moore-Penrose pseudo-inverse of a symmetric matrix applied to a vector; eigenvalues
/// below cutoff * max are zeroed. Returns the retained rank through `rank`.
inline Eigen::VectorXd symmetric_pinv_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, int* rank = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  const Eigen::VectorXd& l = eig.eigenvalues();
  const double lmax = l.cwiseAbs().maxCoeff();
  Eigen::VectorXd c = eig.eigenvectors().transpose() * b;
  int r = 0;
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    if (lmax > 0.0 && std::abs(l(i)) > kPseudoInverseCutoff * lmax) {
      c(i) /= l(i);
      ++r;
    } else {
      c(i) = 0.0;
    }
  }
  if (rank) *rank = r;
  return eig.eigenvectors() * c;
}

// Raw-data forms: `values` holds basis (or system) values with rows = batch points,
// `g` the residual values at the same points.

inline Eigen::VectorXd quasi_coefficients(const Eigen::MatrixXd& values, const std::vector<double>& weights,
                                          const Eigen::VectorXd& g) {
  return detail::weighted_moments(values, weights, g);
}

inline Eigen::VectorXd least_squares_coefficients(const Eigen::MatrixXd& values, const std::vector<double>& weights,
                                                  const Eigen::VectorXd& g, int* rank = nullptr) {
  return symmetric_pinv_solve(empirical_gramian(values, weights), detail::weighted_moments(values, weights, g), rank);
}

/// eta_k = (g, b_k) by quadrature; the reference oracle for every estimator.
inline Eigen::VectorXd exact_projection(const OrthonormalBasis& basis, const FunctionHandle& g, const Quadrature& q) {
  const Eigen::MatrixXd values = basis.evaluate(q.nodes);
  const Eigen::VectorXd gv = detail::values_at(g, q.nodes);
  const Eigen::Map<const Eigen::VectorXd> w(q.weights.data(), static_cast<Eigen::Index>(q.weights.size()));
  return values.transpose() * w.cwiseProduct(gv);
}

inline ProjectionEstimate non_projection(const FunctionSystem& system, const FunctionHandle& g, const SampleBatch& batch) {
  if (system.empty()) throw InvalidArgument("non_projection: empty system");
  validate(batch);
  ProjectionEstimate out;
  out.kind = EstimatorKind::NonProjection;
  out.space = CoefficientSpace::System;
  out.batch_seed = batch.seed;
  out.coefficients = detail::weighted_moments(evaluate_system(system, batch.points), batch.weights,
                                              detail::values_at(g, batch.points));
  out.rank = static_cast<int>(system.size());
  return out;
}

/// Non-projection in the generating system of a basis.
inline ProjectionEstimate non_projection(const OrthonormalBasis& basis, const FunctionHandle& g, const SampleBatch& batch) {
  validate(batch);
  ProjectionEstimate out;
  out.kind = EstimatorKind::NonProjection;
  out.space = CoefficientSpace::System;
  out.batch_seed = batch.seed;
  out.coefficients = detail::weighted_moments(basis.evaluate_system(batch.points), batch.weights,
                                              detail::values_at(g, batch.points));
  out.rank = basis.system_size();
  return out;
}

inline ProjectionEstimate quasi_projection(const OrthonormalBasis& basis, const FunctionHandle& g, const SampleBatch& batch) {
  validate(batch);
  ProjectionEstimate out;
  out.kind = EstimatorKind::Quasi;
  out.batch_seed = batch.seed;
  out.coefficients = quasi_coefficients(basis.evaluate(batch.points), batch.weights, detail::values_at(g, batch.points));
  out.rank = basis.dimension();
  return out;
}

inline ProjectionEstimate least_squares_projection(const OrthonormalBasis& basis, const FunctionHandle& g,
                                                   const SampleBatch& batch,
                                                   std::optional<double> stability_delta = std::nullopt) {
  validate(batch);
  ProjectionEstimate out;
  out.kind = EstimatorKind::LeastSquares;
  out.batch_seed = batch.seed;
  out.stability_delta = stability_delta;
  out.coefficients = least_squares_coefficients(basis.evaluate(batch.points), batch.weights,
                                                detail::values_at(g, batch.points), &out.rank);
  return out;
}

/// Least squares on a volume-rescaled batch; unbiased for n >= 2 d_t + 2.
inline ProjectionEstimate least_squares_volume_projection(const OrthonormalBasis& basis, const FunctionHandle& g,
                                                          const SampleBatch& batch) {
  if (static_cast<int>(batch.size()) < 2 * basis.dimension() + 2)
    throw InvalidArgument("least_squares_volume_projection: requires n >= 2 d_t + 2");
  if (batch.strategy != SamplingKind::VolumeRescaled)
    throw InvalidArgument("least_squares_volume_projection: batch must be volume-rescaled");
  ProjectionEstimate out = least_squares_projection(basis, g, batch);
  out.kind = EstimatorKind::LeastSquaresVolume;
  return out;
}

using Estimator = std::function<ProjectionEstimate(const FunctionHandle&)>;

/// P_bar g = P_tilde g + Q (g - P_tilde g). Both estimators must produce basis coefficients
/// and draw from distinct sample streams.
inline ProjectionEstimate debiased_projection(const OrthonormalBasis& basis, const Estimator& p_tilde,
                                              const Estimator& q, const FunctionHandle& g) {
  const ProjectionEstimate first = p_tilde(g);
  if (first.space != CoefficientSpace::Basis) throw InvalidArgument("debiased_projection: P_tilde must act in the basis");
  const FunctionHandle residual = g - basis.combination(first.coefficients);
  const ProjectionEstimate second = q(residual);
  if (second.space != CoefficientSpace::Basis) throw InvalidArgument("debiased_projection: Q must act in the basis");
  if (first.batch_seed && second.batch_seed && *first.batch_seed == *second.batch_seed)
    throw InvalidArgument("debiased_projection: P_tilde and Q share a sample stream");
  ProjectionEstimate out;
  out.kind = EstimatorKind::Debiased;
  out.coefficients = first.coefficients + second.coefficients;
  out.batch_seed = second.batch_seed;
  out.stability_delta = first.stability_delta;
  out.rank = basis.dimension();
  return out;
}

/// Raw-data debiased estimate: least squares on the first batch, quasi-projection of the
/// residual on the second.
inline Eigen::VectorXd debiased_coefficients(const Eigen::MatrixXd& values_tilde, const std::vector<double>& weights_tilde,
                                             const Eigen::VectorXd& g_tilde, const Eigen::MatrixXd& values_q,
                                             const std::vector<double>& weights_q, const Eigen::VectorXd& g_q) {
  const Eigen::VectorXd c = least_squares_coefficients(values_tilde, weights_tilde, g_tilde);
  const Eigen::VectorXd residual = g_q - values_q * c;
  return c + quasi_coefficients(values_q, weights_q, residual);
}

struct BiasVarianceConstants {
  double c_bias1 = 1.0;
  double c_bias2 = 0.0;
  double c_var1 = 1.0;
  double c_var2 = 0.0;
  bool unbounded = false;
};

/// Inputs to constants_for. `k` is sup w K; `lambda_min`/`lambda_max` are the extreme
/// positive eigenvalues of the Gramian of the generating system (non-projection only).
struct ConstantsQuery {
  int n = 1;
  int d = 1;
  double k = 1.0;
  double lambda_min = 1.0;
  double lambda_max = 1.0;
  std::optional<double> delta;
  std::optional<double> p_stable;
  std::optional<double> zeta;
  // Debiased estimator: constants of Q, and either a norm bound B on P_tilde or the
  // constants of an independently drawn P_tilde.
  std::optional<BiasVarianceConstants> q_constants;
  std::optional<double> p_tilde_norm_bound;
  std::optional<BiasVarianceConstants> p_tilde_constants;
};

inline BiasVarianceConstants constants_for(EstimatorKind kind, const ConstantsQuery& in) {
  if (in.n < 1 || in.d < 1) throw InvalidArgument("constants_for: n and d must be >= 1");
  const double n = in.n, k = in.k;
  BiasVarianceConstants c;
  c.unbounded = !std::isfinite(k);
  switch (kind) {
    case EstimatorKind::Exact:
      return c;
    case EstimatorKind::NonProjection: {
      const double lmin = in.lambda_min, lmax = in.lambda_max;
      c.c_bias1 = lmin;
      c.c_var1 = (lmax * lmax * (n - 1.0) + lmax * k) / n;
      c.c_var2 = lmax * k / n;
      return c;
    }
    case EstimatorKind::Quasi:
      c.c_var1 = (n - 1.0 + k) / n;
      c.c_var2 = k / n;
      return c;
    case EstimatorKind::LeastSquares: {
      if (!in.delta || !in.p_stable) throw InvalidArgument("constants_for: least squares needs delta and p_stable");
      const double delta = *in.delta, p = *in.p_stable;
      if (!(delta > 0.0 && delta < 1.0) || !(p > 0.0 && p <= 1.0))
        throw InvalidArgument("constants_for: delta in (0,1) and p_stable in (0,1] required");
      const double scale = 1.0 / ((1.0 - delta) * (1.0 - delta) * p);
      c.c_bias2 = std::sqrt(k) / ((1.0 - delta) * std::sqrt(p * n));
      c.c_var1 = scale * (n - 1.0 + k) / n;
      c.c_var2 = scale * k / n;
      return c;
    }
    case EstimatorKind::LeastSquaresVolume: {
      if (!in.delta) throw InvalidArgument("constants_for: volume sampling needs delta");
      const double delta = *in.delta;
      if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("constants_for: delta must lie in (0,1)");
      const double zeta = in.zeta.value_or(in.d / n);
      const double inv = 4.0 / ((1.0 - delta) * (1.0 - delta));
      c.c_var2 = in.d / n * inv + zeta;
      c.c_var1 = c.c_var2 + inv;
      c.unbounded = false;
      return c;
    }
    case EstimatorKind::Debiased: {
      if (!in.q_constants) throw InvalidArgument("constants_for: debiased needs the constants of Q");
      const BiasVarianceConstants& q = *in.q_constants;
      c.c_var1 = 1.0;
      if (in.p_tilde_norm_bound) {
        const double b = *in.p_tilde_norm_bound;
        c.c_var2 = (q.c_var1 - 1.0) * b * b + q.c_var2;
      } else if (in.p_tilde_constants) {
        c.c_var2 = (q.c_var1 - 1.0) * in.p_tilde_constants->c_var2 + q.c_var2;
      } else {
        throw InvalidArgument("constants_for: debiased needs a norm bound or the constants of P_tilde");
      }
      c.unbounded = q.unbounded || (in.p_tilde_constants && in.p_tilde_constants->unbounded);
      return c;
    }
  }
  return c;
}

}  // namespace ngd
