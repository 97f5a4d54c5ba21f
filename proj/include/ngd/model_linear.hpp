#pragma once

// Linear model classes: polynomial spaces with a fixed orthonormal basis and the identity
// retraction. Legendre on the uniform measure, Hermite on the standard Gaussian.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "descent.hpp"
#include "errors.hpp"
#include "function_space.hpp"
#include "sampling.hpp"

namespace ngd {

inline constexpr int kLinearQuadratureNodes = 128;

namespace detail {

// Orthonormal Legendre values sqrt(2k+1) P_k(x), k < d, for x in [-1, 1].
inline void legendre_values(double x, int d, double* out, std::ptrdiff_t stride) {
  double p0 = 1.0, p1 = x;
  for (int k = 0; k < d; ++k) {
    double p;
    if (k == 0) {
      p = p0;
    } else if (k == 1) {
      p = p1;
    } else {
      p = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p;
    }
    out[k * stride] = std::sqrt(2.0 * k + 1.0) * p;
  }
}

// Normalized probabilists' Hermite values He_k(x) / sqrt(k!), k < d.
inline void hermite_values(double x, int d, double* out, std::ptrdiff_t stride) {
  double h0 = 1.0, h1 = x;
  for (int k = 0; k < d; ++k) {
    double h;
    if (k == 0) {
      h = h0;
    } else if (k == 1) {
      h = h1;
    } else {
      // Normalized recurrence: h_k = (x h_{k-1} - sqrt(k-1) h_{k-2}) / sqrt(k).
      h = (x * h1 - std::sqrt(k - 1.0) * h0) / std::sqrt(static_cast<double>(k));
      h0 = h1;
      h1 = h;
    }
    out[k * stride] = h;
  }
}

template <void (*Values)(double, int, double*, std::ptrdiff_t)>
OrthonormalBasis polynomial_basis(int d, const ReferenceMeasure& measure, const char* name) {
  if (d < 1) throw InvalidArgument("polynomial basis: degree_bound must be >= 1");
  FunctionSystem system;
  for (int k = 0; k < d; ++k) {
    system.emplace_back(
        [k](double x) {
          std::vector<double> v(static_cast<std::size_t>(k) + 1);
          Values(x, k + 1, v.data(), 1);
          return v.back();
        },
        std::string(name) + std::to_string(k));
  }
  SystemEvaluator evaluator = [d](std::span<const double> xs, Eigen::Ref<Eigen::MatrixXd> out) {
    for (std::size_t i = 0; i < xs.size(); ++i)
      Values(xs[i], d, out.data() + static_cast<std::ptrdiff_t>(i), out.outerStride());
  };
  const Quadrature q = build_quadrature(measure, kLinearQuadratureNodes);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(q.size()), d);
  evaluator(q.nodes, values);
  return orthonormalize_gramian(std::move(system), gramian_from_values(values, q), kDefaultRankTol, evaluator);
}

}  // namespace detail

/// First d orthonormal Legendre polynomials on Uniform[-1, 1].
inline OrthonormalBasis legendre_basis(int degree_bound) {
  return detail::polynomial_basis<detail::legendre_values>(degree_bound, ReferenceMeasure::uniform(), "legendre");
}

/// First d probabilists' Hermite polynomials He_k / sqrt(k!) on the standard Gaussian.
inline OrthonormalBasis hermite_basis(int degree_bound) {
  return detail::polynomial_basis<detail::hermite_values>(degree_bound, ReferenceMeasure::gaussian(), "hermite");
}

template <class V>
V identity_retraction(V v) {
  return v;
}

/// M = T_t = span(basis), R_t = identity. The state holds coefficients in the generating
/// system of the basis.
class LinearModel {
 public:
  using State = Eigen::VectorXd;

  LinearModel(OrthonormalBasis basis, ReferenceMeasure measure, FunctionHandle target,
              int volume_grid = kDefaultVolumeGrid)
      : measure_(measure), target_(std::move(target)), q_(build_quadrature(measure, kLinearQuadratureNodes)) {
    auto b = std::make_shared<const OrthonormalBasis>(std::move(basis));
    lin_.basis = b;
    lin_.sampler = std::make_shared<const TabulatedChristoffelSampler>(*b, measure_);
    if (volume_grid >= 4 * b->dimension()) lin_.volume = std::make_shared<const VolumeRescaledSampler>(*b, measure_, volume_grid);
    const KConstant k = k_constant(*b, measure_, [](double) { return 1.0; });
    lin_.k_reference = k.unbounded ? std::numeric_limits<double>::infinity() : k.value;

    const Eigen::MatrixXd sys = b->evaluate_system(q_.nodes);
    Eigen::VectorXd u(static_cast<Eigen::Index>(q_.size()));
    for (std::size_t i = 0; i < q_.size(); ++i) u(static_cast<Eigen::Index>(i)) = checked_eval(target_, q_.nodes[i]);
    const Eigen::Map<const Eigen::VectorXd> w(q_.weights.data(), static_cast<Eigen::Index>(q_.size()));
    moments_ = sys.transpose() * w.cwiseProduct(u);
    target_norm_sq_ = w.dot(u.cwiseProduct(u));
    best_ = b->transform().transpose() * (b->transform() * moments_);
    const Eigen::VectorXd r = u - sys * best_;
    min_loss_ = 0.5 * w.dot(r.cwiseProduct(r));
  }

  const ReferenceMeasure& measure() const { return measure_; }
  const OrthonormalBasis& basis() const { return *lin_.basis; }
  const FunctionHandle& target() const { return target_; }
  const Quadrature& quadrature() const { return q_; }

  /// L_min,M = ||u* - P u*||^2 / 2.
  double min_loss() const { return min_loss_; }
  /// System coefficients of the best approximation P u*.
  const State& best_state() const { return best_; }
  State zero_state() const { return State::Zero(lin_.basis->system_size()); }
  /// System coefficients of sum_k eta_k b_k.
  State state_from_basis(const Eigen::VectorXd& eta) const { return lin_.basis->transform().transpose() * eta; }

  FunctionHandle function(const State& s) const { return linear_combination(s, lin_.basis->system()); }

  Linearization linearize(const State&) const { return lin_; }

  Diagnostics diagnose(const State& s, const Linearization&) const {
    const OrthonormalBasis& b = *lin_.basis;
    Diagnostics d;
    d.projected_gradient = b.transform() * (b.source_gramian() * s - moments_);
    d.loss_gap = 0.5 * d.projected_gradient.squaredNorm();
    d.loss = d.loss_gap + min_loss_;
    d.proj_norm = d.projected_gradient.norm();
    d.orth_norm = std::sqrt(2.0 * min_loss_);
    return d;
  }

  /// Residual u - u* at the given points.
  Eigen::VectorXd residual(const State& s, const std::vector<double>& xs) const {
    Eigen::VectorXd out = lin_.basis->evaluate_system(xs) * s;
    for (std::size_t i = 0; i < xs.size(); ++i) out(static_cast<Eigen::Index>(i)) -= target_(xs[i]);
    return out;
  }

  bool has_nontrivial_retraction() const { return false; }

  Retracted<LinearModel> retract(const State& s, const Linearization&, const Eigen::VectorXd& direction,
                                 double step) const {
    return {identity_retraction<State>(s - step * direction), 0.0};
  }

  double retraction_error(const State&, const Linearization&, const Eigen::VectorXd&, double) const { return 0.0; }

 private:
  ReferenceMeasure measure_;
  FunctionHandle target_;
  Quadrature q_;
  Linearization lin_;
  Eigen::VectorXd moments_;
  double target_norm_sq_ = 0.0;
  State best_;
  double min_loss_ = 0.0;
};

}  // namespace ngd
