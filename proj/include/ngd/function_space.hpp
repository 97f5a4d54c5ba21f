#pragma once

// Hilbert-space machinery on L2(rho) for one-dimensional reference measures:
// Gauss rules, exact (quadrature) and empirical inner products, Gramians,
// orthonormalization of generating systems and inverse Christoffel functions.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "random.hpp"

namespace ngd {

/// Probability measure rho on the real line.
class ReferenceMeasure {
 public:
  enum class Kind { UniformInterval, StandardGaussian };

  /// Tabulation radius for the Gaussian; the mass outside is below 1e-20.
  static constexpr double kGaussianRadius = 10.0;

  static ReferenceMeasure uniform(double a = -1.0, double b = 1.0) {
    if (!(a < b)) throw InvalidArgument("uniform measure requires a < b");
    return ReferenceMeasure(Kind::UniformInterval, a, b);
  }
  static ReferenceMeasure gaussian() {
    return ReferenceMeasure(Kind::StandardGaussian, -kGaussianRadius, kGaussianRadius);
  }

  Kind kind() const { return kind_; }
  bool bounded() const { return kind_ == Kind::UniformInterval; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }

  double density(double x) const {
    if (kind_ == Kind::UniformInterval) return (x >= lower_ && x <= upper_) ? 1.0 / (upper_ - lower_) : 0.0;
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  }

  double sample(Rng& rng) const {
    if (kind_ == Kind::UniformInterval) return lower_ + (upper_ - lower_) * uniform01(rng);
    return standard_normal(rng);
  }

  std::string name() const {
    return kind_ == Kind::UniformInterval
               ? "uniform[" + std::to_string(lower_) + "," + std::to_string(upper_) + "]"
               : "gaussian";
  }

 private:
  ReferenceMeasure(Kind kind, double lower, double upper) : kind_(kind), lower_(lower), upper_(upper) {}

  Kind kind_;
  double lower_;
  double upper_;
};

/// Quadrature rule for a probability measure; weights sum to one.
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
  int exact_degree = 0;

  std::size_t size() const { return nodes.size(); }

  template <class F>
  double integrate(F&& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) sum += weights[i] * f(nodes[i]);
    return sum;
  }
};

namespace detail {

// Gauss-Legendre on [-1, 1] with weights summing to 2. Nodes from the Golub-Welsch
// eigenvalues, polished by Newton steps on the three-term recurrence.
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(n - 1);
  for (int k = 1; k < n; ++k) sub(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = solver.eigenvalues()(i);
    double dp = 1.0;
    for (int iter = 0; iter < 3; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      x -= p1 / dp;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    nodes[i] = x;
    weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

// Probabilists' Gauss-Hermite by Golub-Welsch; weights sum to one.
inline void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(n - 1);
  for (int k = 1; k < n; ++k) sub(k - 1) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  nodes.resize(n);
  weights.resize(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    nodes[i] = solver.eigenvalues()(i);
    const double v = solver.eigenvectors()(0, i);
    weights[i] = v * v;
    total += weights[i];
  }
  for (auto& w : weights) w /= total;
  // Symmetrize to remove the eigensolver's round-off asymmetry.
  for (int i = 0; i < n / 2; ++i) {
    const double x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
    const double w = 0.5 * (weights[i] + weights[n - 1 - i]);
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) nodes[n / 2] = 0.0;
}

}  // namespace detail

/// Gauss-Legendre for UniformInterval, probabilists' Gauss-Hermite for StandardGaussian,
/// normalized to a probability measure.
inline Quadrature build_quadrature(const ReferenceMeasure& measure, int node_count) {
  if (node_count < 2) throw InvalidArgument("build_quadrature: node_count must be >= 2");
  Quadrature q;
  q.exact_degree = 2 * node_count - 1;
  if (measure.kind() == ReferenceMeasure::Kind::UniformInterval) {
    detail::gauss_legendre(node_count, q.nodes, q.weights);
    const double a = measure.lower(), b = measure.upper();
    for (std::size_t i = 0; i < q.nodes.size(); ++i) {
      q.nodes[i] = 0.5 * (a + b) + 0.5 * (b - a) * q.nodes[i];
      q.weights[i] *= 0.5;
    }
  } else {
    detail::gauss_hermite(node_count, q.nodes, q.weights);
  }
  return q;
}

/// Composite Gauss-Legendre rule for a uniform measure, split at the given breakpoints
/// and additionally at `base_pieces` equispaced cuts. Exact for piecewise polynomials
/// of degree 2*nodes_per_piece-1 whose kinks lie on the breakpoints.
inline Quadrature composite_quadrature(const ReferenceMeasure& measure, std::vector<double> breakpoints,
                                       int nodes_per_piece, int base_pieces = 1) {
  if (!measure.bounded()) throw InvalidArgument("composite_quadrature: bounded measure required");
  if (nodes_per_piece < 1 || base_pieces < 1) throw InvalidArgument("composite_quadrature: bad sizes");
  const double a = measure.lower(), b = measure.upper();
  for (int k = 0; k <= base_pieces; ++k) breakpoints.push_back(a + (b - a) * k / base_pieces);
  std::erase_if(breakpoints, [&](double x) { return !(x >= a && x <= b); });
  std::sort(breakpoints.begin(), breakpoints.end());
  breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end()), breakpoints.end());

  std::vector<double> ref_nodes, ref_weights;
  if (nodes_per_piece == 1) {
    ref_nodes = {0.0};
    ref_weights = {2.0};
  } else {
    detail::gauss_legendre(nodes_per_piece, ref_nodes, ref_weights);
  }
  Quadrature q;
  q.exact_degree = 2 * nodes_per_piece - 1;
  q.nodes.reserve(breakpoints.size() * nodes_per_piece);
  q.weights.reserve(breakpoints.size() * nodes_per_piece);
  const double scale = 1.0 / (b - a);
  for (std::size_t p = 0; p + 1 < breakpoints.size(); ++p) {
    const double l = breakpoints[p], r = breakpoints[p + 1];
    if (!(r > l)) continue;
    for (int i = 0; i < nodes_per_piece; ++i) {
      q.nodes.push_back(0.5 * (l + r) + 0.5 * (r - l) * ref_nodes[i]);
      q.weights.push_back(0.5 * (r - l) * ref_weights[i] * scale);
    }
  }
  return q;
}

/// A real-valued function on the domain, accessed by point evaluation.
class FunctionHandle {
 public:
  using Eval = std::function<double(double)>;

  FunctionHandle() : FunctionHandle([](double) { return 0.0; }, "zero") {}
  FunctionHandle(Eval f, std::string tag = {})
      : f_(std::make_shared<const Eval>(std::move(f))), tag_(std::move(tag)) {}

  double operator()(double x) const { return (*f_)(x); }
  const std::string& tag() const { return tag_; }

  static FunctionHandle constant(double c) {
    return FunctionHandle([c](double) { return c; }, "const");
  }

  friend FunctionHandle operator+(const FunctionHandle& u, const FunctionHandle& v) {
    return FunctionHandle([u, v](double x) { return u(x) + v(x); }, "(" + u.tag() + "+" + v.tag() + ")");
  }
  friend FunctionHandle operator-(const FunctionHandle& u, const FunctionHandle& v) {
    return FunctionHandle([u, v](double x) { return u(x) - v(x); }, "(" + u.tag() + "-" + v.tag() + ")");
  }
  friend FunctionHandle operator*(double c, const FunctionHandle& u) {
    return FunctionHandle([c, u](double x) { return c * u(x); }, "c*" + u.tag());
  }

 private:
  std::shared_ptr<const Eval> f_;
  std::string tag_;
};

using FunctionSystem = std::vector<FunctionHandle>;

/// Vectorized evaluation of a whole system at many points (rows = points).
using SystemEvaluator = std::function<void(std::span<const double>, Eigen::Ref<Eigen::MatrixXd>)>;

inline FunctionHandle linear_combination(const Eigen::VectorXd& coefficients, const FunctionSystem& system) {
  if (static_cast<std::size_t>(coefficients.size()) != system.size())
    throw InvalidArgument("linear_combination: size mismatch");
  return FunctionHandle(
      [coefficients, system](double x) {
        double sum = 0.0;
        for (std::size_t j = 0; j < system.size(); ++j) sum += coefficients(static_cast<Eigen::Index>(j)) * system[j](x);
        return sum;
      },
      "combination");
}

inline double checked_eval(const FunctionHandle& f, double x) {
  const double v = f(x);
  if (!std::isfinite(v)) throw NumericError("non-finite evaluation of '" + f.tag() + "'", x);
  return v;
}

inline Eigen::MatrixXd evaluate_system(const FunctionSystem& system, std::span<const double> xs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(system.size()));
  for (std::size_t j = 0; j < system.size(); ++j)
    for (std::size_t i = 0; i < xs.size(); ++i)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = checked_eval(system[j], xs[i]);
  return out;
}

/// (u, v) = sum_i w_i u(x_i) v(x_i).
inline double exact_inner_product(const FunctionHandle& u, const FunctionHandle& v, const Quadrature& q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) sum += q.weights[i] * checked_eval(u, q.nodes[i]) * checked_eval(v, q.nodes[i]);
  return sum;
}

inline double exact_norm(const FunctionHandle& u, const Quadrature& q) {
  return std::sqrt(exact_inner_product(u, u, q));
}

/// Gramian from an evaluation matrix (rows = quadrature nodes).
inline Eigen::MatrixXd gramian_from_values(const Eigen::MatrixXd& values, const Quadrature& q) {
  const Eigen::Map<const Eigen::VectorXd> w(q.weights.data(), static_cast<Eigen::Index>(q.weights.size()));
  Eigen::MatrixXd weighted = values.array().colwise() * w.array();
  Eigen::MatrixXd g = weighted.transpose() * values;
  return 0.5 * (g + g.transpose());
}

inline Eigen::MatrixXd gramian(const FunctionSystem& system, const Quadrature& q) {
  return gramian_from_values(evaluate_system(system, q.nodes), q);
}

/// L2(rho)-orthonormal basis b = C phi of span(phi) for a generating system phi.
class OrthonormalBasis {
 public:
  OrthonormalBasis(FunctionSystem system, Eigen::MatrixXd transform, Eigen::MatrixXd source_gramian,
                   double lambda_min_positive, double lambda_max, SystemEvaluator evaluator = {})
      : system_(std::move(system)),
        transform_(std::move(transform)),
        gramian_(std::move(source_gramian)),
        lambda_min_(lambda_min_positive),
        lambda_max_(lambda_max),
        evaluator_(std::move(evaluator)) {}

  int dimension() const { return static_cast<int>(transform_.rows()); }
  int system_size() const { return static_cast<int>(system_.size()); }

  /// Rows map generating-system coefficients to basis functions: b_k = sum_j C_kj phi_j.
  const Eigen::MatrixXd& transform() const { return transform_; }
  const Eigen::MatrixXd& source_gramian() const { return gramian_; }
  const FunctionSystem& system() const { return system_; }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }

  Eigen::MatrixXd evaluate_system(std::span<const double> xs) const {
    if (evaluator_) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), system_size());
      evaluator_(xs, out);
      return out;
    }
    return ngd::evaluate_system(system_, xs);
  }

  /// Basis values, rows = points, columns = basis index.
  Eigen::MatrixXd evaluate(std::span<const double> xs) const { return evaluate_system(xs) * transform_.transpose(); }

  Eigen::VectorXd evaluate(double x) const {
    const double xs[1] = {x};
    return evaluate(std::span<const double>(xs, 1)).row(0).transpose();
  }

  FunctionHandle function(int k) const {
    Eigen::VectorXd row = transform_.row(k).transpose();
    return FunctionHandle(linear_combination(row, system_));
  }

  FunctionSystem functions() const {
    FunctionSystem out;
    for (int k = 0; k < dimension(); ++k) out.push_back(function(k));
    return out;
  }

  /// Function with the given basis coefficients.
  FunctionHandle combination(const Eigen::VectorXd& coefficients) const {
    return linear_combination(transform_.transpose() * coefficients, system_);
  }

 private:
  FunctionSystem system_;
  Eigen::MatrixXd transform_;
  Eigen::MatrixXd gramian_;
  double lambda_min_;
  double lambda_max_;
  SystemEvaluator evaluator_;
};

inline constexpr double kDefaultRankTol = 1e-10;

/// Orthonormalizes a Gramian. Eigenpairs with lambda <= rank_tol * lambda_max are dropped.
/// Well-conditioned full-rank systems are orthonormalized in order (Gram-Schmidt via
/// Cholesky) so that monomials map to Legendre-type polynomials and orthonormal input is
/// kept as is; everything else uses the truncated eigenbasis.
inline OrthonormalBasis orthonormalize_gramian(FunctionSystem system, const Eigen::MatrixXd& g, double rank_tol,
                                               SystemEvaluator evaluator = {}, bool equilibrate = false) {
  if (!(rank_tol > 0.0 && rank_tol < 1.0)) throw InvalidArgument("orthonormalize: rank_tol must lie in (0,1)");
  const Eigen::Index d = g.rows();
  if (d == 0) throw DegenerateSystem("orthonormalize: empty system");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double lambda_max = lambda(d - 1);
  if (!(lambda_max > 0.0) || !std::isfinite(lambda_max)) throw DegenerateSystem("orthonormalize: zero Gramian");

  if (equilibrate) {
    // Rank decision on the unit-diagonal Gramian S G S, so that elements of very different
    // norms compete on equal terms. Elements with negligible norm are dropped outright.
    const double diag_max = g.diagonal().maxCoeff();
    Eigen::VectorXd scale(d);
    for (Eigen::Index i = 0; i < d; ++i)
      scale(i) = g(i, i) > rank_tol * rank_tol * diag_max ? 1.0 / std::sqrt(g(i, i)) : 0.0;
    const Eigen::MatrixXd gs = scale.asDiagonal() * g * scale.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_s(gs);
    const Eigen::VectorXd& mu = eig_s.eigenvalues();
    std::vector<Eigen::Index> kept;
    for (Eigen::Index i = d - 1; i >= 0; --i)
      if (mu(i) > rank_tol * mu(d - 1)) kept.push_back(i);
    Eigen::MatrixXd transform(static_cast<Eigen::Index>(kept.size()), d);
    for (std::size_t r = 0; r < kept.size(); ++r)
      transform.row(static_cast<Eigen::Index>(r)) =
          (eig_s.eigenvectors().col(kept[r]).cwiseProduct(scale)).transpose() / std::sqrt(mu(kept[r]));
    const double lambda_min = lambda(d - static_cast<Eigen::Index>(kept.size()));
    return OrthonormalBasis(std::move(system), std::move(transform), g, lambda_min, lambda_max, std::move(evaluator));
  }

  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = d - 1; i >= 0; --i)
    if (lambda(i) > rank_tol * lambda_max) kept.push_back(i);
  const double lambda_min = lambda(kept.back());

  Eigen::MatrixXd transform;
  constexpr double kCholeskyConditionFloor = 1e-6;
  if (static_cast<Eigen::Index>(kept.size()) == d && lambda_min > kCholeskyConditionFloor * lambda_max) {
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    const Eigen::MatrixXd lower = llt.matrixL();
    transform = lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(d, d));
  } else {
    transform.resize(static_cast<Eigen::Index>(kept.size()), d);
    for (std::size_t r = 0; r < kept.size(); ++r)
      transform.row(static_cast<Eigen::Index>(r)) = eig.eigenvectors().col(kept[r]).transpose() / std::sqrt(lambda(kept[r]));
  }
  return OrthonormalBasis(std::move(system), std::move(transform), g, lambda_min, lambda_max, std::move(evaluator));
}

inline OrthonormalBasis orthonormalize(FunctionSystem system, const Quadrature& q, double rank_tol = kDefaultRankTol,
                                       SystemEvaluator evaluator = {}) {
  const Eigen::MatrixXd g = gramian(system, q);
  return orthonormalize_gramian(std::move(system), g, rank_tol, std::move(evaluator));
}

/// Inverse Christoffel function K(x) = sum_k b_k(x)^2 (point evaluation, l = 1).
inline double christoffel(const OrthonormalBasis& basis, double x) { return basis.evaluate(x).squaredNorm(); }

/// Christoffel values at many points.
inline Eigen::VectorXd christoffel(const OrthonormalBasis& basis, std::span<const double> xs) {
  return basis.evaluate(xs).rowwise().squaredNorm();
}

}  // namespace ngd
