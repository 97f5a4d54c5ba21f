#pragma once

// Sampling strategies for empirical inner products: reference sampling, i.i.d. optimal
// (inverse Christoffel) sampling, sampling conditioned on the stability event, and
// volume-rescaled sampling through a discrete projection DPP.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "function_space.hpp"
#include "random.hpp"

namespace ngd {

enum class SamplingKind { Reference, Optimal, OptimalConditioned, VolumeRescaled };

inline std::string to_string(SamplingKind kind) {
  switch (kind) {
    case SamplingKind::Reference: return "reference";
    case SamplingKind::Optimal: return "optimal";
    case SamplingKind::OptimalConditioned: return "optimal-conditioned";
    case SamplingKind::VolumeRescaled: return "volume-rescaled";
  }
  return "unknown";
}

struct SampleBatch {
  std::vector<double> points;
  std::vector<double> weights;
  SamplingKind strategy = SamplingKind::Reference;
  std::uint64_t seed = 0;
  int attempts = 1;

  std::size_t size() const { return points.size(); }
};

inline void validate(const SampleBatch& batch) {
  if (batch.points.empty()) throw InvalidArgument("sample batch is empty");
  if (batch.points.size() != batch.weights.size()) throw InvalidArgument("sample batch: size mismatch");
  for (double w : batch.weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("sample batch: weights must be finite and positive");
}

/// (u, v)_n = (1/n) sum_i w(x_i) u(x_i) v(x_i).
inline double empirical_inner_product(const FunctionHandle& u, const FunctionHandle& v, const SampleBatch& batch) {
  validate(batch);
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    sum += batch.weights[i] * checked_eval(u, batch.points[i]) * checked_eval(v, batch.points[i]);
  return sum / static_cast<double>(batch.size());
}

/// Empirical Gramian (1/n) B^T W B from basis values B (rows = points).
inline Eigen::MatrixXd empirical_gramian(const Eigen::MatrixXd& values, const std::vector<double>& weights) {
  const Eigen::Map<const Eigen::VectorXd> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  Eigen::MatrixXd weighted = values.array().colwise() * w.array();
  Eigen::MatrixXd g = weighted.transpose() * values / static_cast<double>(weights.size());
  return 0.5 * (g + g.transpose());
}

/// Spectral norm of I - G for symmetric G.
inline double stability_deviation(const Eigen::MatrixXd& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g, Eigen::EigenvaluesOnly);
  const auto& l = eig.eigenvalues();
  return std::max(std::abs(1.0 - l(0)), std::abs(1.0 - l(l.size() - 1)));
}

/// Piecewise-linear CDF on a monotone grid, sampled by inverse transform.
class TabulatedCDF {
 public:
  /// Trapezoidal CDF of the (unnormalized) density values on the grid.
  TabulatedCDF(std::vector<double> grid, const std::vector<double>& density) : grid_(std::move(grid)) {
    if (grid_.size() < 2 || grid_.size() != density.size()) throw InvalidArgument("TabulatedCDF: bad grid");
    cdf_.assign(grid_.size(), 0.0);
    for (std::size_t i = 1; i < grid_.size(); ++i) {
      if (!(grid_[i] > grid_[i - 1])) throw InvalidArgument("TabulatedCDF: grid must be increasing");
      const double piece = 0.5 * (density[i] + density[i - 1]) * (grid_[i] - grid_[i - 1]);
      if (!(piece >= 0.0) || !std::isfinite(piece)) throw NumericError("TabulatedCDF: invalid density", grid_[i]);
      cdf_[i] = cdf_[i - 1] + piece;
    }
    total_ = cdf_.back();
    if (!(total_ > 0.0)) throw NumericError("TabulatedCDF: density has no mass", grid_.front());
    for (auto& c : cdf_) c /= total_;
    cdf_.back() = 1.0;
  }

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& values() const { return cdf_; }
  double mass() const { return total_; }

  double quantile(double u) const {
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.begin()) return grid_.front();
    if (it == cdf_.end()) return grid_.back();
    const std::size_t i = static_cast<std::size_t>(it - cdf_.begin());
    const double c0 = cdf_[i - 1], c1 = cdf_[i];
    const double t = c1 > c0 ? (u - c0) / (c1 - c0) : 0.0;
    return grid_[i - 1] + t * (grid_[i] - grid_[i - 1]);
  }

  double operator()(double x) const {
    if (x <= grid_.front()) return 0.0;
    if (x >= grid_.back()) return 1.0;
    const auto it = std::upper_bound(grid_.begin(), grid_.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - grid_.begin());
    const double t = (x - grid_[i - 1]) / (grid_[i] - grid_[i - 1]);
    return cdf_[i - 1] + t * (cdf_[i] - cdf_[i - 1]);
  }

 private:
  std::vector<double> grid_;
  std::vector<double> cdf_;
  double total_ = 0.0;
};

/// Draws from the optimal density K rho / d_t.
class ChristoffelSampler {
 public:
  virtual ~ChristoffelSampler() = default;
  virtual double draw(Rng& rng) const = 0;
};

/// Mixture sampler: choose k uniformly, then invert the tabulated CDF of b_k^2 rho.
class TabulatedChristoffelSampler final : public ChristoffelSampler {
 public:
  static constexpr int kDefaultGridSize = 10000;

  TabulatedChristoffelSampler(const OrthonormalBasis& basis, const ReferenceMeasure& measure,
                              int grid_size = kDefaultGridSize) {
    if (grid_size < 2) throw InvalidArgument("TabulatedChristoffelSampler: grid_size must be >= 2");
    std::vector<double> grid(static_cast<std::size_t>(grid_size));
    const double a = measure.lower(), b = measure.upper();
    for (int i = 0; i < grid_size; ++i) grid[static_cast<std::size_t>(i)] = a + (b - a) * i / (grid_size - 1);
    const Eigen::MatrixXd values = basis.evaluate(grid);
    std::vector<double> density(grid.size());
    for (int k = 0; k < basis.dimension(); ++k) {
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const double v = values(static_cast<Eigen::Index>(i), k);
        density[i] = v * v * measure.density(grid[i]);
      }
      components_.emplace_back(grid, density);
    }
  }

  double draw(Rng& rng) const override {
    const std::size_t k = uniform_index(rng, components_.size());
    return components_[k].quantile(uniform01(rng));
  }

  const TabulatedCDF& component(std::size_t k) const { return components_[k]; }
  std::size_t component_count() const { return components_.size(); }

 private:
  std::vector<TabulatedCDF> components_;
};

/// w = d_t / K(x).
inline double optimal_weight(const OrthonormalBasis& basis, double x) {
  const double k = christoffel(basis, x);
  if (!(k > 0.0)) throw NumericError("optimal_weight: Christoffel function vanishes", x);
  return basis.dimension() / k;
}

inline std::vector<double> optimal_weights(const OrthonormalBasis& basis, const std::vector<double>& xs) {
  const Eigen::VectorXd k = christoffel(basis, xs);
  std::vector<double> w(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(k(static_cast<Eigen::Index>(i)) > 0.0)) throw NumericError("optimal_weight: Christoffel function vanishes", xs[i]);
    w[i] = basis.dimension() / k(static_cast<Eigen::Index>(i));
  }
  return w;
}

inline SampleBatch draw_reference(const ReferenceMeasure& measure, int n, Rng& rng, std::uint64_t seed = 0) {
  if (n < 1) throw InvalidArgument("draw_reference: n must be >= 1");
  SampleBatch batch;
  batch.strategy = SamplingKind::Reference;
  batch.seed = seed;
  batch.points.resize(static_cast<std::size_t>(n));
  for (auto& x : batch.points) x = measure.sample(rng);
  batch.weights.assign(static_cast<std::size_t>(n), 1.0);
  return batch;
}

inline SampleBatch draw_iid_optimal(const OrthonormalBasis& basis, const ChristoffelSampler& sampler, int n, Rng& rng,
                                    std::uint64_t seed = 0) {
  if (n < 1) throw InvalidArgument("draw_iid_optimal: n must be >= 1");
  SampleBatch batch;
  batch.strategy = SamplingKind::Optimal;
  batch.seed = seed;
  batch.points.resize(static_cast<std::size_t>(n));
  for (auto& x : batch.points) x = sampler.draw(rng);
  batch.weights = optimal_weights(basis, batch.points);
  return batch;
}

inline SampleBatch draw_iid_optimal(const OrthonormalBasis& basis, const ReferenceMeasure& measure, int n, Rng& rng,
                                    std::uint64_t seed = 0) {
  const TabulatedChristoffelSampler sampler(basis, measure);
  return draw_iid_optimal(basis, sampler, n, rng, seed);
}

inline constexpr int kDefaultMaxAttempts = 10000;

/// Rejection sampling of optimal batches until ||I - G_hat|| <= delta.
inline SampleBatch draw_conditioned_stable(const OrthonormalBasis& basis, const ChristoffelSampler& sampler, int n,
                                           double delta, Rng& rng, int max_attempts = kDefaultMaxAttempts,
                                           std::uint64_t seed = 0) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("draw_conditioned_stable: delta must lie in (0,1)");
  if (n < basis.dimension()) throw InvalidArgument("draw_conditioned_stable: n must be >= d_t");
  if (max_attempts < 1) throw InvalidArgument("draw_conditioned_stable: max_attempts must be >= 1");
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    SampleBatch batch = draw_iid_optimal(basis, sampler, n, rng, seed);
    const Eigen::MatrixXd g = empirical_gramian(basis.evaluate(batch.points), batch.weights);
    if (stability_deviation(g) <= delta) {
      batch.strategy = SamplingKind::OptimalConditioned;
      batch.attempts = attempt;
      return batch;
    }
  }
  throw StabilityUnreachable("draw_conditioned_stable: no stable batch within " + std::to_string(max_attempts) +
                                 " attempts (n too small for delta)",
                             max_attempts);
}

/// Lower bound 1 - 2 d exp(-delta^2 n / (2 d)) on the acceptance probability under optimal sampling.
inline double stability_probability_bound(int d, int n, double delta) {
  return 1.0 - 2.0 * d * std::exp(-delta * delta * n / (2.0 * d));
}

/// Exact sampler for the projection DPP whose kernel is spanned by the columns of a feature
/// matrix F (rows = ground-set items). Sequential chain rule on an orthonormal column basis.
class ProjectionDpp {
 public:
  explicit ProjectionDpp(const Eigen::MatrixXd& features) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(features);
    const Eigen::Index d = features.cols();
    const Eigen::MatrixXd r = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
    double rmax = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) rmax = std::max(rmax, std::abs(r(i, i)));
    for (Eigen::Index i = 0; i < d; ++i)
      if (!(std::abs(r(i, i)) > 1e-10 * rmax) || features.rows() < d)
        throw DegenerateSystem("ProjectionDpp: feature matrix has rank < " + std::to_string(d) + " on the grid");
    q_ = qr.householderQ() * Eigen::MatrixXd::Identity(features.rows(), d);
  }

  Eigen::Index rank() const { return q_.cols(); }
  Eigen::Index ground_size() const { return q_.rows(); }

  std::vector<Eigen::Index> sample(Rng& rng) const {
    Eigen::MatrixXd v = q_;
    std::vector<Eigen::Index> picked;
    Eigen::VectorXd norms = v.rowwise().squaredNorm();
    while (v.cols() > 0) {
      const double total = norms.sum();
      const double u = uniform01(rng) * total;
      Eigen::Index i = 0;
      double acc = 0.0;
      for (; i < norms.size() - 1; ++i) {
        acc += norms(i);
        if (u < acc) break;
      }
      while (norms(i) <= 0.0 && i > 0) --i;
      picked.push_back(i);
      // Restrict the column space to vectors vanishing at item i.
      const Eigen::VectorXd row = v.row(i).transpose();
      const Eigen::Index r = v.cols();
      Eigen::HouseholderQR<Eigen::MatrixXd> h(row);
      const Eigen::MatrixXd full = h.householderQ() * Eigen::MatrixXd::Identity(r, r);
      v = (v * full.rightCols(r - 1)).eval();
      norms = v.rowwise().squaredNorm();
      for (Eigen::Index p : picked) norms(p) = 0.0;
    }
    return picked;
  }

 private:
  Eigen::MatrixXd q_;
};

/// Discretization of the domain for volume-rescaled sampling: cell midpoints and rho-masses.
struct DiscreteGrid {
  std::vector<double> points;
  std::vector<double> masses;
};

inline DiscreteGrid discretize(const ReferenceMeasure& measure, int grid_size) {
  if (grid_size < 1) throw InvalidArgument("discretize: grid_size must be >= 1");
  DiscreteGrid grid;
  const double a = measure.lower(), b = measure.upper(), h = (b - a) / grid_size;
  double total = 0.0;
  for (int i = 0; i < grid_size; ++i) {
    const double x = a + (i + 0.5) * h;
    grid.points.push_back(x);
    grid.masses.push_back(measure.density(x) * h);
    total += grid.masses.back();
  }
  for (auto& m : grid.masses) m /= total;
  return grid;
}

/// Volume-rescaled sampler on a fixed grid: a projection DPP for d_t points plus n - d_t
/// i.i.d. points from the discrete optimal measure, randomly permuted.
class VolumeRescaledSampler {
 public:
  VolumeRescaledSampler(const OrthonormalBasis& basis, const ReferenceMeasure& measure, int grid_size)
      : grid_(discretize(measure, grid_size)) {
    if (grid_size < 4 * basis.dimension())
      throw InvalidArgument("VolumeRescaledSampler: grid_size must be >= 4 d_t");
    init(basis);
  }

  VolumeRescaledSampler(const OrthonormalBasis& basis, DiscreteGrid grid) : grid_(std::move(grid)) { init(basis); }

  SampleBatch draw(int n, Rng& rng, std::uint64_t seed = 0) const {
    if (n < dimension_) throw InvalidArgument("draw_volume_rescaled: n must be >= d_t");
    SampleBatch batch;
    batch.strategy = SamplingKind::VolumeRescaled;
    batch.seed = seed;
    for (Eigen::Index i : dpp_->sample(rng)) batch.points.push_back(grid_.points[static_cast<std::size_t>(i)]);
    for (int j = dimension_; j < n; ++j) {
      const double u = uniform01(rng);
      const auto it = std::upper_bound(optimal_cdf_.begin(), optimal_cdf_.end(), u);
      const std::size_t i = std::min(static_cast<std::size_t>(it - optimal_cdf_.begin()), grid_.points.size() - 1);
      batch.points.push_back(grid_.points[i]);
    }
    for (std::size_t i = batch.points.size(); i > 1; --i) std::swap(batch.points[i - 1], batch.points[uniform_index(rng, i)]);
    batch.weights = weights_for(batch.points);
    return batch;
  }

  /// Indices of one d_t-point DPP draw on the grid.
  std::vector<Eigen::Index> draw_dpp_indices(Rng& rng) const { return dpp_->sample(rng); }

  const DiscreteGrid& grid() const { return grid_; }

 private:
  void init(const OrthonormalBasis& basis) {
    dimension_ = basis.dimension();
    basis_ = std::make_shared<OrthonormalBasis>(basis);
    const Eigen::MatrixXd values = basis.evaluate(grid_.points);
    Eigen::MatrixXd features = values;
    for (Eigen::Index i = 0; i < values.rows(); ++i) features.row(i) *= std::sqrt(grid_.masses[static_cast<std::size_t>(i)]);
    dpp_ = std::make_shared<ProjectionDpp>(features);
    const Eigen::VectorXd mass = features.rowwise().squaredNorm();
    optimal_cdf_.resize(static_cast<std::size_t>(mass.size()));
    std::partial_sum(mass.data(), mass.data() + mass.size(), optimal_cdf_.begin());
    for (auto& c : optimal_cdf_) c /= optimal_cdf_.back();
  }

  std::vector<double> weights_for(const std::vector<double>& xs) const { return optimal_weights(*basis_, xs); }

  DiscreteGrid grid_;
  int dimension_ = 0;
  std::shared_ptr<const OrthonormalBasis> basis_;
  std::shared_ptr<const ProjectionDpp> dpp_;
  std::vector<double> optimal_cdf_;
};

inline constexpr int kDefaultVolumeGrid = 4096;

inline SampleBatch draw_volume_rescaled(const OrthonormalBasis& basis, const ReferenceMeasure& measure, int n, Rng& rng,
                                        int grid_size = kDefaultVolumeGrid, std::uint64_t seed = 0) {
  return VolumeRescaledSampler(basis, measure, grid_size).draw(n, rng, seed);
}

/// Sampling strategy selector carried by descent configurations.
struct SamplingStrategy {
  SamplingKind kind = SamplingKind::Optimal;
  double delta = 0.5;
  int max_attempts = kDefaultMaxAttempts;
  int grid_size = kDefaultVolumeGrid;

  static SamplingStrategy reference() { return {SamplingKind::Reference}; }
  static SamplingStrategy optimal() { return {SamplingKind::Optimal}; }
  static SamplingStrategy conditioned(double delta, int max_attempts = kDefaultMaxAttempts) {
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("SamplingStrategy: delta must lie in (0,1)");
    return {SamplingKind::OptimalConditioned, delta, max_attempts};
  }
  static SamplingStrategy volume(int grid_size = kDefaultVolumeGrid) {
    return {SamplingKind::VolumeRescaled, 0.5, kDefaultMaxAttempts, grid_size};
  }
};

struct KConstant {
  double value = 0.0;
  bool unbounded = false;
};

inline constexpr double kUnboundedThreshold = 1e12;

/// sup_x w(x) K(x) over an equispaced probe grid. Flags unbounded growth when the value
/// exceeds 1e12 or, on an unbounded domain, the supremum sits at the truncation edge.
inline KConstant k_constant(const OrthonormalBasis& basis, const ReferenceMeasure& measure,
                            const std::function<double(double)>& weight, int probe_grid_size = 4097) {
  if (probe_grid_size < 256) throw InvalidArgument("k_constant: probe_grid_size must be >= 256");
  std::vector<double> xs(static_cast<std::size_t>(probe_grid_size));
  const double a = measure.lower(), b = measure.upper();
  for (int i = 0; i < probe_grid_size; ++i) xs[static_cast<std::size_t>(i)] = a + (b - a) * i / (probe_grid_size - 1);
  const Eigen::VectorXd k = christoffel(basis, xs);
  KConstant out;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v = weight(xs[i]) * k(static_cast<Eigen::Index>(i));
    if (v > out.value) {
      out.value = v;
      arg = i;
    }
  }
  const bool at_edge = arg == 0 || arg + 1 == xs.size();
  if (out.value > kUnboundedThreshold || (!measure.bounded() && at_edge && out.value > basis.dimension() * (1.0 + 1e-6)))
    out.unbounded = true;
  return out;
}

}  // namespace ngd
