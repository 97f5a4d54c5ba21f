#pragma once

// The descent scheme u_bar = u_t - s_t P_t^n g_t, u_{t+1} = R_t(u_bar), its step-size
// schedules and the per-step diagnostics.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "function_space.hpp"
#include "projectors.hpp"
#include "random.hpp"
#include "sampling.hpp"

namespace ngd {

/// Least-squares loss L(v) = ||u* - v||^2 / 2 with smoothness L, PL constant lambda and
/// retraction constant C_R.
struct LossSpec {
  FunctionHandle target;
  double L = 1.0;
  double lambda = 1.0;
  double C_R = 0.0;
};

/// Gradient of the least-squares loss: the residual u - u*.
inline FunctionHandle gradient(const LossSpec& loss, const FunctionHandle& u) { return u - loss.target; }

struct StepSizeSchedule {
  enum class Kind { ConstantOptimal, Constant, Power, Switched, AdaptiveRetractionBounded };

  Kind kind = Kind::ConstantOptimal;
  double value = 0.0;            // constant step, or c0 of the power law
  double exponent = 0.0;         // power-law exponent
  bool relative_to_optimal = false;  // multiply the power law by the optimal constant step
  int t_switch = 0;
  std::shared_ptr<const StepSizeSchedule> pre;
  std::shared_ptr<const StepSizeSchedule> post;

  static StepSizeSchedule constant_optimal() { return {}; }
  static StepSizeSchedule constant(double s) {
    if (!(s >= 0.0)) throw InvalidArgument("constant step must be >= 0");
    StepSizeSchedule out;
    out.kind = Kind::Constant;
    out.value = s;
    return out;
  }
  /// s_t = c0 * t^exponent (times s_opt when relative), with t counted from 1.
  static StepSizeSchedule power(double c0, double exponent, bool relative_to_optimal = false) {
    if (!(c0 > 0.0)) throw InvalidArgument("power schedule requires c0 > 0");
    StepSizeSchedule out;
    out.kind = Kind::Power;
    out.value = c0;
    out.exponent = exponent;
    out.relative_to_optimal = relative_to_optimal;
    return out;
  }
  /// `pre` for steps t < t_switch, `post` afterwards; both see the global step counter.
  static StepSizeSchedule switched(int t_switch, StepSizeSchedule pre, StepSizeSchedule post) {
    StepSizeSchedule out;
    out.kind = Kind::Switched;
    out.t_switch = t_switch;
    out.pre = std::make_shared<const StepSizeSchedule>(std::move(pre));
    out.post = std::make_shared<const StepSizeSchedule>(std::move(post));
    return out;
  }
  static StepSizeSchedule adaptive() {
    StepSizeSchedule out;
    out.kind = Kind::AdaptiveRetractionBounded;
    return out;
  }

  /// Step for the transition t -> t+1 (t >= 0). The adaptive kind returns s_opt, the
  /// starting point of its bisection.
  double at(int t, double s_opt) const {
    const double tt = t + 1.0;
    switch (kind) {
      case Kind::ConstantOptimal:
      case Kind::AdaptiveRetractionBounded: return s_opt;
      case Kind::Constant: return value;
      case Kind::Power: return value * std::pow(tt, exponent) * (relative_to_optimal ? s_opt : 1.0);
      case Kind::Switched: return t < t_switch ? pre->at(t, s_opt) : post->at(t, s_opt);
    }
    return 0.0;
  }

  bool is_adaptive() const { return kind == Kind::AdaptiveRetractionBounded; }

  std::string describe() const {
    switch (kind) {
      case Kind::ConstantOptimal: return "constant-optimal";
      case Kind::Constant: return "constant(" + std::to_string(value) + ")";
      case Kind::Power:
        return std::string("power(") + std::to_string(value) + "," + std::to_string(exponent) +
               (relative_to_optimal ? ",x s_opt)" : ")");
      case Kind::Switched:
        return "switched(" + std::to_string(t_switch) + "," + pre->describe() + "," + post->describe() + ")";
      case Kind::AdaptiveRetractionBounded: return "adaptive-retraction-bounded";
    }
    return "unknown";
  }
};

struct DescentConfig {
  LossSpec loss;
  EstimatorKind estimator = EstimatorKind::Quasi;
  SamplingStrategy sampling = SamplingStrategy::optimal();
  int n = 1;
  StepSizeSchedule schedule;
  int T = 1;
  std::uint64_t master_seed = 0;
  std::uint64_t replication = 0;
  double divergence_threshold = 1e8;
  /// Draw a separate batch for the running loss estimate of the retraction bound.
  bool fresh_lambda_batch = false;
  /// Sampling strategy of the P_tilde batch of the debiased estimator.
  std::optional<SamplingStrategy> debias_sampling;
};

struct StepRecord {
  int t = 0;
  double loss = 0.0;
  double loss_gap = 0.0;
  double proj_grad_norm = 0.0;
  double orth_grad_norm = 0.0;
  double kappa = 1.0;
  double step_size = std::numeric_limits<double>::quiet_NaN();
  double sigma = std::numeric_limits<double>::quiet_NaN();
  double a = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  int attempts = 0;
  std::uint64_t seed = 0;
  bool quasi_critical = false;
  bool diverged = false;
};

/// Everything a model exposes about its linearization space at the current iterate.
struct Linearization {
  std::shared_ptr<const OrthonormalBasis> basis;
  std::shared_ptr<const ChristoffelSampler> sampler;
  std::shared_ptr<const VolumeRescaledSampler> volume;
  /// sup K under unit weights (infinite when unbounded).
  double k_reference = std::numeric_limits<double>::infinity();
};

/// Quadrature diagnostics of the iterate: loss values, norms of the projected and orthogonal
/// gradient components, and the basis coefficients of P_t g_t.
struct Diagnostics {
  double loss = 0.0;
  double loss_gap = 0.0;
  double proj_norm = 0.0;
  double orth_norm = 0.0;
  Eigen::VectorXd projected_gradient;
};

template <class Model>
struct Retracted {
  typename Model::State state;
  double epsilon = 0.0;
};

/// s = c_bias1 / ((L + C_R) c_var1).
inline double optimal_constant_step(const BiasVarianceConstants& c, double L, double C_R) {
  if (!(c.c_var1 > 0.0)) throw InvalidArgument("optimal_constant_step: c_var1 must be > 0");
  return c.c_bias1 / ((L + C_R) * c.c_var1);
}

struct ContractionFactors {
  double sigma = 0.0;
  double a = 1.0;
  bool a_in_unit_interval = false;
};

/// sigma = c_bias1 s - s^2 (L + C_R) c_var1 / 2 and a = 1 - 2 lambda sigma.
inline ContractionFactors contraction_factors(const BiasVarianceConstants& c, double s, double L, double C_R,
                                              double lambda) {
  ContractionFactors out;
  out.sigma = c.c_bias1 * s - s * s * 0.5 * (L + C_R) * c.c_var1;
  out.a = 1.0 - 2.0 * lambda * out.sigma;
  out.a_in_unit_interval = out.a > 0.0 && out.a < 1.0;
  return out;
}

/// ceil(ln(2/eps) / ln(1 + c)): steps after which the quasi-projection scheme with n = c(d-1)
/// reaches precision eps in expectation.
inline int predicted_iterations(double eps, double c) {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidArgument("predicted_iterations: eps must lie in (0,1)");
  if (!(c > 0.0)) throw InvalidArgument("predicted_iterations: c must be > 0");
  const double t = std::log(2.0 / eps) / std::log1p(c);
  const double nearest = std::round(t);
  if (std::abs(t - nearest) <= 1e-9 * std::max(1.0, nearest)) return static_cast<int>(nearest);
  return static_cast<int>(std::ceil(t));
}

/// ||g||^2 / ||P g||^2, infinite at a quasi-critical point.
inline double kappa(double g_norm, double proj_norm) {
  if (!(proj_norm > 0.0)) return std::numeric_limits<double>::infinity();
  return (g_norm * g_norm) / (proj_norm * proj_norm);
}

inline bool quasi_critical_test(double proj_norm, double orth_norm, double c) {
  if (!(c >= 0.0)) throw InvalidArgument("quasi_critical_test: c must be >= 0");
  return proj_norm <= c * orth_norm;
}

/// beta(s) = (sqrt(2 lambda_t) + eps(s) + s ||P^n g||) eps(s).
inline double beta_estimate(double lambda_t, double s, double update_norm, double epsilon) {
  return (std::sqrt(2.0 * std::max(lambda_t, 0.0)) + epsilon + s * update_norm) * epsilon;
}

inline constexpr double kStepFloor = 1e-12;
inline constexpr int kBisectionIterations = 60;

/// Largest step on a downward bisection from s_max with beta(s) <= beta_bar.
inline double adaptive_step(double s_max, double beta_bar, const std::function<double(double)>& beta) {
  if (!(beta_bar > 0.0)) throw InvalidArgument("adaptive_step: beta_bar must be > 0");
  if (beta(s_max) <= beta_bar) return s_max;
  double lo = 0.0, hi = s_max;
  for (int i = 0; i < kBisectionIterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (beta(mid) <= beta_bar)
      lo = mid;
    else
      hi = mid;
  }
  if (lo < kStepFloor) throw StepStall("adaptive_step: no admissible step above 1e-12");
  return lo;
}

/// Mutable bookkeeping of one descent run besides the model state.
template <class Model>
struct DescentState {
  typename Model::State state;
  int t = 0;
  std::optional<double> lambda;  // running loss estimate for the retraction bound
  long accepted = 0;
  long attempted = 0;
};

namespace detail {

inline double sampling_k(const Linearization& lin, SamplingKind kind) {
  return kind == SamplingKind::Reference ? lin.k_reference : static_cast<double>(lin.basis->dimension());
}

inline SampleBatch draw_batch(const Linearization& lin, const ReferenceMeasure& measure, const SamplingStrategy& strategy,
                              int n, Rng& rng, std::uint64_t seed) {
  switch (strategy.kind) {
    case SamplingKind::Reference: return draw_reference(measure, n, rng, seed);
    case SamplingKind::Optimal: return draw_iid_optimal(*lin.basis, *lin.sampler, n, rng, seed);
    case SamplingKind::OptimalConditioned:
      return draw_conditioned_stable(*lin.basis, *lin.sampler, n, strategy.delta, rng, strategy.max_attempts, seed);
    case SamplingKind::VolumeRescaled:
      if (!lin.volume) throw InvalidArgument("model provides no volume-rescaled sampler");
      return lin.volume->draw(n, rng, seed);
  }
  throw InvalidArgument("unknown sampling strategy");
}

inline double weighted_mean_square(const SampleBatch& batch, const Eigen::VectorXd& g) {
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) sum += batch.weights[i] * g(static_cast<Eigen::Index>(i)) * g(static_cast<Eigen::Index>(i));
  return sum / static_cast<double>(batch.size());
}

}  // namespace detail

/// Constants of the configured estimator at the current linearization.
inline BiasVarianceConstants step_constants(const DescentConfig& config, const Linearization& lin, double p_stable) {
  ConstantsQuery q;
  q.n = config.n;
  q.d = lin.basis->dimension();
  q.k = detail::sampling_k(lin, config.sampling.kind);
  q.lambda_min = lin.basis->lambda_min();
  q.lambda_max = lin.basis->lambda_max();
  switch (config.estimator) {
    case EstimatorKind::LeastSquares:
      q.delta = config.sampling.delta;
      q.p_stable = config.sampling.kind == SamplingKind::OptimalConditioned ? p_stable : 1.0;
      if (config.sampling.kind != SamplingKind::OptimalConditioned) q.delta = 0.5;
      break;
    case EstimatorKind::LeastSquaresVolume:
      q.delta = config.sampling.delta;
      break;
    case EstimatorKind::Debiased: {
      ConstantsQuery qq = q;
      q.q_constants = constants_for(EstimatorKind::Quasi, qq);
      const SamplingStrategy ps = config.debias_sampling.value_or(config.sampling);
      qq.k = detail::sampling_k(lin, ps.kind);
      qq.delta = ps.delta;
      qq.p_stable = ps.kind == SamplingKind::OptimalConditioned ? p_stable : 1.0;
      q.p_tilde_constants = constants_for(EstimatorKind::LeastSquares, qq);
      break;
    }
    default:
      break;
  }
  return constants_for(config.estimator, q);
}

/// Record of the current iterate (no step fields).
template <class Model>
StepRecord observe(const Model& model, const DescentState<Model>& ds, const Diagnostics& diag) {
  StepRecord rec;
  rec.t = ds.t;
  rec.loss = diag.loss;
  rec.loss_gap = diag.loss_gap;
  rec.proj_grad_norm = diag.proj_norm;
  rec.orth_grad_norm = diag.orth_norm;
  const double g_norm = std::sqrt(diag.proj_norm * diag.proj_norm + diag.orth_norm * diag.orth_norm);
  rec.kappa = kappa(g_norm, diag.proj_norm);
  rec.quasi_critical = !(diag.proj_norm > 0.0);
  (void)model;
  return rec;
}

template <class Model>
bool is_diverged(const Diagnostics& diag, const DescentConfig& config) {
  return !std::isfinite(diag.loss) || diag.loss > config.divergence_threshold;
}

/// One step of the scheme. Returns the record of the iterate before the step, with the
/// step fields filled in, and advances `ds` to the next iterate.
template <class Model>
StepRecord descent_step(const Model& model, DescentState<Model>& ds, const DescentConfig& config) {
  const auto lin = model.linearize(ds.state);
  const Diagnostics diag = model.diagnose(ds.state, lin);
  StepRecord rec = observe(model, ds, diag);
  if (is_diverged<Model>(diag, config)) {
    rec.diverged = true;
    throw DivergenceError("loss diverged at step " + std::to_string(ds.t));
  }

  const std::uint64_t seed = stream_seed(config.master_seed, config.replication, static_cast<std::uint64_t>(ds.t));
  Rng rng(seed);
  rec.seed = seed;
  SampleBatch batch = detail::draw_batch(lin, model.measure(), config.sampling, config.n, rng, seed);
  rec.attempts = batch.attempts;

  const OrthonormalBasis& basis = *lin.basis;
  const Eigen::VectorXd g = model.residual(ds.state, batch.points);

  // Running loss estimate for the retraction bound.
  double lambda_t = 0.0;
  {
    double sq = detail::weighted_mean_square(batch, g);
    if (config.fresh_lambda_batch) {
      const std::uint64_t aux = stream_seed(config.master_seed, config.replication, static_cast<std::uint64_t>(ds.t),
                                            StreamPurpose::Verification);
      Rng aux_rng(aux);
      const SampleBatch fresh = detail::draw_batch(lin, model.measure(), config.sampling, config.n, aux_rng, aux);
      sq = detail::weighted_mean_square(fresh, model.residual(ds.state, fresh.points));
    }
    lambda_t = ds.lambda ? 0.5 * *ds.lambda + 0.25 * sq : 0.5 * sq;
    ds.lambda = lambda_t;
  }

  // Direction in generating-system coefficients: P^n g = sum_j c_j phi_j.
  Eigen::VectorXd direction;
  switch (config.estimator) {
    case EstimatorKind::Exact:
      direction = basis.transform().transpose() * diag.projected_gradient;
      break;
    case EstimatorKind::NonProjection:
      direction = quasi_coefficients(basis.evaluate_system(batch.points), batch.weights, g);
      break;
    case EstimatorKind::Quasi:
      direction = basis.transform().transpose() * quasi_coefficients(basis.evaluate(batch.points), batch.weights, g);
      break;
    case EstimatorKind::LeastSquares:
    case EstimatorKind::LeastSquaresVolume:
      direction = basis.transform().transpose() * least_squares_coefficients(basis.evaluate(batch.points), batch.weights, g);
      break;
    case EstimatorKind::Debiased: {
      const std::uint64_t aux = stream_seed(config.master_seed, config.replication, static_cast<std::uint64_t>(ds.t),
                                            StreamPurpose::AuxiliaryBatch);
      Rng aux_rng(aux);
      const SamplingStrategy ps = config.debias_sampling.value_or(config.sampling);
      const SampleBatch tilde = detail::draw_batch(lin, model.measure(), ps, config.n, aux_rng, aux);
      rec.attempts += tilde.attempts - 1;
      const Eigen::VectorXd coeff =
          debiased_coefficients(basis.evaluate(tilde.points), tilde.weights, model.residual(ds.state, tilde.points),
                                basis.evaluate(batch.points), batch.weights, g);
      direction = basis.transform().transpose() * coeff;
      break;
    }
  }

  if (config.sampling.kind == SamplingKind::OptimalConditioned) {
    ds.accepted += 1;
    ds.attempted += batch.attempts;
  }
  const double p_stable = ds.attempted > 0 ? static_cast<double>(ds.accepted) / static_cast<double>(ds.attempted) : 1.0;
  const BiasVarianceConstants constants =
      config.estimator == EstimatorKind::Exact ? BiasVarianceConstants{} : step_constants(config, lin, p_stable);
  const LossSpec& loss = config.loss;
  const double s_opt = optimal_constant_step(constants, loss.L, loss.C_R);

  const double update_norm = std::sqrt(std::max(0.0, direction.dot(basis.source_gramian() * direction)));
  auto beta_at = [&](double s) {
    if (!model.has_nontrivial_retraction()) return 0.0;
    return beta_estimate(lambda_t, s, update_norm, model.retraction_error(ds.state, lin, direction, s));
  };

  double s = config.schedule.at(ds.t, s_opt);
  if (config.schedule.is_adaptive()) {
    const double beta_bar = std::min(lambda_t, s_opt / std::sqrt(ds.t + 1.0));
    s = rec.quasi_critical ? s_opt : adaptive_step(s_opt, beta_bar, beta_at);
  }

  const ContractionFactors f = contraction_factors(constants, s, loss.L, loss.C_R, loss.lambda);
  rec.step_size = s;
  rec.sigma = f.sigma;
  rec.a = f.a;

  if (rec.quasi_critical) {
    rec.beta = 0.0;
  } else {
    Retracted<Model> next = model.retract(ds.state, lin, direction, s);
    rec.beta = model.has_nontrivial_retraction() ? beta_estimate(lambda_t, s, update_norm, next.epsilon) : 0.0;
    ds.state = std::move(next.state);
  }
  ds.t += 1;
  return rec;
}

struct RunResult {
  std::vector<StepRecord> records;
  bool diverged = false;
  std::string message;
};

/// Runs T steps from `initial`, emitting T + 1 records (the last without step fields).
/// Divergence and stalls are recorded and end the run.
template <class Model>
RunResult run(const Model& model, typename Model::State initial, const DescentConfig& config) {
  if (config.T < 0) throw InvalidArgument("run: T must be >= 0");
  if (config.n < 1) throw InvalidArgument("run: n must be >= 1");
  RunResult out;
  DescentState<Model> ds{std::move(initial)};
  out.records.reserve(static_cast<std::size_t>(config.T) + 1);
  while (ds.t < config.T) {
    try {
      out.records.push_back(descent_step(model, ds, config));
    } catch (const DivergenceError& e) {
      const auto lin = model.linearize(ds.state);
      StepRecord rec = observe(model, ds, model.diagnose(ds.state, lin));
      rec.diverged = true;
      out.records.push_back(rec);
      out.diverged = true;
      out.message = e.what();
      return out;
    } catch (const StepStall& e) {
      out.message = e.what();
      break;
    }
  }
  const auto lin = model.linearize(ds.state);
  const Diagnostics diag = model.diagnose(ds.state, lin);
  StepRecord last = observe(model, ds, diag);
  if (is_diverged<Model>(diag, config)) {
    last.diverged = true;
    out.diverged = true;
    out.message = "loss diverged at step " + std::to_string(ds.t);
  }
  out.records.push_back(last);
  return out;
}

}  // namespace ngd
