#pragma once

// Experiment registry and the replication driver that turns descent runs into archives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "archive.hpp"
#include "descent.hpp"
#include "errors.hpp"
#include "model_linear.hpp"
#include "model_shallow_nn.hpp"
#include "random.hpp"
#include "sampling.hpp"

namespace ngd {

enum class ModelKind { Legendre, Hermite, ShallowNet };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Legendre: return "legendre";
    case ModelKind::Hermite: return "hermite";
    case ModelKind::ShallowNet: return "shallow-net";
  }
  return "unknown";
}

// Rounded best-approximation errors used to place schedule switches.
inline constexpr double kLegendreMinLossEstimate = 3.6e-4;
inline constexpr double kHermiteMinLossEstimate = 3.1e-4;
// Rank tolerance of the network tangent systems (see README).
inline constexpr double kShallowNetRankTol = 1e-7;

struct ExperimentSpec {
  std::string name;
  std::string description;
  ModelKind model = ModelKind::Legendre;
  int degree = 3;  // linear models: dimension d of the polynomial space
  int width = 20;  // shallow nets: m
  ShallowNetOptions nn;
  DescentConfig config;  // config.loss.target is filled in by make_target()
  int replications = 100;
  std::uint64_t master_seed = 1;
  /// Overrides applied on top of the registry entry, in order, for the archive header.
  std::vector<std::pair<std::string, std::string>> overrides;
};

inline FunctionHandle make_target(ModelKind kind) {
  if (kind == ModelKind::ShallowNet)
    return FunctionHandle([](double x) { return std::sin(2.0 * std::numbers::pi * x); }, "sin(2 pi x)");
  return FunctionHandle([](double x) { return std::exp(x); }, "exp(x)");
}

namespace detail {

inline ExperimentSpec legendre_spec(std::string name, std::string description) {
  ExperimentSpec s;
  s.name = std::move(name);
  s.description = std::move(description);
  s.model = ModelKind::Legendre;
  s.degree = 3;
  s.config.estimator = EstimatorKind::Quasi;
  s.config.n = 1;
  s.replications = 100;
  return s;
}

inline StepSizeSchedule legendre_sublinear() { return StepSizeSchedule::power(2.0 / 9.0, -0.9); }

inline ExperimentSpec hermite_spec(std::string name, int n, SamplingStrategy sampling) {
  ExperimentSpec s;
  s.name = std::move(name);
  s.description = "Hermite d=7 on the standard Gaussian, u*=exp, quasi-projection, n=" + std::to_string(n) + ", " +
                  to_string(sampling.kind) + " sampling";
  s.model = ModelKind::Hermite;
  s.degree = 7;
  s.config.estimator = EstimatorKind::Quasi;
  s.config.sampling = sampling;
  s.config.n = n;
  s.config.T = 10000;
  // Constant 1/7 (optimal for n = 1 under optimal sampling) until the predicted time to reach
  // L_min, then (2/7) t^-0.9; the same sequence for every panel.
  s.config.schedule = StepSizeSchedule::switched(predicted_iterations(kHermiteMinLossEstimate, 1.0 / 6.0),
                                                 StepSizeSchedule::constant(1.0 / 7.0),
                                                 StepSizeSchedule::power(2.0 / 7.0, -0.9));
  s.replications = 100;
  return s;
}

inline ExperimentSpec net_spec(std::string name, std::string description, EstimatorKind estimator,
                               SamplingStrategy sampling, StepSizeSchedule schedule) {
  ExperimentSpec s;
  s.name = std::move(name);
  s.description = std::move(description);
  s.model = ModelKind::ShallowNet;
  s.width = 20;
  s.nn.rank_tol = kShallowNetRankTol;
  s.config.estimator = estimator;
  s.config.sampling = sampling;
  s.config.schedule = std::move(schedule);
  s.config.n = 200;
  s.config.T = 10000;
  s.replications = 10;
  return s;
}

inline std::string delta_label(int inverse) { return "1/" + std::to_string(inverse); }

}  // namespace detail

/// All registered experiments, in listing order.
inline std::vector<ExperimentSpec> registry() {
  using detail::legendre_spec;
  std::vector<ExperimentSpec> out;
  const std::pair<const char*, SamplingStrategy> samplings[] = {{"uniform", SamplingStrategy::reference()},
                                                                 {"optimal", SamplingStrategy::optimal()}};
  for (const auto& [label, sampling] : samplings) {
    ExperimentSpec s = legendre_spec(std::string("leg-sublinear-") + label,
                                     std::string("Legendre d=3, quasi-projection, n=1, s_t=(2/9)t^-0.9, ") + label + " sampling");
    s.config.sampling = sampling;
    s.config.schedule = detail::legendre_sublinear();
    s.config.T = 10000;
    out.push_back(s);
  }
  for (const auto& [label, sampling] : samplings) {
    ExperimentSpec s = legendre_spec(std::string("leg-constant-") + label,
                                     std::string("Legendre d=3, quasi-projection, n=1, s=1/9, ") + label + " sampling");
    s.config.sampling = sampling;
    s.config.schedule = StepSizeSchedule::constant(1.0 / 9.0);
    s.config.T = 1000;
    out.push_back(s);
  }
  for (const auto& [label, sampling] : samplings) {
    ExperimentSpec s = legendre_spec(std::string("leg-switched-") + label,
                                     std::string("Legendre d=3, quasi-projection, n=1, s=1/9 then (2/9)t^-0.9, ") + label +
                                         " sampling");
    s.config.sampling = sampling;
    s.config.schedule = StepSizeSchedule::switched(predicted_iterations(kLegendreMinLossEstimate, 0.5),
                                                   StepSizeSchedule::constant(1.0 / 9.0), detail::legendre_sublinear());
    s.config.T = 10000;
    out.push_back(s);
  }
  {
    ExperimentSpec s = legendre_spec("leg-biased-quasi-conditioned",
                                     "Legendre d=3, quasi-projection, n=6, optimal sampling conditioned on delta=1/2, s=1/9");
    s.config.sampling = SamplingStrategy::conditioned(0.5);
    s.config.n = 6;
    s.config.schedule = StepSizeSchedule::constant(1.0 / 9.0);
    s.config.T = 1000;
    out.push_back(s);
    s.name = "leg-biased-least-squares";
    s.description = "Legendre d=3, least-squares projection, n=6, optimal sampling conditioned on delta=1/2, s=1/9";
    s.config.estimator = EstimatorKind::LeastSquares;
    out.push_back(s);
  }
  for (const char* est : {"quasi", "ls"}) {
    for (int inv : {2, 4, 8, 16}) {
      const double delta = 1.0 / inv;
      // n = 2d at delta = 1/2, scaled with delta^-2 to keep the acceptance rate comparable.
      const int n = 6 * inv * inv / 4;
      ExperimentSpec s = legendre_spec(std::string("leg-detstep-") + est + "-" + std::to_string(inv),
                                       std::string("Legendre d=3, ") + (est[0] == 'q' ? "quasi" : "least-squares") +
                                           " projection, s=1, conditioned on delta=" + detail::delta_label(inv) +
                                           ", n=" + std::to_string(n));
      s.config.estimator = est[0] == 'q' ? EstimatorKind::Quasi : EstimatorKind::LeastSquares;
      s.config.sampling = SamplingStrategy::conditioned(delta);
      s.config.n = n;
      s.config.schedule = StepSizeSchedule::constant(1.0);
      s.config.T = 50;
      out.push_back(s);
    }
  }
  out.push_back(detail::hermite_spec("hermite-gaussian-n1", 1, SamplingStrategy::reference()));
  out.push_back(detail::hermite_spec("hermite-gaussian-n21", 21, SamplingStrategy::reference()));
  out.push_back(detail::hermite_spec("hermite-gaussian-n70", 70, SamplingStrategy::reference()));
  out.push_back(detail::hermite_spec("hermite-optimal-n1", 1, SamplingStrategy::optimal()));
  out.push_back(detail::hermite_spec("hermite-optimal-n7", 7, SamplingStrategy::optimal()));

  out.push_back(detail::net_spec("nn-ls-adaptive",
                                 "width-20 RePU net, u*=sin(2 pi x), least squares, conditioned delta=1/2, adaptive step",
                                 EstimatorKind::LeastSquares, SamplingStrategy::conditioned(0.5),
                                 StepSizeSchedule::adaptive()));
  out.push_back(detail::net_spec("nn-ls-decreasing",
                                 "width-20 RePU net, u*=sin(2 pi x), least squares, conditioned delta=1/2, s_opt t^-1/2",
                                 EstimatorKind::LeastSquares, SamplingStrategy::conditioned(0.5),
                                 StepSizeSchedule::power(1.0, -0.5, true)));
  out.push_back(detail::net_spec("nn-quasi-adaptive",
                                 "width-20 RePU net, u*=sin(2 pi x), quasi-projection, optimal sampling, adaptive step",
                                 EstimatorKind::Quasi, SamplingStrategy::optimal(), StepSizeSchedule::adaptive()));
  out.push_back(detail::net_spec("nn-sgd-uniform",
                                 "width-20 RePU net, u*=sin(2 pi x), non-projection (SGD), uniform sampling, s_opt t^-1/2",
                                 EstimatorKind::NonProjection, SamplingStrategy::reference(),
                                 StepSizeSchedule::power(1.0, -0.5, true)));
  for (auto& s : out) s.config.loss.target = make_target(s.model);
  return out;
}

inline ExperimentSpec find_experiment(const std::string& name) {
  for (auto& s : registry())
    if (s.name == name) return s;
  throw InvalidArgument("unknown experiment: " + name);
}

namespace detail {

inline int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  const long x = std::stol(v, &used);
  if (used != v.size()) throw InvalidArgument("override " + key + ": not an integer: " + v);
  return static_cast<int>(x);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  const double x = std::stod(v, &used);
  if (used != v.size()) throw InvalidArgument("override " + key + ": not a number: " + v);
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw InvalidArgument("override " + key + ": not a boolean: " + v);
}

inline EstimatorKind parse_estimator(const std::string& v) {
  for (EstimatorKind k : {EstimatorKind::Exact, EstimatorKind::NonProjection, EstimatorKind::Quasi,
                          EstimatorKind::LeastSquares, EstimatorKind::LeastSquaresVolume, EstimatorKind::Debiased})
    if (to_string(k) == v) return k;
  throw InvalidArgument("unknown estimator: " + v);
}

}  // namespace detail

/// Applies one `key=value` override. Unknown keys and malformed values throw InvalidArgument.
inline void apply_override(ExperimentSpec& spec, const std::string& key, const std::string& value) {
  using namespace detail;
  DescentConfig& c = spec.config;
  try {
    if (key == "T") c.T = parse_int(key, value);
    else if (key == "n") c.n = parse_int(key, value);
    else if (key == "degree") spec.degree = parse_int(key, value);
    else if (key == "width") spec.width = parse_int(key, value);
    else if (key == "replications") spec.replications = parse_int(key, value);
    else if (key == "seed") spec.master_seed = std::stoull(value);
    else if (key == "delta") c.sampling.delta = parse_real(key, value);
    else if (key == "max_attempts") c.sampling.max_attempts = parse_int(key, value);
    else if (key == "grid_size") c.sampling.grid_size = parse_int(key, value);
    else if (key == "sampling") {
      const double delta = c.sampling.delta;
      if (value == "reference") c.sampling = SamplingStrategy::reference();
      else if (value == "optimal") c.sampling = SamplingStrategy::optimal();
      else if (value == "conditioned") c.sampling = SamplingStrategy::conditioned(delta);
      else if (value == "volume") c.sampling = SamplingStrategy::volume();
      else throw InvalidArgument("unknown sampling: " + value);
    } else if (key == "estimator") c.estimator = parse_estimator(value);
    else if (key == "step") c.schedule = StepSizeSchedule::constant(parse_real(key, value));
    else if (key == "step_power") {
      // c0,exponent
      const auto f = split(value, ',');
      if (f.size() != 2) throw InvalidArgument("override step_power expects c0,exponent");
      c.schedule = StepSizeSchedule::power(parse_real(key, f[0]), parse_real(key, f[1]));
    } else if (key == "step_optimal") c.schedule = StepSizeSchedule::constant_optimal();
    else if (key == "step_adaptive") c.schedule = StepSizeSchedule::adaptive();
    else if (key == "divergence_threshold") c.divergence_threshold = parse_real(key, value);
    else if (key == "fresh_lambda_batch") c.fresh_lambda_batch = parse_bool(key, value);
    else if (key == "rank_tol") spec.nn.rank_tol = parse_real(key, value);
    else if (key == "fd_step") spec.nn.fd_step = parse_real(key, value);
    else if (key == "equilibrate") spec.nn.equilibrate = parse_bool(key, value);
    else throw InvalidArgument("unknown override key: " + key);
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const InvalidArgument*>(&e)) throw;
    throw InvalidArgument("override " + key + ": bad value '" + value + "'");
  }
  spec.overrides.emplace_back(key, value);
}

/// Applies a "key=value" string.
inline void apply_override(ExperimentSpec& spec, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidArgument("override must be key=value: " + assignment);
  apply_override(spec, assignment.substr(0, eq), assignment.substr(eq + 1));
}

/// Effective configuration as key/value pairs (archive header).
inline std::vector<std::pair<std::string, std::string>> describe(const ExperimentSpec& spec) {
  const DescentConfig& c = spec.config;
  std::vector<std::pair<std::string, std::string>> h = {
      {"experiment", spec.name},
      {"description", spec.description},
      {"code_version", kCodeVersion},
      {"master_seed", std::to_string(spec.master_seed)},
      {"replications", std::to_string(spec.replications)},
      {"config.model", to_string(spec.model)},
      {"config.target", c.loss.target.tag()},
      {"config.estimator", to_string(c.estimator)},
      {"config.sampling", to_string(c.sampling.kind)},
      {"config.n", std::to_string(c.n)},
      {"config.T", std::to_string(c.T)},
      {"config.schedule", c.schedule.describe()},
      {"config.L", format_double(c.loss.L)},
      {"config.lambda", format_double(c.loss.lambda)},
      {"config.C_R", format_double(c.loss.C_R)},
      {"config.divergence_threshold", format_double(c.divergence_threshold)},
  };
  if (c.sampling.kind == SamplingKind::OptimalConditioned) {
    h.emplace_back("config.delta", format_double(c.sampling.delta));
    h.emplace_back("config.max_attempts", std::to_string(c.sampling.max_attempts));
  }
  if (c.sampling.kind == SamplingKind::VolumeRescaled) h.emplace_back("config.grid_size", std::to_string(c.sampling.grid_size));
  if (spec.model == ModelKind::ShallowNet) {
    h.emplace_back("config.width", std::to_string(spec.width));
    h.emplace_back("config.rank_tol", format_double(spec.nn.rank_tol));
    h.emplace_back("config.fd_step", format_double(spec.nn.fd_step));
    h.emplace_back("config.equilibrate", spec.nn.equilibrate ? "true" : "false");
    h.emplace_back("config.fresh_lambda_batch", c.fresh_lambda_batch ? "true" : "false");
  } else {
    h.emplace_back("config.degree", std::to_string(spec.degree));
  }
  for (const auto& [k, v] : spec.overrides) h.emplace_back("set", k + "=" + v);
  return h;
}

namespace detail {

/// Rows of one replication, padded to T + 1: after a divergence the loss is +inf, after a
/// stall the last state is repeated without step fields.
inline std::vector<ArchiveRow> to_rows(const std::string& name, int replication, const RunResult& result, int T) {
  std::vector<ArchiveRow> rows;
  rows.reserve(static_cast<std::size_t>(T) + 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  for (const StepRecord& r : result.records) {
    ArchiveRow row;
    row.experiment = name;
    row.replication = replication;
    row.t = r.t;
    row.loss = r.diverged && !std::isfinite(r.loss) ? inf : r.loss;
    row.loss_gap = r.diverged && !std::isfinite(r.loss_gap) ? inf : r.loss_gap;
    row.proj_grad_norm = r.proj_grad_norm;
    row.orth_grad_norm = r.orth_grad_norm;
    row.kappa = r.kappa;
    row.step_size = r.step_size;
    row.sigma = r.sigma;
    row.a = r.a;
    row.beta = r.beta;
    row.attempts = r.attempts;
    row.seed = r.seed;
    rows.push_back(row);
  }
  while (static_cast<int>(rows.size()) < T + 1) {
    ArchiveRow row = rows.back();
    row.t += 1;
    row.step_size = row.sigma = row.a = row.beta = nan;
    row.attempts = 0;
    row.seed = 0;
    if (result.diverged) {
      row.loss = row.loss_gap = inf;
      row.proj_grad_norm = row.orth_grad_norm = row.kappa = nan;
    }
    rows.push_back(row);
  }
  return rows;
}

template <class Model, class Init>
std::vector<RunResult> run_replications(const Model& model, const ExperimentSpec& spec, Init initial_state, int threads) {
  const int reps = spec.replications;
  std::vector<RunResult> results(static_cast<std::size_t>(reps));
  auto work = [&](int r) {
    DescentConfig c = spec.config;
    c.master_seed = spec.master_seed;
    c.replication = static_cast<std::uint64_t>(r);
    try {
      results[static_cast<std::size_t>(r)] = run(model, initial_state(r), c);
    } catch (const StabilityUnreachable& e) {
      RunResult failed;
      failed.message = e.what();
      results[static_cast<std::size_t>(r)] = std::move(failed);
    }
  };
  const int workers = std::max(1, std::min(threads, reps));
  if (workers == 1) {
    for (int r = 0; r < reps; ++r) work(r);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int r = w; r < reps; r += workers) work(r);
      });
    for (auto& th : pool) th.join();
  }
  return results;
}

}  // namespace detail

inline int default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs all replications of `spec` and collects them into an archive ordered by (replication, t).
inline RunArchive run_experiment(const ExperimentSpec& spec, int threads = default_threads()) {
  if (spec.replications < 1) throw InvalidArgument("run_experiment: replications must be >= 1");
  if (spec.config.T < 0) throw InvalidArgument("run_experiment: T must be >= 0");
  std::vector<RunResult> results;
  switch (spec.model) {
    case ModelKind::Legendre:
    case ModelKind::Hermite: {
      const bool leg = spec.model == ModelKind::Legendre;
      const LinearModel model(leg ? legendre_basis(spec.degree) : hermite_basis(spec.degree),
                              leg ? ReferenceMeasure::uniform() : ReferenceMeasure::gaussian(), spec.config.loss.target,
                              spec.config.sampling.grid_size);
      results = detail::run_replications(model, spec, [&](int) { return model.zero_state(); }, threads);
      break;
    }
    case ModelKind::ShallowNet: {
      const ShallowNetModel model(ReferenceMeasure::uniform(), spec.config.loss.target, spec.nn);
      auto init = [&](int r) {
        Rng rng(stream_seed(spec.master_seed, static_cast<std::uint64_t>(r), 0, StreamPurpose::Initialization));
        return initial_net(spec.width, Activation::RePU, rng);
      };
      results = detail::run_replications(model, spec, init, threads);
      break;
    }
  }
  RunArchive archive;
  archive.header = describe(spec);
  for (int r = 0; r < spec.replications; ++r) {
    const RunResult& res = results[static_cast<std::size_t>(r)];
    if (res.records.empty()) {
      archive.events.push_back("replication " + std::to_string(r) + " failed: " + res.message);
      RunResult placeholder;
      StepRecord rec;
      rec.loss = rec.loss_gap = std::numeric_limits<double>::quiet_NaN();
      placeholder.records.push_back(rec);
      auto rows = detail::to_rows(spec.name, r, placeholder, spec.config.T);
      archive.rows.insert(archive.rows.end(), rows.begin(), rows.end());
      continue;
    }
    if (!res.message.empty()) archive.events.push_back("replication " + std::to_string(r) + ": " + res.message);
    auto rows = detail::to_rows(spec.name, r, res, spec.config.T);
    archive.rows.insert(archive.rows.end(), rows.begin(), rows.end());
  }
  archive.summary = summarize(archive);
  return archive;
}

/// Rebuilds the spec recorded in an archive header (registry entry plus overrides).
inline ExperimentSpec spec_from_header(const RunArchive& archive) {
  ExperimentSpec spec = find_experiment(archive.header_value("experiment"));
  const std::string seed = archive.header_value("master_seed");
  const std::string reps = archive.header_value("replications");
  for (const auto& [k, v] : archive.header)
    if (k == "set") apply_override(spec, v);
  if (!seed.empty()) spec.master_seed = std::stoull(seed);
  if (!reps.empty()) spec.replications = std::stoi(reps);
  return spec;
}

}  // namespace ngd
