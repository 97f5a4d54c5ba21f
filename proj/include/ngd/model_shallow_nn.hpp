#pragma once

// Shallow networks Phi(x) = A1 sigma(A0 x + b0) + b1 on the real line as a nonlinear model
// class: network algebra, quadrature inner products, the finite-difference tangent system,
// the parameter-space retraction and an exact optimal sampler for RePU networks.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "descent.hpp"
#include "errors.hpp"
#include "function_space.hpp"
#include "random.hpp"
#include "sampling.hpp"

namespace ngd {

enum class Activation { RePU, LogisticSigmoid };

inline std::string to_string(Activation a) { return a == Activation::RePU ? "repu" : "sigmoid"; }

inline double activate(Activation a, double z) {
  if (a == Activation::RePU) return z > 0.0 ? z * z : 0.0;
  return 1.0 / (1.0 + std::exp(-z));
}

inline double activate_derivative(Activation a, double z) {
  if (a == Activation::RePU) return z > 0.0 ? 2.0 * z : 0.0;
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 - s);
}

struct ShallowNet {
  Eigen::VectorXd A1;
  double b1 = 0.0;
  Eigen::VectorXd A0;
  Eigen::VectorXd b0;
  Activation activation = Activation::RePU;

  int width() const { return static_cast<int>(A1.size()); }

  static ShallowNet zero(int m = 0, Activation activation = Activation::RePU) {
    ShallowNet net;
    net.A1 = Eigen::VectorXd::Zero(m);
    net.A0 = Eigen::VectorXd::Zero(m);
    net.b0 = Eigen::VectorXd::Zero(m);
    net.activation = activation;
    return net;
  }

  /// Parameters in the order [A1, b1, A0, b0].
  Eigen::VectorXd parameters() const {
    const int m = width();
    Eigen::VectorXd p(3 * m + 1);
    p << A1, b1, A0, b0;
    return p;
  }

  static ShallowNet from_parameters(const Eigen::VectorXd& p, Activation activation = Activation::RePU) {
    if ((p.size() - 1) % 3 != 0) throw InvalidArgument("ShallowNet: parameter count must be 3m+1");
    const Eigen::Index m = (p.size() - 1) / 3;
    ShallowNet net;
    net.A1 = p.head(m);
    net.b1 = p(m);
    net.A0 = p.segment(m + 1, m);
    net.b0 = p.tail(m);
    net.activation = activation;
    return net;
  }
};

inline double net_eval(const ShallowNet& net, double x) {
  double sum = net.b1;
  for (int j = 0; j < net.width(); ++j) sum += net.A1(j) * activate(net.activation, net.A0(j) * x + net.b0(j));
  return sum;
}

inline Eigen::VectorXd net_eval(const ShallowNet& net, std::span<const double> xs) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) out(static_cast<Eigen::Index>(i)) = net_eval(net, xs[i]);
  return out;
}

inline FunctionHandle net_function(const ShallowNet& net) {
  return FunctionHandle([net](double x) { return net_eval(net, x); }, "net");
}

/// Concatenation of the hidden units; evaluates to the pointwise sum.
inline ShallowNet net_add(const ShallowNet& a, const ShallowNet& b) {
  if (a.activation != b.activation) throw InvalidArgument("net_add: mixed activations");
  ShallowNet out;
  out.activation = a.activation;
  const int m = a.width(), k = b.width();
  out.A1.resize(m + k);
  out.A0.resize(m + k);
  out.b0.resize(m + k);
  out.A1 << a.A1, b.A1;
  out.A0 << a.A0, b.A0;
  out.b0 << a.b0, b.b0;
  out.b1 = a.b1 + b.b1;
  return out;
}

inline ShallowNet net_scale(const ShallowNet& net, double c) {
  ShallowNet out = net;
  out.A1 *= c;
  out.b1 *= c;
  return out;
}

/// Merges hidden units with identical inner parameters and drops units with zero weight.
inline ShallowNet net_simplify(const ShallowNet& net) {
  std::vector<int> order(static_cast<std::size_t>(net.width()));
  for (int j = 0; j < net.width(); ++j) order[static_cast<std::size_t>(j)] = j;
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    return net.A0(i) < net.A0(j) || (net.A0(i) == net.A0(j) && net.b0(i) < net.b0(j));
  });
  std::vector<double> a1, a0, b0;
  for (int j : order) {
    if (!a0.empty() && a0.back() == net.A0(j) && b0.back() == net.b0(j)) {
      a1.back() += net.A1(j);
    } else {
      a1.push_back(net.A1(j));
      a0.push_back(net.A0(j));
      b0.push_back(net.b0(j));
    }
  }
  ShallowNet out = ShallowNet::zero(0, net.activation);
  out.b1 = net.b1;
  std::vector<double> k1, k0, kb;
  for (std::size_t j = 0; j < a1.size(); ++j) {
    if (a1[j] == 0.0) continue;
    k1.push_back(a1[j]);
    k0.push_back(a0[j]);
    kb.push_back(b0[j]);
  }
  out.A1 = Eigen::Map<Eigen::VectorXd>(k1.data(), static_cast<Eigen::Index>(k1.size()));
  out.A0 = Eigen::Map<Eigen::VectorXd>(k0.data(), static_cast<Eigen::Index>(k0.size()));
  out.b0 = Eigen::Map<Eigen::VectorXd>(kb.data(), static_cast<Eigen::Index>(kb.size()));
  return out;
}

/// Kinks of a RePU network (empty for smooth activations).
inline std::vector<double> breakpoints(const ShallowNet& net) {
  std::vector<double> out;
  if (net.activation != Activation::RePU) return out;
  for (int j = 0; j < net.width(); ++j)
    if (net.A0(j) != 0.0) out.push_back(-net.b0(j) / net.A0(j));
  return out;
}

namespace detail {

// Composite rule for network integrands. On the uniform measure the pieces follow the kinks;
// on the Gaussian the truncated line [-R, R] is split likewise and the density folded in.
inline Quadrature net_quadrature(const ReferenceMeasure& measure, const std::vector<double>& kinks,
                                 int nodes_per_piece, int base_pieces) {
  if (measure.bounded()) return composite_quadrature(measure, kinks, nodes_per_piece, base_pieces);
  const ReferenceMeasure line = ReferenceMeasure::uniform(measure.lower(), measure.upper());
  Quadrature q = composite_quadrature(line, kinks, nodes_per_piece, std::max(base_pieces, 256));
  const double length = measure.upper() - measure.lower();
  for (std::size_t i = 0; i < q.size(); ++i) q.weights[i] *= length * measure.density(q.nodes[i]);
  q.exact_degree = 0;
  return q;
}

inline int exact_nodes(Activation a) { return a == Activation::RePU ? 3 : 12; }
inline int exact_base_pieces(Activation a) { return a == Activation::RePU ? 1 : 64; }

}  // namespace detail

/// L2(rho) inner product of two networks by a kink-aware composite Gauss rule; exact for
/// RePU networks on the uniform measure.
inline double net_inner_product(const ShallowNet& f, const ShallowNet& g, const ReferenceMeasure& measure) {
  if (f.activation != g.activation) throw InvalidArgument("net_inner_product: mixed activations");
  std::vector<double> kinks = breakpoints(f);
  const std::vector<double> more = breakpoints(g);
  kinks.insert(kinks.end(), more.begin(), more.end());
  const Quadrature q = detail::net_quadrature(measure, kinks, detail::exact_nodes(f.activation),
                                              detail::exact_base_pieces(f.activation));
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) sum += q.weights[i] * net_eval(f, q.nodes[i]) * net_eval(g, q.nodes[i]);
  return sum;
}

inline double net_norm(const ShallowNet& f, const ReferenceMeasure& measure) {
  return std::sqrt(std::max(0.0, net_inner_product(f, f, measure)));
}

inline constexpr double kDefaultFdStep = 1e-4;

/// Generating system of the finite-difference linearization space, ordered like the
/// parameters: sigma_j (A1), 1 (b1), A0 surrogates, b0 surrogates. Coefficient j of an
/// element of the span is the increment of parameter j.
class TangentSystem {
 public:
  TangentSystem(ShallowNet net, double h) : net_(std::move(net)) {
    if (!(h > 0.0)) throw InvalidArgument("tangent_system: h must be > 0");
    steps_.resize(static_cast<std::size_t>(net_.width()));
    for (int i = 0; i < net_.width(); ++i) steps_[static_cast<std::size_t>(i)] = h * std::max(1.0, std::abs(net_.A1(i)));
  }

  const ShallowNet& net() const { return net_; }
  int width() const { return net_.width(); }
  int size() const { return 3 * width() + 1; }
  double step(int i) const { return steps_[static_cast<std::size_t>(i)]; }

  /// Values of all elements, rows = points.
  void evaluate(std::span<const double> xs, Eigen::Ref<Eigen::MatrixXd> out) const {
    const int m = width();
    const Activation act = net_.activation;
    for (std::size_t r = 0; r < xs.size(); ++r) {
      const double x = xs[r];
      const Eigen::Index i = static_cast<Eigen::Index>(r);
      out(i, m) = 1.0;
      for (int j = 0; j < m; ++j) {
        const double a = net_.A0(j), b = net_.b0(j), h = steps_[static_cast<std::size_t>(j)];
        const double base = activate(act, a * x + b);
        const double scale = net_.A1(j) / h;
        out(i, j) = base;
        out(i, m + 1 + j) = scale * (activate(act, (a + h) * x + b) - base);
        out(i, 2 * m + 1 + j) = scale * (activate(act, a * x + b + h) - base);
      }
    }
  }

  Eigen::MatrixXd evaluate(std::span<const double> xs) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), size());
    evaluate(xs, out);
    return out;
  }

  SystemEvaluator evaluator() const {
    auto self = std::make_shared<const TangentSystem>(*this);
    return [self](std::span<const double> xs, Eigen::Ref<Eigen::MatrixXd> out) { self->evaluate(xs, out); };
  }

  FunctionSystem functions() const {
    FunctionSystem out;
    auto self = std::make_shared<const TangentSystem>(*this);
    for (int k = 0; k < size(); ++k) {
      out.emplace_back(
          [self, k](double x) {
            const double xs[1] = {x};
            Eigen::MatrixXd v(1, self->size());
            self->evaluate(std::span<const double>(xs, 1), v);
            return v(0, k);
          },
          "tangent" + std::to_string(k));
    }
    return out;
  }

  /// Kinks of all system elements.
  std::vector<double> kinks() const {
    std::vector<double> out;
    if (net_.activation != Activation::RePU) return out;
    for (int j = 0; j < width(); ++j) {
      const double a = net_.A0(j), b = net_.b0(j), h = steps_[static_cast<std::size_t>(j)];
      if (a != 0.0) {
        out.push_back(-b / a);
        out.push_back(-(b + h) / a);
      }
      if (a + h != 0.0) out.push_back(-b / (a + h));
    }
    return out;
  }

  /// sum_j c_j phi_j as a network of width <= 3m.
  ShallowNet combination(const Eigen::VectorXd& c) const {
    if (c.size() != size()) throw InvalidArgument("TangentSystem::combination: size mismatch");
    const int m = width();
    ShallowNet out = ShallowNet::zero(3 * m, net_.activation);
    out.b1 = c(m);
    for (int j = 0; j < m; ++j) {
      const double a = net_.A0(j), b = net_.b0(j), h = steps_[static_cast<std::size_t>(j)];
      const double scale = net_.A1(j) / h;
      const double ca = c(m + 1 + j) * scale, cb = c(2 * m + 1 + j) * scale;
      out.A1(j) = c(j) - ca - cb;
      out.A0(j) = a;
      out.b0(j) = b;
      out.A1(m + j) = ca;
      out.A0(m + j) = a + h;
      out.b0(m + j) = b;
      out.A1(2 * m + j) = cb;
      out.A0(2 * m + j) = a;
      out.b0(2 * m + j) = b + h;
    }
    return out;
  }

 private:
  ShallowNet net_;
  std::vector<double> steps_;
};

inline TangentSystem tangent_system(const ShallowNet& net, double h = kDefaultFdStep) { return TangentSystem(net, h); }

/// Parameter update theta - s * direction.
inline ShallowNet apply_increment(const ShallowNet& net, double s, const Eigen::VectorXd& direction) {
  if (direction.size() != 3 * net.width() + 1) throw InvalidArgument("apply_increment: size mismatch");
  return ShallowNet::from_parameters(net.parameters() - s * direction, net.activation);
}

struct NetRetraction {
  ShallowNet net;
  double epsilon = 0.0;
};

/// R(u - s P^n g) = Phi_{theta - s vartheta}, with eps(s) = ||Phi_{theta - s vartheta} -
/// (Phi_theta - s sum_j vartheta_j phi_j)||.
inline NetRetraction nn_retraction(const TangentSystem& system, double s, const Eigen::VectorXd& direction,
                                   const ReferenceMeasure& measure) {
  NetRetraction out;
  out.net = apply_increment(system.net(), s, direction);
  if (s == 0.0 || direction.isZero(0.0)) return out;
  const ShallowNet linear = net_add(system.net(), net_scale(system.combination(direction), -s));
  const ShallowNet diff = net_simplify(net_add(out.net, net_scale(linear, -1.0)));
  out.epsilon = net_norm(diff, measure);
  return out;
}

/// Exact sampler for the density K rho / d on the uniform measure when every basis function
/// is a quadratic polynomial between consecutive kinks (RePU networks).
class PiecewiseChristoffelSampler final : public ChristoffelSampler {
 public:
  PiecewiseChristoffelSampler(const OrthonormalBasis& basis, const ReferenceMeasure& measure, std::vector<double> kinks) {
    if (!measure.bounded()) throw InvalidArgument("PiecewiseChristoffelSampler: uniform measure required");
    const double a = measure.lower(), b = measure.upper();
    kinks.push_back(a);
    kinks.push_back(b);
    std::erase_if(kinks, [&](double x) { return !(x >= a && x <= b); });
    std::sort(kinks.begin(), kinks.end());
    kinks.erase(std::unique(kinks.begin(), kinks.end()), kinks.end());
    for (std::size_t p = 0; p + 1 < kinks.size(); ++p)
      if (kinks[p + 1] > kinks[p]) edges_.push_back({kinks[p], kinks[p + 1]});

    constexpr std::array<double, 3> tau = {1.0 / 6.0, 0.5, 5.0 / 6.0};
    std::vector<double> xs;
    xs.reserve(3 * edges_.size());
    for (const auto& e : edges_)
      for (double t : tau) xs.push_back(e[0] + t * (e[1] - e[0]));
    const Eigen::MatrixXd values = basis.evaluate(xs);

    // Quadratic through (tau_i, v_i) in the local coordinate, then K = sum_k q_k^2.
    coeffs_.resize(edges_.size());
    masses_.resize(edges_.size());
    double total = 0.0;
    for (std::size_t p = 0; p < edges_.size(); ++p) {
      std::array<double, 5> quartic{};
      for (Eigen::Index k = 0; k < values.cols(); ++k) {
        const double v0 = values(static_cast<Eigen::Index>(3 * p), k);
        const double v1 = values(static_cast<Eigen::Index>(3 * p + 1), k);
        const double v2 = values(static_cast<Eigen::Index>(3 * p + 2), k);
        // Newton form on equispaced nodes with spacing 1/3.
        const double d1 = (v1 - v0) * 3.0, d2 = (v2 - 2.0 * v1 + v0) * 4.5;
        const double c2 = d2;
        const double c1 = d1 - d2 * (tau[0] + tau[1]);
        const double c0 = v0 - d1 * tau[0] + d2 * tau[0] * tau[1];
        const double q[3] = {c0, c1, c2};
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) quartic[static_cast<std::size_t>(i + j)] += q[i] * q[j];
      }
      coeffs_[p] = quartic;
      double integral = 0.0;
      for (int i = 0; i < 5; ++i) integral += quartic[static_cast<std::size_t>(i)] / (i + 1.0);
      masses_[p] = std::max(0.0, integral) * (edges_[p][1] - edges_[p][0]);
      total += masses_[p];
    }
    if (!(total > 0.0)) throw NumericError("PiecewiseChristoffelSampler: zero mass", a);
    cumulative_.resize(masses_.size());
    double acc = 0.0;
    for (std::size_t p = 0; p < masses_.size(); ++p) {
      acc += masses_[p] / total;
      cumulative_[p] = acc;
    }
    cumulative_.back() = 1.0;
    length_ = b - a;
    mass_ = total / length_;
  }

  double draw(Rng& rng) const override {
    const double u = uniform01(rng);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const std::size_t p = std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
    return edges_[p][0] + invert(coeffs_[p], uniform01(rng)) * (edges_[p][1] - edges_[p][0]);
  }

  /// sup of K over the domain, evaluated on a fine grid inside each piece.
  double sup() const {
    double out = 0.0;
    for (const auto& c : coeffs_)
      for (int i = 0; i <= 16; ++i) out = std::max(out, eval(c, i / 16.0));
    return out;
  }

  /// integral of K d rho; equals d_t for an orthonormal basis.
  double mass() const { return mass_; }

 private:
  static double eval(const std::array<double, 5>& c, double t) {
    return (((c[4] * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0];
  }
  static double primitive(const std::array<double, 5>& c, double t) {
    double out = 0.0, tp = t;
    for (int i = 0; i < 5; ++i, tp *= t) out += c[static_cast<std::size_t>(i)] * tp / (i + 1.0);
    return out;
  }
  // Solves F(t) = u F(1) on [0, 1] by Newton steps safeguarded with bisection.
  static double invert(const std::array<double, 5>& c, double u) {
    const double target = u * primitive(c, 1.0);
    double lo = 0.0, hi = 1.0, t = u;
    for (int iter = 0; iter < 100; ++iter) {
      const double f = primitive(c, t) - target;
      if (std::abs(f) <= 1e-15 * std::max(1.0, std::abs(target))) break;
      if (f > 0.0)
        hi = t;
      else
        lo = t;
      const double df = eval(c, t);
      double next = df > 0.0 ? t - f / df : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (hi - lo < 1e-15) break;
      t = next;
    }
    return t;
  }

  std::vector<std::array<double, 2>> edges_;
  std::vector<std::array<double, 5>> coeffs_;
  std::vector<double> masses_;
  std::vector<double> cumulative_;
  double length_ = 1.0;
  double mass_ = 0.0;
};

struct ShallowNetOptions {
  double fd_step = kDefaultFdStep;
  double rank_tol = kDefaultRankTol;
  /// Decide the tangent rank on the unit-diagonal Gramian (see orthonormalize_gramian).
  bool equilibrate = false;
  /// Gauss nodes per piece and equispaced cuts for integrals that involve the target.
  int loss_nodes = 8;
  int loss_base_pieces = 32;
};

/// Linearization of a network iterate: the tangent system and its orthonormal basis.
struct NetLinearization : Linearization {
  std::shared_ptr<const TangentSystem> system;
};

/// Breakpoints ~ U(-1, 1), slopes +-U(1, 3), outer weights ~ U(-1, 1)/m, b1 = 0.
inline ShallowNet initial_net(int m, Activation activation, Rng& rng) {
  if (m < 1) throw InvalidArgument("initial_net: m must be >= 1");
  ShallowNet net = ShallowNet::zero(m, activation);
  for (int j = 0; j < m; ++j) {
    const double kink = -1.0 + 2.0 * uniform01(rng);
    const double slope = (1.0 + 2.0 * uniform01(rng)) * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
    net.A0(j) = slope;
    net.b0(j) = -slope * kink;
    net.A1(j) = (-1.0 + 2.0 * uniform01(rng)) / m;
  }
  return net;
}

/// Shallow networks of fixed width as a model class with the parameter-space retraction.
/// The best-approximation loss over the class is taken to be 0, so loss_gap = loss.
class ShallowNetModel {
 public:
  using State = ShallowNet;

  ShallowNetModel(ReferenceMeasure measure, FunctionHandle target, ShallowNetOptions options = {})
      : measure_(measure), target_(std::move(target)), options_(options) {}

  const ReferenceMeasure& measure() const { return measure_; }
  const FunctionHandle& target() const { return target_; }
  const ShallowNetOptions& options() const { return options_; }

  NetLinearization linearize(const State& net) const {
    NetLinearization lin;
    auto system = std::make_shared<const TangentSystem>(net, options_.fd_step);
    lin.system = system;
    const std::vector<double> kinks = system->kinks();
    const Quadrature q = detail::net_quadrature(measure_, kinks, detail::exact_nodes(net.activation),
                                                detail::exact_base_pieces(net.activation));
    const Eigen::MatrixXd values = system->evaluate(q.nodes);
    auto basis = std::make_shared<const OrthonormalBasis>(orthonormalize_gramian(
        system->functions(), gramian_from_values(values, q), options_.rank_tol, system->evaluator(), options_.equilibrate));
    lin.basis = basis;
    if (net.activation == Activation::RePU && measure_.bounded()) {
      auto sampler = std::make_shared<const PiecewiseChristoffelSampler>(*basis, measure_, kinks);
      lin.k_reference = sampler->sup();
      lin.sampler = sampler;
    } else {
      lin.sampler = std::make_shared<const TabulatedChristoffelSampler>(*basis, measure_);
      const KConstant k = k_constant(*basis, measure_, [](double) { return 1.0; });
      lin.k_reference = k.unbounded ? std::numeric_limits<double>::infinity() : k.value;
    }
    return lin;
  }

  Diagnostics diagnose(const State& net, const NetLinearization& lin) const {
    const Quadrature q = detail::net_quadrature(measure_, lin.system->kinks(), options_.loss_nodes, options_.loss_base_pieces);
    const Eigen::MatrixXd values = lin.system->evaluate(q.nodes);
    Eigen::VectorXd g(static_cast<Eigen::Index>(q.size()));
    for (std::size_t i = 0; i < q.size(); ++i) g(static_cast<Eigen::Index>(i)) = net_eval(net, q.nodes[i]) - target_(q.nodes[i]);
    const Eigen::Map<const Eigen::VectorXd> w(q.weights.data(), static_cast<Eigen::Index>(q.size()));
    const Eigen::VectorXd wg = w.cwiseProduct(g);
    Diagnostics d;
    d.loss = 0.5 * wg.dot(g);
    d.loss_gap = d.loss;
    d.projected_gradient = lin.basis->transform() * (values.transpose() * wg);
    const double proj_sq = d.projected_gradient.squaredNorm();
    d.proj_norm = std::sqrt(proj_sq);
    d.orth_norm = std::sqrt(std::max(0.0, 2.0 * d.loss - proj_sq));
    return d;
  }

  Eigen::VectorXd residual(const State& net, const std::vector<double>& xs) const {
    Eigen::VectorXd out = net_eval(net, xs);
    for (std::size_t i = 0; i < xs.size(); ++i) out(static_cast<Eigen::Index>(i)) -= target_(xs[i]);
    return out;
  }

  bool has_nontrivial_retraction() const { return true; }

  Retracted<ShallowNetModel> retract(const State&, const NetLinearization& lin, const Eigen::VectorXd& direction,
                                     double s) const {
    NetRetraction r = nn_retraction(*lin.system, s, direction, measure_);
    return {std::move(r.net), r.epsilon};
  }

  double retraction_error(const State&, const NetLinearization& lin, const Eigen::VectorXd& direction, double s) const {
    return nn_retraction(*lin.system, s, direction, measure_).epsilon;
  }

 private:
  ReferenceMeasure measure_;
  FunctionHandle target_;
  ShallowNetOptions options_;
};

}  // namespace ngd
